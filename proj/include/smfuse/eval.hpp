#ifndef SMFUSE_EVAL_HPP
#define SMFUSE_EVAL_HPP

#include <smfuse/error.hpp>
#include <smfuse/fuse.hpp>
#include <smfuse/raster.hpp>
#include <smfuse/segment.hpp>
#include <smfuse/text.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace smfuse {

enum class R2Convention { Correlation, Determination };

struct MetricsRow {
    std::string method;
    double rmse = 0.0;
    double bias = 0.0;
    double r2_cod = 0.0;   // 1 - SSres/SStot; NaN when observations are constant
    double r2_corr = 0.0;  // squared Pearson correlation; NaN when undefined
    std::size_t n = 0;
    std::size_t dropped = 0;  // validation points that fell on nodata

    double r2(R2Convention c) const { return c == R2Convention::Correlation ? r2_corr : r2_cod; }
};

/// Accuracy of predictions against observations, with e = pred - obs.
inline MetricsRow metrics(std::span<const double> predicted, std::span<const double> observed) {
    if (predicted.size() != observed.size())
        throw Error(Errc::LengthMismatch, std::to_string(predicted.size()) + " predictions vs " +
                                              std::to_string(observed.size()) + " observations");
    if (predicted.size() < 2) throw Error(Errc::EmptyInput, "metrics need at least two pairs");
    const std::size_t n = predicted.size();
    const double nn = static_cast<double>(n);
    double se = 0.0, sum_e = 0.0, mp = 0.0, mo = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(predicted[i]) || !std::isfinite(observed[i]))
            throw Error(Errc::NonFiniteInput, "metrics inputs must be finite");
        const double e = predicted[i] - observed[i];
        se += e * e;
        sum_e += e;
        mp += predicted[i];
        mo += observed[i];
    }
    mp /= nn;
    mo /= nn;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dp = predicted[i] - mp, dobs = observed[i] - mo;
        sxx += dp * dp;
        syy += dobs * dobs;
        sxy += dp * dobs;
    }
    MetricsRow row;
    row.n = n;
    row.rmse = std::sqrt(se / nn);
    row.bias = sum_e / nn;
    row.r2_cod = syy > 0.0 ? 1.0 - se / syy : kNodata;
    row.r2_corr = (syy > 0.0 && sxx > 0.0) ? (sxy * sxy) / (sxx * syy) : kNodata;
    if (!std::isnan(row.r2_corr)) row.r2_corr = std::min(row.r2_corr, 1.0);
    return row;
}

/// Samples the map at the points, drops nodata samples, and scores the rest.
inline MetricsRow evaluate_map(const Grid& map, std::span<const PointSample> points, const std::string& method = {}) {
    const auto sampled = sample_at_points(map, points);
    std::vector<double> pred, obs;
    for (std::size_t i = 0; i < sampled.size(); ++i) {
        if (is_nodata(sampled[i])) continue;
        pred.push_back(sampled[i]);
        obs.push_back(points[i].sm);
    }
    if (pred.empty()) throw Error(Errc::NoValidPoints, "every validation point falls on nodata");
    MetricsRow row = metrics(pred, obs);
    row.method = method;
    row.dropped = sampled.size() - pred.size();
    return row;
}

inline MetricsRow evaluate_map(const SoilMoistureMap& map, std::span<const PointSample> points) {
    return evaluate_map(map.grid, points, map.label());
}

struct BoxStats {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
    double lower_whisker = 0.0, upper_whisker = 0.0;
    std::vector<double> outliers;  // ascending
};

// Linear interpolation between order statistics at position p*(n-1).
inline double quantile_sorted(std::span<const double> sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Five-number summary with Tukey whiskers at 1.5 IQR, clamped to data points.
inline BoxStats box_stats(std::span<const double> values) {
    if (values.empty()) throw Error(Errc::EmptyInput, "box_stats needs at least one value");
    std::vector<double> v(values.begin(), values.end());
    for (double x : v)
        if (!std::isfinite(x)) throw Error(Errc::NonFiniteInput, "box_stats inputs must be finite");
    std::sort(v.begin(), v.end());
    BoxStats b;
    b.min = v.front();
    b.max = v.back();
    b.q1 = quantile_sorted(v, 0.25);
    b.median = quantile_sorted(v, 0.5);
    b.q3 = quantile_sorted(v, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
    // whiskers reach the most extreme points inside the fences
    b.lower_whisker = std::numeric_limits<double>::infinity();
    b.upper_whisker = -b.lower_whisker;
    for (double x : v) {
        if (x < lo_fence || x > hi_fence) {
            b.outliers.push_back(x);
            continue;
        }
        b.lower_whisker = std::min(b.lower_whisker, x);
        b.upper_whisker = std::max(b.upper_whisker, x);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Report tables

inline std::string format_table2(std::span<const MetricsRow> rows, R2Convention conv = R2Convention::Correlation) {
    std::string out = "Method,RMSE,Bias,R2\n";
    for (const auto& r : rows) {
        const double r2 = r.r2(conv);
        out += r.method + "," + text::fixed(r.rmse, 2) + "," + text::fixed(r.bias, 2) + "," +
               (std::isnan(r2) ? std::string("NA") : text::fixed(r2, 2)) + "\n";
    }
    return out;
}

inline std::string format_metrics_detail(std::span<const MetricsRow> rows) {
    const auto num = [](double v) { return std::isnan(v) ? std::string("NA") : text::fixed(v, 6); };
    std::string out = "Method,n,dropped,RMSE,Bias,R2_corr,R2_cod\n";
    for (const auto& r : rows)
        out += r.method + "," + std::to_string(r.n) + "," + std::to_string(r.dropped) + "," + num(r.rmse) + "," +
               num(r.bias) + "," + num(r.r2_corr) + "," + num(r.r2_cod) + "\n";
    return out;
}

inline std::string format_table1(std::span<const ObjectStats> rows) {
    std::string out = "SP,NO,NPmi,NPma,NPa,Area,MapScale\n";
    for (const auto& s : rows) {
        const std::string sp = s.scale_parameter == std::floor(s.scale_parameter)
                                   ? std::to_string(static_cast<long long>(s.scale_parameter))
                                   : text::exact(s.scale_parameter);
        out += sp + "," + std::to_string(s.count) + "," + std::to_string(s.min_pixels) + "," +
               std::to_string(s.max_pixels) + "," + std::to_string(s.mean_pixels) + "," + text::fixed(s.area_ha, 2) +
               "," + std::to_string(s.map_scale) + "\n";
    }
    return out;
}

struct NamedBoxStats {
    std::string method;
    BoxStats stats;
};

inline std::string format_boxstats(std::span<const NamedBoxStats> rows) {
    std::string out = "Method,min,q1,median,q3,max,lower_whisker,upper_whisker,outliers\n";
    for (const auto& r : rows) {
        const auto& b = r.stats;
        std::vector<std::string> outl;
        for (double o : b.outliers) outl.push_back(text::fixed(o, 4));
        out += r.method + "," + text::fixed(b.min, 4) + "," + text::fixed(b.q1, 4) + "," + text::fixed(b.median, 4) +
               "," + text::fixed(b.q3, 4) + "," + text::fixed(b.max, 4) + "," + text::fixed(b.lower_whisker, 4) + "," +
               text::fixed(b.upper_whisker, 4) + "," + text::join(outl, ";") + "\n";
    }
    return out;
}

/// Writes table1.csv and table2.csv (plus metrics.csv with both R2 variants) into `dir`.
inline void report(std::span<const MetricsRow> rows, std::span<const ObjectStats> stats, const std::filesystem::path& dir,
                   R2Convention conv = R2Convention::Correlation) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string());
    detail::spill(dir / "table2.csv", format_table2(rows, conv));
    detail::spill(dir / "table1.csv", format_table1(stats));
    detail::spill(dir / "metrics.csv", format_metrics_detail(rows));
}

} // namespace smfuse

#endif
