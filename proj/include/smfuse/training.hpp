#ifndef SMFUSE_TRAINING_HPP
#define SMFUSE_TRAINING_HPP

#include <smfuse/error.hpp>
#include <smfuse/features.hpp>
#include <smfuse/raster.hpp>
#include <smfuse/text.hpp>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace smfuse {

/// Feature table behind both regressors: n samples, p named columns, targets in vol%.
/// Columns are stored feature-major.
struct TrainingMatrix {
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;
    std::vector<double> targets;
    std::vector<PointSample> points;  // optional provenance, empty or one per row

    std::size_t n() const { return targets.size(); }
    std::size_t p() const { return names.size(); }

    std::vector<double> row(std::size_t i) const {
        std::vector<double> x(p());
        for (std::size_t f = 0; f < p(); ++f) x[f] = columns[f][i];
        return x;
    }

    void validate() const {
        if (targets.empty()) throw Error(Errc::EmptyData, "training matrix has no rows");
        if (columns.size() != names.size()) throw Error(Errc::DimensionMismatch, "column/name count differ");
        std::set<std::string> seen;
        for (const auto& nm : names)
            if (!seen.insert(nm).second) throw Error(Errc::DuplicateName, "duplicate feature '" + nm + "'");
        for (std::size_t f = 0; f < p(); ++f) {
            if (columns[f].size() != n()) throw Error(Errc::DimensionMismatch, "ragged column " + names[f]);
            for (double v : columns[f])
                if (!std::isfinite(v)) throw Error(Errc::NonFiniteInput, "non-finite cell in column " + names[f]);
        }
        for (double y : targets)
            if (!std::isfinite(y)) throw Error(Errc::NonFiniteInput, "non-finite target");
        if (!points.empty() && points.size() != n()) throw Error(Errc::DimensionMismatch, "points/rows differ");
    }

    TrainingMatrix select(const std::vector<std::string>& wanted) const {
        TrainingMatrix out;
        out.targets = targets;
        out.points = points;
        for (const auto& w : wanted) {
            auto it = std::find(names.begin(), names.end(), w);
            if (it == names.end()) throw Error(Errc::SchemaMismatch, "no feature named '" + w + "'");
            out.names.push_back(w);
            out.columns.push_back(columns[static_cast<std::size_t>(it - names.begin())]);
        }
        return out;
    }

    // Keeps the rows listed in `rows`, in that order.
    TrainingMatrix take_rows(const std::vector<std::size_t>& rows) const {
        TrainingMatrix out;
        out.names = names;
        out.columns.assign(p(), {});
        for (std::size_t f = 0; f < p(); ++f)
            for (auto r : rows) out.columns[f].push_back(columns[f][r]);
        for (auto r : rows) {
            out.targets.push_back(targets[r]);
            if (!points.empty()) out.points.push_back(points[r]);
        }
        return out;
    }
};

/// Samples every stack layer at the in-situ points. Throws if any point hits nodata.
inline TrainingMatrix extract_training(const FeatureStack& stack, std::span<const PointSample> points) {
    TrainingMatrix m;
    m.names = stack.names();
    for (std::size_t f = 0; f < stack.size(); ++f) {
        auto vals = sample_at_points(stack.layer(f), points);
        for (std::size_t i = 0; i < vals.size(); ++i)
            if (is_nodata(vals[i]))
                throw Error(Errc::NonFiniteInput,
                            "point " + std::to_string(i) + " samples nodata in layer " + stack.name(f));
        m.columns.push_back(std::move(vals));
    }
    for (const auto& p : points) {
        m.targets.push_back(p.sm);
        m.points.push_back(p);
    }
    m.validate();
    return m;
}

// CSV: header x,y,sm,<feature...>
inline std::string format_training_csv(const TrainingMatrix& m) {
    std::string out = "x,y,sm";
    for (const auto& nm : m.names) out += "," + nm;
    out += "\n";
    for (std::size_t i = 0; i < m.n(); ++i) {
        const PointSample pt = m.points.empty() ? PointSample{0.0, 0.0, m.targets[i]} : m.points[i];
        out += text::exact(pt.x) + "," + text::exact(pt.y) + "," + text::exact(m.targets[i]);
        for (std::size_t f = 0; f < m.p(); ++f) out += "," + text::exact(m.columns[f][i]);
        out += "\n";
    }
    return out;
}

inline TrainingMatrix parse_training_csv(const std::string& body) {
    std::istringstream in(body);
    std::string line;
    std::size_t lineno = 0;
    TrainingMatrix m;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = text::trim(line);
        if (t.empty()) continue;
        auto cols = text::split(t, ',');
        if (!header) {
            if (cols.size() < 3 || cols[0] != "x" || cols[1] != "y" || cols[2] != "sm")
                throw LineError(Errc::SchemaMismatch, lineno, "expected header x,y,sm,<features...>");
            m.names.assign(cols.begin() + 3, cols.end());
            m.columns.assign(m.names.size(), {});
            header = true;
            continue;
        }
        if (cols.size() != m.names.size() + 3) throw LineError(Errc::DimensionMismatch, lineno, "wrong column count");
        std::vector<double> vals;
        for (const auto& c : cols) {
            auto v = text::parse_double(c);
            if (!v) throw LineError(Errc::NonFiniteInput, lineno, "non-numeric field '" + c + "'");
            vals.push_back(*v);
        }
        m.points.push_back({vals[0], vals[1], vals[2]});
        m.targets.push_back(vals[2]);
        for (std::size_t f = 0; f < m.names.size(); ++f) m.columns[f].push_back(vals[f + 3]);
    }
    if (!header) throw Error(Errc::EmptyData, "training CSV has no header");
    m.validate();
    return m;
}

inline TrainingMatrix read_training_csv(const std::filesystem::path& path) {
    return parse_training_csv(detail::slurp(path));
}

inline void write_training_csv(const TrainingMatrix& m, const std::filesystem::path& path) {
    detail::spill(path, format_training_csv(m));
}

} // namespace smfuse

#endif
