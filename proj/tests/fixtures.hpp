// Shared synthetic data for tests and the acceptance binary.
#ifndef SMFUSE_TESTS_FIXTURES_HPP
#define SMFUSE_TESTS_FIXTURES_HPP

#include <smfuse/segment.hpp>
#include <smfuse/training.hpp>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace fixture {

// p uniform columns named x00..; the informative ones drive a Friedman-style
// response, the rest are noise.
struct RfeBenchmark {
    smfuse::TrainingMatrix data;
    std::set<std::string> informative;
};

inline RfeBenchmark rfe_benchmark(std::size_t p, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.5);
    const std::vector<std::size_t> inf{3, 8, 14, 21, 27, 33};  // positions scattered through the columns
    RfeBenchmark b;
    auto& m = b.data;
    for (std::size_t f = 0; f < p; ++f) {
        char nm[8];
        std::snprintf(nm, sizeof nm, "x%02zu", f);
        m.names.emplace_back(nm);
        m.columns.emplace_back(n);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < p; ++f) m.columns[f][i] = u(rng);
    const auto col = [&](std::size_t k, std::size_t i) { return m.columns[inf[k] % p][i]; };
    for (std::size_t k = 0; k < inf.size(); ++k) b.informative.insert(m.names[inf[k] % p]);
    for (std::size_t i = 0; i < n; ++i)
        m.targets.push_back(10.0 * std::sin(std::numbers::pi * col(0, i) * col(1, i)) +
                            20.0 * (col(2, i) - 0.5) * (col(2, i) - 0.5) + 10.0 * col(3, i) + 8.0 * col(4, i) +
                            6.0 * col(5, i) + noise(rng));
    return b;
}

// Small random SVR problem: n in [2,6], p in [1,3], distinct non-constant columns.
struct SvrInstance {
    smfuse::TrainingMatrix data;
    std::vector<std::vector<double>> rows;
    double C = 1.0, epsilon = 0.1, gamma = 1.0;
    std::vector<std::vector<double>> probes;  // extra query points
};

inline SvrInstance svr_instance(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dn(2, 6), dp(1, 3), pick(0, 3);
    std::uniform_real_distribution<double> x(-3.0, 3.0), y(0.0, 40.0);
    const double Cs[] = {0.5, 1.0, 10.0, 100.0}, eps[] = {0.01, 0.1, 0.5, 1.0}, gam[] = {0.1, 0.5, 1.0, 2.0};
    SvrInstance s;
    const auto n = static_cast<std::size_t>(dn(rng)), p = static_cast<std::size_t>(dp(rng));
    s.C = Cs[pick(rng)];
    s.epsilon = eps[pick(rng)];
    s.gamma = gam[pick(rng)];
    s.rows.assign(n, std::vector<double>(p));
    for (auto& r : s.rows)
        for (auto& v : r) v = x(rng);
    auto& m = s.data;
    for (std::size_t k = 0; k < p; ++k) {
        m.names.push_back("f" + std::to_string(k));
        m.columns.emplace_back();
        for (std::size_t i = 0; i < n; ++i) m.columns[k].push_back(s.rows[i][k]);
    }
    for (std::size_t i = 0; i < n; ++i) m.targets.push_back(y(rng));
    for (int q = 0; q < 3; ++q) {
        std::vector<double> v(p);
        for (auto& c : v) c = x(rng);
        s.probes.push_back(v);
    }
    return s;
}

// Empty when `seg` is a 4-connected partition whose incremental statistics
// equal a from-scratch recomputation (relative tolerance `tol`); otherwise the
// first problem found.
inline std::string segmentation_problem(const smfuse::Segmentation& seg, const smfuse::FeatureStack& stack,
                                        double tol = 1e-9) {
    const auto& g = seg.labels.geometry();
    const std::size_t W = g.width, H = g.height, K = seg.object_count();
    std::vector<std::size_t> count(K + 1, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = seg.labels[i];
        if (v != std::floor(v) || v < 0 || v > static_cast<double>(K)) return "bad label at pixel " + std::to_string(i);
        ++count[static_cast<std::size_t>(v)];
    }
    if (count[0] != seg.nodata_count) return "nodata count differs";
    for (std::size_t k = 1; k <= K; ++k)
        if (count[k] != seg.objects[k - 1].n) return "object " + std::to_string(k) + " pixel count differs";
    std::vector<std::uint8_t> seen(W * H, 0);
    std::vector<std::uint8_t> visited_object(K + 1, 0);
    for (std::size_t i = 0; i < W * H; ++i) {
        const int id = seg.label_at(i);
        if (id == 0 || seen[i]) continue;
        if (visited_object[static_cast<std::size_t>(id)]) return "object " + std::to_string(id) + " is not 4-connected";
        visited_object[static_cast<std::size_t>(id)] = 1;
        std::queue<std::size_t> q;
        q.push(i);
        seen[i] = 1;
        while (!q.empty()) {
            const std::size_t p = q.front();
            q.pop();
            const std::size_t r = p / W, c = p % W;
            const std::size_t nb[4] = {r > 0 ? p - W : p, c > 0 ? p - 1 : p, c + 1 < W ? p + 1 : p, r + 1 < H ? p + W : p};
            for (std::size_t o : nb)
                if (!seen[o] && seg.label_at(o) == id) {
                    seen[o] = 1;
                    q.push(o);
                }
        }
    }
    const auto fresh = smfuse::recompute_objects(seg.labels, stack, seg.band_offset, seg.band_scale);
    if (fresh.size() != K) return "recomputed object count differs";
    const auto close = [&](double a, double b) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); };
    for (std::size_t k = 0; k < K; ++k) {
        const auto& a = seg.objects[k];
        const auto& b = fresh[k];
        const std::string who = "object " + std::to_string(k + 1);
        if (a.n != b.n || a.edge_count != b.edge_count || !(a.bbox == b.bbox) || a.neighbors != b.neighbors)
            return who + " geometry differs from recomputation";
        for (std::size_t j = 0; j < a.sum.size(); ++j)
            if (!close(a.sum[j], b.sum[j]) || !close(a.sumsq[j], b.sumsq[j]))
                return who + " band sums differ from recomputation";
    }
    return {};
}

} // namespace fixture

#endif
