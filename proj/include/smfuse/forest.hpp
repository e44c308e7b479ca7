#ifndef SMFUSE_FOREST_HPP
#define SMFUSE_FOREST_HPP

#include <smfuse/error.hpp>
#include <smfuse/parallel.hpp>
#include <smfuse/random.hpp>
#include <smfuse/training.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace smfuse {

struct ForestParams {
    int n_trees = 200;
    int mtry = 0;  // 0 selects max(1, p/3)
    int min_leaf = 2;

    int effective_mtry(std::size_t p) const {
        const int m = mtry > 0 ? mtry : std::max(1, static_cast<int>(p / 3));
        return std::min(m, static_cast<int>(p));
    }

    friend bool operator==(const ForestParams&, const ForestParams&) = default;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;      // mean target of the node's bootstrap samples
    double decrease = 0.0;   // n*var(node) - n_l*var(left) - n_r*var(right)

    bool is_leaf() const { return feature < 0; }
    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double predict(std::span<const double> x) const {
        int i = 0;
        while (!nodes[i].is_leaf()) {
            const auto& n = nodes[i];
            i = x[n.feature] <= n.threshold ? n.left : n.right;
        }
        return nodes[i].value;
    }

    friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct RfModel {
    std::vector<std::string> feature_names;
    std::vector<RegressionTree> trees;
    ForestParams params;
    std::uint64_t seed = 0;
    bool constant_target = false;

    friend bool operator==(const RfModel&, const RfModel&) = default;
};

namespace detail {

// CART builder over a bootstrap sample. Features are visited in name order
// (`canonical` maps canonical position -> column), which makes the fitted
// forest independent of column order.
class TreeBuilder {
public:
    TreeBuilder(const TrainingMatrix& data, const std::vector<std::size_t>& canonical, int mtry, int min_leaf, Rng& rng)
        : data_(data), canonical_(canonical), mtry_(mtry), min_leaf_(static_cast<std::size_t>(min_leaf)), rng_(rng) {}

    RegressionTree build(std::vector<std::size_t> samples) {
        tree_.nodes.clear();
        grow(std::move(samples));
        return std::move(tree_);
    }

private:
    struct Split {
        bool found = false;
        std::size_t feature = 0;
        double threshold = 0.0;
        double gain = 0.0;
    };

    int grow(std::vector<std::size_t> samples) {
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        double sum = 0.0;
        for (auto s : samples) sum += data_.targets[s];
        tree_.nodes[id].value = sum / static_cast<double>(samples.size());

        if (samples.size() < 2 * min_leaf_) return id;
        const Split split = best_split(samples);
        if (!split.found) return id;

        std::vector<std::size_t> left, right;
        for (auto s : samples) (data_.columns[split.feature][s] <= split.threshold ? left : right).push_back(s);
        tree_.nodes[id].feature = static_cast<int>(split.feature);
        tree_.nodes[id].threshold = split.threshold;
        tree_.nodes[id].decrease = split.gain;
        const int l = grow(std::move(left));
        const int r = grow(std::move(right));
        tree_.nodes[id].left = l;
        tree_.nodes[id].right = r;
        return id;
    }

    Split best_split(const std::vector<std::size_t>& samples) {
        const std::size_t p = canonical_.size();
        // partial Fisher-Yates over canonical positions
        std::vector<std::size_t> pool(p);
        std::iota(pool.begin(), pool.end(), 0);
        for (int k = 0; k < mtry_; ++k) {
            const auto j = k + uniform_index(rng_, p - k);
            std::swap(pool[k], pool[j]);
        }
        std::vector<std::size_t> candidates(pool.begin(), pool.begin() + mtry_);
        std::sort(candidates.begin(), candidates.end());

        const std::size_t n = samples.size();
        double total = 0.0, total_sq = 0.0;
        for (auto s : samples) {
            total += data_.targets[s];
            total_sq += data_.targets[s] * data_.targets[s];
        }
        const double sse_parent = std::max(0.0, total_sq - total * total / static_cast<double>(n));

        Split best;
        std::vector<std::size_t> order;
        for (auto cpos : candidates) {
            const std::size_t f = canonical_[cpos];
            const auto& col = data_.columns[f];
            order = samples;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
            double lsum = 0.0, lsq = 0.0;
            for (std::size_t k = 0; k + 1 < n; ++k) {
                const double y = data_.targets[order[k]];
                lsum += y;
                lsq += y * y;
                const std::size_t nl = k + 1, nr = n - nl;
                if (col[order[k]] == col[order[k + 1]]) continue;
                if (nl < min_leaf_ || nr < min_leaf_) continue;
                const double rsum = total - lsum, rsq = total_sq - lsq;
                const double sse_l = std::max(0.0, lsq - lsum * lsum / static_cast<double>(nl));
                const double sse_r = std::max(0.0, rsq - rsum * rsum / static_cast<double>(nr));
                const double gain = sse_parent - sse_l - sse_r;
                if (gain > best.gain + 1e-12 * (1.0 + sse_parent)) {
                    best.found = true;
                    best.gain = gain;
                    best.feature = f;
                    best.threshold = 0.5 * (col[order[k]] + col[order[k + 1]]);
                }
            }
        }
        return best;
    }

    const TrainingMatrix& data_;
    const std::vector<std::size_t>& canonical_;
    int mtry_;
    std::size_t min_leaf_;
    Rng& rng_;
    RegressionTree tree_;
};

inline std::vector<std::size_t> canonical_order(const std::vector<std::string>& names) {
    std::vector<std::size_t> order(names.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return names[a] < names[b]; });
    return order;
}

} // namespace detail

/// Bagged CART regression forest. Tree t draws from its own stream seeded with
/// seed + t, so the result is identical for any thread count.
inline RfModel fit_forest(const TrainingMatrix& data, const ForestParams& params, std::uint64_t seed,
                          unsigned threads = 1) {
    if (data.n() == 0 || data.p() == 0) throw Error(Errc::EmptyData, "forest needs at least one row and column");
    data.validate();
    if (params.n_trees < 1 || params.min_leaf < 1) throw Error(Errc::InvalidConfig, "n_trees and min_leaf must be >= 1");

    RfModel model;
    model.feature_names = data.names;
    model.params = params;
    model.seed = seed;
    const auto [lo, hi] = std::minmax_element(data.targets.begin(), data.targets.end());
    model.constant_target = *lo == *hi;

    const auto canonical = detail::canonical_order(data.names);
    const int mtry = params.effective_mtry(data.p());
    model.trees.resize(static_cast<std::size_t>(params.n_trees));
    parallel_for(model.trees.size(), threads, [&](std::size_t t) {
        Rng rng(seed + t);
        std::vector<std::size_t> boot(data.n());
        for (auto& b : boot) b = uniform_index(rng, data.n());
        detail::TreeBuilder builder(data, canonical, mtry, params.min_leaf, rng);
        model.trees[t] = builder.build(std::move(boot));
    });
    return model;
}

inline double rf_predict(const RfModel& model, std::span<const double> x) {
    if (x.size() != model.feature_names.size())
        throw Error(Errc::DimensionMismatch, "expected " + std::to_string(model.feature_names.size()) + " features");
    double sum = 0.0;
    for (const auto& t : model.trees) sum += t.predict(x);
    return sum / static_cast<double>(model.trees.size());
}

/// Impurity importance per feature name, normalized to sum 1 (all zero when no split exists).
inline std::map<std::string, double> importance(const RfModel& model, const TrainingMatrix& data) {
    if (data.names != model.feature_names) throw Error(Errc::SchemaMismatch, "data columns differ from the model's");
    std::vector<double> acc(model.feature_names.size(), 0.0);
    for (const auto& tree : model.trees) {
        std::vector<double> per_tree(acc.size(), 0.0);
        for (const auto& node : tree.nodes)
            if (!node.is_leaf()) per_tree[static_cast<std::size_t>(node.feature)] += node.decrease;
        for (std::size_t f = 0; f < acc.size(); ++f) acc[f] += per_tree[f];
    }
    for (auto& a : acc) a /= static_cast<double>(model.trees.size());
    const double total = std::accumulate(acc.begin(), acc.end(), 0.0);
    std::map<std::string, double> out;
    for (std::size_t f = 0; f < acc.size(); ++f) out[model.feature_names[f]] = total > 0.0 ? acc[f] / total : 0.0;
    return out;
}

struct RfeRound {
    int round = 0;
    std::string eliminated;
    std::map<std::string, double> importance;  // over features active in this round
};

struct RfeResult {
    std::vector<std::string> elimination_order;  // worst first
    std::vector<std::string> selected;           // in original column order
    std::vector<RfeRound> rounds;
};

/// Recursive feature elimination: refit, drop the single least important
/// feature (ties -> lexicographically smallest name), repeat.
inline RfeResult rfe(const TrainingMatrix& data, int target_count, const ForestParams& params, std::uint64_t seed,
                     unsigned threads = 1) {
    if (target_count < 1 || static_cast<std::size_t>(target_count) > data.p())
        throw Error(Errc::TargetCountOutOfRange,
                    "target_count " + std::to_string(target_count) + " not in [1, " + std::to_string(data.p()) + "]");
    RfeResult result;
    std::vector<std::string> active = data.names;
    int round = 0;
    while (active.size() > static_cast<std::size_t>(target_count)) {
        const auto sub = data.select(active);
        const auto model = fit_forest(sub, params, seed, threads);
        auto imp = importance(model, sub);
        // std::map iterates names ascending, so the first strict minimum wins ties
        auto worst = imp.begin();
        for (auto it = imp.begin(); it != imp.end(); ++it)
            if (it->second < worst->second) worst = it;
        RfeRound r;
        r.round = ++round;
        r.eliminated = worst->first;
        r.importance = std::move(imp);
        result.elimination_order.push_back(r.eliminated);
        active.erase(std::find(active.begin(), active.end(), r.eliminated));
        result.rounds.push_back(std::move(r));
    }
    result.selected = active;
    return result;
}

// CSV: round,eliminated_feature,<one importance column per original feature>
inline std::string format_rfe_csv(const RfeResult& r, const std::vector<std::string>& all_names) {
    std::string out = "round,eliminated_feature";
    for (const auto& n : all_names) out += "," + n;
    out += "\n";
    for (const auto& rd : r.rounds) {
        out += std::to_string(rd.round) + "," + rd.eliminated;
        for (const auto& n : all_names) {
            out += ",";
            if (auto it = rd.importance.find(n); it != rd.importance.end()) out += text::exact(it->second);
        }
        out += "\n";
    }
    return out;
}

} // namespace smfuse

#endif
