#ifndef SMFUSE_SVR_HPP
#define SMFUSE_SVR_HPP

#include <smfuse/error.hpp>
#include <smfuse/random.hpp>
#include <smfuse/text.hpp>
#include <smfuse/training.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace smfuse {

/// Per-feature z-score parameters (population standard deviation).
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> std;

    static Standardizer fit(const TrainingMatrix& data) {
        Standardizer s;
        const double n = static_cast<double>(data.n());
        for (std::size_t f = 0; f < data.p(); ++f) {
            const auto& col = data.columns[f];
            const double m = std::accumulate(col.begin(), col.end(), 0.0) / n;
            double ss = 0.0;
            for (double v : col) ss += (v - m) * (v - m);
            const double sd = std::sqrt(ss / n);
            if (!(sd > 0.0)) throw Error(Errc::ConstantFeature, "feature '" + data.names[f] + "' is constant");
            s.mean.push_back(m);
            s.std.push_back(sd);
        }
        return s;
    }

    std::vector<double> apply(std::span<const double> x) const {
        std::vector<double> z(x.size());
        for (std::size_t f = 0; f < x.size(); ++f) z[f] = (x[f] - mean[f]) / std[f];
        return z;
    }
};

inline double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

/// Trained epsilon-SVR with RBF kernel. Immutable after training.
struct SvrModel {
    std::vector<std::string> feature_names;
    Standardizer standardization;
    std::vector<std::vector<double>> support_vectors;  // standardized
    std::vector<double> coefficients;                  // beta_i = alpha_i - alpha_i*
    double bias = 0.0;
    double gamma = 1.0;
    double C = 1.0;
    double epsilon = 0.1;
    double kkt_violation = 0.0;
    long iterations = 0;
    bool converged = true;
};

struct SvrOptions {
    double tolerance = 1e-3;
    long max_iterations = 1'000'000;
    // Solve the KKT system on the final active set so the dual is exact to
    // rounding; falls back to further SMO sweeps when the active set is wrong.
    bool polish = true;
};

namespace detail {

// LIBSVM-style SMO on the 2n-variable form:
//   min 1/2 a'Qa + p'a,  y'a = 0,  0 <= a <= C
// with a = [alpha; alpha*], y = [+1; -1], p = [eps - t; eps + t].
class SvrSolver {
public:
    SvrSolver(const std::vector<std::vector<double>>& kernel, std::span<const double> targets, double C, double eps)
        : K_(kernel), n_(targets.size()), C_(C), alpha_(2 * n_, 0.0), grad_(2 * n_) {
        for (std::size_t i = 0; i < n_; ++i) {
            grad_[i] = eps - targets[i];
            grad_[i + n_] = eps + targets[i];
        }
    }

    double sign(std::size_t t) const { return t < n_ ? 1.0 : -1.0; }
    std::size_t sample(std::size_t t) const { return t < n_ ? t : t - n_; }
    double q(std::size_t s, std::size_t t) const { return sign(s) * sign(t) * K_[sample(s)][sample(t)]; }

    bool in_up(std::size_t t) const { return sign(t) > 0 ? alpha_[t] < C_ : alpha_[t] > 0.0; }
    bool in_low(std::size_t t) const { return sign(t) > 0 ? alpha_[t] > 0.0 : alpha_[t] < C_; }

    // Maximal violating pair; returns the gap m - M.
    double select(std::size_t& i, std::size_t& j) const {
        double gmax = -std::numeric_limits<double>::infinity(), gmin = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < 2 * n_; ++t) {
            const double v = -sign(t) * grad_[t];
            if (in_up(t) && v > gmax) {
                gmax = v;
                i = t;
            }
            if (in_low(t) && v < gmin) {
                gmin = v;
                j = t;
            }
        }
        return gmax - gmin;
    }

    // Runs until the gap drops below tol; returns false on iteration cap.
    bool run(double tol, long max_iter, long& iterations, double& gap) {
        constexpr double tau = 1e-12;
        while (true) {
            std::size_t i = 0, j = 0;
            gap = select(i, j);
            if (gap < tol) return true;
            if (iterations >= max_iter) return false;
            ++iterations;

            const double old_i = alpha_[i], old_j = alpha_[j];
            const double qii = q(i, i), qjj = q(j, j), qij = q(i, j);
            if (sign(i) != sign(j)) {
                double quad = qii + qjj + 2.0 * qij;
                if (quad <= 0.0) quad = tau;
                const double delta = (-grad_[i] - grad_[j]) / quad;
                const double diff = alpha_[i] - alpha_[j];
                alpha_[i] += delta;
                alpha_[j] += delta;
                if (diff > 0.0) {
                    if (alpha_[j] < 0.0) { alpha_[j] = 0.0; alpha_[i] = diff; }
                } else if (alpha_[i] < 0.0) {
                    alpha_[i] = 0.0;
                    alpha_[j] = -diff;
                }
                if (diff > 0.0) {
                    if (alpha_[i] > C_) { alpha_[i] = C_; alpha_[j] = C_ - diff; }
                } else if (alpha_[j] > C_) {
                    alpha_[j] = C_;
                    alpha_[i] = C_ + diff;
                }
            } else {
                double quad = qii + qjj - 2.0 * qij;
                if (quad <= 0.0) quad = tau;
                const double delta = (grad_[i] - grad_[j]) / quad;
                const double sum = alpha_[i] + alpha_[j];
                alpha_[i] -= delta;
                alpha_[j] += delta;
                if (sum > C_) {
                    if (alpha_[i] > C_) { alpha_[i] = C_; alpha_[j] = sum - C_; }
                } else if (alpha_[j] < 0.0) {
                    alpha_[j] = 0.0;
                    alpha_[i] = sum;
                }
                if (sum > C_) {
                    if (alpha_[j] > C_) { alpha_[j] = C_; alpha_[i] = sum - C_; }
                } else if (alpha_[i] < 0.0) {
                    alpha_[i] = 0.0;
                    alpha_[j] = sum;
                }
            }
            const double di = alpha_[i] - old_i, dj = alpha_[j] - old_j;
            for (std::size_t t = 0; t < 2 * n_; ++t) grad_[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    std::vector<double> beta() const {
        std::vector<double> b(n_);
        for (std::size_t i = 0; i < n_; ++i) b[i] = alpha_[i] - alpha_[i + n_];
        return b;
    }

    // Bias from the free variables, midpoint of the feasible interval otherwise.
    double bias() const {
        double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum = 0.0;
        std::size_t free = 0;
        for (std::size_t t = 0; t < 2 * n_; ++t) {
            const double yg = sign(t) * grad_[t];
            const bool at_upper = alpha_[t] >= C_, at_lower = alpha_[t] <= 0.0;
            if ((at_upper && sign(t) < 0) || (at_lower && sign(t) > 0)) {
                ub = std::min(ub, yg);
            } else if (at_upper || at_lower) {
                lb = std::max(lb, yg);
            } else {
                ++free;
                sum += yg;
            }
        }
        const double rho = free > 0 ? sum / static_cast<double>(free) : 0.5 * (ub + lb);
        return -rho;
    }

private:
    const std::vector<std::vector<double>>& K_;
    std::size_t n_;
    double C_;
    std::vector<double> alpha_;
    std::vector<double> grad_;
};

// Exact solution on the active set implied by `beta`. Returns false if the
// solution leaves that active set or violates KKT beyond `tol`.
inline bool polish_active_set(const std::vector<std::vector<double>>& K, std::span<const double> y, double C,
                              double eps, std::vector<double>& beta, double& bias, double tol) {
    const std::size_t n = y.size();
    std::vector<double> b = beta;
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(b[i]) >= C * (1.0 - 1e-12)) b[i] = b[i] > 0 ? C : -C;
        else if (std::abs(b[i]) <= 1e-14 * C) b[i] = 0.0;
        else free.push_back(i);
    }
    double bb = 0.0;
    if (!free.empty()) {
        const auto m = free.size();
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m + 1), static_cast<Eigen::Index>(m + 1));
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m + 1));
        for (std::size_t a = 0; a < m; ++a) {
            const auto i = free[a];
            for (std::size_t c = 0; c < m; ++c) A(a, c) = K[i][free[c]];
            A(a, m) = 1.0;
            A(m, a) = 1.0;
            double fixed = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                if (std::find(free.begin(), free.end(), k) == free.end()) fixed += K[i][k] * b[k];
            rhs(a) = y[i] - (b[i] > 0 ? eps : -eps) - fixed;
        }
        double fixed_sum = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (std::find(free.begin(), free.end(), k) == free.end()) fixed_sum += b[k];
        rhs(m) = -fixed_sum;
        const Eigen::VectorXd sol = A.fullPivLu().solve(rhs);
        if (!sol.allFinite() || (A * sol - rhs).norm() > 1e-9 * (1.0 + rhs.norm())) return false;
        for (std::size_t a = 0; a < m; ++a) {
            const double v = sol(a);
            if (v * b[free[a]] <= 0.0 || std::abs(v) >= C) return false;
            b[free[a]] = v;
        }
        bb = sol(m);
    }

    std::vector<double> resid(n);  // y - K beta
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += K[i][k] * b[k];
        resid[i] = y[i] - s;
    }
    if (free.empty()) {
        double lb = -std::numeric_limits<double>::infinity(), ub = -lb;
        for (std::size_t i = 0; i < n; ++i) {
            if (b[i] == 0.0) {
                lb = std::max(lb, resid[i] - eps);
                ub = std::min(ub, resid[i] + eps);
            } else if (b[i] > 0.0) {
                ub = std::min(ub, resid[i] - eps);
            } else {
                lb = std::max(lb, resid[i] + eps);
            }
        }
        if (!std::isfinite(lb) || !std::isfinite(ub) || lb > ub + tol) return false;
        bb = 0.5 * (lb + ub);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double r = resid[i] - bb;  // y_i - f(x_i)
        if (b[i] == 0.0 && std::abs(r) > eps + tol) return false;
        if (b[i] == C && r < eps - tol) return false;
        if (b[i] == -C && -r < eps - tol) return false;
    }
    beta = std::move(b);
    bias = bb;
    return true;
}

} // namespace detail

/// Fits epsilon-SVR (RBF kernel) on z-scored features by two-variable SMO with
/// maximal-violating-pair selection.
inline SvrModel train_svr(const TrainingMatrix& data, double C, double epsilon, double gamma,
                          const SvrOptions& opt = {}) {
    if (!(C > 0.0) || !(gamma > 0.0) || !(epsilon >= 0.0) || !std::isfinite(C) || !std::isfinite(gamma) ||
        !std::isfinite(epsilon))
        throw Error(Errc::NonPositiveHyperparameter, "need C > 0, gamma > 0, epsilon >= 0");
    if (data.n() < 2) throw Error(Errc::EmptyData, "SVR needs at least two samples");
    data.validate();

    SvrModel model;
    model.feature_names = data.names;
    model.standardization = Standardizer::fit(data);
    model.C = C;
    model.epsilon = epsilon;
    model.gamma = gamma;

    const std::size_t n = data.n();
    std::vector<std::vector<double>> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = model.standardization.apply(data.row(i));
    std::vector<std::vector<double>> K(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) K[i][j] = K[j][i] = (i == j) ? 1.0 : rbf_kernel(z[i], z[j], gamma);

    detail::SvrSolver solver(K, data.targets, C, epsilon);
    long iterations = 0;
    double gap = 0.0;
    model.converged = solver.run(opt.tolerance, opt.max_iterations, iterations, gap);
    std::vector<double> beta = solver.beta();
    double bias = solver.bias();

    if (opt.polish && model.converged) {
        double tol = opt.tolerance;
        const double kkt_tol = 1e-9 * (1.0 + *std::max_element(data.targets.begin(), data.targets.end(),
                                                               [](double a, double b) { return std::abs(a) < std::abs(b); }));
        while (true) {
            std::vector<double> trial = solver.beta();
            double trial_bias = 0.0;
            if (detail::polish_active_set(K, data.targets, C, epsilon, trial, trial_bias, kkt_tol)) {
                beta = std::move(trial);
                bias = trial_bias;
                break;
            }
            tol *= 0.1;
            if (tol < 1e-14) break;
            double g = 0.0;
            if (!solver.run(tol, opt.max_iterations, iterations, g)) break;
            beta = solver.beta();
            bias = solver.bias();
            gap = g;
        }
    }
    model.iterations = iterations;
    model.kkt_violation = gap;

    for (std::size_t i = 0; i < n; ++i) {
        if (beta[i] == 0.0) continue;
        model.support_vectors.push_back(z[i]);
        model.coefficients.push_back(beta[i]);
    }
    model.bias = bias;
    return model;
}

inline double svr_predict(const SvrModel& model, std::span<const double> x) {
    if (x.size() != model.feature_names.size())
        throw Error(Errc::DimensionMismatch,
                    "expected " + std::to_string(model.feature_names.size()) + " features, got " +
                        std::to_string(x.size()));
    for (double v : x)
        if (!std::isfinite(v)) throw Error(Errc::NonFiniteInput, "feature vector contains a non-finite value");
    const auto z = model.standardization.apply(x);
    double f = model.bias;
    for (std::size_t k = 0; k < model.support_vectors.size(); ++k)
        f += model.coefficients[k] * rbf_kernel(model.support_vectors[k], z, model.gamma);
    return f;
}

// ---------------------------------------------------------------------------
// Model file: versioned line-oriented text, doubles in shortest round-trip form.

inline std::string format_svr_model(const SvrModel& m) {
    std::ostringstream out;
    const auto row = [&](const char* key, const std::vector<double>& v) {
        out << key;
        for (double x : v) out << ' ' << text::exact(x);
        out << '\n';
    };
    out << "smfuse-svr 1\n";
    out << "features " << m.feature_names.size();
    for (const auto& n : m.feature_names) out << ' ' << n;
    out << '\n';
    row("mean", m.standardization.mean);
    row("std", m.standardization.std);
    out << "gamma " << text::exact(m.gamma) << '\n';
    out << "C " << text::exact(m.C) << '\n';
    out << "epsilon " << text::exact(m.epsilon) << '\n';
    out << "bias " << text::exact(m.bias) << '\n';
    out << "kkt " << text::exact(m.kkt_violation) << '\n';
    out << "iterations " << m.iterations << '\n';
    out << "converged " << (m.converged ? 1 : 0) << '\n';
    out << "sv " << m.support_vectors.size() << '\n';
    for (std::size_t k = 0; k < m.support_vectors.size(); ++k) {
        out << text::exact(m.coefficients[k]);
        for (double v : m.support_vectors[k]) out << ' ' << text::exact(v);
        out << '\n';
    }
    return out.str();
}

inline SvrModel parse_svr_model(const std::string& body) {
    std::istringstream in(body);
    std::string line;
    std::size_t lineno = 0;
    const auto next = [&]() -> std::vector<std::string> {
        while (std::getline(in, line)) {
            ++lineno;
            auto t = text::trim(line);
            if (t.empty()) continue;
            std::vector<std::string> toks;
            std::istringstream ls{std::string(t)};
            for (std::string tok; ls >> tok;) toks.push_back(tok);
            return toks;
        }
        throw LineError(Errc::TruncatedPayload, lineno, "model file ends early");
    };
    const auto num = [&](const std::string& s) {
        auto v = text::parse_double(s);
        if (!v) throw LineError(Errc::NonFiniteInput, lineno, "bad number '" + s + "'");
        return *v;
    };
    const auto expect = [&](const char* key, std::size_t min_tokens) {
        auto toks = next();
        if (toks.empty() || toks[0] != key || toks.size() < min_tokens)
            throw LineError(Errc::SchemaMismatch, lineno, std::string("expected '") + key + "'");
        return toks;
    };
    const auto scalar = [&](const char* key) { return num(expect(key, 2)[1]); };

    SvrModel m;
    auto head = next();
    if (head.size() != 2 || head[0] != "smfuse-svr" || head[1] != "1")
        throw LineError(Errc::BadMagic, lineno, "not an smfuse-svr v1 model");
    auto feats = expect("features", 2);
    const auto p = static_cast<std::size_t>(num(feats[1]));
    if (feats.size() != p + 2) throw LineError(Errc::SchemaMismatch, lineno, "feature count mismatch");
    m.feature_names.assign(feats.begin() + 2, feats.end());
    for (auto* dst : {&m.standardization.mean, &m.standardization.std}) {
        auto toks = expect(dst == &m.standardization.mean ? "mean" : "std", p + 1);
        if (toks.size() != p + 1) throw LineError(Errc::SchemaMismatch, lineno, "wrong vector length");
        for (std::size_t k = 1; k < toks.size(); ++k) dst->push_back(num(toks[k]));
    }
    m.gamma = scalar("gamma");
    m.C = scalar("C");
    m.epsilon = scalar("epsilon");
    m.bias = scalar("bias");
    m.kkt_violation = scalar("kkt");
    m.iterations = static_cast<long>(scalar("iterations"));
    m.converged = scalar("converged") != 0.0;
    const auto nsv = static_cast<std::size_t>(scalar("sv"));
    for (std::size_t k = 0; k < nsv; ++k) {
        auto toks = next();
        if (toks.size() != p + 1) throw LineError(Errc::SchemaMismatch, lineno, "support vector row length");
        m.coefficients.push_back(num(toks[0]));
        std::vector<double> sv;
        for (std::size_t f = 1; f < toks.size(); ++f) sv.push_back(num(toks[f]));
        m.support_vectors.push_back(std::move(sv));
    }
    return m;
}

inline void write_svr_model(const SvrModel& m, const std::filesystem::path& path) {
    detail::spill(path, format_svr_model(m));
}

inline SvrModel read_svr_model(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(Errc::MissingFile, path.string());
    return parse_svr_model(detail::slurp(path));
}

// ---------------------------------------------------------------------------
// Hyperparameter search

struct HyperGrid {
    std::vector<double> C_values{1.0, 10.0, 100.0};
    std::vector<double> epsilon_values{0.1, 0.5, 1.0};
    std::vector<double> gamma_values{0.01, 0.1, 1.0};
    int k_folds = 5;
    std::uint64_t seed = 42;

    // Conventional grid with gamma scaled by 1/p.
    static HyperGrid defaults(std::size_t p, std::uint64_t seed = 42) {
        HyperGrid g;
        g.seed = seed;
        for (auto& v : g.gamma_values) v /= static_cast<double>(std::max<std::size_t>(p, 1));
        return g;
    }
};

struct CvCell {
    double C = 0.0;
    double epsilon = 0.0;
    double gamma = 0.0;
    double rmse = 0.0;  // mean over folds; +inf when a fold could not be trained
};

struct CvResult {
    double C = 0.0;
    double epsilon = 0.0;
    double gamma = 0.0;
    double rmse = 0.0;
    std::vector<CvCell> table;  // C-major, then epsilon, then gamma
};

/// Seeded fold assignment: shuffled position i goes to fold i % k.
inline std::vector<int> cv_folds(std::size_t n, int k, std::uint64_t seed) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
    std::vector<int> fold(n);
    for (std::size_t pos = 0; pos < n; ++pos) fold[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
    return fold;
}

inline CvResult grid_search_cv(const TrainingMatrix& data, const HyperGrid& grid, const SvrOptions& opt = {}) {
    if (grid.C_values.empty() || grid.epsilon_values.empty() || grid.gamma_values.empty())
        throw Error(Errc::GridEmpty, "hyperparameter grid has an empty axis");
    for (const auto* axis : {&grid.C_values, &grid.epsilon_values, &grid.gamma_values})
        for (double v : *axis)
            if (!(v > 0.0)) throw Error(Errc::NonPositiveHyperparameter, "grid values must be > 0");
    if (grid.k_folds < 2 || static_cast<std::size_t>(grid.k_folds) > data.n())
        throw Error(Errc::InvalidConfig, "k_folds must lie in [2, n]");
    data.validate();

    const auto fold = cv_folds(data.n(), grid.k_folds, grid.seed);
    std::vector<TrainingMatrix> train_parts, test_parts;
    for (int k = 0; k < grid.k_folds; ++k) {
        std::vector<std::size_t> tr, te;
        for (std::size_t i = 0; i < data.n(); ++i) (fold[i] == k ? te : tr).push_back(i);
        train_parts.push_back(data.take_rows(tr));
        test_parts.push_back(data.take_rows(te));
    }

    CvResult result;
    for (double C : grid.C_values)
        for (double eps : grid.epsilon_values)
            for (double gamma : grid.gamma_values) {
                double total = 0.0;
                for (int k = 0; k < grid.k_folds && std::isfinite(total); ++k) {
                    try {
                        const auto model = train_svr(train_parts[k], C, eps, gamma, opt);
                        const auto& te = test_parts[k];
                        double se = 0.0;
                        for (std::size_t i = 0; i < te.n(); ++i) {
                            const double e = svr_predict(model, te.row(i)) - te.targets[i];
                            se += e * e;
                        }
                        total += std::sqrt(se / static_cast<double>(te.n()));
                    } catch (const Error&) {
                        total = std::numeric_limits<double>::infinity();
                    }
                }
                result.table.push_back({C, eps, gamma, total / grid.k_folds});
            }

    // argmin; ties -> smaller C, larger epsilon, smaller gamma
    const CvCell* best = nullptr;
    for (const auto& cell : result.table) {
        if (!best || cell.rmse < best->rmse) {
            best = &cell;
            continue;
        }
        if (cell.rmse != best->rmse) continue;
        const auto key = [](const CvCell& c) { return std::make_tuple(c.C, -c.epsilon, c.gamma); };
        if (key(cell) < key(*best)) best = &cell;
    }
    result.C = best->C;
    result.epsilon = best->epsilon;
    result.gamma = best->gamma;
    result.rmse = best->rmse;
    return result;
}

} // namespace smfuse

#endif
