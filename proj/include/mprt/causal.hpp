#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "mprt/dataset.hpp"
#include "mprt/errors.hpp"
#include "mprt/parallel.hpp"
#include "mprt/ranktest.hpp"
#include "mprt/rng.hpp"

namespace mprt {

/// Undirected skeleton (optionally with orientation marks) over observed
/// variables. Adjacency is symmetric with no self-loops.
struct Pdag {
    int n_nodes = 0;
    std::vector<std::uint8_t> adjacency; // n*n, symmetric

    static Pdag empty(int n) {
        Pdag g;
        g.n_nodes = n;
        g.adjacency.assign(static_cast<std::size_t>(n) * n, 0);
        return g;
    }

    static Pdag complete(int n) {
        Pdag g = empty(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i != j) g.adjacency[static_cast<std::size_t>(i) * n + j] = 1;
            }
        }
        return g;
    }

    bool has_edge(int i, int j) const {
        return adjacency[static_cast<std::size_t>(i) * n_nodes + j] != 0;
    }

    void set_edge(int i, int j, bool present) {
        adjacency[static_cast<std::size_t>(i) * n_nodes + j] = present ? 1 : 0;
        adjacency[static_cast<std::size_t>(j) * n_nodes + i] = present ? 1 : 0;
    }

    std::vector<int> neighbors(int i) const {
        std::vector<int> out;
        for (int j = 0; j < n_nodes; ++j) {
            if (j != i && has_edge(i, j)) out.push_back(j);
        }
        return out;
    }

    int edge_count() const {
        int c = 0;
        for (int i = 0; i < n_nodes; ++i) {
            for (int j = i + 1; j < n_nodes; ++j) c += has_edge(i, j);
        }
        return c;
    }

    std::vector<std::pair<int, int>> edges() const {
        std::vector<std::pair<int, int>> out;
        for (int i = 0; i < n_nodes; ++i) {
            for (int j = i + 1; j < n_nodes; ++j) {
                if (has_edge(i, j)) out.emplace_back(i, j);
            }
        }
        return out;
    }
};

struct CiQuery {
    int x = 0;
    int y = 0;
    std::vector<int> cond;
};

struct CiResult {
    bool independent = true;
    double p_value = 1.0;
};

inline void validate_ci_query(const CiQuery& q, int n_cols) {
    if (q.x == q.y) throw InputError("CI query: x and y must differ");
    auto check = [&](int v) {
        if (v < 0 || v >= n_cols) {
            throw InputError("CI query: index " + std::to_string(v) + " out of range");
        }
    };
    check(q.x);
    check(q.y);
    std::set<int> seen;
    for (int c : q.cond) {
        check(c);
        if (c == q.x || c == q.y) {
            throw InputError("CI query: conditioning set must exclude x and y");
        }
        if (!seen.insert(c).second) throw InputError("CI query: repeated conditioner");
    }
}

/// Rank-based CI oracle: x _||_ y | C iff rank(Sigma_{{x}uC, {y}uC}) = |C|,
/// tested as H0^{|C|} by MPRT. Independent <=> fail to reject (p >= alpha).
inline CiResult rank_ci_test(const Dataset& d, const CiQuery& q, double alpha, int perms,
                             std::uint64_t seed) {
    validate_ci_query(q, d.n_cols());
    std::vector<int> cond = q.cond;
    std::sort(cond.begin(), cond.end());
    RankHypothesis hyp;
    hyp.vars.x_indices.push_back(q.x);
    hyp.vars.y_indices.push_back(q.y);
    for (int c : cond) {
        hyp.vars.x_indices.push_back(c);
        hyp.vars.y_indices.push_back(c);
    }
    hyp.k = static_cast<int>(cond.size());
    MprtOptions opt;
    opt.alpha = alpha;
    opt.num_perms = perms;
    opt.seed = seed;
    const TestReport rep = mprt_test(d, hyp, opt);
    return {rep.decision, rep.p_value};
}

/// Rank CI through one of the chi-square baselines instead of MPRT.
inline CiResult ccart_ci_test(const Dataset& d, const CiQuery& q, double alpha,
                              TestMethod variant, DfConvention df = DfConvention::Paper) {
    validate_ci_query(q, d.n_cols());
    std::vector<int> cond = q.cond;
    std::sort(cond.begin(), cond.end());
    RankHypothesis hyp;
    hyp.vars.x_indices.push_back(q.x);
    hyp.vars.y_indices.push_back(q.y);
    for (int c : cond) {
        hyp.vars.x_indices.push_back(c);
        hyp.vars.y_indices.push_back(c);
    }
    hyp.k = static_cast<int>(cond.size());
    CcartOptions opt;
    opt.alpha = alpha;
    opt.df = df;
    const TestReport rep = ccart(d, hyp, variant, opt);
    return {rep.decision, rep.p_value};
}

enum class CorrSource { Sample, Estimated };

/// Fisher-Z partial correlation test. The sample source treats ordinal codes
/// as continuous values; the estimated source uses the pseudo-correlation
/// estimate.
inline CiResult fisher_z_ci(const Dataset& d, const CiQuery& q, double alpha,
                            CorrSource source = CorrSource::Sample) {
    validate_ci_query(q, d.n_cols());
    const int n = d.n_rows();
    const int nc = static_cast<int>(q.cond.size());
    if (n <= nc + 3) {
        throw InputError("fisher_z_ci: need N > |C| + 3");
    }
    std::vector<int> sub{q.x, q.y};
    std::vector<int> cond = q.cond;
    std::sort(cond.begin(), cond.end());
    sub.insert(sub.end(), cond.begin(), cond.end());
    const int m = static_cast<int>(sub.size());

    Eigen::MatrixXd r;
    if (source == CorrSource::Sample) {
        Dataset codes = d;
        for (auto& meta : codes.metas) meta.kind = ColumnKind::Continuous;
        const Dataset std_d = standardize(codes);
        Eigen::MatrixXd cols(n, m);
        for (int j = 0; j < m; ++j) cols.col(j) = std_d.values.col(sub[j]);
        r = cols.transpose() * cols / (n - 1);
        r.diagonal().setOnes();
    } else {
        r = estimate_correlation(d, sub).r_matrix;
    }

    double rho;
    if (nc == 0) {
        rho = r(0, 1);
    } else {
        const Eigen::MatrixXd omega = r.fullPivLu().inverse();
        rho = -omega(0, 1) / std::sqrt(omega(0, 0) * omega(1, 1));
    }
    constexpr double lim = 1.0 - 1e-12;
    rho = std::min(std::max(rho, -lim), lim);
    const double z = 0.5 * std::log((1.0 + rho) / (1.0 - rho));
    const double p =
        2.0 * std_normal_cdf(-std::fabs(z) * std::sqrt(static_cast<double>(n - nc - 3)));
    return {p >= alpha, p};
}

using CiOracle = std::function<CiResult(int, int, const std::vector<int>&)>;

enum class CiMethod { Mprt, FisherZ, CcartD, CcartDe };

inline const char* ci_method_name(CiMethod m) {
    switch (m) {
    case CiMethod::Mprt: return "mprt";
    case CiMethod::FisherZ: return "fisher-z";
    case CiMethod::CcartD: return "ccart-d";
    case CiMethod::CcartDe: return "ccart-de";
    }
    return "?";
}

/// CI oracle over a dataset. Each query derives its own RNG stream from the
/// query content, so results are independent of evaluation order.
inline CiOracle make_ci_oracle(const Dataset& d, CiMethod method, double alpha, int perms,
                               std::uint64_t seed,
                               DfConvention df = DfConvention::Classical) {
    return [&d, method, alpha, perms, seed, df](int x, int y,
                                                const std::vector<int>& cond) -> CiResult {
        CiQuery q{x, y, cond};
        switch (method) {
        case CiMethod::Mprt: {
            std::uint64_t h = derive_seed(seed, static_cast<std::uint64_t>(x) + 1,
                                          static_cast<std::uint64_t>(y) + 1);
            for (int c : cond) h = derive_seed(h, static_cast<std::uint64_t>(c) + 17);
            return rank_ci_test(d, q, alpha, perms, h);
        }
        case CiMethod::FisherZ:
            return fisher_z_ci(d, q, alpha, CorrSource::Sample);
        case CiMethod::CcartD:
            return ccart_ci_test(d, q, alpha, TestMethod::CcartD, df);
        case CiMethod::CcartDe:
            return ccart_ci_test(d, q, alpha, TestMethod::CcartDe, df);
        }
        throw InputError("unknown CI method");
    };
}

struct PcOptions {
    int max_cond = 3; // conditioning-set size cap
};

namespace detail {

// Lexicographic k-subset enumeration over a sorted pool; visit returns true
// to stop (separating set found).
template <class Visit>
bool for_each_subset(const std::vector<int>& pool, int k, Visit&& visit) {
    const int n = static_cast<int>(pool.size());
    if (k > n) return false;
    std::vector<int> idx(k);
    for (int i = 0; i < k; ++i) idx[i] = i;
    std::vector<int> subset(k);
    for (;;) {
        for (int i = 0; i < k; ++i) subset[i] = pool[idx[i]];
        if (visit(subset)) return true;
        int i = k - 1;
        while (i >= 0 && idx[i] == n - k + i) --i;
        if (i < 0) return false;
        ++idx[i];
        for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
}

} // namespace detail

/// PC adjacency search (stable variant): neighbor sets are frozen per level,
/// CI queries within a level are independent, and removals are applied
/// synchronously between levels, which keeps the output deterministic under
/// parallel evaluation.
inline Pdag pc_skeleton(int n_nodes, const CiOracle& oracle, const PcOptions& opt = {}) {
    Pdag g = Pdag::complete(n_nodes);
    for (int level = 0; level <= opt.max_cond; ++level) {
        const Pdag frozen = g;
        const auto edge_list = frozen.edges();
        if (edge_list.empty()) break;
        int max_deg = 0;
        for (int i = 0; i < n_nodes; ++i) {
            max_deg = std::max(max_deg, static_cast<int>(frozen.neighbors(i).size()));
        }
        if (max_deg - 1 < level) break; // no neighborhood offers a subset this large
        std::vector<std::uint8_t> remove(edge_list.size(), 0);
        parallel_for(edge_list.size(), [&](std::size_t e) {
            const auto [x, y] = edge_list[e];
            std::set<std::vector<int>> tested;
            auto scan_side = [&](int from, int other) {
                std::vector<int> pool = frozen.neighbors(from);
                pool.erase(std::remove(pool.begin(), pool.end(), other), pool.end());
                return detail::for_each_subset(pool, level, [&](const std::vector<int>& s) {
                    if (!tested.insert(s).second) return false;
                    return oracle(x, y, s).independent;
                });
            };
            if (scan_side(x, y) || scan_side(y, x)) remove[e] = 1;
        });
        for (std::size_t e = 0; e < edge_list.size(); ++e) {
            if (remove[e]) g.set_edge(edge_list[e].first, edge_list[e].second, false);
        }
    }
    return g;
}

inline Pdag pc_skeleton(const Dataset& d, CiMethod method, double alpha, int perms,
                        std::uint64_t seed, const PcOptions& opt = {}) {
    const CiOracle oracle = make_ci_oracle(d, method, alpha, perms, seed);
    return pc_skeleton(d.n_cols(), oracle, opt);
}

struct SkeletonMetrics {
    double f1 = 0.0;
    int shd = 0;
};

/// Undirected-edge precision/recall F1 and structural Hamming distance.
inline SkeletonMetrics skeleton_metrics(const Pdag& estimated, const Pdag& truth) {
    if (estimated.n_nodes != truth.n_nodes) {
        throw InputError("skeleton_metrics: node counts differ");
    }
    int tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < truth.n_nodes; ++i) {
        for (int j = i + 1; j < truth.n_nodes; ++j) {
            const bool e = estimated.has_edge(i, j);
            const bool t = truth.has_edge(i, j);
            tp += e && t;
            fp += e && !t;
            fn += !e && t;
        }
    }
    SkeletonMetrics out;
    out.shd = fp + fn;
    const double precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    out.f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall)
                                        : 0.0;
    return out;
}

} // namespace mprt
