#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mprt/errors.hpp"
#include "mprt/gaussian.hpp"

namespace mprt {

/// Probability floor applied before taking logs of interval/rectangle
/// probabilities, preventing -inf without moving optima.
inline constexpr double kProbFloor = 1e-300;

/// The C-1 finite thresholds of an ordinal variable; T_1 = -inf and
/// T_{C+1} = +inf are implicit.
struct ThresholdVector {
    std::vector<double> interior;

    int level_count() const { return static_cast<int>(interior.size()) + 1; }

    /// T_t for 1-based level t (lower edge of the level's interval).
    double lower(int t) const {
        return t <= 1 ? -std::numeric_limits<double>::infinity() : interior[t - 2];
    }

    /// T_{t+1} for 1-based level t (upper edge).
    double upper(int t) const {
        return t >= level_count() ? std::numeric_limits<double>::infinity()
                                  : interior[t - 1];
    }
};

enum class PairKind { ContCont, ContOrd, OrdOrd };

/// Threshold estimator T^_{t+1} = Phi^{-1}(#{values <= t} / N).
/// Requires every cumulative proportion strictly inside (0, 1).
inline ThresholdVector estimate_thresholds(std::span<const int> column, int levels) {
    if (levels < 2) throw InputError("estimate_thresholds: levels must be >= 2");
    const int n = static_cast<int>(column.size());
    if (n == 0) throw InputError("estimate_thresholds: empty column");
    std::vector<int> counts(static_cast<std::size_t>(levels) + 1, 0);
    for (int v : column) {
        if (v < 1 || v > levels) {
            throw InputError("estimate_thresholds: value " + std::to_string(v) +
                             " outside {1,...," + std::to_string(levels) + "}");
        }
        ++counts[v];
    }
    ThresholdVector thr;
    thr.interior.resize(levels - 1);
    long cum = 0;
    for (int t = 1; t < levels; ++t) {
        cum += counts[t];
        if (cum == 0 || cum == n) {
            throw NumericError("unidentifiable threshold: level " + std::to_string(t) +
                               " cumulative proportion is " + (cum == 0 ? "0" : "1"));
        }
        thr.interior[t - 1] = std_normal_quantile(static_cast<double>(cum) / n);
    }
    for (int t = 1; t + 1 < levels; ++t) {
        if (!(thr.interior[t - 1] < thr.interior[t])) {
            throw NumericError("unidentifiable threshold: empty level " +
                               std::to_string(t + 1) + " gives tied thresholds");
        }
    }
    return thr;
}

/// Pairwise Gaussian objective for two standardized continuous variables:
/// -(1/2) (tr(S(r)^{-1} S^) + log det S(r)) with unit-diagonal 2x2 blocks.
/// Maximized exactly at r = sample_corr.
inline double loglik_cont_cont(double r, double sample_corr) {
    const double omr2 = (1.0 - r) * (1.0 + r);
    return -((1.0 - r * sample_corr) / omr2 + 0.5 * std::log(omr2));
}

namespace detail {

// (1/N) sum log(Phi((T_{t+1} - r c)/s) - Phi((T_t - r c)/s)); the marginal
// log phi(c) part of the polyserial likelihood is handled by the caller.
inline double polyserial_interval_part(double r, std::span<const double> cont,
                                       std::span<const int> ord,
                                       const ThresholdVector& thr,
                                       double prob_floor = kProbFloor) {
    const int n = static_cast<int>(cont.size());
    const int levels = thr.level_count();
    const double inv_s = 1.0 / std::sqrt((1.0 - r) * (1.0 + r));
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
        const int t = ord[k];
        const double rc = r * cont[k];
        // Levels 1 and C have an infinite edge, so only one CDF call each.
        double p;
        if (t <= 1) {
            p = std_normal_cdf((thr.interior[0] - rc) * inv_s);
        } else if (t >= levels) {
            p = std_normal_cdf(-(thr.interior[levels - 2] - rc) * inv_s);
        } else {
            p = std_normal_cdf((thr.interior[t - 1] - rc) * inv_s) -
                std_normal_cdf((thr.interior[t - 2] - rc) * inv_s);
        }
        acc += std::log(p > prob_floor ? p : prob_floor);
    }
    return acc / n;
}

} // namespace detail

/// Polyserial log-likelihood (continuous x, thresholded latent-Gaussian y),
/// averaged over rows.
inline double loglik_polyserial(double r, std::span<const double> cont,
                                std::span<const int> ord, const ThresholdVector& thr,
                                double prob_floor = kProbFloor) {
    if (cont.size() != ord.size()) {
        throw InputError("loglik_polyserial: vector lengths differ");
    }
    if (cont.empty()) throw InputError("loglik_polyserial: empty input");
    double marginal = 0.0;
    for (double c : cont) marginal += std_normal_logpdf(c);
    marginal /= static_cast<double>(cont.size());
    return marginal + detail::polyserial_interval_part(r, cont, ord, thr, prob_floor);
}

/// Polychoric log-likelihood from a C_i x C_j contingency table of counts,
/// averaged over N = sum of counts. Rectangle probabilities via bvn_cdf.
inline double loglik_polychoric(double r, const Eigen::MatrixXd& table,
                                const ThresholdVector& thr_i, const ThresholdVector& thr_j,
                                double prob_floor = kProbFloor) {
    const int ci = static_cast<int>(table.rows());
    const int cj = static_cast<int>(table.cols());
    if (ci != thr_i.level_count() || cj != thr_j.level_count()) {
        throw InputError("loglik_polychoric: table shape does not match thresholds");
    }
    const double n = table.sum();
    if (!(n > 0)) throw InputError("loglik_polychoric: empty table");
    // CDF at every rectangle corner; edge index a in [0, C] maps to T_{a+1}.
    Eigen::MatrixXd corner(ci + 1, cj + 1);
    const double inf = std::numeric_limits<double>::infinity();
    for (int a = 0; a <= ci; ++a) {
        const double x = (a == 0) ? -inf : (a == ci ? inf : thr_i.interior[a - 1]);
        for (int b = 0; b <= cj; ++b) {
            const double y = (b == 0) ? -inf : (b == cj ? inf : thr_j.interior[b - 1]);
            corner(a, b) = bvn_cdf(x, y, r);
        }
    }
    double acc = 0.0;
    for (int a = 1; a <= ci; ++a) {
        for (int b = 1; b <= cj; ++b) {
            const double cnt = table(a - 1, b - 1);
            if (cnt == 0.0) continue;
            double p = corner(a, b) - corner(a - 1, b) - corner(a, b - 1) +
                       corner(a - 1, b - 1);
            if (!(p > prob_floor)) p = prob_floor;
            acc += cnt * std::log(p);
        }
    }
    return acc / n;
}

/// One pair's data in the form its likelihood kernel needs. Span members view
/// caller-owned storage.
struct PairData {
    PairKind kind = PairKind::ContCont;
    double sample_corr = 0.0;
    std::span<const double> cont;
    std::span<const int> ord;
    const ThresholdVector* thr_a = nullptr;
    const ThresholdVector* thr_b = nullptr;
    const Eigen::MatrixXd* table = nullptr;
    double cont_marginal = 0.0; // cached mean log phi term (ContOrd)

    static PairData cont_cont(double sample_corr) {
        PairData p;
        p.kind = PairKind::ContCont;
        p.sample_corr = sample_corr;
        return p;
    }

    static PairData cont_ord(std::span<const double> cont, std::span<const int> ord,
                             const ThresholdVector& thr) {
        PairData p;
        p.kind = PairKind::ContOrd;
        p.cont = cont;
        p.ord = ord;
        p.thr_a = &thr;
        double marginal = 0.0;
        for (double c : cont) marginal += std_normal_logpdf(c);
        p.cont_marginal = cont.empty() ? 0.0 : marginal / static_cast<double>(cont.size());
        return p;
    }

    static PairData ord_ord(const Eigen::MatrixXd& table, const ThresholdVector& thr_a,
                            const ThresholdVector& thr_b) {
        PairData p;
        p.kind = PairKind::OrdOrd;
        p.table = &table;
        p.thr_a = &thr_a;
        p.thr_b = &thr_b;
        return p;
    }

    double loglik(double r) const {
        // Guard against rounding pushing |r| onto the singular boundary.
        constexpr double lim = 1.0 - 1e-12;
        r = std::min(std::max(r, -lim), lim);
        switch (kind) {
        case PairKind::ContCont:
            return loglik_cont_cont(r, sample_corr);
        case PairKind::ContOrd:
            return cont_marginal + detail::polyserial_interval_part(r, cont, ord, *thr_a);
        case PairKind::OrdOrd:
            return loglik_polychoric(r, *table, *thr_a, *thr_b);
        }
        return 0.0;
    }
};

struct FitOptions {
    double r_bound = 0.99; // keeps the search off the |r| -> 1 singularity
    double tol = 1e-6;     // absolute tolerance in r
    int max_iters = 100;
};

namespace detail {

struct BrentResult {
    double x = 0.0;
    double fx = 0.0;
    int iters = 0;
    bool converged = false;
};

// Brent's derivative-free local minimizer (golden-section/parabolic hybrid)
// on [a, b], started at x0.
template <class F>
BrentResult brent_minimize(F&& f, double a, double b, double x0, double tol,
                           int max_iters) {
    constexpr double gold = 0.3819660112501051;
    double x = std::min(std::max(x0, a), b);
    double w = x, v = x;
    double fx = f(x), fw = fx, fv = fx;
    double d = 0.0, e = 0.0;
    for (int iter = 0; iter < max_iters; ++iter) {
        const double m = 0.5 * (a + b);
        const double tol1 = tol;
        const double tol2 = 2.0 * tol1;
        if (std::fabs(x - m) <= tol2 - 0.5 * (b - a)) {
            return {x, fx, iter, true};
        }
        bool use_golden = true;
        if (std::fabs(e) > tol1) {
            const double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0.0) p = -p;
            q = std::fabs(q);
            const double etmp = e;
            e = d;
            if (std::fabs(p) < std::fabs(0.5 * q * etmp) && p > q * (a - x) &&
                p < q * (b - x)) {
                d = p / q;
                const double u = x + d;
                if (u - a < tol2 || b - u < tol2) d = (m > x) ? tol1 : -tol1;
                use_golden = false;
            }
        }
        if (use_golden) {
            e = (x < m) ? b - x : a - x;
            d = gold * e;
        }
        const double u = (std::fabs(d) >= tol1) ? x + d : x + (d > 0.0 ? tol1 : -tol1);
        const double fu = f(u);
        if (fu <= fx) {
            if (u < x) b = x; else a = x;
            v = w; fv = fw;
            w = x; fw = fx;
            x = u; fx = fu;
        } else {
            if (u < x) a = u; else b = u;
            if (fu <= fw || w == x) {
                v = w; fv = fw;
                w = u; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u; fv = fu;
            }
        }
    }
    return {x, fx, max_iters, false};
}

} // namespace detail

/// Maximizes the pair's log-likelihood over r in [-r_bound, r_bound].
inline double fit_pair(const PairData& data, double r_init, const FitOptions& opt = {}) {
    if (std::fabs(r_init) > opt.r_bound) {
        throw InputError("fit_pair: |r_init| must be <= r_bound");
    }
    const auto res = detail::brent_minimize([&](double r) { return -data.loglik(r); },
                                            -opt.r_bound, opt.r_bound, r_init, opt.tol,
                                            opt.max_iters);
    if (!res.converged) {
        std::ostringstream oss;
        oss << "fit_pair: optimizer did not converge within " << opt.max_iters
            << " iterations (best iterate r=" << res.x << ")";
        throw NumericError(oss.str());
    }
    return res.x;
}

} // namespace mprt
