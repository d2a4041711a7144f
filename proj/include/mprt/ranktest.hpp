#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "mprt/correlation.hpp"
#include "mprt/dataset.hpp"
#include "mprt/errors.hpp"
#include "mprt/gaussian.hpp"
#include "mprt/parallel.hpp"
#include "mprt/rng.hpp"

namespace mprt {

/// Null hypothesis H0^k: rank(Sigma_{X,Y}) <= k.
struct RankHypothesis {
    VariableSet vars;
    int k = 0;
};

/// CCA projections and canonical scores for one hypothesis.
/// A^T Sx A = B^T Sy B = I_K and A^T Sxy B = diag(scores).
struct CcaSolution {
    Eigen::MatrixXd a_matrix; // P x K
    Eigen::MatrixXd b_matrix; // Q x K
    Eigen::VectorXd scores;   // descending, in [0, 1]
};

enum class TestMethod { Mprt, CcartC, CcartD, CcartDe };

enum class DfConvention { Paper, Classical };

inline const char* method_name(TestMethod m) {
    switch (m) {
    case TestMethod::Mprt: return "mprt";
    case TestMethod::CcartC: return "ccart-c";
    case TestMethod::CcartD: return "ccart-d";
    case TestMethod::CcartDe: return "ccart-de";
    }
    return "?";
}

struct TestReport {
    double statistic = 0.0;
    double p_value = 1.0;
    TestMethod method = TestMethod::Mprt;
    int num_permutations = 0;
    bool decision = true; // true = fail to reject H0^k, i.e. p >= alpha
    double alpha = 0.05;
    std::uint64_t seed = 0;
    int k = 0;
    std::vector<double> perm_statistics; // filled when requested
};

namespace detail {

// Symmetric inverse square root with eigenvalue floor. Throws when the input
// is materially indefinite rather than merely rounding-noise negative.
inline Eigen::MatrixXd inv_sqrt_psd(const Eigen::MatrixXd& s, double eig_floor = 1e-10,
                                    const char* what = "covariance block") {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
    if (es.info() != Eigen::Success) {
        throw NumericError(std::string("inv_sqrt: eigendecomposition failed for ") + what);
    }
    if (es.eigenvalues().minCoeff() < -1e-6) {
        throw NumericError(std::string("degenerate within-set ") + what +
                           " (materially indefinite)");
    }
    const Eigen::VectorXd inv_root =
        es.eigenvalues().cwiseMax(eig_floor).cwiseSqrt().cwiseInverse();
    return es.eigenvectors() * inv_root.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace detail

/// CCA via SVD of the whitened cross block M = Sx^{-1/2} Sxy Sy^{-1/2}.
inline CcaSolution cca(const Eigen::MatrixXd& sigma_x, const Eigen::MatrixXd& sigma_xy,
                       const Eigen::MatrixXd& sigma_y) {
    const int p = static_cast<int>(sigma_x.rows());
    const int q = static_cast<int>(sigma_y.rows());
    if (sigma_x.cols() != p || sigma_y.cols() != q || sigma_xy.rows() != p ||
        sigma_xy.cols() != q) {
        throw InputError("cca: inconsistent block dimensions");
    }
    const int k = std::min(p, q);
    const Eigen::MatrixXd isx = detail::inv_sqrt_psd(sigma_x);
    const Eigen::MatrixXd isy = detail::inv_sqrt_psd(sigma_y);
    const Eigen::MatrixXd m = isx * sigma_xy * isy;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    CcaSolution sol;
    sol.a_matrix = isx * svd.matrixU().leftCols(k);
    sol.b_matrix = isy * svd.matrixV().leftCols(k);
    sol.scores = svd.singularValues().head(k).cwiseMin(1.0).cwiseMax(0.0);
    return sol;
}

/// Bartlett statistic lambda_k = -(N - (P+Q+3)/2) ln prod_{i>k} (1 - r_i^2).
/// The empty product (k = K) gives 0; any residual score of 1 gives +inf.
inline double bartlett_statistic(const Eigen::VectorXd& scores, int n, int p, int q,
                                 int k) {
    const int kk = static_cast<int>(scores.size());
    if (k < 0 || k > kk) throw InputError("bartlett_statistic: k out of range");
    double log_prod = 0.0;
    for (int i = k; i < kk; ++i) {
        const double r = scores(i);
        log_prod += std::log1p(-r * r);
    }
    const double coef = n - 0.5 * (p + q + 3);
    return -coef * log_prod;
}

/// Chi-square p-value for the Bartlett statistic. Degrees of freedom follow
/// the paper's printed convention (P-k+1)(Q-k+1) by default; the classical
/// Bartlett choice (P-k)(Q-k) is selectable.
inline double chi_square_pvalue(double lambda_k, int p, int q, int k,
                                DfConvention convention = DfConvention::Paper) {
    if (lambda_k < 0.0) throw InputError("chi_square_pvalue: statistic must be >= 0");
    const int df = convention == DfConvention::Paper ? (p - k + 1) * (q - k + 1)
                                                     : (p - k) * (q - k);
    if (df <= 0) {
        throw InputError("chi_square_pvalue: nonpositive degrees of freedom");
    }
    return chi_square_survival(lambda_k, df);
}

/// Residual-block statistic: singular values of
///   G = ((A^T Sx A)_{k:,k:})^{-1/2} (A^T cross B)_{k:,k:} ((B^T Sy B)_{k:,k:})^{-1/2}
/// pushed through the Bartlett formula over all K-k values.
inline double residual_statistic(const CcaSolution& sol, const Eigen::MatrixXd& sigma_x,
                                 const Eigen::MatrixXd& sigma_y,
                                 const Eigen::MatrixXd& cross, int k, int n, int p, int q) {
    const int kk = static_cast<int>(sol.scores.size());
    if (k < 0 || k >= kk) throw InputError("residual_statistic: need 0 <= k < K");
    const int rest = kk - k;
    const Eigen::MatrixXd mx =
        (sol.a_matrix.transpose() * sigma_x * sol.a_matrix).bottomRightCorner(rest, rest);
    const Eigen::MatrixXd my =
        (sol.b_matrix.transpose() * sigma_y * sol.b_matrix).bottomRightCorner(rest, rest);
    const Eigen::MatrixXd c =
        (sol.a_matrix.transpose() * cross * sol.b_matrix).bottomRightCorner(rest, rest);
    const Eigen::MatrixXd g =
        detail::inv_sqrt_psd(mx) * c * detail::inv_sqrt_psd(my);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(g);
    const Eigen::VectorXd scores = svd.singularValues().cwiseMin(1.0).cwiseMax(0.0);
    return bartlett_statistic(scores, n, p, q, 0);
}

/// Cross-correlation estimate between X columns and row-permuted Y columns:
/// sample cross-moments for continuous pairs, pairwise ML fits (with the
/// precomputed, permutation-invariant thresholds) for pairs with an ordinal
/// side. `standardized` must already have unit-variance continuous columns.
inline Eigen::MatrixXd permuted_cross_block(
    const Dataset& standardized, const VariableSet& vars, std::span<const int> perm,
    const std::map<int, ThresholdVector>& thresholds, const FitOptions& fit = {}) {
    const int n = standardized.n_rows();
    if (static_cast<int>(perm.size()) != n) {
        throw InputError("permuted_cross_block: permutation length != N");
    }
    const int p = static_cast<int>(vars.x_indices.size());
    const int q = static_cast<int>(vars.y_indices.size());
    bool identity = true;
    for (int i = 0; i < n && identity; ++i) identity = perm[i] == i;

    // Gather each Y column once under the permutation.
    std::vector<Eigen::VectorXd> y_cont(q);
    std::vector<std::vector<int>> y_ord(q);
    for (int j = 0; j < q; ++j) {
        const int col = vars.y_indices[j];
        if (standardized.is_ordinal(col)) {
            y_ord[j].resize(n);
            for (int i = 0; i < n; ++i) {
                y_ord[j][i] = static_cast<int>(standardized.values(perm[i], col));
            }
        } else {
            y_cont[j].resize(n);
            for (int i = 0; i < n; ++i) y_cont[j](i) = standardized.values(perm[i], col);
        }
    }

    std::vector<std::vector<int>> x_ord(p);
    for (int i = 0; i < p; ++i) {
        const int col = vars.x_indices[i];
        if (standardized.is_ordinal(col)) x_ord[i] = standardized.ordinal_levels(col);
    }

    Eigen::MatrixXd cross(p, q);
    for (int i = 0; i < p; ++i) {
        const int xc = vars.x_indices[i];
        const bool xo = standardized.is_ordinal(xc);
        for (int j = 0; j < q; ++j) {
            const int yc = vars.y_indices[j];
            const bool yo = standardized.is_ordinal(yc);
            if (identity && xc == yc) {
                // A column paired with itself under no permutation is the
                // diagonal of the correlation matrix.
                cross(i, j) = 1.0;
                continue;
            }
            if (!xo && !yo) {
                cross(i, j) =
                    standardized.values.col(xc).dot(y_cont[j]) / (n - 1);
            } else if (!xo && yo) {
                const PairData pd = PairData::cont_ord(
                    std::span<const double>(standardized.values.col(xc).data(),
                                            static_cast<std::size_t>(n)),
                    y_ord[j], thresholds.at(yc));
                cross(i, j) = fit_pair(pd, 0.0, fit);
            } else if (xo && !yo) {
                const PairData pd = PairData::cont_ord(
                    std::span<const double>(y_cont[j].data(), static_cast<std::size_t>(n)),
                    x_ord[i], thresholds.at(xc));
                cross(i, j) = fit_pair(pd, 0.0, fit);
            } else {
                const auto& ti = thresholds.at(xc);
                const auto& tj = thresholds.at(yc);
                Eigen::MatrixXd table =
                    Eigen::MatrixXd::Zero(ti.level_count(), tj.level_count());
                for (int r = 0; r < n; ++r) table(x_ord[i][r] - 1, y_ord[j][r] - 1) += 1.0;
                const PairData pd = PairData::ord_ord(table, ti, tj);
                cross(i, j) = fit_pair(pd, 0.0, fit);
            }
        }
    }
    return cross;
}

/// Add-one smoothed permutation p-value: (1 + #{lambda_perm >= lambda_obs}) / (1 + B).
inline double pvalue_from_permutations(double lambda_obs, std::span<const double> perms) {
    if (perms.empty()) throw InputError("pvalue_from_permutations: no permutations");
    std::size_t count = 0;
    for (double v : perms) {
        if (v >= lambda_obs) ++count;
    }
    return static_cast<double>(1 + count) / static_cast<double>(1 + perms.size());
}

struct MprtOptions {
    double alpha = 0.05;
    int num_perms = 200;
    std::uint64_t seed = 0;
    bool keep_perm_stats = false;
    CorrConfig corr;
};

namespace detail {

struct HypothesisSlices {
    std::vector<int> subset;  // union of X and Y, X order first
    std::vector<int> pos_x;   // positions of X columns inside subset
    std::vector<int> pos_y;
};

inline HypothesisSlices make_slices(const VariableSet& vars) {
    HypothesisSlices s;
    std::map<int, int> pos;
    auto place = [&](int col) {
        auto it = pos.find(col);
        if (it != pos.end()) return it->second;
        const int at = static_cast<int>(s.subset.size());
        s.subset.push_back(col);
        pos.emplace(col, at);
        return at;
    };
    for (int col : vars.x_indices) s.pos_x.push_back(place(col));
    for (int col : vars.y_indices) s.pos_y.push_back(place(col));
    return s;
}

inline Eigen::MatrixXd slice(const Eigen::MatrixXd& r, const std::vector<int>& rows,
                             const std::vector<int>& cols) {
    Eigen::MatrixXd out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = r(rows[i], cols[j]);
    }
    return out;
}

} // namespace detail

/// Mixed data Permutation-based Rank Test of H0^k: rank(Sigma_{X,Y}) <= k.
///
/// Estimates the pseudo-correlation matrix over X u Y, solves CCA on its
/// blocks, computes the observed residual statistic at the identity
/// permutation, then builds the empirical null from `num_perms` seeded row
/// permutations of the Y side (only the cross block is re-estimated; the
/// within-set blocks and thresholds are permutation-invariant).
inline TestReport mprt_test(const Dataset& d, const RankHypothesis& hyp,
                       const MprtOptions& opt = {}) {
    validate_variable_set(hyp.vars, d.n_cols());
    const int p = static_cast<int>(hyp.vars.x_indices.size());
    const int q = static_cast<int>(hyp.vars.y_indices.size());
    const int kk = std::min(p, q);
    if (hyp.k < 0 || hyp.k > kk) {
        throw InputError("mprt: k must satisfy 0 <= k <= min(P, Q)");
    }
    TestReport report;
    report.method = TestMethod::Mprt;
    report.alpha = opt.alpha;
    report.seed = opt.seed;
    report.k = hyp.k;
    if (hyp.k == kk) {
        // Vacuous null: the statistic is identically 0 by the empty product.
        report.statistic = 0.0;
        report.p_value = 1.0;
        report.decision = true;
        report.num_permutations = 0;
        return report;
    }
    if (opt.num_perms < 1) throw InputError("mprt: need at least one permutation");

    const detail::HypothesisSlices slices = detail::make_slices(hyp.vars);
    const CorrelationEstimate est = estimate_correlation(d, slices.subset, opt.corr);
    const Eigen::MatrixXd sigma_x = detail::slice(est.r_matrix, slices.pos_x, slices.pos_x);
    const Eigen::MatrixXd sigma_y = detail::slice(est.r_matrix, slices.pos_y, slices.pos_y);
    const CcaSolution sol =
        cca(sigma_x, detail::slice(est.r_matrix, slices.pos_x, slices.pos_y), sigma_y);

    const Dataset std_d = standardize(d);
    const int n = d.n_rows();
    std::vector<int> ident(n);
    for (int i = 0; i < n; ++i) ident[i] = i;
    const Eigen::MatrixXd cross0 =
        permuted_cross_block(std_d, hyp.vars, ident, est.thresholds, opt.corr.fit);
    report.statistic =
        residual_statistic(sol, sigma_x, sigma_y, cross0, hyp.k, n, p, q);

    std::vector<double> lambda_perm(opt.num_perms);
    parallel_for(static_cast<std::size_t>(opt.num_perms), [&](std::size_t b) {
        Prng prng(derive_seed(opt.seed, b + 1));
        const std::vector<int> perm = prng.permutation(n);
        const Eigen::MatrixXd cross =
            permuted_cross_block(std_d, hyp.vars, perm, est.thresholds, opt.corr.fit);
        lambda_perm[b] = residual_statistic(sol, sigma_x, sigma_y, cross, hyp.k, n, p, q);
    });

    report.num_permutations = opt.num_perms;
    report.p_value = pvalue_from_permutations(report.statistic, lambda_perm);
    report.decision = report.p_value >= opt.alpha;
    if (opt.keep_perm_stats) report.perm_statistics = std::move(lambda_perm);
    return report;
}

struct CcartOptions {
    double alpha = 0.05;
    DfConvention df = DfConvention::Paper;
    CorrConfig corr; // used by the DE variant
};

/// Classical chi-square CCA rank tests.
///   C  : sample correlations of continuous observations (requires all
///        selected columns continuous);
///   D  : ordinal codes treated as continuous values;
///   DE : pseudo-correlation estimate plugged into the chi-square test.
inline TestReport ccart(const Dataset& d, const RankHypothesis& hyp, TestMethod variant,
                        const CcartOptions& opt = {}) {
    validate_variable_set(hyp.vars, d.n_cols());
    const int p = static_cast<int>(hyp.vars.x_indices.size());
    const int q = static_cast<int>(hyp.vars.y_indices.size());
    const int kk = std::min(p, q);
    if (hyp.k < 0 || hyp.k > kk) {
        throw InputError("ccart: k must satisfy 0 <= k <= min(P, Q)");
    }
    TestReport report;
    report.method = variant;
    report.alpha = opt.alpha;
    report.k = hyp.k;
    if (hyp.k == kk) {
        report.statistic = 0.0;
        report.p_value = 1.0;
        report.decision = true;
        return report;
    }

    const detail::HypothesisSlices slices = detail::make_slices(hyp.vars);
    const int n = d.n_rows();
    Eigen::MatrixXd r;
    switch (variant) {
    case TestMethod::CcartC: {
        for (int col : slices.subset) {
            if (d.is_ordinal(col)) {
                throw InputError("ccart-c requires continuous observations for all "
                                 "selected columns (column '" +
                                 d.metas[col].name + "' is ordinal)");
            }
        }
        const Dataset std_d = standardize(d);
        const int m = static_cast<int>(slices.subset.size());
        Eigen::MatrixXd cols(n, m);
        for (int j = 0; j < m; ++j) cols.col(j) = std_d.values.col(slices.subset[j]);
        r = cols.transpose() * cols / (n - 1);
        break;
    }
    case TestMethod::CcartD: {
        Dataset codes = d;
        for (auto& meta : codes.metas) meta.kind = ColumnKind::Continuous;
        const Dataset std_d = standardize(codes);
        const int m = static_cast<int>(slices.subset.size());
        Eigen::MatrixXd cols(n, m);
        for (int j = 0; j < m; ++j) cols.col(j) = std_d.values.col(slices.subset[j]);
        r = cols.transpose() * cols / (n - 1);
        break;
    }
    case TestMethod::CcartDe: {
        r = estimate_correlation(d, slices.subset, opt.corr).r_matrix;
        break;
    }
    default:
        throw InputError("ccart: variant must be ccart-c, ccart-d or ccart-de");
    }
    r = 0.5 * (r + r.transpose()).eval();
    r.diagonal().setOnes();

    std::vector<int> px(slices.pos_x), py(slices.pos_y);
    const CcaSolution sol = cca(detail::slice(r, px, px), detail::slice(r, px, py),
                                detail::slice(r, py, py));
    report.statistic = bartlett_statistic(sol.scores, n, p, q, hyp.k);
    report.p_value = chi_square_pvalue(report.statistic, p, q, hyp.k, opt.df);
    report.decision = report.p_value >= opt.alpha;
    return report;
}

} // namespace mprt
