#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "mprt/dataset.hpp"
#include "mprt/errors.hpp"
#include "mprt/likelihood.hpp"

namespace mprt {

/// Clamp keeping angles (and hence correlations) off the boundary where the
/// likelihood gradient blows up.
inline constexpr double kThetaEps = 1e-6;

/// Spherical parameterization of pseudo-correlation matrices: entries theta(j,i)
/// for j < i are free in (0, pi); the diagonal is fixed at 0.
struct AngleParam {
    Eigen::MatrixXd theta;

    int dim() const { return static_cast<int>(theta.rows()); }

    static AngleParam identity(int m) {
        AngleParam ap;
        ap.theta = Eigen::MatrixXd::Zero(m, m);
        for (int i = 1; i < m; ++i) {
            for (int j = 0; j < i; ++j) ap.theta(j, i) = 0.5 * kPi;
        }
        return ap;
    }

    void clamp() {
        const int m = dim();
        for (int i = 1; i < m; ++i) {
            for (int j = 0; j < i; ++j) {
                theta(j, i) = std::min(std::max(theta(j, i), kThetaEps), kPi - kThetaEps);
            }
        }
    }
};

namespace detail {

// Column i of the spherical Cholesky factor:
//   U(j,i) = cos(theta_{j,i}) * prod_{k<j} sin(theta_{k,i}),   j < i
//   U(i,i) = prod_{k<i} sin(theta_{k,i})
// Every column has unit Euclidean norm by construction.
inline void spherical_column(const Eigen::MatrixXd& theta, int i,
                             Eigen::Ref<Eigen::VectorXd> col) {
    col.setZero();
    double prod = 1.0;
    for (int j = 0; j < i; ++j) {
        col(j) = std::cos(theta(j, i)) * prod;
        prod *= std::sin(theta(j, i));
    }
    col(i) = prod;
}

} // namespace detail

/// Upper-triangular factor U with R = U^T U.
inline Eigen::MatrixXd angles_to_cholesky(const AngleParam& ap) {
    const int m = ap.dim();
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) detail::spherical_column(ap.theta, i, u.col(i));
    return u;
}

/// R = U^T U: symmetric PSD with exact unit diagonal for any valid AngleParam.
inline Eigen::MatrixXd correlation_from_angles(const AngleParam& ap) {
    const Eigen::MatrixXd u = angles_to_cholesky(ap);
    Eigen::MatrixXd r = u.transpose() * u;
    r = 0.5 * (r + r.transpose()).eval();
    r.diagonal().setOnes();
    return r;
}

/// Inverts the parameterization by Cholesky factorization followed by a
/// column-wise arccos recursion. Requires strictly positive definite input.
inline AngleParam angles_from_correlation(const Eigen::MatrixXd& r_matrix) {
    const int m = static_cast<int>(r_matrix.rows());
    Eigen::LLT<Eigen::MatrixXd> llt(r_matrix);
    if (llt.info() != Eigen::Success) {
        throw NumericError("angles_from_correlation: input not positive definite "
                           "(repair required)");
    }
    const Eigen::MatrixXd u = llt.matrixU();
    AngleParam ap;
    ap.theta = Eigen::MatrixXd::Zero(m, m);
    for (int i = 1; i < m; ++i) {
        double prod = 1.0;
        for (int j = 0; j < i; ++j) {
            double c = u(j, i) / std::max(prod, 1e-300);
            c = std::min(std::max(c, -1.0), 1.0);
            const double angle = std::min(std::max(std::acos(c), kThetaEps), kPi - kThetaEps);
            ap.theta(j, i) = angle;
            prod *= std::sin(angle);
        }
    }
    return ap;
}

/// Nearest-correlation surrogate for indefinite pairwise inits: clip
/// eigenvalues at `floor`, then renormalize the diagonal back to unit.
inline Eigen::MatrixXd repair_correlation(const Eigen::MatrixXd& r, double floor = 1e-6) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (r + r.transpose()));
    Eigen::VectorXd evals = es.eigenvalues().cwiseMax(floor);
    Eigen::MatrixXd fixed =
        es.eigenvectors() * evals.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::VectorXd d = fixed.diagonal().cwiseSqrt();
    for (int i = 0; i < fixed.rows(); ++i) {
        for (int j = 0; j < fixed.cols(); ++j) fixed(i, j) /= d(i) * d(j);
    }
    fixed = 0.5 * (fixed + fixed.transpose()).eval();
    fixed.diagonal().setOnes();
    return fixed;
}

/// Per-pair sufficient statistics for a variable subset: what the pseudo-
/// likelihood objective needs, built once and shared across evaluations.
struct PairwiseModel {
    int m = 0;
    int n = 0;
    std::vector<int> cols;                    // original dataset column indices
    std::vector<Eigen::VectorXd> cont;        // standardized values (continuous slots)
    std::vector<std::vector<int>> ord;        // 1-based levels (ordinal slots)
    std::vector<bool> ordinal;
    std::map<int, ThresholdVector> thresholds; // keyed by dataset column index

    struct Pair {
        int i = 0, j = 0;
        PairKind kind = PairKind::ContCont;
        PairData data;
        Eigen::MatrixXd table; // owned storage for OrdOrd pairs
    };
    std::vector<Pair> pairs;

    const Pair& pair_at(int i, int j) const {
        // pairs are stored for i < j in row-major order
        const int a = std::min(i, j), b = std::max(i, j);
        const int idx = a * (2 * m - a - 1) / 2 + (b - a - 1);
        return pairs[static_cast<std::size_t>(idx)];
    }
};

/// Builds the pairwise model over `subset` from (internally standardized) data.
inline PairwiseModel build_pairwise_model(const Dataset& d, const std::vector<int>& subset) {
    if (subset.empty()) throw InputError("variable subset is empty");
    for (int j : subset) {
        if (j < 0 || j >= d.n_cols()) {
            throw InputError("subset index " + std::to_string(j) + " out of range");
        }
    }
    const Dataset std_d = standardize(d);
    PairwiseModel model;
    model.m = static_cast<int>(subset.size());
    model.n = d.n_rows();
    model.cols = subset;
    model.cont.resize(model.m);
    model.ord.resize(model.m);
    model.ordinal.resize(model.m);
    for (int s = 0; s < model.m; ++s) {
        const int col = subset[s];
        model.ordinal[s] = d.is_ordinal(col);
        if (model.ordinal[s]) {
            model.ord[s] = d.ordinal_levels(col);
            if (!model.thresholds.count(col)) {
                model.thresholds.emplace(
                    col, estimate_thresholds(model.ord[s], d.metas[col].levels));
            }
        } else {
            model.cont[s] = std_d.values.col(col);
        }
    }
    // Pairs in (i, j), i < j, row-major order; pair_at relies on this layout.
    for (int i = 0; i < model.m; ++i) {
        for (int j = i + 1; j < model.m; ++j) {
            PairwiseModel::Pair pr;
            pr.i = i;
            pr.j = j;
            const bool oi = model.ordinal[i], oj = model.ordinal[j];
            if (!oi && !oj) {
                pr.kind = PairKind::ContCont;
                const double corr =
                    model.cont[i].dot(model.cont[j]) / (model.n - 1);
                pr.data = PairData::cont_cont(corr);
            } else if (oi != oj) {
                pr.kind = PairKind::ContOrd;
                const int cs = oi ? j : i;
                const int os = oi ? i : j;
                pr.data = PairData::cont_ord(
                    std::span<const double>(model.cont[cs].data(),
                                            static_cast<std::size_t>(model.n)),
                    model.ord[os], model.thresholds.at(model.cols[os]));
            } else {
                pr.kind = PairKind::OrdOrd;
                const auto& ti = model.thresholds.at(model.cols[i]);
                const auto& tj = model.thresholds.at(model.cols[j]);
                pr.table = Eigen::MatrixXd::Zero(ti.level_count(), tj.level_count());
                for (int k = 0; k < model.n; ++k) {
                    pr.table(model.ord[i][k] - 1, model.ord[j][k] - 1) += 1.0;
                }
            }
            model.pairs.push_back(std::move(pr));
        }
    }
    // Rebind OrdOrd PairData to the tables at their final addresses.
    for (auto& pr : model.pairs) {
        if (pr.kind == PairKind::OrdOrd) {
            pr.data = PairData::ord_ord(pr.table, model.thresholds.at(model.cols[pr.i]),
                                        model.thresholds.at(model.cols[pr.j]));
        }
    }
    return model;
}

/// Summed pairwise negative log-likelihood at correlation matrix R.
inline double pseudo_likelihood_objective(const PairwiseModel& model,
                                          const Eigen::MatrixXd& r_matrix) {
    double nll = 0.0;
    for (const auto& pr : model.pairs) {
        nll -= pr.data.loglik(r_matrix(pr.i, pr.j));
    }
    return nll;
}

inline double pseudo_likelihood_objective(const PairwiseModel& model,
                                          const AngleParam& theta) {
    return pseudo_likelihood_objective(model, correlation_from_angles(theta));
}

/// Gradient of the objective w.r.t. the free angles by central differences
/// (step 1e-5). A theta(a,b) perturbation only moves column b of U, hence only
/// pairs involving variable b; the other terms cancel exactly and are skipped.
inline Eigen::MatrixXd pseudo_likelihood_gradient(const PairwiseModel& model,
                                                  const AngleParam& ap,
                                                  double step = 1e-5) {
    const int m = model.m;
    Eigen::MatrixXd u = angles_to_cholesky(ap);
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd col(m);
    Eigen::MatrixXd theta = ap.theta;
    for (int b = 1; b < m; ++b) {
        for (int a = 0; a < b; ++a) {
            double side[2];
            for (int s = 0; s < 2; ++s) {
                theta(a, b) = ap.theta(a, b) + (s == 0 ? step : -step);
                detail::spherical_column(theta, b, col);
                double nll = 0.0;
                for (int i = 0; i < m; ++i) {
                    if (i == b) continue;
                    const double r = u.col(i).dot(col);
                    nll -= model.pair_at(i, b).data.loglik(std::min(std::max(r, -1.0), 1.0));
                }
                side[s] = nll;
            }
            theta(a, b) = ap.theta(a, b);
            grad(a, b) = (side[0] - side[1]) / (2.0 * step);
        }
    }
    return grad;
}

struct CorrConfig {
    double tol = 1e-7;            // relative objective-change stopping rule
    int max_iters = 500;
    double init_step = 1.0;       // backtracking line search halves from here
    int max_backtracks = 40;
    int min_rows_per_var = 10;    // N >= min_rows_per_var * m guard
    FitOptions fit;
};

/// Pseudo-correlation matrix estimate over a variable subset.
struct CorrelationEstimate {
    Eigen::MatrixXd r_matrix;
    std::map<int, ThresholdVector> thresholds; // keyed by dataset column index
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_trace;
};

namespace detail {

inline Eigen::MatrixXd fit_all_pairs(const PairwiseModel& model, const FitOptions& fit) {
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(model.m, model.m);
    for (const auto& pr : model.pairs) {
        const double init =
            pr.kind == PairKind::ContCont
                ? std::min(std::max(pr.data.sample_corr, -fit.r_bound), fit.r_bound)
                : 0.0;
        r(pr.i, pr.j) = r(pr.j, pr.i) = fit_pair(pr.data, init, fit);
    }
    return r;
}

} // namespace detail

/// Independent per-pair ML fits: off-diagonal (i,j) is the fit_pair optimum,
/// diagonal 1. Symmetric but possibly indefinite.
inline std::pair<Eigen::MatrixXd, std::map<int, ThresholdVector>> pairwise_init(
    const Dataset& d, const std::vector<int>& subset, const FitOptions& fit = {}) {
    const PairwiseModel model = build_pairwise_model(d, subset);
    return {detail::fit_all_pairs(model, fit), model.thresholds};
}

/// Two-stage estimator: pairwise init, PSD repair, then joint refinement of
/// the summed pairwise negative log-likelihood over the angle parameterization
/// by gradient descent with a monotone backtracking line search.
inline CorrelationEstimate estimate_correlation(const Dataset& d,
                                                const std::vector<int>& subset,
                                                const CorrConfig& config = {}) {
    const PairwiseModel model = build_pairwise_model(d, subset);
    if (model.n < config.min_rows_per_var * model.m) {
        throw InputError("estimate_correlation: need N >= " +
                         std::to_string(config.min_rows_per_var) + "*m rows (N=" +
                         std::to_string(model.n) + ", m=" + std::to_string(model.m) + ")");
    }
    Eigen::MatrixXd r0 = detail::fit_all_pairs(model, config.fit);
    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r0);
        if (es.eigenvalues().minCoeff() < 1e-6) r0 = repair_correlation(r0);
    }
    AngleParam theta = angles_from_correlation(r0);
    theta.clamp();

    CorrelationEstimate est;
    double obj = pseudo_likelihood_objective(model, theta);
    est.objective_trace.push_back(obj);
    for (int iter = 0; iter < config.max_iters; ++iter) {
        const Eigen::MatrixXd grad = pseudo_likelihood_gradient(model, theta);
        double step = config.init_step;
        AngleParam cand = theta;
        double cand_obj = obj;
        bool improved = false;
        for (int bt = 0; bt < config.max_backtracks; ++bt) {
            cand.theta = theta.theta - step * grad;
            cand.clamp();
            const double o = pseudo_likelihood_objective(model, cand);
            if (o < obj) {
                cand_obj = o;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        est.iterations = iter + 1;
        if (!improved) {
            est.converged = true; // no descent direction left at numeric precision
            break;
        }
        theta = cand;
        const double rel = (obj - cand_obj) / std::max(std::fabs(obj), 1e-12);
        obj = cand_obj;
        est.objective_trace.push_back(obj);
        if (rel < config.tol) {
            est.converged = true;
            break;
        }
    }
    est.r_matrix = correlation_from_angles(theta);
    est.r_matrix = est.r_matrix.cwiseMin(1.0).cwiseMax(-1.0).eval();
    est.r_matrix.diagonal().setOnes();
    est.thresholds = model.thresholds;
    est.objective = obj;
    return est;
}

} // namespace mprt
