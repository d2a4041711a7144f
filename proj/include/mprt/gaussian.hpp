#pragma once

#include <cmath>
#include <limits>

#include "mprt/errors.hpp"

namespace mprt {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kInvSqrt2 = 0.7071067811865475244008443621048490393;
inline constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599343818685;
inline constexpr double kLogSqrt2Pi = 0.9189385332046727417803297364056176398;

inline double std_normal_pdf(double x) {
    return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

inline double std_normal_logpdf(double x) {
    return -0.5 * x * x - kLogSqrt2Pi;
}

/// Standard normal CDF, total on the extended reals.
inline double std_normal_cdf(double x) {
    return 0.5 * std::erfc(-x * kInvSqrt2);
}

/// Inverse standard normal CDF. Acklam's rational approximation followed by
/// one Halley step against std_normal_cdf; |Phi(result) - p| stays below 1e-15.
inline double std_normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw NumericError("std_normal_quantile: p must lie in (0, 1)");
    }
    static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                    -2.759285104469687e+02, 1.383577518672690e+02,
                                    -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                    -1.556989798598866e+02, 6.680131188771972e+01,
                                    -1.328068155288572e+01};
    static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                    -2.400758277161838e+00, -2.549732539343734e+00,
                                    4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                    2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement.
    const double e = std_normal_cdf(x) - p;
    const double u = e / kInvSqrt2Pi * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
    return x;
}

namespace detail {

// Gauss-Legendre abscissae/weights used by the bivariate normal quadrature
// (6-, 12- and 20-point rules, selected by |r|).
inline constexpr double kBvnW6[3] = {0.1713244923791704, 0.3607615730481386,
                                     0.4679139345726910};
inline constexpr double kBvnX6[3] = {0.9324695142031521, 0.6612093864662645,
                                     0.2386191860831969};
inline constexpr double kBvnW12[6] = {0.04717533638651183, 0.1069393259953184,
                                      0.1600783285433462,  0.2031674267230659,
                                      0.2334925365383548,  0.2491470458134028};
inline constexpr double kBvnX12[6] = {0.9815606342467192, 0.9041172563704749,
                                      0.7699026741943047, 0.5873179542866175,
                                      0.3678314989981802, 0.1252334085114689};
inline constexpr double kBvnW20[10] = {0.01761400713915212, 0.04060142980038694,
                                       0.06267204833410907, 0.08327674157670475,
                                       0.1019301198172404,  0.1181945319615184,
                                       0.1316886384491766,  0.1420961093183820,
                                       0.1491729864726037,  0.1527533871307258};
inline constexpr double kBvnX20[10] = {0.9931285991850949,  0.9639719272779138,
                                       0.9122344282513259,  0.8391169718222188,
                                       0.7463319064601508,  0.6360536807265150,
                                       0.5108670019508271,  0.3737060887154195,
                                       0.2277858511416451,  0.07652652113349734};

// Drezner-Wesolowsky / Genz algorithm for P(X > dh, Y > dk) under a standard
// bivariate normal with correlation r, |r| < 1. Absolute error ~5e-16.
inline double bvn_upper(double dh, double dk, double r) {
    const double* w;
    const double* x;
    int lg;
    const double ar = std::fabs(r);
    if (ar < 0.3) {
        lg = 3;
        w = kBvnW6;
        x = kBvnX6;
    } else if (ar < 0.75) {
        lg = 6;
        w = kBvnW12;
        x = kBvnX12;
    } else {
        lg = 10;
        w = kBvnW20;
        x = kBvnX20;
    }
    double h = dh;
    double k = dk;
    double hk = h * k;
    double bvn = 0.0;
    if (ar < 0.925) {
        if (ar > 0.0) {
            const double hs = 0.5 * (h * h + k * k);
            const double asr = std::asin(r);
            for (int i = 0; i < lg; ++i) {
                for (int is = -1; is <= 1; is += 2) {
                    const double sn = std::sin(asr * (is * x[i] + 1.0) * 0.5);
                    bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
                }
            }
            bvn = bvn * asr / (2.0 * kTwoPi);
        }
        bvn += std_normal_cdf(-h) * std_normal_cdf(-k);
    } else {
        if (r < 0.0) {
            k = -k;
            hk = -hk;
        }
        if (ar < 1.0) {
            const double as = (1.0 - r) * (1.0 + r);
            double a = std::sqrt(as);
            const double bs = (h - k) * (h - k);
            const double cc = (4.0 - hk) / 8.0;
            const double dd = (12.0 - hk) / 16.0;
            double asr = -0.5 * (bs / as + hk);
            if (asr > -100.0) {
                bvn = a * std::exp(asr) *
                      (1.0 - cc * (bs - as) * (1.0 - dd * bs / 5.0) / 3.0 +
                       cc * dd * as * as / 5.0);
            }
            if (-hk < 100.0) {
                const double bb = std::sqrt(bs);
                bvn -= std::exp(-0.5 * hk) * std::sqrt(kTwoPi) * std_normal_cdf(-bb / a) *
                       bb * (1.0 - cc * bs * (1.0 - dd * bs / 5.0) / 3.0);
            }
            a *= 0.5;
            for (int i = 0; i < lg; ++i) {
                for (int is = -1; is <= 1; is += 2) {
                    const double xs = a * (is * x[i] + 1.0) * a * (is * x[i] + 1.0);
                    const double rs = std::sqrt(1.0 - xs);
                    asr = -0.5 * (bs / xs + hk);
                    if (asr > -100.0) {
                        const double sp = 1.0 + cc * xs * (1.0 + dd * xs);
                        const double ep =
                            std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs;
                        bvn += a * w[i] * std::exp(asr) * (ep - sp);
                    }
                }
            }
            bvn = -bvn / kTwoPi;
        }
        if (r > 0.0) {
            bvn += std_normal_cdf(-std::max(h, k));
        } else {
            bvn = -bvn;
            if (k > h) bvn += std_normal_cdf(k) - std_normal_cdf(h);
        }
    }
    if (bvn < 0.0) bvn = 0.0;
    if (bvn > 1.0) bvn = 1.0;
    return bvn;
}

} // namespace detail

/// Bivariate standard normal CDF P(X <= x, Y <= y) with correlation r.
/// Accepts extended-real x, y; requires |r| < 1 (degenerate r handled by
/// the caller through clamping).
inline double bvn_cdf(double x, double y, double r) {
    if (!(std::fabs(r) < 1.0)) {
        throw NumericError("bvn_cdf: correlation must satisfy |r| < 1");
    }
    if (std::isinf(x) || std::isinf(y)) {
        if ((std::isinf(x) && x < 0.0) || (std::isinf(y) && y < 0.0)) return 0.0;
        if (std::isinf(x) && std::isinf(y)) return 1.0;
        return std::isinf(x) ? std_normal_cdf(y) : std_normal_cdf(x);
    }
    return detail::bvn_upper(-x, -y, r);
}

namespace detail {

inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 1000; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 1000; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace detail

/// Upper-tail probability P(Chi2_df > x) via the regularized incomplete gamma
/// function (series below the a+1 crossover, continued fraction above).
inline double chi_square_survival(double x, double df) {
    if (!(df > 0.0)) throw NumericError("chi_square_survival: df must be positive");
    if (!(x > 0.0)) return 1.0;
    if (std::isinf(x)) return 0.0;
    const double a = 0.5 * df;
    const double xx = 0.5 * x;
    if (xx < a + 1.0) return 1.0 - detail::gamma_p_series(a, xx);
    return detail::gamma_q_contfrac(a, xx);
}

} // namespace mprt
