// Thin wrappers over Boost.Math special functions plus the handful of
// distribution quantities the library needs in closed form.
#pragma once

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>

#include "enscal/error.hpp"

namespace enscal {

inline double digamma(double x) { return boost::math::digamma(x); }
inline double trigamma(double x) { return boost::math::trigamma(x); }
inline double lgamma(double x) { return std::lgamma(x); }

// Regularized upper incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) { return boost::math::gamma_q(a, x); }

// Upper tail of the chi-square distribution with df degrees of freedom.
inline double chi2_sf(double df, double x) { return gamma_q(0.5 * df, 0.5 * x); }

inline constexpr double sqrt2 = 1.4142135623730951;
inline constexpr double inv_sqrt_pi = 0.5641895835477563;
inline constexpr double log_2pi = 1.8378770664093455;

inline double norm_pdf(double z) {
    return std::exp(-0.5 * z * z) * 0.3989422804014327;
}

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / sqrt2); }

inline double norm_quantile(double p) {
    require(p > 0.0 && p < 1.0, errc::validation, "normal quantile needs p in (0,1)");
    return -sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// log of the standard normal CDF, stable deep into the lower tail where the
// CDF itself underflows (Mills-ratio asymptotic with two correction terms).
inline double norm_logcdf(double z) {
    if (z > -36.0) {
        double p = norm_cdf(z);
        if (p > 0.0) return std::log(p);
    }
    double z2 = z * z;
    return -0.5 * z2 - 0.5 * log_2pi - std::log(-z) +
           std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

inline double student_pdf(double x, double dof) {
    return boost::math::pdf(boost::math::students_t(dof), x);
}

inline double student_cdf(double x, double dof) {
    return boost::math::cdf(boost::math::students_t(dof), x);
}

inline double student_quantile(double p, double dof) {
    require(p > 0.0 && p < 1.0, errc::validation, "Student quantile needs p in (0,1)");
    return boost::math::quantile(boost::math::students_t(dof), p);
}

inline double beta_fn(double a, double b) { return boost::math::beta(a, b); }

}  // namespace enscal
