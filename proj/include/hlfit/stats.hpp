#ifndef HLFIT_STATS_HPP
#define HLFIT_STATS_HPP

#include <cmath>

namespace hlfit {

inline constexpr double kLogTwoPi = 1.8378770664093454836;

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

// log Phi(x), finite and smooth far into the lower tail where erfc underflows.
inline double log_normal_cdf(double x) {
    if (x > -37.0) return std::log(0.5 * std::erfc(-x * M_SQRT1_2));
    const double x2 = x * x;
    // Mills-ratio expansion: Phi(x) ~ phi(x)/(-x) (1 - 1/x^2 + 3/x^4 - ...)
    return -0.5 * x2 - 0.5 * kLogTwoPi - std::log(-x) + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

inline double normal_logpdf(double resid, double sd) {
    const double z = resid / sd;
    return -0.5 * kLogTwoPi - std::log(sd) - 0.5 * z * z;
}

// Inverse standard normal CDF.
double normal_quantile(double p);

} // namespace hlfit

#endif
