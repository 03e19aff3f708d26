#include "hlfit/stats.hpp"

#include <boost/math/distributions/normal.hpp>
#include <stdexcept>

namespace hlfit {

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p outside (0,1)");
    static const boost::math::normal_distribution<double> std_normal;
    return boost::math::quantile(std_normal, p);
}

} // namespace hlfit
