#include "hlfit/ode.hpp"

#include <algorithm>
#include <stdexcept>

namespace hlfit {

Trajectory integrate(const OdeSystem& system, const Eigen::VectorXd& params,
                     const Eigen::VectorXd& initial, const std::vector<double>& output_times,
                     IntegratorTolerances tol) {
    if (output_times.empty()) throw std::invalid_argument("integrate: no output times");
    if (!std::is_sorted(output_times.begin(), output_times.end()))
        throw std::invalid_argument("integrate: output times must be ascending");
    if (output_times.front() < 0.0)
        throw std::invalid_argument("integrate: output times must be nonnegative");
    if (!(tol.rel > 0.0) || !(tol.abs > 0.0))
        throw std::invalid_argument("integrate: tolerances must be positive");
    if (initial.size() != system.dimension)
        throw std::invalid_argument("integrate: initial state dimension mismatch");

    Trajectory traj;
    traj.times = output_times;
    traj.states.resize(static_cast<Eigen::Index>(output_times.size()), system.dimension);

    auto rhs = [&](const Eigen::VectorXd& x, double t, Eigen::VectorXd& dxdt) {
        system.rhs(x, params, t, dxdt);
    };
    integrate_dense<Eigen::VectorXd>(rhs, initial, 0.0, output_times, tol, traj.states);
    return traj;
}

} // namespace hlfit
