#include "hlfit/bootstrap.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "hlfit/errors.hpp"
#include "hlfit/parallel.hpp"
#include "hlfit/rng.hpp"

namespace hlfit {

Eigen::MatrixXd inflate_variance(const Eigen::MatrixXd& covariance, int S) {
    if (S < 1) throw std::invalid_argument("inflate_variance: S must be >= 1");
    return covariance * (1.0 + 1.0 / static_cast<double>(S));
}

BootstrapResult bias_correct(const BootstrapModel& model, const Eigen::VectorXd& theta_hat,
                             const Eigen::VectorXd& theta_init, const PenaltyConfig& penalty,
                             int S, std::uint64_t seed, const FitOptions& fit_options,
                             const Eigen::MatrixXd* covariance, int workers) {
    if (S < 1) throw std::invalid_argument("bias_correct: S must be >= 1");
    const int q = static_cast<int>(theta_hat.size());

    BootstrapResult out;
    out.S = S;
    out.estimates =
        Eigen::MatrixXd::Constant(S, q, std::numeric_limits<double>::quiet_NaN());
    out.converged.assign(static_cast<size_t>(S), false);

    parallel_for(S, workers, [&](int s) {
        const auto objective = model.simulate(theta_hat, derive_seed(seed, static_cast<std::uint64_t>(s)));
        const FitResult fit_result = fit(*objective, theta_init, penalty, fit_options);
        if (fit_result.report.converged) {
            out.estimates.row(s) = fit_result.theta.transpose();
            out.converged[static_cast<size_t>(s)] = true;
        }
    });

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(q);
    for (int s = 0; s < S; ++s) {
        if (!out.converged[static_cast<size_t>(s)]) continue;
        mean += out.estimates.row(s).transpose();
        ++out.n_converged;
    }
    if (out.n_converged < std::max(2.0, S / 2.0))
        throw TooFewConverged("bias_correct: only " + std::to_string(out.n_converged) + " of " +
                              std::to_string(S) + " bootstrap replicates converged");
    mean /= out.n_converged;

    out.bias = mean - theta_hat;
    out.corrected = theta_hat - out.bias;
    if (covariance) out.inflated_covariance = inflate_variance(*covariance, S);
    return out;
}

} // namespace hlfit
