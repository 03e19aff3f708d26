#ifndef HLFIT_INFERENCE_HPP
#define HLFIT_INFERENCE_HPP

#include <Eigen/Dense>
#include <vector>

#include "hlfit/hlik.hpp"
#include "hlfit/objective.hpp"

namespace hlfit {

struct InferenceOptions {
    double inner_grad_tol = 1e-8; // gradient tolerance for the subject modes
    int inner_max_iter = 50;
    double initial_damping = 1e-2;
    int workers = 1;
};

// Re-maximizes hl_i over a_i at fixed theta (Newton-Marquardt with the warm
// start a_init, usually the optimizer's final a_i row).
Eigen::VectorXd refine_subject_mode(const SubjectObjective& obj, int subject,
                                    const Eigen::VectorXd& theta, const Eigen::VectorXd& a_init,
                                    const PenaltyConfig& penalty,
                                    const InferenceOptions& opt = {});

// Profile score u_i: the derivative of l(Y_i; theta, b) in theta with b held
// at the subject mode -- the envelope form, ordered [alpha-block; beta-block].
// a_hat_i must be the refined mode alpha + b_hat_i(theta).
Eigen::VectorXd subject_score(const SubjectObjective& obj, int subject,
                              const Eigen::VectorXd& theta, const Eigen::VectorXd& a_hat_i);

// Profile Hessian H_i via the Schur-complement correction
//   H_i = l_xx - l_xz [l_zz - J_zz]^{-1} l_zx
// with all l blocks taken from the numeric (a_i, beta) Hessian and
// J_zz = diag(1/tau^2) analytic. Throws SingularInnerBlock when the bracket
// cannot be inverted.
Eigen::MatrixXd subject_hessian(const SubjectObjective& obj, int subject,
                                const Eigen::VectorXd& theta, const Eigen::VectorXd& a_hat_i,
                                const PenaltyConfig& penalty);

struct SandwichCovariance {
    Eigen::MatrixXd bread;      // mean of the H_i
    Eigen::MatrixXd meat;       // mean of u_i u_i'
    Eigen::MatrixXd covariance; // bread^{-1} meat bread^{-1} / n
    double bread_condition = 0.0;
    int n_used = 0;
    std::vector<int> excluded; // subjects dropped for singular inner blocks
};

// Observed-quantity plug-in of the M-estimator variance at theta_hat.
// a_warm supplies warm starts for the per-subject modes (n x R).
SandwichCovariance sandwich(const SubjectObjective& obj, const Eigen::VectorXd& theta_hat,
                            const Eigen::MatrixXd& a_warm, const PenaltyConfig& penalty,
                            const InferenceOptions& opt = {});

struct WaldResult {
    double estimate = 0.0;
    double variance = 0.0;
    double statistic = 0.0;
    double p_value = 1.0;
};

// eta = c'theta, var = c'Cov c, W = eta/sqrt(var), two-sided normal p-value.
// Throws std::invalid_argument on nonpositive variance.
WaldResult wald_contrast(const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& covariance,
                         const Eigen::VectorXd& contrast);

struct ConfidenceInterval {
    double lower = 0.0;
    double upper = 0.0;
};

// Wald intervals theta_j +/- z_(1+level)/2 * SE_j on the transformed scale.
std::vector<ConfidenceInterval> confidence_intervals(const Eigen::VectorXd& theta_hat,
                                                     const Eigen::MatrixXd& covariance,
                                                     double level);

} // namespace hlfit

#endif
