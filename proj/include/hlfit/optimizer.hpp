#ifndef HLFIT_OPTIMIZER_HPP
#define HLFIT_OPTIMIZER_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hlfit/hlik.hpp"
#include "hlfit/objective.hpp"

namespace hlfit {

enum class Algorithm { Hybrid, Global, Patient };

enum class StopReason {
    Converged,
    IterationLimit,
    DampingOverflow,
    DerivativeFailure,
    InfeasibleStart
};

std::string to_string(Algorithm a);
std::string to_string(StopReason r);
Algorithm algorithm_from_string(const std::string& s);

struct FitOptions {
    Algorithm algorithm = Algorithm::Hybrid;
    int max_iterations = 150;
    // Convergence requires all three simultaneously: relative objective
    // change, max parameter change, assembled-gradient max norm.
    double rel_obj_tol = 1e-7;
    double param_tol = 1e-5;
    double grad_tol = 1e-4;
    double initial_damping = 1e-2;
    int max_rejections = 30;     // consecutive Marquardt rejections before overflow
    double damping_floor = 1e-12; // floor applied to diag(-H) before scaling
    double pivot_tol = 1e-10;    // definiteness test threshold
    int workers = 1;
};

struct ConvergenceReport {
    bool converged = false;
    int iterations = 0;
    double objective = 0.0;
    double grad_max_norm = 0.0;
    StopReason reason = StopReason::IterationLimit;
    std::string detail;
};

struct IterationRecord {
    int iteration = 0;
    double objective = 0.0;
    double damping = 0.0;
    char phase = 'P'; // 'P' patient-by-patient, 'G' global
    int indefinite_blocks = 0;
};

struct FitResult {
    Eigen::VectorXd theta; // [alpha; beta]
    Eigen::MatrixXd a;     // n x R
    double objective = 0.0;
    ConvergenceReport report;
    std::vector<IterationRecord> trace;
};

// ---------------------------------------------------------------------------
// Marquardt trial step (maximization convention)
// ---------------------------------------------------------------------------

struct MarquardtOutcome {
    bool accepted = false;
    bool overflow = false; // max_rejections consecutive rejections
    Eigen::VectorXd x;
    double objective = 0.0;
    double damping = 0.0;
    int rejections = 0;
};

// Solves (-H + lambda * diag(max(-H_jj, floor))) delta = g, accepts the first
// candidate with objective(x + delta) >= fx (damping /10 on acceptance, x10
// per rejection). A zero gradient yields a zero displacement, accepted.
MarquardtOutcome marquardt_step(const ScalarFn& objective, const Eigen::VectorXd& x, double fx,
                                const Eigen::VectorXd& grad, const Eigen::MatrixXd& hess,
                                double damping, const FitOptions& opt);

// ---------------------------------------------------------------------------
// Block-sparse linear solve for the global step
// ---------------------------------------------------------------------------

// Solves (-H + lambda diag(max(-H_jj, floor))) delta = g by eliminating every
// a_i block first (Schur complement on the arrow structure; cost linear in n).
// Returns false when a factorization breaks down or the solution is not finite.
bool solve_damped_block(const BlockHessian& H, const HlGradient& g, double lambda,
                        double damping_floor, HlGradient& delta);

// Factorization-based definiteness check of M (expected positive definite).
bool is_positive_definite(const Eigen::MatrixXd& M, double pivot_tol);

// ---------------------------------------------------------------------------
// Patient-by-patient sweep
// ---------------------------------------------------------------------------

struct SweepState {
    Eigen::VectorXd subject_damping; // persisted across sweeps
    double beta_damping = 1e-2;
};

struct SweepResult {
    double objective = 0.0;        // HL after the sweep
    int overflow_subjects = 0;     // Marquardt overflow, a_i left unchanged
    int fd_failed_subjects = 0;    // derivative failure, a_i left unchanged
    int indefinite_blocks = 0;     // subjects with -C_i not positive definite
    bool beta_indefinite = false;  // -B not positive definite (p > 0 only)
    bool all_definite() const { return indefinite_blocks == 0 && !beta_indefinite; }
};

// One iteration of the decoupled scheme: a single Marquardt step per subject
// in a_i at fixed theta, then alpha_r <- mean_i a_ir (zeroing the analytic
// alpha-gradient), then one Marquardt step in beta at fixed (a, alpha).
SweepResult patient_by_patient_iteration(const SubjectObjective& obj, Eigen::VectorXd& theta,
                                         Eigen::MatrixXd& a, const PenaltyConfig& penalty,
                                         SweepState& state, const FitOptions& opt);

// ---------------------------------------------------------------------------
// Full fits
// ---------------------------------------------------------------------------

// Patient-by-patient sweeps until every -C_i and -B is positive definite,
// then global Marquardt on the assembled block Hessian.
FitResult hybrid_fit(const SubjectObjective& obj, const Eigen::VectorXd& theta0,
                     const PenaltyConfig& penalty, FitOptions opt = {});

// Global Marquardt from iteration 0 (baseline for algorithm comparisons).
FitResult global_fit(const SubjectObjective& obj, const Eigen::VectorXd& theta0,
                     const PenaltyConfig& penalty, FitOptions opt = {});

// Runs opt.algorithm; a0 defaults to zero random effects (rows = alpha).
FitResult fit(const SubjectObjective& obj, const Eigen::VectorXd& theta0,
              const PenaltyConfig& penalty, FitOptions opt = {});
FitResult fit(const SubjectObjective& obj, const Eigen::VectorXd& theta0,
              const Eigen::MatrixXd& a0, const PenaltyConfig& penalty, FitOptions opt = {});

} // namespace hlfit

#endif
