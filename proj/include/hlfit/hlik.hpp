#ifndef HLFIT_HLIK_HPP
#define HLFIT_HLIK_HPP

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "hlfit/objective.hpp"

namespace hlfit {

// ---------------------------------------------------------------------------
// Penalty
// ---------------------------------------------------------------------------

// Quadratic penalty -(a_r - alpha_r)^2 / (2 tau_r^2) applied per random
// effect; the normal-density log-constant is dropped (tau is held fixed
// during optimization, so it never moves an argmax or a derivative).
struct PenaltyConfig {
    Eigen::VectorXd tau; // per-effect SD bound, size R

    static PenaltyConfig uniform(double tau_u, int R) {
        PenaltyConfig c;
        c.tau = Eigen::VectorXd::Constant(R, tau_u);
        return c;
    }
    Eigen::VectorXd inv_tau_sq() const { return tau.array().square().inverse(); }
};

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Step policies: cube root of machine epsilon for first differences, fourth
// root for second differences, scaled by max(|x|, 0.1).
double fd_gradient_step(double x);
double fd_hessian_step(double x);

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

struct FdResult {
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    double f0 = 0.0; // function value at the expansion point
    long evals = 0;
    int second_entries = 0; // distinct second-derivative stencils computed
};

// Central-difference gradient. Infeasible stencil points trigger step
// halving (up to 4 times per coordinate) and then FiniteDifferenceFailure.
Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x, long* evals = nullptr);

// Gradient plus symmetric Hessian: 3-point diagonal and 4-point off-diagonal
// stencils. f(x) must be finite.
FdResult fd_gradient_hessian(const ScalarFn& f, const Eigen::VectorXd& x);

// Restricted variants: derivatives are taken only along `coords`; all other
// entries of the (full-size) gradient/Hessian are structural zeros.
Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x,
                            const std::vector<int>& coords, long* evals = nullptr);
FdResult fd_gradient_hessian(const ScalarFn& f, const Eigen::VectorXd& x,
                             const std::vector<int>& coords);

// ---------------------------------------------------------------------------
// h-loglikelihood values
// ---------------------------------------------------------------------------

// hl_i = l_i(beta, a_i) - sum_r (a_ir - alpha_r)^2 / (2 tau_r^2)
double hl_subject(const SubjectObjective& obj, int subject, const Eigen::VectorXd& theta,
                  const Eigen::VectorXd& a_i, const PenaltyConfig& penalty);

// HL = (1/n) sum_i hl_i; -infinity if any subject is infeasible.
double hl_total(const SubjectObjective& obj, const Eigen::VectorXd& theta,
                const Eigen::MatrixXd& a, const PenaltyConfig& penalty);

// Analytic alpha-gradient of HL: (1/n) sum_i (a_ir - alpha_r) / tau_r^2.
Eigen::VectorXd grad_alpha(const Eigen::VectorXd& theta, const Eigen::MatrixXd& a,
                           const PenaltyConfig& penalty);

// ---------------------------------------------------------------------------
// Per-subject derivative blocks and assembly
// ---------------------------------------------------------------------------

// Numeric derivatives of the subject loglikelihood l_i in the joint
// coordinates v = (a_i, beta); penalty terms are added analytically by the
// assembly step.
struct SubjectDerivatives {
    Eigen::VectorXd grad; // size R+p
    Eigen::MatrixXd hess; // (R+p) x (R+p)
    double loglik = 0.0;  // l_i at the expansion point
    long evals = 0;
    int second_entries_aa = 0;    // R(R+1)/2
    int second_entries_cross = 0; // p*R
    int second_entries_bb = 0;    // p(p+1)/2
};

SubjectDerivatives subject_derivatives(const SubjectObjective& obj, int subject,
                                       const Eigen::VectorXd& beta, const Eigen::VectorXd& a_i);

// Assembled block Hessian of HL in (alpha, beta, a_1..a_n), normalized by
// 1/n, with the arrow sparsity: cross-subject blocks are identically zero.
struct BlockHessian {
    int n = 0, R = 0, p = 0;
    Eigen::VectorXd A_diag;          // d2HL/dalpha2 = -1/tau^2 (diagonal)
    Eigen::VectorXd D_diag;          // d2HL/dalpha da_i = 1/(n tau^2) (diagonal)
    Eigen::MatrixXd B;               // d2HL/dbeta2 = (1/n) sum l_bb
    std::vector<Eigen::MatrixXd> Bi; // d2HL/dbeta da_i = (1/n) l_ba, p x R
    std::vector<Eigen::MatrixXd> Ci; // d2HL/da_i^2 = (1/n)(l_aa - diag(1/tau^2))

    int q() const { return R + p; }
    int dim() const { return q() + n * R; }
    Eigen::MatrixXd dense() const; // test/oracle use
};

struct HlGradient {
    Eigen::VectorXd alpha; // Eq.-(4)-style analytic block
    Eigen::VectorXd beta;  // (1/n) sum l_beta
    Eigen::MatrixXd a;     // n x R rows: (1/n)(l_a - penalty')

    Eigen::VectorXd flat() const;
    double max_norm() const;
};

BlockHessian assemble(const std::vector<SubjectDerivatives>& blocks,
                      const PenaltyConfig& penalty, int n);

HlGradient assemble_gradient(const std::vector<SubjectDerivatives>& blocks,
                             const Eigen::VectorXd& theta, const Eigen::MatrixXd& a,
                             const PenaltyConfig& penalty);

} // namespace hlfit

#endif
