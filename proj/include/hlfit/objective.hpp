#ifndef HLFIT_OBJECTIVE_HPP
#define HLFIT_OBJECTIVE_HPP

#include <Eigen/Dense>
#include <vector>

namespace hlfit {

// Per-subject conditional loglikelihood seen by the fitting machinery.
//
// The fixed-parameter vector theta = [alpha; beta] is split into the R
// entries alpha that carry random effects and the remaining beta block
// (covariate coefficients, other estimated rates, log error SDs). In the
// a_i = alpha + b_i reparameterization the subject loglikelihood depends on
// alpha only through a_i, so the interface takes (beta, a_i) and the alpha
// dependence lives entirely in the quadratic penalty added on top.
class SubjectObjective {
public:
    virtual ~SubjectObjective() = default;

    virtual int n_subjects() const = 0;
    virtual int n_random() const = 0; // R
    virtual int n_beta() const = 0;   // q - R

    // Conditional loglikelihood of subject i; -infinity marks an infeasible
    // parameter point (solver failure, nonexistent equilibrium, domain error).
    virtual double loglik(int subject, const Eigen::VectorXd& beta,
                          const Eigen::VectorXd& a_i) const = 0;

    // Beta coordinates this subject's loglikelihood actually depends on.
    // Derivative entries outside the set are structurally zero and never
    // cost a likelihood evaluation (e.g. the other arm's treatment
    // coefficient). Default: all of them.
    virtual std::vector<int> active_beta(int /*subject*/) const {
        std::vector<int> all(static_cast<size_t>(n_beta()));
        for (size_t b = 0; b < all.size(); ++b) all[b] = static_cast<int>(b);
        return all;
    }

    // Optional deterministic adjustment of an infeasible starting point
    // theta = [alpha; beta]; the default is a no-op.
    virtual Eigen::VectorXd repair_start(const Eigen::VectorXd& theta) const { return theta; }
};

} // namespace hlfit

#endif
