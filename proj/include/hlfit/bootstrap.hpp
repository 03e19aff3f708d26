#ifndef HLFIT_BOOTSTRAP_HPP
#define HLFIT_BOOTSTRAP_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "hlfit/model.hpp"
#include "hlfit/objective.hpp"
#include "hlfit/optimizer.hpp"

namespace hlfit {

// Model adapter used by the parametric bootstrap: simulates a synthetic
// dataset at theta (random effects drawn at the working penalty SDs) and
// wraps it as an objective ready to refit. The adapter owns the design
// (observation times, arms, censoring limits of the original data).
class BootstrapModel {
public:
    virtual ~BootstrapModel() = default;
    virtual std::unique_ptr<SubjectObjective> simulate(const Eigen::VectorXd& theta,
                                                       std::uint64_t seed) const = 0;
};

struct BootstrapResult {
    int S = 0;
    Eigen::MatrixXd estimates; // S x q, NaN rows for non-converged replicates
    std::vector<bool> converged;
    int n_converged = 0;        // effective S used by the bias estimate
    Eigen::VectorXd bias;       // mean(estimates) - theta_hat over converged
    Eigen::VectorXd corrected;  // theta_hat - bias
    Eigen::MatrixXd inflated_covariance; // (1 + 1/S) * covariance, when given
};

// Entrywise variance inflation (1 + 1/S) accounting for the Monte Carlo
// noise added by the correction.
Eigen::MatrixXd inflate_variance(const Eigen::MatrixXd& covariance, int S);

// Parametric-bootstrap bias correction: simulate S datasets at theta_hat,
// refit each from theta_init (the same cold-start policy as the original
// fit), and subtract the average drift. Replicate seeds derive from `seed`
// by index, so the result is reproducible under any worker count.
//
// Throws TooFewConverged when fewer than max(2, S/2) replicates converge.
BootstrapResult bias_correct(const BootstrapModel& model, const Eigen::VectorXd& theta_hat,
                             const Eigen::VectorXd& theta_init, const PenaltyConfig& penalty,
                             int S, std::uint64_t seed, const FitOptions& fit_options,
                             const Eigen::MatrixXd* covariance = nullptr, int workers = 1);

// Reference-model adapter: resimulates on the original dataset's designs
// (times, markers, arms, censoring) with b drawn at the working penalty SDs.
class HivBootstrapModel : public BootstrapModel {
public:
    HivBootstrapModel(std::shared_ptr<const HivModel> model, std::vector<SubjectDesign> designs,
                      Eigen::VectorXd tau)
        : model_(std::move(model)), designs_(std::move(designs)), tau_(std::move(tau)) {}

    std::unique_ptr<SubjectObjective> simulate(const Eigen::VectorXd& theta,
                                               std::uint64_t seed) const override {
        SimulatedDataset sim = model_->simulate_dataset(theta, tau_, designs_, seed);
        return std::make_unique<HivObjective>(model_, std::move(sim.data));
    }

private:
    std::shared_ptr<const HivModel> model_;
    std::vector<SubjectDesign> designs_;
    Eigen::VectorXd tau_;
};

} // namespace hlfit

#endif
