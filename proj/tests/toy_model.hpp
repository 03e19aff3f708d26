#ifndef HLFIT_TESTS_TOY_MODEL_HPP
#define HLFIT_TESTS_TOY_MODEL_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "hlfit/bootstrap.hpp"
#include "hlfit/objective.hpp"

namespace hlfit::toy {

// One-way linear-Gaussian model: Y_ij = theta + b_i + eps_ij with
// b_i ~ N(0, tau*^2) and eps_ij ~ N(0, sigma^2). Everything about the
// penalized fit has a closed form, which makes this the analytic oracle for
// the whole pipeline; it uses a constant "trajectory" (the subject level
// a_i itself), so the generic machinery runs unmodified.
struct ToyData {
    std::vector<Eigen::VectorXd> y;
    int n() const { return static_cast<int>(y.size()); }
};

ToyData simulate(int n_subjects, int n_per_subject, double theta, double tau_star, double sigma,
                 std::uint64_t seed);

class ToyObjective : public SubjectObjective {
public:
    ToyObjective(ToyData data, double sigma) : data_(std::move(data)), sigma_(sigma) {}

    int n_subjects() const override { return data_.n(); }
    int n_random() const override { return 1; }
    int n_beta() const override { return 0; }
    double loglik(int subject, const Eigen::VectorXd& beta,
                  const Eigen::VectorXd& a_i) const override;

    const ToyData& data() const { return data_; }
    double sigma() const { return sigma_; }

private:
    ToyData data_;
    double sigma_;
};

// Closed forms at a given theta under penalty SD tau:
//   b_hat_i  = (n_i tau^2 / (sigma^2 + n_i tau^2)) (ybar_i - theta)
//   u_i      = n_i (ybar_i - theta) / (sigma^2 + n_i tau^2)
//   H_i      = -n_i / (sigma^2 + n_i tau^2)
//   MHLE     = sum_i w_i ybar_i / sum_i w_i,  w_i = n_i/(sigma^2 + n_i tau^2)
// The sandwich pieces are the empirical means of these quantities.
struct ClosedForms {
    Eigen::VectorXd b_hat;
    Eigen::VectorXd score;
    Eigen::VectorXd hessian;
    double mhle = 0.0;
    double bread = 0.0;
    double meat = 0.0;
    double sandwich_var = 0.0; // meat / bread^2 / n
};

ClosedForms closed_forms(const ToyData& data, double theta, double tau, double sigma);

// Marginal maximum-likelihood estimate of theta (GLS weights at tau_star).
double marginal_mle(const ToyData& data, double tau_star, double sigma);

// Bootstrap adapter: resimulates the same design at theta with b drawn at
// the penalty SD tau.
class ToyBootstrapModel : public BootstrapModel {
public:
    // sigma_sim < 0 means "use the fit sigma" for the simulated noise.
    ToyBootstrapModel(std::vector<int> n_per_subject, double sigma, double tau,
                      double sigma_sim = -1.0)
        : n_per_subject_(std::move(n_per_subject)),
          sigma_(sigma),
          tau_(tau),
          sigma_sim_(sigma_sim < 0.0 ? sigma : sigma_sim) {}

    std::unique_ptr<SubjectObjective> simulate(const Eigen::VectorXd& theta,
                                               std::uint64_t seed) const override;

private:
    std::vector<int> n_per_subject_;
    double sigma_;
    double tau_;
    double sigma_sim_;
};

} // namespace hlfit::toy

#endif
