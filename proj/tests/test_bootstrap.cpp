#include <doctest.h>

#include <cmath>

#include "hlfit/bootstrap.hpp"
#include "hlfit/errors.hpp"
#include "toy_model.hpp"

using namespace hlfit;

namespace {

struct ToySetup {
    toy::ToyData data;
    double sigma = 0.5;
    double tau_u = 0.2;
    Eigen::VectorXd theta_hat;
    PenaltyConfig penalty;
    toy::ToyBootstrapModel boot;

    explicit ToySetup(std::uint64_t seed, int n = 12, int ni = 6, double shift = 0.0)
        : data(toy::simulate(n, ni, 1.0 + shift, 0.2, 0.5, seed)),
          penalty(PenaltyConfig::uniform(0.2, 1)),
          boot(std::vector<int>(static_cast<size_t>(n), ni), 0.5, 0.2) {
        const toy::ToyObjective obj(data, sigma);
        const FitResult res = hybrid_fit(obj, Eigen::VectorXd::Zero(1), penalty);
        REQUIRE(res.report.converged);
        theta_hat = res.theta;
    }
};

} // namespace

TEST_CASE("variance inflation factor (1 + 1/S)") {
    Eigen::MatrixXd cov(2, 2);
    cov << 4.0, 1.0, 1.0, 2.0;
    CHECK(inflate_variance(cov, 20)(0, 0) == doctest::Approx(4.0 * 1.05).epsilon(1e-12));
    CHECK(inflate_variance(cov, 1)(1, 1) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(std::abs(inflate_variance(cov, 1000000000)(0, 0) - 4.0) < 1e-8);
    CHECK_THROWS(inflate_variance(cov, 0));
}

TEST_CASE("degenerate correction: noiseless resimulation returns theta-hat") {
    // tau = 0 draws and sigma = 0 noise make every replicate dataset carry
    // the fitted mean exactly, so the bias estimate collapses.
    const toy::ToyData data = toy::simulate(8, 5, 1.0, 0.0, 0.0, 3);
    const toy::ToyObjective obj(data, 0.5);
    const PenaltyConfig penalty = PenaltyConfig::uniform(0.2, 1);
    const FitResult res = hybrid_fit(obj, Eigen::VectorXd::Zero(1), penalty);
    REQUIRE(res.report.converged);

    const toy::ToyBootstrapModel boot(std::vector<int>(8, 5), 0.5, 0.0, 0.0);
    const BootstrapResult b =
        bias_correct(boot, res.theta, Eigen::VectorXd::Zero(1), penalty, 5, 11, {});
    CHECK(b.n_converged == 5);
    CHECK(std::abs(b.bias[0]) < 1e-6);
    CHECK(std::abs(b.corrected[0] - res.theta[0]) < 1e-6);
}

TEST_CASE("fixed seed reproduces the whole result") {
    ToySetup s(21);
    const BootstrapResult b1 =
        bias_correct(s.boot, s.theta_hat, Eigen::VectorXd::Zero(1), s.penalty, 8, 17, {});
    const BootstrapResult b2 =
        bias_correct(s.boot, s.theta_hat, Eigen::VectorXd::Zero(1), s.penalty, 8, 17, {});
    CHECK(b1.estimates == b2.estimates);
    CHECK(b1.bias == b2.bias);
    CHECK(b1.corrected == b2.corrected);

    const BootstrapResult b3 =
        bias_correct(s.boot, s.theta_hat, Eigen::VectorXd::Zero(1), s.penalty, 8, 18, {});
    CHECK(b1.estimates != b3.estimates);
}

TEST_CASE("worker count does not change the result") {
    ToySetup s(22);
    const BootstrapResult b1 =
        bias_correct(s.boot, s.theta_hat, Eigen::VectorXd::Zero(1), s.penalty, 6, 5, {}, nullptr, 1);
    const BootstrapResult b2 =
        bias_correct(s.boot, s.theta_hat, Eigen::VectorXd::Zero(1), s.penalty, 6, 5, {}, nullptr, 3);
    CHECK(b1.estimates == b2.estimates);
}

TEST_CASE("translation consistency on the affine toy estimator") {
    // Shifting the data by c shifts theta-hat and every bootstrap mean by c,
    // so the estimated bias is shift-invariant.
    ToySetup base(31);
    ToySetup shifted(31, 12, 6, 0.7);
    CHECK(std::abs(shifted.theta_hat[0] - base.theta_hat[0] - 0.7) < 1e-9);

    const BootstrapResult b_base =
        bias_correct(base.boot, base.theta_hat, Eigen::VectorXd::Zero(1), base.penalty, 10, 7, {});
    const BootstrapResult b_shift = bias_correct(shifted.boot, shifted.theta_hat,
                                                 Eigen::VectorXd::Zero(1), shifted.penalty, 10, 7, {});
    // replicate s of the shifted problem uses the same seeds, so the drawn
    // b and noise agree and the refit is exactly translated
    CHECK(std::abs(b_shift.bias[0] - b_base.bias[0]) < 1e-6);
    CHECK(std::abs(b_shift.corrected[0] - b_base.corrected[0] - 0.7) < 1e-6);
}

TEST_CASE("too few converged replicates is an error, not a silent divisor change") {
    ToySetup s(41);
    FitOptions cap;
    cap.max_iterations = 1; // every refit hits the cap
    CHECK_THROWS_AS(bias_correct(s.boot, s.theta_hat, Eigen::VectorXd::Constant(1, -30.0),
                                 s.penalty, 4, 9, cap),
                    TooFewConverged);
}

TEST_CASE("inflated covariance is attached when requested") {
    ToySetup s(51);
    Eigen::MatrixXd cov(1, 1);
    cov << 0.04;
    const BootstrapResult b = bias_correct(s.boot, s.theta_hat, Eigen::VectorXd::Zero(1),
                                           s.penalty, 10, 3, {}, &cov);
    CHECK(b.inflated_covariance(0, 0) == doctest::Approx(0.04 * 1.1).epsilon(1e-12));
    CHECK(b.S == 10);
    CHECK(b.n_converged == 10);
    CHECK(static_cast<int>(b.converged.size()) == 10);
}
