#include <doctest.h>

#include <cmath>
#include <random>

#include "hlfit/hiv.hpp"
#include "hlfit/ode.hpp"

using namespace hlfit;

namespace {

OdeSystem exp_decay() {
    OdeSystem sys;
    sys.dimension = 1;
    sys.rhs = [](const Eigen::VectorXd& x, const Eigen::VectorXd&, double,
                 Eigen::VectorXd& dxdt) { dxdt[0] = -x[0]; };
    sys.initial = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Ones(1); };
    return sys;
}

HivParameters table2_params() {
    // lambda, gamma, mu_T, mu_Tstar, pi, mu_V on the natural scale
    return {std::exp(4.10), std::exp(-3.00), std::exp(-2.20),
            std::exp(-1.60), std::exp(-0.170), std::exp(3.40)};
}

} // namespace

TEST_CASE("exp decay reaches e^-1 at t=1") {
    const auto sys = exp_decay();
    const auto traj = integrate(sys, Eigen::VectorXd(0), Eigen::VectorXd::Ones(1), {0.0, 1.0});
    CHECK(traj.states(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(traj.states(1, 0) - std::exp(-1.0)) < 1e-8);
}

TEST_CASE("dense output lands on the analytic solution at interior times") {
    const auto sys = exp_decay();
    std::vector<double> times;
    for (int k = 0; k <= 40; ++k) times.push_back(0.05 * k);
    const auto traj = integrate(sys, Eigen::VectorXd(0), Eigen::VectorXd::Ones(1), times);
    for (size_t k = 0; k < times.size(); ++k)
        CHECK(std::abs(traj.states(static_cast<Eigen::Index>(k), 0) - std::exp(-times[k])) <
              1e-8);
}

TEST_CASE("hiv_rhs at the origin keeps only production") {
    HivParameters p{1.0, 0.5, 0.3, 0.2, 0.8, 3.0};
    const Eigen::Vector3d d = hiv_rhs(Eigen::Vector3d::Zero(), p);
    CHECK(d[0] == doctest::Approx(1.0));
    CHECK(d[1] == doctest::Approx(0.0));
    CHECK(d[2] == doctest::Approx(0.0));
}

TEST_CASE("hiv_rhs hand-computed value") {
    HivParameters p{60.0, 0.05, 0.1, 0.2, 0.8, 30.0};
    const Eigen::Vector3d d = hiv_rhs({100.0, 10.0, 50.0}, p);
    CHECK(d[0] == doctest::Approx(-200.0));
    CHECK(d[1] == doctest::Approx(248.0));
    CHECK(d[2] == doctest::Approx(-1492.0));
}

TEST_CASE("equilibrium closed form and fixed-point residual") {
    const HivParameters p = table2_params();
    const Eigen::Vector3d eq = hiv_equilibrium(p);
    CHECK(eq[0] == doctest::Approx(std::exp(3.40 - 1.60 + 3.00 + 0.170)).epsilon(1e-12));
    CHECK(hiv_rhs(eq, p).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("equilibrium requires sufficient production") {
    HivParameters p = table2_params();
    p.lambda = 1e-3; // below mu_T * T0
    CHECK_THROWS_AS(hiv_equilibrium(p), NoInfectedEquilibrium);
    CHECK(hiv_equilibrium_margin(p) < 0.0);
}

TEST_CASE("equilibrium residual stays tiny under random perturbations") {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    int checked = 0;
    while (checked < 200) {
        HivParameters p{std::exp(4.10 + u(gen)),  std::exp(-3.00 + u(gen)),
                        std::exp(-2.20 + u(gen)), std::exp(-1.60 + u(gen)),
                        std::exp(-0.170 + u(gen)), std::exp(3.40 + u(gen))};
        if (!(hiv_equilibrium_margin(p) > 0.0)) continue;
        const Eigen::Vector3d eq = hiv_equilibrium(p);
        CHECK(hiv_rhs(eq, p).cwiseAbs().maxCoeff() < 1e-10);
        ++checked;
    }
}

TEST_CASE("untreated trajectory stays at the equilibrium for 30 days") {
    const HivParameters p = table2_params();
    const Eigen::Vector3d eq = hiv_equilibrium(p);
    std::vector<double> times = {0, 3, 6, 9, 12, 15, 18, 21, 24, 30};
    Eigen::MatrixXd states(static_cast<Eigen::Index>(times.size()), 3);
    integrate_dense<Eigen::Vector3d>(HivRhs{p}, eq, 0.0, times, {}, states);
    for (Eigen::Index r = 0; r < states.rows(); ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(states(r, c) - eq[c]) / eq[c] < 1e-6);
}

TEST_CASE("treatment reduces viral load over the first days") {
    HivParameters p = table2_params();
    const Eigen::Vector3d eq = hiv_equilibrium(p);
    p.gamma *= std::exp(-1.40); // arm-2 effect applied from t = 0
    std::vector<double> times;
    for (int k = 0; k <= 30; ++k) times.push_back(0.1 * k);
    Eigen::MatrixXd states(static_cast<Eigen::Index>(times.size()), 3);
    integrate_dense<Eigen::Vector3d>(HivRhs{p}, eq, 0.0, times, {}, states);
    for (Eigen::Index r = 1; r < states.rows(); ++r) CHECK(states(r, 2) < states(r - 1, 2));
}

TEST_CASE("states remain nonnegative from nonnegative starts") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    std::vector<double> times = {0, 1, 2, 5, 10, 20, 30};
    for (int rep = 0; rep < 20; ++rep) {
        HivParameters p{std::exp(4.10 + u(gen)),  std::exp(-3.00 + u(gen) - 1.0),
                        std::exp(-2.20 + u(gen)), std::exp(-1.60 + u(gen)),
                        std::exp(-0.170 + u(gen)), std::exp(3.40 + u(gen))};
        const Eigen::Vector3d x0{200.0 + 100.0 * u(gen), 30.0 + 20.0 * u(gen),
                                 5.0 + 4.0 * u(gen)};
        Eigen::MatrixXd states(static_cast<Eigen::Index>(times.size()), 3);
        integrate_dense<Eigen::Vector3d>(HivRhs{p}, x0, 0.0, times, {}, states);
        CHECK(states.minCoeff() > -1e-9);
    }
}

TEST_CASE("halving the tolerances moves states by less than the coarser tolerance") {
    const HivParameters p = table2_params();
    const Eigen::Vector3d eq = hiv_equilibrium(p);
    HivParameters treated = p;
    treated.gamma *= std::exp(-1.10);
    std::vector<double> times = {0, 3, 6, 9, 12, 15, 18, 21, 24, 30};
    Eigen::MatrixXd coarse(static_cast<Eigen::Index>(times.size()), 3);
    Eigen::MatrixXd fine(static_cast<Eigen::Index>(times.size()), 3);
    IntegratorTolerances tol_coarse{1e-8, 1e-10};
    IntegratorTolerances tol_fine{0.5e-8, 0.5e-10};
    integrate_dense<Eigen::Vector3d>(HivRhs{treated}, eq, 0.0, times, tol_coarse, coarse);
    integrate_dense<Eigen::Vector3d>(HivRhs{treated}, eq, 0.0, times, tol_fine, fine);
    for (Eigen::Index r = 0; r < coarse.rows(); ++r)
        for (int c = 0; c < 3; ++c) {
            const double scale = std::max(1.0, std::abs(coarse(r, c)));
            CHECK(std::abs(coarse(r, c) - fine(r, c)) / scale < 1e-8);
        }
}

TEST_CASE("finite-time blow-up raises StepSizeUnderflow") {
    OdeSystem sys;
    sys.dimension = 1;
    sys.rhs = [](const Eigen::VectorXd& x, const Eigen::VectorXd&, double,
                 Eigen::VectorXd& dxdt) { dxdt[0] = x[0] * x[0]; };
    CHECK_THROWS_AS(integrate(sys, Eigen::VectorXd(0), Eigen::VectorXd::Ones(1), {0.0, 2.0}),
                    StepSizeUnderflow);
}

TEST_CASE("scalar specialization agrees with the generic stepper") {
    std::mt19937_64 gen(23);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    std::vector<double> times = {0, 1.5, 3, 6, 9, 12, 15, 18, 21, 24, 27.5, 30};
    for (int rep = 0; rep < 25; ++rep) {
        HivParameters p{std::exp(4.10 + u(gen)),   std::exp(-3.00 + u(gen) - 1.2),
                        std::exp(-2.20 + u(gen)),  std::exp(-1.60 + u(gen)),
                        std::exp(-0.170 + u(gen)), std::exp(3.40 + u(gen))};
        HivParameters untreated = p;
        untreated.gamma *= std::exp(1.2);
        if (!(hiv_equilibrium_margin(untreated) > 0.0)) continue;
        const Eigen::Vector3d eq = hiv_equilibrium(untreated);
        Eigen::MatrixXd generic(static_cast<Eigen::Index>(times.size()), 3);
        Eigen::MatrixXd scalar(static_cast<Eigen::Index>(times.size()), 3);
        integrate_dense<Eigen::Vector3d>(HivRhs{p}, eq, 0.0, times, {}, generic);
        hiv_integrate(p, eq, times, {}, scalar);
        for (Eigen::Index r = 0; r < generic.rows(); ++r)
            for (int c = 0; c < 3; ++c) {
                const double scale = std::max(1.0, std::abs(generic(r, c)));
                CHECK(std::abs(generic(r, c) - scalar(r, c)) < 1e-12 * scale);
            }
    }
}

TEST_CASE("integrate validates its inputs") {
    const auto sys = exp_decay();
    CHECK_THROWS(integrate(sys, Eigen::VectorXd(0), Eigen::VectorXd::Ones(1), {1.0, 0.5}));
    CHECK_THROWS(integrate(sys, Eigen::VectorXd(0), Eigen::VectorXd::Ones(1), {-1.0, 0.5}));
    CHECK_THROWS(
        integrate(sys, Eigen::VectorXd(0), Eigen::VectorXd::Ones(1), {0.0, 1.0}, {0.0, 1e-10}));
}
