#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "hlfit/config.hpp"
#include "hlfit/errors.hpp"
#include "hlfit/model.hpp"
#include "hlfit/stats.hpp"

using namespace hlfit;

namespace {

std::shared_ptr<const HivModel> reference_model() {
    return std::make_shared<const HivModel>(HivModelConfig::reference());
}

} // namespace

TEST_CASE("layout follows the canonical order") {
    const auto model = reference_model();
    const ThetaLayout& l = model->layout();
    CHECK(l.n_alpha() == 3);
    CHECK(l.n_beta() == 3);
    CHECK(l.names == std::vector<std::string>{"lambda", "mu_Tstar", "pi", "gamma0", "beta1",
                                              "beta2"});
    CHECK(l.index_of("pi") == 2);
    CHECK(l.index_of("mu_V") == -1);
    const Eigen::VectorXd truth = model->theta_true();
    CHECK(truth[0] == doctest::Approx(4.10));
    CHECK(truth[5] == doctest::Approx(-1.40));
}

TEST_CASE("link maps zero transformed values to unit rates") {
    HivModelConfig cfg = HivModelConfig::reference();
    cfg.value = {0, 0, 0, 0, 0, 0, 0, 0};
    const HivModel model(cfg);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(6);
    Eigen::VectorXd a_i = Eigen::VectorXd::Zero(3);
    const HivParameters p = model.natural_params(theta, a_i, 0.0, 0.0, 1.0);
    CHECK(p.lambda == doctest::Approx(1.0));
    CHECK(p.gamma == doctest::Approx(1.0));
    CHECK(p.mu_T == doctest::Approx(1.0));
    CHECK(p.mu_Tstar == doctest::Approx(1.0));
    CHECK(p.pi == doctest::Approx(1.0));
    CHECK(p.mu_V == doctest::Approx(1.0));
}

TEST_CASE("treatment enters gamma only for t >= 0") {
    const auto model = reference_model();
    const Eigen::VectorXd theta = model->theta_true();
    const Eigen::VectorXd a_i = theta.head(3);
    const HivParameters treated = model->natural_params(theta, a_i, 1.0, 0.0, 0.0);
    CHECK(treated.gamma == doctest::Approx(std::exp(-3.00 - 1.10)).epsilon(1e-12));
    const HivParameters untreated = model->natural_params(theta, a_i, 1.0, 0.0, -1.0);
    CHECK(untreated.gamma == doctest::Approx(std::exp(-3.00)).epsilon(1e-12));
}

TEST_CASE("observation transforms") {
    CHECK(observe_transform({0, 0, 1000.0}, 1) == doctest::Approx(3.0));
    CHECK(observe_transform({10.0, 6.0, 1.0}, 2) == doctest::Approx(2.0));
    CHECK(observe_transform({0.0, 81.0, 1.0}, 3) == doctest::Approx(3.0));
    CHECK_THROWS_AS(observe_transform({1.0, 1.0, 0.0}, 1), DomainError);
    CHECK_THROWS_AS(observe_transform({1.0, 1.0, -2.0}, 1), DomainError);
}

TEST_CASE("subject loglik: zero residual, censored at the mean, two residuals") {
    const auto model = reference_model();
    const Eigen::VectorXd theta = model->theta_true();
    const Eigen::VectorXd a_i = theta.head(3);

    SubjectDesign design;
    design.id = 1;
    design.z1 = 1.0;
    design.points = {{0.0, 1}};
    const double phi0 = model->predicted_observations(theta, a_i, design)[0];

    SubjectData subj;
    subj.id = 1;
    subj.z1 = 1.0;

    SUBCASE("zero residual with sigma = 1") {
        HivModelConfig cfg = HivModelConfig::reference();
        cfg.sigma = {1.0, 1.0, 1.0};
        cfg.sigma_sim = cfg.sigma;
        const HivModel m1(cfg);
        subj.records = {{0.0, 1, phi0, false}};
        CHECK(m1.subject_loglik(theta, a_i, subj) ==
              doctest::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-12));
    }

    SUBCASE("record censored exactly at the prediction contributes log(1/2)") {
        HivModelConfig cfg = HivModelConfig::reference();
        cfg.detect_limit = {phi0, std::nan(""), std::nan("")};
        const HivModel m1(cfg);
        subj.records = {{0.0, 1, phi0, true}};
        CHECK(m1.subject_loglik(theta, a_i, subj) == doctest::Approx(std::log(0.5)).epsilon(1e-9));
    }

    SUBCASE("two residuals of 0.5 at sigma 0.5") {
        subj.records = {{0.0, 1, phi0 + 0.5, false}, {0.0, 1, phi0 - 0.5, false}};
        const double expected = -std::log(2 * M_PI * 0.25) - 1.0;
        CHECK(model->subject_loglik(theta, a_i, subj) == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("infeasible parameter point yields -inf") {
    const auto model = reference_model();
    Eigen::VectorXd theta = model->theta_init(); // lambda-tilde 5, gamma0 -5: no equilibrium
    Eigen::VectorXd a_i = theta.head(3);
    SubjectData subj;
    subj.id = 1;
    subj.z1 = 1.0;
    subj.records = {{0.0, 1, 1.0, false}};
    CHECK(model->subject_loglik(theta, a_i, subj) == -std::numeric_limits<double>::infinity());
    CHECK(model->start_margin(theta) < 0.0);
}

TEST_CASE("censored contribution is monotone in the detection limit") {
    const double phi = 1.0, sd = 0.5;
    const double lo = log_normal_cdf((0.2 - phi) / sd);
    const double mid = log_normal_cdf((1.0 - phi) / sd);
    const double hi = log_normal_cdf((5.0 - phi) / sd);
    CHECK(lo < mid);
    CHECK(mid < hi);
    CHECK(hi < 0.0);
    CHECK(hi == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(log_normal_cdf(-1e5) < -1e9); // far tail stays finite but huge
    CHECK(std::isfinite(log_normal_cdf(-1e5)));
}

TEST_CASE("Richardson consistency of directional derivatives") {
    const auto model = reference_model();
    const Eigen::VectorXd theta = model->theta_true();
    const Eigen::VectorXd tau = Eigen::VectorXd::Constant(3, 0.2);
    const auto sim = model->simulate_subject(theta, tau, model->default_designs()[0], 42);

    Eigen::VectorXd dir(6);
    dir << 0.3, -0.2, 0.5, 0.1, -0.4, 0.2;
    dir.normalize();
    const auto value = [&](double t) {
        const Eigen::VectorXd th = theta + t * dir;
        return model->subject_loglik(th, th.head(3) + sim.b, sim.data);
    };
    const double h = 1e-4;
    const double d1 = (value(h) - value(-h)) / (2 * h);
    const double d2 = (value(h / 2) - value(-h / 2)) / h;
    CHECK(std::abs(d1 - d2) / std::max(1.0, std::abs(d2)) < 1e-4);
}

TEST_CASE("simulation is deterministic and respects the design") {
    const auto model = reference_model();
    const Eigen::VectorXd theta = model->theta_true();
    const Eigen::VectorXd tau = Eigen::VectorXd::Constant(3, 0.2);

    const auto d1 = model->simulate_dataset(theta, tau, 123);
    const auto d2 = model->simulate_dataset(theta, tau, 123);
    REQUIRE(d1.data.size() == 100);
    CHECK(d1.b == d2.b);
    for (size_t i = 0; i < d1.data.size(); ++i) {
        REQUIRE(d1.data[i].records.size() == 30); // 10 times x 3 markers
        for (size_t k = 0; k < 30; ++k)
            CHECK(d1.data[i].records[k].value == d2.data[i].records[k].value);
    }
    int m1 = 0;
    for (const auto& rec : d1.data[0].records) m1 += rec.marker == 1;
    CHECK(m1 == 10);
    CHECK(d1.data[0].z1 == 1.0);
    CHECK(d1.data[99].z2 == 1.0);

    const auto d3 = model->simulate_dataset(theta, tau, 124);
    CHECK(d1.data[0].records[0].value != d3.data[0].records[0].value);
}

TEST_CASE("noiseless simulation reproduces the transformed trajectory") {
    HivModelConfig cfg = HivModelConfig::reference();
    cfg.sigma_sim = {0.0, 0.0, 0.0};
    cfg.n_subjects = 2;
    const HivModel model(cfg);
    const Eigen::VectorXd theta = model.theta_true();
    const Eigen::VectorXd tau = Eigen::VectorXd::Zero(3);

    const auto sim = model.simulate_dataset(theta, tau, 5);
    const auto sim2 = model.simulate_dataset(theta, tau, 99);
    const auto designs = model.default_designs();
    for (int i = 0; i < 2; ++i) {
        const auto predicted =
            model.predicted_observations(theta, theta.head(3), designs[static_cast<size_t>(i)]);
        for (size_t k = 0; k < predicted.size(); ++k) {
            CHECK(sim.data[static_cast<size_t>(i)].records[k].value ==
                  doctest::Approx(predicted[k]).epsilon(1e-12));
            // different seeds, same degenerate data
            CHECK(sim.data[static_cast<size_t>(i)].records[k].value ==
                  sim2.data[static_cast<size_t>(i)].records[k].value);
        }
    }
}

TEST_CASE("simulated loglik at the generating point is finite across seeds") {
    HivModelConfig cfg = HivModelConfig::reference();
    cfg.n_subjects = 1;
    const HivModel model(cfg);
    const Eigen::VectorXd theta = model.theta_true();
    const Eigen::VectorXd tau = Eigen::VectorXd::Constant(3, 0.2);
    const auto design = model.default_designs()[0];
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto sim = model.simulate_subject(theta, tau, design, seed);
        const double ll = model.subject_loglik(theta, theta.head(3) + sim.b, sim.data);
        CHECK(std::isfinite(ll));
    }
}

TEST_CASE("censoring marks values below the limit") {
    HivModelConfig cfg = HivModelConfig::reference();
    cfg.detect_limit = {0.5, std::nan(""), std::nan("")}; // log10 viral load floor
    cfg.n_subjects = 4;
    const HivModel model(cfg);
    const Eigen::VectorXd tau = Eigen::VectorXd::Constant(3, 0.2);
    const auto sim = model.simulate_dataset(model.theta_true(), tau, 7);
    int censored = 0;
    for (const auto& subj : sim.data)
        for (const auto& rec : subj.records) {
            if (rec.marker != 1) CHECK(!rec.censored);
            if (rec.censored) {
                CHECK(rec.value == doctest::Approx(0.5));
                ++censored;
            } else if (rec.marker == 1) {
                CHECK(rec.value >= 0.5);
            }
        }
    CHECK(censored > 0); // late viral loads fall below the floor by day 30
}

TEST_CASE("dataset CSV round-trip") {
    HivModelConfig cfg = HivModelConfig::reference();
    cfg.n_subjects = 3;
    const HivModel small(cfg);
    const Eigen::VectorXd tau = Eigen::VectorXd::Constant(3, 0.2);
    const auto sim = small.simulate_dataset(small.theta_true(), tau, 77);

    const std::string path = std::filesystem::temp_directory_path() / "hlfit_test_data.csv";
    write_dataset_csv(sim.data, path);
    const Dataset back = read_dataset_csv(path);
    REQUIRE(back.size() == sim.data.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].id == sim.data[i].id);
        CHECK(back[i].z1 == sim.data[i].z1);
        CHECK(back[i].z2 == sim.data[i].z2);
        REQUIRE(back[i].records.size() == sim.data[i].records.size());
        for (size_t k = 0; k < back[i].records.size(); ++k) {
            CHECK(back[i].records[k].time == sim.data[i].records[k].time);
            CHECK(back[i].records[k].marker == sim.data[i].records[k].marker);
            CHECK(back[i].records[k].value == sim.data[i].records[k].value);
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("config parsing: defaults, overrides and validation") {
    const HivModelConfig def = model_config_from_string("");
    CHECK(def.n_subjects == 100);
    CHECK(def.tau_u == 0.2);
    CHECK(def.times.size() == 10);

    const HivModelConfig c = model_config_from_string(
        "tau_u = 0.3\nn_subjects = 12\nrole.gamma0 = fixed\ntrue.gamma0 = -3\n"
        "markers = 1 2\nsigma_estimated = 1 1 0\ndetect_limit = 1.7 none none\n");
    CHECK(c.tau_u == 0.3);
    CHECK(c.n_subjects == 12);
    CHECK(c.role[kGamma0] == ParamRole::Fixed);
    CHECK(c.detect_limit[0] == doctest::Approx(1.7));
    const HivModel m(c);
    CHECK(m.layout().names == std::vector<std::string>{"lambda", "mu_Tstar", "pi", "beta1",
                                                       "beta2", "sigma1", "sigma2"});

    CHECK_THROWS_WITH_AS(model_config_from_string("tau_u = 0\n"), doctest::Contains("tau_u"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(model_config_from_string("bogus_key = 1\n"),
                         doctest::Contains("bogus_key"), ConfigError);
    CHECK_THROWS_WITH_AS(model_config_from_string("role.beta1 = random\n"),
                         doctest::Contains("role.beta1"), ConfigError);
    CHECK_THROWS_WITH_AS(model_config_from_string("times = 3 1 2\n"), doctest::Contains("times"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(model_config_from_string("sigma_estimated = 1 0 0\nmarkers = 2 3\n"),
                         doctest::Contains("sigma_estimated"), ConfigError);

    // round-trip through the resolved snapshot
    const std::string snapshot = model_config_to_string(c);
    const HivModelConfig c2 = model_config_from_string(snapshot);
    CHECK(c2.tau_u == c.tau_u);
    CHECK(c2.role == c.role);
    CHECK(c2.markers == c.markers);
    CHECK(model_config_to_string(c2) == snapshot);
}

TEST_CASE("active beta reflects arm membership and observed markers") {
    HivModelConfig cfg = HivModelConfig::reference();
    cfg.n_subjects = 2;
    auto model = std::make_shared<const HivModel>(cfg);
    const Eigen::VectorXd tau = Eigen::VectorXd::Constant(3, 0.2);
    auto sim = model->simulate_dataset(model->theta_true(), tau, 3);
    const HivObjective obj(model, sim.data);
    // beta layout: gamma0, beta1, beta2
    CHECK(obj.active_beta(0) == std::vector<int>{0, 1}); // arm 1: beta2 inactive
    CHECK(obj.active_beta(1) == std::vector<int>{0, 2}); // arm 2: beta1 inactive
}

TEST_CASE("repair moves an infeasible start into the feasible region") {
    HivModelConfig cfg = HivModelConfig::reference();
    cfg.n_subjects = 2;
    auto model = std::make_shared<const HivModel>(cfg);
    const Eigen::VectorXd tau = Eigen::VectorXd::Constant(3, 0.2);
    auto sim = model->simulate_dataset(model->theta_true(), tau, 3);
    const HivObjective obj(model, sim.data);

    const Eigen::VectorXd theta0 = model->theta_init();
    REQUIRE(model->start_margin(theta0) < 0.0);
    const Eigen::VectorXd repaired = obj.repair_start(theta0);
    CHECK(model->start_margin(repaired) == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(obj.repair_start(repaired) == repaired); // idempotent once feasible
    CHECK(std::isfinite(obj.loglik(0, repaired.tail(3), repaired.head(3))));
}
