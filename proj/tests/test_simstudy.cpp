#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hlfit/simstudy.hpp"

using namespace hlfit;

namespace {

StudyConfig small_config() {
    StudyConfig c;
    c.model = HivModelConfig::reference();
    c.model.n_subjects = 6;
    c.replicates = 2;
    c.seed = 42;
    return c;
}

ReplicateRecord make_record(int index, const Eigen::VectorXd& est, bool hit) {
    ReplicateRecord r;
    r.index = index;
    r.converged = true;
    r.iterations = 10;
    r.theta_hat = est;
    r.ci_hit.assign(static_cast<size_t>(est.size()), hit ? 1 : 0);
    return r;
}

} // namespace

TEST_CASE("noiseless replicate recovers the truth end to end") {
    StudyConfig c = small_config();
    c.model.n_subjects = 4;
    c.model.sigma_sim = {0.0, 0.0, 0.0};
    c.model.tau_true = {0.0, 0.0, 0.0};
    const ReplicateRecord rec = run_replicate(c, 0);
    REQUIRE(rec.converged);
    const HivModel model(c.model);
    CHECK((rec.theta_hat - model.theta_true()).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(rec.se.size() == 6);
    CHECK(rec.ci_hit.size() == 6);
}

TEST_CASE("replicate records are reproducible byte for byte") {
    const StudyConfig c = small_config();
    const ReplicateRecord a = run_replicate(c, 1);
    const ReplicateRecord b = run_replicate(c, 1);
    REQUIRE(a.converged == b.converged);
    CHECK(a.theta_hat == b.theta_hat); // bitwise
    CHECK(a.se == b.se);
    CHECK(a.ci_hit == b.ci_hit);
    CHECK(a.iterations == b.iterations);

    const ReplicateRecord other = run_replicate(c, 0);
    CHECK(a.theta_hat != other.theta_hat);
}

TEST_CASE("aggregate: degenerate and symmetric cases, RMSE identity") {
    Eigen::VectorXd truth(2);
    truth << 1.0, -2.0;
    const std::vector<std::string> names = {"p1", "p2"};

    SUBCASE("identical records at the truth") {
        std::vector<ReplicateRecord> recs = {make_record(0, truth, true),
                                             make_record(1, truth, true)};
        const auto params = aggregate(recs, truth, names, false);
        CHECK(params[0].bias_uncorr == doctest::Approx(0.0));
        CHECK(params[0].rmse == doctest::Approx(0.0));
        CHECK(params[0].coverage == doctest::Approx(1.0));
        CHECK(params[0].n_converged == 2);
        CHECK(std::isnan(params[0].bias_corr));
    }
    SUBCASE("symmetric errors cancel in the bias but not the RMSE") {
        Eigen::VectorXd up = truth, dn = truth;
        up.array() += 0.3;
        dn.array() -= 0.3;
        std::vector<ReplicateRecord> recs = {make_record(0, up, true), make_record(1, dn, false)};
        const auto params = aggregate(recs, truth, names, false);
        CHECK(params[1].bias_uncorr == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(params[1].rmse == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(params[1].coverage == doctest::Approx(0.5));
    }
    SUBCASE("RMSE^2 = bias^2 + variance over the same records") {
        std::vector<ReplicateRecord> recs;
        for (int k = 0; k < 7; ++k) {
            Eigen::VectorXd est = truth;
            est[0] += 0.05 * k;
            est[1] -= 0.02 * k * k;
            recs.push_back(make_record(k, est, k % 2 == 0));
        }
        const auto params = aggregate(recs, truth, names, false);
        for (int j = 0; j < 2; ++j) {
            double mean = 0.0, var = 0.0;
            for (const auto& r : recs) mean += r.theta_hat[j];
            mean /= 7.0;
            for (const auto& r : recs) var += std::pow(r.theta_hat[j] - mean, 2);
            var /= 7.0;
            const double bias = mean - truth[j];
            CHECK(std::abs(params[static_cast<size_t>(j)].rmse *
                               params[static_cast<size_t>(j)].rmse -
                           (bias * bias + var)) < 1e-10);
        }
    }
    SUBCASE("non-converged records are excluded from the aggregates") {
        std::vector<ReplicateRecord> recs = {make_record(0, truth, true)};
        ReplicateRecord bad;
        bad.index = 1;
        bad.converged = false;
        recs.push_back(bad);
        const auto params = aggregate(recs, truth, names, false);
        CHECK(params[0].n_converged == 1);
        CHECK(params[0].rmse == doctest::Approx(0.0));
    }
}

TEST_CASE("study determinism: seeds, worker counts and append-only records") {
    StudyConfig c = small_config();
    const StudyReport r1 = run_study(c);
    const StudyReport r2 = run_study(c);
    REQUIRE(r1.records.size() == 2);
    for (size_t k = 0; k < 2; ++k)
        CHECK(r1.records[k].theta_hat == r2.records[k].theta_hat);

    SUBCASE("worker count is invisible in the output") {
        c.workers = 2;
        const StudyReport r3 = run_study(c);
        for (size_t k = 0; k < 2; ++k)
            CHECK(r1.records[k].theta_hat == r3.records[k].theta_hat);
    }
    SUBCASE("doubling replicates appends, never rewrites") {
        c.replicates = 3;
        const StudyReport r4 = run_study(c);
        for (size_t k = 0; k < 2; ++k)
            CHECK(r1.records[k].theta_hat == r4.records[k].theta_hat);
    }
    SUBCASE("success statistics cover the configured cap") {
        CHECK(r1.n_converged == 2);
        CHECK(r1.success_rate == doctest::Approx(1.0));
        CHECK(r1.mean_iterations > 0.0);
    }
}

TEST_CASE("bootstrap correction flows into the records") {
    StudyConfig c = small_config();
    c.model.n_subjects = 8;
    c.replicates = 1;
    c.bootstrap_S = 2;
    const StudyReport r = run_study(c);
    REQUIRE(r.records[0].converged);
    CHECK(r.records[0].theta_corrected.size() == 6);
    CHECK(r.records[0].bootstrap_converged == 2);
    CHECK(std::isfinite(r.params[0].bias_corr));
}

TEST_CASE("replicate failures are recorded, never thrown") {
    StudyConfig c = small_config();
    c.replicates = 1;
    c.max_iterations = 1; // guaranteed iteration-limit stop
    const StudyReport r = run_study(c);
    CHECK(!r.records[0].converged);
    CHECK(r.records[0].reason == StopReason::IterationLimit);
    CHECK(r.n_converged == 0);
    CHECK(std::isnan(r.params[0].rmse));
}

TEST_CASE("case presets set the simulation SDs") {
    StudyConfig c = small_config();
    c.apply_case(2);
    CHECK(c.model.tau_true == std::vector<double>{0.1, 0.2, 0.3});
    c.apply_case(1);
    CHECK(c.model.tau_true == std::vector<double>{0.2, 0.2, 0.2});
    CHECK_THROWS(c.apply_case(3));
}

TEST_CASE("report CSV carries the exact column set") {
    StudyConfig c = small_config();
    c.replicates = 1;
    const StudyReport r = run_study(c);
    const std::string path = std::filesystem::temp_directory_path() / "hlfit_study.csv";
    write_study_csv(r, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "parameter,true,mean_est_uncorr,mean_est_corr,bias_uncorr,bias_corr,rmse,coverage,"
          "n_converged");
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 6);
    std::filesystem::remove(path);

    const std::string log_path = std::filesystem::temp_directory_path() / "hlfit_study.log";
    write_replicate_log(r, log_path);
    std::ifstream log(log_path);
    std::getline(log, line);
    CHECK(line.find("replicate=0") == 0);
    CHECK(line.find("converged=") != std::string::npos);
    std::filesystem::remove(log_path);
}
