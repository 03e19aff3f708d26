#include "hlfit/simstudy.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>

#include "hlfit/bootstrap.hpp"
#include "hlfit/errors.hpp"
#include "hlfit/inference.hpp"
#include "hlfit/parallel.hpp"
#include "hlfit/rng.hpp"
#include "hlfit/stats.hpp"

namespace hlfit {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
} // namespace

void StudyConfig::apply_case(int case_id) {
    if (case_id == 1) {
        model.tau_true = {0.2, 0.2, 0.2};
    } else if (case_id == 2) {
        model.tau_true = {0.1, 0.2, 0.3};
    } else {
        throw ConfigError("case: expected 1 or 2, got " + std::to_string(case_id));
    }
}

ReplicateRecord run_replicate(const StudyConfig& config, int index) {
    ReplicateRecord rec;
    rec.index = index;

    const std::uint64_t replicate_seed = derive_seed(config.seed, static_cast<std::uint64_t>(index));
    const std::uint64_t data_seed = derive_seed(replicate_seed, 1);
    const std::uint64_t bootstrap_seed = derive_seed(replicate_seed, 2);

    try {
        auto model = std::make_shared<const HivModel>(config.model);
        const Eigen::VectorXd theta_true = model->theta_true();
        const Eigen::VectorXd tau_true =
            Eigen::Map<const Eigen::VectorXd>(config.model.tau_true.data(),
                                              static_cast<Eigen::Index>(config.model.tau_true.size()));

        SimulatedDataset sim = model->simulate_dataset(theta_true, tau_true, data_seed);
        HivObjective objective(model, std::move(sim.data));

        PenaltyConfig penalty;
        penalty.tau = config.model.tau_vector();

        FitOptions fit_opt;
        fit_opt.algorithm = config.algorithm;
        fit_opt.max_iterations = config.max_iterations;

        const FitResult fit_result = fit(objective, model->theta_init(), penalty, fit_opt);
        rec.converged = fit_result.report.converged;
        rec.iterations = fit_result.report.iterations;
        rec.reason = fit_result.report.reason;
        rec.objective = fit_result.objective;
        if (!rec.converged) {
            rec.note = fit_result.report.detail;
            return rec;
        }
        rec.theta_hat = fit_result.theta;

        const SandwichCovariance sw =
            sandwich(objective, fit_result.theta, fit_result.a, penalty);
        Eigen::MatrixXd ci_cov = sw.covariance;
        Eigen::VectorXd center = fit_result.theta;

        if (config.bootstrap_S > 0) {
            std::vector<SubjectDesign> designs;
            for (const auto& subj : objective.data()) designs.push_back(design_from(subj));
            const HivBootstrapModel boot_model(model, std::move(designs), penalty.tau);
            const BootstrapResult boot =
                bias_correct(boot_model, fit_result.theta, model->theta_init(), penalty,
                             config.bootstrap_S, bootstrap_seed, fit_opt, &sw.covariance);
            rec.theta_corrected = boot.corrected;
            rec.bootstrap_converged = boot.n_converged;
            ci_cov = boot.inflated_covariance;
            center = boot.corrected;
        }

        rec.se = ci_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
        const auto cis = confidence_intervals(center, ci_cov, config.ci_level);
        rec.ci_hit.resize(cis.size());
        for (size_t j = 0; j < cis.size(); ++j) {
            const double truth = theta_true[static_cast<Eigen::Index>(j)];
            rec.ci_hit[j] = (truth >= cis[j].lower && truth <= cis[j].upper) ? 1 : 0;
        }
    } catch (const std::exception& e) {
        rec.converged = false;
        rec.note = e.what();
    }
    return rec;
}

std::vector<ParameterSummary> aggregate(const std::vector<ReplicateRecord>& records,
                                        const Eigen::VectorXd& truth,
                                        const std::vector<std::string>& names,
                                        bool corrected_available) {
    const int q = static_cast<int>(truth.size());
    std::vector<ParameterSummary> out(static_cast<size_t>(q));
    for (int j = 0; j < q; ++j) {
        ParameterSummary& s = out[static_cast<size_t>(j)];
        s.name = names[static_cast<size_t>(j)];
        s.truth = truth[j];
        double sum_u = 0.0, sum_c = 0.0, sum_sq = 0.0, hits = 0.0;
        int n = 0;
        for (const auto& rec : records) {
            if (!rec.converged || rec.theta_hat.size() != q) continue;
            ++n;
            sum_u += rec.theta_hat[j];
            const double est =
                corrected_available && rec.theta_corrected.size() == q ? rec.theta_corrected[j]
                                                                       : rec.theta_hat[j];
            if (corrected_available) sum_c += est;
            const double err = est - truth[j];
            sum_sq += err * err;
            hits += (j < static_cast<int>(rec.ci_hit.size())) ? rec.ci_hit[static_cast<size_t>(j)] : 0;
        }
        s.n_converged = n;
        if (n == 0) {
            s.mean_uncorr = s.mean_corr = s.bias_uncorr = s.bias_corr = s.rmse = s.coverage = kNaN;
            continue;
        }
        s.mean_uncorr = sum_u / n;
        s.bias_uncorr = s.mean_uncorr - truth[j];
        s.mean_corr = corrected_available ? sum_c / n : kNaN;
        s.bias_corr = corrected_available ? s.mean_corr - truth[j] : kNaN;
        s.rmse = std::sqrt(sum_sq / n);
        s.coverage = hits / n;
    }
    return out;
}

StudyReport run_study(const StudyConfig& config) {
    config.model.validate();
    StudyReport report;
    report.records.resize(static_cast<size_t>(config.replicates));
    parallel_for(config.replicates, config.workers,
                 [&](int r) { report.records[static_cast<size_t>(r)] = run_replicate(config, r); });

    const HivModel model(config.model);
    double iter_sum = 0.0;
    for (const auto& rec : report.records) {
        if (!rec.converged) continue;
        ++report.n_converged;
        iter_sum += rec.iterations;
    }
    report.success_rate =
        config.replicates > 0 ? static_cast<double>(report.n_converged) / config.replicates : 0.0;
    report.mean_iterations = report.n_converged > 0 ? iter_sum / report.n_converged : kNaN;
    report.params = aggregate(report.records, model.theta_true(), model.layout().names,
                              config.bootstrap_S > 0);
    return report;
}

void write_study_csv(const StudyReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "parameter,true,mean_est_uncorr,mean_est_corr,bias_uncorr,bias_corr,rmse,coverage,"
           "n_converged\n";
    for (const auto& p : report.params)
        out << p.name << ',' << format_double(p.truth) << ',' << format_double(p.mean_uncorr)
            << ',' << format_double(p.mean_corr) << ',' << format_double(p.bias_uncorr) << ','
            << format_double(p.bias_corr) << ',' << format_double(p.rmse) << ','
            << format_double(p.coverage) << ',' << p.n_converged << '\n';
}

void write_replicate_log(const StudyReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    for (const auto& rec : report.records) {
        out << "replicate=" << rec.index << " converged=" << (rec.converged ? 1 : 0)
            << " iterations=" << rec.iterations << " reason=" << to_string(rec.reason)
            << " objective=" << format_double(rec.objective);
        if (rec.theta_hat.size()) {
            out << " theta=";
            for (int j = 0; j < rec.theta_hat.size(); ++j)
                out << (j ? ";" : "") << format_double(rec.theta_hat[j]);
        }
        if (rec.bootstrap_converged > 0) out << " bootstrap_converged=" << rec.bootstrap_converged;
        if (!rec.note.empty()) out << " note=\"" << rec.note << '"';
        out << '\n';
    }
}

} // namespace hlfit
