// Command-line front end: dataset simulation, model fitting, bias correction,
// Wald contrasts and Monte Carlo studies, with a reproducibility manifest
// written next to every output.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hlfit/bootstrap.hpp"
#include "hlfit/config.hpp"
#include "hlfit/errors.hpp"
#include "hlfit/inference.hpp"
#include "hlfit/model.hpp"
#include "hlfit/optimizer.hpp"
#include "hlfit/report.hpp"
#include "hlfit/simstudy.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNonConvergence = 3;
constexpr int kExitNumerical = 4;

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::uint64_t resolve_seed(std::optional<std::uint64_t> seed) {
    if (seed) return *seed;
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::string output_path(const std::string& path, const std::string& out_dir) {
    if (out_dir.empty()) return path;
    const auto slash = path.find_last_of('/');
    const std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    return out_dir + "/" + base;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw hlfit::ConfigError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string config_text;
    std::uint64_t seed = 0;
    std::string out;
};

int run_simulate(const SimulateArgs& args, const std::string& out_dir,
                 bool write_manifest_file) {
    Timer timer;
    const hlfit::HivModelConfig config = hlfit::model_config_from_string(args.config_text);
    const hlfit::HivModel model(config);
    const Eigen::VectorXd tau_true = Eigen::Map<const Eigen::VectorXd>(
        config.tau_true.data(), static_cast<Eigen::Index>(config.tau_true.size()));
    const hlfit::SimulatedDataset sim =
        model.simulate_dataset(model.theta_true(), tau_true, args.seed);

    const std::string data_path = output_path(args.out, out_dir);
    hlfit::write_dataset_csv(sim.data, data_path);

    if (write_manifest_file) {
        hlfit::RunManifest manifest;
        manifest.command = "simulate";
        manifest.seed = args.seed;
        manifest.config_text = hlfit::model_config_to_string(config);
        manifest.options["out"] = args.out;
        manifest.outputs = {args.out};
        manifest.duration_seconds = timer.seconds();
        hlfit::write_manifest(manifest, data_path + ".manifest.json");
    }
    std::cout << "wrote " << sim.data.size() << " subjects to " << data_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitArgs {
    std::string config_text;
    std::string data_path;
    std::string algorithm = "hybrid";
    int max_iter = 150;
    int correct_bias = 0; // bootstrap replicates S; 0 = off
    std::uint64_t seed = 0;
    int workers = 1;
    std::string out;
    std::string plot_data; // optional CSV of observed vs predicted
    bool trace = false;
};

int run_fit(const FitArgs& args, const std::string& out_dir, bool write_manifest_file) {
    Timer timer;
    const hlfit::HivModelConfig config = hlfit::model_config_from_string(args.config_text);
    auto model = std::make_shared<const hlfit::HivModel>(config);
    const hlfit::Dataset data = hlfit::read_dataset_csv(args.data_path);
    hlfit::HivObjective objective(model, data);

    hlfit::PenaltyConfig penalty;
    penalty.tau = config.tau_vector();

    hlfit::FitOptions fit_opt;
    fit_opt.algorithm = hlfit::algorithm_from_string(args.algorithm);
    fit_opt.max_iterations = args.max_iter;
    fit_opt.workers = args.workers;

    const hlfit::FitResult fit_result =
        hlfit::fit(objective, model->theta_init(), penalty, fit_opt);

    const std::string out_prefix = output_path(args.out, out_dir);
    {
        std::ofstream trace_out(out_prefix + "_trace.log");
        for (const auto& it : fit_result.trace) {
            trace_out << "iteration=" << it.iteration << " phase=" << it.phase
                      << " objective=" << it.objective << " damping=" << it.damping
                      << " indefinite_blocks=" << it.indefinite_blocks << '\n';
            if (args.trace)
                std::cerr << "iter " << it.iteration << " [" << it.phase
                          << "] objective=" << it.objective << " damping=" << it.damping
                          << " indefinite=" << it.indefinite_blocks << '\n';
        }
    }

    hlfit::FitReport report;
    report.names = model->layout().names;
    report.theta = fit_result.theta;
    report.objective = fit_result.objective;
    report.convergence = fit_result.report;
    const int R = model->layout().n_alpha();
    report.b_hat = fit_result.a.rowwise() - fit_result.theta.head(R).transpose();
    for (const auto& subj : objective.data()) report.subject_ids.push_back(subj.id);
    for (int r = 0; r < R; ++r)
        report.random_effect_names.push_back(model->layout().names[static_cast<size_t>(r)]);

    int exit_code = kExitOk;
    if (!fit_result.report.converged) {
        exit_code = kExitNonConvergence;
        std::cerr << "fit did not converge: " << to_string(fit_result.report.reason) << " ("
                  << fit_result.report.detail << ")\n";
        report.covariance = Eigen::MatrixXd::Zero(report.theta.size(), report.theta.size());
    } else {
        const hlfit::SandwichCovariance sw =
            hlfit::sandwich(objective, fit_result.theta, fit_result.a, penalty,
                            {1e-8, 50, 1e-2, args.workers});
        report.covariance = sw.covariance;
        report.bread_condition = sw.bread_condition;
        if (!sw.excluded.empty())
            std::cerr << "warning: " << sw.excluded.size()
                      << " subject(s) excluded from the sandwich variance\n";

        if (args.correct_bias > 0) {
            std::vector<hlfit::SubjectDesign> designs;
            for (const auto& subj : objective.data())
                designs.push_back(hlfit::design_from(subj));
            const hlfit::HivBootstrapModel boot_model(model, std::move(designs), penalty.tau);
            const hlfit::BootstrapResult boot = hlfit::bias_correct(
                boot_model, fit_result.theta, model->theta_init(), penalty, args.correct_bias,
                args.seed, fit_opt, &sw.covariance, args.workers);
            report.corrected = boot.corrected;
            report.covariance = boot.inflated_covariance;
            report.bootstrap_S = boot.S;
            report.bootstrap_converged = boot.n_converged;
        }
    }

    hlfit::write_fit_report_json(report, out_prefix + ".json");
    hlfit::write_fit_report_csv(report, out_prefix + ".csv");
    hlfit::write_subject_effects_csv(report, out_prefix + "_subjects.csv");
    {
        std::ofstream txt(out_prefix + ".txt");
        hlfit::write_fit_report_text(report, txt);
    }
    hlfit::write_fit_report_text(report, std::cout);

    if (!args.plot_data.empty() && fit_result.report.converged) {
        const std::string plot_path = output_path(args.plot_data, out_dir);
        std::ofstream plot(plot_path);
        plot << "subject,time,marker,observed,censored,predicted\n";
        for (size_t i = 0; i < objective.data().size(); ++i) {
            const auto& subj = objective.data()[i];
            const auto design = hlfit::design_from(subj);
            const auto predicted = model->predicted_observations(
                fit_result.theta, fit_result.a.row(static_cast<Eigen::Index>(i)).transpose(),
                design);
            for (size_t k = 0; k < subj.records.size(); ++k) {
                const auto& rec = subj.records[k];
                char buf[96];
                std::snprintf(buf, sizeof(buf), "%d,%.17g,%d,%.17g,%d,%.17g\n", subj.id,
                              rec.time, rec.marker, rec.value, rec.censored ? 1 : 0,
                              predicted[k]);
                plot << buf;
            }
        }
    }

    if (write_manifest_file) {
        hlfit::RunManifest manifest;
        manifest.command = "fit";
        manifest.seed = args.seed;
        manifest.config_text = hlfit::model_config_to_string(config);
        manifest.options["data"] = args.data_path;
        manifest.options["algorithm"] = args.algorithm;
        manifest.options["max_iter"] = std::to_string(args.max_iter);
        manifest.options["correct_bias"] = std::to_string(args.correct_bias);
        manifest.options["workers"] = std::to_string(args.workers);
        manifest.options["out"] = args.out;
        manifest.options["plot_data"] = args.plot_data;
        manifest.outputs = {args.out + ".json", args.out + ".csv", args.out + "_subjects.csv",
                            args.out + ".txt", args.out + "_trace.log"};
        if (!args.plot_data.empty()) manifest.outputs.push_back(args.plot_data);
        manifest.duration_seconds = timer.seconds();
        hlfit::write_manifest(manifest, out_prefix + ".manifest.json");
    }
    return exit_code;
}

// ---------------------------------------------------------------------------
// wald
// ---------------------------------------------------------------------------

struct WaldArgs {
    std::string fit_path;
    std::string contrast;
    std::string out; // optional prefix
};

int run_wald(const WaldArgs& args, const std::string& out_dir, bool write_manifest_file) {
    Timer timer;
    const hlfit::FitReport fit = hlfit::read_fit_report_json(args.fit_path);
    const Eigen::VectorXd& center = fit.center();

    const auto index_of = [&](const std::string& name) {
        for (size_t j = 0; j < fit.names.size(); ++j)
            if (fit.names[j] == name) return static_cast<int>(j);
        throw hlfit::ConfigError("contrast: unknown or fixed parameter '" + name +
                                 "' (free parameters: " + [&] {
                                     std::string all;
                                     for (const auto& n : fit.names)
                                         all += (all.empty() ? "" : ", ") + n;
                                     return all;
                                 }() + ")");
    };

    hlfit::WaldResult result;
    const auto dash = args.contrast.find('-');
    if (dash == std::string::npos) {
        Eigen::VectorXd c = Eigen::VectorXd::Zero(center.size());
        c[index_of(args.contrast)] = 1.0;
        result = hlfit::wald_contrast(center, fit.covariance, c);
    } else {
        const std::string lhs = args.contrast.substr(0, dash);
        const std::string rhs = args.contrast.substr(dash + 1);
        const int j_lhs = index_of(lhs);
        const int j_rhs = index_of(rhs);
        if (j_lhs == j_rhs) {
            // Self-contrast: eta is identically zero with zero variance.
            result = {0.0, 0.0, 0.0, 1.0};
        } else {
            Eigen::VectorXd c = Eigen::VectorXd::Zero(center.size());
            c[j_lhs] = 1.0;
            c[j_rhs] = -1.0;
            result = hlfit::wald_contrast(center, fit.covariance, c);
        }
    }

    char line[160];
    std::snprintf(line, sizeof(line),
                  "contrast %s: estimate %.6g, variance %.6g, W %.4g, p %.4g\n",
                  args.contrast.c_str(), result.estimate, result.variance, result.statistic,
                  result.p_value);
    std::cout << line;

    if (!args.out.empty()) {
        nlohmann::json j;
        j["contrast"] = args.contrast;
        j["estimate"] = result.estimate;
        j["variance"] = result.variance;
        j["W"] = result.statistic;
        j["p_value"] = result.p_value;
        const std::string out_prefix = output_path(args.out, out_dir);
        std::ofstream out(out_prefix + ".json");
        out << j.dump(2) << '\n';
        if (write_manifest_file) {
            hlfit::RunManifest manifest;
            manifest.command = "wald";
            manifest.options["fit"] = args.fit_path;
            manifest.options["contrast"] = args.contrast;
            manifest.options["out"] = args.out;
            manifest.outputs = {args.out + ".json"};
            manifest.duration_seconds = timer.seconds();
            hlfit::write_manifest(manifest, out_prefix + ".manifest.json");
        }
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// simstudy
// ---------------------------------------------------------------------------

struct StudyArgs {
    std::string config_text;
    int replicates = 50;
    std::vector<double> tau_u_grid; // empty: use config tau_u
    int case_id = 0;                // 0: use config tau_true
    std::string algorithm = "hybrid";
    int bootstrap_S = 0;
    bool paper_scale = false;
    std::uint64_t seed = 0;
    int workers = 1;
    int max_iter = 150;
    std::string out;
};

std::string tau_label(double tau) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", tau);
    return buf;
}

int run_simstudy(const StudyArgs& args, const std::string& out_dir, bool write_manifest_file) {
    Timer timer;
    hlfit::StudyConfig study;
    study.model = hlfit::model_config_from_string(args.config_text);
    study.replicates = args.paper_scale ? 500 : args.replicates;
    study.algorithm = hlfit::algorithm_from_string(args.algorithm);
    study.bootstrap_S = args.bootstrap_S;
    study.max_iterations = args.max_iter;
    study.seed = args.seed;
    study.workers = args.workers;
    if (args.case_id != 0) study.apply_case(args.case_id);

    std::vector<double> grid = args.tau_u_grid;
    if (grid.empty()) grid.push_back(study.model.tau_u);

    std::vector<std::string> outputs;
    const std::string out_prefix = output_path(args.out, out_dir);
    std::ostringstream summary;
    for (double tau_u : grid) {
        study.model.tau_u = tau_u;
        study.model.tau_per_effect.clear();
        const hlfit::StudyReport report = hlfit::run_study(study);

        const std::string label = "_tau" + tau_label(tau_u);
        hlfit::write_study_csv(report, out_prefix + label + ".csv");
        hlfit::write_replicate_log(report, out_prefix + label + "_replicates.log");
        outputs.push_back(args.out + label + ".csv");
        outputs.push_back(args.out + label + "_replicates.log");

        summary << "tau_u = " << tau_label(tau_u) << ": " << report.n_converged << "/"
                << study.replicates << " converged (" << 100.0 * report.success_rate
                << "%), mean iterations " << report.mean_iterations << "\n";
        for (const auto& p : report.params) {
            char buf[200];
            std::snprintf(buf, sizeof(buf),
                          "  %-9s true %8.4g  bias %9.3g  bias_corr %9.3g  rmse %9.3g  "
                          "coverage %5.3g\n",
                          p.name.c_str(), p.truth, p.bias_uncorr, p.bias_corr, p.rmse,
                          p.coverage);
            summary << buf;
        }
    }
    std::cout << summary.str();
    {
        std::ofstream txt(out_prefix + "_summary.txt");
        txt << summary.str();
        outputs.push_back(args.out + "_summary.txt");
    }

    if (write_manifest_file) {
        hlfit::RunManifest manifest;
        manifest.command = "simstudy";
        manifest.seed = args.seed;
        manifest.config_text = hlfit::model_config_to_string(study.model);
        manifest.options["replicates"] = std::to_string(study.replicates);
        manifest.options["algorithm"] = args.algorithm;
        manifest.options["bootstrap_S"] = std::to_string(args.bootstrap_S);
        manifest.options["case"] = std::to_string(args.case_id);
        manifest.options["max_iter"] = std::to_string(args.max_iter);
        manifest.options["workers"] = std::to_string(args.workers);
        manifest.options["out"] = args.out;
        {
            std::ostringstream grid_ss;
            for (size_t i = 0; i < grid.size(); ++i) grid_ss << (i ? "," : "") << grid[i];
            manifest.options["tau_u"] = grid_ss.str();
        }
        manifest.outputs = outputs;
        manifest.duration_seconds = timer.seconds();
        hlfit::write_manifest(manifest, out_prefix + ".manifest.json");
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// rerun
// ---------------------------------------------------------------------------

int run_rerun(const std::string& manifest_path, const std::string& out_dir) {
    const hlfit::RunManifest m = hlfit::read_manifest(manifest_path);
    const auto opt = [&](const std::string& key, const std::string& fallback = "") {
        const auto it = m.options.find(key);
        return it == m.options.end() ? fallback : it->second;
    };
    if (m.command == "simulate") {
        SimulateArgs args{m.config_text, m.seed, opt("out")};
        return run_simulate(args, out_dir, /*write_manifest_file=*/false);
    }
    if (m.command == "fit") {
        FitArgs args;
        args.config_text = m.config_text;
        args.data_path = opt("data");
        args.algorithm = opt("algorithm", "hybrid");
        args.max_iter = std::stoi(opt("max_iter", "150"));
        args.correct_bias = std::stoi(opt("correct_bias", "0"));
        args.seed = m.seed;
        args.workers = std::stoi(opt("workers", "1"));
        args.out = opt("out");
        args.plot_data = opt("plot_data");
        return run_fit(args, out_dir, false);
    }
    if (m.command == "wald") {
        WaldArgs args{opt("fit"), opt("contrast"), opt("out")};
        return run_wald(args, out_dir, false);
    }
    if (m.command == "simstudy") {
        StudyArgs args;
        args.config_text = m.config_text;
        args.replicates = std::stoi(opt("replicates", "50"));
        args.algorithm = opt("algorithm", "hybrid");
        args.bootstrap_S = std::stoi(opt("bootstrap_S", "0"));
        args.case_id = std::stoi(opt("case", "0"));
        args.max_iter = std::stoi(opt("max_iter", "150"));
        args.seed = m.seed;
        args.workers = std::stoi(opt("workers", "1"));
        args.out = opt("out");
        std::istringstream grid_ss(opt("tau_u"));
        std::string tok;
        while (std::getline(grid_ss, tok, ',')) args.tau_u_grid.push_back(std::stod(tok));
        return run_simstudy(args, out_dir, false);
    }
    throw hlfit::ConfigError("manifest: unknown command '" + m.command + "'");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hlfit: hierarchical-likelihood estimation for mixed-effects ODE models"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed_flag;
    std::string config_path, out, data_path, algorithm = "hybrid", contrast, fit_path;
    std::string plot_data, manifest_path, out_dir;
    std::string tau_u_list;
    int max_iter = 150, correct_bias = 0, workers = 1, replicates = 50, bootstrap_S = 0,
        case_id = 0;
    bool paper_scale = false, trace = false;

    auto* sim = app.add_subcommand("simulate", "simulate a dataset from the model config");
    sim->add_option("--config", config_path, "model configuration file")->required();
    sim->add_option("--seed", seed_flag, "master seed (generated when omitted)");
    sim->add_option("--out", out, "output dataset CSV path")->required();

    auto* fit_cmd = app.add_subcommand("fit", "fit the model to a dataset");
    fit_cmd->add_option("--config", config_path, "model configuration file")->required();
    fit_cmd->add_option("--data", data_path, "dataset CSV")->required();
    fit_cmd->add_option("--algorithm", algorithm, "hybrid | global | patient");
    fit_cmd->add_option("--max-iter", max_iter, "iteration cap");
    fit_cmd->add_option("--correct-bias", correct_bias, "bootstrap replicates S (0 = off)");
    fit_cmd->add_option("--seed", seed_flag, "bootstrap seed");
    fit_cmd->add_option("--workers", workers, "worker threads");
    fit_cmd->add_option("--out", out, "output prefix")->required();
    fit_cmd->add_option("--plot-data", plot_data, "write observed-vs-predicted CSV");
    fit_cmd->add_flag("--trace", trace, "print the iteration trace");

    auto* wald = app.add_subcommand("wald", "Wald test of a contrast from a fit report");
    wald->add_option("--fit", fit_path, "fit report JSON")->required();
    wald->add_option("--contrast", contrast, "parameter or difference, e.g. beta2-beta1")
        ->required();
    wald->add_option("--out", out, "output prefix (optional)");

    auto* study = app.add_subcommand("simstudy", "Monte Carlo study of the estimator");
    study->add_option("--config", config_path, "model configuration file")->required();
    study->add_option("--replicates", replicates, "number of replicates");
    study->add_option("--tau-u", tau_u_list, "comma-separated penalty grid, e.g. 0.1,0.2,0.3");
    study->add_option("--case", case_id, "tau* preset: 1 or 2");
    study->add_option("--algorithm", algorithm, "hybrid | global | patient");
    study->add_option("--bootstrap-S", bootstrap_S, "bias-correction replicates (0 = off)");
    study->add_option("--max-iter", max_iter, "iteration cap");
    study->add_flag("--paper-scale", paper_scale, "run 500 replicates");
    study->add_option("--seed", seed_flag, "master seed (generated when omitted)");
    study->add_option("--workers", workers, "worker threads");
    study->add_option("--out", out, "output prefix")->required();

    auto* rerun = app.add_subcommand("rerun", "re-execute a run from its manifest");
    rerun->add_option("manifest", manifest_path, "manifest JSON")->required();
    rerun->add_option("--out-dir", out_dir, "redirect outputs into this directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (sim->parsed()) {
            SimulateArgs args{read_text_file(config_path), resolve_seed(seed_flag), out};
            return run_simulate(args, "", true);
        }
        if (fit_cmd->parsed()) {
            FitArgs args;
            args.config_text = read_text_file(config_path);
            args.data_path = data_path;
            args.algorithm = algorithm;
            args.max_iter = max_iter;
            args.correct_bias = correct_bias;
            args.seed = resolve_seed(seed_flag);
            args.workers = workers;
            args.out = out;
            args.plot_data = plot_data;
            args.trace = trace;
            return run_fit(args, "", true);
        }
        if (wald->parsed()) {
            WaldArgs args{fit_path, contrast, out};
            return run_wald(args, "", true);
        }
        if (study->parsed()) {
            StudyArgs args;
            args.config_text = read_text_file(config_path);
            args.replicates = replicates;
            if (!tau_u_list.empty()) {
                std::istringstream ss(tau_u_list);
                std::string tok;
                while (std::getline(ss, tok, ',')) args.tau_u_grid.push_back(std::stod(tok));
            }
            args.case_id = case_id;
            args.algorithm = algorithm;
            args.bootstrap_S = bootstrap_S;
            args.paper_scale = paper_scale;
            args.seed = resolve_seed(seed_flag);
            args.workers = workers;
            args.max_iter = max_iter;
            args.out = out;
            return run_simstudy(args, "", true);
        }
        if (rerun->parsed()) return run_rerun(manifest_path, out_dir);
    } catch (const hlfit::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitUsage;
}
