#include "hlfit/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "hlfit/errors.hpp"
#include "hlfit/inference.hpp"

namespace hlfit {

using nlohmann::json;

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

json mat_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i).transpose()));
    return rows;
}

Eigen::MatrixXd mat_from_json(const json& rows) {
    const Eigen::Index nr = static_cast<Eigen::Index>(rows.size());
    if (nr == 0) return Eigen::MatrixXd(0, 0);
    const Eigen::Index nc = static_cast<Eigen::Index>(rows[0].size());
    Eigen::MatrixXd m(nr, nc);
    for (Eigen::Index i = 0; i < nr; ++i)
        m.row(i) = vec_from_json(rows[static_cast<size_t>(i)]).transpose();
    return m;
}

} // namespace

void write_fit_report_json(const FitReport& r, const std::string& path) {
    json j;
    j["names"] = r.names;
    j["theta"] = vec_to_json(r.theta);
    j["corrected"] = vec_to_json(r.corrected);
    j["covariance"] = mat_to_json(r.covariance);
    j["ci_level"] = r.ci_level;
    j["bread_condition"] = r.bread_condition;
    j["bootstrap_S"] = r.bootstrap_S;
    j["bootstrap_converged"] = r.bootstrap_converged;
    j["subject_ids"] = r.subject_ids;
    j["b_hat"] = mat_to_json(r.b_hat);
    j["random_effect_names"] = r.random_effect_names;
    j["objective"] = r.objective;
    j["convergence"] = {{"converged", r.convergence.converged},
                        {"iterations", r.convergence.iterations},
                        {"objective", r.convergence.objective},
                        {"grad_max_norm", r.convergence.grad_max_norm},
                        {"reason", to_string(r.convergence.reason)},
                        {"detail", r.convergence.detail}};
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

FitReport read_fit_report_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open fit report: " + path);
    json j;
    in >> j;
    FitReport r;
    r.names = j.at("names").get<std::vector<std::string>>();
    r.theta = vec_from_json(j.at("theta"));
    r.corrected = vec_from_json(j.at("corrected"));
    r.covariance = mat_from_json(j.at("covariance"));
    r.ci_level = j.at("ci_level").get<double>();
    r.bread_condition = j.at("bread_condition").get<double>();
    r.bootstrap_S = j.at("bootstrap_S").get<int>();
    r.bootstrap_converged = j.at("bootstrap_converged").get<int>();
    r.subject_ids = j.at("subject_ids").get<std::vector<int>>();
    r.b_hat = mat_from_json(j.at("b_hat"));
    r.random_effect_names = j.at("random_effect_names").get<std::vector<std::string>>();
    r.objective = j.at("objective").get<double>();
    const auto& c = j.at("convergence");
    r.convergence.converged = c.at("converged").get<bool>();
    r.convergence.iterations = c.at("iterations").get<int>();
    r.convergence.objective = c.at("objective").get<double>();
    r.convergence.grad_max_norm = c.at("grad_max_norm").get<double>();
    r.convergence.detail = c.at("detail").get<std::string>();
    const std::string reason = c.at("reason").get<std::string>();
    if (reason == "converged") r.convergence.reason = StopReason::Converged;
    else if (reason == "damping-overflow") r.convergence.reason = StopReason::DampingOverflow;
    else if (reason == "derivative-failure") r.convergence.reason = StopReason::DerivativeFailure;
    else if (reason == "infeasible-start") r.convergence.reason = StopReason::InfeasibleStart;
    else r.convergence.reason = StopReason::IterationLimit;
    return r;
}

void write_fit_report_csv(const FitReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    const auto cis = confidence_intervals(r.center(), r.covariance, r.ci_level);
    out << "parameter,estimate,corrected,se,ci_low,ci_high,nat_estimate,nat_ci_low,nat_ci_high\n";
    for (size_t j = 0; j < r.names.size(); ++j) {
        const Eigen::Index jj = static_cast<Eigen::Index>(j);
        const double se = std::sqrt(std::max(r.covariance(jj, jj), 0.0));
        const double center = r.center()[jj];
        out << r.names[j] << ',' << format_double(r.theta[jj]) << ','
            << (r.corrected.size() ? format_double(r.corrected[jj]) : "nan") << ','
            << format_double(se) << ',' << format_double(cis[j].lower) << ','
            << format_double(cis[j].upper) << ',' << format_double(std::exp(center)) << ','
            << format_double(std::exp(cis[j].lower)) << ','
            << format_double(std::exp(cis[j].upper)) << '\n';
    }
}

void write_fit_report_text(const FitReport& r, std::ostream& out) {
    const auto cis = confidence_intervals(r.center(), r.covariance, r.ci_level);
    out << "fit: " << (r.convergence.converged ? "converged" : "NOT converged") << " in "
        << r.convergence.iterations << " iterations (" << to_string(r.convergence.reason)
        << "), objective " << r.objective << "\n";
    if (r.bootstrap_S > 0)
        out << "bias correction: " << r.bootstrap_converged << "/" << r.bootstrap_S
            << " bootstrap replicates; intervals use the corrected center and (1+1/S) variance\n";
    out << '\n';
    out << std::left << std::setw(10) << "parameter" << std::right << std::setw(12) << "estimate"
        << std::setw(12) << "corrected" << std::setw(10) << "se" << std::setw(22)
        << (std::to_string(static_cast<int>(r.ci_level * 100)) + "% CI") << std::setw(12)
        << "natural" << '\n';
    for (size_t j = 0; j < r.names.size(); ++j) {
        const Eigen::Index jj = static_cast<Eigen::Index>(j);
        const double se = std::sqrt(std::max(r.covariance(jj, jj), 0.0));
        std::ostringstream ci;
        ci << std::setprecision(4) << "[" << cis[j].lower << "; " << cis[j].upper << "]";
        out << std::left << std::setw(10) << r.names[j] << std::right << std::fixed
            << std::setprecision(4) << std::setw(12) << r.theta[jj] << std::setw(12);
        if (r.corrected.size())
            out << r.corrected[jj];
        else
            out << "-";
        out << std::setw(10) << se << std::setw(22) << ci.str() << std::setw(12)
            << std::exp(r.center()[jj]) << std::defaultfloat << '\n';
    }
}

void write_subject_effects_csv(const FitReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "subject";
    for (const auto& name : r.random_effect_names) out << ",b_" << name;
    out << '\n';
    for (Eigen::Index i = 0; i < r.b_hat.rows(); ++i) {
        out << r.subject_ids[static_cast<size_t>(i)];
        for (Eigen::Index k = 0; k < r.b_hat.cols(); ++k)
            out << ',' << format_double(r.b_hat(i, k));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------

void write_manifest(const RunManifest& m, const std::string& path) {
    json j;
    j["command"] = m.command;
    j["version"] = m.version;
    j["seed"] = m.seed;
    j["config_text"] = m.config_text;
    j["options"] = m.options;
    j["outputs"] = m.outputs;
    j["duration_seconds"] = m.duration_seconds;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest: " + path);
    json j;
    in >> j;
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_text = j.at("config_text").get<std::string>();
    m.options = j.at("options").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.duration_seconds = j.at("duration_seconds").get<double>();
    return m;
}

} // namespace hlfit
