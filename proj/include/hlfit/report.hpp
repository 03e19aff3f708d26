#ifndef HLFIT_REPORT_HPP
#define HLFIT_REPORT_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hlfit/optimizer.hpp"

namespace hlfit {

inline constexpr const char* kToolVersion = "0.1.0";

// Everything a downstream command (Wald tests, plotting) needs from a fit,
// serialized as JSON next to the human-readable table and CSV.
struct FitReport {
    std::vector<std::string> names; // theta order
    Eigen::VectorXd theta;          // uncorrected estimate
    Eigen::VectorXd corrected;      // empty when no bias correction ran
    Eigen::MatrixXd covariance;     // basis for the reported intervals
    double ci_level = 0.95;
    double bread_condition = 0.0;
    int bootstrap_S = 0;
    int bootstrap_converged = 0;
    std::vector<int> subject_ids;
    Eigen::MatrixXd b_hat; // n x R, a_i - alpha_hat
    std::vector<std::string> random_effect_names;
    double objective = 0.0;
    ConvergenceReport convergence;

    // Interval center: corrected estimate when the correction ran.
    const Eigen::VectorXd& center() const { return corrected.size() ? corrected : theta; }
};

void write_fit_report_json(const FitReport& report, const std::string& path);
FitReport read_fit_report_json(const std::string& path);

// Parameter table: transformed and natural (exponentiated) scales.
void write_fit_report_csv(const FitReport& report, const std::string& path);
void write_fit_report_text(const FitReport& report, std::ostream& out);
void write_subject_effects_csv(const FitReport& report, const std::string& path);

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

// Records everything needed to reproduce a run bit-for-bit: the command, the
// resolved configuration text, the master seed and the resolved options.
struct RunManifest {
    std::string command;
    std::string version = kToolVersion;
    std::uint64_t seed = 0;
    std::string config_text;
    std::map<std::string, std::string> options;
    std::vector<std::string> outputs;
    double duration_seconds = 0.0;
};

void write_manifest(const RunManifest& manifest, const std::string& path);
RunManifest read_manifest(const std::string& path);

} // namespace hlfit

#endif
