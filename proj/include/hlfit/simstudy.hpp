#ifndef HLFIT_SIMSTUDY_HPP
#define HLFIT_SIMSTUDY_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "hlfit/model.hpp"
#include "hlfit/optimizer.hpp"

namespace hlfit {

struct StudyConfig {
    HivModelConfig model;        // truth, design and penalty for every replicate
    int replicates = 50;
    Algorithm algorithm = Algorithm::Hybrid;
    int max_iterations = 150;
    int bootstrap_S = 0;         // 0 disables bias correction
    double ci_level = 0.95;
    std::uint64_t seed = 1;
    int workers = 1;

    // Case presets of the reference study: case 1 tau* = (0.2, 0.2, 0.2),
    // case 2 tau* = (0.1, 0.2, 0.3).
    void apply_case(int case_id);
};

struct ReplicateRecord {
    int index = 0;
    bool converged = false;
    int iterations = 0;
    StopReason reason = StopReason::IterationLimit;
    double objective = 0.0;
    Eigen::VectorXd theta_hat;       // empty when not converged
    Eigen::VectorXd theta_corrected; // empty when no bootstrap
    Eigen::VectorXd se;              // from the CI covariance
    std::vector<int> ci_hit;         // per-parameter indicator
    int bootstrap_converged = 0;
    std::string note;                // diagnostics for failed replicates
};

struct ParameterSummary {
    std::string name;
    double truth = 0.0;
    double mean_uncorr = 0.0;
    double mean_corr = 0.0;  // NaN when no correction ran
    double bias_uncorr = 0.0;
    double bias_corr = 0.0;  // NaN when no correction ran
    double rmse = 0.0;       // corrected estimates when available
    double coverage = 0.0;
    int n_converged = 0;
};

struct StudyReport {
    std::vector<ReplicateRecord> records;
    std::vector<ParameterSummary> params;
    int n_converged = 0;
    double success_rate = 0.0;   // fraction converged within the iteration cap
    double mean_iterations = 0.0; // over converged replicates
};

// Simulate -> fit -> (optional bootstrap correction) -> sandwich intervals.
// Fully determined by (config, index): replicate seeds derive from the master
// seed by index. Failures are recorded, never thrown.
ReplicateRecord run_replicate(const StudyConfig& config, int index);

std::vector<ParameterSummary> aggregate(const std::vector<ReplicateRecord>& records,
                                        const Eigen::VectorXd& truth,
                                        const std::vector<std::string>& names,
                                        bool corrected_available);

// Replicates run as independent parallel jobs; aggregation is index-ordered,
// so the report is identical for any worker count.
StudyReport run_study(const StudyConfig& config);

// Exact column set:
// parameter,true,mean_est_uncorr,mean_est_corr,bias_uncorr,bias_corr,rmse,coverage,n_converged
void write_study_csv(const StudyReport& report, const std::string& path);
void write_replicate_log(const StudyReport& report, const std::string& path);

} // namespace hlfit

#endif
