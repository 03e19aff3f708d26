#ifndef HLFIT_MODEL_HPP
#define HLFIT_MODEL_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hlfit/hiv.hpp"
#include "hlfit/objective.hpp"
#include "hlfit/ode.hpp"

namespace hlfit {

// ---------------------------------------------------------------------------
// Data containers
// ---------------------------------------------------------------------------

struct ObsRecord {
    double time = 0.0; // days since treatment start
    int marker = 1;    // 1 = log10 viral load, 2 = (T+T*)^(1/4), 3 = (T*)^(1/4)
    double value = 0.0;
    bool censored = false; // left-censored at the marker's detection limit
};

struct SubjectData {
    int id = 0;
    double z1 = 0.0, z2 = 0.0; // treatment-arm indicators, active for t >= 0
    std::vector<ObsRecord> records;
};

using Dataset = std::vector<SubjectData>;

// CSV schema: subject,time,marker,value,censored,z1,z2
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const Dataset& data, const std::string& path);

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

enum class ParamRole {
    Fixed,     // pinned at `value`, not in theta
    Estimated, // free fixed effect (beta block)
    Random     // free with a subject-level random effect (alpha block)
};

// Canonical slots of the reference model, in theta order. gamma0/beta1/beta2
// form the log-linear treatment model for the infectivity gamma.
enum HivSlot : int {
    kLambda = 0,
    kMuTstar = 1,
    kPi = 2,
    kGamma0 = 3,
    kBeta1 = 4,
    kBeta2 = 5,
    kMuT = 6,
    kMuV = 7,
    kNumSlots = 8
};

const std::array<std::string, kNumSlots>& hiv_slot_names();

struct HivModelConfig {
    std::array<ParamRole, kNumSlots> role;
    std::array<double, kNumSlots> value; // transformed scale: simulation truth / fixed value
    std::array<double, kNumSlots> init;  // optimizer starting values (estimated slots)

    std::vector<int> markers = {1, 2, 3};       // observed markers
    std::array<double, 3> sigma = {0.5, 0.5, 0.5};
    std::array<bool, 3> sigma_estimated = {false, false, false};
    std::array<double, 3> sigma_init = {0.5, 0.5, 0.5};
    std::array<double, 3> detect_limit; // NaN = no censoring for that marker
    std::array<double, 3> sigma_sim;    // simulation noise SD; defaults to sigma

    double tau_u = 0.2;             // penalty SD bound, shared across effects
    std::vector<double> tau_per_effect; // optional per-effect override (size R)
    std::vector<double> tau_true = {0.2, 0.2, 0.2}; // simulation SDs, size R

    std::vector<double> times = {0, 3, 6, 9, 12, 15, 18, 21, 24, 30};
    int n_subjects = 100;

    IntegratorTolerances ode_tol;

    // Reference setup: random effects on lambda, mu_Tstar, pi; treatment
    // acting on gamma; mu_T and mu_V pinned.
    static HivModelConfig reference();

    int n_random() const;
    Eigen::VectorXd tau_vector() const; // effective penalty SDs (size R)
    void validate() const;              // throws ConfigError naming the field
};

// ---------------------------------------------------------------------------
// Theta layout
// ---------------------------------------------------------------------------

// Order of the free transformed parameters: random-effect intercepts (alpha)
// in canonical slot order, then estimated fixed-only slots, then log error
// SDs for markers whose sigma is estimated.
struct ThetaLayout {
    std::vector<int> alpha_slots;
    std::vector<int> beta_slots;
    std::vector<int> sigma_markers; // 0-based marker indices
    std::vector<std::string> names; // size q

    int n_alpha() const { return static_cast<int>(alpha_slots.size()); }
    int n_beta() const { return static_cast<int>(beta_slots.size() + sigma_markers.size()); }
    int q() const { return n_alpha() + n_beta(); }
    // -1 when the name is not a free parameter
    int index_of(const std::string& name) const;
};

// ---------------------------------------------------------------------------
// The model: links, observation density, simulation
// ---------------------------------------------------------------------------

struct SubjectDesign {
    int id = 0;
    double z1 = 0.0, z2 = 0.0;
    std::vector<std::pair<double, int>> points; // (time, marker), record order
};

SubjectDesign design_from(const SubjectData& data);

struct SimulatedSubject {
    SubjectData data;
    Eigen::VectorXd b; // drawn random effects (size R)
};

struct SimulatedDataset {
    Dataset data;
    Eigen::MatrixXd b; // n x R
};

// m is the 1-based marker index. Throws DomainError if V <= 0 for marker 1.
double observe_transform(const Eigen::Vector3d& state, int marker);

class HivModel {
public:
    explicit HivModel(HivModelConfig config);

    const HivModelConfig& config() const { return config_; }
    const ThetaLayout& layout() const { return layout_; }

    Eigen::VectorXd theta_true() const;
    Eigen::VectorXd theta_init() const;

    // Natural ODE parameters for one subject. The treatment indicators only
    // enter the linear predictor of gamma for time >= 0.
    HivParameters natural_params(const Eigen::VectorXd& theta, const Eigen::VectorXd& a_i,
                                 double z1, double z2, double time) const;

    // Conditional loglikelihood of one subject's records given (theta, a_i);
    // returns -infinity at infeasible points. One ODE solve per call.
    double subject_loglik(const Eigen::VectorXd& theta, const Eigen::VectorXd& a_i,
                          const SubjectData& data) const;

    // Noiseless transformed trajectory values at the design points.
    std::vector<double> predicted_observations(const Eigen::VectorXd& theta,
                                               const Eigen::VectorXd& a_i,
                                               const SubjectDesign& design) const;

    // Draws b_i ~ N(0, diag(tau^2)), starts from the untreated equilibrium,
    // integrates with treatment active from t = 0, adds Gaussian noise and
    // applies left-censoring where configured. Redraws b_i (at most 100
    // times) when the equilibrium does not exist.
    SimulatedSubject simulate_subject(const Eigen::VectorXd& theta, const Eigen::VectorXd& tau,
                                      const SubjectDesign& design, std::uint64_t seed) const;

    // n subjects on the default design; arms split half (z1=1) / half (z2=1).
    SimulatedDataset simulate_dataset(const Eigen::VectorXd& theta, const Eigen::VectorXd& tau,
                                      std::uint64_t seed) const;
    SimulatedDataset simulate_dataset(const Eigen::VectorXd& theta, const Eigen::VectorXd& tau,
                                      const std::vector<SubjectDesign>& designs,
                                      std::uint64_t seed) const;

    std::vector<SubjectDesign> default_designs() const;

    // Transformed-scale feasibility margin of the untreated equilibrium for
    // zero random effects: log lambda + log gamma0-part + log pi - ...
    double start_margin(const Eigen::VectorXd& theta) const;

private:
    friend class HivObjective;

    struct SlotSource {
        ParamRole role;
        int index;    // into a_i (Random) or beta (Estimated)
        double value; // Fixed
    };

    double transformed(int slot, const Eigen::VectorXd& beta, const Eigen::VectorXd& a_i) const;
    HivParameters gather_params(const Eigen::VectorXd& beta, const Eigen::VectorXd& a_i,
                                double z1, double z2, bool treated) const;
    std::array<double, 3> gather_sigma(const Eigen::VectorXd& beta) const;
    double loglik_ab(const Eigen::VectorXd& beta, const Eigen::VectorXd& a_i,
                     const SubjectData& data) const;

    HivModelConfig config_;
    ThetaLayout layout_;
    std::array<SlotSource, kNumSlots> source_;
};

// Binds a model and a dataset into the interface the fitting machinery uses.
class HivObjective : public SubjectObjective {
public:
    HivObjective(std::shared_ptr<const HivModel> model, Dataset data);

    int n_subjects() const override { return static_cast<int>(data_.size()); }
    int n_random() const override { return model_->layout().n_alpha(); }
    int n_beta() const override { return model_->layout().n_beta(); }
    double loglik(int subject, const Eigen::VectorXd& beta,
                  const Eigen::VectorXd& a_i) const override;

    // Structural sparsity: a subject's likelihood ignores the treatment
    // coefficient of the arm they are not in and the error SD of markers
    // they were never measured on.
    std::vector<int> active_beta(int subject) const override;

    // Moves an equilibrium-infeasible start into the feasible region by
    // spreading the required margin across the free slots that enter it.
    Eigen::VectorXd repair_start(const Eigen::VectorXd& theta) const override;

    const Dataset& data() const { return data_; }
    const HivModel& model() const { return *model_; }

private:
    std::shared_ptr<const HivModel> model_;
    Dataset data_;
};

} // namespace hlfit

#endif
