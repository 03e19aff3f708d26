#include "hlfit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "hlfit/errors.hpp"
#include "hlfit/rng.hpp"
#include "hlfit/stats.hpp"

namespace hlfit {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kEquilibriumRetries = 100;
} // namespace

const std::array<std::string, kNumSlots>& hiv_slot_names() {
    static const std::array<std::string, kNumSlots> names = {
        "lambda", "mu_Tstar", "pi", "gamma0", "beta1", "beta2", "mu_T", "mu_V"};
    return names;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

HivModelConfig HivModelConfig::reference() {
    HivModelConfig c;
    c.role = {ParamRole::Random,    ParamRole::Random,    ParamRole::Random,
              ParamRole::Estimated, ParamRole::Estimated, ParamRole::Estimated,
              ParamRole::Fixed,     ParamRole::Fixed};
    c.value = {4.10, -1.60, -0.170, -3.00, -1.10, -1.40, -2.20, 3.40};
    c.init = {5.0, 0.0, 0.0, -5.0, -1.0, -1.0, -2.20, 3.40};
    c.detect_limit = {kNaN, kNaN, kNaN};
    c.sigma_sim = c.sigma;
    return c;
}

int HivModelConfig::n_random() const {
    return static_cast<int>(std::count(role.begin(), role.end(), ParamRole::Random));
}

Eigen::VectorXd HivModelConfig::tau_vector() const {
    const int R = n_random();
    Eigen::VectorXd tau(R);
    if (!tau_per_effect.empty()) {
        for (int r = 0; r < R; ++r) tau[r] = tau_per_effect[static_cast<size_t>(r)];
    } else {
        tau.setConstant(tau_u);
    }
    return tau;
}

void HivModelConfig::validate() const {
    static const bool random_allowed[kNumSlots] = {true, true, true, false,
                                                   false, false, true, true};
    for (int s = 0; s < kNumSlots; ++s)
        if (role[static_cast<size_t>(s)] == ParamRole::Random && !random_allowed[s])
            throw ConfigError("role." + hiv_slot_names()[static_cast<size_t>(s)] +
                              ": random effects not supported on this parameter");
    if (!(tau_u > 0.0)) throw ConfigError("tau_u: must be > 0");
    const int R = n_random();
    if (!tau_per_effect.empty()) {
        if (static_cast<int>(tau_per_effect.size()) != R)
            throw ConfigError("tau_per_effect: expected " + std::to_string(R) + " entries");
        for (double t : tau_per_effect)
            if (!(t > 0.0)) throw ConfigError("tau_per_effect: entries must be > 0");
    }
    if (static_cast<int>(tau_true.size()) != R)
        throw ConfigError("tau_true: expected " + std::to_string(R) + " entries, got " +
                          std::to_string(tau_true.size()));
    for (double t : tau_true)
        if (!(t >= 0.0)) throw ConfigError("tau_true: entries must be >= 0");
    if (markers.empty()) throw ConfigError("markers: at least one marker required");
    for (int m : markers)
        if (m < 1 || m > 3) throw ConfigError("markers: marker indices must be in 1..3");
    if (std::set<int>(markers.begin(), markers.end()).size() != markers.size())
        throw ConfigError("markers: duplicate marker index");
    for (int m : markers) {
        if (!(sigma[static_cast<size_t>(m - 1)] > 0.0))
            throw ConfigError("sigma: marker " + std::to_string(m) + " requires sigma > 0");
        if (!(sigma_sim[static_cast<size_t>(m - 1)] >= 0.0))
            throw ConfigError("sigma_sim: marker " + std::to_string(m) + " requires sigma >= 0");
    }
    for (int m = 0; m < 3; ++m) {
        if (sigma_estimated[static_cast<size_t>(m)] &&
            std::find(markers.begin(), markers.end(), m + 1) == markers.end())
            throw ConfigError("sigma_estimated: marker " + std::to_string(m + 1) +
                              " is not observed");
    }
    if (times.empty()) throw ConfigError("times: at least one observation time required");
    if (!std::is_sorted(times.begin(), times.end()))
        throw ConfigError("times: must be ascending");
    if (times.front() < 0.0) throw ConfigError("times: must be nonnegative");
    if (n_subjects < 1) throw ConfigError("n_subjects: must be >= 1");
    if (!(ode_tol.rel > 0.0)) throw ConfigError("ode_rtol: must be > 0");
    if (!(ode_tol.abs > 0.0)) throw ConfigError("ode_atol: must be > 0");
    int n_estimated = 0;
    for (int s = 0; s < kNumSlots; ++s)
        if (role[static_cast<size_t>(s)] != ParamRole::Fixed) ++n_estimated;
    for (size_t m = 0; m < 3; ++m) n_estimated += sigma_estimated[m] ? 1 : 0;
    if (n_estimated == 0) throw ConfigError("role: no free parameters to estimate");
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

int ThetaLayout::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

static ThetaLayout make_layout(const HivModelConfig& c) {
    ThetaLayout l;
    for (int s = 0; s < kNumSlots; ++s)
        if (c.role[static_cast<size_t>(s)] == ParamRole::Random) l.alpha_slots.push_back(s);
    for (int s = 0; s < kNumSlots; ++s)
        if (c.role[static_cast<size_t>(s)] == ParamRole::Estimated) l.beta_slots.push_back(s);
    for (int m = 0; m < 3; ++m)
        if (c.sigma_estimated[static_cast<size_t>(m)]) l.sigma_markers.push_back(m);
    for (int s : l.alpha_slots) l.names.push_back(hiv_slot_names()[static_cast<size_t>(s)]);
    for (int s : l.beta_slots) l.names.push_back(hiv_slot_names()[static_cast<size_t>(s)]);
    for (int m : l.sigma_markers) l.names.push_back("sigma" + std::to_string(m + 1));
    return l;
}

// ---------------------------------------------------------------------------
// Observation transforms
// ---------------------------------------------------------------------------

double observe_transform(const Eigen::Vector3d& state, int marker) {
    switch (marker) {
    case 1:
        if (!(state[2] > 0.0))
            throw DomainError("marker 1 requires V > 0, got " + std::to_string(state[2]));
        return std::log10(state[2]);
    case 2:
        return std::pow(std::max(state[0] + state[1], 0.0), 0.25);
    case 3:
        return std::pow(std::max(state[1], 0.0), 0.25);
    default:
        throw DomainError("unknown marker " + std::to_string(marker));
    }
}

// ---------------------------------------------------------------------------
// HivModel
// ---------------------------------------------------------------------------

HivModel::HivModel(HivModelConfig config) : config_(std::move(config)) {
    config_.validate();
    layout_ = make_layout(config_);
    int ai = 0, bi = 0;
    for (int s = 0; s < kNumSlots; ++s) {
        const ParamRole role = config_.role[static_cast<size_t>(s)];
        SlotSource src{role, -1, config_.value[static_cast<size_t>(s)]};
        if (role == ParamRole::Random) src.index = ai++;
        if (role == ParamRole::Estimated) src.index = bi++;
        source_[static_cast<size_t>(s)] = src;
    }
}

double HivModel::transformed(int slot, const Eigen::VectorXd& beta,
                             const Eigen::VectorXd& a_i) const {
    const SlotSource& src = source_[static_cast<size_t>(slot)];
    switch (src.role) {
    case ParamRole::Random: return a_i[src.index];
    case ParamRole::Estimated: return beta[src.index];
    default: return src.value;
    }
}

HivParameters HivModel::gather_params(const Eigen::VectorXd& beta, const Eigen::VectorXd& a_i,
                                      double z1, double z2, bool treated) const {
    double gamma_t = transformed(kGamma0, beta, a_i);
    if (treated) gamma_t += transformed(kBeta1, beta, a_i) * z1 +
                            transformed(kBeta2, beta, a_i) * z2;
    HivParameters p;
    p.lambda = std::exp(transformed(kLambda, beta, a_i));
    p.gamma = std::exp(gamma_t);
    p.mu_T = std::exp(transformed(kMuT, beta, a_i));
    p.mu_Tstar = std::exp(transformed(kMuTstar, beta, a_i));
    p.pi = std::exp(transformed(kPi, beta, a_i));
    p.mu_V = std::exp(transformed(kMuV, beta, a_i));
    return p;
}

std::array<double, 3> HivModel::gather_sigma(const Eigen::VectorXd& beta) const {
    std::array<double, 3> sig = config_.sigma;
    const int base = static_cast<int>(layout_.beta_slots.size());
    for (size_t k = 0; k < layout_.sigma_markers.size(); ++k)
        sig[static_cast<size_t>(layout_.sigma_markers[k])] =
            std::exp(beta[base + static_cast<int>(k)]);
    return sig;
}

HivParameters HivModel::natural_params(const Eigen::VectorXd& theta, const Eigen::VectorXd& a_i,
                                       double z1, double z2, double time) const {
    const Eigen::VectorXd beta = theta.tail(layout_.n_beta());
    return gather_params(beta, a_i, z1, z2, /*treated=*/time >= 0.0);
}

Eigen::VectorXd HivModel::theta_true() const {
    Eigen::VectorXd theta(layout_.q());
    int k = 0;
    for (int s : layout_.alpha_slots) theta[k++] = config_.value[static_cast<size_t>(s)];
    for (int s : layout_.beta_slots) theta[k++] = config_.value[static_cast<size_t>(s)];
    for (int m : layout_.sigma_markers)
        theta[k++] = std::log(config_.sigma[static_cast<size_t>(m)]);
    return theta;
}

Eigen::VectorXd HivModel::theta_init() const {
    Eigen::VectorXd theta(layout_.q());
    int k = 0;
    for (int s : layout_.alpha_slots) theta[k++] = config_.init[static_cast<size_t>(s)];
    for (int s : layout_.beta_slots) theta[k++] = config_.init[static_cast<size_t>(s)];
    for (int m : layout_.sigma_markers)
        theta[k++] = std::log(config_.sigma_init[static_cast<size_t>(m)]);
    return theta;
}

double HivModel::loglik_ab(const Eigen::VectorXd& beta, const Eigen::VectorXd& a_i,
                           const SubjectData& data) const {
    if (data.records.empty()) return 0.0;
    Eigen::Vector3d x0;
    HivParameters treated;
    try {
        x0 = hiv_equilibrium(gather_params(beta, a_i, data.z1, data.z2, /*treated=*/false));
        treated = gather_params(beta, a_i, data.z1, data.z2, /*treated=*/true);
    } catch (const NoInfectedEquilibrium&) {
        return kNegInf;
    }

    std::vector<double> times;
    times.reserve(data.records.size());
    for (const auto& rec : data.records) times.push_back(rec.time);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    Eigen::MatrixXd states(static_cast<Eigen::Index>(times.size()), 3);
    try {
        hiv_integrate(treated, x0, times, config_.ode_tol, states);
    } catch (const StepSizeUnderflow&) {
        return kNegInf;
    }

    const std::array<double, 3> sig = gather_sigma(beta);
    double ll = 0.0;
    for (const auto& rec : data.records) {
        const auto it = std::lower_bound(times.begin(), times.end(), rec.time);
        const Eigen::Index row = static_cast<Eigen::Index>(it - times.begin());
        const Eigen::Vector3d x = states.row(row).transpose();
        double phi;
        try {
            phi = observe_transform(x, rec.marker);
        } catch (const DomainError&) {
            return kNegInf;
        }
        if (!std::isfinite(phi)) return kNegInf;
        const double sd = sig[static_cast<size_t>(rec.marker - 1)];
        ll += rec.censored ? log_normal_cdf((rec.value - phi) / sd)
                           : normal_logpdf(rec.value - phi, sd);
    }
    return std::isfinite(ll) ? ll : kNegInf;
}

double HivModel::subject_loglik(const Eigen::VectorXd& theta, const Eigen::VectorXd& a_i,
                                const SubjectData& data) const {
    return loglik_ab(theta.tail(layout_.n_beta()), a_i, data);
}

std::vector<double> HivModel::predicted_observations(const Eigen::VectorXd& theta,
                                                     const Eigen::VectorXd& a_i,
                                                     const SubjectDesign& design) const {
    const Eigen::VectorXd beta = theta.tail(layout_.n_beta());
    const Eigen::Vector3d x0 =
        hiv_equilibrium(gather_params(beta, a_i, design.z1, design.z2, false));
    const HivParameters treated = gather_params(beta, a_i, design.z1, design.z2, true);

    std::vector<double> times;
    for (const auto& pt : design.points) times.push_back(pt.first);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    Eigen::MatrixXd states(static_cast<Eigen::Index>(times.size()), 3);
    hiv_integrate(treated, x0, times, config_.ode_tol, states);

    std::vector<double> out;
    out.reserve(design.points.size());
    for (const auto& pt : design.points) {
        const auto it = std::lower_bound(times.begin(), times.end(), pt.first);
        const Eigen::Vector3d x = states.row(static_cast<Eigen::Index>(it - times.begin()));
        out.push_back(observe_transform(x, pt.second));
    }
    return out;
}

SubjectDesign design_from(const SubjectData& data) {
    SubjectDesign d;
    d.id = data.id;
    d.z1 = data.z1;
    d.z2 = data.z2;
    for (const auto& rec : data.records) d.points.emplace_back(rec.time, rec.marker);
    return d;
}

std::vector<SubjectDesign> HivModel::default_designs() const {
    std::vector<SubjectDesign> designs;
    const int n = config_.n_subjects;
    for (int i = 0; i < n; ++i) {
        SubjectDesign d;
        d.id = i + 1;
        d.z1 = (i < n / 2) ? 1.0 : 0.0;
        d.z2 = (i < n / 2) ? 0.0 : 1.0;
        for (double t : config_.times)
            for (int m : config_.markers) d.points.emplace_back(t, m);
        designs.push_back(std::move(d));
    }
    return designs;
}

SimulatedSubject HivModel::simulate_subject(const Eigen::VectorXd& theta,
                                            const Eigen::VectorXd& tau,
                                            const SubjectDesign& design,
                                            std::uint64_t seed) const {
    const int R = layout_.n_alpha();
    const Eigen::VectorXd alpha = theta.head(R);
    const Eigen::VectorXd beta = theta.tail(layout_.n_beta());
    Rng rng(seed);

    for (int attempt = 0; attempt < kEquilibriumRetries; ++attempt) {
        Eigen::VectorXd b(R);
        for (int r = 0; r < R; ++r) b[r] = rng.normal(0.0, tau[r]);
        const Eigen::VectorXd a_i = alpha + b;

        Eigen::Vector3d x0;
        try {
            x0 = hiv_equilibrium(gather_params(beta, a_i, design.z1, design.z2, false));
        } catch (const NoInfectedEquilibrium&) {
            continue;
        }
        const HivParameters treated = gather_params(beta, a_i, design.z1, design.z2, true);

        std::vector<double> times;
        for (const auto& pt : design.points) times.push_back(pt.first);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());

        Eigen::MatrixXd states(static_cast<Eigen::Index>(times.size()), 3);
        hiv_integrate(treated, x0, times, config_.ode_tol, states);

        const std::array<double, 3> sig = gather_sigma(beta);
        SimulatedSubject out;
        out.b = b;
        out.data.id = design.id;
        out.data.z1 = design.z1;
        out.data.z2 = design.z2;
        for (const auto& pt : design.points) {
            const auto it = std::lower_bound(times.begin(), times.end(), pt.first);
            const Eigen::Vector3d x = states.row(static_cast<Eigen::Index>(it - times.begin()));
            ObsRecord rec;
            rec.time = pt.first;
            rec.marker = pt.second;
            const size_t m = static_cast<size_t>(pt.second - 1);
            // Estimated error SDs live in theta, so synthetic data (e.g. the
            // bootstrap) uses the fitted value; fixed SDs use sigma_sim.
            const double noise_sd = config_.sigma_estimated[m] ? sig[m] : config_.sigma_sim[m];
            double y = observe_transform(x, pt.second) +
                       (noise_sd > 0.0 ? rng.normal(0.0, noise_sd) : 0.0);
            const double limit = config_.detect_limit[m];
            if (std::isfinite(limit) && y < limit) {
                rec.value = limit;
                rec.censored = true;
            } else {
                rec.value = y;
            }
            out.data.records.push_back(rec);
        }
        return out;
    }
    throw NoInfectedEquilibrium("simulate_subject: no feasible random-effect draw in " +
                                std::to_string(kEquilibriumRetries) +
                                " attempts (check parameter values)");
}

SimulatedDataset HivModel::simulate_dataset(const Eigen::VectorXd& theta,
                                            const Eigen::VectorXd& tau,
                                            std::uint64_t seed) const {
    return simulate_dataset(theta, tau, default_designs(), seed);
}

SimulatedDataset HivModel::simulate_dataset(const Eigen::VectorXd& theta,
                                            const Eigen::VectorXd& tau,
                                            const std::vector<SubjectDesign>& designs,
                                            std::uint64_t seed) const {
    SimulatedDataset out;
    out.b.resize(static_cast<Eigen::Index>(designs.size()), layout_.n_alpha());
    for (size_t i = 0; i < designs.size(); ++i) {
        SimulatedSubject s = simulate_subject(theta, tau, designs[i], derive_seed(seed, i));
        out.b.row(static_cast<Eigen::Index>(i)) = s.b.transpose();
        out.data.push_back(std::move(s.data));
    }
    return out;
}

double HivModel::start_margin(const Eigen::VectorXd& theta) const {
    const Eigen::VectorXd alpha = theta.head(layout_.n_alpha());
    const Eigen::VectorXd beta = theta.tail(layout_.n_beta());
    return transformed(kLambda, beta, alpha) + transformed(kGamma0, beta, alpha) +
           transformed(kPi, beta, alpha) - transformed(kMuT, beta, alpha) -
           transformed(kMuTstar, beta, alpha) - transformed(kMuV, beta, alpha);
}

// ---------------------------------------------------------------------------
// HivObjective
// ---------------------------------------------------------------------------

HivObjective::HivObjective(std::shared_ptr<const HivModel> model, Dataset data)
    : model_(std::move(model)), data_(std::move(data)) {
    const std::array<double, 3>& limits = model_->config().detect_limit;
    for (const auto& subj : data_) {
        for (const auto& rec : subj.records) {
            if (rec.marker < 1 || rec.marker > 3)
                throw ConfigError("dataset: subject " + std::to_string(subj.id) +
                                  " has marker " + std::to_string(rec.marker));
            if (rec.time < 0.0)
                throw ConfigError("dataset: subject " + std::to_string(subj.id) +
                                  " has negative time");
            if (rec.censored) {
                const double limit = limits[static_cast<size_t>(rec.marker - 1)];
                if (!std::isfinite(limit))
                    throw ConfigError("dataset: censored record for marker " +
                                      std::to_string(rec.marker) +
                                      " but no detection limit configured");
                if (std::abs(rec.value - limit) > 1e-9)
                    throw ConfigError("dataset: censored value differs from detection limit " +
                                      std::to_string(limit));
            }
        }
    }
}

double HivObjective::loglik(int subject, const Eigen::VectorXd& beta,
                            const Eigen::VectorXd& a_i) const {
    return model_->loglik_ab(beta, a_i, data_[static_cast<size_t>(subject)]);
}

std::vector<int> HivObjective::active_beta(int subject) const {
    const SubjectData& subj = data_[static_cast<size_t>(subject)];
    const ThetaLayout& layout = model_->layout();
    std::array<bool, 3> has_marker = {false, false, false};
    for (const auto& rec : subj.records) has_marker[static_cast<size_t>(rec.marker - 1)] = true;

    std::vector<int> active;
    for (size_t b = 0; b < layout.beta_slots.size(); ++b) {
        const int slot = layout.beta_slots[b];
        if (slot == kBeta1 && subj.z1 == 0.0) continue;
        if (slot == kBeta2 && subj.z2 == 0.0) continue;
        active.push_back(static_cast<int>(b));
    }
    const int base = static_cast<int>(layout.beta_slots.size());
    for (size_t k = 0; k < layout.sigma_markers.size(); ++k)
        if (has_marker[static_cast<size_t>(layout.sigma_markers[k])])
            active.push_back(base + static_cast<int>(k));
    return active;
}

Eigen::VectorXd HivObjective::repair_start(const Eigen::VectorXd& theta) const {
    constexpr double kTargetMargin = 0.1;
    const double margin = model_->start_margin(theta);
    if (margin >= kTargetMargin) return theta;

    // Margin is linear in the transformed parameters with coefficient +1 on
    // lambda, gamma0, pi and -1 on mu_T, mu_Tstar, mu_V; spread the deficit
    // over the free ones.
    const ThetaLayout& layout = model_->layout();
    struct Move { int slot; double sign; };
    const std::array<Move, 6> moves = {{{kLambda, +1.0}, {kGamma0, +1.0}, {kPi, +1.0},
                                        {kMuT, -1.0}, {kMuTstar, -1.0}, {kMuV, -1.0}}};
    std::vector<std::pair<int, double>> free_idx; // (theta index, sign)
    for (const Move& mv : moves) {
        const std::string& name = hiv_slot_names()[static_cast<size_t>(mv.slot)];
        const int idx = layout.index_of(name);
        if (idx >= 0) free_idx.emplace_back(idx, mv.sign);
    }
    if (free_idx.empty()) return theta;

    const double shift = (kTargetMargin - margin) / static_cast<double>(free_idx.size());
    Eigen::VectorXd repaired = theta;
    for (auto [idx, sign] : free_idx) repaired[idx] += sign * shift;
    return repaired;
}

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

static std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "subject,time,marker,value,censored,z1,z2\n";
    for (const auto& subj : data)
        for (const auto& rec : subj.records)
            out << subj.id << ',' << format_double(rec.time) << ',' << rec.marker << ','
                << format_double(rec.value) << ',' << (rec.censored ? 1 : 0) << ','
                << format_double(subj.z1) << ',' << format_double(subj.z2) << '\n';
}

Dataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("dataset: empty file " + path);

    Dataset data;
    std::map<int, size_t> index;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        int subject, marker, censored;
        double time, value, z1, z2;
        if (!(ss >> subject >> time >> marker >> value >> censored >> z1 >> z2))
            throw ConfigError("dataset: malformed line " + std::to_string(lineno) + " in " +
                              path);
        auto [it, inserted] = index.emplace(subject, data.size());
        if (inserted) {
            SubjectData s;
            s.id = subject;
            s.z1 = z1;
            s.z2 = z2;
            data.push_back(std::move(s));
        } else if (data[it->second].z1 != z1 || data[it->second].z2 != z2) {
            throw ConfigError("dataset: inconsistent covariates for subject " +
                              std::to_string(subject) + " at line " + std::to_string(lineno));
        }
        ObsRecord rec;
        rec.time = time;
        rec.marker = marker;
        rec.value = value;
        rec.censored = censored != 0;
        data[it->second].records.push_back(rec);
    }
    if (data.empty()) throw ConfigError("dataset: no records in " + path);
    return data;
}

} // namespace hlfit
