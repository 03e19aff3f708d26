#include "hlfit/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "hlfit/errors.hpp"

namespace hlfit {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> tokens(const std::string& s) {
    std::istringstream ss(s);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

double parse_double(const std::string& key, const std::string& s) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
}

int parse_int(const std::string& key, const std::string& s) {
    try {
        size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + s + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + s + "'");
}

std::vector<double> parse_doubles(const std::string& key, const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : tokens(s)) out.push_back(parse_double(key, tok));
    if (out.empty()) throw ConfigError(key + ": expected at least one number");
    return out;
}

template <size_t N>
void parse_fixed_doubles(const std::string& key, const std::string& s,
                         std::array<double, N>& out) {
    const auto vals = parse_doubles(key, s);
    if (vals.size() != N)
        throw ConfigError(key + ": expected " + std::to_string(N) + " values, got " +
                          std::to_string(vals.size()));
    std::copy(vals.begin(), vals.end(), out.begin());
}

int slot_by_name(const std::string& key, const std::string& name) {
    const auto& names = hiv_slot_names();
    for (int s = 0; s < kNumSlots; ++s)
        if (names[static_cast<size_t>(s)] == name) return s;
    throw ConfigError(key + ": unknown parameter '" + name + "'");
}

ParamRole role_from_string(const std::string& key, const std::string& s) {
    if (s == "fixed") return ParamRole::Fixed;
    if (s == "estimated") return ParamRole::Estimated;
    if (s == "random") return ParamRole::Random;
    throw ConfigError(key + ": expected fixed, estimated or random, got '" + s + "'");
}

std::string role_to_string(ParamRole r) {
    switch (r) {
    case ParamRole::Fixed: return "fixed";
    case ParamRole::Estimated: return "estimated";
    default: return "random";
    }
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

HivModelConfig model_config_from_string(const std::string& text) {
    HivModelConfig c = HivModelConfig::reference();
    bool sigma_sim_given = false;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (value.empty()) throw ConfigError(key + ": empty value");

        if (key.rfind("role.", 0) == 0) {
            const int s = slot_by_name(key, key.substr(5));
            c.role[static_cast<size_t>(s)] = role_from_string(key, value);
        } else if (key.rfind("true.", 0) == 0) {
            const int s = slot_by_name(key, key.substr(5));
            c.value[static_cast<size_t>(s)] = parse_double(key, value);
        } else if (key.rfind("init.", 0) == 0) {
            const int s = slot_by_name(key, key.substr(5));
            c.init[static_cast<size_t>(s)] = parse_double(key, value);
        } else if (key == "tau_u") {
            c.tau_u = parse_double(key, value);
        } else if (key == "tau_per_effect") {
            c.tau_per_effect = parse_doubles(key, value);
        } else if (key == "tau_true") {
            c.tau_true = parse_doubles(key, value);
        } else if (key == "sigma") {
            parse_fixed_doubles<3>(key, value, c.sigma);
        } else if (key == "sigma_init") {
            parse_fixed_doubles<3>(key, value, c.sigma_init);
        } else if (key == "sigma_sim") {
            parse_fixed_doubles<3>(key, value, c.sigma_sim);
            sigma_sim_given = true;
        } else if (key == "sigma_estimated") {
            const auto toks = tokens(value);
            if (toks.size() != 3) throw ConfigError(key + ": expected 3 flags");
            for (size_t m = 0; m < 3; ++m) c.sigma_estimated[m] = parse_bool(key, toks[m]);
        } else if (key == "detect_limit") {
            const auto toks = tokens(value);
            if (toks.size() != 3) throw ConfigError(key + ": expected 3 entries (number or none)");
            for (size_t m = 0; m < 3; ++m)
                c.detect_limit[m] = (toks[m] == "none")
                                        ? std::numeric_limits<double>::quiet_NaN()
                                        : parse_double(key, toks[m]);
        } else if (key == "markers") {
            c.markers.clear();
            for (const auto& tok : tokens(value)) c.markers.push_back(parse_int(key, tok));
        } else if (key == "times") {
            c.times = parse_doubles(key, value);
        } else if (key == "n_subjects") {
            c.n_subjects = parse_int(key, value);
        } else if (key == "ode_rtol") {
            c.ode_tol.rel = parse_double(key, value);
        } else if (key == "ode_atol") {
            c.ode_tol.abs = parse_double(key, value);
        } else {
            throw ConfigError("unknown configuration key '" + key + "'");
        }
    }
    if (!sigma_sim_given) c.sigma_sim = c.sigma;
    c.validate();
    return c;
}

HivModelConfig model_config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return model_config_from_string(ss.str());
}

std::string model_config_to_string(const HivModelConfig& c) {
    std::ostringstream out;
    const auto& names = hiv_slot_names();
    for (int s = 0; s < kNumSlots; ++s) {
        const auto& name = names[static_cast<size_t>(s)];
        out << "role." << name << " = " << role_to_string(c.role[static_cast<size_t>(s)]) << '\n';
        out << "true." << name << " = " << format_double(c.value[static_cast<size_t>(s)]) << '\n';
        out << "init." << name << " = " << format_double(c.init[static_cast<size_t>(s)]) << '\n';
    }
    out << "tau_u = " << format_double(c.tau_u) << '\n';
    if (!c.tau_per_effect.empty()) {
        out << "tau_per_effect =";
        for (double t : c.tau_per_effect) out << ' ' << format_double(t);
        out << '\n';
    }
    out << "tau_true =";
    for (double t : c.tau_true) out << ' ' << format_double(t);
    out << '\n';
    out << "sigma = " << format_double(c.sigma[0]) << ' ' << format_double(c.sigma[1]) << ' '
        << format_double(c.sigma[2]) << '\n';
    out << "sigma_init = " << format_double(c.sigma_init[0]) << ' '
        << format_double(c.sigma_init[1]) << ' ' << format_double(c.sigma_init[2]) << '\n';
    out << "sigma_sim = " << format_double(c.sigma_sim[0]) << ' ' << format_double(c.sigma_sim[1])
        << ' ' << format_double(c.sigma_sim[2]) << '\n';
    out << "sigma_estimated = " << (c.sigma_estimated[0] ? 1 : 0) << ' '
        << (c.sigma_estimated[1] ? 1 : 0) << ' ' << (c.sigma_estimated[2] ? 1 : 0) << '\n';
    out << "detect_limit =";
    for (size_t m = 0; m < 3; ++m)
        out << ' ' << (std::isfinite(c.detect_limit[m]) ? format_double(c.detect_limit[m]) : "none");
    out << '\n';
    out << "markers =";
    for (int m : c.markers) out << ' ' << m;
    out << '\n';
    out << "times =";
    for (double t : c.times) out << ' ' << format_double(t);
    out << '\n';
    out << "n_subjects = " << c.n_subjects << '\n';
    out << "ode_rtol = " << format_double(c.ode_tol.rel) << '\n';
    out << "ode_atol = " << format_double(c.ode_tol.abs) << '\n';
    return out.str();
}

} // namespace hlfit
