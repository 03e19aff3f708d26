#ifndef HLFIT_HIV_HPP
#define HLFIT_HIV_HPP

#include <Eigen/Dense>

#include "hlfit/ode.hpp"

namespace hlfit {

// Natural-scale rates of the three-compartment within-host model
// (uninfected CD4 T, infected CD4 T*, free virus V). Units: cells or
// virions per microliter, rates per day. All strictly positive.
struct HivParameters {
    double lambda;   // uninfected-cell production (cells/uL/day)
    double gamma;    // infectivity (uL/(virion day))
    double mu_T;     // uninfected-cell death rate (1/day)
    double mu_Tstar; // infected-cell death rate (1/day)
    double pi;       // virion production per infected cell (1/day)
    double mu_V;     // virion clearance rate (1/day)
};

// dT/dt   = lambda - gamma T V - mu_T T
// dT*/dt  = gamma T V - mu_T* T*
// dV/dt   = pi T* - mu_V V
inline Eigen::Vector3d hiv_rhs(const Eigen::Vector3d& state, const HivParameters& p) {
    const double T = state[0], Ts = state[1], V = state[2];
    const double infection = p.gamma * T * V;
    return {p.lambda - infection - p.mu_T * T, infection - p.mu_Tstar * Ts,
            p.pi * Ts - p.mu_V * V};
}

// Untreated steady state (T0, T*0, V0). Throws NoInfectedEquilibrium when
// lambda <= mu_T * T0, i.e. the infected fixed point has V0 <= 0.
Eigen::Vector3d hiv_equilibrium(const HivParameters& p);

// Signed existence margin of the infected equilibrium: lambda - mu_T * T0.
// Positive iff hiv_equilibrium succeeds; used for feasibility repair.
double hiv_equilibrium_margin(const HivParameters& p);

// Functor form for the templated integrator fast path.
struct HivRhs {
    HivParameters p;
    void operator()(const Eigen::Vector3d& x, double /*t*/, Eigen::Vector3d& dxdt) const {
        const double infection = p.gamma * x[0] * x[2];
        dxdt[0] = p.lambda - infection - p.mu_T * x[0];
        dxdt[1] = infection - p.mu_Tstar * x[1];
        dxdt[2] = p.pi * x[1] - p.mu_V * x[2];
    }
};

// Generic OdeSystem wrapper with params packed as
// (lambda, gamma, mu_T, mu_Tstar, pi, mu_V).
OdeSystem hiv_system();

// Scalar specialization of the same Dormand-Prince scheme for the 3-state
// system (the likelihood hot path); matches the generic integrator to
// roundoff. times must be ascending and nonnegative; one row per time.
void hiv_integrate(const HivParameters& p, const Eigen::Vector3d& x0,
                   const std::vector<double>& times, IntegratorTolerances tol,
                   Eigen::Ref<Eigen::MatrixXd> out);

HivParameters hiv_params_from_vector(const Eigen::VectorXd& v);
Eigen::VectorXd hiv_params_to_vector(const HivParameters& p);

} // namespace hlfit

#endif
