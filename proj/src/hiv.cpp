#include "hlfit/hiv.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace hlfit {

double hiv_equilibrium_margin(const HivParameters& p) {
    const double T0 = p.mu_V * p.mu_Tstar / (p.gamma * p.pi);
    return p.lambda - p.mu_T * T0;
}

Eigen::Vector3d hiv_equilibrium(const HivParameters& p) {
    const double T0 = p.mu_V * p.mu_Tstar / (p.gamma * p.pi);
    const double margin = p.lambda - p.mu_T * T0;
    if (!(margin > 0.0))
        throw NoInfectedEquilibrium("infected steady state does not exist (lambda - mu_T*T0 = " +
                                    std::to_string(margin) + ")");
    const double V0 = margin / (p.gamma * T0);
    const double Ts0 = p.mu_V * V0 / p.pi;
    return {T0, Ts0, V0};
}

HivParameters hiv_params_from_vector(const Eigen::VectorXd& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

Eigen::VectorXd hiv_params_to_vector(const HivParameters& p) {
    Eigen::VectorXd v(6);
    v << p.lambda, p.gamma, p.mu_T, p.mu_Tstar, p.pi, p.mu_V;
    return v;
}

namespace {

struct Triple {
    double T, Ts, V;
};

inline Triple rhs3(const HivParameters& p, double T, double Ts, double V) {
    const double infection = p.gamma * T * V;
    return {p.lambda - infection - p.mu_T * T, infection - p.mu_Tstar * Ts,
            p.pi * Ts - p.mu_V * V};
}

} // namespace

void hiv_integrate(const HivParameters& p, const Eigen::Vector3d& x0,
                   const std::vector<double>& times, IntegratorTolerances tol,
                   Eigen::Ref<Eigen::MatrixXd> out) {
    // Dormand-Prince 5(4) with the same coefficients, PI controller and
    // dense output as detail::Dopri5, written on scalars.
    constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                     a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                     a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                     a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                     e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                     d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                     d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
    constexpr double kMinStep = 1e-12;
    constexpr long kMaxSteps = 2000000;

    const int n = static_cast<int>(times.size());
    int next_out = 0;
    double t = 0.0;
    double xT = x0[0], xTs = x0[1], xV = x0[2];
    while (next_out < n && times[static_cast<size_t>(next_out)] <= t) {
        out.row(next_out) << xT, xTs, xV;
        ++next_out;
    }
    if (next_out >= n) return;
    const double t_end = times[static_cast<size_t>(n - 1)];

    Triple k1 = rhs3(p, xT, xTs, xV);
    if (!std::isfinite(k1.T + k1.Ts + k1.V))
        throw StepSizeUnderflow("non-finite derivative at t=0");

    // initial step heuristic, matching the generic path
    double h;
    {
        double d0 = 0.0, dd1 = 0.0;
        const double x_arr[3] = {xT, xTs, xV};
        const double k_arr[3] = {k1.T, k1.Ts, k1.V};
        for (int i = 0; i < 3; ++i) {
            const double sc = tol.abs + tol.rel * std::abs(x_arr[i]);
            d0 = std::max(d0, std::abs(x_arr[i]) / sc);
            dd1 = std::max(dd1, std::abs(k_arr[i]) / sc);
        }
        h = (d0 < 1e-5 || dd1 < 1e-5) ? 1e-6 : 0.01 * (d0 / dd1);
        h = std::min(h, t_end - t);
    }

    double err_old = 1e-4;
    long steps = 0;
    while (t < t_end) {
        if (++steps > kMaxSteps)
            throw StepSizeUnderflow("step budget exhausted at t=" + std::to_string(t));
        if (h < kMinStep)
            throw StepSizeUnderflow("step size underflow at t=" + std::to_string(t));
        if (t + h > t_end) h = t_end - t;

        const Triple k2 = rhs3(p, xT + h * a21 * k1.T, xTs + h * a21 * k1.Ts,
                               xV + h * a21 * k1.V);
        const Triple k3 =
            rhs3(p, xT + h * (a31 * k1.T + a32 * k2.T), xTs + h * (a31 * k1.Ts + a32 * k2.Ts),
                 xV + h * (a31 * k1.V + a32 * k2.V));
        const Triple k4 = rhs3(p, xT + h * (a41 * k1.T + a42 * k2.T + a43 * k3.T),
                               xTs + h * (a41 * k1.Ts + a42 * k2.Ts + a43 * k3.Ts),
                               xV + h * (a41 * k1.V + a42 * k2.V + a43 * k3.V));
        const Triple k5 = rhs3(p, xT + h * (a51 * k1.T + a52 * k2.T + a53 * k3.T + a54 * k4.T),
                               xTs + h * (a51 * k1.Ts + a52 * k2.Ts + a53 * k3.Ts + a54 * k4.Ts),
                               xV + h * (a51 * k1.V + a52 * k2.V + a53 * k3.V + a54 * k4.V));
        const Triple k6 =
            rhs3(p, xT + h * (a61 * k1.T + a62 * k2.T + a63 * k3.T + a64 * k4.T + a65 * k5.T),
                 xTs + h * (a61 * k1.Ts + a62 * k2.Ts + a63 * k3.Ts + a64 * k4.Ts + a65 * k5.Ts),
                 xV + h * (a61 * k1.V + a62 * k2.V + a63 * k3.V + a64 * k4.V + a65 * k5.V));
        const double yT = xT + h * (a71 * k1.T + a73 * k3.T + a74 * k4.T + a75 * k5.T + a76 * k6.T);
        const double yTs =
            xTs + h * (a71 * k1.Ts + a73 * k3.Ts + a74 * k4.Ts + a75 * k5.Ts + a76 * k6.Ts);
        const double yV = xV + h * (a71 * k1.V + a73 * k3.V + a74 * k4.V + a75 * k5.V + a76 * k6.V);
        const Triple k7 = rhs3(p, yT, yTs, yV);

        double err;
        if (std::isfinite(yT + yTs + yV) && std::isfinite(k7.T + k7.Ts + k7.V)) {
            const double eT = h * (e1 * k1.T + e3 * k3.T + e4 * k4.T + e5 * k5.T + e6 * k6.T +
                                   e7 * k7.T);
            const double eTs = h * (e1 * k1.Ts + e3 * k3.Ts + e4 * k4.Ts + e5 * k5.Ts +
                                    e6 * k6.Ts + e7 * k7.Ts);
            const double eV = h * (e1 * k1.V + e3 * k3.V + e4 * k4.V + e5 * k5.V + e6 * k6.V +
                                   e7 * k7.V);
            const double scT = tol.abs + tol.rel * std::max(std::abs(xT), std::abs(yT));
            const double scTs = tol.abs + tol.rel * std::max(std::abs(xTs), std::abs(yTs));
            const double scV = tol.abs + tol.rel * std::max(std::abs(xV), std::abs(yV));
            err = std::sqrt(((eT / scT) * (eT / scT) + (eTs / scTs) * (eTs / scTs) +
                             (eV / scV) * (eV / scV)) /
                            3.0);
        } else {
            err = std::numeric_limits<double>::quiet_NaN();
        }

        if (std::isfinite(err) && err <= 1.0) {
            bool have_interp = false;
            double r1T = 0, r1Ts = 0, r1V = 0, r2T = 0, r2Ts = 0, r2V = 0, r3T = 0, r3Ts = 0,
                   r3V = 0, r4T = 0, r4Ts = 0, r4V = 0, r5T = 0, r5Ts = 0, r5V = 0;
            while (next_out < n &&
                   times[static_cast<size_t>(next_out)] <= t + h + 1e-14 * (1.0 + std::abs(t))) {
                if (!have_interp) {
                    r1T = xT;
                    r1Ts = xTs;
                    r1V = xV;
                    r2T = yT - xT;
                    r2Ts = yTs - xTs;
                    r2V = yV - xV;
                    r3T = h * k1.T - r2T;
                    r3Ts = h * k1.Ts - r2Ts;
                    r3V = h * k1.V - r2V;
                    r4T = r2T - h * k7.T - r3T;
                    r4Ts = r2Ts - h * k7.Ts - r3Ts;
                    r4V = r2V - h * k7.V - r3V;
                    r5T = h * (d1 * k1.T + d3 * k3.T + d4 * k4.T + d5 * k5.T + d6 * k6.T +
                               d7 * k7.T);
                    r5Ts = h * (d1 * k1.Ts + d3 * k3.Ts + d4 * k4.Ts + d5 * k5.Ts + d6 * k6.Ts +
                                d7 * k7.Ts);
                    r5V = h * (d1 * k1.V + d3 * k3.V + d4 * k4.V + d5 * k5.V + d6 * k6.V +
                               d7 * k7.V);
                    have_interp = true;
                }
                const double s = (times[static_cast<size_t>(next_out)] - t) / h;
                const double s1 = 1.0 - s;
                out(next_out, 0) = r1T + s * (r2T + s1 * (r3T + s * (r4T + s1 * r5T)));
                out(next_out, 1) = r1Ts + s * (r2Ts + s1 * (r3Ts + s * (r4Ts + s1 * r5Ts)));
                out(next_out, 2) = r1V + s * (r2V + s1 * (r3V + s * (r4V + s1 * r5V)));
                ++next_out;
            }
            t += h;
            xT = yT;
            xTs = yTs;
            xV = yV;
            k1 = k7;
            const double fac = 0.9 * std::pow(err > 0 ? err : 1e-20, -0.7 / 5.0) *
                               std::pow(err_old, 0.4 / 5.0);
            h *= std::min(5.0, std::max(0.2, fac));
            err_old = std::max(err, 1e-4);
        } else {
            const double fac = std::isfinite(err)
                                   ? std::min(1.0, std::max(0.1, 0.9 * std::pow(err, -0.2)))
                                   : 0.1;
            h *= fac;
        }
    }
}

OdeSystem hiv_system() {
    OdeSystem sys;
    sys.dimension = 3;
    sys.rhs = [](const Eigen::VectorXd& x, const Eigen::VectorXd& params, double /*t*/,
                 Eigen::VectorXd& dxdt) {
        const HivParameters p = hiv_params_from_vector(params);
        const double infection = p.gamma * x[0] * x[2];
        dxdt[0] = p.lambda - infection - p.mu_T * x[0];
        dxdt[1] = infection - p.mu_Tstar * x[1];
        dxdt[2] = p.pi * x[1] - p.mu_V * x[2];
    };
    sys.initial = [](const Eigen::VectorXd& params) -> Eigen::VectorXd {
        return hiv_equilibrium(hiv_params_from_vector(params));
    };
    return sys;
}

} // namespace hlfit
