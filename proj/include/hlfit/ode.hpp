#ifndef HLFIT_ODE_HPP
#define HLFIT_ODE_HPP

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "hlfit/errors.hpp"

namespace hlfit {

// Right-hand side and initial-condition pair defining dX/dt = f(X, xi, t),
// X(0) = h(xi) for a K-dimensional state and a natural-parameter vector xi.
struct OdeSystem {
    int dimension = 0;
    std::function<void(const Eigen::VectorXd& state, const Eigen::VectorXd& params,
                       double t, Eigen::VectorXd& dxdt)>
        rhs;
    std::function<Eigen::VectorXd(const Eigen::VectorXd& params)> initial;
};

struct IntegratorTolerances {
    double rel = 1e-8;
    double abs = 1e-10;
};

// Solution sampled at the requested output times (rows) for K states (cols).
struct Trajectory {
    std::vector<double> times;
    Eigen::MatrixXd states;
};

namespace detail {

// Dormand-Prince 5(4) pair with the order-4 continuous extension and a
// PI step-size controller. Templated on the state type so the three-state
// within-host model runs on fixed-size vectors without heap traffic.
//
// Rhs signature: rhs(const Vec& x, double t, Vec& dxdt).
template <class Vec, class Rhs>
class Dopri5 {
public:
    Dopri5(Rhs rhs, IntegratorTolerances tol) : rhs_(std::move(rhs)), tol_(tol) {}

    static constexpr double kMinStep = 1e-12;
    static constexpr long kMaxSteps = 2000000;

    // Integrates from t0 through the (ascending) output times, writing the
    // dense-output state at each requested time via emit(index, state).
    template <class Emit>
    void run(const Vec& x0, double t0, const std::vector<double>& out_times, Emit&& emit) {
        Vec x = x0;
        const int n = static_cast<int>(out_times.size());
        int next_out = 0;
        double t = t0;
        while (next_out < n && out_times[next_out] <= t) {
            emit(next_out, x);
            ++next_out;
        }
        if (next_out >= n) return;

        const double t_end = out_times[n - 1];
        k1_.resizeLike(x);
        k2_.resizeLike(x);
        k3_.resizeLike(x);
        k4_.resizeLike(x);
        k5_.resizeLike(x);
        k6_.resizeLike(x);
        k7_.resizeLike(x);
        rhs_(x, t, k1_);
        require_finite(k1_, t);
        double h = initial_step(x, t, t_end);
        double err_old = 1e-4;
        long steps = 0;

        while (t < t_end) {
            if (++steps > kMaxSteps)
                throw StepSizeUnderflow("step budget exhausted at t=" + std::to_string(t));
            if (h < kMinStep)
                throw StepSizeUnderflow("step size underflow at t=" + std::to_string(t));
            if (t + h > t_end) h = t_end - t;

            const double err = attempt_step(x, t, h);
            if (std::isfinite(err) && err <= 1.0) {
                // Accepted: dense output for every requested time inside (t, t+h].
                bool have_interp = false;
                while (next_out < n && out_times[next_out] <= t + h + 1e-14 * (1.0 + std::abs(t))) {
                    if (!have_interp) {
                        prepare_interpolation(x, h);
                        have_interp = true;
                    }
                    const double theta = (out_times[next_out] - t) / h;
                    interpolate(theta, x_emit_);
                    emit(next_out, x_emit_);
                    ++next_out;
                }
                t += h;
                x = x_new_;
                k1_ = k7_; // FSAL
                const double fac = safety_ * std::pow(err > 0 ? err : 1e-20, -alpha_) *
                                   std::pow(err_old, beta_);
                h *= clamp(fac, fac_min_, fac_max_);
                err_old = std::max(err, 1e-4);
            } else {
                const double fac = std::isfinite(err)
                                       ? clamp(safety_ * std::pow(err, -0.2), 0.1, 1.0)
                                       : 0.1;
                h *= fac;
            }
        }
    }

private:
    static double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

    static void require_finite(const Vec& v, double t) {
        if (!v.allFinite())
            throw StepSizeUnderflow("non-finite derivative at t=" + std::to_string(t));
    }

    double initial_step(const Vec& x, double t, double t_end) {
        // Hairer's heuristic, simplified: scale by the derivative magnitude.
        double d0 = 0.0, d1 = 0.0;
        for (int i = 0; i < x.size(); ++i) {
            const double sc = tol_.abs + tol_.rel * std::abs(x[i]);
            d0 = std::max(d0, std::abs(x[i]) / sc);
            d1 = std::max(d1, std::abs(k1_[i]) / sc);
        }
        double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * (d0 / d1);
        return std::min(h, t_end - t);
    }

    // One trial step of size h from (t, x); fills x_new_, k2_..k7_ and the
    // interpolation state. Returns the scaled error estimate.
    double attempt_step(const Vec& x, double t, double h) {
        xt_ = x + h * (a21 * k1_);
        rhs_(xt_, t + c2 * h, k2_);
        xt_ = x + h * (a31 * k1_ + a32 * k2_);
        rhs_(xt_, t + c3 * h, k3_);
        xt_ = x + h * (a41 * k1_ + a42 * k2_ + a43 * k3_);
        rhs_(xt_, t + c4 * h, k4_);
        xt_ = x + h * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
        rhs_(xt_, t + c5 * h, k5_);
        xt_ = x + h * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
        rhs_(xt_, t + h, k6_);
        x_new_ = x + h * (a71 * k1_ + a73 * k3_ + a74 * k4_ + a75 * k5_ + a76 * k6_);
        rhs_(x_new_, t + h, k7_);

        if (!x_new_.allFinite() || !k7_.allFinite()) return std::numeric_limits<double>::quiet_NaN();

        double err = 0.0;
        for (int i = 0; i < x.size(); ++i) {
            const double e = h * (e1 * k1_[i] + e3 * k3_[i] + e4 * k4_[i] + e5 * k5_[i] +
                                  e6 * k6_[i] + e7 * k7_[i]);
            const double sc = tol_.abs + tol_.rel * std::max(std::abs(x[i]), std::abs(x_new_[i]));
            err += (e / sc) * (e / sc);
        }
        err = std::sqrt(err / x.size());
        return err;
    }

    // Continuous-extension coefficients; only computed for steps that
    // actually contain an output time.
    void prepare_interpolation(const Vec& x, double h) {
        ydiff_ = x_new_ - x;
        bspl_ = h * k1_ - ydiff_;
        rc4_ = ydiff_ - h * k7_ - bspl_;
        rc5_ = h * (d1 * k1_ + d3 * k3_ + d4 * k4_ + d5 * k5_ + d6 * k6_ + d7 * k7_);
        rc1_ = x;
    }

    void interpolate(double theta, Vec& out) const {
        const double s1 = 1.0 - theta;
        out = rc1_ + theta * (ydiff_ + s1 * (bspl_ + theta * (rc4_ + s1 * rc5_)));
    }

    Rhs rhs_;
    IntegratorTolerances tol_;
    Vec k1_, k2_, k3_, k4_, k5_, k6_, k7_, xt_, x_new_, x_emit_;
    Vec ydiff_, bspl_, rc1_, rc4_, rc5_;

    static constexpr double safety_ = 0.9;
    static constexpr double alpha_ = 0.7 / 5.0; // PI controller exponents
    static constexpr double beta_ = 0.4 / 5.0;
    static constexpr double fac_min_ = 0.2;
    static constexpr double fac_max_ = 5.0;

    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                            a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    static constexpr double d1 = -12715105075.0 / 11282082432.0,
                            d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0,
                            d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
};

} // namespace detail

// Integrates `system` with constant natural parameters from t = output_times[0]
// (states at or before the start time report the initial state) and returns the
// dense-output trajectory at exactly the requested times.
//
// Throws StepSizeUnderflow when the step controller cannot make progress;
// callers treat the parameter point as infeasible.
Trajectory integrate(const OdeSystem& system, const Eigen::VectorXd& params,
                     const Eigen::VectorXd& initial, const std::vector<double>& output_times,
                     IntegratorTolerances tol = {});

// Convenience template for callers holding a concrete functor; avoids the
// std::function hop on hot paths.
template <class Vec, class Rhs>
void integrate_dense(Rhs rhs, const Vec& x0, double t0, const std::vector<double>& output_times,
                     IntegratorTolerances tol, Eigen::Ref<Eigen::MatrixXd> out_states) {
    detail::Dopri5<Vec, Rhs> stepper(std::move(rhs), tol);
    stepper.run(x0, t0, output_times,
                [&](int idx, const Vec& x) { out_states.row(idx) = x.transpose(); });
}

} // namespace hlfit

#endif
