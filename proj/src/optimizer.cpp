#include "hlfit/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "hlfit/errors.hpp"
#include "hlfit/parallel.hpp"

namespace hlfit {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double penalty_value(const Eigen::VectorXd& alpha, const Eigen::VectorXd& a_i,
                     const Eigen::VectorXd& inv_tau_sq) {
    double pen = 0.0;
    for (int r = 0; r < alpha.size(); ++r) {
        const double dev = a_i[r] - alpha[r];
        pen += dev * dev * inv_tau_sq[r];
    }
    return 0.5 * pen;
}

Eigen::VectorXd flat_point(const Eigen::VectorXd& theta, const Eigen::MatrixXd& a) {
    Eigen::VectorXd v(theta.size() + a.size());
    v.head(theta.size()) = theta;
    for (int i = 0; i < a.rows(); ++i)
        v.segment(theta.size() + i * a.cols(), a.cols()) = a.row(i).transpose();
    return v;
}

// HL evaluated with per-subject parallelism; -inf as soon as any subject is
// infeasible.
double eval_hl(const SubjectObjective& obj, const Eigen::VectorXd& theta,
               const Eigen::MatrixXd& a, const PenaltyConfig& penalty, int workers) {
    const int n = obj.n_subjects();
    const Eigen::VectorXd beta = theta.tail(obj.n_beta());
    const Eigen::VectorXd alpha = theta.head(obj.n_random());
    const Eigen::VectorXd inv_tau_sq = penalty.inv_tau_sq();
    Eigen::VectorXd li(n);
    parallel_for(n, workers,
                 [&](int i) { li[i] = obj.loglik(i, beta, a.row(i).transpose()); });
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!std::isfinite(li[i])) return kNegInf;
        sum += li[i] - penalty_value(alpha, a.row(i).transpose(), inv_tau_sq);
    }
    return sum / n;
}

} // namespace

std::string to_string(Algorithm a) {
    switch (a) {
    case Algorithm::Hybrid: return "hybrid";
    case Algorithm::Global: return "global";
    default: return "patient";
    }
}

std::string to_string(StopReason r) {
    switch (r) {
    case StopReason::Converged: return "converged";
    case StopReason::IterationLimit: return "iteration-limit";
    case StopReason::DampingOverflow: return "damping-overflow";
    case StopReason::DerivativeFailure: return "derivative-failure";
    default: return "infeasible-start";
    }
}

Algorithm algorithm_from_string(const std::string& s) {
    if (s == "hybrid") return Algorithm::Hybrid;
    if (s == "global") return Algorithm::Global;
    if (s == "patient") return Algorithm::Patient;
    throw ConfigError("algorithm: expected hybrid, global or patient, got '" + s + "'");
}

// ---------------------------------------------------------------------------
// Marquardt step
// ---------------------------------------------------------------------------

MarquardtOutcome marquardt_step(const ScalarFn& objective, const Eigen::VectorXd& x, double fx,
                                const Eigen::VectorXd& grad, const Eigen::MatrixXd& hess,
                                double damping, const FitOptions& opt) {
    MarquardtOutcome out;
    out.x = x;
    out.objective = fx;
    out.damping = damping;

    const Eigen::MatrixXd M = -hess;
    const Eigen::VectorXd dscale = M.diagonal().cwiseMax(opt.damping_floor);
    double lambda = damping;

    for (int rej = 0; rej < opt.max_rejections; ++rej) {
        Eigen::MatrixXd Md = M;
        Md.diagonal() += lambda * dscale;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(Md);
        if (ldlt.info() == Eigen::Success) {
            const Eigen::VectorXd delta = ldlt.solve(grad);
            if (delta.allFinite()) {
                const Eigen::VectorXd x_new = x + delta;
                const double f_new = objective(x_new);
                if (f_new >= fx) {
                    out.accepted = true;
                    out.x = x_new;
                    out.objective = f_new;
                    out.damping = std::max(lambda / 10.0, 1e-14);
                    out.rejections = rej;
                    return out;
                }
            }
        }
        lambda *= 10.0;
        out.rejections = rej + 1;
    }
    out.overflow = true;
    out.damping = lambda;
    return out;
}

// ---------------------------------------------------------------------------
// Definiteness and the block solve
// ---------------------------------------------------------------------------

bool is_positive_definite(const Eigen::MatrixXd& M, double pivot_tol) {
    if (M.rows() == 0) return true;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    if (ldlt.info() != Eigen::Success) return false;
    return ldlt.vectorD().minCoeff() > pivot_tol;
}

bool solve_damped_block(const BlockHessian& H, const HlGradient& g, double lambda,
                        double damping_floor, HlGradient& delta) {
    const int R = H.R, p = H.p, n = H.n, q = R + p;

    // Damped top-left block of M = -H.
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(q, q);
    {
        const Eigen::VectorXd mA = -H.A_diag;
        S.topLeftCorner(R, R).diagonal() = mA + lambda * mA.cwiseMax(damping_floor);
        Eigen::MatrixXd TB = -H.B;
        TB.diagonal() += lambda * (-H.B.diagonal()).cwiseMax(damping_floor).eval();
        S.bottomRightCorner(p, p) = TB;
    }
    Eigen::VectorXd rhs(q);
    rhs.head(R) = g.alpha;
    rhs.tail(p) = g.beta;

    // Eliminate each a_i block: S -= U_i W_i^{-1} U_i', rhs -= U_i W_i^{-1} g_i
    // with U_i = M(top, a_i) = [-diag(D); -B_i] and W_i = damped(-C_i).
    std::vector<Eigen::LDLT<Eigen::MatrixXd>> w_fact;
    w_fact.reserve(static_cast<size_t>(n));
    std::vector<Eigen::MatrixXd> u_blocks(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Eigen::MatrixXd Wi = -H.Ci[static_cast<size_t>(i)];
        Wi.diagonal() += lambda * (-H.Ci[static_cast<size_t>(i)].diagonal())
                                      .cwiseMax(damping_floor)
                                      .eval();
        w_fact.emplace_back(Wi);
        if (w_fact.back().info() != Eigen::Success) return false;

        Eigen::MatrixXd Ui = Eigen::MatrixXd::Zero(q, R);
        Ui.topLeftCorner(R, R).diagonal() = -H.D_diag;
        Ui.bottomLeftCorner(p, R) = -H.Bi[static_cast<size_t>(i)];
        u_blocks[static_cast<size_t>(i)] = Ui;

        const Eigen::MatrixXd WinvUt = w_fact.back().solve(Ui.transpose());
        const Eigen::VectorXd Winvg = w_fact.back().solve(g.a.row(i).transpose());
        if (!WinvUt.allFinite() || !Winvg.allFinite()) return false;
        S -= Ui * WinvUt;
        rhs -= Ui * Winvg;
    }

    Eigen::LDLT<Eigen::MatrixXd> s_fact(S);
    if (s_fact.info() != Eigen::Success) return false;
    const Eigen::VectorXd d_top = s_fact.solve(rhs);
    if (!d_top.allFinite()) return false;

    delta.alpha = d_top.head(R);
    delta.beta = d_top.tail(p);
    delta.a.resize(n, R);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd ri =
            g.a.row(i).transpose() - u_blocks[static_cast<size_t>(i)].transpose() * d_top;
        const Eigen::VectorXd di = w_fact[static_cast<size_t>(i)].solve(ri);
        if (!di.allFinite()) return false;
        delta.a.row(i) = di.transpose();
    }
    return true;
}

// ---------------------------------------------------------------------------
// Patient-by-patient sweep
// ---------------------------------------------------------------------------

SweepResult patient_by_patient_iteration(const SubjectObjective& obj, Eigen::VectorXd& theta,
                                         Eigen::MatrixXd& a, const PenaltyConfig& penalty,
                                         SweepState& state, const FitOptions& opt) {
    const int n = obj.n_subjects();
    const int R = obj.n_random();
    const int p = obj.n_beta();
    const Eigen::VectorXd inv_tau_sq = penalty.inv_tau_sq();
    Eigen::VectorXd alpha = theta.head(R);
    Eigen::VectorXd beta = theta.tail(p);

    SweepResult res;
    Eigen::VectorXd li(n); // loglik values at the post-step-1 points
    std::vector<char> subject_pd(static_cast<size_t>(n), 1);
    std::vector<char> overflowed(static_cast<size_t>(n), 0);
    std::vector<char> fd_failed(static_cast<size_t>(n), 0);

    // Step 1: one Marquardt step per subject in a_i at fixed theta.
    parallel_for(n, opt.workers, [&](int i) {
        const Eigen::VectorXd a_i = a.row(i).transpose();
        const ScalarFn lik = [&](const Eigen::VectorXd& u) { return obj.loglik(i, beta, u); };
        FdResult fd;
        try {
            fd = fd_gradient_hessian(lik, a_i);
        } catch (const FiniteDifferenceFailure&) {
            fd_failed[static_cast<size_t>(i)] = 1;
            subject_pd[static_cast<size_t>(i)] = 0;
            li[i] = obj.loglik(i, beta, a_i);
            return;
        }
        Eigen::VectorXd grad_hl =
            fd.grad - (a_i - alpha).cwiseProduct(inv_tau_sq);
        Eigen::MatrixXd hess_hl = fd.hess;
        hess_hl.diagonal() -= inv_tau_sq;

        subject_pd[static_cast<size_t>(i)] =
            is_positive_definite(-hess_hl / n, opt.pivot_tol) ? 1 : 0;

        const double hl_cur = fd.f0 - penalty_value(alpha, a_i, inv_tau_sq);
        const ScalarFn hl_fn = [&](const Eigen::VectorXd& u) {
            const double l = obj.loglik(i, beta, u);
            return std::isfinite(l) ? l - penalty_value(alpha, u, inv_tau_sq) : kNegInf;
        };
        const MarquardtOutcome out = marquardt_step(hl_fn, a_i, hl_cur, grad_hl, hess_hl,
                                                    state.subject_damping[i], opt);
        if (out.overflow) {
            overflowed[static_cast<size_t>(i)] = 1;
            li[i] = fd.f0;
            state.subject_damping[i] = out.damping;
            return;
        }
        a.row(i) = out.x.transpose();
        state.subject_damping[i] = out.damping;
        li[i] = out.objective + penalty_value(alpha, out.x, inv_tau_sq);
    });

    for (int i = 0; i < n; ++i) {
        res.overflow_subjects += overflowed[static_cast<size_t>(i)];
        res.fd_failed_subjects += fd_failed[static_cast<size_t>(i)];
        res.indefinite_blocks += subject_pd[static_cast<size_t>(i)] ? 0 : 1;
    }

    // Step 2: alpha_r <- mean_i a_ir (zeroes the analytic alpha-gradient).
    alpha = a.colwise().mean().transpose();
    theta.head(R) = alpha;

    double pen_total = 0.0;
    for (int i = 0; i < n; ++i)
        pen_total += penalty_value(alpha, a.row(i).transpose(), inv_tau_sq);
    pen_total /= n;

    if (p == 0) {
        res.objective = li.mean() - pen_total;
        return res;
    }

    // Step 3: one Marquardt step in beta using block B, (a, alpha) frozen.
    Eigen::VectorXd g_beta = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd l_at_beta(n);
    std::vector<Eigen::VectorXd> gb(static_cast<size_t>(n));
    std::vector<Eigen::MatrixXd> hb(static_cast<size_t>(n));
    bool beta_fd_failed = false;
    try {
        parallel_for(n, opt.workers, [&](int i) {
            const Eigen::VectorXd a_i = a.row(i).transpose();
            const ScalarFn lik = [&](const Eigen::VectorXd& u) {
                return obj.loglik(i, u, a_i);
            };
            FdResult fd = fd_gradient_hessian(lik, beta, obj.active_beta(i));
            gb[static_cast<size_t>(i)] = std::move(fd.grad);
            hb[static_cast<size_t>(i)] = std::move(fd.hess);
            l_at_beta[i] = fd.f0;
        });
    } catch (const FiniteDifferenceFailure&) {
        beta_fd_failed = true;
    }

    if (beta_fd_failed) {
        res.beta_indefinite = true;
        res.objective = li.mean() - pen_total;
        return res;
    }

    for (int i = 0; i < n; ++i) {
        g_beta += gb[static_cast<size_t>(i)];
        B += hb[static_cast<size_t>(i)];
    }
    g_beta /= n;
    B /= n;
    res.beta_indefinite = !is_positive_definite(-B, opt.pivot_tol);

    const double hl_cur = l_at_beta.mean() - pen_total;
    const ScalarFn beta_obj = [&](const Eigen::VectorXd& u) {
        Eigen::VectorXd l(n);
        parallel_for(n, opt.workers,
                     [&](int i) { l[i] = obj.loglik(i, u, a.row(i).transpose()); });
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            if (!std::isfinite(l[i])) return kNegInf;
            sum += l[i];
        }
        return sum / n - pen_total;
    };
    const MarquardtOutcome out =
        marquardt_step(beta_obj, beta, hl_cur, g_beta, B, state.beta_damping, opt);
    state.beta_damping = out.damping;
    if (out.accepted) {
        theta.tail(p) = out.x;
        res.objective = out.objective;
    } else {
        res.objective = hl_cur;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Fit driver
// ---------------------------------------------------------------------------

namespace {

struct GlobalDerivatives {
    std::vector<SubjectDerivatives> blocks;
    HlGradient grad;
    BlockHessian hess;
    double hl = 0.0;
    int indefinite = 0;
};

GlobalDerivatives compute_global_derivatives(const SubjectObjective& obj,
                                             const Eigen::VectorXd& theta,
                                             const Eigen::MatrixXd& a,
                                             const PenaltyConfig& penalty,
                                             const FitOptions& opt) {
    const int n = obj.n_subjects();
    const Eigen::VectorXd beta = theta.tail(obj.n_beta());
    const Eigen::VectorXd alpha = theta.head(obj.n_random());
    const Eigen::VectorXd inv_tau_sq = penalty.inv_tau_sq();

    GlobalDerivatives d;
    d.blocks.resize(static_cast<size_t>(n));
    parallel_for(n, opt.workers, [&](int i) {
        d.blocks[static_cast<size_t>(i)] =
            subject_derivatives(obj, i, beta, a.row(i).transpose());
    });
    d.grad = assemble_gradient(d.blocks, theta, a, penalty);
    d.hess = assemble(d.blocks, penalty, n);

    double pen_total = 0.0, lsum = 0.0;
    for (int i = 0; i < n; ++i) {
        pen_total += penalty_value(alpha, a.row(i).transpose(), inv_tau_sq);
        lsum += d.blocks[static_cast<size_t>(i)].loglik;
    }
    d.hl = (lsum - pen_total) / n;
    for (int i = 0; i < n; ++i)
        if (!is_positive_definite(-d.hess.Ci[static_cast<size_t>(i)], opt.pivot_tol))
            ++d.indefinite;
    return d;
}

// Assembled HL gradient, gradient-only path (used for the convergence test
// during the patient phase).
HlGradient compute_gradient_only(const SubjectObjective& obj, const Eigen::VectorXd& theta,
                                 const Eigen::MatrixXd& a, const PenaltyConfig& penalty,
                                 const FitOptions& opt) {
    const int n = obj.n_subjects();
    const int R = obj.n_random();
    const int p = obj.n_beta();
    const Eigen::VectorXd beta = theta.tail(p);
    std::vector<SubjectDerivatives> blocks(static_cast<size_t>(n));
    parallel_for(n, opt.workers, [&](int i) {
        Eigen::VectorXd v(R + p);
        v.head(R) = a.row(i).transpose();
        v.tail(p) = beta;
        const ScalarFn f = [&](const Eigen::VectorXd& u) {
            return obj.loglik(i, u.tail(p), u.head(R));
        };
        std::vector<int> coords(static_cast<size_t>(R));
        for (int r = 0; r < R; ++r) coords[static_cast<size_t>(r)] = r;
        for (int b : obj.active_beta(i)) coords.push_back(R + b);
        blocks[static_cast<size_t>(i)].grad = fd_gradient(f, v, coords);
    });
    return assemble_gradient(blocks, theta, a, penalty);
}

FitResult fit_driver(const SubjectObjective& obj, Eigen::VectorXd theta, Eigen::MatrixXd a,
                     const PenaltyConfig& penalty, const FitOptions& opt) {
    const int n = obj.n_subjects();
    const int R = obj.n_random();
    const int p = obj.n_beta();
    if (theta.size() != R + p) throw std::invalid_argument("fit: theta dimension mismatch");
    if (a.rows() != n || a.cols() != R) throw std::invalid_argument("fit: a0 dimension mismatch");
    if (opt.max_iterations < 1) throw std::invalid_argument("fit: max_iterations must be >= 1");

    FitResult result;

    double hl = eval_hl(obj, theta, a, penalty, opt.workers);
    if (!std::isfinite(hl)) {
        // Infeasible start: let the model nudge theta into the feasible
        // region, resetting the random effects to the repaired alpha.
        theta = obj.repair_start(theta);
        a = theta.head(R).transpose().replicate(n, 1);
        hl = eval_hl(obj, theta, a, penalty, opt.workers);
        if (!std::isfinite(hl)) {
            result.theta = theta;
            result.a = a;
            result.objective = hl;
            result.report.reason = StopReason::InfeasibleStart;
            result.report.detail = "h-loglikelihood is -inf at the starting point";
            return result;
        }
    }

    bool global_phase = (opt.algorithm == Algorithm::Global);
    SweepState sweep{Eigen::VectorXd::Constant(n, opt.initial_damping), opt.initial_damping};
    double global_damping = opt.initial_damping;

    double prev_obj = hl;
    Eigen::VectorXd prev_point = flat_point(theta, a);
    bool have_step = false;
    double last_obj_change = 0.0, last_param_change = 0.0;
    double grad_max = std::numeric_limits<double>::quiet_NaN();
    int last_indefinite = -1;

    const auto cheap_criteria = [&](double obj_change, double param_change) {
        return std::abs(obj_change) <= opt.rel_obj_tol * std::max(1.0, std::abs(prev_obj)) &&
               param_change <= opt.param_tol;
    };
    const auto finish = [&](StopReason reason, int iterations, const std::string& detail) {
        result.theta = theta;
        result.a = a;
        result.objective = hl;
        result.report.converged = (reason == StopReason::Converged);
        result.report.iterations = iterations;
        result.report.objective = hl;
        result.report.grad_max_norm = grad_max;
        result.report.reason = reason;
        result.report.detail = detail;
        return result;
    };

    for (int iter = 1; iter <= opt.max_iterations; ++iter) {
        if (!global_phase) {
            const SweepResult sw = patient_by_patient_iteration(obj, theta, a, penalty, sweep, opt);
            hl = sw.objective;
            last_indefinite = sw.indefinite_blocks + (sw.beta_indefinite ? 1 : 0);
            result.trace.push_back({iter, hl, sweep.subject_damping.mean(), 'P',
                                    last_indefinite});
            if (opt.algorithm != Algorithm::Patient && sw.all_definite()) global_phase = true;

            const Eigen::VectorXd point = flat_point(theta, a);
            last_obj_change = hl - prev_obj;
            last_param_change = (point - prev_point).cwiseAbs().maxCoeff();
            if (cheap_criteria(last_obj_change, last_param_change)) {
                try {
                    grad_max =
                        compute_gradient_only(obj, theta, a, penalty, opt).max_norm();
                } catch (const FiniteDifferenceFailure& e) {
                    return finish(StopReason::DerivativeFailure, iter, e.what());
                }
                if (grad_max <= opt.grad_tol)
                    return finish(StopReason::Converged, iter, "");
            }
            prev_obj = hl;
            prev_point = point;
        } else {
            GlobalDerivatives d;
            try {
                d = compute_global_derivatives(obj, theta, a, penalty, opt);
            } catch (const FiniteDifferenceFailure& e) {
                return finish(StopReason::DerivativeFailure, iter - 1, e.what());
            }
            hl = d.hl;
            grad_max = d.grad.max_norm();
            last_indefinite = d.indefinite;
            if (have_step && cheap_criteria(last_obj_change, last_param_change) &&
                grad_max <= opt.grad_tol)
                return finish(StopReason::Converged, iter - 1, "");

            double lambda = global_damping;
            bool accepted = false;
            for (int rej = 0; rej < opt.max_rejections && !accepted; ++rej) {
                HlGradient delta;
                if (solve_damped_block(d.hess, d.grad, lambda, opt.damping_floor, delta)) {
                    Eigen::VectorXd theta_c = theta;
                    theta_c.head(R) += delta.alpha;
                    theta_c.tail(p) += delta.beta;
                    const Eigen::MatrixXd a_c = a + delta.a;
                    const double hl_c = eval_hl(obj, theta_c, a_c, penalty, opt.workers);
                    if (hl_c >= d.hl) {
                        last_obj_change = hl_c - prev_obj;
                        theta = theta_c;
                        a = a_c;
                        hl = hl_c;
                        global_damping = std::max(lambda / 10.0, 1e-14);
                        accepted = true;
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if (!accepted) {
                std::ostringstream msg;
                msg << "damping overflow at iteration " << iter << " (lambda " << lambda
                    << ", " << d.indefinite << " indefinite subject blocks)";
                return finish(StopReason::DampingOverflow, iter - 1, msg.str());
            }
            result.trace.push_back({iter, hl, global_damping * 10.0, 'G', last_indefinite});
            const Eigen::VectorXd point = flat_point(theta, a);
            last_param_change = (point - prev_point).cwiseAbs().maxCoeff();
            prev_obj = hl;
            prev_point = point;
            have_step = true;
        }
    }

    std::ostringstream msg;
    msg << "iteration limit " << opt.max_iterations << " reached";
    if (last_indefinite > 0) msg << " with " << last_indefinite << " indefinite blocks";
    return finish(StopReason::IterationLimit, opt.max_iterations, msg.str());
}

} // namespace

FitResult fit(const SubjectObjective& obj, const Eigen::VectorXd& theta0,
              const Eigen::MatrixXd& a0, const PenaltyConfig& penalty, FitOptions opt) {
    return fit_driver(obj, theta0, a0, penalty, opt);
}

FitResult fit(const SubjectObjective& obj, const Eigen::VectorXd& theta0,
              const PenaltyConfig& penalty, FitOptions opt) {
    const Eigen::MatrixXd a0 =
        theta0.head(obj.n_random()).transpose().replicate(obj.n_subjects(), 1);
    return fit_driver(obj, theta0, a0, penalty, opt);
}

FitResult hybrid_fit(const SubjectObjective& obj, const Eigen::VectorXd& theta0,
                     const PenaltyConfig& penalty, FitOptions opt) {
    opt.algorithm = Algorithm::Hybrid;
    return fit(obj, theta0, penalty, opt);
}

FitResult global_fit(const SubjectObjective& obj, const Eigen::VectorXd& theta0,
                     const PenaltyConfig& penalty, FitOptions opt) {
    opt.algorithm = Algorithm::Global;
    return fit(obj, theta0, penalty, opt);
}

} // namespace hlfit
