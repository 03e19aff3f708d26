#include "hlfit/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hlfit/errors.hpp"
#include "hlfit/optimizer.hpp"
#include "hlfit/parallel.hpp"
#include "hlfit/stats.hpp"

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
} // namespace

Eigen::VectorXd refine_subject_mode(const SubjectObjective& obj, int subject,
                                    const Eigen::VectorXd& theta, const Eigen::VectorXd& a_init,
                                    const PenaltyConfig& penalty, const InferenceOptions& opt) {
    const int R = obj.n_random();
    if (R == 0) return a_init;
    const Eigen::VectorXd alpha = theta.head(R);
    const Eigen::VectorXd beta = theta.tail(obj.n_beta());
    const Eigen::VectorXd inv_tau_sq = penalty.inv_tau_sq();

    Eigen::VectorXd a_i = a_init;
    FitOptions step_opt;
    step_opt.damping_floor = 1e-12;
    double damping = opt.initial_damping;

    const ScalarFn hl_fn = [&](const Eigen::VectorXd& u) {
        const double l = obj.loglik(subject, beta, u);
        return std::isfinite(l) ? l - penalty_value(alpha, u, inv_tau_sq) : kNegInf;
    };

    for (int it = 0; it < opt.inner_max_iter; ++it) {
        const ScalarFn lik = [&](const Eigen::VectorXd& u) { return obj.loglik(subject, beta, u); };
        FdResult fd = fd_gradient_hessian(lik, a_i);
        Eigen::VectorXd grad = fd.grad - (a_i - alpha).cwiseProduct(inv_tau_sq);
        if (grad.cwiseAbs().maxCoeff() <= opt.inner_grad_tol) return a_i;
        Eigen::MatrixXd hess = fd.hess;
        hess.diagonal() -= inv_tau_sq;

        const double hl_cur = fd.f0 - penalty_value(alpha, a_i, inv_tau_sq);
        const MarquardtOutcome out =
            marquardt_step(hl_fn, a_i, hl_cur, grad, hess, damping, step_opt);
        if (out.overflow) return a_i; // stalled; best point so far
        if ((out.x - a_i).cwiseAbs().maxCoeff() < 1e-13) return out.x;
        a_i = out.x;
        damping = out.damping;
    }
    return a_i;
}

Eigen::VectorXd subject_score(const SubjectObjective& obj, int subject,
                              const Eigen::VectorXd& theta, const Eigen::VectorXd& a_hat_i) {
    const int R = obj.n_random();
    const int p = obj.n_beta();
    Eigen::VectorXd v(R + p);
    v.head(R) = a_hat_i;
    v.tail(p) = theta.tail(p);
    const ScalarFn f = [&](const Eigen::VectorXd& u) {
        return obj.loglik(subject, u.tail(p), u.head(R));
    };
    std::vector<int> coords(static_cast<size_t>(R));
    for (int r = 0; r < R; ++r) coords[static_cast<size_t>(r)] = r;
    for (int b : obj.active_beta(subject)) coords.push_back(R + b);
    // d l/d alpha_r = d l/d a_r at fixed b, so the joint (a, beta) gradient is
    // already the theta-ordered score.
    return fd_gradient(f, v, coords);
}

Eigen::MatrixXd subject_hessian(const SubjectObjective& obj, int subject,
                                const Eigen::VectorXd& theta, const Eigen::VectorXd& a_hat_i,
                                const PenaltyConfig& penalty) {
    const int R = obj.n_random();
    const int p = obj.n_beta();
    Eigen::VectorXd v(R + p);
    v.head(R) = a_hat_i;
    v.tail(p) = theta.tail(p);
    const ScalarFn f = [&](const Eigen::VectorXd& u) {
        return obj.loglik(subject, u.tail(p), u.head(R));
    };
    std::vector<int> coords(static_cast<size_t>(R));
    for (int r = 0; r < R; ++r) coords[static_cast<size_t>(r)] = r;
    for (int b : obj.active_beta(subject)) coords.push_back(R + b);
    const FdResult fd = fd_gradient_hessian(f, v, coords);
    if (R == 0) return fd.hess; // no random effects: ordinary observed Hessian

    // With x = (alpha, beta) and z = b: l_xx equals the joint (a, beta)
    // Hessian, l_xz stacks [l_aa; l_ba], l_zz = l_aa.
    const Eigen::MatrixXd l_aa = fd.hess.topLeftCorner(R, R);
    const Eigen::MatrixXd l_ba = fd.hess.bottomLeftCorner(p, R);
    Eigen::MatrixXd l_xz(R + p, R);
    l_xz.topRows(R) = l_aa;
    l_xz.bottomRows(p) = l_ba;

    Eigen::MatrixXd bracket = l_aa;
    bracket.diagonal() -= penalty.inv_tau_sq();

    const Eigen::LDLT<Eigen::MatrixXd> fact(bracket);
    const Eigen::VectorXd d = fact.vectorD().cwiseAbs();
    if (fact.info() != Eigen::Success || d.minCoeff() <= 1e-12 * std::max(1.0, d.maxCoeff()))
        throw SingularInnerBlock("subject " + std::to_string(subject) +
                                 ": inner curvature block is numerically singular");
    const Eigen::MatrixXd correction = l_xz * fact.solve(l_xz.transpose());
    return fd.hess - correction;
}

SandwichCovariance sandwich(const SubjectObjective& obj, const Eigen::VectorXd& theta_hat,
                            const Eigen::MatrixXd& a_warm, const PenaltyConfig& penalty,
                            const InferenceOptions& opt) {
    const int n = obj.n_subjects();
    const int q = obj.n_random() + obj.n_beta();

    std::vector<Eigen::VectorXd> scores(static_cast<size_t>(n));
    std::vector<Eigen::MatrixXd> hessians(static_cast<size_t>(n));
    std::vector<char> ok(static_cast<size_t>(n), 0);
    parallel_for(n, opt.workers, [&](int i) {
        const Eigen::VectorXd a_hat =
            refine_subject_mode(obj, i, theta_hat, a_warm.row(i).transpose(), penalty, opt);
        try {
            hessians[static_cast<size_t>(i)] = subject_hessian(obj, i, theta_hat, a_hat, penalty);
        } catch (const SingularInnerBlock&) {
            return; // excluded below
        }
        scores[static_cast<size_t>(i)] = subject_score(obj, i, theta_hat, a_hat);
        ok[static_cast<size_t>(i)] = 1;
    });

    SandwichCovariance out;
    out.bread = Eigen::MatrixXd::Zero(q, q);
    out.meat = Eigen::MatrixXd::Zero(q, q);
    for (int i = 0; i < n; ++i) {
        if (!ok[static_cast<size_t>(i)]) {
            out.excluded.push_back(i);
            continue;
        }
        out.bread += hessians[static_cast<size_t>(i)];
        out.meat += scores[static_cast<size_t>(i)] * scores[static_cast<size_t>(i)].transpose();
        ++out.n_used;
    }
    if (out.n_used == 0) throw SingularInnerBlock("sandwich: no usable subjects");
    out.bread /= out.n_used;
    out.meat /= out.n_used;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.bread);
    const Eigen::VectorXd ev = eig.eigenvalues().cwiseAbs();
    if (ev.minCoeff() <= 0.0)
        throw SingularInnerBlock("sandwich: mean Hessian (bread) is singular");
    out.bread_condition = ev.maxCoeff() / ev.minCoeff();

    const Eigen::MatrixXd bread_inv =
        eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
        eig.eigenvectors().transpose();
    Eigen::MatrixXd cov = bread_inv * out.meat * bread_inv / out.n_used;
    out.covariance = 0.5 * (cov + cov.transpose());
    return out;
}

WaldResult wald_contrast(const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& covariance,
                         const Eigen::VectorXd& contrast) {
    if (contrast.size() != theta_hat.size())
        throw std::invalid_argument("wald_contrast: contrast dimension mismatch");
    WaldResult r;
    r.estimate = contrast.dot(theta_hat);
    r.variance = contrast.dot(covariance * contrast);
    if (!(r.variance > 0.0))
        throw std::invalid_argument("wald_contrast: contrast variance is not positive");
    r.statistic = r.estimate / std::sqrt(r.variance);
    r.p_value = 2.0 * normal_cdf(-std::abs(r.statistic));
    return r;
}

std::vector<ConfidenceInterval> confidence_intervals(const Eigen::VectorXd& theta_hat,
                                                     const Eigen::MatrixXd& covariance,
                                                     double level) {
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument("confidence_intervals: level outside (0,1)");
    const double z = normal_quantile(0.5 * (1.0 + level));
    std::vector<ConfidenceInterval> out;
    out.reserve(static_cast<size_t>(theta_hat.size()));
    for (int j = 0; j < theta_hat.size(); ++j) {
        const double se = std::sqrt(std::max(covariance(j, j), 0.0));
        out.push_back({theta_hat[j] - z * se, theta_hat[j] + z * se});
    }
    return out;
}

} // namespace hlfit
