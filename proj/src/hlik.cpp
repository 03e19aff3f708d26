#include "hlfit/hlik.hpp"

#include <cmath>
#include <limits>

#include "hlfit/errors.hpp"

namespace hlfit {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kMaxHalvings = 4;
const double kEps = std::numeric_limits<double>::epsilon();
} // namespace

double fd_gradient_step(double x) { return std::cbrt(kEps) * std::max(std::abs(x), 0.1); }
double fd_hessian_step(double x) {
    return std::pow(kEps, 0.25) * std::max(std::abs(x), 0.1);
}

namespace {

// Evaluates the +/-h pair for coordinate j, halving h when either side is
// infeasible. Returns the step actually used.
double eval_pair(const ScalarFn& f, Eigen::VectorXd& x, int j, double h0, double& fp, double& fm,
                 long& evals) {
    const double xj = x[j];
    double h = h0;
    for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
        x[j] = xj + h;
        fp = f(x);
        ++evals;
        if (std::isfinite(fp)) {
            x[j] = xj - h;
            fm = f(x);
            ++evals;
            if (std::isfinite(fm)) {
                x[j] = xj;
                return h;
            }
        }
        x[j] = xj;
        h *= 0.5;
    }
    throw FiniteDifferenceFailure("coordinate " + std::to_string(j) +
                                  " infeasible after step halving");
}

// 4-point cross stencil for (j, k); halves both steps together on failure.
double eval_cross(const ScalarFn& f, Eigen::VectorXd& x, int j, int k, double hj0, double hk0,
                  long& evals) {
    const double xj = x[j], xk = x[k];
    double hj = hj0, hk = hk0;
    for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
        double v[4];
        bool ok = true;
        const double sj[4] = {+1, +1, -1, -1};
        const double sk[4] = {+1, -1, +1, -1};
        for (int s = 0; s < 4 && ok; ++s) {
            x[j] = xj + sj[s] * hj;
            x[k] = xk + sk[s] * hk;
            v[s] = f(x);
            ++evals;
            ok = std::isfinite(v[s]);
        }
        x[j] = xj;
        x[k] = xk;
        if (ok) return (v[0] - v[1] - v[2] + v[3]) / (4.0 * hj * hk);
        hj *= 0.5;
        hk *= 0.5;
    }
    throw FiniteDifferenceFailure("cross stencil (" + std::to_string(j) + "," +
                                  std::to_string(k) + ") infeasible after step halving");
}

} // namespace

static std::vector<int> all_coords(Eigen::Index d) {
    std::vector<int> coords(static_cast<size_t>(d));
    for (size_t j = 0; j < coords.size(); ++j) coords[j] = static_cast<int>(j);
    return coords;
}

Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x0,
                            const std::vector<int>& coords, long* evals_out) {
    Eigen::VectorXd x = x0;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    long evals = 0;
    for (int j : coords) {
        double fp, fm;
        const double h = eval_pair(f, x, j, fd_gradient_step(x0[j]), fp, fm, evals);
        g[j] = (fp - fm) / (2.0 * h);
    }
    if (evals_out) *evals_out += evals;
    return g;
}

Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x0, long* evals_out) {
    return fd_gradient(f, x0, all_coords(x0.size()), evals_out);
}

FdResult fd_gradient_hessian(const ScalarFn& f, const Eigen::VectorXd& x0,
                             const std::vector<int>& coords) {
    FdResult r;
    const int d = static_cast<int>(x0.size());
    r.hess = Eigen::MatrixXd::Zero(d, d);

    const double f0 = f(x0);
    ++r.evals;
    r.f0 = f0;
    if (!std::isfinite(f0))
        throw FiniteDifferenceFailure("center point infeasible in fd_gradient_hessian");

    r.grad = fd_gradient(f, x0, coords, &r.evals);

    Eigen::VectorXd x = x0;
    for (int j : coords) {
        double fp, fm;
        const double h = eval_pair(f, x, j, fd_hessian_step(x0[j]), fp, fm, r.evals);
        r.hess(j, j) = (fp - 2.0 * f0 + fm) / (h * h);
        ++r.second_entries;
    }
    for (size_t cj = 0; cj < coords.size(); ++cj) {
        for (size_t ck = cj + 1; ck < coords.size(); ++ck) {
            const int j = coords[cj], k = coords[ck];
            const double v =
                eval_cross(f, x, j, k, fd_hessian_step(x0[j]), fd_hessian_step(x0[k]), r.evals);
            r.hess(j, k) = v;
            r.hess(k, j) = v;
            ++r.second_entries;
        }
    }
    return r;
}

FdResult fd_gradient_hessian(const ScalarFn& f, const Eigen::VectorXd& x0) {
    return fd_gradient_hessian(f, x0, all_coords(x0.size()));
}

// ---------------------------------------------------------------------------

static double penalty_value(const Eigen::VectorXd& alpha, const Eigen::VectorXd& a_i,
                            const Eigen::VectorXd& inv_tau_sq) {
    double pen = 0.0;
    for (int r = 0; r < alpha.size(); ++r) {
        const double dev = a_i[r] - alpha[r];
        pen += dev * dev * inv_tau_sq[r];
    }
    return 0.5 * pen;
}

double hl_subject(const SubjectObjective& obj, int subject, const Eigen::VectorXd& theta,
                  const Eigen::VectorXd& a_i, const PenaltyConfig& penalty) {
    const int R = obj.n_random();
    const double ll = obj.loglik(subject, theta.tail(obj.n_beta()), a_i);
    if (!std::isfinite(ll)) return kNegInf;
    return ll - penalty_value(theta.head(R), a_i, penalty.inv_tau_sq());
}

double hl_total(const SubjectObjective& obj, const Eigen::VectorXd& theta,
                const Eigen::MatrixXd& a, const PenaltyConfig& penalty) {
    const int n = obj.n_subjects();
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double hli = hl_subject(obj, i, theta, a.row(i).transpose(), penalty);
        if (!std::isfinite(hli)) return kNegInf;
        sum += hli;
    }
    return sum / n;
}

Eigen::VectorXd grad_alpha(const Eigen::VectorXd& theta, const Eigen::MatrixXd& a,
                           const PenaltyConfig& penalty) {
    const int R = static_cast<int>(penalty.tau.size());
    const int n = static_cast<int>(a.rows());
    const Eigen::VectorXd inv_tau_sq = penalty.inv_tau_sq();
    Eigen::VectorXd g(R);
    for (int r = 0; r < R; ++r) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += a(i, r) - theta[r];
        g[r] = s * inv_tau_sq[r] / n;
    }
    return g;
}

SubjectDerivatives subject_derivatives(const SubjectObjective& obj, int subject,
                                       const Eigen::VectorXd& beta, const Eigen::VectorXd& a_i) {
    const int R = obj.n_random();
    const int p = obj.n_beta();
    Eigen::VectorXd v(R + p);
    v.head(R) = a_i;
    v.tail(p) = beta;
    const ScalarFn f = [&](const Eigen::VectorXd& u) {
        return obj.loglik(subject, u.tail(p), u.head(R));
    };
    std::vector<int> coords(static_cast<size_t>(R));
    for (int r = 0; r < R; ++r) coords[static_cast<size_t>(r)] = r;
    for (int b : obj.active_beta(subject)) coords.push_back(R + b);
    FdResult fd = fd_gradient_hessian(f, v, coords);

    SubjectDerivatives out;
    out.grad = std::move(fd.grad);
    out.hess = std::move(fd.hess);
    out.loglik = fd.f0;
    out.evals = fd.evals;
    const int n_active = static_cast<int>(coords.size()) - R;
    out.second_entries_aa = R * (R + 1) / 2;
    out.second_entries_cross = n_active * R;
    out.second_entries_bb = n_active * (n_active + 1) / 2;
    return out;
}

BlockHessian assemble(const std::vector<SubjectDerivatives>& blocks,
                      const PenaltyConfig& penalty, int n) {
    if (static_cast<int>(blocks.size()) != n)
        throw std::invalid_argument("assemble: expected " + std::to_string(n) +
                                    " subject blocks, got " + std::to_string(blocks.size()));
    const int R = static_cast<int>(penalty.tau.size());
    BlockHessian H;
    H.n = n;
    H.R = R;
    H.p = blocks.empty() ? 0 : static_cast<int>(blocks[0].grad.size()) - R;
    const Eigen::VectorXd inv_tau_sq = penalty.inv_tau_sq();
    H.A_diag = -inv_tau_sq;
    H.D_diag = inv_tau_sq / n;
    H.B = Eigen::MatrixXd::Zero(H.p, H.p);
    H.Bi.reserve(blocks.size());
    H.Ci.reserve(blocks.size());
    for (const auto& blk : blocks) {
        if (blk.hess.rows() != R + H.p)
            throw std::invalid_argument("assemble: subject block dimension mismatch");
        H.B += blk.hess.bottomRightCorner(H.p, H.p);
        H.Bi.push_back(blk.hess.bottomLeftCorner(H.p, R) / n);
        Eigen::MatrixXd Ci = blk.hess.topLeftCorner(R, R);
        Ci.diagonal() -= inv_tau_sq;
        H.Ci.push_back(Ci / n);
    }
    H.B /= n;
    return H;
}

HlGradient assemble_gradient(const std::vector<SubjectDerivatives>& blocks,
                             const Eigen::VectorXd& theta, const Eigen::MatrixXd& a,
                             const PenaltyConfig& penalty) {
    const int n = static_cast<int>(blocks.size());
    const int R = static_cast<int>(penalty.tau.size());
    const int p = blocks.empty() ? 0 : static_cast<int>(blocks[0].grad.size()) - R;
    const Eigen::VectorXd inv_tau_sq = penalty.inv_tau_sq();

    HlGradient g;
    g.alpha = grad_alpha(theta, a, penalty);
    g.beta = Eigen::VectorXd::Zero(p);
    g.a.resize(n, R);
    for (int i = 0; i < n; ++i) {
        g.beta += blocks[static_cast<size_t>(i)].grad.tail(p);
        const Eigen::VectorXd ga = blocks[static_cast<size_t>(i)].grad.head(R);
        for (int r = 0; r < R; ++r)
            g.a(i, r) = (ga[r] - (a(i, r) - theta[r]) * inv_tau_sq[r]) / n;
    }
    g.beta /= n;
    return g;
}

Eigen::MatrixXd BlockHessian::dense() const {
    const int nq = q();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim(), dim());
    M.topLeftCorner(R, R).diagonal() = A_diag;
    M.block(R, R, p, p) = B;
    for (int i = 0; i < n; ++i) {
        const int off = nq + i * R;
        M.block(off, off, R, R) = Ci[static_cast<size_t>(i)];
        M.block(0, off, R, R).diagonal() = D_diag;
        M.block(off, 0, R, R).diagonal() = D_diag;
        M.block(R, off, p, R) = Bi[static_cast<size_t>(i)];
        M.block(off, R, R, p) = Bi[static_cast<size_t>(i)].transpose();
    }
    return M;
}

Eigen::VectorXd HlGradient::flat() const {
    const int R = static_cast<int>(alpha.size());
    const int p = static_cast<int>(beta.size());
    const int n = static_cast<int>(a.rows());
    Eigen::VectorXd v(R + p + n * R);
    v.head(R) = alpha;
    v.segment(R, p) = beta;
    for (int i = 0; i < n; ++i) v.segment(R + p + i * R, R) = a.row(i).transpose();
    return v;
}

double HlGradient::max_norm() const {
    double m = alpha.size() ? alpha.cwiseAbs().maxCoeff() : 0.0;
    if (beta.size()) m = std::max(m, beta.cwiseAbs().maxCoeff());
    if (a.size()) m = std::max(m, a.cwiseAbs().maxCoeff());
    return m;
}

} // namespace hlfit
