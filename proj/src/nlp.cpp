#include "dopf/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SparseLU>

namespace dopf {

const char* to_string(NlpStatus status) {
  switch (status) {
    case NlpStatus::Optimal: return "Optimal";
    case NlpStatus::MaxIterations: return "MaxIterations";
    case NlpStatus::Infeasible: return "Infeasible";
    case NlpStatus::TimeLimit: return "TimeLimit";
  }
  return "Unknown";
}

double DerivativeReport::worst() const { return std::max({gradient, eq_jacobian, ineq_jacobian, hessian}); }

namespace {

using Eigen::VectorXd;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kSmallGradient = 1e-2;
constexpr double kMaxUpscale = 1e8;

std::span<const double> head(const VectorXd& v, int n) { return {v.data(), static_cast<std::size_t>(n)}; }

// Minimization form of a problem with gradient-based scaling applied and
// inequalities g(x) <= 0 rewritten as g(x) + s = 0, s >= 0.
class ScaledProblem {
 public:
  ScaledProblem(const NlpProblem& p, std::span<const double> x_ref, double max_grad)
      : p_(p), nx_(p.num_vars()), ne_(p.num_eq()), ni_(p.num_ineq()) {
    n_ = nx_ + ni_;
    m_ = ne_ + ni_;
    lo_.resize(n_);
    hi_.resize(n_);
    p_.bounds({lo_.data(), static_cast<std::size_t>(nx_)}, {hi_.data(), static_cast<std::size_t>(nx_)});
    for (int i = nx_; i < n_; ++i) {
      lo_[i] = 0.0;
      hi_[i] = kInf;
    }
    sign_ = p_.sense() == Sense::Maximize ? -1.0 : 1.0;

    std::vector<double> grad(static_cast<std::size_t>(nx_));
    p_.objective_gradient(x_ref, grad);
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    // Objectives with a tiny gradient are scaled up so that multipliers, and
    // with them the complementarity test, are not swamped by the tolerance.
    if (gmax > max_grad)
      obj_scale_ = max_grad / gmax;
    else if (gmax > 0.0 && gmax < kSmallGradient)
      obj_scale_ = std::min(kMaxUpscale, 1.0 / gmax);

    con_scale_ = VectorXd::Ones(m_);
    scratch_.clear();
    p_.eq_jacobian(x_ref, scratch_);
    VectorXd row_max = VectorXd::Zero(m_);
    for (const Triplet& t : scratch_) row_max[t.row()] = std::max(row_max[t.row()], std::abs(t.value()));
    scratch_.clear();
    p_.ineq_jacobian(x_ref, scratch_);
    for (const Triplet& t : scratch_)
      row_max[ne_ + t.row()] = std::max(row_max[ne_ + t.row()], std::abs(t.value()));
    for (int i = 0; i < m_; ++i)
      if (row_max[i] > max_grad) con_scale_[i] = max_grad / row_max[i];
  }

  int n() const { return n_; }
  int m() const { return m_; }
  int nx() const { return nx_; }
  int ne() const { return ne_; }
  int ni() const { return ni_; }
  const VectorXd& lo() const { return lo_; }
  const VectorXd& hi() const { return hi_; }
  double obj_scale() const { return obj_scale_; }
  const VectorXd& con_scale() const { return con_scale_; }
  const NlpProblem& base() const { return p_; }

  double f(const VectorXd& w) const { return sign_ * obj_scale_ * p_.objective(head(w, nx_)); }

  void grad(const VectorXd& w, VectorXd& g) const {
    g.setZero(n_);
    p_.objective_gradient(head(w, nx_), {g.data(), static_cast<std::size_t>(nx_)});
    g.head(nx_) *= sign_ * obj_scale_;
  }

  void cons(const VectorXd& w, VectorXd& c) const {
    c.resize(m_);
    p_.eq_values(head(w, nx_), {c.data(), static_cast<std::size_t>(ne_)});
    if (ni_ > 0) {
      p_.ineq_values(head(w, nx_), {c.data() + ne_, static_cast<std::size_t>(ni_)});
      c.tail(ni_) += w.tail(ni_);
    }
    c.array() *= con_scale_.array();
  }

  void jac(const VectorXd& w, std::vector<Triplet>& out) const {
    out.clear();
    scratch_.clear();
    p_.eq_jacobian(head(w, nx_), scratch_);
    for (const Triplet& t : scratch_) out.emplace_back(t.row(), t.col(), t.value() * con_scale_[t.row()]);
    if (ni_ > 0) {
      scratch_.clear();
      p_.ineq_jacobian(head(w, nx_), scratch_);
      for (const Triplet& t : scratch_)
        out.emplace_back(ne_ + t.row(), t.col(), t.value() * con_scale_[ne_ + t.row()]);
      for (int i = 0; i < ni_; ++i) out.emplace_back(ne_ + i, nx_ + i, con_scale_[ne_ + i]);
    }
  }

  void hess(const VectorXd& w, const VectorXd& lam, std::vector<Triplet>& out) const {
    out.clear();
    mult_ = lam.cwiseProduct(con_scale_);
    p_.lagrangian_hessian(head(w, nx_), sign_ * obj_scale_, {mult_.data(), static_cast<std::size_t>(ne_)},
                          {mult_.data() + ne_, static_cast<std::size_t>(ni_)}, out);
  }

 private:
  const NlpProblem& p_;
  int nx_, ne_, ni_, n_ = 0, m_ = 0;
  VectorXd lo_, hi_;
  double sign_ = 1.0;
  double obj_scale_ = 1.0;
  VectorXd con_scale_;
  mutable std::vector<Triplet> scratch_;
  mutable VectorXd mult_;
};

// Primal-dual system [W + D, J^T; J, -dc I]. Dense LU for small systems,
// sparse LU otherwise; both pivot, so regularization is steered by a
// curvature test rather than by inertia.
class KktSolver {
 public:
  KktSolver(int n, int m, int dense_threshold) : n_(n), m_(m), dense_(n + m <= dense_threshold) {
    if (dense_) dense_k_.resize(n + m, n + m);
  }

  bool factor(const std::vector<Triplet>& hess, const VectorXd& diag, const std::vector<Triplet>& jac, double dc) {
    const int dim = n_ + m_;
    if (dense_) {
      dense_k_.setZero();
      for (const Triplet& t : hess) {
        dense_k_(t.row(), t.col()) += t.value();
        if (t.row() != t.col()) dense_k_(t.col(), t.row()) += t.value();
      }
      for (int i = 0; i < n_; ++i) dense_k_(i, i) += diag[i];
      for (const Triplet& t : jac) {
        dense_k_(n_ + t.row(), t.col()) += t.value();
        dense_k_(t.col(), n_ + t.row()) += t.value();
      }
      for (int i = 0; i < m_; ++i) dense_k_(n_ + i, n_ + i) = -dc;
      norm_inf_ = dense_k_.cwiseAbs().rowwise().sum().maxCoeff();
      dense_lu_.compute(dense_k_);
      const auto d = dense_lu_.matrixLU().diagonal().cwiseAbs();
      return d.allFinite() && d.minCoeff() > 0.0;
    }
    trips_.clear();
    trips_.reserve(2 * hess.size() + 2 * jac.size() + static_cast<std::size_t>(dim));
    for (const Triplet& t : hess) {
      trips_.push_back(t);
      if (t.row() != t.col()) trips_.emplace_back(t.col(), t.row(), t.value());
    }
    for (int i = 0; i < n_; ++i) trips_.emplace_back(i, i, diag[i]);
    for (const Triplet& t : jac) {
      trips_.emplace_back(n_ + t.row(), t.col(), t.value());
      trips_.emplace_back(t.col(), n_ + t.row(), t.value());
    }
    for (int i = 0; i < m_; ++i) trips_.emplace_back(n_ + i, n_ + i, -dc);
    sparse_k_.resize(dim, dim);
    sparse_k_.setFromTriplets(trips_.begin(), trips_.end());
    sparse_k_.makeCompressed();
    norm_inf_ = 0.0;
    {
      VectorXd rows = VectorXd::Zero(dim);
      for (Eigen::Index k = 0; k < sparse_k_.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(sparse_k_, k); it; ++it) rows[it.row()] += std::abs(it.value());
      norm_inf_ = rows.maxCoeff();
    }
    if (!analyzed_ || sparse_k_.nonZeros() != analyzed_nnz_) {
      sparse_lu_.analyzePattern(sparse_k_);
      analyzed_ = true;
      analyzed_nnz_ = sparse_k_.nonZeros();
    }
    sparse_lu_.factorize(sparse_k_);
    return sparse_lu_.info() == Eigen::Success;
  }

  /// Solves with one step of iterative refinement. Returns false when the
  /// normwise backward error stays large, which flags a (near) singular system.
  bool solve(const VectorXd& rhs, VectorXd& out) {
    raw_solve(rhs, out);
    if (!out.allFinite()) return false;
    residual(rhs, out, res_);
    raw_solve(res_, corr_);
    if (corr_.allFinite()) out += corr_;
    residual(rhs, out, res_);
    const double scale = norm_inf_ * out.lpNorm<Eigen::Infinity>() + rhs.lpNorm<Eigen::Infinity>();
    return out.allFinite() && res_.lpNorm<Eigen::Infinity>() <= 1e-10 * scale;
  }

 private:
  void raw_solve(const VectorXd& rhs, VectorXd& out) {
    if (dense_)
      out = dense_lu_.solve(rhs);
    else
      out = sparse_lu_.solve(rhs);
  }

  void residual(const VectorXd& rhs, const VectorXd& x, VectorXd& r) const {
    if (dense_)
      r.noalias() = rhs - dense_k_ * x;
    else
      r.noalias() = rhs - sparse_k_ * x;
  }

  int n_, m_;
  bool dense_;
  double norm_inf_ = 0.0;
  VectorXd res_, corr_;
  Eigen::MatrixXd dense_k_;
  Eigen::PartialPivLU<Eigen::MatrixXd> dense_lu_;
  std::vector<Triplet> trips_;
  Eigen::SparseMatrix<double> sparse_k_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> sparse_lu_;
  bool analyzed_ = false;
  Eigen::Index analyzed_nnz_ = 0;
};

struct IpmState {
  VectorXd w, lam, zl, zu;
  double mu = 0.1;
  int iterations = 0;
  NlpStatus status = NlpStatus::MaxIterations;
  double kkt = kInf;
};

void add_jt_times(const std::vector<Triplet>& jac, const VectorXd& y, VectorXd& out) {
  for (const Triplet& t : jac) out[t.col()] += t.value() * y[t.row()];
}

double quad_form(const std::vector<Triplet>& hess_lower, const VectorXd& d) {
  double q = 0.0;
  for (const Triplet& t : hess_lower) {
    const double term = t.value() * d[t.row()] * d[t.col()];
    q += t.row() == t.col() ? term : 2.0 * term;
  }
  return q;
}

class InteriorPoint {
 public:
  InteriorPoint(const ScaledProblem& sp, const NlpOptions& opt)
      : sp_(sp), opt_(opt), n_(sp.n()), m_(sp.m()), kkt_(sp.n(), sp.m(), opt.dense_threshold) {
    has_lo_.resize(n_);
    has_hi_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      has_lo_[i] = std::isfinite(sp.lo()[i]);
      has_hi_[i] = std::isfinite(sp.hi()[i]);
      if (has_lo_[i] && has_hi_[i] && !(sp.lo()[i] < sp.hi()[i]))
        throw std::invalid_argument("NLP variable bounds must satisfy lower < upper");
    }
  }

  // Unweighted optimality error of the barrier problem at (w, lam, zl, zu).
  double barrier_error_at(const VectorXd& w, const VectorXd& lam, const VectorXd& zl, const VectorXd& zu,
                          double mu) const {
    VectorXd g, c;
    sp_.grad(w, g);
    sp_.cons(w, c);
    sp_.jac(w, scratch_jac_);
    VectorXd rd = g - zl + zu;
    add_jt_times(scratch_jac_, lam, rd);
    double e = std::max(rd.lpNorm<Eigen::Infinity>(), c.lpNorm<Eigen::Infinity>());
    for (int i = 0; i < n_; ++i) {
      if (has_lo_[i]) e = std::max(e, std::abs((w[i] - sp_.lo()[i]) * zl[i] - mu));
      if (has_hi_[i]) e = std::max(e, std::abs((sp_.hi()[i] - w[i]) * zu[i] - mu));
    }
    return e;
  }

  void project(VectorXd& w) const {
    const VectorXd& lo = sp_.lo();
    const VectorXd& hi = sp_.hi();
    for (int i = 0; i < n_; ++i) {
      if (has_lo_[i] && has_hi_[i]) {
        const double width = hi[i] - lo[i];
        const double pl = std::min(opt_.bound_push * std::max(1.0, std::abs(lo[i])), opt_.bound_frac * width);
        const double pu = std::min(opt_.bound_push * std::max(1.0, std::abs(hi[i])), opt_.bound_frac * width);
        w[i] = std::clamp(w[i], lo[i] + pl, hi[i] - pu);
      } else if (has_lo_[i]) {
        w[i] = std::max(w[i], lo[i] + opt_.bound_push * std::max(1.0, std::abs(lo[i])));
      } else if (has_hi_[i]) {
        w[i] = std::min(w[i], hi[i] - opt_.bound_push * std::max(1.0, std::abs(hi[i])));
      }
    }
  }

  IpmState run(IpmState st, bool have_duals) {
    const VectorXd& lo = sp_.lo();
    const VectorXd& hi = sp_.hi();
    project(st.w);
    double mu = st.mu;
    if (!have_duals) {
      st.lam = VectorXd::Zero(m_);
      st.zl = VectorXd::Zero(n_);
      st.zu = VectorXd::Zero(n_);
    }
    for (int i = 0; i < n_; ++i) {
      if (has_lo_[i]) {
        if (!(st.zl[i] > 0.0)) st.zl[i] = mu / (st.w[i] - lo[i]);
      } else {
        st.zl[i] = 0.0;
      }
      if (has_hi_[i]) {
        if (!(st.zu[i] > 0.0)) st.zu[i] = mu / (hi[i] - st.w[i]);
      } else {
        st.zu[i] = 0.0;
      }
    }

    const double mu_min = std::max(1e-14, opt_.kkt_tol / 10.0);
    double tau = std::max(opt_.tau_min, 1.0 - mu);
    double nu = 1.0;
    double dw_last = 0.0;

    VectorXd g, c, rd, sl(n_), su(n_), bgrad(n_), sigma(n_), rhs(n_ + m_), sol, dx, dl, dzl(n_), dzu(n_);
    VectorXd wt, ct, wsoc, csoc;
    std::vector<Triplet> jac, hess;

    auto slacks = [&](const VectorXd& w, VectorXd& l, VectorXd& u) {
      for (int i = 0; i < n_; ++i) {
        l[i] = has_lo_[i] ? w[i] - lo[i] : 1.0;
        u[i] = has_hi_[i] ? hi[i] - w[i] : 1.0;
      }
    };
    auto barrier = [&](const VectorXd& w, double f) {
      double phi = f;
      for (int i = 0; i < n_; ++i) {
        if (has_lo_[i]) phi -= mu * std::log(w[i] - lo[i]);
        if (has_hi_[i]) phi -= mu * std::log(hi[i] - w[i]);
      }
      return phi;
    };
    auto max_step = [&](const VectorXd& w, const VectorXd& d) {
      double a = 1.0;
      for (int i = 0; i < n_; ++i) {
        if (has_lo_[i] && d[i] < 0.0) a = std::min(a, -tau * (w[i] - lo[i]) / d[i]);
        if (has_hi_[i] && d[i] > 0.0) a = std::min(a, tau * (hi[i] - w[i]) / d[i]);
      }
      return a;
    };

    for (;; ++st.iterations) {
      const double f = sp_.f(st.w);
      sp_.grad(st.w, g);
      sp_.cons(st.w, c);
      sp_.jac(st.w, jac);
      slacks(st.w, sl, su);

      rd = g - st.zl + st.zu;
      add_jt_times(jac, st.lam, rd);
      double compl0 = 0.0;
      for (int i = 0; i < n_; ++i) {
        if (has_lo_[i]) compl0 = std::max(compl0, sl[i] * st.zl[i]);
        if (has_hi_[i]) compl0 = std::max(compl0, su[i] * st.zu[i]);
      }
      double primal_u = 0.0;
      for (int i = 0; i < m_; ++i) primal_u = std::max(primal_u, std::abs(c[i]) / sp_.con_scale()[i]);
      const double dual_inf = rd.lpNorm<Eigen::Infinity>();
      // Stationarity and complementarity in the scaled objective, feasibility unscaled.
      st.kkt = std::max({dual_inf, primal_u, compl0});
      if (!std::isfinite(st.kkt)) {
        st.status = NlpStatus::MaxIterations;
        break;
      }
      if (st.kkt <= opt_.kkt_tol) {
        st.status = NlpStatus::Optimal;
        break;
      }
      if (st.iterations >= opt_.max_iter) {
        st.status = NlpStatus::MaxIterations;
        break;
      }
      if (opt_.deadline && std::chrono::steady_clock::now() > *opt_.deadline) {
        st.status = NlpStatus::TimeLimit;
        break;
      }

      // Monotone barrier update.
      const double smax = 100.0;
      const double zsum = st.zl.lpNorm<1>() + st.zu.lpNorm<1>();
      const double s_d = std::max(smax, (st.lam.lpNorm<1>() + zsum) / std::max(1, n_ + m_)) / smax;
      const double s_c = std::max(smax, zsum / std::max(1, n_)) / smax;
      const double primal_inf = c.lpNorm<Eigen::Infinity>();
      auto barrier_error = [&]() {
        double cm = 0.0;
        for (int i = 0; i < n_; ++i) {
          if (has_lo_[i]) cm = std::max(cm, std::abs(sl[i] * st.zl[i] - mu));
          if (has_hi_[i]) cm = std::max(cm, std::abs(su[i] * st.zu[i] - mu));
        }
        return std::max({dual_inf / s_d, primal_inf, cm / s_c});
      };
      while (mu > mu_min && barrier_error() <= 10.0 * mu) {
        mu = std::max(mu_min, std::min(opt_.barrier_factor * mu, std::pow(mu, opt_.barrier_power)));
        tau = std::max(opt_.tau_min, 1.0 - mu);
      }

      sp_.hess(st.w, st.lam, hess);
      for (int i = 0; i < n_; ++i) {
        sigma[i] = 0.0;
        bgrad[i] = g[i];
        if (has_lo_[i]) {
          sigma[i] += st.zl[i] / sl[i];
          bgrad[i] -= mu / sl[i];
        }
        if (has_hi_[i]) {
          sigma[i] += st.zu[i] / su[i];
          bgrad[i] += mu / su[i];
        }
      }
      rhs.head(n_) = bgrad;
      add_jt_times(jac, st.lam, rhs);  // rhs.head(n) += J^T lam
      rhs.head(n_) = -rhs.head(n_).eval();
      rhs.tail(m_) = -c;

      // Regularize until the step has positive curvature.
      double dw = 0.0, dc = 0.0, quad = 0.0;
      bool solved = false;
      for (int attempt = 0; attempt < 60; ++attempt) {
        VectorXd diag = sigma.array() + dw;
        bool ok = kkt_.factor(hess, diag, jac, dc) && kkt_.solve(rhs, sol);
        if (!ok && dc == 0.0) {
          dc = 1e-8 * std::pow(mu, 0.25);
          ok = kkt_.factor(hess, diag, jac, dc) && kkt_.solve(rhs, sol);
        }
        if (ok) {
          dx = sol.head(n_);
          quad = quad_form(hess, dx) + (diag.array() * dx.array().square()).sum();
          const double dnorm2 = dx.squaredNorm();
          if (quad >= 1e-10 * dnorm2 || dnorm2 < 1e-30) {
            solved = true;
            break;
          }
        }
        if (dw == 0.0)
          dw = dw_last == 0.0 ? 1e-4 : std::max(1e-20, dw_last / 3.0);
        else
          dw *= dw_last == 0.0 ? 100.0 : 8.0;
        if (dw > 1e40) break;
      }
      if (!solved) {
        if (opt_.log) *opt_.log << "  no usable Newton step at iteration " << st.iterations << '\n';
        st.status = NlpStatus::MaxIterations;
        break;
      }
      if (dw > 0.0) dw_last = dw;
      dl = sol.tail(m_);
      for (int i = 0; i < n_; ++i) {
        dzl[i] = has_lo_[i] ? mu / sl[i] - st.zl[i] - st.zl[i] / sl[i] * dx[i] : 0.0;
        dzu[i] = has_hi_[i] ? mu / su[i] - st.zu[i] + st.zu[i] / su[i] * dx[i] : 0.0;
      }

      const double alpha_max = max_step(st.w, dx);
      double alpha_z = 1.0;
      for (int i = 0; i < n_; ++i) {
        if (has_lo_[i] && dzl[i] < 0.0) alpha_z = std::min(alpha_z, -tau * st.zl[i] / dzl[i]);
        if (has_hi_[i] && dzu[i] < 0.0) alpha_z = std::min(alpha_z, -tau * st.zu[i] / dzu[i]);
      }

      // l1 merit line search.
      const double theta = c.lpNorm<1>();
      const double dphi = bgrad.dot(dx);
      if (theta > 0.0) {
        const double nu_trial = (dphi + 0.5 * std::max(0.0, quad)) / (0.9 * theta);
        if (nu < nu_trial) nu = 2.0 * nu_trial;
      }
      const double merit0 = barrier(st.w, f) + nu * theta;
      const double slope = dphi - nu * theta;

      double rel_step = 0.0;
      for (int i = 0; i < n_; ++i) rel_step = std::max(rel_step, std::abs(dx[i]) / (1.0 + std::abs(st.w[i])));
      const bool tiny = rel_step < 10.0 * kEps;

      double alpha = alpha_max;
      bool accepted = false;
      bool soc_used = false;
      for (int trial = 0; trial < 60; ++trial) {
        wt = st.w + alpha * dx;
        sp_.cons(wt, ct);
        const double theta_t = ct.lpNorm<1>();
        const double merit_t = barrier(wt, sp_.f(wt)) + nu * theta_t;
        const double noise = 10.0 * kEps * std::abs(merit0);
        if (tiny || merit_t <= merit0 + 1e-4 * alpha * slope + noise) {
          accepted = true;
          break;
        }
        if (trial == 0 && theta_t >= theta) {
          // Second-order correction for the constraint curvature.
          csoc = alpha * c + ct;
          rhs.tail(m_) = -csoc;
          const bool soc_ok = kkt_.solve(rhs, sol);
          rhs.tail(m_) = -c;
          if (soc_ok) {
            VectorXd dsoc = sol.head(n_);
            const double a_soc = max_step(st.w, dsoc);
            wsoc = st.w + a_soc * dsoc;
            sp_.cons(wsoc, ct);
            const double merit_s = barrier(wsoc, sp_.f(wsoc)) + nu * ct.lpNorm<1>();
            if (merit_s <= merit0 + 1e-4 * alpha * slope + 10.0 * kEps * std::abs(merit0)) {
              wt = wsoc;
              accepted = true;
              soc_used = true;
              break;
            }
          }
        }
        alpha *= 0.5;
        if (alpha * rel_step < 10.0 * kEps) break;
      }
      if (!accepted) {
        // The merit function can stall on roundoff near a solution; take the
        // full step anyway if it reduces the barrier optimality error.
        alpha = alpha_max;
        wt = st.w + alpha * dx;
        const VectorXd lt = st.lam + alpha * dl;
        const VectorXd zlt = st.zl + alpha_z * dzl;
        const VectorXd zut = st.zu + alpha_z * dzu;
        if (barrier_error_at(wt, lt, zlt, zut, mu) < 0.99 * barrier_error_at(st.w, st.lam, st.zl, st.zu, mu)) {
          accepted = true;
        } else {
          if (opt_.log) *opt_.log << "  line search failed at iteration " << st.iterations << '\n';
          st.status = NlpStatus::MaxIterations;
          break;
        }
      }

      if (opt_.log) {
        *opt_.log << "  it " << st.iterations << "  f " << f << "  inf_pr " << primal_inf << "  inf_du " << dual_inf
                  << "  mu " << mu << "  alpha " << alpha << (soc_used ? " soc" : "") << "  dw " << dw << '\n';
      }

      st.w = wt;
      st.lam += alpha * dl;
      st.zl += alpha_z * dzl;
      st.zu += alpha_z * dzu;
      slacks(st.w, sl, su);
      constexpr double kappa_sigma = 1e10;
      for (int i = 0; i < n_; ++i) {
        if (has_lo_[i]) st.zl[i] = std::clamp(st.zl[i], mu / (kappa_sigma * sl[i]), kappa_sigma * mu / sl[i]);
        if (has_hi_[i]) st.zu[i] = std::clamp(st.zu[i], mu / (kappa_sigma * su[i]), kappa_sigma * mu / su[i]);
      }
    }
    st.mu = mu;
    return st;
  }

 private:
  const ScaledProblem& sp_;
  const NlpOptions& opt_;
  int n_, m_;
  KktSolver kkt_;
  std::vector<char> has_lo_, has_hi_;
  mutable std::vector<Triplet> scratch_jac_;
};

// Every constraint gets non-negative elastic slacks:
//   c(x) - p + n = 0,  g(x) - q <= 0,  minimize sign*f(x) + rho * sum(p + n + q).
class ElasticProblem : public NlpProblem {
 public:
  ElasticProblem(const NlpProblem& base, double rho)
      : base_(base), nx_(base.num_vars()), ne_(base.num_eq()), ni_(base.num_ineq()), rho_(rho),
        sign_(base.sense() == Sense::Maximize ? -1.0 : 1.0) {}

  int num_vars() const override { return nx_ + 2 * ne_ + ni_; }
  int num_eq() const override { return ne_; }
  int num_ineq() const override { return ni_; }

  void bounds(std::span<double> lower, std::span<double> upper) const override {
    base_.bounds(lower.first(static_cast<std::size_t>(nx_)), upper.first(static_cast<std::size_t>(nx_)));
    for (int i = nx_; i < num_vars(); ++i) {
      lower[i] = 0.0;
      upper[i] = kInf;
    }
  }
  double objective(std::span<const double> x) const override {
    double pen = 0.0;
    for (int i = nx_; i < num_vars(); ++i) pen += x[i];
    return sign_ * base_.objective(x.first(static_cast<std::size_t>(nx_))) + rho_ * pen;
  }
  void objective_gradient(std::span<const double> x, std::span<double> grad) const override {
    base_.objective_gradient(x.first(static_cast<std::size_t>(nx_)), grad.first(static_cast<std::size_t>(nx_)));
    for (int i = 0; i < nx_; ++i) grad[i] *= sign_;
    for (int i = nx_; i < num_vars(); ++i) grad[i] = rho_;
  }
  void eq_values(std::span<const double> x, std::span<double> values) const override {
    base_.eq_values(x.first(static_cast<std::size_t>(nx_)), values);
    for (int i = 0; i < ne_; ++i) values[i] += -x[nx_ + i] + x[nx_ + ne_ + i];
  }
  void eq_jacobian(std::span<const double> x, std::vector<Triplet>& out) const override {
    base_.eq_jacobian(x.first(static_cast<std::size_t>(nx_)), out);
    for (int i = 0; i < ne_; ++i) {
      out.emplace_back(i, nx_ + i, -1.0);
      out.emplace_back(i, nx_ + ne_ + i, 1.0);
    }
  }
  void ineq_values(std::span<const double> x, std::span<double> values) const override {
    base_.ineq_values(x.first(static_cast<std::size_t>(nx_)), values);
    for (int i = 0; i < ni_; ++i) values[i] -= x[nx_ + 2 * ne_ + i];
  }
  void ineq_jacobian(std::span<const double> x, std::vector<Triplet>& out) const override {
    base_.ineq_jacobian(x.first(static_cast<std::size_t>(nx_)), out);
    for (int i = 0; i < ni_; ++i) out.emplace_back(i, nx_ + 2 * ne_ + i, -1.0);
  }
  void lagrangian_hessian(std::span<const double> x, double obj_factor, std::span<const double> eq_mult,
                          std::span<const double> ineq_mult, std::vector<Triplet>& out) const override {
    base_.lagrangian_hessian(x.first(static_cast<std::size_t>(nx_)), obj_factor * sign_, eq_mult, ineq_mult, out);
  }

  double max_slack(std::span<const double> x) const {
    double s = 0.0;
    for (int i = nx_; i < num_vars(); ++i) s = std::max(s, x[i]);
    return s;
  }

 private:
  const NlpProblem& base_;
  int nx_, ne_, ni_;
  double rho_;
  double sign_;
};

NlpSolution solve_once(const NlpProblem& problem, std::span<const double> x0, const NlpOptions& options,
                       const NlpSolution* warm) {
  const int nx = problem.num_vars();
  const int ne = problem.num_eq();
  const int ni = problem.num_ineq();
  if (static_cast<int>(x0.size()) != nx) throw std::invalid_argument("x0 length differs from num_vars");
  if (!(options.kkt_tol > 0.0)) throw std::invalid_argument("kkt_tol must be positive");

  // Scaling is fixed at the projected starting point.
  std::vector<double> lo(static_cast<std::size_t>(nx)), hi(static_cast<std::size_t>(nx));
  problem.bounds(lo, hi);
  std::vector<double> xs(x0.begin(), x0.end());
  for (int i = 0; i < nx; ++i) xs[i] = std::clamp(xs[i], lo[i], hi[i]);
  ScaledProblem sp(problem, xs, options.max_gradient_scale);
  InteriorPoint ipm(sp, options);

  IpmState st;
  st.w.resize(sp.n());
  for (int i = 0; i < nx; ++i) st.w[i] = xs[i];
  if (ni > 0) {
    std::vector<double> gv(static_cast<std::size_t>(ni));
    problem.ineq_values(xs, gv);
    for (int i = 0; i < ni; ++i) st.w[nx + i] = std::max(-gv[i], options.bound_push);
  }
  st.mu = options.mu_init;
  bool have_duals = false;
  if (warm && static_cast<int>(warm->eq_mult.size()) == ne && static_cast<int>(warm->ineq_mult.size()) == ni &&
      static_cast<int>(warm->lower_mult.size()) == nx && static_cast<int>(warm->upper_mult.size()) == nx) {
    have_duals = true;
    const double fs = sp.obj_scale();
    st.lam.resize(sp.m());
    st.zl = VectorXd::Zero(sp.n());
    st.zu = VectorXd::Zero(sp.n());
    for (int i = 0; i < ne; ++i) st.lam[i] = warm->eq_mult[i] * fs / sp.con_scale()[i];
    for (int i = 0; i < ni; ++i) {
      st.lam[ne + i] = warm->ineq_mult[i] * fs / sp.con_scale()[ne + i];
      st.zl[nx + i] = warm->ineq_mult[i] * fs;
    }
    for (int i = 0; i < nx; ++i) {
      st.zl[i] = warm->lower_mult[i] * fs;
      st.zu[i] = warm->upper_mult[i] * fs;
    }
  }

  st = ipm.run(std::move(st), have_duals);

  NlpSolution out;
  out.x.assign(st.w.data(), st.w.data() + nx);
  out.objective = problem.objective(out.x);
  out.kkt_residual = st.kkt;
  out.status = st.status;
  out.iterations = st.iterations;
  out.final_mu = st.mu;
  const double fs = sp.obj_scale();
  out.eq_mult.resize(static_cast<std::size_t>(ne));
  out.ineq_mult.resize(static_cast<std::size_t>(ni));
  out.lower_mult.resize(static_cast<std::size_t>(nx));
  out.upper_mult.resize(static_cast<std::size_t>(nx));
  for (int i = 0; i < ne; ++i) out.eq_mult[i] = st.lam[i] * sp.con_scale()[i] / fs;
  for (int i = 0; i < ni; ++i) out.ineq_mult[i] = st.lam[ne + i] * sp.con_scale()[ne + i] / fs;
  for (int i = 0; i < nx; ++i) {
    out.lower_mult[i] = st.zl[i] / fs;
    out.upper_mult[i] = st.zu[i] / fs;
  }
  return out;
}

}  // namespace

NlpSolution solve(const NlpProblem& problem, std::span<const double> x0, const NlpOptions& options,
                  const NlpSolution* warm) {
  NlpSolution first = solve_once(problem, x0, options, warm);
  if (first.status == NlpStatus::Optimal || first.status == NlpStatus::TimeLimit || !options.elastic_retry)
    return first;

  const int nx = problem.num_vars();
  const int ne = problem.num_eq();
  const int ni = problem.num_ineq();
  std::vector<double> grad(static_cast<std::size_t>(nx));
  problem.objective_gradient(first.x, grad);
  double gmax = 1.0;
  for (double g : grad) gmax = std::max(gmax, std::abs(g));
  ElasticProblem elastic(problem, options.elastic_penalty * gmax);

  std::vector<double> xe(static_cast<std::size_t>(elastic.num_vars()), 0.0);
  std::copy(first.x.begin(), first.x.end(), xe.begin());
  std::vector<double> cv(static_cast<std::size_t>(ne)), gv(static_cast<std::size_t>(ni));
  problem.eq_values(first.x, cv);
  problem.ineq_values(first.x, gv);
  for (int i = 0; i < ne; ++i) {
    xe[nx + i] = std::max(cv[i], 0.0) + options.bound_push;
    xe[nx + ne + i] = std::max(-cv[i], 0.0) + options.bound_push;
  }
  for (int i = 0; i < ni; ++i) xe[nx + 2 * ne + i] = std::max(gv[i], 0.0) + options.bound_push;

  NlpOptions inner = options;
  inner.elastic_retry = false;
  NlpSolution relaxed = solve_once(elastic, xe, inner, nullptr);
  const int spent = first.iterations + relaxed.iterations;
  if (relaxed.status != NlpStatus::Optimal || elastic.max_slack(relaxed.x) > options.kkt_tol) {
    NlpSolution out = first;
    out.x.assign(relaxed.x.begin(), relaxed.x.begin() + nx);
    out.objective = problem.objective(out.x);
    out.status = relaxed.status == NlpStatus::TimeLimit ? NlpStatus::TimeLimit : NlpStatus::Infeasible;
    out.iterations = spent;
    out.used_elastic = true;
    return out;
  }

  inner.mu_init = std::max(options.kkt_tol, std::min(options.mu_init, 1e-4));
  std::vector<double> xr(relaxed.x.begin(), relaxed.x.begin() + nx);
  NlpSolution second = solve_once(problem, xr, inner, nullptr);
  second.iterations += spent;
  second.used_elastic = true;
  return second;
}

DerivativeReport check_derivatives(const NlpProblem& problem, std::span<const double> x, double h, unsigned seed) {
  const int nx = problem.num_vars();
  const int ne = problem.num_eq();
  const int ni = problem.num_ineq();
  if (static_cast<int>(x.size()) != nx) throw std::invalid_argument("x length differs from num_vars");
  auto rel = [](double analytic, double fd) { return std::abs(analytic - fd) / std::max(1.0, std::abs(fd)); };
  auto dense_jac = [nx](const std::vector<Triplet>& t, int rows) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(rows, nx);
    for (const Triplet& e : t) j(e.row(), e.col()) += e.value();
    return j;
  };

  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  VectorXd ye(ne), yi(ni);
  for (int i = 0; i < ne; ++i) ye[i] = unit(rng);
  for (int i = 0; i < ni; ++i) yi[i] = unit(rng);

  std::vector<double> xv(x.begin(), x.end());
  std::vector<Triplet> trip;
  problem.eq_jacobian(xv, trip);
  const Eigen::MatrixXd je = dense_jac(trip, ne);
  trip.clear();
  problem.ineq_jacobian(xv, trip);
  const Eigen::MatrixXd ji = dense_jac(trip, ni);
  std::vector<double> g(static_cast<std::size_t>(nx));
  problem.objective_gradient(xv, g);

  // grad f + Je^T ye + Ji^T yi at a point.
  auto lagrangian_grad = [&](const std::vector<double>& at) {
    std::vector<double> gg(static_cast<std::size_t>(nx));
    problem.objective_gradient(at, gg);
    std::vector<Triplet> t;
    problem.eq_jacobian(at, t);
    VectorXd out = Eigen::Map<VectorXd>(gg.data(), nx);
    for (const Triplet& e : t) out[e.col()] += e.value() * ye[e.row()];
    t.clear();
    problem.ineq_jacobian(at, t);
    for (const Triplet& e : t) out[e.col()] += e.value() * yi[e.row()];
    return out;
  };
  trip.clear();
  problem.lagrangian_hessian(xv, 1.0, {ye.data(), static_cast<std::size_t>(ne)}, {yi.data(), static_cast<std::size_t>(ni)},
                             trip);
  Eigen::MatrixXd hs = Eigen::MatrixXd::Zero(nx, nx);
  for (const Triplet& e : trip) {
    hs(e.row(), e.col()) += e.value();
    if (e.row() != e.col()) hs(e.col(), e.row()) += e.value();
  }

  DerivativeReport report;
  std::vector<double> cp(static_cast<std::size_t>(ne)), cm(static_cast<std::size_t>(ne));
  std::vector<double> gp(static_cast<std::size_t>(ni)), gm(static_cast<std::size_t>(ni));
  for (int k = 0; k < nx; ++k) {
    std::vector<double> xp = xv, xm = xv;
    xp[k] += h;
    xm[k] -= h;
    report.gradient = std::max(report.gradient, rel(g[k], (problem.objective(xp) - problem.objective(xm)) / (2 * h)));
    problem.eq_values(xp, cp);
    problem.eq_values(xm, cm);
    for (int i = 0; i < ne; ++i) report.eq_jacobian = std::max(report.eq_jacobian, rel(je(i, k), (cp[i] - cm[i]) / (2 * h)));
    problem.ineq_values(xp, gp);
    problem.ineq_values(xm, gm);
    for (int i = 0; i < ni; ++i)
      report.ineq_jacobian = std::max(report.ineq_jacobian, rel(ji(i, k), (gp[i] - gm[i]) / (2 * h)));
    const VectorXd col = (lagrangian_grad(xp) - lagrangian_grad(xm)) / (2 * h);
    for (int i = 0; i < nx; ++i) report.hessian = std::max(report.hessian, rel(hs(i, k), col[i]));
  }
  return report;
}

}  // namespace dopf
