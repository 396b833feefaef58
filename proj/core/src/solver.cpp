#include "sesoffer/solver.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace sesoffer {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kInfeasible: return "infeasible";
    case SolveStatus::kUnbounded: return "unbounded";
    case SolveStatus::kNumericalFailure: return "numerical_failure";
  }
  return "?";
}

namespace {

// Inequality system Gx <= h assembled from declared rows plus finite
// variable bounds. Row layout: [a_ub | upper bounds | lower bounds].
struct IneqSystem {
  SpMat g;
  Eigen::VectorXd h;
  int n_ub = 0;
  std::vector<int> hi_vars;  // variable index per upper-bound row
  std::vector<int> lo_vars;  // variable index per lower-bound row
};

IneqSystem assemble_ineq(const ConvexProgram& p) {
  IneqSystem s;
  s.n_ub = static_cast<int>(p.a_ub.rows());
  std::vector<Triplet> trips;
  std::vector<double> rhs;
  for (int k = 0; k < p.a_ub.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.a_ub, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  for (int i = 0; i < s.n_ub; ++i) rhs.push_back(p.b_ub[i]);
  for (int j = 0; j < p.n; ++j) {
    if (std::isfinite(p.ub[j])) {
      trips.emplace_back(static_cast<int>(rhs.size()), j, 1.0);
      rhs.push_back(p.ub[j]);
      s.hi_vars.push_back(j);
    }
  }
  for (int j = 0; j < p.n; ++j) {
    if (std::isfinite(p.lb[j])) {
      trips.emplace_back(static_cast<int>(rhs.size()), j, -1.0);
      rhs.push_back(-p.lb[j]);
      s.lo_vars.push_back(j);
    }
  }
  s.g.resize(static_cast<int>(rhs.size()), p.n);
  s.g.setFromTriplets(trips.begin(), trips.end());
  s.h = Eigen::Map<const Eigen::VectorXd>(rhs.data(), rhs.size());
  return s;
}

// Symmetric quasi-definite KKT factor  [[H, A'],[A, -dI]]  via sparse LU.
class KktFactor {
 public:
  bool factor(const Eigen::VectorXd& hdiag, const SpMat& gt_w_g,
              const SpMat& a_eq, double delta) {
    const int n = static_cast<int>(hdiag.size());
    const int me = static_cast<int>(a_eq.rows());
    dim_ = n + me;
    std::vector<Triplet> trips;
    trips.reserve(gt_w_g.nonZeros() + 2 * a_eq.nonZeros() + dim_);
    for (int k = 0; k < gt_w_g.outerSize(); ++k)
      for (SpMat::InnerIterator it(gt_w_g, k); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
    for (int j = 0; j < n; ++j) trips.emplace_back(j, j, hdiag[j] + delta);
    for (int k = 0; k < a_eq.outerSize(); ++k)
      for (SpMat::InnerIterator it(a_eq, k); it; ++it) {
        trips.emplace_back(n + static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()),
                           n + static_cast<int>(it.row()), it.value());
      }
    for (int i = 0; i < me; ++i) trips.emplace_back(n + i, n + i, -delta);
    kkt_.resize(dim_, dim_);
    kkt_.setFromTriplets(trips.begin(), trips.end());
    lu_.compute(kkt_);
    return lu_.info() == Eigen::Success;
  }

  // One step of iterative refinement buys ~2 digits back from the
  // static regularization.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd x = lu_.solve(rhs);
    Eigen::VectorXd r = rhs - kkt_ * x;
    x += lu_.solve(r);
    return x;
  }

 private:
  int dim_ = 0;
  SpMat kkt_;
  Eigen::SparseLU<SpMat> lu_;
};

double step_length(const Eigen::VectorXd& v, const Eigen::VectorXd& dv,
                   double tau) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0) alpha = std::min(alpha, -tau * v[i] / dv[i]);
  return alpha;
}

KktResiduals compute_residuals(const ConvexProgram& p, const IneqSystem& iq,
                               const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y,
                               const Eigen::VectorXd& z) {
  KktResiduals r;
  Eigen::VectorXd grad = p.cost;
  if (p.quad.size() == p.n) grad += p.quad.cwiseProduct(x);
  Eigen::VectorXd rd = grad + iq.g.transpose() * z;
  if (p.a_eq.rows() > 0) rd += p.a_eq.transpose() * y;
  double cscale = 1.0 + p.cost.lpNorm<Eigen::Infinity>();
  r.dual = rd.lpNorm<Eigen::Infinity>() / cscale;

  double pviol = 0.0;
  if (p.a_eq.rows() > 0)
    pviol = (p.a_eq * x - p.b_eq).lpNorm<Eigen::Infinity>();
  if (iq.g.rows() > 0) {
    Eigen::VectorXd gviol = iq.g * x - iq.h;
    pviol = std::max(pviol, gviol.maxCoeff());
  }
  double bscale = 1.0;
  if (p.b_eq.size() > 0)
    bscale = std::max(bscale, p.b_eq.lpNorm<Eigen::Infinity>());
  r.primal = std::max(pviol, 0.0) / bscale;

  double comp = 0.0;
  if (iq.g.rows() > 0) {
    Eigen::VectorXd slack = iq.h - iq.g * x;
    comp = std::abs(slack.dot(z));
  }
  double obj = std::abs(p.objective(x)) + 1.0;
  r.gap = comp / obj;
  return r;
}

void split_duals(const ConvexProgram& p, const IneqSystem& iq,
                 const Eigen::VectorXd& z, Solution& sol) {
  sol.dual_ub = z.head(iq.n_ub);
  sol.dual_hi = Eigen::VectorXd::Zero(p.n);
  sol.dual_lo = Eigen::VectorXd::Zero(p.n);
  int row = iq.n_ub;
  for (int v : iq.hi_vars) sol.dual_hi[v] = z[row++];
  for (int v : iq.lo_vars) sol.dual_lo[v] = z[row++];
}

Solution ipm_solve(const ConvexProgram& p, const SolverOptions& opts);

// Re-solve on the converged active set (rows whose multiplier exceeds the
// slack). Cuts interior-point fuzz by several digits; rejected whenever the
// polished point is worse or carries negative multipliers.
void polish(const ConvexProgram& p, const IneqSystem& iq,
            const Eigen::VectorXd& q, Eigen::VectorXd& x, Eigen::VectorXd& y,
            Eigen::VectorXd& z, KktResiduals& res) {
  const int n = p.n;
  const int me = static_cast<int>(p.a_eq.rows());
  const int mi = static_cast<int>(iq.g.rows());

  // bound-row indices per variable
  std::vector<int> hi_row(n, -1), lo_row(n, -1);
  {
    int row = iq.n_ub;
    for (int v : iq.hi_vars) hi_row[v] = row++;
    for (int v : iq.lo_vars) lo_row[v] = row++;
  }
  std::vector<bool> is_active(mi, false);
  for (int i = 0; i < mi; ++i) {
    double slack = iq.h[i] - iq.g.row(i).dot(x);
    is_active[i] = z[i] > std::abs(slack);
  }
  // a variable with both bound rows active is pinned: one equality row with
  // a sign-split multiplier instead of two opposing inequality rows
  std::vector<int> pinned;
  for (int j = 0; j < n; ++j)
    if (hi_row[j] >= 0 && lo_row[j] >= 0 && is_active[hi_row[j]] &&
        is_active[lo_row[j]] && p.ub[j] - p.lb[j] < 1e-12) {
      pinned.push_back(j);
      is_active[hi_row[j]] = false;
      is_active[lo_row[j]] = false;
    }
  std::vector<int> active;
  for (int i = 0; i < mi; ++i)
    if (is_active[i]) active.push_back(i);
  const int ma = static_cast<int>(active.size());
  const int mp = static_cast<int>(pinned.size());

  std::vector<Triplet> trips;
  for (int k = 0; k < p.a_eq.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.a_eq, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()),
                         static_cast<int>(it.col()), it.value());
  if (ma > 0) {
    std::vector<int> row_pos(mi, -1);
    for (int i = 0; i < ma; ++i) row_pos[active[i]] = i;
    for (int k = 0; k < iq.g.outerSize(); ++k)
      for (SpMat::InnerIterator it(iq.g, k); it; ++it)
        if (row_pos[it.row()] >= 0)
          trips.emplace_back(me + row_pos[it.row()],
                             static_cast<int>(it.col()), it.value());
  }
  for (int i = 0; i < mp; ++i)
    trips.emplace_back(me + ma + i, pinned[i], 1.0);
  SpMat stacked(me + ma + mp, n);
  stacked.setFromTriplets(trips.begin(), trips.end());

  KktFactor factor;
  if (!factor.factor(q, SpMat(n, n), stacked, 1e-11)) return;
  Eigen::VectorXd rhs(n + me + ma + mp);
  rhs.head(n) = -p.cost;
  for (int i = 0; i < me; ++i) rhs[n + i] = p.b_eq[i];
  for (int i = 0; i < ma; ++i) rhs[n + me + i] = iq.h[active[i]];
  for (int i = 0; i < mp; ++i) rhs[n + me + ma + i] = p.ub[pinned[i]];
  Eigen::VectorXd xyz = factor.solve(rhs);
  if (!xyz.allFinite()) return;
  Eigen::VectorXd x_p = xyz.head(n);
  Eigen::VectorXd y_p = xyz.segment(n, me);
  Eigen::VectorXd z_p = Eigen::VectorXd::Zero(mi);
  double min_mult = 0.0;
  for (int i = 0; i < ma; ++i) {
    z_p[active[i]] = xyz[n + me + i];
    min_mult = std::min(min_mult, xyz[n + me + i]);
  }
  for (int i = 0; i < mp; ++i) {
    double mult = xyz[n + me + ma + i];
    z_p[hi_row[pinned[i]]] = std::max(mult, 0.0);
    z_p[lo_row[pinned[i]]] = std::max(-mult, 0.0);
  }
  if (min_mult < -1e-9) return;
  z_p = z_p.cwiseMax(0.0);
  KktResiduals res_p = compute_residuals(p, iq, x_p, y_p, z_p);
  double before = std::max({res.primal, res.dual, res.gap});
  double after = std::max({res_p.primal, res_p.dual, res_p.gap});
  if (after <= before) {
    x = x_p;
    y = y_p;
    z = z_p;
    res = res_p;
  }
}

// Elastic feasibility probe: min sum(u) with every constraint relaxed by a
// nonnegative slack. Optimum > tol certifies primal infeasibility and the
// positive slacks name the violated rows.
Solution feasibility_probe(const ConvexProgram& p, double tol,
                           std::string* detail) {
  ProgramBuilder fb;
  for (int j = 0; j < p.n; ++j)
    fb.add_var("x" + std::to_string(j), p.lb[j], p.ub[j], 0.0);
  std::vector<int> u_eq_pos, u_eq_neg, u_ub;
  for (int i = 0; i < p.a_eq.rows(); ++i) {
    u_eq_pos.push_back(fb.add_var("ueq+" + std::to_string(i), 0, kInf, 1.0));
    u_eq_neg.push_back(fb.add_var("ueq-" + std::to_string(i), 0, kInf, 1.0));
  }
  for (int i = 0; i < p.a_ub.rows(); ++i)
    u_ub.push_back(fb.add_var("uub" + std::to_string(i), 0, kInf, 1.0));
  // rebuild rows with elastics
  std::vector<std::vector<int>> eq_idx(p.a_eq.rows()), ub_idx(p.a_ub.rows());
  std::vector<std::vector<double>> eq_co(p.a_eq.rows()), ub_co(p.a_ub.rows());
  for (int k = 0; k < p.a_eq.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.a_eq, k); it; ++it) {
      eq_idx[it.row()].push_back(static_cast<int>(it.col()));
      eq_co[it.row()].push_back(it.value());
    }
  for (int k = 0; k < p.a_ub.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.a_ub, k); it; ++it) {
      ub_idx[it.row()].push_back(static_cast<int>(it.col()));
      ub_co[it.row()].push_back(it.value());
    }
  for (int i = 0; i < p.a_eq.rows(); ++i) {
    eq_idx[i].push_back(u_eq_pos[i]);
    eq_co[i].push_back(1.0);
    eq_idx[i].push_back(u_eq_neg[i]);
    eq_co[i].push_back(-1.0);
    fb.add_eq(eq_idx[i], eq_co[i], p.b_eq[i]);
  }
  for (int i = 0; i < p.a_ub.rows(); ++i) {
    ub_idx[i].push_back(u_ub[i]);
    ub_co[i].push_back(-1.0);
    fb.add_le(ub_idx[i], ub_co[i], p.b_ub[i]);
  }
  SolverOptions fo;
  fo.tol = std::max(tol, 1e-9);
  fo.classify_failures = false;
  Solution fs = ipm_solve(fb.build(), fo);
  if (fs.status == SolveStatus::kOptimal && detail != nullptr) {
    std::ostringstream os;
    double worst = 0.0;
    int worst_row = -1;
    bool worst_eq = false;
    for (size_t i = 0; i < u_ub.size(); ++i) {
      double u = fs.x[u_ub[i]];
      if (u > worst) worst = u, worst_row = static_cast<int>(i), worst_eq = false;
    }
    for (size_t i = 0; i < u_eq_pos.size(); ++i) {
      double u = fs.x[u_eq_pos[i]] + fs.x[u_eq_neg[i]];
      if (u > worst) worst = u, worst_row = static_cast<int>(i), worst_eq = true;
    }
    if (worst_row >= 0) {
      const auto& tags = worst_eq ? p.eq_tags : p.ub_tags;
      std::string tag = worst_row < static_cast<int>(tags.size())
                            ? tags[worst_row]
                            : std::string();
      os << "worst violated " << (worst_eq ? "equality" : "inequality")
         << " row " << worst_row;
      if (!tag.empty()) os << " [" << tag << "]";
      os << ", violation " << worst;
      *detail = os.str();
    }
  }
  return fs;
}

// Recession probe: a bounded-direction LP whose negative optimum certifies
// an unbounded objective ray of the original program.
bool unbounded_probe(const ConvexProgram& p, double tol) {
  ProgramBuilder rb;
  for (int j = 0; j < p.n; ++j) {
    double lo = std::isfinite(p.lb[j]) ? 0.0 : -1.0;
    double hi = std::isfinite(p.ub[j]) ? 0.0 : 1.0;
    bool pinned = p.quad.size() == p.n && p.quad[j] > 0;
    if (pinned) lo = hi = 0.0;
    // direction must vanish where a finite bound or curvature blocks it;
    // one-sided bounds leave the free side open
    if (std::isfinite(p.lb[j]) && !std::isfinite(p.ub[j]) && !pinned) {
      lo = 0.0;
      hi = 1.0;
    }
    if (!std::isfinite(p.lb[j]) && std::isfinite(p.ub[j]) && !pinned) {
      lo = -1.0;
      hi = 0.0;
    }
    rb.add_var("d" + std::to_string(j), lo, hi, p.cost[j]);
  }
  std::vector<std::vector<int>> eq_idx(p.a_eq.rows()), ub_idx(p.a_ub.rows());
  std::vector<std::vector<double>> eq_co(p.a_eq.rows()), ub_co(p.a_ub.rows());
  for (int k = 0; k < p.a_eq.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.a_eq, k); it; ++it) {
      eq_idx[it.row()].push_back(static_cast<int>(it.col()));
      eq_co[it.row()].push_back(it.value());
    }
  for (int k = 0; k < p.a_ub.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.a_ub, k); it; ++it) {
      ub_idx[it.row()].push_back(static_cast<int>(it.col()));
      ub_co[it.row()].push_back(it.value());
    }
  for (int i = 0; i < p.a_eq.rows(); ++i)
    if (!eq_idx[i].empty()) rb.add_eq(eq_idx[i], eq_co[i], 0.0);
  for (int i = 0; i < p.a_ub.rows(); ++i)
    if (!ub_idx[i].empty()) rb.add_le(ub_idx[i], ub_co[i], 0.0);
  SolverOptions ro;
  ro.tol = 1e-9;
  ro.classify_failures = false;
  Solution rs = ipm_solve(rb.build(), ro);
  return rs.status == SolveStatus::kOptimal && rs.objective < -tol;
}

Solution ipm_solve(const ConvexProgram& p, const SolverOptions& opts) {
  Solution sol;
  const int n = p.n;
  if (n == 0) {
    sol.status = SolveStatus::kOptimal;
    sol.x.resize(0);
    sol.objective = p.offset;
    sol.kkt = {0, 0, 0};
    return sol;
  }
  IneqSystem iq = assemble_ineq(p);
  const int mi = static_cast<int>(iq.g.rows());
  const int me = static_cast<int>(p.a_eq.rows());
  Eigen::VectorXd q = p.quad.size() == n ? p.quad : Eigen::VectorXd::Zero(n);

  const double delta = 1e-9;
  KktFactor factor;

  // no inequality part: one regularized KKT solve settles it
  if (mi == 0) {
    SpMat empty(0, n);
    if (!factor.factor(q, SpMat(n, n), p.a_eq, std::max(delta, 1e-11))) {
      sol.status = SolveStatus::kNumericalFailure;
      return sol;
    }
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -p.cost;
    rhs.tail(me) = p.b_eq;
    Eigen::VectorXd xy = factor.solve(rhs);
    sol.x = xy.head(n);
    sol.dual_eq = xy.tail(me);
    sol.dual_ub.resize(0);
    sol.dual_hi = Eigen::VectorXd::Zero(n);
    sol.dual_lo = Eigen::VectorXd::Zero(n);
    sol.kkt = compute_residuals(p, iq, sol.x, sol.dual_eq,
                                Eigen::VectorXd::Zero(0));
    sol.objective = p.objective(sol.x);
    bool ok = sol.kkt.primal <= opts.tol * 10 && sol.kkt.dual <= opts.tol * 10;
    sol.status = ok ? SolveStatus::kOptimal : SolveStatus::kNumericalFailure;
    if (!ok && opts.classify_failures && unbounded_probe(p, 1e-7))
      sol.status = SolveStatus::kUnbounded;
    return sol;
  }

  // starting point
  Eigen::VectorXd x(n), y = Eigen::VectorXd::Zero(me);
  {
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    if (!factor.factor(q + ones, SpMat(n, n), p.a_eq, 1e-8)) {
      sol.status = SolveStatus::kNumericalFailure;
      return sol;
    }
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -p.cost;
    rhs.tail(me) = p.b_eq;
    Eigen::VectorXd xy = factor.solve(rhs);
    x = xy.head(n);
    y = xy.tail(me);
    if (!x.allFinite()) x.setZero();
  }
  Eigen::VectorXd s = iq.h - iq.g * x;
  double shift = std::max(0.0, -s.minCoeff()) + 1.0;
  s.array() += shift;
  double zinit = std::max(1.0, 0.01 * (1.0 + p.cost.lpNorm<Eigen::Infinity>()));
  Eigen::VectorXd z = Eigen::VectorXd::Constant(mi, zinit);

  const SpMat gt = iq.g.transpose();
  double best_err = kInf;
  Eigen::VectorXd best_x = x, best_y = y, best_z = z;
  int last_improve = 0;
  // aim two digits past the requested tolerance while progress is cheap
  const double target = opts.tol * 1e-2;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    Eigen::VectorXd grad = p.cost + q.cwiseProduct(x);
    Eigen::VectorXd rd = grad + gt * z;
    if (me > 0) rd += p.a_eq.transpose() * y;
    Eigen::VectorXd rp =
        me > 0 ? Eigen::VectorXd(p.a_eq * x - p.b_eq) : Eigen::VectorXd(0);
    Eigen::VectorXd rg = iq.g * x + s - iq.h;
    double mu = s.dot(z) / mi;

    KktResiduals res = compute_residuals(p, iq, x, y, z);
    double muscale = mu / (1.0 + std::abs(p.objective(x)));
    double err = std::max({res.primal, res.dual, muscale});
    if (err < 0.7 * best_err) last_improve = iter;
    if (err < best_err) {
      best_err = err;
      best_x = x;
      best_y = y;
      best_z = z;
    }
    bool acceptable = res.primal <= opts.tol && res.dual <= opts.tol &&
                      muscale <= opts.tol;
    bool excellent = res.primal <= target && res.dual <= target &&
                     muscale <= target;
    if (excellent || (acceptable && iter - last_improve >= 4)) {
      polish(p, iq, q, x, y, z, res);
      sol.status = SolveStatus::kOptimal;
      sol.x = x;
      sol.dual_eq = y;
      split_duals(p, iq, z, sol);
      sol.kkt = res;
      sol.objective = p.objective(x);
      sol.iterations = iter;
      return sol;
    }
    if (x.lpNorm<Eigen::Infinity>() > 1e14 || !x.allFinite()) break;

    Eigen::VectorXd w = z.cwiseQuotient(s);
    SpMat gtwg = gt * w.asDiagonal() * iq.g;
    double dreg = std::max(delta, 1e-12 * (1.0 + q.maxCoeff()));
    if (!factor.factor(q, gtwg, p.a_eq, dreg)) {
      bool refactored = false;
      for (double bump = 1e-7; bump <= 1e-3; bump *= 100) {
        if (factor.factor(q, gtwg, p.a_eq, bump)) {
          refactored = true;
          break;
        }
      }
      if (!refactored) break;
    }

    auto solve_dir = [&](const Eigen::VectorXd& rsz, Eigen::VectorXd& dx,
                         Eigen::VectorXd& dy, Eigen::VectorXd& dz,
                         Eigen::VectorXd& ds) {
      Eigen::VectorXd tmp = w.cwiseProduct(rg) - rsz.cwiseQuotient(s);
      Eigen::VectorXd rhs(n + me);
      rhs.head(n) = -rd - gt * tmp;
      if (me > 0) rhs.tail(me) = -rp;
      Eigen::VectorXd dxy = factor.solve(rhs);
      dx = dxy.head(n);
      dy = dxy.tail(me);
      dz = w.cwiseProduct(iq.g * dx) + tmp;
      ds = -rg - iq.g * dx;
    };

    Eigen::VectorXd dx_a, dy_a, dz_a, ds_a;
    solve_dir(s.cwiseProduct(z), dx_a, dy_a, dz_a, ds_a);
    double ap = step_length(s, ds_a, 1.0);
    double ad = step_length(z, dz_a, 1.0);
    double mu_aff = (s + ap * ds_a).dot(z + ad * dz_a) / mi;
    double sigma = std::pow(mu_aff / mu, 3);
    sigma = std::clamp(sigma, 0.0, 1.0);

    Eigen::VectorXd rsz =
        s.cwiseProduct(z) + ds_a.cwiseProduct(dz_a) -
        Eigen::VectorXd::Constant(mi, sigma * mu);
    Eigen::VectorXd dx, dy, dz, ds;
    solve_dir(rsz, dx, dy, dz, ds);

    const double tau = 0.995;
    double alpha_p = step_length(s, ds, tau);
    double alpha_d = step_length(z, dz, tau);
    x += alpha_p * dx;
    s += alpha_p * ds;
    y += alpha_d * dy;
    z += alpha_d * dz;
    sol.iterations = iter + 1;
  }

  // ran out of iterations; the best iterate may still meet the tolerance
  sol.x = best_x;
  sol.dual_eq = best_y;
  split_duals(p, iq, best_z, sol);
  sol.kkt = compute_residuals(p, iq, best_x, best_y, best_z);
  sol.objective = p.objective(best_x);
  if (best_err <= opts.tol) {
    Eigen::VectorXd zb = best_z;
    polish(p, iq, q, best_x, best_y, zb, sol.kkt);
    sol.x = best_x;
    sol.dual_eq = best_y;
    split_duals(p, iq, zb, sol);
    sol.objective = p.objective(best_x);
    sol.status = SolveStatus::kOptimal;
    return sol;
  }
  sol.status = SolveStatus::kNumericalFailure;
  if (opts.classify_failures) {
    std::string detail;
    Solution fs = feasibility_probe(p, opts.tol, &detail);
    if (fs.status == SolveStatus::kOptimal && fs.objective > 1e-7) {
      sol.status = SolveStatus::kInfeasible;
      sol.infeasibility_detail = detail;
    } else if (unbounded_probe(p, 1e-7)) {
      sol.status = SolveStatus::kUnbounded;
    }
  }
  return sol;
}

}  // namespace

Solution solve(const ConvexProgram& p, const SolverOptions& opts) {
  return ipm_solve(p, opts);
}

DifferentiableSolution solve_differentiable(const ConvexProgram& p,
                                            const SpMat& price_map,
                                            const Eigen::VectorXd& lambda,
                                            double eps,
                                            const SolverOptions& opts) {
  if (eps <= 0) throw std::invalid_argument("solve_differentiable: eps <= 0");
  const int d = static_cast<int>(price_map.rows());
  ConvexProgram reg = p;
  if (reg.quad.size() != reg.n) reg.quad = Eigen::VectorXd::Zero(reg.n);
  reg.quad.array() += eps;
  reg.cost -= price_map.transpose() * lambda;

  DifferentiableSolution out;
  out.sol = solve(reg, opts);
  out.jacobian = Eigen::MatrixXd::Zero(p.n, d);
  if (out.sol.status != SolveStatus::kOptimal || d == 0) return out;

  const double act_tol = 1e-8;
  std::vector<Eigen::VectorXd> act_rows;
  std::vector<double> act_rhs;
  auto push_dense = [&](const Eigen::VectorXd& r, double b) {
    act_rows.push_back(r);
    act_rhs.push_back(b);
  };
  for (int i = 0; i < reg.a_eq.rows(); ++i)
    push_dense(reg.a_eq.row(i).transpose(), reg.b_eq[i]);
  for (int i = 0; i < reg.a_ub.rows(); ++i)
    if (out.sol.dual_ub[i] > act_tol)
      push_dense(reg.a_ub.row(i).transpose(), reg.b_ub[i]);
  for (int j = 0; j < reg.n; ++j) {
    if (out.sol.dual_hi[j] > act_tol) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(reg.n);
      e[j] = 1.0;
      push_dense(e, reg.ub[j]);
    }
    if (out.sol.dual_lo[j] > act_tol) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(reg.n);
      e[j] = -1.0;
      push_dense(e, -reg.lb[j]);
    }
  }
  int ma = static_cast<int>(act_rows.size());
  Eigen::MatrixXd a_act(ma, reg.n);
  Eigen::VectorXd b_act(ma);
  for (int i = 0; i < ma; ++i) {
    a_act.row(i) = act_rows[i].transpose();
    b_act[i] = act_rhs[i];
  }

  // drop dependent active rows for one consistent selection
  if (ma > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a_act.transpose());
    int rank = static_cast<int>(qr.rank());
    if (rank < ma) {
      out.degenerate = true;
      Eigen::MatrixXd keep(rank, reg.n);
      Eigen::VectorXd keep_rhs(rank);
      for (int i = 0; i < rank; ++i) {
        keep.row(i) = a_act.row(qr.colsPermutation().indices()[i]);
        keep_rhs[i] = b_act[qr.colsPermutation().indices()[i]];
      }
      a_act = keep;
      b_act = keep_rhs;
      ma = rank;
    }
  }

  Eigen::MatrixXd kkt(reg.n + ma, reg.n + ma);
  kkt.setZero();
  kkt.topLeftCorner(reg.n, reg.n) = reg.quad.asDiagonal();
  if (ma > 0) {
    kkt.topRightCorner(reg.n, ma) = a_act.transpose();
    kkt.bottomLeftCorner(ma, reg.n) = a_act;
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);

  // polish: re-solve on the fixed active set, keep the point if it stays
  // feasible (kills interior-point fuzz that finite differences would see)
  {
    Eigen::VectorXd rhs(reg.n + ma);
    rhs.head(reg.n) = -reg.cost;
    rhs.tail(ma) = b_act;
    Eigen::VectorXd xv = lu.solve(rhs);
    Eigen::VectorXd x_pol = xv.head(reg.n);
    bool ok = x_pol.allFinite();
    if (ok) {
      const double ftol = 1e-7;
      for (int j = 0; j < reg.n && ok; ++j)
        ok = x_pol[j] >= reg.lb[j] - ftol && x_pol[j] <= reg.ub[j] + ftol;
      if (ok && reg.a_ub.rows() > 0)
        ok = ((reg.a_ub * x_pol - reg.b_ub).array() <= ftol).all();
      if (ok && reg.a_eq.rows() > 0)
        ok = ((reg.a_eq * x_pol - reg.b_eq).cwiseAbs().array() <= ftol).all();
      if (ok && reg.objective(x_pol) <= out.sol.objective + 1e-7) {
        out.sol.x = x_pol;
        out.sol.objective = reg.objective(x_pol);
      }
    }
  }

  Eigen::MatrixXd rhs(reg.n + ma, d);
  rhs.setZero();
  rhs.topRows(reg.n) = Eigen::MatrixXd(price_map.transpose());
  Eigen::MatrixXd sol_cols = lu.solve(rhs);
  out.jacobian = sol_cols.topRows(reg.n);
  return out;
}

}  // namespace sesoffer
