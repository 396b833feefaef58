#include "sesoffer/admm.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace sesoffer {

double augmentation_value(const Eigen::VectorXd& duals,
                          const Eigen::VectorXd& gaps, double rho) {
  if (duals.size() != gaps.size())
    throw std::invalid_argument("dual/gap size mismatch");
  return -duals.dot(gaps) + 0.5 * rho * gaps.squaredNorm();
}

Eigen::VectorXd dual_update(const Eigen::VectorXd& dual,
                            const Eigen::VectorXd& gap, double rho) {
  return dual - rho * gap;
}

double primal_residual_norm(const Eigen::VectorXd& dphi,
                            const Eigen::VectorXd& dpi) {
  return std::sqrt(dphi.squaredNorm() + dpi.squaredNorm());
}

// ---------------------------------------------------------------------------
// AggregatorAgent

AggregatorAgent::AggregatorAgent(const AggregatorData& data,
                                 const LeaseTerms& lease, int horizon,
                                 const AdmmOptions& opts, PricingHook hook)
    : data_(data),
      lease_(lease),
      horizon_(horizon),
      opts_(opts),
      hook_(std::move(hook)) {
  phi_ = Eigen::VectorXd::Zero(horizon);
  pi_ = Eigen::VectorXd::Zero(horizon);
  prev_counterpart_ = Eigen::VectorXd::Zero(2 * horizon + 2);
}

void AggregatorAgent::receive_init(const UtilShare& init) {
  envelope_.lo = init.envelope_lo;
  envelope_.hi = init.envelope_hi;
  lease_.lambda_e = init.lambda_e;
  lease_.lambda_p = init.lambda_p;
  Pricing pricing = Pricing::robust();
  if (hook_) pricing = Pricing::fixed(hook_(Eigen::VectorXd::Zero(horizon_)));
  model_ = std::make_unique<AggregatorModel>(
      data_, lease_, horizon_, pricing, &envelope_, nullptr,
      /*with_coupling_aux=*/true);
}

AggShare AggregatorAgent::step(int k, const UtilShare& prev) {
  if (!model_) throw std::logic_error("aggregator not initialized");
  Eigen::VectorXd frozen_net =
      prev.net_discharge.size() == horizon_
          ? Eigen::VectorXd(prev.net_discharge - prev.p_market)
          : Eigen::VectorXd::Zero(horizon_);
  if (hook_ && last_share_.p_g.size() == horizon_)
    model_->set_fixed_prices(hook_(last_share_.p_g));
  model_->set_coupling(pi_, frozen_net, opts_.rho);

  Solution sol = solve(model_->program(), opts_.solver_tol);
  if (sol.status != SolveStatus::kOptimal) {
    error_ = std::string("aggregator subproblem ") + to_string(sol.status) +
             (sol.infeasibility_detail.empty()
                  ? ""
                  : ": " + sol.infeasibility_detail);
    throw std::runtime_error(error_);
  }
  last_sol_ = sol;
  AggregatorDecision d = model_->extract(sol);
  AggShare out;
  out.iter = k;
  out.p_g = d.p_g;
  out.lease_net = d.lease_net;
  out.lease_ch = d.lease_ch;
  out.lease_dis = d.lease_dis;
  out.e_cap_req = d.e_cap;
  out.p_cap_req = d.p_cap;
  out.nsor_lo = d.nsor_lo;
  out.nsor_hi = d.nsor_hi;
  out.phi = phi_;
  out.pi = pi_;
  last_share_ = out;
  return out;
}

AggregatorAgent::Convergence AggregatorAgent::update_duals(
    const UtilShare& fresh) {
  Convergence c;
  const int t_count = horizon_;
  // award-sum residual of the own iterate; the subproblem enforces the
  // identity, so this carries solver residue only
  c.gap_award.resize(t_count);
  const auto& m = model_->map();
  for (int t = 0; t < t_count; ++t) {
    double pair_sum = 0.0;
    for (int s = 0; s < m.p_pair.rows(); ++s)
      pair_sum += last_sol_.x[m.p_pair(s, t)];
    c.gap_award[t] = last_sol_.x[m.p_g[t]] - pair_sum;
  }
  c.gap_balance = fresh.net_discharge - fresh.p_market - last_share_.lease_net;

  Eigen::VectorXd phi_new = dual_update(phi_, c.gap_award, opts_.rho);
  Eigen::VectorXd pi_new = dual_update(pi_, c.gap_balance, opts_.rho);
  c.r_norm = primal_residual_norm(phi_new - phi_, pi_new - pi_);
  phi_ = phi_new;
  pi_ = pi_new;

  Eigen::VectorXd counterpart(2 * t_count + 2);
  counterpart << fresh.net_discharge, fresh.p_market, fresh.lambda_e,
      fresh.lambda_p;
  c.s_norm = (counterpart - prev_counterpart_).norm();
  prev_counterpart_ = counterpart;

  c.converged = c.r_norm <= opts_.eps_pri && c.s_norm <= opts_.eps_dual;
  return c;
}

AggregatorDecision AggregatorAgent::decision(double lambda_e,
                                             double lambda_p) const {
  if (!model_) throw std::logic_error("aggregator not initialized");
  model_->set_lease_prices(lambda_e, lambda_p);
  return model_->extract(last_sol_);
}

// ---------------------------------------------------------------------------
// UtilityAgent

UtilityAgent::UtilityAgent(const UtilityData& data, const LeaseTerms& lease,
                           int horizon,
                           const std::map<int, double>& delivery_shares,
                           const AdmmOptions& opts)
    : data_(data),
      lease_(lease),
      horizon_(horizon),
      shares_(delivery_shares),
      opts_(opts),
      model_(data, lease, horizon, UtilityCoupling::kPenalty),
      env_(compute_security_envelope(data.dn, delivery_shares, horizon)) {
  lambda_e_ = std::max(lease.lambda_e, model_.floor().lambda_e_min);
  lambda_p_ = std::max(lease.lambda_p, model_.floor().lambda_p_min);
}

UtilShare UtilityAgent::init() const {
  UtilShare s;
  s.iter = -1;
  s.net_discharge = Eigen::VectorXd::Zero(horizon_);
  s.p_market = Eigen::VectorXd::Zero(horizon_);
  s.security_status = env_.background_secure ? "feasible" : "violation";
  if (!env_.background_secure) {
    s.violation_bus = env_.background_violation.bus_id;
    s.violation_t = env_.background_violation.t;
    s.violation_corner = env_.background_violation.corner;
  }
  s.lambda_e = lambda_e_;
  s.lambda_p = lambda_p_;
  s.envelope_lo = env_.envelope.lo;
  s.envelope_hi = env_.envelope.hi;
  return s;
}

UtilShare UtilityAgent::step(const AggShare& share) {
  model_.set_coupling(share.pi, share.lease_net, opts_.rho);
  Solution sol = solve(model_.program(), opts_.solver_tol);
  if (sol.status != SolveStatus::kOptimal) {
    error_ = std::string("utility subproblem ") + to_string(sol.status) +
             (sol.infeasibility_detail.empty()
                  ? ""
                  : ": " + sol.infeasibility_detail);
    throw std::runtime_error(error_);
  }
  last_sol_ = sol;
  auto [lam_e, lam_p] = model_.recover_lease_prices(sol);
  lambda_e_ = lam_e;
  lambda_p_ = lam_p;

  UtilShare out;
  out.iter = share.iter;
  const auto& m = model_.map();
  out.net_discharge.resize(horizon_);
  out.p_market.resize(horizon_);
  for (int t = 0; t < horizon_; ++t) {
    out.net_discharge[t] = sol.x[m.dis[t]] - sol.x[m.ch[t]];
    out.p_market[t] = sol.x[m.p_market[t]];
  }
  auto violation = check_offer_range_security(
      data_.dn, shares_, share.nsor_lo, share.nsor_hi, share.lease_net, 1e-7);
  if (violation) {
    out.security_status = "violation";
    out.violation_bus = violation->bus_id;
    out.violation_t = violation->t;
    out.violation_corner = violation->corner;
  } else {
    out.security_status = "feasible";
  }
  out.lambda_e = lambda_e_;
  out.lambda_p = lambda_p_;
  out.envelope_lo = env_.envelope.lo;
  out.envelope_hi = env_.envelope.hi;
  return out;
}

UtilityDecision UtilityAgent::decision(double leased_e, double leased_p,
                                       double om_income) const {
  return model_.extract(last_sol_, leased_e, leased_p, om_income, lambda_e_,
                        lambda_p_);
}

// ---------------------------------------------------------------------------
// orchestration

double combined_objective_value(const std::vector<AggregatorDecision>& agg,
                                const UtilityDecision& util) {
  double v = util.own_om_cost - util.market_revenue;
  for (const auto& a : agg) v += a.der_cost + a.om_fee - a.revenue;
  return v;
}

EquilibriumResult run_admm(const ProblemInstance& inst,
                           const AdmmOptions& opts, PricingHook hook) {
  if (inst.aggregators.size() != 1)
    throw std::invalid_argument(
        "distributed mode currently supports exactly one aggregator");
  EquilibriumResult res;

  UtilityAgent util(inst.utility, inst.lease, inst.horizon,
                    inst.aggregators[0].portfolio.delivery_shares, opts);
  AggregatorAgent agg(inst.aggregators[0], inst.lease, inst.horizon, opts,
                      hook);
  UtilShare ushare = util.init();
  agg.receive_init(ushare);
  res.envelope.lo = ushare.envelope_lo;
  res.envelope.hi = ushare.envelope_hi;

  try {
    for (int k = 0; k < opts.k_max; ++k) {
      AggShare ashare = agg.step(k, ushare);
      ushare = util.step(ashare);
      auto conv = agg.update_duals(ushare);

      AggregatorDecision ad = agg.decision(ushare.lambda_e, ushare.lambda_p);
      UtilityDecision ud =
          util.decision(ad.e_cap, ad.p_cap, ad.om_fee);
      IterationRecord rec;
      rec.k = k;
      rec.r_norm = conv.r_norm;
      rec.s_norm = conv.s_norm;
      rec.agg_profit = ad.profit();
      rec.util_profit = ud.profit();
      rec.gap_award = conv.gap_award.norm();
      rec.gap_balance = conv.gap_balance.norm();
      res.log.push_back(rec);
      res.iterations = k + 1;

      if (conv.converged && k >= 1) {
        res.status = EquilibriumResult::Status::kConverged;
        break;
      }
    }
  } catch (const std::runtime_error& e) {
    res.status = EquilibriumResult::Status::kInfeasible;
    res.message = e.what();
    return res;
  }

  AggregatorDecision ad = agg.decision(ushare.lambda_e, ushare.lambda_p);
  UtilityDecision ud = util.decision(ad.e_cap, ad.p_cap, ad.om_fee);
  res.agg.push_back(ad);
  res.util = ud;
  res.phi = agg.phi();
  res.pi = agg.pi();
  res.lambda_e = ushare.lambda_e;
  res.lambda_p = ushare.lambda_p;
  res.combined_objective = combined_objective_value(res.agg, res.util);
  res.agg_profit = ad.profit();
  res.util_profit = ud.profit();
  if (res.status != EquilibriumResult::Status::kConverged &&
      res.status != EquilibriumResult::Status::kInfeasible)
    res.message = "stopped at the iteration cap with residuals above tolerance";
  return res;
}

void write_iteration_log(const std::vector<IterationRecord>& log,
                         const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "k,r_norm,s_norm,agg_profit,util_profit,gap_award,gap_balance\n";
  os.precision(12);
  for (const auto& r : log)
    os << r.k << ',' << r.r_norm << ',' << r.s_norm << ',' << r.agg_profit
       << ',' << r.util_profit << ',' << r.gap_award << ',' << r.gap_balance
       << '\n';
}

}  // namespace sesoffer
