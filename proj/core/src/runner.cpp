#include "sesoffer/runner.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace sesoffer {

RunMode parse_mode(const std::string& s) {
  if (s == "centralized") return RunMode::kCentralized;
  if (s == "mode1") return RunMode::kMode1;
  if (s == "mode2") return RunMode::kMode2;
  if (s == "no-ses") return RunMode::kNoSes;
  if (s == "duet") return RunMode::kDuet;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

namespace {

namespace fs = std::filesystem;

void write_results_csv(const fs::path& path, const AggregatorDecision& a,
                       const UtilityDecision& u) {
  std::ofstream os(path);
  os.precision(12);
  os << "metric,value\n";
  os << "agg_profit," << a.profit() << '\n';
  os << "energy_trading_mwh," << a.p_g.sum() << '\n';
  os << "energy_sold_mwh," << a.energy_sold() << '\n';
  os << "energy_bought_mwh," << a.energy_bought() << '\n';
  os << "leased_energy_capacity_mwh," << a.e_cap << '\n';
  os << "leased_power_capacity_mw," << a.p_cap << '\n';
  os << "leasing_cost," << a.lease_fee << '\n';
  os << "om_fee," << a.om_fee << '\n';
  os << "util_profit," << u.profit() << '\n';
  os << "util_lease_revenue," << u.lease_income << '\n';
  os << "util_market_revenue," << u.market_revenue << '\n';
  os << "lambda_e," << u.lambda_e << '\n';
  os << "lambda_p," << u.lambda_p << '\n';
}

void write_nsor_csv(const fs::path& path, const AggregatorDecision& a) {
  std::ofstream os(path);
  os.precision(12);
  os << "t,nsor_lo_mw,nsor_hi_mw,awarded_mw,lease_net_mw\n";
  for (Eigen::Index t = 0; t < a.p_g.size(); ++t)
    os << t << ',' << a.nsor_lo[t] << ',' << a.nsor_hi[t] << ',' << a.p_g[t]
       << ',' << a.lease_net[t] << '\n';
}

void write_mc_csv(const fs::path& path, const McSecurityReport& mc) {
  std::ofstream os(path);
  os << "samples,violations,worst_excursion\n";
  os << mc.samples << ',' << mc.violations << ',' << mc.worst_excursion
     << '\n';
}

McSecurityReport validate_security(const ScenarioConfig& cfg,
                                   const AggregatorDecision& a) {
  return mc_security_check(
      cfg.instance.utility.dn,
      cfg.instance.aggregators[0].portfolio.delivery_shares, a.nsor_lo,
      a.nsor_hi, a.lease_net, cfg.mc_samples, cfg.seed);
}

struct CentralizedOutcome {
  CombinedModel::Result result;
  SecurityEnvelope envelope;
  bool ok = false;
  std::string message;
};

CentralizedOutcome solve_centralized(const ScenarioConfig& cfg,
                                     bool lease_enabled) {
  CentralizedOutcome out;
  ProblemInstance inst = cfg.instance;
  inst.lease.enabled = lease_enabled;
  CombinedModel model(inst, {Pricing::robust()});
  Solution sol = solve(model.program(), cfg.solver_tol);
  if (sol.status != SolveStatus::kOptimal) {
    out.message = std::string("joint solve ") + to_string(sol.status) +
                  (sol.infeasibility_detail.empty()
                       ? ""
                       : ": " + sol.infeasibility_detail);
    return out;
  }
  out.result = model.extract(sol);
  out.envelope = model.envelope(0);
  out.ok = true;
  return out;
}

}  // namespace

RealizedDay evaluate_realized(const ScenarioConfig& cfg,
                              const AggregatorDecision& decision,
                              const SecurityEnvelope& envelope,
                              double lambda_e, double lambda_p,
                              std::uint64_t day_seed) {
  if (!cfg.has_market)
    throw std::invalid_argument("scenario has no market section");
  const int t_count = cfg.instance.horizon;
  MarketDay day = realize_day(cfg.market, day_seed);
  RealizedDay out;
  out.prices.resize(t_count);
  out.awards.resize(t_count);
  const int s_count = static_cast<int>(decision.p_pair.rows());
  for (int t = 0; t < t_count; ++t) {
    std::vector<OfferPair> offers;
    for (int s = 0; s < s_count; ++s) {
      double q = decision.p_pair(s, t);
      if (std::abs(q) < 1e-9) continue;
      // sell side priced at the reported curve, buy side bids the cap
      double price = q > 0 ? decision.alpha(s, t)
                           : cfg.instance.aggregators[0].offer.alpha_max;
      offers.push_back({price, q});
    }
    ClearingResult cr = clear_interval(day.stack, offers, day.demand[t],
                                       cfg.market.price_cap,
                                       cfg.market.price_floor);
    out.prices[t] = cr.price;
    double total = 0.0;
    for (double a : cr.awards) total += a;
    out.awards[t] = total;
  }

  // re-dispatch to deliver the awards at the contracted lease capacities
  AggregatorData data = cfg.instance.aggregators[0];
  LeaseTerms lease = cfg.instance.lease;
  lease.e_cap = decision.e_cap;
  lease.p_cap = decision.p_cap;
  lease.enabled = decision.e_cap > 0 || decision.p_cap > 0;
  AggregatorModel model(data, lease, t_count,
                        Pricing::fixed(Eigen::VectorXd::Zero(t_count)),
                        &envelope);
  model.pin_awards(out.awards);
  Solution sol = solve(model.program(), 1e-9);
  if (sol.status != SolveStatus::kOptimal)
    throw std::runtime_error(std::string("award delivery dispatch ") +
                             to_string(sol.status));
  AggregatorDecision redispatch = model.extract(sol);
  double fees = lambda_e * decision.e_cap + lambda_p * decision.p_cap;
  out.profit = out.prices.dot(out.awards) - redispatch.der_cost -
               redispatch.om_fee - fees;
  return out;
}

RunReport run_scenario(const ScenarioConfig& cfg, RunMode mode,
                       const std::string& out_dir) {
  RunReport report;
  std::ostringstream summary;
  fs::path out(out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);

  const ProblemInstance& inst = cfg.instance;
  summary << "scenario: " << cfg.name << "\n";

  auto finish_solved = [&](const AggregatorDecision& a,
                           const UtilityDecision& u, int iterations) {
    report.outputs.solved = true;
    report.outputs.agg_profit = a.profit();
    report.outputs.util_profit = u.profit();
    report.outputs.lease_revenue = u.lease_income;
    report.outputs.iterations = iterations;
    write_results_csv(out / "results.csv", a, u);
    write_nsor_csv(out / "nsor.csv", a);
    McSecurityReport mc = validate_security(cfg, a);
    report.outputs.mc_violations = mc.violations;
    report.outputs.mc_worst = mc.worst_excursion;
    write_mc_csv(out / "mc_security.csv", mc);
    summary << "aggregator profit: " << a.profit() << "\n"
            << "utility profit:    " << u.profit() << "\n"
            << "lease revenue:     " << u.lease_income << "\n"
            << "leased capacity:   " << a.e_cap << " MWh / " << a.p_cap
            << " MW\n"
            << "security samples:  " << mc.samples
            << ", violations: " << mc.violations << "\n";
    if (!a.warnings.empty()) summary << "warning: " << a.warnings << "\n";
  };

  try {
    switch (mode) {
      case RunMode::kCentralized:
      case RunMode::kNoSes: {
        bool lease_on = mode == RunMode::kCentralized;
        CentralizedOutcome c = solve_centralized(cfg, lease_on);
        if (!c.ok) {
          report.exit_code = 1;
          report.outputs.message = c.message;
          summary << "infeasible: " << c.message << "\n";
          break;
        }
        report.outputs.objective = c.result.objective;
        finish_solved(c.result.agg[0], c.result.util, 0);
        break;
      }
      case RunMode::kMode1:
      case RunMode::kDuet: {
        EquilibriumResult r;
        if (mode == RunMode::kMode1) {
          r = run_mode1(inst, cfg.admm);
        } else {
          DuetResult d = run_duet(inst, cfg.admm, TransportKind::kInProcess);
          d.transcript.save((out / "transcript.log").string());
          AuditReport audit = audit_privacy(d.transcript);
          summary << "privacy audit: " << audit.records_scanned
                  << " records, " << audit.hits.size() << " hits\n";
          r = std::move(d.result);
        }
        if (r.status == EquilibriumResult::Status::kInfeasible) {
          report.exit_code = 1;
          report.outputs.message = r.message;
          summary << "infeasible: " << r.message << "\n";
          break;
        }
        write_iteration_log(r.log, (out / "iterations.csv").string());
        report.outputs.objective = r.combined_objective;
        summary << "iterations: " << r.iterations << "\n";
        if (r.status == EquilibriumResult::Status::kMaxIterations) {
          report.exit_code = 3;
          report.outputs.message = r.message;
          summary << "did not converge: " << r.message << "\n";
          finish_solved(r.agg[0], r.util, r.iterations);
          break;
        }
        // distributed result against the joint solve
        CentralizedOutcome c = solve_centralized(cfg, true);
        if (c.ok) {
          double gap = std::abs(r.combined_objective - c.result.objective) /
                       (std::abs(c.result.objective) + 1e-12);
          report.outputs.gap_vs_centralized = gap;
          summary << "objective gap vs centralized: " << gap * 100 << " %\n";
        }
        finish_solved(r.agg[0], r.util, r.iterations);
        break;
      }
      case RunMode::kMode2: {
        if (!cfg.has_market)
          throw ConfigError("market", "required by the surrogate mode");
        HistoryDataset history = generate_history(
            cfg.market, cfg.history_days, cfg.nominal_offer);
        write_history_csv(history, (out / "history.csv").string());
        AggregatorModel region_model(inst.aggregators[0], inst.lease,
                                     inst.horizon, Pricing::fixed(
                                         Eigen::VectorXd::Zero(inst.horizon)),
                                     nullptr);
        ConvexProgram region = region_model.program();
        SpMat price_map = award_price_map(region_model);
        TrainResult tr = train(region, price_map, history, cfg.train);
        write_training_trace(tr.trace, (out / "training_trace.csv").string());
        tr.surrogate.save((out / "surrogate.txt").string());
        if (tr.diverged) {
          report.exit_code = 3;
          report.outputs.message = "surrogate training diverged";
          summary << "surrogate training diverged\n";
          break;
        }
        Eigen::VectorXd prev_price = history.back().realized_price;
        EquilibriumResult r = run_mode2(inst, cfg.admm, tr.surrogate,
                                        prev_price);
        if (r.status == EquilibriumResult::Status::kInfeasible) {
          report.exit_code = 1;
          report.outputs.message = r.message;
          summary << "infeasible: " << r.message << "\n";
          break;
        }
        if (r.status == EquilibriumResult::Status::kMaxIterations)
          report.exit_code = 3;
        write_iteration_log(r.log, (out / "iterations.csv").string());
        report.outputs.objective = r.combined_objective;
        summary << "iterations: " << r.iterations << "\n";
        CentralizedE2e ce =
            solve_centralized_e2e(inst, tr.surrogate, prev_price);
        double base = std::abs(combined_objective_value(ce.result.agg,
                                                        ce.result.util));
        double gap = std::abs(r.combined_objective -
                              combined_objective_value(ce.result.agg,
                                                       ce.result.util)) /
                     (base + 1e-12);
        report.outputs.gap_vs_centralized = gap;
        summary << "objective gap vs joint fixed point: " << gap * 100
                << " %\n";
        double mean_profit = 0.0;
        const int eval_days = 10;
        for (int d = 1; d <= eval_days; ++d)
          mean_profit += evaluate_realized(cfg, r.agg[0], r.envelope,
                                           r.lambda_e, r.lambda_p,
                                           1000 + d)
                             .profit;
        report.outputs.realized_profit_mean = mean_profit / eval_days;
        summary << "mean realized profit over " << eval_days
                << " days: " << report.outputs.realized_profit_mean << "\n";
        finish_solved(r.agg[0], r.util, r.iterations);
        break;
      }
    }
  } catch (const ConfigError& e) {
    report.exit_code = 2;
    report.outputs.message = e.what();
    summary << "invalid config: " << e.what() << "\n";
  } catch (const std::exception& e) {
    report.exit_code = 1;
    report.outputs.message = e.what();
    summary << "failed: " << e.what() << "\n";
  }

  report.summary = summary.str();
  std::ofstream sf(out / "summary.txt");
  sf << report.summary;
  return report;
}

}  // namespace sesoffer
