#pragma once

#include <string>

#include "sesoffer/duet.hpp"
#include "sesoffer/scenario.hpp"

namespace sesoffer {

enum class RunMode { kCentralized, kMode1, kMode2, kNoSes, kDuet };

RunMode parse_mode(const std::string& s);

/// Numeric outcomes of one scenario run, also written to the report bundle.
struct RunOutputs {
  bool solved = false;
  double agg_profit = 0.0;
  double util_profit = 0.0;
  double lease_revenue = 0.0;
  double objective = 0.0;
  double gap_vs_centralized = -1.0;  // relative, < 0 when not computed
  int iterations = 0;
  int mc_violations = -1;
  double mc_worst = 0.0;
  double realized_profit_mean = 0.0;  // surrogate mode only
  std::string message;
};

struct RunReport {
  int exit_code = 0;  // 0 ok, 1 infeasible, 2 invalid config, 3 no convergence
  RunOutputs outputs;
  std::string summary;
};

/// Orchestrates one run: solve in the requested mode, Monte-Carlo validate
/// the security guarantee, and emit the report bundle (results/ranges/
/// iteration log/validation) under out_dir.
RunReport run_scenario(const ScenarioConfig& cfg, RunMode mode,
                       const std::string& out_dir);

/// Clears one realized market day against a submitted offer curve derived
/// from the decision, then re-dispatches the portfolio to deliver the
/// awards at the contracted lease.
struct RealizedDay {
  double profit = 0.0;
  Eigen::VectorXd prices;
  Eigen::VectorXd awards;
};

RealizedDay evaluate_realized(const ScenarioConfig& cfg,
                              const AggregatorDecision& decision,
                              const SecurityEnvelope& envelope,
                              double lambda_e, double lambda_p,
                              std::uint64_t day_seed);

}  // namespace sesoffer
