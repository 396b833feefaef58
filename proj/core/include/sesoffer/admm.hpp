#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sesoffer/agents.hpp"

namespace sesoffer {

struct AdmmOptions {
  double rho = 0.01;
  double eps_pri = 1e-4;
  double eps_dual = 1e-4;
  int k_max = 500;
  double solver_tol = 1e-9;
};

/// Value of the consensus augmentation: sum_i (-dual_i gap_i + rho/2 gap_i^2).
double augmentation_value(const Eigen::VectorXd& duals,
                          const Eigen::VectorXd& gaps, double rho);

/// One multiplier update step: dual' = dual - rho * gap, componentwise.
Eigen::VectorXd dual_update(const Eigen::VectorXd& dual,
                            const Eigen::VectorXd& gap, double rho);

/// Primal residual from the multiplier movement of both families.
double primal_residual_norm(const Eigen::VectorXd& dphi,
                            const Eigen::VectorXd& dpi);

struct IterationRecord {
  int k = 0;
  double r_norm = 0.0;  // multiplier-movement residual
  double s_norm = 0.0;  // counterpart iterate movement
  double agg_profit = 0.0;
  double util_profit = 0.0;
  double gap_award = 0.0;    // ||p_g - sum_s award||
  double gap_balance = 0.0;  // ||storage balance residual||
};

// ---------------------------------------------------------------------------
// exchanged data (the only values that cross the privacy boundary)

struct AggShare {
  int iter = 0;
  Eigen::VectorXd p_g;
  Eigen::VectorXd lease_net, lease_ch, lease_dis;
  double e_cap_req = 0.0, p_cap_req = 0.0;
  Eigen::VectorXd nsor_lo, nsor_hi;
  Eigen::VectorXd phi, pi;
};

struct UtilShare {
  int iter = 0;
  Eigen::VectorXd net_discharge;  // physical discharge minus charge
  Eigen::VectorXd p_market;
  std::string security_status;  // "feasible" or "violation"
  int violation_bus = -1, violation_t = -1;
  std::string violation_corner;
  double lambda_e = 0.0, lambda_p = 0.0;
  Eigen::VectorXd envelope_lo, envelope_hi;
};

// ---------------------------------------------------------------------------
// agents

/// Surrogate pricing hook for the end-to-end mode: maps the previous plan's
/// per-interval awarded totals to predicted clearing prices.
using PricingHook = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

class AggregatorAgent {
 public:
  AggregatorAgent(const AggregatorData& data, const LeaseTerms& lease,
                  int horizon, const AdmmOptions& opts,
                  PricingHook hook = nullptr);

  /// Consumes the utility's opening message (envelope, prices).
  void receive_init(const UtilShare& init);

  AggShare step(int k, const UtilShare& prev);

  struct Convergence {
    double r_norm = 0.0, s_norm = 0.0;
    bool converged = false;
    Eigen::VectorXd gap_award, gap_balance;
  };
  Convergence update_duals(const UtilShare& fresh);

  AggregatorDecision decision(double lambda_e, double lambda_p) const;
  const Eigen::VectorXd& phi() const { return phi_; }
  const Eigen::VectorXd& pi() const { return pi_; }
  std::string last_error() const { return error_; }

 private:
  AggregatorData data_;
  LeaseTerms lease_;
  int horizon_;
  AdmmOptions opts_;
  PricingHook hook_;
  std::unique_ptr<AggregatorModel> model_;
  SecurityEnvelope envelope_;
  Eigen::VectorXd phi_, pi_;
  Eigen::VectorXd prev_counterpart_;  // stacked utility values, for s-norm
  Solution last_sol_;
  AggShare last_share_;
  std::string error_;
};

class UtilityAgent {
 public:
  UtilityAgent(const UtilityData& data, const LeaseTerms& lease, int horizon,
               const std::map<int, double>& delivery_shares,
               const AdmmOptions& opts);

  UtilShare init() const;
  UtilShare step(const AggShare& share);

  UtilityDecision decision(double leased_e, double leased_p,
                           double om_income) const;
  std::string last_error() const { return error_; }

 private:
  UtilityData data_;
  LeaseTerms lease_;
  int horizon_;
  std::map<int, double> shares_;
  AdmmOptions opts_;
  UtilityModel model_;
  EnvelopeResult env_;
  Solution last_sol_;
  double lambda_e_ = 0.0, lambda_p_ = 0.0;
  std::string error_;
};

// ---------------------------------------------------------------------------
// orchestration

struct EquilibriumResult {
  enum class Status { kConverged, kMaxIterations, kInfeasible } status =
      Status::kMaxIterations;
  std::vector<AggregatorDecision> agg;
  UtilityDecision util;
  Eigen::VectorXd phi, pi;
  double combined_objective = 0.0;
  double agg_profit = 0.0;
  double util_profit = 0.0;
  double lambda_e = 0.0, lambda_p = 0.0;
  SecurityEnvelope envelope;
  std::vector<IterationRecord> log;
  int iterations = 0;
  std::string message;
};

/// Alternating consensus loop between the two agents; the aggregator runs
/// the multiplier updates and the stopping test.
EquilibriumResult run_admm(const ProblemInstance& inst,
                           const AdmmOptions& opts,
                           PricingHook hook = nullptr);

inline EquilibriumResult run_mode1(const ProblemInstance& inst,
                                   const AdmmOptions& opts = {}) {
  return run_admm(inst, opts, nullptr);
}

/// Combined objective value implied by a pair of entity decisions.
double combined_objective_value(const std::vector<AggregatorDecision>& agg,
                                const UtilityDecision& util);

void write_iteration_log(const std::vector<IterationRecord>& log,
                         const std::string& path);

}  // namespace sesoffer
