#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sesoffer/network.hpp"
#include "sesoffer/program.hpp"
#include "sesoffer/solver.hpp"
#include "sesoffer/uncertainty.hpp"

namespace sesoffer {

// ---------------------------------------------------------------------------
// data model

enum class DerKind { kGeneration, kFlexibleLoad, kStorage };

/// One controllable resource in the aggregator's portfolio. Generation and
/// flexible load are per-interval boxes with a signed energy cost; storage
/// adds a charge/discharge split, efficiencies and a cyclic state of charge.
struct DerUnit {
  std::string name;
  DerKind kind = DerKind::kGeneration;
  int bus = 0;
  Eigen::VectorXd p_min;  // MW per interval (signed; load is negative)
  Eigen::VectorXd p_max;
  double cost = 0.0;  // $/MWh on signed output
  // storage only
  double e_max = 0.0;
  double p_rate = 0.0;
  double eta_c = 1.0, eta_d = 1.0;
  double e0_frac = 0.5;
  double cost_throughput = 0.0;  // $/MWh on charge+discharge
};

struct DerPortfolio {
  std::vector<DerUnit> units;
  /// Fraction of the realized feeder-delivered award injected at each bus.
  /// Declared connection data; nonnegative, sums to one.
  std::map<int, double> delivery_shares;
};

struct OfferConfig {
  int pairs = 1;
  double alpha_min = 0.0;
  double alpha_max = 1000.0;
  Eigen::MatrixXd pair_q_min;  // (S, T) MW, outer capability of each pair
  Eigen::MatrixXd pair_q_max;
};

/// Public catalog of the storage lease service: capacity on offer,
/// proportionality coefficients, efficiencies, throughput fee, prices.
struct LeaseTerms {
  bool enabled = true;
  double e_cap = 0.0;  // MWh available to lease
  double p_cap = 0.0;  // MW available
  double k_c = 0.5, k_d = 0.5, k = 0.5;
  double eta_c = 1.0, eta_d = 1.0;
  double e_min = 0.0;
  double c_om = 0.0;      // $/MWh throughput fee
  double lambda_e = 0.0;  // capacity prices ($/MWh-day, $/MW-day)
  double lambda_p = 0.0;
};

/// Utility-private physical storage asset.
struct SesAssetParams {
  double e_max = 0.0, p_max = 0.0;
  double e_min = 0.0, e0 = 0.0;
  double eta_c = 1.0, eta_d = 1.0;
  double c_om = 0.0;
  double c_e = 0.0, c_p = 0.0;  // unit investment costs
  double rate = 0.08;
  double years = 10.0;
};

/// Utility-private network data: feeder, expected background injections of
/// the certain buses (rows of uncertain buses stay zero; their centers live
/// in the box), and the uncertainty box.
struct DnData {
  Network net;
  Eigen::MatrixXd background_p;  // (#buses, T) per-unit
  DnBox box;
  double base_mva = 10.0;
};

struct AggregatorData {
  DerPortfolio portfolio;
  OfferConfig offer;
  PriceBox price_box;
};

struct UtilityData {
  SesAssetParams asset;
  DnData dn;
  Eigen::VectorXd price_forecast;  // $/MWh
};

struct ProblemInstance {
  int horizon = 0;
  std::vector<AggregatorData> aggregators;
  UtilityData utility;
  LeaseTerms lease;
  bool full_vertex_security = false;
  std::int64_t vertex_cap = 1 << 20;
};

// ---------------------------------------------------------------------------
// lease price floor

struct PriceFloor {
  double lambda_e_min = 0.0;
  double lambda_p_min = 0.0;
  double k_r = 0.0;
};

/// Daily-amortized investment floor: k_r = r(1+r)^y / (365 ((1+r)^y - 1)).
PriceFloor lease_price_floor(double rate, double years, double c_e, double c_p);

// ---------------------------------------------------------------------------
// network security

/// Per-interval bounds (MW) on the feeder-delivered quantity
/// `realized award - leased storage net output`. Derived from the extreme
/// corners of the network box; exact for nonnegative sensitivities and
/// delivery shares.
struct SecurityEnvelope {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

struct SecurityViolation {
  int bus_id = -1;
  int t = -1;
  std::string corner;   // which box corner exposes the violation
  double amount = 0.0;  // squared-voltage excursion
};

struct EnvelopeResult {
  SecurityEnvelope envelope;
  bool background_secure = true;
  SecurityViolation background_violation;
};

EnvelopeResult compute_security_envelope(const DnData& dn,
                                         const std::map<int, double>& shares,
                                         int horizon);

/// Explicit corner constraint:  coef * (endpoint - lease_net_t) <= rhs for
/// the upper voltage side, >= rhs for the lower, where endpoint is the max
/// or min edge of the offer range at interval t.
struct VertexSecurityRow {
  int t = 0;
  bool upper = true;
  bool at_max_endpoint = true;
  double coef = 0.0;  // squared p.u. per MW delivered
  double rhs = 0.0;
  int bus_id = 0;
  std::int64_t corner = 0;
};

std::vector<VertexSecurityRow> enumerate_vertex_rows(
    const DnData& dn, const std::map<int, double>& shares, int horizon,
    std::int64_t cap);

/// Utility-side verdict on a requested offer range against every corner.
std::optional<SecurityViolation> check_offer_range_security(
    const DnData& dn, const std::map<int, double>& shares,
    const Eigen::VectorXd& nsor_lo, const Eigen::VectorXd& nsor_hi,
    const Eigen::VectorXd& lease_net, double tol = 1e-9);

struct McSecurityReport {
  int samples = 0;
  int violations = 0;
  double worst_excursion = 0.0;  // squared p.u. beyond the bounds
};

/// Interior Monte-Carlo validation of the corner-based guarantee.
McSecurityReport mc_security_check(const DnData& dn,
                                   const std::map<int, double>& shares,
                                   const Eigen::VectorXd& nsor_lo,
                                   const Eigen::VectorXd& nsor_hi,
                                   const Eigen::VectorXd& lease_net,
                                   int n_samples, std::uint64_t seed,
                                   double tol = 1e-6);

// ---------------------------------------------------------------------------
// decisions

struct AggregatorDecision {
  Eigen::MatrixXd p_pair;  // (S, T)
  Eigen::MatrixXd alpha;
  Eigen::VectorXd p_g;
  Eigen::VectorXd nsor_lo, nsor_hi;  // widest valid range
  Eigen::VectorXd p_ag;
  Eigen::VectorXd lease_ch, lease_dis, lease_net, lease_energy;
  double e_cap = 0.0, p_cap = 0.0;  // shrunk to what the schedule needs
  double revenue = 0.0;             // robust bound or priced revenue
  double der_cost = 0.0;
  double om_fee = 0.0;
  double lease_fee = 0.0;
  std::vector<Eigen::VectorXd> unit_p;
  std::string warnings;

  double profit() const { return revenue - der_cost - om_fee - lease_fee; }
  double energy_sold() const;
  double energy_bought() const;
};

struct UtilityDecision {
  Eigen::VectorXd ch, dis, p_market, energy, loss;
  double market_revenue = 0.0;
  double own_om_cost = 0.0;
  double om_fee_income = 0.0;
  double lease_income = 0.0;
  double lambda_e = 0.0, lambda_p = 0.0;

  double profit() const {
    return lease_income + market_revenue + om_fee_income - own_om_cost;
  }
};

// ---------------------------------------------------------------------------
// pricing of the aggregator's market revenue

struct Pricing {
  enum class Kind { kRobustBox, kFixed } kind = Kind::kRobustBox;
  Eigen::VectorXd fixed_prices;

  static Pricing robust() { return {Kind::kRobustBox, {}}; }
  static Pricing fixed(const Eigen::VectorXd& p) { return {Kind::kFixed, p}; }
};

/// Marginal-cost floor per offer pair from the merit order of the portfolio.
Eigen::MatrixXd pair_cost_floors(const DerPortfolio& portfolio,
                                 const OfferConfig& offer, int horizon);

// ---------------------------------------------------------------------------
// aggregator model

/// Offer/lease program of one aggregator. Keeps its builder so distributed
/// solves can patch the consensus terms between iterations. Capacity lease
/// fees are settled outside the solved objective; the throughput fee is a
/// real cost to the aggregator and stays in.
class AggregatorModel {
 public:
  AggregatorModel(const AggregatorData& data, const LeaseTerms& lease,
                  int horizon, const Pricing& pricing,
                  const SecurityEnvelope* envelope,
                  const std::vector<VertexSecurityRow>* vertex_rows = nullptr,
                  bool with_coupling_aux = false);

  ConvexProgram program() const { return pb_.build(); }

  /// Consensus patch: gap_t = frozen_net_t - lease_net_t with quadratic
  /// weight rho/2 and linear weight -pi_t.
  void set_coupling(const Eigen::VectorXd& pi,
                    const Eigen::VectorXd& frozen_net, double rho);

  /// Re-price the objective under new per-interval prices (surrogate mode).
  void set_fixed_prices(const Eigen::VectorXd& lambda);

  /// Best-response helpers: transact the leased profile at fixed values and
  /// charge the capacity fees inside the objective.
  void pin_lease_profile(const Eigen::VectorXd& lease_net);
  void add_lease_fees(double lambda_e, double lambda_p);

  /// Pin the awarded totals (delivery re-dispatch after market clearing).
  void pin_awards(const Eigen::VectorXd& awards);

  void set_lease_prices(double lambda_e, double lambda_p) {
    fee_lambda_e_ = lambda_e;
    fee_lambda_p_ = lambda_p;
  }

  AggregatorDecision extract(const Solution& sol) const;

  int horizon() const { return horizon_; }

  struct VarMap {
    Eigen::ArrayXXi p_pair, alpha;  // (S, T)
    std::vector<int> p_g, nsor_lo, nsor_hi, p_ag;
    std::vector<int> lease_ch, lease_dis, lease_net, lease_energy;
    int e_cap = -1, p_cap = -1;
    int z = -1;
    std::vector<int> gap;
    std::vector<int> award_sum_rows;  // equality rows p_g = sum_s pair award
    std::vector<std::vector<int>> unit_p, unit_ch, unit_dis, unit_e;
  };
  const VarMap& map() const { return map_; }

 private:
  AggregatorData data_;
  LeaseTerms lease_;
  int horizon_;
  Pricing pricing_;
  std::optional<SecurityEnvelope> envelope_;
  Eigen::MatrixXd cost_floors_;
  ProgramBuilder pb_;
  VarMap map_;
  std::vector<int> gap_rows_;
  double fee_lambda_e_ = 0.0, fee_lambda_p_ = 0.0;

  void build(const std::vector<VertexSecurityRow>* vertex_rows,
             bool with_coupling_aux);
};

// ---------------------------------------------------------------------------
// utility model

enum class UtilityCoupling {
  kNone,        // storage balance added externally (combined model)
  kPenalty,     // consensus penalty, patched per iteration
  kHardFrozen,  // balance pinned to a frozen leased profile
};

class UtilityModel {
 public:
  UtilityModel(const UtilityData& data, const LeaseTerms& lease, int horizon,
               UtilityCoupling coupling);

  ConvexProgram program() const { return pb_.build(); }

  void set_coupling(const Eigen::VectorXd& pi,
                    const Eigen::VectorXd& lease_net_total, double rho);
  void set_hard_coupling_rhs(const Eigen::VectorXd& lease_net_total);

  UtilityDecision extract(const Solution& sol, double leased_e_cap,
                          double leased_p_cap, double om_fee_income,
                          double lambda_e, double lambda_p) const;

  /// Capacity shadow prices from the physical-cap multipliers, floored by
  /// the investment recovery rule.
  std::pair<double, double> recover_lease_prices(const Solution& sol) const;

  const PriceFloor& floor() const { return floor_; }

  struct VarMap {
    std::vector<int> ch, dis, p_market, energy, loss;
    std::vector<int> gap;
  };
  const VarMap& map() const { return map_; }

 private:
  UtilityData data_;
  LeaseTerms lease_;
  int horizon_;
  UtilityCoupling coupling_;
  ProgramBuilder pb_;
  VarMap map_;
  std::vector<int> gap_rows_;
  std::vector<int> hard_rows_;
  PriceFloor floor_;
};

// ---------------------------------------------------------------------------
// combined single-level model

/// Joint program over every aggregator block plus the utility block, with
/// the award-sum and storage-balance equalities as tagged rows whose duals
/// are retrievable. Capacity lease fees and the throughput-fee transfer
/// cancel between the entities and never enter the objective.
class CombinedModel {
 public:
  CombinedModel(const ProblemInstance& inst,
                const std::vector<Pricing>& pricing_per_agg);

  const ConvexProgram& program() const { return prog_; }

  struct Result {
    std::vector<AggregatorDecision> agg;
    UtilityDecision util;
    Eigen::VectorXd phi;  // duals of award-sum rows, aggregator-major
    Eigen::VectorXd pi;   // duals of storage-balance rows
    double objective = 0.0;
    double lambda_e = 0.0, lambda_p = 0.0;
  };
  Result extract(const Solution& sol) const;

  const SecurityEnvelope& envelope(int b) const { return envelopes_[b]; }

 private:
  ProblemInstance inst_;
  ConvexProgram prog_;
  std::vector<std::unique_ptr<AggregatorModel>> agg_models_;
  std::unique_ptr<UtilityModel> util_model_;
  std::vector<int> agg_var_offset_, agg_eq_offset_, agg_ub_offset_;
  int util_var_offset_ = 0, util_eq_offset_ = 0, util_ub_offset_ = 0;
  std::vector<int> pi_rows_;
  std::vector<SecurityEnvelope> envelopes_;
};

/// Sum of entity profits reconciles with the combined objective value up to
/// the throughput-fee transfer (capacity fees cancel inside the sum).
double profit_reconciliation_gap(const CombinedModel::Result& r);

/// Map from per-interval prices to the priced linear form over the model's
/// variables: row t sums the pair awards of interval t.
SpMat award_price_map(const AggregatorModel& model);

}  // namespace sesoffer
