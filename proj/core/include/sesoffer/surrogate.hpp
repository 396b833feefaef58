#pragma once

#include <string>
#include <vector>

#include "sesoffer/admm.hpp"
#include "sesoffer/market.hpp"
#include "sesoffer/program.hpp"
#include "sesoffer/solver.hpp"

namespace sesoffer {

/// Affine per-interval clearing-price model:
///   price_t = theta0_t + theta_q_t * offered_q_t + theta_p_t * prev_price_t
struct Surrogate {
  Eigen::VectorXd theta0, theta_q, theta_p;

  int horizon() const { return static_cast<int>(theta0.size()); }
  Eigen::VectorXd predict(const Eigen::VectorXd& offered_q,
                          const Eigen::VectorXd& prev_price) const;

  void save(const std::string& path) const;
  static Surrogate load(const std::string& path);
};

/// Regret of deciding under predicted prices against the realized-price
/// optimum. Solved exactly (no regularization): zero when the prediction
/// matches the realized price, nonnegative always.
struct DecisionLoss {
  double loss = 0.0;
  Eigen::VectorXd x_star;
};

DecisionLoss decision_loss(const Eigen::VectorXd& predicted,
                           const Eigen::VectorXd& realized,
                           const ConvexProgram& region,
                           const SpMat& price_map);

struct TrainOptions {
  int epochs = 30;
  int batch = 32;
  double learning_rate = 0.01;
  double eps = 1e-3;  // regularization of the differentiable solve
  std::uint64_t seed = 1;
};

struct EpochStat {
  int epoch = 0;
  double mean_loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  Surrogate surrogate;
  std::vector<EpochStat> trace;
  bool diverged = false;
};

/// Mini-batch gradient descent on the decision loss, differentiated through
/// the regularized solve. The reported per-epoch loss uses the same
/// regularized solution the gradient is taken at.
TrainResult train(const ConvexProgram& region, const SpMat& price_map,
                  const HistoryDataset& data, const TrainOptions& opts);

/// Gradient of the mean regularized decision loss over a fixed batch,
/// stacked as [theta0; theta_q; theta_p]. Exposed for gradient checks.
Eigen::VectorXd batch_loss_gradient(const ConvexProgram& region,
                                    const SpMat& price_map,
                                    const HistoryDataset& batch,
                                    const Surrogate& s, double eps);
double batch_loss_value(const ConvexProgram& region, const SpMat& price_map,
                        const HistoryDataset& batch, const Surrogate& s,
                        double eps);

void write_training_trace(const std::vector<EpochStat>& trace,
                          const std::string& path);

/// Consensus loop with the aggregator step priced by the surrogate instead
/// of the robust box term; the utility side is unchanged. Convergence is
/// empirical.
EquilibriumResult run_mode2(const ProblemInstance& inst,
                            const AdmmOptions& opts, const Surrogate& s,
                            const Eigen::VectorXd& prev_price);

/// Fixed-point reference: repeatedly solve the joint model under frozen
/// surrogate prices, refreshing the prices from the solved plan.
struct CentralizedE2e {
  CombinedModel::Result result;
  Eigen::VectorXd prices;
  int iterations = 0;
  bool converged = false;
};

CentralizedE2e solve_centralized_e2e(const ProblemInstance& inst,
                                     const Surrogate& s,
                                     const Eigen::VectorXd& prev_price,
                                     double tol = 1e-8, int max_rounds = 60,
                                     double solver_tol = 1e-9);

}  // namespace sesoffer
