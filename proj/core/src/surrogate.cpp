#include "sesoffer/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sesoffer {

Eigen::VectorXd Surrogate::predict(const Eigen::VectorXd& offered_q,
                                   const Eigen::VectorXd& prev_price) const {
  if (offered_q.size() != horizon() || prev_price.size() != horizon())
    throw std::invalid_argument("surrogate feature length mismatch");
  return theta0.array() + theta_q.array() * offered_q.array() +
         theta_p.array() * prev_price.array();
}

static constexpr const char* kFeatureSchema = "offered_q,prev_price";

void Surrogate::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.precision(17);
  os << "sesoffer-surrogate 1\n";
  os << "horizon " << horizon() << '\n';
  os << "schema " << std::hash<std::string>{}(kFeatureSchema) << '\n';
  for (int t = 0; t < horizon(); ++t)
    os << theta0[t] << ' ' << theta_q[t] << ' ' << theta_p[t] << '\n';
}

Surrogate Surrogate::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string magic, key;
  int version, horizon;
  std::size_t schema;
  is >> magic >> version >> key >> horizon;
  if (magic != "sesoffer-surrogate" || key != "horizon")
    throw std::runtime_error(path + ": not a surrogate checkpoint");
  is >> key >> schema;
  if (key != "schema" || schema != std::hash<std::string>{}(kFeatureSchema))
    throw std::runtime_error(path + ": feature schema mismatch");
  Surrogate s;
  s.theta0.resize(horizon);
  s.theta_q.resize(horizon);
  s.theta_p.resize(horizon);
  for (int t = 0; t < horizon; ++t)
    is >> s.theta0[t] >> s.theta_q[t] >> s.theta_p[t];
  if (!is) throw std::runtime_error(path + ": truncated checkpoint");
  return s;
}

// ---------------------------------------------------------------------------
// decision loss

namespace {

Solution solve_priced(const ConvexProgram& region, const SpMat& price_map,
                      const Eigen::VectorXd& prices) {
  ConvexProgram p = region;
  p.cost -= price_map.transpose() * prices;
  Solution sol = solve(p, 1e-9);
  if (sol.status == SolveStatus::kUnbounded)
    throw std::runtime_error("priced region is unbounded");
  if (sol.status != SolveStatus::kOptimal)
    throw std::runtime_error(std::string("priced solve failed: ") +
                             to_string(sol.status));
  return sol;
}

}  // namespace

DecisionLoss decision_loss(const Eigen::VectorXd& predicted,
                           const Eigen::VectorXd& realized,
                           const ConvexProgram& region,
                           const SpMat& price_map) {
  Solution under_prediction = solve_priced(region, price_map, predicted);
  Solution under_truth = solve_priced(region, price_map, realized);
  const Eigen::VectorXd& x = under_prediction.x;
  double value_at_x =
      region.cost.dot(x) - realized.dot(price_map * x) + region.offset;
  DecisionLoss out;
  out.x_star = x;
  out.loss = value_at_x - under_truth.objective;
  return out;
}

// ---------------------------------------------------------------------------
// training

namespace {

struct SampleCache {
  std::vector<double> f_star;  // realized-price optimum per record
};

double regularized_sample_loss(const ConvexProgram& region,
                               const SpMat& price_map,
                               const HistoryRecord& rec,
                               const Surrogate& s, double eps, double f_star,
                               Eigen::VectorXd* grad_lambda) {
  Eigen::VectorXd lam_hat = s.predict(rec.offered_q, rec.prev_price);
  DifferentiableSolution ds =
      solve_differentiable(region, price_map, lam_hat, eps);
  if (ds.sol.status != SolveStatus::kOptimal)
    throw std::runtime_error("differentiable solve failed");
  const Eigen::VectorXd& x = ds.sol.x;
  Eigen::VectorXd effective_cost =
      region.cost - price_map.transpose() * rec.realized_price;
  double loss = effective_cost.dot(x) + region.offset - f_star;
  if (grad_lambda != nullptr)
    *grad_lambda = ds.jacobian.transpose() * effective_cost;
  return loss;
}

}  // namespace

double batch_loss_value(const ConvexProgram& region, const SpMat& price_map,
                        const HistoryDataset& batch, const Surrogate& s,
                        double eps) {
  double total = 0.0;
  for (const auto& rec : batch) {
    Solution truth = solve_priced(region, price_map, rec.realized_price);
    total += regularized_sample_loss(region, price_map, rec, s, eps,
                                     truth.objective, nullptr);
  }
  return total / static_cast<double>(batch.size());
}

Eigen::VectorXd batch_loss_gradient(const ConvexProgram& region,
                                    const SpMat& price_map,
                                    const HistoryDataset& batch,
                                    const Surrogate& s, double eps) {
  const int t_count = s.horizon();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(3 * t_count);
  for (const auto& rec : batch) {
    Solution truth = solve_priced(region, price_map, rec.realized_price);
    Eigen::VectorXd glam;
    regularized_sample_loss(region, price_map, rec, s, eps, truth.objective,
                            &glam);
    for (int t = 0; t < t_count; ++t) {
      grad[t] += glam[t];
      grad[t_count + t] += glam[t] * rec.offered_q[t];
      grad[2 * t_count + t] += glam[t] * rec.prev_price[t];
    }
  }
  return grad / static_cast<double>(batch.size());
}

TrainResult train(const ConvexProgram& region, const SpMat& price_map,
                  const HistoryDataset& data, const TrainOptions& opts) {
  if (data.empty()) throw std::invalid_argument("empty training set");
  if (opts.eps <= 0) throw std::invalid_argument("eps must be > 0");
  const int t_count = static_cast<int>(data.front().offered_q.size());

  TrainResult out;
  Surrogate& s = out.surrogate;
  s.theta0 = Eigen::VectorXd::Zero(t_count);
  s.theta_q = Eigen::VectorXd::Zero(t_count);
  s.theta_p = Eigen::VectorXd::Zero(t_count);
  for (const auto& rec : data) s.theta0 += rec.realized_price;
  s.theta0 /= static_cast<double>(data.size());

  SampleCache cache;
  cache.f_star.resize(data.size());
  for (size_t i = 0; i < data.size(); ++i)
    cache.f_star[i] =
        solve_priced(region, price_map, data[i].realized_price).objective;

  std::mt19937_64 rng(opts.seed);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  double initial_loss = kInf;
  int bad_epochs = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    double epoch_grad = 0.0;
    int n_batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(opts.batch)) {
      size_t end = std::min(order.size(), start + opts.batch);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(3 * t_count);
      double batch_loss = 0.0;
      for (size_t i = start; i < end; ++i) {
        const auto& rec = data[order[i]];
        Eigen::VectorXd glam;
        batch_loss += regularized_sample_loss(region, price_map, rec, s,
                                              opts.eps, cache.f_star[order[i]],
                                              &glam);
        for (int t = 0; t < t_count; ++t) {
          grad[t] += glam[t];
          grad[t_count + t] += glam[t] * rec.offered_q[t];
          grad[2 * t_count + t] += glam[t] * rec.prev_price[t];
        }
      }
      double count = static_cast<double>(end - start);
      grad /= count;
      batch_loss /= count;
      s.theta0 -= opts.learning_rate * grad.head(t_count);
      s.theta_q -= opts.learning_rate * grad.segment(t_count, t_count);
      s.theta_p -= opts.learning_rate * grad.tail(t_count);
      epoch_loss += batch_loss;
      epoch_grad += grad.norm();
      ++n_batches;
    }
    epoch_loss /= n_batches;
    epoch_grad /= n_batches;
    out.trace.push_back({epoch, epoch_loss, epoch_grad});
    if (epoch == 0) initial_loss = std::abs(epoch_loss) + 1e-12;
    bad_epochs = epoch_loss > 10.0 * initial_loss ? bad_epochs + 1 : 0;
    if (bad_epochs >= 3) {
      out.diverged = true;
      break;
    }
  }
  return out;
}

void write_training_trace(const std::vector<EpochStat>& trace,
                          const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "epoch,mean_loss,grad_norm\n";
  os.precision(12);
  for (const auto& e : trace)
    os << e.epoch << ',' << e.mean_loss << ',' << e.grad_norm << '\n';
}

// ---------------------------------------------------------------------------
// end-to-end orchestration

EquilibriumResult run_mode2(const ProblemInstance& inst,
                            const AdmmOptions& opts, const Surrogate& s,
                            const Eigen::VectorXd& prev_price) {
  PricingHook hook = [&s, prev_price](const Eigen::VectorXd& planned_q) {
    return s.predict(planned_q, prev_price);
  };
  return run_admm(inst, opts, hook);
}

CentralizedE2e solve_centralized_e2e(const ProblemInstance& inst,
                                     const Surrogate& s,
                                     const Eigen::VectorXd& prev_price,
                                     double tol, int max_rounds,
                                     double solver_tol) {
  CentralizedE2e out;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(inst.horizon);
  Eigen::VectorXd prices = s.predict(q, prev_price);
  for (int round = 0; round < max_rounds; ++round) {
    CombinedModel model(inst, {Pricing::fixed(prices)});
    Solution sol = solve(model.program(), solver_tol);
    if (sol.status != SolveStatus::kOptimal)
      throw std::runtime_error(
          std::string("joint surrogate-priced solve failed: ") +
          to_string(sol.status));
    out.result = model.extract(sol);
    out.iterations = round + 1;
    Eigen::VectorXd next = s.predict(out.result.agg[0].p_g, prev_price);
    double move = (next - prices).lpNorm<Eigen::Infinity>();
    prices = next;
    if (move <= tol) {
      out.converged = true;
      break;
    }
  }
  out.prices = prices;
  return out;
}

}  // namespace sesoffer
