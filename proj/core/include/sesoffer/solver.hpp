#pragma once

#include "sesoffer/program.hpp"

namespace sesoffer {

enum class SolveStatus { kOptimal, kInfeasible, kUnbounded, kNumericalFailure };

const char* to_string(SolveStatus s);

/// KKT residual norms reported with every solve. A solution is declared
/// optimal only after these are re-evaluated from the returned vectors.
struct KktResiduals {
  double primal = kInf;   // max violation of equalities/inequalities/bounds
  double dual = kInf;     // stationarity residual, scaled
  double gap = kInf;      // complementarity / relative duality gap
};

struct Solution {
  SolveStatus status = SolveStatus::kNumericalFailure;
  Eigen::VectorXd x;
  Eigen::VectorXd dual_eq;        // multipliers of A_eq rows
  Eigen::VectorXd dual_ub;        // multipliers of A_ub rows  (>= 0)
  Eigen::VectorXd dual_lo;        // multipliers of x >= lb    (>= 0)
  Eigen::VectorXd dual_hi;        // multipliers of x <= ub    (>= 0)
  double objective = 0.0;
  KktResiduals kkt;
  int iterations = 0;
  // populated on infeasible outcomes: worst violated rows by tag
  std::string infeasibility_detail;
};

struct SolverOptions {
  double tol = 1e-9;
  int max_iter = 200;
  bool classify_failures = true;  // run feasibility/recession probes on stall
};

/// Primal-dual interior-point solve (Mehrotra predictor-corrector) over the
/// sparse KKT system. Never returns kOptimal unless the recomputed residuals
/// meet tol.
Solution solve(const ConvexProgram& p, const SolverOptions& opts = {});

inline Solution solve(const ConvexProgram& p, double tol) {
  SolverOptions o;
  o.tol = tol;
  return solve(p, o);
}

/// Regularized differentiable solve. The effective objective is
///   (cost - price_map' lambda)' x + 1/2 x' diag(quad + eps) x
/// and the returned jacobian is d x* / d lambda from implicit
/// differentiation of the KKT system at the active set (duals > 1e-8,
/// ties broken toward the smaller active set). `degenerate` flags a
/// rank-deficient active set; one consistent selection is still returned.
struct DifferentiableSolution {
  Solution sol;
  Eigen::MatrixXd jacobian;  // n x dim(lambda)
  bool degenerate = false;
};

DifferentiableSolution solve_differentiable(const ConvexProgram& p,
                                            const SpMat& price_map,
                                            const Eigen::VectorXd& lambda,
                                            double eps,
                                            const SolverOptions& opts = {});

}  // namespace sesoffer
