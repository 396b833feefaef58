#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <limits>
#include <string>
#include <vector>

namespace sesoffer {

constexpr double kInf = std::numeric_limits<double>::infinity();

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Linear/diagonal-quadratic convex program:
///   min  c'x + 1/2 x' diag(q) x + offset
///   s.t. A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub
/// q >= 0 componentwise; q == 0 gives a plain LP.
struct ConvexProgram {
  int n = 0;
  Eigen::VectorXd cost;
  Eigen::VectorXd quad;
  SpMat a_ub;
  Eigen::VectorXd b_ub;
  SpMat a_eq;
  Eigen::VectorXd b_eq;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
  double offset = 0.0;

  std::vector<std::string> var_names;
  std::vector<std::string> ub_tags;
  std::vector<std::string> eq_tags;

  double objective(const Eigen::VectorXd& x) const {
    double v = cost.dot(x) + offset;
    if (quad.size() == n) v += 0.5 * x.cwiseProduct(quad).dot(x);
    return v;
  }
};

/// Incremental builder with named variables and tagged rows. Tags let callers
/// recover dual multipliers of specific constraint families after a solve.
class ProgramBuilder {
 public:
  int add_var(const std::string& name, double lo, double hi, double cost = 0.0,
              double quad = 0.0);
  /// sum_i coeffs[i] * x[idx[i]] <= rhs
  int add_le(const std::vector<int>& idx, const std::vector<double>& coef,
             double rhs, const std::string& tag = "");
  /// sum_i coeffs[i] * x[idx[i]] >= rhs   (stored as the negated <= row)
  int add_ge(const std::vector<int>& idx, const std::vector<double>& coef,
             double rhs, const std::string& tag = "");
  int add_eq(const std::vector<int>& idx, const std::vector<double>& coef,
             double rhs, const std::string& tag = "");

  void set_cost(int var, double c) { cost_[var] = c; }
  void add_cost(int var, double c) { cost_[var] += c; }
  void set_quad(int var, double q) { quad_[var] = q; }
  void set_eq_rhs(int row, double rhs) { eq_rhs_[row] = rhs; }
  void set_ub_rhs(int row, double rhs) { ub_rhs_[row] = rhs; }
  void set_bounds(int var, double lo, double hi) {
    lb_[var] = lo;
    ub_[var] = hi;
  }
  void set_offset(double v) { offset_ = v; }

  int num_vars() const { return static_cast<int>(cost_.size()); }
  int num_eq() const { return static_cast<int>(eq_rhs_.size()); }
  int num_le() const { return static_cast<int>(ub_rhs_.size()); }

  ConvexProgram build() const;

 private:
  std::vector<double> cost_, quad_, lb_, ub_;
  std::vector<std::string> names_;
  std::vector<Triplet> ub_trip_, eq_trip_;
  std::vector<double> ub_rhs_, eq_rhs_;
  std::vector<std::string> ub_tags_, eq_tags_;
  double offset_ = 0.0;
};

/// Sparse text interchange: objective, row/col/value triplets, bounds.
/// Round-trips exactly (shortest-representation doubles).
void write_program(const ConvexProgram& p, const std::string& path);
ConvexProgram read_program(const std::string& path);

}  // namespace sesoffer
