#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sesoffer/program.hpp"

namespace sesoffer {

/// Market clearing price box, one [center - delta, center + delta] interval
/// per trading interval ($/MWh).
struct PriceBox {
  Eigen::VectorXd lambda_ex;
  Eigen::VectorXd delta;

  int horizon() const { return static_cast<int>(lambda_ex.size()); }
  void validate() const;
};

/// Network-side box: uncertain bus injections (per-unit), squared root
/// voltage range, and one award fraction in [0,1] per aggregator.
struct DnBox {
  std::vector<int> uncertain_buses;        // bus ids
  Eigen::MatrixXd p_inj_ex;                // bus-major: (#uncertain, T)
  Eigen::MatrixXd delta_g;                 // same shape, >= 0
  double v_set_min = 1.0;
  double v_set_max = 1.0;
  int num_aggregators = 1;

  void validate() const;
};

/// A box as a plain list of per-dimension intervals, the common currency of
/// vertex enumeration and interior sampling.
struct BoxDims {
  std::vector<std::string> names;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  int size() const { return static_cast<int>(lo.size()); }
};

BoxDims price_box_dims(const PriceBox& box);
/// Dimensions of the network box restricted to one interval: uncertain bus
/// injections, the root voltage, and one award fraction per aggregator.
BoxDims dn_box_dims_at(const DnBox& box, int t);

/// All corners of the box. Zero-width dimensions contribute a single value,
/// so a degenerate box yields exactly one vertex. Throws when the corner
/// count would exceed `cap`.
std::vector<Eigen::VectorXd> enumerate_vertices(const BoxDims& box,
                                                std::int64_t cap = 1 << 20);

/// Deterministic uniform sampling strictly inside the box.
std::vector<Eigen::VectorXd> sample_interior(const BoxDims& box, int n,
                                             std::uint64_t seed);

/// Exact reformulation of  z <= min over the price box of sum_t lambda_t Q_t
/// via per-interval absolute-value epigraph variables:
///   z <= sum_t (lambda_ex_t Q_t - delta_t a_t),  a_t >= |Q_t|.
/// Q_t is a linear form over existing builder variables. Returns the index
/// of the z variable.
struct QuantityForm {
  std::vector<int> idx;
  std::vector<double> coef;
};

int robust_price_epigraph(ProgramBuilder& pb, const PriceBox& prices,
                          const std::vector<QuantityForm>& quantity,
                          const std::string& tag_prefix = "robust_price");

/// Brute-force oracle: min over all price-box vertices of lambda' q.
double min_over_price_vertices(const PriceBox& prices,
                               const Eigen::VectorXd& q);

}  // namespace sesoffer
