#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace sesoffer {

/// Squared-voltage bounds are per-unit^2; reactive injection is a fixed
/// per-unit value folded into a constant voltage offset.
struct Bus {
  int id = 0;
  double v_min = 0.0;  // squared
  double v_max = 0.0;  // squared
  double q_fixed = 0.0;
};

struct Branch {
  int parent = 0;
  int child = 0;
  double r = 0.0;  // per-unit
  double x = 0.0;  // per-unit
};

struct FeederSpec {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
};

/// Radial feeder rooted at bus 1. Branches are normalized parent->child
/// outward from the root at construction; all evaluation is per-unit.
class Network {
 public:
  static Network from_spec(const FeederSpec& spec);
  static Network from_file(const std::string& path);

  int num_buses() const { return static_cast<int>(buses_.size()); }
  int num_branches() const { return static_cast<int>(branches_.size()); }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const Bus& bus(int id) const { return buses_.at(index_of(id)); }
  int index_of(int bus_id) const;

  /// Map from bus active injections (per-unit, indexed like buses()) to
  /// squared voltages: v = v_set * 1 + S p + q_offset. Entry (j, m) is
  /// twice the total resistance on the common root path of j and m;
  /// symmetric and entrywise nonnegative.
  const Eigen::MatrixXd& sensitivity() const { return sens_p_; }

  /// Constant squared-voltage offset from the fixed reactive injections.
  const Eigen::VectorXd& reactive_offset() const { return q_offset_; }

  /// Exact linear DistFlow recursion for one interval: flows aggregate
  /// injections downstream-to-root, voltage drops accumulate root-to-leaf.
  Eigen::VectorXd voltage_profile(double v_set,
                                  const Eigen::VectorXd& p_inj) const;

 private:
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;   // oriented, in BFS order from root
  std::vector<int> parent_;        // parent index per bus index (-1 for root)
  std::vector<double> branch_r_;   // resistance of the branch above each bus
  std::vector<double> branch_x_;
  std::vector<int> bfs_order_;
  Eigen::MatrixXd sens_p_;
  Eigen::MatrixXd sens_q_;
  Eigen::VectorXd q_offset_;

  void finalize();
};

/// One realization of the network-side uncertainty plus the awarded-power
/// fractions of each aggregator.
struct DnScenario {
  Eigen::VectorXd p_inj_uncontrolled;  // per bus index, per-unit
  double v_set = 1.0;                  // squared
  std::vector<double> u_award;         // in [0,1], one per aggregator
};

Eigen::VectorXd voltage_profile(const Network& net, const DnScenario& sc,
                                const Eigen::VectorXd& controllable_inj);

}  // namespace sesoffer
