#include "sesoffer/network.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sesoffer {

int Network::index_of(int bus_id) const {
  for (size_t i = 0; i < buses_.size(); ++i)
    if (buses_[i].id == bus_id) return static_cast<int>(i);
  throw std::out_of_range("unknown bus id " + std::to_string(bus_id));
}

Network Network::from_spec(const FeederSpec& spec) {
  Network net;
  if (spec.buses.empty()) throw std::invalid_argument("feeder has no buses");
  std::set<int> ids;
  bool has_root = false;
  for (const Bus& b : spec.buses) {
    if (!ids.insert(b.id).second)
      throw std::invalid_argument("duplicate bus id " + std::to_string(b.id));
    if (!(b.v_min > 0.0) || !(b.v_min < b.v_max))
      throw std::invalid_argument("bus " + std::to_string(b.id) +
                                  ": need 0 < v_min < v_max");
    if (b.id == 1) has_root = true;
  }
  if (!has_root) throw std::invalid_argument("feeder has no root bus (id 1)");
  if (spec.branches.size() + 1 != spec.buses.size())
    throw std::invalid_argument("tree needs exactly |buses|-1 branches");

  std::map<int, std::vector<std::pair<int, const Branch*>>> adj;
  std::set<std::pair<int, int>> seen;
  for (const Branch& br : spec.branches) {
    if (br.r < 0 || br.x < 0)
      throw std::invalid_argument("branch " + std::to_string(br.parent) + "-" +
                                  std::to_string(br.child) +
                                  ": negative impedance");
    int a = std::min(br.parent, br.child), b = std::max(br.parent, br.child);
    if (!seen.insert({a, b}).second)
      throw std::invalid_argument("duplicate branch between " +
                                  std::to_string(a) + " and " +
                                  std::to_string(b));
    if (!ids.count(br.parent) || !ids.count(br.child))
      throw std::invalid_argument("branch references unknown bus");
    adj[br.parent].push_back({br.child, &br});
    adj[br.child].push_back({br.parent, &br});
  }

  // BFS from the root orients branches outward and detects cycles or
  // disconnected buses (branch count already matches a tree).
  net.buses_ = spec.buses;
  std::sort(net.buses_.begin(), net.buses_.end(),
            [](const Bus& a, const Bus& b) { return a.id < b.id; });
  std::map<int, int> idx;
  for (size_t i = 0; i < net.buses_.size(); ++i)
    idx[net.buses_[i].id] = static_cast<int>(i);

  int n = static_cast<int>(net.buses_.size());
  net.parent_.assign(n, -1);
  net.branch_r_.assign(n, 0.0);
  net.branch_x_.assign(n, 0.0);
  std::vector<bool> visited(n, false);
  std::queue<int> frontier;
  int root = idx.at(1);
  visited[root] = true;
  frontier.push(root);
  net.bfs_order_.push_back(root);
  while (!frontier.empty()) {
    int u = frontier.front();
    frontier.pop();
    int u_id = net.buses_[u].id;
    auto it = adj.find(u_id);
    if (it == adj.end()) continue;
    for (const auto& [v_id, br] : it->second) {
      int v = idx.at(v_id);
      if (visited[v]) {
        if (net.parent_[u] != v)
          throw std::invalid_argument("cycle detected at bus " +
                                      std::to_string(v_id));
        continue;
      }
      visited[v] = true;
      net.parent_[v] = u;
      net.branch_r_[v] = br->r;
      net.branch_x_[v] = br->x;
      net.branches_.push_back({u_id, v_id, br->r, br->x});
      net.bfs_order_.push_back(v);
      frontier.push(v);
    }
  }
  for (int i = 0; i < n; ++i)
    if (!visited[i])
      throw std::invalid_argument("disconnected bus " +
                                  std::to_string(net.buses_[i].id));
  net.finalize();
  return net;
}

void Network::finalize() {
  int n = num_buses();
  // path resistance/reactance from root to each bus, accumulated by depth
  Eigen::MatrixXd sr = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd sx = Eigen::MatrixXd::Zero(n, n);
  // ancestors list per bus via parent chain; S[j][m] = 2 * sum of r over
  // branches common to both root paths
  std::vector<std::vector<int>> path(n);
  for (int j : bfs_order_) {
    if (parent_[j] >= 0) {
      path[j] = path[parent_[j]];
      path[j].push_back(j);  // branch above j identified by its child
    }
  }
  for (int j = 0; j < n; ++j) {
    for (int m = 0; m < n; ++m) {
      // common prefix of the two root paths
      size_t len = std::min(path[j].size(), path[m].size());
      double r_sum = 0.0, x_sum = 0.0;
      for (size_t k = 0; k < len; ++k) {
        if (path[j][k] != path[m][k]) break;
        r_sum += branch_r_[path[j][k]];
        x_sum += branch_x_[path[j][k]];
      }
      sr(j, m) = 2.0 * r_sum;
      sx(j, m) = 2.0 * x_sum;
    }
  }
  sens_p_ = sr;
  sens_q_ = sx;
  Eigen::VectorXd q(n);
  for (int j = 0; j < n; ++j) q[j] = buses_[j].q_fixed;
  q_offset_ = sens_q_ * q;
}

Eigen::VectorXd Network::voltage_profile(double v_set,
                                         const Eigen::VectorXd& p_inj) const {
  int n = num_buses();
  if (p_inj.size() != n)
    throw std::invalid_argument("injection vector size mismatch");
  Eigen::VectorXd q(n);
  for (int j = 0; j < n; ++j) q[j] = buses_[j].q_fixed;

  // downstream aggregation: flow on the branch above j carries everything
  // injected in j's subtree toward the root (positive flow = toward leaf)
  Eigen::VectorXd p_flow = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd q_flow = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd p_sub = p_inj, q_sub = q;
  for (auto it = bfs_order_.rbegin(); it != bfs_order_.rend(); ++it) {
    int j = *it;
    if (parent_[j] >= 0) {
      p_flow[j] = -p_sub[j];
      q_flow[j] = -q_sub[j];
      p_sub[parent_[j]] += p_sub[j];
      q_sub[parent_[j]] += q_sub[j];
    }
  }
  // root-to-leaf drop: v_parent - v_child = 2 (r P + x Q)
  Eigen::VectorXd v(n);
  for (int j : bfs_order_) {
    if (parent_[j] < 0) {
      v[j] = v_set;
    } else {
      v[j] = v[parent_[j]] - 2.0 * (branch_r_[j] * p_flow[j] +
                                    branch_x_[j] * q_flow[j]);
    }
  }
  return v;
}

Eigen::VectorXd voltage_profile(const Network& net, const DnScenario& sc,
                                const Eigen::VectorXd& controllable_inj) {
  if (sc.p_inj_uncontrolled.size() != net.num_buses() ||
      controllable_inj.size() != net.num_buses())
    throw std::invalid_argument("scenario/injection size mismatch");
  return net.voltage_profile(sc.v_set,
                             sc.p_inj_uncontrolled + controllable_inj);
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

Network Network::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open feeder file " + path);
  FeederSpec spec;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    try {
      if (toks[0] == "bus" && toks.size() == 5) {
        spec.buses.push_back({std::stoi(toks[1]), std::stod(toks[2]),
                              std::stod(toks[3]), std::stod(toks[4])});
      } else if (toks[0] == "branch" && toks.size() == 5) {
        spec.branches.push_back({std::stoi(toks[1]), std::stoi(toks[2]),
                                 std::stod(toks[3]), std::stod(toks[4])});
      } else {
        throw std::invalid_argument("unrecognized record '" + toks[0] + "'");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return from_spec(spec);
}

}  // namespace sesoffer
