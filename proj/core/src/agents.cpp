#include "sesoffer/agents.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sesoffer {

// ---------------------------------------------------------------------------
// lease price floor

PriceFloor lease_price_floor(double rate, double years, double c_e,
                             double c_p) {
  if (rate <= 0) throw std::invalid_argument("discount rate must be > 0");
  if (years < 1) throw std::invalid_argument("lifetime must be >= 1 year");
  double growth = std::pow(1.0 + rate, years);
  PriceFloor f;
  f.k_r = rate * growth / (365.0 * (growth - 1.0));
  f.lambda_e_min = f.k_r * c_e;
  f.lambda_p_min = f.k_r * c_p;
  return f;
}

// ---------------------------------------------------------------------------
// merit-order cost floors for the offer pairs

Eigen::MatrixXd pair_cost_floors(const DerPortfolio& portfolio,
                                 const OfferConfig& offer, int horizon) {
  Eigen::MatrixXd floors = Eigen::MatrixXd::Zero(offer.pairs, horizon);
  for (int t = 0; t < horizon; ++t) {
    std::vector<std::pair<double, double>> stack;  // (cost, supply headroom)
    for (const DerUnit& u : portfolio.units) {
      if (u.kind == DerKind::kStorage) {
        if (u.p_rate > 0) stack.push_back({u.cost_throughput, u.p_rate});
      } else {
        double cap = std::max(0.0, u.p_max[t]);
        if (cap > 0) stack.push_back({u.cost, cap});
      }
    }
    std::sort(stack.begin(), stack.end());
    double cum_pairs = 0.0;
    for (int s = 0; s < offer.pairs; ++s) {
      cum_pairs += std::max(0.0, offer.pair_q_max(s, t));
      double walked = 0.0;
      double cost = stack.empty() ? 0.0 : stack.front().first;
      for (const auto& [c, cap] : stack) {
        cost = c;
        walked += cap;
        if (walked >= cum_pairs) break;
      }
      floors(s, t) = cost;
    }
  }
  return floors;
}

// ---------------------------------------------------------------------------
// security analysis

namespace {

Eigen::VectorXd share_weights(const Network& net,
                              const std::map<int, double>& shares) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(net.num_buses());
  double total = 0.0;
  for (const auto& [bus, frac] : shares) {
    if (frac < 0)
      throw std::invalid_argument("negative delivery share at bus " +
                                  std::to_string(bus));
    w[net.index_of(bus)] += frac;
    total += frac;
  }
  if (!shares.empty() && std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("delivery shares must sum to 1");
  return w;
}

struct CornerData {
  // background squared-voltage terms at the extreme corners, per bus
  Eigen::VectorXd v_high;  // injections at +delta, v_set at max
  Eigen::VectorXd v_low;   // injections at -delta, v_set at min
  Eigen::VectorXd coef;    // squared p.u. per MW delivered, per bus
};

CornerData corner_data(const DnData& dn, const Eigen::VectorXd& w, int t) {
  const Network& net = dn.net;
  const Eigen::MatrixXd& s = net.sensitivity();
  Eigen::VectorXd p_hi = dn.background_p.col(t);
  Eigen::VectorXd p_lo = dn.background_p.col(t);
  for (size_t i = 0; i < dn.box.uncertain_buses.size(); ++i) {
    int j = net.index_of(dn.box.uncertain_buses[i]);
    p_hi[j] += dn.box.p_inj_ex(i, t) + dn.box.delta_g(i, t);
    p_lo[j] += dn.box.p_inj_ex(i, t) - dn.box.delta_g(i, t);
  }
  CornerData c;
  c.v_high = (s * p_hi + net.reactive_offset()).array() + dn.box.v_set_max;
  c.v_low = (s * p_lo + net.reactive_offset()).array() + dn.box.v_set_min;
  c.coef = (s * w) / dn.base_mva;
  return c;
}

}  // namespace

EnvelopeResult compute_security_envelope(const DnData& dn,
                                         const std::map<int, double>& shares,
                                         int horizon) {
  const Network& net = dn.net;
  if (dn.background_p.rows() != net.num_buses() ||
      dn.background_p.cols() < horizon)
    throw std::invalid_argument("background injection matrix shape mismatch");
  Eigen::VectorXd w = share_weights(net, shares);
  int root = net.index_of(1);

  EnvelopeResult out;
  out.envelope.lo = Eigen::VectorXd::Constant(horizon, -kInf);
  out.envelope.hi = Eigen::VectorXd::Constant(horizon, kInf);
  for (int t = 0; t < horizon; ++t) {
    CornerData c = corner_data(dn, w, t);
    for (int j = 0; j < net.num_buses(); ++j) {
      if (j == root) continue;
      const Bus& bus = net.buses()[j];
      double slack_hi = bus.v_max - c.v_high[j];
      double need_lo = bus.v_min - c.v_low[j];
      if (c.coef[j] > 1e-14) {
        double u = slack_hi / c.coef[j];
        double l = need_lo / c.coef[j];
        if (u < out.envelope.hi[t]) out.envelope.hi[t] = u;
        if (l > out.envelope.lo[t]) out.envelope.lo[t] = l;
      } else {
        if (slack_hi < 0 && out.background_secure) {
          out.background_secure = false;
          out.background_violation = {bus.id, t, "all-high", -slack_hi};
        }
        if (need_lo > 0 && out.background_secure) {
          out.background_secure = false;
          out.background_violation = {bus.id, t, "all-low", need_lo};
        }
      }
    }
  }
  return out;
}

std::vector<VertexSecurityRow> enumerate_vertex_rows(
    const DnData& dn, const std::map<int, double>& shares, int horizon,
    std::int64_t cap) {
  const Network& net = dn.net;
  Eigen::VectorXd w = share_weights(net, shares);
  const Eigen::MatrixXd& s = net.sensitivity();
  Eigen::VectorXd coef = (s * w) / dn.base_mva;
  int root = net.index_of(1);

  std::vector<VertexSecurityRow> rows;
  for (int t = 0; t < horizon; ++t) {
    // corner dimensions: uncertain injections and the root voltage; the
    // award fraction is handled by emitting both range endpoints
    BoxDims dims = dn_box_dims_at(dn.box, t);
    BoxDims bg;
    bg.lo = dims.lo.head(dims.size() - dn.box.num_aggregators);
    bg.hi = dims.hi.head(dims.size() - dn.box.num_aggregators);
    auto corners = enumerate_vertices(bg, cap);
    int nb = static_cast<int>(dn.box.uncertain_buses.size());
    for (std::int64_t ci = 0; ci < static_cast<std::int64_t>(corners.size());
         ++ci) {
      const Eigen::VectorXd& corner = corners[ci];
      Eigen::VectorXd p = dn.background_p.col(t);
      for (int i = 0; i < nb; ++i)
        p[net.index_of(dn.box.uncertain_buses[i])] += corner[i];
      double v_set = corner[nb];
      Eigen::VectorXd base_v =
          (s * p + net.reactive_offset()).array() + v_set;
      for (int j = 0; j < net.num_buses(); ++j) {
        if (j == root) continue;
        const Bus& bus = net.buses()[j];
        for (bool at_max : {false, true}) {
          if (coef[j] > 1e-14 || bus.v_max - base_v[j] < -1e-12)
            rows.push_back({t, true, at_max, coef[j],
                            bus.v_max - base_v[j], bus.id, ci});
          if (coef[j] > 1e-14 || bus.v_min - base_v[j] > 1e-12)
            rows.push_back({t, false, at_max, coef[j],
                            bus.v_min - base_v[j], bus.id, ci});
        }
      }
    }
  }
  return rows;
}

std::optional<SecurityViolation> check_offer_range_security(
    const DnData& dn, const std::map<int, double>& shares,
    const Eigen::VectorXd& nsor_lo, const Eigen::VectorXd& nsor_hi,
    const Eigen::VectorXd& lease_net, double tol) {
  const Network& net = dn.net;
  Eigen::VectorXd w = share_weights(net, shares);
  int root = net.index_of(1);
  int horizon = static_cast<int>(nsor_lo.size());
  for (int t = 0; t < horizon; ++t) {
    CornerData c = corner_data(dn, w, t);
    double d_hi = (nsor_hi[t] - lease_net[t]);  // MW, worst high delivery
    double d_lo = (nsor_lo[t] - lease_net[t]);
    for (int j = 0; j < net.num_buses(); ++j) {
      if (j == root) continue;
      const Bus& bus = net.buses()[j];
      double v_up = c.v_high[j] + c.coef[j] * std::max(d_hi, d_lo);
      double v_dn = c.v_low[j] + c.coef[j] * std::min(d_hi, d_lo);
      if (v_up > bus.v_max + tol)
        return SecurityViolation{bus.id, t, "all-high", v_up - bus.v_max};
      if (v_dn < bus.v_min - tol)
        return SecurityViolation{bus.id, t, "all-low", bus.v_min - v_dn};
    }
  }
  return std::nullopt;
}

McSecurityReport mc_security_check(const DnData& dn,
                                   const std::map<int, double>& shares,
                                   const Eigen::VectorXd& nsor_lo,
                                   const Eigen::VectorXd& nsor_hi,
                                   const Eigen::VectorXd& lease_net,
                                   int n_samples, std::uint64_t seed,
                                   double tol) {
  const Network& net = dn.net;
  Eigen::VectorXd w = share_weights(net, shares);
  int root = net.index_of(1);
  int horizon = static_cast<int>(nsor_lo.size());
  int nb = static_cast<int>(dn.box.uncertain_buses.size());

  // one flat box over all intervals: injections, v_set, award fraction
  int per_t = nb + 2;
  BoxDims box;
  box.lo.resize(per_t * horizon);
  box.hi.resize(per_t * horizon);
  for (int t = 0; t < horizon; ++t) {
    for (int i = 0; i < nb; ++i) {
      box.lo[t * per_t + i] = dn.box.p_inj_ex(i, t) - dn.box.delta_g(i, t);
      box.hi[t * per_t + i] = dn.box.p_inj_ex(i, t) + dn.box.delta_g(i, t);
    }
    box.lo[t * per_t + nb] = dn.box.v_set_min;
    box.hi[t * per_t + nb] = dn.box.v_set_max;
    box.lo[t * per_t + nb + 1] = 0.0;
    box.hi[t * per_t + nb + 1] = 1.0;
  }

  McSecurityReport rep;
  rep.samples = n_samples;
  auto samples = sample_interior(box, n_samples, seed);
  for (const auto& sample : samples) {
    bool violated = false;
    for (int t = 0; t < horizon; ++t) {
      Eigen::VectorXd p = dn.background_p.col(t);
      for (int i = 0; i < nb; ++i)
        p[net.index_of(dn.box.uncertain_buses[i])] = sample[t * per_t + i] +
            dn.background_p(net.index_of(dn.box.uncertain_buses[i]), t);
      double v_set = sample[t * per_t + nb];
      double u = sample[t * per_t + nb + 1];
      double award = (1.0 - u) * nsor_lo[t] + u * nsor_hi[t];
      double delivered_pu = (award - lease_net[t]) / dn.base_mva;
      Eigen::VectorXd inj = p + w * delivered_pu;
      Eigen::VectorXd v = net.voltage_profile(v_set, inj);
      for (int j = 0; j < net.num_buses(); ++j) {
        if (j == root) continue;
        double over = std::max(v[j] - net.buses()[j].v_max,
                               net.buses()[j].v_min - v[j]);
        if (over > tol) {
          violated = true;
          rep.worst_excursion = std::max(rep.worst_excursion, over);
        }
      }
    }
    if (violated) ++rep.violations;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// aggregator decision helpers

double AggregatorDecision::energy_sold() const {
  return p_g.cwiseMax(0.0).sum();
}

double AggregatorDecision::energy_bought() const {
  return (-p_g).cwiseMax(0.0).sum();
}

// ---------------------------------------------------------------------------
// AggregatorModel

AggregatorModel::AggregatorModel(
    const AggregatorData& data, const LeaseTerms& lease, int horizon,
    const Pricing& pricing, const SecurityEnvelope* envelope,
    const std::vector<VertexSecurityRow>* vertex_rows, bool with_coupling_aux)
    : data_(data),
      lease_(lease),
      horizon_(horizon),
      pricing_(pricing),
      fee_lambda_e_(lease.lambda_e),
      fee_lambda_p_(lease.lambda_p) {
  if (envelope != nullptr) envelope_ = *envelope;
  build(vertex_rows, with_coupling_aux);
}

void AggregatorModel::build(const std::vector<VertexSecurityRow>* vertex_rows,
                            bool with_coupling_aux) {
  const OfferConfig& offer = data_.offer;
  const int t_count = horizon_;
  const int s_count = offer.pairs;
  if (t_count < 1) throw std::invalid_argument("horizon must be >= 1");
  if (s_count < 1) throw std::invalid_argument("need at least one offer pair");
  if (offer.pair_q_min.rows() != s_count || offer.pair_q_min.cols() != t_count ||
      offer.pair_q_max.rows() != s_count || offer.pair_q_max.cols() != t_count)
    throw std::invalid_argument("offer pair bound matrices must be (S, T)");
  if (pricing_.kind == Pricing::Kind::kRobustBox &&
      data_.price_box.horizon() != t_count)
    throw std::invalid_argument("price box horizon mismatch");
  if (lease_.enabled && (lease_.k_c <= 0 || lease_.k_d <= 0 || lease_.k <= 0))
    throw std::invalid_argument("lease coefficients k_c, k_d, k must be > 0");

  cost_floors_ = pair_cost_floors(data_.portfolio, offer, t_count);

  auto nm = [](const char* base, int a, int b = -1) {
    std::string s = std::string(base) + "[" + std::to_string(a) + "]";
    if (b >= 0) s += "[" + std::to_string(b) + "]";
    return s;
  };

  map_.p_pair.resize(s_count, t_count);
  map_.alpha.resize(s_count, t_count);
  for (int s = 0; s < s_count; ++s)
    for (int t = 0; t < t_count; ++t) {
      if (offer.pair_q_min(s, t) > offer.pair_q_max(s, t))
        throw std::invalid_argument("pair quantity bounds inverted");
      map_.p_pair(s, t) = pb_.add_var(nm("q", s, t), offer.pair_q_min(s, t),
                                      offer.pair_q_max(s, t));
    }
  for (int s = 0; s < s_count; ++s)
    for (int t = 0; t < t_count; ++t) {
      double lo = std::max(offer.alpha_min, cost_floors_(s, t));
      if (lo > offer.alpha_max + 1e-12)
        throw std::invalid_argument(
            "offer pair cost floor exceeds the price cap");
      map_.alpha(s, t) =
          pb_.add_var(nm("a", s, t), lo, offer.alpha_max);
    }
  for (int t = 0; t < t_count; ++t)
    map_.p_g.push_back(pb_.add_var(nm("p_g", t), -kInf, kInf));
  double q_lo_sum, q_hi_sum;
  for (int t = 0; t < t_count; ++t) {
    q_lo_sum = offer.pair_q_min.col(t).sum();
    q_hi_sum = offer.pair_q_max.col(t).sum();
    map_.nsor_lo.push_back(pb_.add_var(nm("range_lo", t), q_lo_sum, kInf));
    map_.nsor_hi.push_back(pb_.add_var(nm("range_hi", t), -kInf, q_hi_sum));
  }
  for (int t = 0; t < t_count; ++t)
    map_.p_ag.push_back(pb_.add_var(nm("p_der", t), -kInf, kInf));

  // leased storage block; a disabled lease pins the capacities at zero
  double e_cap_hi = lease_.enabled ? lease_.e_cap : 0.0;
  double p_cap_hi = lease_.enabled ? lease_.p_cap : 0.0;
  map_.e_cap = pb_.add_var("lease_e_cap", 0.0, e_cap_hi);
  map_.p_cap = pb_.add_var("lease_p_cap", 0.0, p_cap_hi);
  for (int t = 0; t < t_count; ++t) {
    map_.lease_ch.push_back(
        pb_.add_var(nm("lease_ch", t), 0.0, kInf, lease_.c_om));
    map_.lease_dis.push_back(
        pb_.add_var(nm("lease_dis", t), 0.0, kInf, lease_.c_om));
    map_.lease_net.push_back(pb_.add_var(nm("lease_net", t), -kInf, kInf));
    map_.lease_energy.push_back(
        pb_.add_var(nm("lease_e", t), lease_.e_min, kInf));
  }
  for (int t = 0; t < t_count; ++t) {
    pb_.add_le({map_.lease_ch[t], map_.p_cap}, {1.0, -1.0}, 0.0, "lease_rate");
    pb_.add_le({map_.lease_dis[t], map_.p_cap}, {1.0, -1.0}, 0.0, "lease_rate");
    pb_.add_le({map_.lease_ch[t], map_.e_cap}, {1.0, -lease_.k_c}, 0.0,
               "lease_prop");
    pb_.add_le({map_.lease_dis[t], map_.e_cap}, {1.0, -lease_.k_d}, 0.0,
               "lease_prop");
    pb_.add_eq({map_.lease_net[t], map_.lease_dis[t], map_.lease_ch[t]},
               {1.0, -1.0, 1.0}, 0.0, "lease_net");
    // energy recursion with the initial state at half the leased capacity
    std::vector<int> idx{map_.lease_energy[t], map_.lease_ch[t],
                         map_.lease_dis[t]};
    std::vector<double> co{1.0, -lease_.eta_c, 1.0 / lease_.eta_d};
    if (t == 0) {
      idx.push_back(map_.e_cap);
      co.push_back(-0.5);
    } else {
      idx.push_back(map_.lease_energy[t - 1]);
      co.push_back(-1.0);
    }
    pb_.add_eq(idx, co, 0.0, "lease_energy");
    pb_.add_le({map_.lease_energy[t], map_.e_cap}, {1.0, -1.0}, 0.0,
               "lease_soc");
  }
  pb_.add_eq({map_.lease_energy[t_count - 1], map_.e_cap}, {1.0, -0.5}, 0.0,
             "lease_cyclic");
  pb_.add_le({map_.p_cap, map_.e_cap}, {1.0, -lease_.k}, 0.0, "lease_prop");

  // portfolio units
  const auto& units = data_.portfolio.units;
  map_.unit_p.resize(units.size());
  map_.unit_ch.resize(units.size());
  map_.unit_dis.resize(units.size());
  map_.unit_e.resize(units.size());
  for (size_t u = 0; u < units.size(); ++u) {
    const DerUnit& unit = units[u];
    if (unit.kind == DerKind::kStorage) {
      if (unit.eta_c <= 0 || unit.eta_c > 1 || unit.eta_d <= 0 ||
          unit.eta_d > 1)
        throw std::invalid_argument(unit.name +
                                    ": efficiencies must be in (0, 1]");
      for (int t = 0; t < t_count; ++t) {
        map_.unit_ch[u].push_back(pb_.add_var(
            unit.name + "_ch" + std::to_string(t), 0.0, unit.p_rate,
            unit.cost_throughput));
        map_.unit_dis[u].push_back(pb_.add_var(
            unit.name + "_dis" + std::to_string(t), 0.0, unit.p_rate,
            unit.cost_throughput));
        map_.unit_e[u].push_back(pb_.add_var(
            unit.name + "_e" + std::to_string(t), 0.0, unit.e_max));
      }
      double e0 = unit.e0_frac * unit.e_max;
      for (int t = 0; t < t_count; ++t) {
        std::vector<int> idx{map_.unit_e[u][t], map_.unit_ch[u][t],
                             map_.unit_dis[u][t]};
        std::vector<double> co{1.0, -unit.eta_c, 1.0 / unit.eta_d};
        double rhs = 0.0;
        if (t == 0) {
          rhs = e0;
        } else {
          idx.push_back(map_.unit_e[u][t - 1]);
          co.push_back(-1.0);
        }
        pb_.add_eq(idx, co, rhs, unit.name + "_energy");
      }
      pb_.add_eq({map_.unit_e[u][t_count - 1]}, {1.0}, e0,
                 unit.name + "_cyclic");
    } else {
      if (unit.p_min.size() != t_count || unit.p_max.size() != t_count)
        throw std::invalid_argument(unit.name + ": profile length mismatch");
      for (int t = 0; t < t_count; ++t)
        map_.unit_p[u].push_back(
            pb_.add_var(unit.name + "_p" + std::to_string(t), unit.p_min[t],
                        unit.p_max[t], unit.cost));
    }
  }

  // aggregate, award-sum, range and delivery identities
  for (int t = 0; t < t_count; ++t) {
    std::vector<int> idx{map_.p_ag[t]};
    std::vector<double> co{1.0};
    for (size_t u = 0; u < units.size(); ++u) {
      if (units[u].kind == DerKind::kStorage) {
        idx.push_back(map_.unit_dis[u][t]);
        co.push_back(-1.0);
        idx.push_back(map_.unit_ch[u][t]);
        co.push_back(1.0);
      } else {
        idx.push_back(map_.unit_p[u][t]);
        co.push_back(-1.0);
      }
    }
    pb_.add_eq(idx, co, 0.0, "aggregate");
  }
  for (int t = 0; t < t_count; ++t) {
    std::vector<int> idx{map_.p_g[t]};
    std::vector<double> co{1.0};
    for (int s = 0; s < s_count; ++s) {
      idx.push_back(map_.p_pair(s, t));
      co.push_back(-1.0);
    }
    map_.award_sum_rows.push_back(
        pb_.add_eq(idx, co, 0.0, "award_sum:" + std::to_string(t)));
    pb_.add_eq({map_.p_g[t], map_.lease_net[t], map_.p_ag[t]},
               {1.0, -1.0, -1.0}, 0.0, "delivery:" + std::to_string(t));
    pb_.add_le({map_.nsor_lo[t], map_.p_g[t]}, {1.0, -1.0}, 0.0, "range");
    pb_.add_le({map_.p_g[t], map_.nsor_hi[t]}, {1.0, -1.0}, 0.0, "range");
    pb_.add_le({map_.nsor_lo[t], map_.nsor_hi[t]}, {1.0, -1.0}, 0.0, "range");
  }
  // monotone offer prices
  for (int s = 0; s + 1 < s_count; ++s)
    for (int t = 0; t < t_count; ++t)
      pb_.add_le({map_.alpha(s, t), map_.alpha(s + 1, t)}, {1.0, -1.0}, 0.0,
                 "offer_monotone");

  // market revenue
  if (pricing_.kind == Pricing::Kind::kRobustBox) {
    std::vector<QuantityForm> q(t_count);
    for (int t = 0; t < t_count; ++t)
      for (int s = 0; s < s_count; ++s) {
        q[t].idx.push_back(map_.p_pair(s, t));
        q[t].coef.push_back(1.0);
      }
    map_.z = robust_price_epigraph(pb_, data_.price_box, q);
    pb_.set_cost(map_.z, -1.0);
  } else {
    if (pricing_.fixed_prices.size() != t_count)
      throw std::invalid_argument("fixed price vector length mismatch");
    for (int t = 0; t < t_count; ++t)
      for (int s = 0; s < s_count; ++s)
        pb_.set_cost(map_.p_pair(s, t), -pricing_.fixed_prices[t]);
  }

  // network security on the offer range, shifted by the leased schedule
  if (envelope_) {
    for (int t = 0; t < t_count; ++t) {
      pb_.add_le({map_.nsor_hi[t], map_.lease_net[t]}, {1.0, -1.0},
                 envelope_->hi[t], "security_hi:" + std::to_string(t));
      pb_.add_ge({map_.nsor_lo[t], map_.lease_net[t]}, {1.0, -1.0},
                 envelope_->lo[t], "security_lo:" + std::to_string(t));
    }
  }
  if (vertex_rows != nullptr) {
    for (const auto& row : *vertex_rows) {
      std::ostringstream tag;
      tag << "vertex:t=" << row.t << ":bus=" << row.bus_id
          << ":corner=" << row.corner;
      int endpoint =
          row.at_max_endpoint ? map_.nsor_hi[row.t] : map_.nsor_lo[row.t];
      std::vector<int> idx{endpoint, map_.lease_net[row.t]};
      std::vector<double> co{row.coef, -row.coef};
      if (row.upper)
        pb_.add_le(idx, co, row.rhs, tag.str());
      else
        pb_.add_ge(idx, co, row.rhs, tag.str());
    }
  }

  if (with_coupling_aux) {
    for (int t = 0; t < t_count; ++t) {
      map_.gap.push_back(pb_.add_var(nm("gap", t), -kInf, kInf));
      gap_rows_.push_back(pb_.add_eq({map_.gap[t], map_.lease_net[t]},
                                     {1.0, 1.0}, 0.0, "coupling_gap"));
    }
  }
}

void AggregatorModel::set_coupling(const Eigen::VectorXd& pi,
                                   const Eigen::VectorXd& frozen_net,
                                   double rho) {
  if (map_.gap.empty())
    throw std::logic_error("model built without coupling aux");
  for (int t = 0; t < horizon_; ++t) {
    pb_.set_quad(map_.gap[t], rho);
    pb_.set_cost(map_.gap[t], -pi[t]);
    pb_.set_eq_rhs(gap_rows_[t], frozen_net[t]);
  }
}

void AggregatorModel::set_fixed_prices(const Eigen::VectorXd& lambda) {
  if (pricing_.kind != Pricing::Kind::kFixed)
    throw std::logic_error("model was built with robust pricing");
  if (lambda.size() != horizon_)
    throw std::invalid_argument("price vector length mismatch");
  pricing_.fixed_prices = lambda;
  for (int s = 0; s < data_.offer.pairs; ++s)
    for (int t = 0; t < horizon_; ++t)
      pb_.set_cost(map_.p_pair(s, t), -lambda[t]);
}

void AggregatorModel::pin_lease_profile(const Eigen::VectorXd& lease_net) {
  for (int t = 0; t < horizon_; ++t)
    pb_.add_eq({map_.lease_net[t]}, {1.0}, lease_net[t], "pinned_lease");
}

void AggregatorModel::add_lease_fees(double lambda_e, double lambda_p) {
  pb_.add_cost(map_.e_cap, lambda_e);
  pb_.add_cost(map_.p_cap, lambda_p);
  fee_lambda_e_ = lambda_e;
  fee_lambda_p_ = lambda_p;
}

void AggregatorModel::pin_awards(const Eigen::VectorXd& awards) {
  if (awards.size() != horizon_)
    throw std::invalid_argument("award vector length mismatch");
  for (int t = 0; t < horizon_; ++t)
    pb_.add_eq({map_.p_g[t]}, {1.0}, awards[t], "pinned_award");
}

AggregatorDecision AggregatorModel::extract(const Solution& sol) const {
  const int t_count = horizon_;
  const int s_count = data_.offer.pairs;
  AggregatorDecision d;
  d.p_pair.resize(s_count, t_count);
  d.alpha.resize(s_count, t_count);
  for (int s = 0; s < s_count; ++s)
    for (int t = 0; t < t_count; ++t)
      d.p_pair(s, t) = sol.x[map_.p_pair(s, t)];
  // reported offer prices: the lowest monotone curve above the cost floors
  for (int t = 0; t < t_count; ++t) {
    double run = data_.offer.alpha_min;
    for (int s = 0; s < s_count; ++s) {
      run = std::max(run, cost_floors_(s, t));
      d.alpha(s, t) = run;
    }
  }
  auto gather = [&](const std::vector<int>& idx) {
    Eigen::VectorXd v(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) v[i] = sol.x[idx[i]];
    return v;
  };
  d.p_g = gather(map_.p_g);
  d.p_ag = gather(map_.p_ag);
  d.lease_ch = gather(map_.lease_ch);
  d.lease_dis = gather(map_.lease_dis);
  d.lease_net = gather(map_.lease_net);

  // shrink the leased capacities to what the schedule actually needs
  double p_need = 0.0;
  for (int t = 0; t < t_count; ++t)
    p_need = std::max({p_need, d.lease_ch[t], d.lease_dis[t]});
  if (p_need < 1e-9) p_need = 0.0;
  double e_need = 0.0;
  double cum = 0.0, cum_max = 0.0, cum_min = 0.0;
  for (int t = 0; t < t_count; ++t) {
    cum += lease_.eta_c * d.lease_ch[t] - d.lease_dis[t] / lease_.eta_d;
    cum_max = std::max(cum_max, cum);
    cum_min = std::min(cum_min, cum);
    e_need = std::max({e_need, d.lease_ch[t] / lease_.k_c,
                       d.lease_dis[t] / lease_.k_d});
  }
  e_need = std::max({e_need, 2.0 * cum_max, 2.0 * (lease_.e_min - cum_min),
                     2.0 * lease_.e_min, p_need / lease_.k});
  if (e_need < 1e-9) e_need = 0.0;
  d.e_cap = std::min(e_need, lease_.enabled ? lease_.e_cap : 0.0);
  d.p_cap = std::min(p_need, lease_.enabled ? lease_.p_cap : 0.0);
  d.lease_energy.resize(t_count);
  cum = 0.0;
  for (int t = 0; t < t_count; ++t) {
    cum += lease_.eta_c * d.lease_ch[t] - d.lease_dis[t] / lease_.eta_d;
    d.lease_energy[t] = 0.5 * d.e_cap + cum;
  }

  // widest valid offer range given the schedule
  d.nsor_lo.resize(t_count);
  d.nsor_hi.resize(t_count);
  for (int t = 0; t < t_count; ++t) {
    double curve_lo = data_.offer.pair_q_min.col(t).sum();
    double curve_hi = data_.offer.pair_q_max.col(t).sum();
    if (envelope_) {
      d.nsor_lo[t] = std::max(curve_lo, envelope_->lo[t] + d.lease_net[t]);
      d.nsor_hi[t] = std::min(curve_hi, envelope_->hi[t] + d.lease_net[t]);
    } else {
      d.nsor_lo[t] = curve_lo;
      d.nsor_hi[t] = curve_hi;
    }
  }

  d.unit_p.resize(data_.portfolio.units.size());
  for (size_t u = 0; u < data_.portfolio.units.size(); ++u) {
    const DerUnit& unit = data_.portfolio.units[u];
    Eigen::VectorXd p(t_count);
    for (int t = 0; t < t_count; ++t) {
      if (unit.kind == DerKind::kStorage)
        p[t] = sol.x[map_.unit_dis[u][t]] - sol.x[map_.unit_ch[u][t]];
      else
        p[t] = sol.x[map_.unit_p[u][t]];
      if (unit.kind == DerKind::kStorage)
        d.der_cost += unit.cost_throughput * (sol.x[map_.unit_ch[u][t]] +
                                              sol.x[map_.unit_dis[u][t]]);
      else
        d.der_cost += unit.cost * p[t];
    }
    d.unit_p[u] = p;
  }
  d.om_fee = lease_.c_om * (d.lease_ch.sum() + d.lease_dis.sum());
  d.lease_fee = fee_lambda_e_ * d.e_cap + fee_lambda_p_ * d.p_cap;

  if (pricing_.kind == Pricing::Kind::kRobustBox) {
    d.revenue = sol.x[map_.z];
  } else {
    d.revenue = 0.0;
    for (int t = 0; t < t_count; ++t)
      d.revenue += pricing_.fixed_prices[t] * d.p_g[t];
  }

  for (int t = 0; t < t_count; ++t)
    if (std::min(d.lease_ch[t], d.lease_dis[t]) > 1e-6) {
      d.warnings = "simultaneous charge/discharge in the leased schedule";
      break;
    }
  return d;
}

// ---------------------------------------------------------------------------
// UtilityModel

UtilityModel::UtilityModel(const UtilityData& data, const LeaseTerms& lease,
                           int horizon, UtilityCoupling coupling)
    : data_(data), lease_(lease), horizon_(horizon), coupling_(coupling) {
  const SesAssetParams& a = data_.asset;
  if (a.eta_c <= 0 || a.eta_c > 1 || a.eta_d <= 0 || a.eta_d > 1)
    throw std::invalid_argument("asset efficiencies must be in (0, 1]");
  if (a.e0 < a.e_min || a.e0 > a.e_max)
    throw std::invalid_argument("asset initial energy outside its bounds");
  if (data_.price_forecast.size() != horizon)
    throw std::invalid_argument("utility price forecast length mismatch");
  floor_ = lease_price_floor(a.rate, a.years, a.c_e, a.c_p);

  auto nm = [](const char* base, int t) {
    return std::string(base) + "[" + std::to_string(t) + "]";
  };
  for (int t = 0; t < horizon; ++t) {
    map_.ch.push_back(pb_.add_var(nm("ch", t), 0.0, a.p_max, a.c_om));
    map_.dis.push_back(pb_.add_var(nm("dis", t), 0.0, a.p_max, a.c_om));
    map_.p_market.push_back(pb_.add_var(nm("p_mkt", t), -kInf, kInf,
                                        -data_.price_forecast[t]));
    map_.energy.push_back(pb_.add_var(nm("e", t), a.e_min, a.e_max));
    map_.loss.push_back(pb_.add_var(nm("loss", t), 0.0, kInf));
  }
  for (int t = 0; t < horizon; ++t) {
    std::vector<int> idx{map_.energy[t], map_.ch[t], map_.dis[t],
                         map_.loss[t]};
    std::vector<double> co{1.0, -1.0, 1.0, 1.0};
    double rhs = 0.0;
    if (t == 0) {
      rhs = a.e0;
    } else {
      idx.push_back(map_.energy[t - 1]);
      co.push_back(-1.0);
    }
    pb_.add_eq(idx, co, rhs, "storage_dynamics:" + std::to_string(t));
    pb_.add_ge({map_.loss[t], map_.dis[t]}, {1.0, -(1.0 / a.eta_d - 1.0)}, 0.0,
               "loss_epigraph_dis");
    pb_.add_ge({map_.loss[t], map_.ch[t]}, {1.0, -(1.0 - a.eta_c)}, 0.0,
               "loss_epigraph_ch");
  }
  pb_.add_eq({map_.energy[horizon - 1]}, {1.0}, a.e0, "cyclic_energy");

  if (coupling_ == UtilityCoupling::kPenalty) {
    for (int t = 0; t < horizon; ++t) {
      map_.gap.push_back(pb_.add_var(nm("gap", t), -kInf, kInf));
      gap_rows_.push_back(pb_.add_eq(
          {map_.dis[t], map_.ch[t], map_.p_market[t], map_.gap[t]},
          {1.0, -1.0, -1.0, -1.0}, 0.0, "coupling_gap"));
    }
  } else if (coupling_ == UtilityCoupling::kHardFrozen) {
    for (int t = 0; t < horizon; ++t)
      hard_rows_.push_back(
          pb_.add_eq({map_.dis[t], map_.ch[t], map_.p_market[t]},
                     {1.0, -1.0, -1.0}, 0.0, "balance:" + std::to_string(t)));
  }
}

void UtilityModel::set_coupling(const Eigen::VectorXd& pi,
                                const Eigen::VectorXd& lease_net_total,
                                double rho) {
  if (coupling_ != UtilityCoupling::kPenalty)
    throw std::logic_error("utility model not in penalty mode");
  for (int t = 0; t < horizon_; ++t) {
    pb_.set_quad(map_.gap[t], rho);
    pb_.set_cost(map_.gap[t], -pi[t]);
    pb_.set_eq_rhs(gap_rows_[t], lease_net_total[t]);
  }
}

void UtilityModel::set_hard_coupling_rhs(
    const Eigen::VectorXd& lease_net_total) {
  if (coupling_ != UtilityCoupling::kHardFrozen)
    throw std::logic_error("utility model not in hard-coupling mode");
  for (int t = 0; t < horizon_; ++t)
    pb_.set_eq_rhs(hard_rows_[t], lease_net_total[t]);
}

UtilityDecision UtilityModel::extract(const Solution& sol, double leased_e_cap,
                                      double leased_p_cap,
                                      double om_fee_income, double lambda_e,
                                      double lambda_p) const {
  UtilityDecision d;
  auto gather = [&](const std::vector<int>& idx) {
    Eigen::VectorXd v(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) v[i] = sol.x[idx[i]];
    return v;
  };
  d.ch = gather(map_.ch);
  d.dis = gather(map_.dis);
  d.p_market = gather(map_.p_market);
  d.energy = gather(map_.energy);
  d.loss = gather(map_.loss);
  d.market_revenue = data_.price_forecast.dot(d.p_market);
  d.own_om_cost = data_.asset.c_om * (d.ch.sum() + d.dis.sum());
  d.om_fee_income = om_fee_income;
  d.lambda_e = lambda_e;
  d.lambda_p = lambda_p;
  d.lease_income = lambda_e * leased_e_cap + lambda_p * leased_p_cap;
  return d;
}

std::pair<double, double> UtilityModel::recover_lease_prices(
    const Solution& sol) const {
  double shadow_e = 0.0, shadow_p = 0.0;
  for (int t = 0; t < horizon_; ++t) {
    shadow_e += sol.dual_hi[map_.energy[t]];
    shadow_p += sol.dual_hi[map_.ch[t]] + sol.dual_hi[map_.dis[t]];
  }
  return {std::max(floor_.lambda_e_min, shadow_e),
          std::max(floor_.lambda_p_min, shadow_p)};
}

// ---------------------------------------------------------------------------
// CombinedModel

namespace {

struct Offsets {
  int var = 0, eq = 0, ub = 0;
};

void append_program(const ConvexProgram& piece, std::vector<double>& cost,
                    std::vector<double>& quad, std::vector<double>& lb,
                    std::vector<double>& ub, std::vector<Triplet>& eq_trip,
                    std::vector<double>& eq_rhs, std::vector<Triplet>& ub_trip,
                    std::vector<double>& ub_rhs,
                    std::vector<std::string>& eq_tags,
                    std::vector<std::string>& ub_tags, Offsets& off) {
  off.var = static_cast<int>(cost.size());
  off.eq = static_cast<int>(eq_rhs.size());
  off.ub = static_cast<int>(ub_rhs.size());
  for (int j = 0; j < piece.n; ++j) {
    cost.push_back(piece.cost[j]);
    quad.push_back(piece.quad[j]);
    lb.push_back(piece.lb[j]);
    ub.push_back(piece.ub[j]);
  }
  for (int k = 0; k < piece.a_eq.outerSize(); ++k)
    for (SpMat::InnerIterator it(piece.a_eq, k); it; ++it)
      eq_trip.emplace_back(off.eq + static_cast<int>(it.row()),
                           off.var + static_cast<int>(it.col()), it.value());
  for (int k = 0; k < piece.a_ub.outerSize(); ++k)
    for (SpMat::InnerIterator it(piece.a_ub, k); it; ++it)
      ub_trip.emplace_back(off.ub + static_cast<int>(it.row()),
                           off.var + static_cast<int>(it.col()), it.value());
  for (Eigen::Index i = 0; i < piece.b_eq.size(); ++i)
    eq_rhs.push_back(piece.b_eq[i]);
  for (Eigen::Index i = 0; i < piece.b_ub.size(); ++i)
    ub_rhs.push_back(piece.b_ub[i]);
  for (const auto& tag : piece.eq_tags) eq_tags.push_back(tag);
  for (const auto& tag : piece.ub_tags) ub_tags.push_back(tag);
}

Solution slice_solution(const Solution& sol, const ConvexProgram& piece,
                        const Offsets& off) {
  Solution s;
  s.status = sol.status;
  s.x = sol.x.segment(off.var, piece.n);
  s.dual_eq = sol.dual_eq.size() > 0
                  ? Eigen::VectorXd(sol.dual_eq.segment(off.eq,
                                                        piece.a_eq.rows()))
                  : Eigen::VectorXd();
  s.dual_ub = sol.dual_ub.segment(off.ub, piece.a_ub.rows());
  s.dual_lo = sol.dual_lo.segment(off.var, piece.n);
  s.dual_hi = sol.dual_hi.segment(off.var, piece.n);
  return s;
}

}  // namespace

CombinedModel::CombinedModel(const ProblemInstance& inst,
                             const std::vector<Pricing>& pricing_per_agg)
    : inst_(inst) {
  const int b_count = static_cast<int>(inst.aggregators.size());
  if (pricing_per_agg.size() != inst.aggregators.size())
    throw std::invalid_argument("pricing list size mismatch");
  if (b_count != 1)
    throw std::invalid_argument(
        "network-secure combined model currently supports exactly one "
        "aggregator");

  std::vector<ConvexProgram> pieces;
  std::vector<std::vector<VertexSecurityRow>> vrows(b_count);
  for (int b = 0; b < b_count; ++b) {
    const auto& agg = inst.aggregators[b];
    EnvelopeResult env = compute_security_envelope(
        inst.utility.dn, agg.portfolio.delivery_shares, inst.horizon);
    envelopes_.push_back(env.envelope);
    const std::vector<VertexSecurityRow>* rows_ptr = nullptr;
    if (inst.full_vertex_security) {
      vrows[b] = enumerate_vertex_rows(inst.utility.dn,
                                       agg.portfolio.delivery_shares,
                                       inst.horizon, inst.vertex_cap);
      rows_ptr = &vrows[b];
    }
    agg_models_.push_back(std::make_unique<AggregatorModel>(
        agg, inst.lease, inst.horizon, pricing_per_agg[b],
        inst.full_vertex_security ? nullptr : &env.envelope, rows_ptr,
        /*with_coupling_aux=*/false));
    pieces.push_back(agg_models_.back()->program());
  }
  util_model_ = std::make_unique<UtilityModel>(
      inst.utility, inst.lease, inst.horizon, UtilityCoupling::kNone);
  pieces.push_back(util_model_->program());

  std::vector<double> cost, quad, lb, ub, eq_rhs, ub_rhs;
  std::vector<Triplet> eq_trip, ub_trip;
  std::vector<std::string> eq_tags, ub_tags;
  std::vector<Offsets> offs(pieces.size());
  for (size_t i = 0; i < pieces.size(); ++i)
    append_program(pieces[i], cost, quad, lb, ub, eq_trip, eq_rhs, ub_trip,
                   ub_rhs, eq_tags, ub_tags, offs[i]);
  for (int b = 0; b < b_count; ++b) {
    agg_var_offset_.push_back(offs[b].var);
    agg_eq_offset_.push_back(offs[b].eq);
    agg_ub_offset_.push_back(offs[b].ub);
  }
  util_var_offset_ = offs[b_count].var;
  util_eq_offset_ = offs[b_count].eq;
  util_ub_offset_ = offs[b_count].ub;

  // storage balance ties the utility dispatch to every leased profile
  const auto& umap = util_model_->map();
  for (int t = 0; t < inst.horizon; ++t) {
    int row = static_cast<int>(eq_rhs.size());
    eq_trip.emplace_back(row, util_var_offset_ + umap.dis[t], 1.0);
    eq_trip.emplace_back(row, util_var_offset_ + umap.ch[t], -1.0);
    eq_trip.emplace_back(row, util_var_offset_ + umap.p_market[t], -1.0);
    for (int b = 0; b < b_count; ++b)
      eq_trip.emplace_back(
          row, agg_var_offset_[b] + agg_models_[b]->map().lease_net[t], -1.0);
    eq_rhs.push_back(0.0);
    eq_tags.push_back("balance:" + std::to_string(t));
    pi_rows_.push_back(row);
  }

  prog_.n = static_cast<int>(cost.size());
  prog_.cost = Eigen::Map<Eigen::VectorXd>(cost.data(), cost.size());
  prog_.quad = Eigen::Map<Eigen::VectorXd>(quad.data(), quad.size());
  prog_.lb = Eigen::Map<Eigen::VectorXd>(lb.data(), lb.size());
  prog_.ub = Eigen::Map<Eigen::VectorXd>(ub.data(), ub.size());
  prog_.a_eq.resize(static_cast<int>(eq_rhs.size()), prog_.n);
  prog_.a_eq.setFromTriplets(eq_trip.begin(), eq_trip.end());
  prog_.b_eq = Eigen::Map<Eigen::VectorXd>(eq_rhs.data(), eq_rhs.size());
  prog_.a_ub.resize(static_cast<int>(ub_rhs.size()), prog_.n);
  prog_.a_ub.setFromTriplets(ub_trip.begin(), ub_trip.end());
  prog_.b_ub = Eigen::Map<Eigen::VectorXd>(ub_rhs.data(), ub_rhs.size());
  prog_.eq_tags = eq_tags;
  prog_.ub_tags = ub_tags;
}

CombinedModel::Result CombinedModel::extract(const Solution& sol) const {
  Result r;
  const int b_count = static_cast<int>(agg_models_.size());
  const int t_count = inst_.horizon;

  Offsets uoff{util_var_offset_, util_eq_offset_, util_ub_offset_};
  ConvexProgram uprog = util_model_->program();
  Solution usol = slice_solution(sol, uprog, uoff);
  auto [lam_e, lam_p] = util_model_->recover_lease_prices(usol);
  r.lambda_e = lam_e;
  r.lambda_p = lam_p;

  double om_income = 0.0, leased_e = 0.0, leased_p = 0.0;
  for (int b = 0; b < b_count; ++b) {
    Offsets aoff{agg_var_offset_[b], agg_eq_offset_[b], agg_ub_offset_[b]};
    ConvexProgram aprog = agg_models_[b]->program();
    Solution asol = slice_solution(sol, aprog, aoff);
    agg_models_[b]->set_lease_prices(lam_e, lam_p);
    r.agg.push_back(agg_models_[b]->extract(asol));
    om_income += r.agg.back().om_fee;
    leased_e += r.agg.back().e_cap;
    leased_p += r.agg.back().p_cap;
  }
  r.util =
      util_model_->extract(usol, leased_e, leased_p, om_income, lam_e, lam_p);

  r.phi.resize(b_count * t_count);
  for (int b = 0; b < b_count; ++b)
    for (int t = 0; t < t_count; ++t)
      r.phi[b * t_count + t] =
          sol.dual_eq[agg_eq_offset_[b] +
                      agg_models_[b]->map().award_sum_rows[t]];
  r.pi.resize(t_count);
  for (int t = 0; t < t_count; ++t) r.pi[t] = sol.dual_eq[pi_rows_[t]];
  r.objective = sol.objective;
  return r;
}

SpMat award_price_map(const AggregatorModel& model) {
  const auto& m = model.map();
  const int t_count = model.horizon();
  int n = model.program().n;
  std::vector<Triplet> trips;
  for (int t = 0; t < t_count; ++t)
    for (int s = 0; s < m.p_pair.rows(); ++s)
      trips.emplace_back(t, m.p_pair(s, t), 1.0);
  SpMat map(t_count, n);
  map.setFromTriplets(trips.begin(), trips.end());
  return map;
}

double profit_reconciliation_gap(const CombinedModel::Result& r) {
  double profits = r.util.profit();
  double om_transfer = 0.0;
  for (const auto& a : r.agg) {
    profits += a.profit();
    om_transfer += a.om_fee;
  }
  return profits + r.objective - om_transfer;
}

}  // namespace sesoffer
