#include "sesoffer/scenario.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace sesoffer {

using nlohmann::json;

namespace {

Eigen::VectorXd parse_profile(const json& j, const std::string& field,
                              int horizon) {
  Eigen::VectorXd v(horizon);
  if (j.is_number()) {
    v.setConstant(j.get<double>());
    return v;
  }
  if (!j.is_array() || static_cast<int>(j.size()) != horizon)
    throw ConfigError(field,
                      "expected a scalar or an array of length " +
                          std::to_string(horizon));
  for (int t = 0; t < horizon; ++t) v[t] = j[t].get<double>();
  return v;
}

double require_positive(const json& j, const std::string& field) {
  double v = j.get<double>();
  if (!(v > 0)) throw ConfigError(field, "must be > 0");
  return v;
}

DerUnit parse_unit(const json& j, int horizon, int index) {
  std::string where = "aggregator.units[" + std::to_string(index) + "]";
  DerUnit u;
  u.name = j.value("name", "unit" + std::to_string(index));
  std::string type = j.at("type").get<std::string>();
  u.bus = j.at("bus").get<int>();
  if (type == "generation") {
    u.kind = DerKind::kGeneration;
  } else if (type == "flexible_load") {
    u.kind = DerKind::kFlexibleLoad;
  } else if (type == "storage") {
    u.kind = DerKind::kStorage;
  } else {
    throw ConfigError(where + ".type", "unknown unit type '" + type + "'");
  }
  if (u.kind == DerKind::kStorage) {
    u.e_max = require_positive(j.at("e_max"), where + ".e_max");
    u.p_rate = require_positive(j.at("p_rate"), where + ".p_rate");
    u.eta_c = j.value("eta_c", 1.0);
    u.eta_d = j.value("eta_d", 1.0);
    if (u.eta_c <= 0 || u.eta_c > 1)
      throw ConfigError(where + ".eta_c", "must be in (0, 1]");
    if (u.eta_d <= 0 || u.eta_d > 1)
      throw ConfigError(where + ".eta_d", "must be in (0, 1]");
    u.e0_frac = j.value("e0_frac", 0.5);
    u.cost_throughput = j.value("cost_throughput", 0.0);
  } else {
    u.p_min = parse_profile(j.at("p_min"), where + ".p_min", horizon);
    u.p_max = parse_profile(j.at("p_max"), where + ".p_max", horizon);
    for (int t = 0; t < horizon; ++t)
      if (u.p_min[t] > u.p_max[t])
        throw ConfigError(where + ".p_min", "exceeds p_max at interval " +
                                                std::to_string(t));
    u.cost = j.value("cost", 0.0);
  }
  return u;
}

OfferConfig parse_offer(const json& j, int horizon) {
  OfferConfig o;
  o.pairs = j.value("pairs", 1);
  if (o.pairs < 1) throw ConfigError("aggregator.offer.pairs", "must be >= 1");
  o.alpha_min = j.value("alpha_min", 0.0);
  o.alpha_max = j.value("alpha_max", 1000.0);
  if (o.alpha_min > o.alpha_max)
    throw ConfigError("aggregator.offer.alpha_min", "exceeds alpha_max");
  if (j.contains("band_lo") || j.contains("band_hi")) {
    Eigen::VectorXd lo =
        parse_profile(j.at("band_lo"), "aggregator.offer.band_lo", horizon);
    Eigen::VectorXd hi =
        parse_profile(j.at("band_hi"), "aggregator.offer.band_hi", horizon);
    o.pair_q_min.resize(o.pairs, horizon);
    o.pair_q_max.resize(o.pairs, horizon);
    for (int s = 0; s < o.pairs; ++s)
      for (int t = 0; t < horizon; ++t) {
        o.pair_q_min(s, t) = lo[t] / o.pairs;
        o.pair_q_max(s, t) = hi[t] / o.pairs;
      }
  } else {
    const json& qmin = j.at("pair_q_min");
    const json& qmax = j.at("pair_q_max");
    if (static_cast<int>(qmin.size()) != o.pairs ||
        static_cast<int>(qmax.size()) != o.pairs)
      throw ConfigError("aggregator.offer.pair_q_min",
                        "need one row per pair");
    o.pair_q_min.resize(o.pairs, horizon);
    o.pair_q_max.resize(o.pairs, horizon);
    for (int s = 0; s < o.pairs; ++s) {
      Eigen::VectorXd lo = parse_profile(qmin[s], "offer.pair_q_min", horizon);
      Eigen::VectorXd hi = parse_profile(qmax[s], "offer.pair_q_max", horizon);
      o.pair_q_min.row(s) = lo.transpose();
      o.pair_q_max.row(s) = hi.transpose();
    }
  }
  return o;
}

}  // namespace

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("(file)", "cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("(file)", std::string("not valid JSON: ") + e.what());
  }
  std::filesystem::path base = std::filesystem::path(path).parent_path();

  ScenarioConfig cfg;
  cfg.name = j.value("name", std::filesystem::path(path).stem().string());
  cfg.seed = j.value("seed", 1);
  cfg.mc_samples = j.value("mc_samples", 1000);

  ProblemInstance& inst = cfg.instance;
  inst.horizon = j.at("horizon").get<int>();
  if (inst.horizon < 1) throw ConfigError("horizon", "must be >= 1");
  const int t_count = inst.horizon;

  double base_mva = require_positive(j.at("base_mva"), "base_mva");

  // network
  std::string feeder = j.at("feeder").get<std::string>();
  std::filesystem::path feeder_path = feeder;
  if (feeder_path.is_relative()) feeder_path = base / feeder_path;
  DnData& dn = inst.utility.dn;
  try {
    dn.net = Network::from_file(feeder_path.string());
  } catch (const std::exception& e) {
    throw ConfigError("feeder", e.what());
  }
  dn.base_mva = base_mva;
  dn.background_p = Eigen::MatrixXd::Zero(dn.net.num_buses(), t_count);
  const json& net_j = j.at("network");
  if (net_j.contains("background_injections_mw")) {
    for (auto it = net_j["background_injections_mw"].begin();
         it != net_j["background_injections_mw"].end(); ++it) {
      int bus = std::stoi(it.key());
      Eigen::VectorXd prof = parse_profile(
          it.value(), "network.background_injections_mw." + it.key(),
          t_count);
      dn.background_p.row(dn.net.index_of(bus)) =
          (prof / base_mva).transpose();
    }
  }
  dn.box.v_set_min = net_j.value("v_set_min", 1.0);
  dn.box.v_set_max = net_j.value("v_set_max", 1.0);
  if (dn.box.v_set_min > dn.box.v_set_max)
    throw ConfigError("network.v_set_min", "exceeds v_set_max");
  dn.box.num_aggregators = 1;
  if (net_j.contains("uncertain")) {
    int nb = static_cast<int>(net_j["uncertain"].size());
    dn.box.uncertain_buses.clear();
    dn.box.p_inj_ex.resize(nb, t_count);
    dn.box.delta_g.resize(nb, t_count);
    int i = 0;
    for (auto it = net_j["uncertain"].begin(); it != net_j["uncertain"].end();
         ++it) {
      int bus = std::stoi(it.key());
      std::string where = "network.uncertain." + it.key();
      dn.box.uncertain_buses.push_back(bus);
      Eigen::VectorXd ex =
          parse_profile(it.value().at("p_ex_mw"), where + ".p_ex_mw", t_count);
      Eigen::VectorXd delta = parse_profile(it.value().at("delta_mw"),
                                            where + ".delta_mw", t_count);
      if ((delta.array() < 0).any())
        throw ConfigError(where + ".delta_mw", "must be >= 0");
      dn.box.p_inj_ex.row(i) = (ex / base_mva).transpose();
      dn.box.delta_g.row(i) = (delta / base_mva).transpose();
      if (dn.background_p.row(dn.net.index_of(bus)).cwiseAbs().sum() > 0)
        throw ConfigError(where,
                          "bus also carries background injections; the "
                          "expected value belongs in p_ex_mw alone");
      ++i;
    }
  } else {
    dn.box.p_inj_ex.resize(0, t_count);
    dn.box.delta_g.resize(0, t_count);
  }

  // price box
  const json& pb_j = j.at("price_box");
  AggregatorData agg;
  agg.price_box.lambda_ex =
      parse_profile(pb_j.at("lambda_ex"), "price_box.lambda_ex", t_count);
  agg.price_box.delta =
      parse_profile(pb_j.at("delta"), "price_box.delta", t_count);
  if ((agg.price_box.delta.array() < 0).any())
    throw ConfigError("price_box.delta", "must be >= 0");
  inst.utility.price_forecast = agg.price_box.lambda_ex;

  // aggregator
  const json& agg_j = j.at("aggregator");
  for (auto it = agg_j.at("delivery_shares").begin();
       it != agg_j.at("delivery_shares").end(); ++it) {
    double w = it.value().get<double>();
    if (w < 0)
      throw ConfigError("aggregator.delivery_shares." + it.key(),
                        "must be >= 0");
    agg.portfolio.delivery_shares[std::stoi(it.key())] = w;
  }
  double share_sum = 0;
  for (auto& [bus, w] : agg.portfolio.delivery_shares) {
    try {
      dn.net.index_of(bus);
    } catch (const std::exception&) {
      throw ConfigError("aggregator.delivery_shares." + std::to_string(bus),
                        "unknown bus");
    }
    share_sum += w;
  }
  if (std::abs(share_sum - 1.0) > 1e-9)
    throw ConfigError("aggregator.delivery_shares", "must sum to 1");
  int ui = 0;
  for (const json& uj : agg_j.at("units"))
    agg.portfolio.units.push_back(parse_unit(uj, t_count, ui++));
  agg.offer = parse_offer(agg_j.at("offer"), t_count);
  inst.aggregators.push_back(std::move(agg));

  // shared storage
  const json& ses_j = j.at("ses");
  LeaseTerms& lease = inst.lease;
  SesAssetParams& asset = inst.utility.asset;
  lease.enabled = ses_j.value("lease_enabled", true);
  asset.e_max = require_positive(ses_j.at("e_max"), "ses.e_max");
  asset.p_max = require_positive(ses_j.at("p_max"), "ses.p_max");
  asset.e_min = ses_j.value("e_min", 0.0);
  asset.e0 = ses_j.value("e0", 0.5 * asset.e_max);
  asset.eta_c = require_positive(ses_j.at("eta_c"), "ses.eta_c");
  asset.eta_d = require_positive(ses_j.at("eta_d"), "ses.eta_d");
  if (asset.eta_c > 1) throw ConfigError("ses.eta_c", "must be in (0, 1]");
  if (asset.eta_d > 1) throw ConfigError("ses.eta_d", "must be in (0, 1]");
  asset.c_om = ses_j.value("c_om", 0.0);
  asset.c_e = ses_j.value("c_e", 0.0);
  asset.c_p = ses_j.value("c_p", 0.0);
  asset.rate = ses_j.value("rate", 0.08);
  asset.years = ses_j.value("years", 10.0);
  if (asset.rate <= 0) throw ConfigError("ses.rate", "must be > 0");
  if (asset.years < 1) throw ConfigError("ses.years", "must be >= 1");
  lease.e_cap = asset.e_max;
  lease.p_cap = asset.p_max;
  lease.k_c = ses_j.value("k_c", 0.5);
  lease.k_d = ses_j.value("k_d", 0.5);
  lease.k = ses_j.value("k", 0.5);
  lease.eta_c = asset.eta_c;
  lease.eta_d = asset.eta_d;
  lease.e_min = ses_j.value("e_min_lease", 0.0);
  lease.c_om = asset.c_om;

  // solver / consensus options
  if (j.contains("solver")) {
    const json& s = j["solver"];
    cfg.solver_tol = s.value("tol", 1e-9);
    cfg.admm.rho = s.value("rho", 0.01);
    cfg.admm.eps_pri = s.value("eps_pri", 1e-4);
    cfg.admm.eps_dual = s.value("eps_dual", 1e-4);
    cfg.admm.k_max = s.value("k_max", 500);
    cfg.admm.solver_tol = cfg.solver_tol;
    std::string sec = s.value("security", "reduced");
    if (sec == "full")
      inst.full_vertex_security = true;
    else if (sec != "reduced")
      throw ConfigError("solver.security", "expected 'reduced' or 'full'");
    inst.vertex_cap = s.value("vertex_cap", std::int64_t{1} << 20);
  }

  // market (optional; required by the surrogate mode)
  if (j.contains("market")) {
    cfg.has_market = true;
    const json& m = j["market"];
    for (const json& b : m.at("stack"))
      cfg.market.stack.push_back(
          {b.at("price").get<double>(), b.at("quantity").get<double>()});
    cfg.market.demand = parse_profile(m.at("demand"), "market.demand",
                                      t_count);
    cfg.market.price_cap = m.value("price_cap", 1000.0);
    cfg.market.price_floor = m.value("price_floor", 0.0);
    cfg.market.noise_scale = m.value("noise", 0.0);
    cfg.market.seed = m.value("seed", cfg.seed);
    try {
      cfg.market.validate();
    } catch (const std::exception& e) {
      throw ConfigError("market", e.what());
    }
    cfg.history_days = m.value("history_days", 60);
    if (m.contains("nominal_offer_mw")) {
      cfg.nominal_offer = parse_profile(m.at("nominal_offer_mw"),
                                        "market.nominal_offer_mw", t_count);
    } else {
      cfg.nominal_offer.resize(t_count);
      for (int t = 0; t < t_count; ++t)
        cfg.nominal_offer[t] = std::max(
            0.0, inst.aggregators[0].offer.pair_q_max.col(t).sum());
    }
  }
  if (j.contains("surrogate")) {
    const json& s = j["surrogate"];
    cfg.train.epochs = s.value("epochs", 30);
    cfg.train.batch = s.value("batch", 32);
    cfg.train.learning_rate = s.value("learning_rate", 0.01);
    cfg.train.eps = s.value("eps", 1e-2);
    cfg.train.seed = s.value("seed", cfg.seed);
  }
  return cfg;
}

}  // namespace sesoffer
