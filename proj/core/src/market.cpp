#include "sesoffer/market.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace sesoffer {

void MarketConfig::validate() const {
  if (stack.empty()) throw std::invalid_argument("market stack is empty");
  for (const auto& b : stack) {
    if (b.quantity < 0)
      throw std::invalid_argument("market block with negative quantity");
    if (b.price < price_floor || b.price > price_cap)
      throw std::invalid_argument("market block priced outside the caps");
  }
  if (demand.size() == 0) throw std::invalid_argument("demand profile empty");
  if ((demand.array() < 0).any())
    throw std::invalid_argument("negative demand");
  if (noise_scale < 0) throw std::invalid_argument("negative noise scale");
}

ClearingResult clear_interval(const std::vector<SupplyBlock>& stack,
                              const std::vector<OfferPair>& offers,
                              double demand, double price_cap,
                              double price_floor) {
  struct Entry {
    double price, quantity;
    int offer_index;  // -1 for background blocks
  };
  std::vector<Entry> supply;
  for (const auto& b : stack) supply.push_back({b.price, b.quantity, -1});
  std::vector<std::pair<double, int>> demand_bids;  // (price, offer index)
  for (size_t i = 0; i < offers.size(); ++i) {
    if (offers[i].quantity >= 0)
      supply.push_back({offers[i].price, offers[i].quantity,
                        static_cast<int>(i)});
    else
      demand_bids.push_back({offers[i].price, static_cast<int>(i)});
  }
  std::stable_sort(supply.begin(), supply.end(),
                   [](const Entry& a, const Entry& b) {
                     return a.price < b.price;
                   });

  // price-responsive demand: bids priced at or above the candidate price are
  // served; walk the stack until cumulative supply covers demand(price)
  auto demand_at = [&](double price) {
    double d = demand;
    for (const auto& [p, idx] : demand_bids)
      if (p >= price - 1e-12) d += -offers[idx].quantity;
    return d;
  };

  ClearingResult out;
  out.awards.assign(offers.size(), 0.0);
  double cum = 0.0;
  double price = supply.empty() ? price_cap : supply.front().price;
  size_t marginal = supply.size();
  for (size_t i = 0; i < supply.size(); ++i) {
    price = supply[i].price;
    if (cum + supply[i].quantity >= demand_at(price) - 1e-12) {
      marginal = i;
      break;
    }
    cum += supply[i].quantity;
  }
  if (marginal == supply.size()) {
    // shortage: every block runs, the price clamps to the cap
    price = price_cap;
    for (size_t i = 0; i < supply.size(); ++i)
      if (supply[i].offer_index >= 0)
        out.awards[supply[i].offer_index] += supply[i].quantity;
      else
        out.background_supplied += supply[i].quantity;
    for (const auto& [p, idx] : demand_bids)
      if (p >= price - 1e-12) out.awards[idx] = offers[idx].quantity;
    out.price = price;
    return out;
  }

  double target = demand_at(price);
  double residual = target - cum;  // served by the marginal block, pro-rata
  for (size_t i = 0; i < marginal; ++i) {
    if (supply[i].offer_index >= 0)
      out.awards[supply[i].offer_index] += supply[i].quantity;
    else
      out.background_supplied += supply[i].quantity;
  }
  // pro-rata among every block at the marginal price
  double at_margin = 0.0;
  for (size_t i = marginal; i < supply.size(); ++i)
    if (std::abs(supply[i].price - price) <= 1e-12)
      at_margin += supply[i].quantity;
  double frac = at_margin > 0 ? std::min(1.0, residual / at_margin) : 0.0;
  for (size_t i = marginal; i < supply.size(); ++i) {
    if (std::abs(supply[i].price - price) > 1e-12) continue;
    double q = frac * supply[i].quantity;
    if (supply[i].offer_index >= 0)
      out.awards[supply[i].offer_index] += q;
    else
      out.background_supplied += q;
  }
  for (const auto& [p, idx] : demand_bids)
    if (p >= price - 1e-12) out.awards[idx] = offers[idx].quantity;
  out.price = std::clamp(price, price_floor, price_cap);
  return out;
}

MarketDay realize_day(const MarketConfig& config, std::uint64_t day_seed) {
  config.validate();
  std::mt19937_64 rng(config.seed * 0x9e3779b97f4a7c15ULL + day_seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  MarketDay day;
  day.stack = config.stack;
  for (auto& b : day.stack) {
    b.price = std::clamp(b.price * (1.0 + config.noise_scale * unit(rng)),
                         config.price_floor, config.price_cap);
  }
  std::sort(day.stack.begin(), day.stack.end(),
            [](const SupplyBlock& a, const SupplyBlock& b) {
              return a.price < b.price;
            });
  day.demand = config.demand;
  for (Eigen::Index t = 0; t < day.demand.size(); ++t)
    day.demand[t] =
        std::max(0.0, day.demand[t] * (1.0 + config.noise_scale * unit(rng)));
  return day;
}

HistoryDataset generate_history(const MarketConfig& config, int n_days,
                                const Eigen::VectorXd& nominal_offer,
                                double offer_price) {
  if (n_days < 1) throw std::invalid_argument("need at least one day");
  config.validate();
  const int t_count = static_cast<int>(config.demand.size());
  if (nominal_offer.size() != t_count)
    throw std::invalid_argument("nominal offer length mismatch");
  std::mt19937_64 scale_rng(config.seed ^ 0xda3e39cb94b95bdbULL);
  std::uniform_real_distribution<double> scale_dist(0.4, 1.6);

  HistoryDataset data;
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(t_count);
  {
    // seed the previous-day feature with an offer-free clearing
    MarketDay day0 = realize_day(config, 0);
    for (int t = 0; t < t_count; ++t)
      prev[t] = clear_interval(day0.stack, {}, day0.demand[t],
                               config.price_cap, config.price_floor)
                    .price;
  }
  for (int d = 1; d <= n_days; ++d) {
    double scale = scale_dist(scale_rng);
    MarketDay day = realize_day(config, static_cast<std::uint64_t>(d));
    HistoryRecord rec;
    rec.offered_q = nominal_offer * scale;
    rec.prev_price = prev;
    rec.realized_price.resize(t_count);
    for (int t = 0; t < t_count; ++t) {
      std::vector<OfferPair> offers{{offer_price, rec.offered_q[t]}};
      rec.realized_price[t] =
          clear_interval(day.stack, offers, day.demand[t], config.price_cap,
                         config.price_floor)
              .price;
    }
    prev = rec.realized_price;
    data.push_back(std::move(rec));
  }
  return data;
}

void write_history_csv(const HistoryDataset& data, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "day,interval,offered_q,prev_price,realized_price\n";
  os.precision(12);
  for (size_t d = 0; d < data.size(); ++d)
    for (Eigen::Index t = 0; t < data[d].offered_q.size(); ++t)
      os << d << ',' << t << ',' << data[d].offered_q[t] << ','
         << data[d].prev_price[t] << ',' << data[d].realized_price[t] << '\n';
}

}  // namespace sesoffer
