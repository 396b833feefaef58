#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace sesoffer {

struct SupplyBlock {
  double price = 0.0;     // $/MWh
  double quantity = 0.0;  // MW
};

/// Synthetic wholesale clearing oracle: a background merit stack plus an
/// inelastic demand profile, perturbed day by day with seeded noise.
struct MarketConfig {
  std::vector<SupplyBlock> stack;  // sorted by price at validation
  Eigen::VectorXd demand;          // MW per interval
  double price_cap = 1000.0;
  double price_floor = 0.0;
  double noise_scale = 0.0;  // relative perturbation of demand and prices
  std::uint64_t seed = 1;

  void validate() const;
};

/// One submitted price-quantity pair. Positive quantities are supply offers
/// (awarded when priced at or below the clearing price); negative
/// quantities are demand bids (served when priced at or above it).
struct OfferPair {
  double price = 0.0;
  double quantity = 0.0;  // MW, sign carries the side
};

struct ClearingResult {
  double price = 0.0;
  std::vector<double> awards;  // per submitted pair, signed like the bid
  double background_supplied = 0.0;
};

/// Merit-order clearing of one interval: sort every supply block by price,
/// fill demand, the marginal block sets the price; awards at the margin are
/// pro-rata.
ClearingResult clear_interval(const std::vector<SupplyBlock>& stack,
                              const std::vector<OfferPair>& offers,
                              double demand, double price_cap,
                              double price_floor);

/// A realized trading day: perturbed stack and demand.
struct MarketDay {
  std::vector<SupplyBlock> stack;
  Eigen::VectorXd demand;
};

MarketDay realize_day(const MarketConfig& config, std::uint64_t day_seed);

struct HistoryRecord {
  Eigen::VectorXd offered_q;       // aggregator per-interval offered supply
  Eigen::VectorXd prev_price;      // previous day's realized prices
  Eigen::VectorXd realized_price;  // clearing prices of the day
};

using HistoryDataset = std::vector<HistoryRecord>;

/// Seeded offer-history generator: each day scales a nominal offer profile,
/// realizes the perturbed market, clears, and records features and prices.
HistoryDataset generate_history(const MarketConfig& config, int n_days,
                                const Eigen::VectorXd& nominal_offer,
                                double offer_price = 0.0);

void write_history_csv(const HistoryDataset& data, const std::string& path);

}  // namespace sesoffer
