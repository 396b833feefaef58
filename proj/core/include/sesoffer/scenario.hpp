#pragma once

#include <stdexcept>
#include <string>

#include "sesoffer/admm.hpp"
#include "sesoffer/agents.hpp"
#include "sesoffer/market.hpp"
#include "sesoffer/surrogate.hpp"

namespace sesoffer {

struct ConfigError : std::runtime_error {
  ConfigError(const std::string& field, const std::string& why)
      : std::runtime_error("config field '" + field + "': " + why),
        field(field) {}
  std::string field;
};

struct ScenarioConfig {
  std::string name;
  ProblemInstance instance;
  AdmmOptions admm;
  double solver_tol = 1e-9;
  std::uint64_t seed = 1;
  int mc_samples = 1000;

  bool has_market = false;
  MarketConfig market;
  int history_days = 60;
  Eigen::VectorXd nominal_offer;
  TrainOptions train;
};

/// Parse and validate a scenario file (JSON). Paths inside the file are
/// resolved relative to its directory. Throws ConfigError naming the
/// offending field.
ScenarioConfig load_scenario(const std::string& path);

}  // namespace sesoffer
