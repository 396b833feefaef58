#include <cstdio>
#include <fstream>
#include <random>

#include "doctest.h"
#include "sesoffer/network.hpp"

using namespace sesoffer;

namespace {

FeederSpec two_bus(double r = 0.01, double x = 0.02) {
  FeederSpec spec;
  spec.buses = {{1, 0.81, 1.21, 0.0}, {2, 0.81, 1.21, 0.0}};
  spec.branches = {{1, 2, r, x}};
  return spec;
}

FeederSpec three_bus_chain(double r = 0.01) {
  FeederSpec spec;
  spec.buses = {{1, 0.81, 1.21, 0.0},
                {2, 0.81, 1.21, 0.0},
                {3, 0.81, 1.21, 0.0}};
  spec.branches = {{1, 2, r, 0.0}, {2, 3, r, 0.0}};
  return spec;
}

FeederSpec star() {
  FeederSpec spec;
  spec.buses = {{1, 0.81, 1.21, 0.0},
                {2, 0.81, 1.21, 0.0},
                {3, 0.81, 1.21, 0.0}};
  spec.branches = {{1, 2, 0.01, 0.0}, {1, 3, 0.02, 0.0}};
  return spec;
}

}  // namespace

TEST_CASE("smallest tree loads") {
  Network net = Network::from_spec(two_bus());
  CHECK(net.num_buses() == 2);
  CHECK(net.num_branches() == 1);
}

TEST_CASE("load errors: duplicate branch, cycle, bad bounds, disconnect") {
  FeederSpec dup = three_bus_chain();
  dup.branches.push_back({3, 2, 0.01, 0.0});
  dup.buses.push_back({4, 0.81, 1.21, 0.0});
  CHECK_THROWS_WITH_AS(Network::from_spec(dup),
                       doctest::Contains("duplicate branch"),
                       std::invalid_argument);

  FeederSpec cyc;
  cyc.buses = {{1, 0.81, 1.21, 0}, {2, 0.81, 1.21, 0}, {3, 0.81, 1.21, 0},
               {4, 0.81, 1.21, 0}};
  cyc.branches = {{1, 2, .01, 0}, {2, 3, .01, 0}, {3, 1, .01, 0}};
  CHECK_THROWS_AS(Network::from_spec(cyc), std::invalid_argument);

  FeederSpec bad = two_bus();
  bad.buses[1].v_min = 1.3;
  CHECK_THROWS_WITH_AS(Network::from_spec(bad),
                       doctest::Contains("v_min < v_max"),
                       std::invalid_argument);

  FeederSpec disc;
  disc.buses = {{1, 0.81, 1.21, 0}, {2, 0.81, 1.21, 0}, {3, 0.81, 1.21, 0},
                {4, 0.81, 1.21, 0}};
  disc.branches = {{1, 2, .01, 0}, {3, 4, .01, 0}};
  CHECK_THROWS_AS(Network::from_spec(disc), std::invalid_argument);
}

TEST_CASE("one-branch voltage rise") {
  Network net = Network::from_spec(two_bus(0.01, 0.0));
  Eigen::VectorXd p(2);
  p << 0.0, 0.1;
  Eigen::VectorXd v = net.voltage_profile(1.0, p);
  CHECK(v[0] == doctest::Approx(1.0));
  CHECK(v[1] == doctest::Approx(1.002).epsilon(1e-12));
}

TEST_CASE("flat profile with zero injections") {
  Network net = Network::from_spec(three_bus_chain());
  Eigen::VectorXd v =
      net.voltage_profile(1.03, Eigen::VectorXd::Zero(net.num_buses()));
  for (int j = 0; j < net.num_buses(); ++j)
    CHECK(v[j] == doctest::Approx(1.03).epsilon(1e-14));
}

TEST_CASE("cumulative drop along a chain") {
  Network net = Network::from_spec(three_bus_chain(0.01));
  Eigen::VectorXd p(3);
  p << 0.0, 0.0, 0.1;
  Eigen::VectorXd v = net.voltage_profile(1.0, p);
  CHECK(v[net.index_of(2)] == doctest::Approx(1.002).epsilon(1e-12));
  CHECK(v[net.index_of(3)] == doctest::Approx(1.004).epsilon(1e-12));
}

TEST_CASE("sensitivity is the doubled common-path resistance") {
  Network net = Network::from_spec(two_bus(0.01, 0.0));
  const Eigen::MatrixXd& s = net.sensitivity();
  CHECK(s(net.index_of(2), net.index_of(2)) == doctest::Approx(0.02));
  CHECK(s(net.index_of(1), net.index_of(2)) == doctest::Approx(0.0));
}

TEST_CASE("disjoint laterals have no cross sensitivity") {
  Network net = Network::from_spec(star());
  const Eigen::MatrixXd& s = net.sensitivity();
  CHECK(s(net.index_of(2), net.index_of(3)) == doctest::Approx(0.0));
  CHECK(s(net.index_of(2), net.index_of(2)) == doctest::Approx(0.02));
  CHECK(s(net.index_of(3), net.index_of(3)) == doctest::Approx(0.04));
}

TEST_CASE("profile equals the sensitivity form on random injections") {
  FeederSpec spec;
  // small irregular tree with reactive offsets
  spec.buses = {{1, .81, 1.21, 0.0},   {2, .81, 1.21, 0.01},
                {3, .81, 1.21, -0.02}, {4, .81, 1.21, 0.0},
                {5, .81, 1.21, 0.03},  {6, .81, 1.21, 0.0}};
  spec.branches = {{1, 2, .01, .02}, {2, 3, .015, .01}, {2, 4, .02, .04},
                   {4, 5, .005, .01}, {1, 6, .03, .02}};
  Network net = Network::from_spec(spec);
  const Eigen::MatrixXd& s = net.sensitivity();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd p(net.num_buses());
    for (int j = 0; j < p.size(); ++j) p[j] = u(rng);
    double v_set = 1.0 + 0.05 * u(rng);
    Eigen::VectorXd direct = net.voltage_profile(v_set, p);
    Eigen::VectorXd linear = (s * p + net.reactive_offset()).array() + v_set;
    CHECK((direct - linear).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("linearity and monotonicity of the voltage map") {
  Network net = Network::from_spec(three_bus_chain(0.02));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int n = net.num_buses();
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd p1(n), p2(n);
    for (int j = 0; j < n; ++j) {
      p1[j] = u(rng);
      p2[j] = u(rng);
    }
    double a = u(rng), b = u(rng);
    Eigen::VectorXd lhs =
        net.voltage_profile(1.0, a * p1 + b * p2).array() - 1.0;
    Eigen::VectorXd rhs = a * (net.voltage_profile(1.0, p1).array() - 1.0) +
                          b * (net.voltage_profile(1.0, p2).array() - 1.0);
    CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
  // raising any single injection never lowers any voltage
  CHECK((net.sensitivity().array() >= 0).all());
}

TEST_CASE("feeder file round trip") {
  std::string path = "tiny_feeder.txt";
  {
    std::ofstream os(path);
    os << "# tiny test feeder\n";
    os << "bus 1 0.81 1.21 0\n";
    os << "bus 2 0.9025 1.1025 0.01\n";
    os << "branch 1 2 0.01 0.02\n";
  }
  Network net = Network::from_file(path);
  std::remove(path.c_str());
  CHECK(net.num_buses() == 2);
  CHECK(net.bus(2).v_min == doctest::Approx(0.9025));
  CHECK(net.bus(2).q_fixed == doctest::Approx(0.01));
  CHECK_THROWS(Network::from_file("does_not_exist.txt"));
}

TEST_CASE("sixty-nine bus feeder file") {
  Network net = Network::from_file(std::string(SESOFFER_SOURCE_DIR) +
                                   "/data/feeders/feeder69.txt");
  CHECK(net.num_buses() == 69);
  CHECK(net.num_branches() == 68);
  CHECK((net.sensitivity().array() >= 0).all());
}
