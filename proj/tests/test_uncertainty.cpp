#include <random>
#include <set>

#include "doctest.h"
#include "sesoffer/solver.hpp"
#include "sesoffer/uncertainty.hpp"

using namespace sesoffer;

TEST_CASE("corner counts: three wide dimensions give eight vertices") {
  BoxDims box;
  box.lo.resize(3);
  box.hi.resize(3);
  box.lo << -0.1, 0.9801, 0.0;  // one uncertain bus, v_set, award fraction
  box.hi << 0.1, 1.0201, 1.0;
  auto verts = enumerate_vertices(box);
  CHECK(verts.size() == 8);
  for (const auto& v : verts)
    for (int d = 0; d < 3; ++d)
      CHECK((v[d] == box.lo[d] || v[d] == box.hi[d]));
}

TEST_CASE("price box corners are the four sign combinations") {
  PriceBox prices;
  prices.lambda_ex.resize(2);
  prices.delta.resize(2);
  prices.lambda_ex << 10.0, 10.0;
  prices.delta << 2.0, 2.0;
  auto verts = enumerate_vertices(price_box_dims(prices));
  REQUIRE(verts.size() == 4);
  std::set<std::pair<double, double>> got;
  for (const auto& v : verts) got.insert({v[0], v[1]});
  std::set<std::pair<double, double>> want{
      {8, 8}, {8, 12}, {12, 8}, {12, 12}};
  CHECK(got == want);
}

TEST_CASE("zero-width box degenerates to a single vertex") {
  PriceBox prices;
  prices.lambda_ex = Eigen::VectorXd::Constant(3, 25.0);
  prices.delta = Eigen::VectorXd::Zero(3);
  auto verts = enumerate_vertices(price_box_dims(prices));
  REQUIRE(verts.size() == 1);
  CHECK(verts[0][1] == doctest::Approx(25.0));
}

TEST_CASE("vertex cap is enforced") {
  BoxDims box;
  box.lo = Eigen::VectorXd::Zero(10);
  box.hi = Eigen::VectorXd::Ones(10);
  CHECK_THROWS_WITH_AS(enumerate_vertices(box, 1000),
                       doctest::Contains("vertex cap exceeded"),
                       std::runtime_error);
}

TEST_CASE("interior sampling is deterministic and strictly inside") {
  BoxDims box;
  box.lo.resize(2);
  box.hi.resize(2);
  box.lo << -1.0, 3.0;
  box.hi << 1.0, 3.0;  // second dimension degenerate
  auto a = sample_interior(box, 3, 7);
  auto b = sample_interior(box, 3, 7);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i] - b[i]).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(a[i][0] > -1.0);
    CHECK(a[i][0] < 1.0);
    CHECK(a[i][1] == 3.0);
  }
}

TEST_CASE("uniform samples of the unit box have means near one half") {
  BoxDims box;
  box.lo = Eigen::VectorXd::Zero(4);
  box.hi = Eigen::VectorXd::Ones(4);
  auto samples = sample_interior(box, 1000, 123);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
  for (const auto& s : samples) mean += s;
  mean /= 1000.0;
  for (int d = 0; d < 4; ++d)
    CHECK(std::abs(mean[d] - 0.5) <= 0.05);
}

namespace {

// optimal robust revenue bound for a fixed quantity profile, through the
// program route: maximize z subject to the epigraph block
double epigraph_bound(const PriceBox& prices, const Eigen::VectorXd& q) {
  ProgramBuilder pb;
  std::vector<int> q_vars;
  for (int t = 0; t < q.size(); ++t)
    q_vars.push_back(pb.add_var("q" + std::to_string(t), q[t], q[t]));
  std::vector<QuantityForm> forms(q.size());
  for (int t = 0; t < q.size(); ++t) forms[t] = {{q_vars[t]}, {1.0}};
  int z = robust_price_epigraph(pb, prices, forms);
  pb.set_cost(z, -1.0);
  Solution s = solve(pb.build());
  REQUIRE(s.status == SolveStatus::kOptimal);
  return s.x[z];
}

}  // namespace

TEST_CASE("epigraph bound: sign-mixed quantities") {
  PriceBox prices;
  prices.lambda_ex.resize(2);
  prices.delta.resize(2);
  prices.lambda_ex << 10.0, 10.0;
  prices.delta << 2.0, 2.0;
  Eigen::VectorXd q(2);
  q << 1.0, -1.0;
  CHECK(epigraph_bound(prices, q) == doctest::Approx(-4.0).epsilon(1e-9));
}

TEST_CASE("epigraph bound: zero width equals expectation") {
  PriceBox prices;
  prices.lambda_ex = Eigen::VectorXd::Constant(2, 10.0);
  prices.delta = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd q = Eigen::VectorXd::Ones(2);
  CHECK(epigraph_bound(prices, q) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("epigraph bound equals the vertex-enumeration minimum") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_real_distribution<double> w(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    int t_count = 4;
    PriceBox prices;
    prices.lambda_ex.resize(t_count);
    prices.delta.resize(t_count);
    Eigen::VectorXd q(t_count);
    for (int t = 0; t < t_count; ++t) {
      prices.lambda_ex[t] = 10.0 + 3.0 * u(rng);
      prices.delta[t] = w(rng);
      q[t] = u(rng);
    }
    double via_program = epigraph_bound(prices, q);
    double via_vertices = min_over_price_vertices(prices, q);
    CHECK(std::abs(via_program - via_vertices) <= 1e-9 * (1 + std::abs(via_vertices)));
  }
}

TEST_CASE("per-interval network box dimensions") {
  DnBox box;
  box.uncertain_buses = {5};
  box.p_inj_ex = Eigen::MatrixXd::Constant(1, 2, 0.05);
  box.delta_g = Eigen::MatrixXd::Constant(1, 2, 0.01);
  box.v_set_min = 0.9801;
  box.v_set_max = 1.0201;
  box.num_aggregators = 1;
  BoxDims dims = dn_box_dims_at(box, 1);
  REQUIRE(dims.size() == 3);
  CHECK(dims.lo[0] == doctest::Approx(0.04));
  CHECK(dims.hi[0] == doctest::Approx(0.06));
  CHECK(dims.lo[2] == 0.0);
  CHECK(dims.hi[2] == 1.0);
  CHECK(enumerate_vertices(dims).size() == 8);
  CHECK_THROWS_AS(dn_box_dims_at(box, 2), std::out_of_range);
}
