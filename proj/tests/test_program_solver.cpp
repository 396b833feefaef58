#include <Eigen/Dense>
#include <cstdio>
#include <random>

#include "doctest.h"
#include "sesoffer/program.hpp"
#include "sesoffer/solver.hpp"

using namespace sesoffer;

TEST_CASE("one-dimensional lp, lower bound binding") {
  ProgramBuilder pb;
  pb.add_var("x", 1.0, kInf, 1.0);
  Solution s = solve(pb.build());
  REQUIRE(s.status == SolveStatus::kOptimal);
  CHECK(s.x[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(s.objective == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("one-dimensional lp, upper bound binding") {
  ProgramBuilder pb;
  pb.add_var("x", 0.0, 3.0, -1.0);
  Solution s = solve(pb.build());
  REQUIRE(s.status == SolveStatus::kOptimal);
  CHECK(s.x[0] == doctest::Approx(3.0).epsilon(1e-8));
}

TEST_CASE("diagonal qp stationarity and duals") {
  // min -4x + (1/2) 2 x^2 has the unconstrained optimum x = 2
  ProgramBuilder pb;
  pb.add_var("x", -100.0, 100.0, -4.0, 2.0);
  Solution s = solve(pb.build());
  REQUIRE(s.status == SolveStatus::kOptimal);
  CHECK(s.x[0] == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(s.kkt.dual <= 1e-8);
  CHECK(s.kkt.primal <= 1e-8);
  CHECK(s.dual_lo[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(s.dual_hi[0] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("equality-constrained qp") {
  // min x^2 + y^2 s.t. x + y = 2  ->  x = y = 1
  ProgramBuilder pb;
  int x = pb.add_var("x", -kInf, kInf, 0.0, 2.0);
  int y = pb.add_var("y", -kInf, kInf, 0.0, 2.0);
  pb.add_eq({x, y}, {1.0, 1.0}, 2.0);
  Solution s = solve(pb.build());
  REQUIRE(s.status == SolveStatus::kOptimal);
  CHECK(s.x[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(s.x[1] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("separable box lp matches the sign rule") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> cost(-5.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    ProgramBuilder pb;
    int n = 8;
    std::vector<double> c(n);
    for (int i = 0; i < n; ++i) {
      c[i] = cost(rng);
      if (std::abs(c[i]) < 0.1) c[i] = 0.1;
      pb.add_var("x" + std::to_string(i), -1.0, 2.0, c[i]);
    }
    Solution s = solve(pb.build());
    REQUIRE(s.status == SolveStatus::kOptimal);
    for (int i = 0; i < n; ++i) {
      double expect = c[i] > 0 ? -1.0 : 2.0;
      CHECK(s.x[i] == doctest::Approx(expect).epsilon(1e-6));
    }
  }
}

TEST_CASE("strong duality at optimum for a dense random lp") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    ProgramBuilder pb;
    int n = 6;
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      idx.push_back(pb.add_var("x" + std::to_string(i), 0.0, 10.0, u(rng)));
    // random coupling rows, feasible at x = 1 by construction
    for (int r = 0; r < 4; ++r) {
      std::vector<double> co(n);
      double at_ones = 0;
      for (int i = 0; i < n; ++i) {
        co[i] = u(rng);
        at_ones += co[i];
      }
      pb.add_le(idx, co, at_ones + 0.5);
    }
    ConvexProgram p = pb.build();
    Solution s = solve(p);
    REQUIRE(s.status == SolveStatus::kOptimal);
    double dual_obj = -s.dual_ub.dot(p.b_ub);
    for (int i = 0; i < n; ++i) {
      dual_obj += s.dual_lo[i] * p.lb[i];
      dual_obj -= s.dual_hi[i] * p.ub[i];
    }
    CHECK(std::abs(s.objective - dual_obj) <=
          1e-6 * (1 + std::abs(s.objective)));
  }
}

TEST_CASE("row scaling leaves the argmin unchanged") {
  ProgramBuilder pb;
  int x = pb.add_var("x", 0.0, kInf, -1.0);
  int y = pb.add_var("y", 0.0, kInf, -2.0);
  pb.add_le({x, y}, {1.0, 1.0}, 4.0);
  pb.add_le({x, y}, {1.0, 3.0}, 6.0);
  Solution a = solve(pb.build());

  ProgramBuilder pb2;
  x = pb2.add_var("x", 0.0, kInf, -1.0);
  y = pb2.add_var("y", 0.0, kInf, -2.0);
  pb2.add_le({x, y}, {50.0, 50.0}, 200.0);
  pb2.add_le({x, y}, {0.01, 0.03}, 0.06);
  Solution b = solve(pb2.build());

  REQUIRE(a.status == SolveStatus::kOptimal);
  REQUIRE(b.status == SolveStatus::kOptimal);
  CHECK((a.x - b.x).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("infeasible program is certified and names the worst row") {
  ProgramBuilder pb;
  int x = pb.add_var("x", 0.0, 1.0);
  pb.add_ge({x}, {1.0}, 3.0, "impossible_demand");
  Solution s = solve(pb.build());
  CHECK(s.status == SolveStatus::kInfeasible);
  CHECK(s.infeasibility_detail.find("impossible_demand") != std::string::npos);
}

TEST_CASE("unbounded lp is certified") {
  ProgramBuilder pb;
  pb.add_var("x", -kInf, 5.0, 1.0);  // min x, free below
  Solution s = solve(pb.build());
  CHECK(s.status == SolveStatus::kUnbounded);
}

TEST_CASE("infeasible equality system") {
  ProgramBuilder pb;
  int x = pb.add_var("x", 0.0, 10.0);
  int y = pb.add_var("y", 0.0, 10.0);
  pb.add_eq({x, y}, {1.0, 1.0}, 5.0, "sum_five");
  pb.add_eq({x, y}, {1.0, 1.0}, 7.0, "sum_seven");
  Solution s = solve(pb.build());
  CHECK(s.status == SolveStatus::kInfeasible);
}

TEST_CASE("degenerate redundant rows still solve") {
  ProgramBuilder pb;
  int x = pb.add_var("x", 0.0, kInf, -1.0);
  pb.add_le({x}, {1.0}, 2.0);
  pb.add_le({x}, {1.0}, 2.0);
  pb.add_le({x}, {2.0}, 4.0);
  Solution s = solve(pb.build());
  REQUIRE(s.status == SolveStatus::kOptimal);
  CHECK(s.x[0] == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("program text round trip preserves the solution") {
  ProgramBuilder pb;
  int x = pb.add_var("x", 0.0, kInf, -1.5);
  int y = pb.add_var("y", -2.0, 2.0, 1.0, 0.5);
  pb.add_le({x, y}, {1.0, 2.0}, 3.0);
  pb.add_eq({x, y}, {1.0, -1.0}, 0.5);
  ConvexProgram p = pb.build();
  std::string path = "roundtrip_program.txt";
  write_program(p, path);
  ConvexProgram q = read_program(path);
  std::remove(path.c_str());
  Solution a = solve(p), b = solve(q);
  REQUIRE(a.status == SolveStatus::kOptimal);
  REQUIRE(b.status == SolveStatus::kOptimal);
  CHECK((a.x - b.x).lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK(a.objective == doctest::Approx(b.objective).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// differentiable solves

TEST_CASE("scalar regularized solve: interior sensitivity is 1/eps") {
  ProgramBuilder pb;
  pb.add_var("x", -10.0, 10.0, 0.0);
  ConvexProgram p = pb.build();
  SpMat map(1, 1);
  map.insert(0, 0) = 1.0;
  Eigen::VectorXd lam(1);
  lam << 2.0;
  auto d = solve_differentiable(p, map, lam, 1.0);
  REQUIRE(d.sol.status == SolveStatus::kOptimal);
  CHECK(d.sol.x[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(d.jacobian(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("scalar regularized solve: active bound kills the sensitivity") {
  ProgramBuilder pb;
  pb.add_var("x", -10.0, 10.0, 0.0);
  ConvexProgram p = pb.build();
  SpMat map(1, 1);
  map.insert(0, 0) = 1.0;
  Eigen::VectorXd lam(1);
  lam << 20.0;
  auto d = solve_differentiable(p, map, lam, 1.0);
  REQUIRE(d.sol.status == SolveStatus::kOptimal);
  CHECK(d.sol.x[0] == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(std::abs(d.jacobian(0, 0)) <= 1e-6);
}

TEST_CASE("jacobian matches central finite differences on random qps") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double eps = 1e-2, h = 1e-5;
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 5, d = 3;
    ProgramBuilder pb;
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      idx.push_back(
          pb.add_var("x" + std::to_string(i), -2.0, 2.0, 0.3 * u(rng)));
    std::vector<double> co(n);
    for (int i = 0; i < n; ++i) co[i] = u(rng);
    pb.add_le(idx, co, 1.0);
    ConvexProgram p = pb.build();
    SpMat map(d, n);
    std::vector<Triplet> trips;
    for (int r = 0; r < d; ++r)
      for (int i = 0; i < n; ++i)
        if (std::abs(u(rng)) > 0.4) trips.emplace_back(r, i, u(rng));
    map.setFromTriplets(trips.begin(), trips.end());
    Eigen::VectorXd lam(d);
    for (int r = 0; r < d; ++r) lam[r] = u(rng);

    auto dsol = solve_differentiable(p, map, lam, eps);
    REQUIRE(dsol.sol.status == SolveStatus::kOptimal);
    for (int r = 0; r < d; ++r) {
      Eigen::VectorXd lp = lam, lm = lam;
      lp[r] += h;
      lm[r] -= h;
      auto sp = solve_differentiable(p, map, lp, eps);
      auto sm = solve_differentiable(p, map, lm, eps);
      Eigen::VectorXd fd = (sp.sol.x - sm.sol.x) / (2 * h);
      double scale = std::max(1.0, fd.lpNorm<Eigen::Infinity>());
      CHECK((fd - dsol.jacobian.col(r)).lpNorm<Eigen::Infinity>() / scale <=
            1e-4);
    }
  }
}

TEST_CASE("vanishing regularization recovers the lp optimum") {
  ProgramBuilder pb;
  int x = pb.add_var("x", 0.0, 4.0, -3.0);
  int y = pb.add_var("y", 0.0, 4.0, -1.0);
  pb.add_le({x, y}, {1.0, 1.0}, 5.0);
  ConvexProgram p = pb.build();
  Solution lp = solve(p);
  REQUIRE(lp.status == SolveStatus::kOptimal);
  SpMat map(1, 2);
  map.insert(0, 0) = 0.0;
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(1);
  for (double eps : {1e-2, 1e-3, 1e-4}) {
    auto d = solve_differentiable(p, map, lam, eps);
    REQUIRE(d.sol.status == SolveStatus::kOptimal);
    double lp_value_of_reg = p.cost.dot(d.sol.x);
    CHECK(std::abs(lp_value_of_reg - lp.objective) <=
          eps * d.sol.x.squaredNorm() + 1e-9);
  }
}
