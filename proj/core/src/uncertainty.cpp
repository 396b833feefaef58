#include "sesoffer/uncertainty.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace sesoffer {

void PriceBox::validate() const {
  if (lambda_ex.size() != delta.size())
    throw std::invalid_argument("price box: center/width size mismatch");
  for (Eigen::Index t = 0; t < delta.size(); ++t) {
    if (delta[t] < 0)
      throw std::invalid_argument("price box: negative half-width");
    if (!std::isfinite(lambda_ex[t]) || !std::isfinite(delta[t]))
      throw std::invalid_argument("price box: non-finite entry");
  }
}

void DnBox::validate() const {
  const auto nb = static_cast<Eigen::Index>(uncertain_buses.size());
  if (p_inj_ex.rows() != nb || delta_g.rows() != nb ||
      p_inj_ex.cols() != delta_g.cols())
    throw std::invalid_argument("dn box: shape mismatch");
  if ((delta_g.array() < 0).any())
    throw std::invalid_argument("dn box: negative half-width");
  if (v_set_min > v_set_max)
    throw std::invalid_argument("dn box: v_set range inverted");
  if (num_aggregators < 0)
    throw std::invalid_argument("dn box: negative aggregator count");
}

BoxDims price_box_dims(const PriceBox& box) {
  box.validate();
  BoxDims d;
  int t_count = box.horizon();
  d.lo.resize(t_count);
  d.hi.resize(t_count);
  for (int t = 0; t < t_count; ++t) {
    d.names.push_back("lambda[" + std::to_string(t) + "]");
    d.lo[t] = box.lambda_ex[t] - box.delta[t];
    d.hi[t] = box.lambda_ex[t] + box.delta[t];
  }
  return d;
}

BoxDims dn_box_dims_at(const DnBox& box, int t) {
  box.validate();
  if (t < 0 || t >= box.p_inj_ex.cols())
    throw std::out_of_range("dn box: interval out of range");
  BoxDims d;
  std::vector<double> lo, hi;
  for (size_t i = 0; i < box.uncertain_buses.size(); ++i) {
    d.names.push_back("p_inj[" + std::to_string(box.uncertain_buses[i]) + "]");
    lo.push_back(box.p_inj_ex(i, t) - box.delta_g(i, t));
    hi.push_back(box.p_inj_ex(i, t) + box.delta_g(i, t));
  }
  d.names.push_back("v_set");
  lo.push_back(box.v_set_min);
  hi.push_back(box.v_set_max);
  for (int b = 0; b < box.num_aggregators; ++b) {
    d.names.push_back("u_award[" + std::to_string(b) + "]");
    lo.push_back(0.0);
    hi.push_back(1.0);
  }
  d.lo = Eigen::Map<Eigen::VectorXd>(lo.data(), lo.size());
  d.hi = Eigen::Map<Eigen::VectorXd>(hi.data(), hi.size());
  return d;
}

std::vector<Eigen::VectorXd> enumerate_vertices(const BoxDims& box,
                                                std::int64_t cap) {
  if (cap < 1) throw std::invalid_argument("vertex cap must be >= 1");
  int n = box.size();
  std::vector<int> wide;  // dimensions with genuine width
  for (int i = 0; i < n; ++i) {
    if (box.lo[i] > box.hi[i])
      throw std::invalid_argument("box dimension " + std::to_string(i) +
                                  " inverted");
    if (box.hi[i] > box.lo[i]) wide.push_back(i);
  }
  if (wide.size() >= 63 || (std::int64_t{1} << wide.size()) > cap)
    throw std::runtime_error(
        "vertex cap exceeded: 2^" + std::to_string(wide.size()) +
        " corners requested, cap " + std::to_string(cap));
  std::int64_t count = std::int64_t{1} << wide.size();
  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  for (std::int64_t mask = 0; mask < count; ++mask) {
    Eigen::VectorXd v = box.lo;
    for (size_t k = 0; k < wide.size(); ++k)
      if (mask & (std::int64_t{1} << k)) v[wide[k]] = box.hi[wide[k]];
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<Eigen::VectorXd> sample_interior(const BoxDims& box, int n,
                                             std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v(box.size());
    for (int d = 0; d < box.size(); ++d) {
      double u = unit(rng);
      while (u <= 0.0) u = unit(rng);  // keep samples strictly interior
      v[d] = box.lo[d] + u * (box.hi[d] - box.lo[d]);
    }
    out.push_back(std::move(v));
  }
  return out;
}

int robust_price_epigraph(ProgramBuilder& pb, const PriceBox& prices,
                          const std::vector<QuantityForm>& quantity,
                          const std::string& tag_prefix) {
  prices.validate();
  int t_count = prices.horizon();
  if (static_cast<int>(quantity.size()) != t_count)
    throw std::invalid_argument("quantity forms must match price horizon");
  int z = pb.add_var("z", -kInf, kInf);
  std::vector<int> abs_vars(t_count);
  for (int t = 0; t < t_count; ++t)
    abs_vars[t] = pb.add_var("price_abs[" + std::to_string(t) + "]", 0, kInf);
  for (int t = 0; t < t_count; ++t) {
    // a_t >= Q_t and a_t >= -Q_t
    std::vector<int> idx = quantity[t].idx;
    std::vector<double> pos = quantity[t].coef, neg = quantity[t].coef;
    for (auto& c : neg) c = -c;
    idx.push_back(abs_vars[t]);
    pos.push_back(-1.0);
    neg.push_back(-1.0);
    pb.add_le(idx, pos, 0.0, tag_prefix + ":abs+:" + std::to_string(t));
    pb.add_le(idx, neg, 0.0, tag_prefix + ":abs-:" + std::to_string(t));
  }
  // z - sum_t lambda_ex_t Q_t + sum_t delta_t a_t <= 0
  std::vector<int> idx{z};
  std::vector<double> coef{1.0};
  for (int t = 0; t < t_count; ++t) {
    for (size_t i = 0; i < quantity[t].idx.size(); ++i) {
      idx.push_back(quantity[t].idx[i]);
      coef.push_back(-prices.lambda_ex[t] * quantity[t].coef[i]);
    }
    idx.push_back(abs_vars[t]);
    coef.push_back(prices.delta[t]);
  }
  pb.add_le(idx, coef, 0.0, tag_prefix + ":bound");
  return z;
}

double min_over_price_vertices(const PriceBox& prices,
                               const Eigen::VectorXd& q) {
  auto verts = enumerate_vertices(price_box_dims(prices));
  double best = kInf;
  for (const auto& v : verts) best = std::min(best, v.dot(q));
  return best;
}

}  // namespace sesoffer
