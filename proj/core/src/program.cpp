#include "sesoffer/program.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace sesoffer {

int ProgramBuilder::add_var(const std::string& name, double lo, double hi,
                            double cost, double quad) {
  if (lo > hi) throw std::invalid_argument("variable " + name + ": lb > ub");
  names_.push_back(name);
  lb_.push_back(lo);
  ub_.push_back(hi);
  cost_.push_back(cost);
  quad_.push_back(quad);
  return static_cast<int>(cost_.size()) - 1;
}

static void check_row(const std::vector<int>& idx,
                      const std::vector<double>& coef, int n) {
  if (idx.size() != coef.size())
    throw std::invalid_argument("row index/coefficient size mismatch");
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n)
      throw std::invalid_argument("row references unknown variable");
    if (!std::isfinite(coef[i]))
      throw std::invalid_argument("row coefficient not finite");
  }
}

int ProgramBuilder::add_le(const std::vector<int>& idx,
                           const std::vector<double>& coef, double rhs,
                           const std::string& tag) {
  check_row(idx, coef, num_vars());
  int row = num_le();
  for (size_t i = 0; i < idx.size(); ++i)
    ub_trip_.emplace_back(row, idx[i], coef[i]);
  ub_rhs_.push_back(rhs);
  ub_tags_.push_back(tag);
  return row;
}

int ProgramBuilder::add_ge(const std::vector<int>& idx,
                           const std::vector<double>& coef, double rhs,
                           const std::string& tag) {
  std::vector<double> neg(coef);
  for (auto& v : neg) v = -v;
  return add_le(idx, neg, -rhs, tag);
}

int ProgramBuilder::add_eq(const std::vector<int>& idx,
                           const std::vector<double>& coef, double rhs,
                           const std::string& tag) {
  check_row(idx, coef, num_vars());
  int row = num_eq();
  for (size_t i = 0; i < idx.size(); ++i)
    eq_trip_.emplace_back(row, idx[i], coef[i]);
  eq_rhs_.push_back(rhs);
  eq_tags_.push_back(tag);
  return row;
}

ConvexProgram ProgramBuilder::build() const {
  ConvexProgram p;
  p.n = num_vars();
  p.cost = Eigen::Map<const Eigen::VectorXd>(cost_.data(), p.n);
  p.quad = Eigen::Map<const Eigen::VectorXd>(quad_.data(), p.n);
  p.lb = Eigen::Map<const Eigen::VectorXd>(lb_.data(), p.n);
  p.ub = Eigen::Map<const Eigen::VectorXd>(ub_.data(), p.n);
  p.a_ub.resize(num_le(), p.n);
  p.a_ub.setFromTriplets(ub_trip_.begin(), ub_trip_.end());
  p.b_ub = Eigen::Map<const Eigen::VectorXd>(ub_rhs_.data(), num_le());
  p.a_eq.resize(num_eq(), p.n);
  p.a_eq.setFromTriplets(eq_trip_.begin(), eq_trip_.end());
  p.b_eq = Eigen::Map<const Eigen::VectorXd>(eq_rhs_.data(), num_eq());
  p.offset = offset_;
  p.var_names = names_;
  p.ub_tags = ub_tags_;
  p.eq_tags = eq_tags_;
  return p;
}

namespace {

void write_value(std::ostream& os, double v) {
  if (v == kInf)
    os << "inf";
  else if (v == -kInf)
    os << "-inf";
  else
    os << v;
}

void write_vec(std::ostream& os, const char* key, const Eigen::VectorXd& v) {
  os << key << ' ' << v.size() << '\n';
  os.precision(17);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    write_value(os, v[i]);
    os << '\n';
  }
}

double read_value(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw std::runtime_error("program file: truncated value");
  return std::stod(tok);  // handles inf/-inf
}

void write_mat(std::ostream& os, const char* key, const SpMat& m) {
  os << key << ' ' << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros()
     << '\n';
  os.precision(17);
  for (int k = 0; k < m.outerSize(); ++k)
    for (SpMat::InnerIterator it(m, k); it; ++it)
      os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

Eigen::VectorXd read_vec(std::istream& is, const std::string& key) {
  std::string k;
  Eigen::Index n;
  if (!(is >> k >> n) || k != key)
    throw std::runtime_error("program file: expected section " + key);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = read_value(is);
  return v;
}

SpMat read_mat(std::istream& is, const std::string& key) {
  std::string k;
  int rows, cols;
  long nnz;
  if (!(is >> k >> rows >> cols >> nnz) || k != key)
    throw std::runtime_error("program file: expected section " + key);
  std::vector<Triplet> trips;
  trips.reserve(nnz);
  for (long i = 0; i < nnz; ++i) {
    int r, c;
    double v;
    is >> r >> c >> v;
    trips.emplace_back(r, c, v);
  }
  SpMat m(rows, cols);
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

}  // namespace

void write_program(const ConvexProgram& p, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "sesoffer-program 1\n";
  os << "n " << p.n << '\n';
  os << "offset " << std::setprecision(17) << p.offset << '\n';
  write_vec(os, "cost", p.cost);
  write_vec(os, "quad", p.quad);
  write_vec(os, "lb", p.lb);
  write_vec(os, "ub", p.ub);
  write_mat(os, "a_ub", p.a_ub);
  write_vec(os, "b_ub", p.b_ub);
  write_mat(os, "a_eq", p.a_eq);
  write_vec(os, "b_eq", p.b_eq);
}

ConvexProgram read_program(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string magic;
  int version;
  is >> magic >> version;
  if (magic != "sesoffer-program")
    throw std::runtime_error(path + ": not a program file");
  ConvexProgram p;
  std::string k;
  is >> k >> p.n;
  if (k != "n") throw std::runtime_error("program file: expected n");
  is >> k >> p.offset;
  p.cost = read_vec(is, "cost");
  p.quad = read_vec(is, "quad");
  p.lb = read_vec(is, "lb");
  p.ub = read_vec(is, "ub");
  p.a_ub = read_mat(is, "a_ub");
  p.b_ub = read_vec(is, "b_ub");
  p.a_eq = read_mat(is, "a_eq");
  p.b_eq = read_vec(is, "b_eq");
  return p;
}

}  // namespace sesoffer
