#include "nnme/serialize.hpp"

#include <cstdio>
#include <istream>
#include <ostream>

namespace nnme {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_double(std::ostream& os, double v) { os << format_double(v); }

void write_vector(std::ostream& os, const VectorXd& v) {
  os << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << format_double(v[i]);
  os << '\n';
}

void write_matrix(std::ostream& os, const MatrixXd& m) {
  os << m.rows() << ' ' << m.cols();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      os << ' ' << format_double(m(r, c));
  os << '\n';
}

void read_vector(std::istream& is, VectorXd& v) {
  Eigen::Index n = 0;
  is >> n;
  if (!is || n < 0) throw IoError("read_vector: bad size");
  v.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) is >> v[i];
  if (!is) throw IoError("read_vector: truncated data");
}

void read_matrix(std::istream& is, MatrixXd& m) {
  Eigen::Index r = 0, c = 0;
  is >> r >> c;
  if (!is || r < 0 || c < 0) throw IoError("read_matrix: bad shape");
  m.resize(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) is >> m(i, j);
  if (!is) throw IoError("read_matrix: truncated data");
}

void expect_token(std::istream& is, const std::string& token) {
  std::string got;
  is >> got;
  if (!is || got != token)
    throw IoError("expected token '" + token + "', got '" + got + "'");
}

}  // namespace nnme
