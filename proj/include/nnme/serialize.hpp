#pragma once

#include <iosfwd>
#include <string>

#include "nnme/common.hpp"

namespace nnme {

// Text serialization with 17 significant digits: doubles round-trip exactly.

void write_double(std::ostream& os, double v);
void write_vector(std::ostream& os, const VectorXd& v);
void write_matrix(std::ostream& os, const MatrixXd& m);  // row-major

void read_vector(std::istream& is, VectorXd& v);
void read_matrix(std::istream& is, MatrixXd& m);
void expect_token(std::istream& is, const std::string& token);

std::string format_double(double v);  // shortest 17-digit form, CSV friendly

}  // namespace nnme
