#pragma once

#include <functional>
#include <vector>

#include "nnme/common.hpp"

namespace nnme {

struct Rect {
  VectorXd lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  double area() const;
  bool contains(const VectorXd& x) const;
};

// Union of axis-aligned rectangles with per-rectangle uniform grids. Exact
// duplicate points in overlaps are dropped and the union area counts the
// overlap once.
class EvalRegion {
 public:
  EvalRegion() = default;

  static EvalRegion interval(double lo, double hi, int points = 1000);
  // d-dimensional box with the given per-axis point counts
  static EvalRegion box(VectorXd lo, VectorXd hi, std::vector<int> counts);

  void add_rect(Rect rect, std::vector<int> counts);

  int dim() const;
  const std::vector<Rect>& rects() const { return rects_; }

  // endpoint-inclusive grids per rectangle, concatenated, deduplicated
  MatrixXd grid_points() const;
  double area() const;  // union area by inclusion-exclusion

 private:
  std::vector<Rect> rects_;
  std::vector<std::vector<int>> counts_;
};

using RealFn = std::function<double(const VectorXd&)>;

// Riemann approximation: mean squared difference over grid points x area.
double ise(const RealFn& f_hat, const RealFn& f_true, const EvalRegion& region);

// Same with truth supplied as values on the region grid rows.
double ise_on_grid(const RealFn& f_hat, const MatrixXd& grid,
                   const VectorXd& truth, double area);

}  // namespace nnme
