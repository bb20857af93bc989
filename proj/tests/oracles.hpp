// Test-only independent oracles. Nothing in here may call back into the
// implementation path it is used to check.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracles {

// Central finite differences of a scalar-valued function of a flat buffer.
inline std::vector<double> fd_gradient(
    const std::function<double(const std::vector<double>&)>& fn,
    const std::vector<double>& x, double h = 1e-4) {
  std::vector<double> g(x.size());
  std::vector<double> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    double up = fn(probe);
    probe[i] = x[i] - h;
    double dn = fn(probe);
    probe[i] = x[i];
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

// Relative error with a unit floor, the convention the gradient checks use.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_rel_err(const std::vector<double>& a,
                          const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

// Literal four-step CrossMax, straight off the aggregation definition:
// subtract row maxima, subtract column maxima, sort columns descending,
// emit row k.
inline std::vector<double> crossmax_reference(
    const std::vector<std::vector<double>>& z, size_t k) {
  const size_t rows = z.size();
  const size_t cols = z[0].size();
  std::vector<std::vector<double>> m = z;
  for (size_t r = 0; r < rows; ++r) {
    double rmax = m[r][0];
    for (size_t c = 1; c < cols; ++c) rmax = std::max(rmax, m[r][c]);
    for (size_t c = 0; c < cols; ++c) m[r][c] -= rmax;
  }
  for (size_t c = 0; c < cols; ++c) {
    double cmax = m[0][c];
    for (size_t r = 1; r < rows; ++r) cmax = std::max(cmax, m[r][c]);
    for (size_t r = 0; r < rows; ++r) m[r][c] -= cmax;
  }
  std::vector<double> out(cols);
  std::vector<double> col(rows);
  for (size_t c = 0; c < cols; ++c) {
    for (size_t r = 0; r < rows; ++r) col[r] = m[r][c];
    std::sort(col.begin(), col.end(), std::greater<double>());
    out[c] = col[k];
  }
  return out;
}

// Closed-form softmax cross-entropy for a logit row.
inline double cross_entropy_reference(const std::vector<double>& z,
                                      size_t y) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s) - z[y];
}

}  // namespace oracles
