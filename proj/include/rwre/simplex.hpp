#pragma once

// Upper-contact membership as a small LP.
//
// A site x belongs to the upper contact set of u over a closure Z iff some
// slope s satisfies u(x) - s.x >= u(z) - s.z for all z in Z. By LP duality
// that holds iff the upper convex hull of { (z, u(z)) : z in Z } passes
// through (x, u(x)):
//
//   gap(x) = max{ sum l_z u(z) : sum l_z (z - x) = 0, sum l_z = 1, l >= 0 }
//            - u(x)
//
// and x is a member iff gap(x) <= slack. The maximization is a dense
// d+1-row simplex (Bland's rule, bounded since the objective is <= max u);
// the dual solution of the final basis is the witness slope.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rwre/lattice.hpp"

namespace rwre {

struct HullLpResult {
  double gap = 0.0;
  std::array<double, kMaxDim> witness{};  // slope s with s.(z-x) >= u(z)-u(x)-gap
  int iterations = 0;
};

namespace detail {

// Solve B y = rhs for dense m x m B via Gaussian elimination, partial pivots.
inline bool solve_dense(int m, std::array<std::array<double, 8>, 8> B, std::array<double, 8>& rhs) {
  for (int c = 0; c < m; ++c) {
    int piv = c;
    for (int r = c + 1; r < m; ++r)
      if (std::abs(B[static_cast<size_t>(r)][static_cast<size_t>(c)]) > std::abs(B[static_cast<size_t>(piv)][static_cast<size_t>(c)])) piv = r;
    if (std::abs(B[static_cast<size_t>(piv)][static_cast<size_t>(c)]) < 1e-13) return false;
    std::swap(B[static_cast<size_t>(piv)], B[static_cast<size_t>(c)]);
    std::swap(rhs[static_cast<size_t>(piv)], rhs[static_cast<size_t>(c)]);
    for (int r = c + 1; r < m; ++r) {
      const double f = B[static_cast<size_t>(r)][static_cast<size_t>(c)] / B[static_cast<size_t>(c)][static_cast<size_t>(c)];
      if (f == 0.0) continue;
      for (int k = c; k < m; ++k) B[static_cast<size_t>(r)][static_cast<size_t>(k)] -= f * B[static_cast<size_t>(c)][static_cast<size_t>(k)];
      rhs[static_cast<size_t>(r)] -= f * rhs[static_cast<size_t>(c)];
    }
  }
  for (int c = m - 1; c >= 0; --c) {
    double v = rhs[static_cast<size_t>(c)];
    for (int k = c + 1; k < m; ++k) v -= B[static_cast<size_t>(c)][static_cast<size_t>(k)] * rhs[static_cast<size_t>(k)];
    rhs[static_cast<size_t>(c)] = v / B[static_cast<size_t>(c)][static_cast<size_t>(c)];
  }
  return true;
}

}  // namespace detail

// points/values: the closure and u on it; x_idx: index of x inside points.
inline HullLpResult upper_hull_gap(const std::vector<Site>& points, const std::vector<double>& values,
                                   int d, size_t x_idx) {
  const int m = d + 1;
  const size_t n = points.size();
  const Site x = points[x_idx];
  const double ux = values[x_idx];

  double umax = values[0];
  for (double v : values) umax = std::max(umax, std::abs(v));
  const double tol_cost = 1e-11 * (1.0 + umax);
  const double tol_pivot = 1e-11;

  // column j of A is ((z_j - x), 1); artificial columns n..n+m-1 form I.
  auto col = [&](size_t j, int row) -> double {
    if (j >= n) return (static_cast<size_t>(row) == j - n) ? 1.0 : 0.0;
    if (row < d) return static_cast<double>(points[j][row] - x[row]);
    return 1.0;
  };
  auto cost = [&](size_t j) -> double { return j < n ? values[j] : 0.0; };

  // start basis: artificials for rows 0..d-1 (value 0) and the x column for
  // the last row (value 1); this is feasible with zero artificial mass.
  std::array<size_t, 8> basis{};
  for (int i = 0; i < d; ++i) basis[static_cast<size_t>(i)] = n + static_cast<size_t>(i);
  basis[static_cast<size_t>(d)] = x_idx;
  std::array<double, 8> xb{};
  xb[static_cast<size_t>(d)] = 1.0;

  HullLpResult res;
  const int iter_cap = 64 * static_cast<int>(n + 8);
  std::array<double, 8> y{};

  for (int it = 0;; ++it) {
    if (it >= iter_cap) throw std::runtime_error("upper_hull_gap: simplex iteration cap hit");
    res.iterations = it;

    // dual values from the current basis: B^T y = c_B
    std::array<std::array<double, 8>, 8> Bt{};
    std::array<double, 8> cb{};
    for (int i = 0; i < m; ++i) {
      cb[static_cast<size_t>(i)] = cost(basis[static_cast<size_t>(i)]);
      for (int r = 0; r < m; ++r) Bt[static_cast<size_t>(i)][static_cast<size_t>(r)] = col(basis[static_cast<size_t>(i)], r);
    }
    y = cb;
    if (!detail::solve_dense(m, Bt, y)) throw std::runtime_error("upper_hull_gap: singular basis");

    // Bland: first improving real column enters; artificials never re-enter
    size_t enter = n;
    for (size_t j = 0; j < n; ++j) {
      double r = cost(j);
      for (int i = 0; i < m; ++i) r -= y[static_cast<size_t>(i)] * col(j, i);
      if (r > tol_cost) {
        enter = j;
        break;
      }
    }
    if (enter == n) break;  // optimal

    // direction w = B^-1 A_enter
    std::array<std::array<double, 8>, 8> B{};
    std::array<double, 8> w{};
    for (int r = 0; r < m; ++r) {
      w[static_cast<size_t>(r)] = col(enter, r);
      for (int i = 0; i < m; ++i) B[static_cast<size_t>(r)][static_cast<size_t>(i)] = col(basis[static_cast<size_t>(i)], r);
    }
    if (!detail::solve_dense(m, B, w)) throw std::runtime_error("upper_hull_gap: singular basis (ratio)");

    // ratio test; a basic artificial with any nonzero direction component
    // leaves at ratio 0 so artificial mass can never become positive
    int leave = -1;
    double best = 0.0;
    for (int i = 0; i < m; ++i) {
      const bool artificial = basis[static_cast<size_t>(i)] >= n;
      const double wi = w[static_cast<size_t>(i)];
      double ratio;
      if (wi > tol_pivot)
        ratio = xb[static_cast<size_t>(i)] / wi;
      else if (artificial && wi < -tol_pivot)
        ratio = 0.0;
      else
        continue;
      if (leave < 0 || ratio < best - 1e-15 ||
          (std::abs(ratio - best) <= 1e-15 && basis[static_cast<size_t>(i)] < basis[static_cast<size_t>(leave)])) {
        leave = i;
        best = ratio;
      }
    }
    if (leave < 0) break;  // unbounded direction cannot happen (objective <= max u); treat as optimal

    for (int i = 0; i < m; ++i) xb[static_cast<size_t>(i)] -= best * w[static_cast<size_t>(i)];
    if (xb[static_cast<size_t>(leave)] < 0.0) xb[static_cast<size_t>(leave)] = 0.0;
    basis[static_cast<size_t>(leave)] = enter;
    xb[static_cast<size_t>(leave)] = best;
  }

  double obj = 0.0;
  for (int i = 0; i < m; ++i) obj += cost(basis[static_cast<size_t>(i)]) * xb[static_cast<size_t>(i)];
  res.gap = obj - ux;
  for (int i = 0; i < d; ++i) res.witness[static_cast<size_t>(i)] = y[static_cast<size_t>(i)];
  return res;
}

}  // namespace rwre
