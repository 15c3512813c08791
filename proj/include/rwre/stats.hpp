#pragma once

// Small statistics toolbox shared by the Monte Carlo experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace rwre {

// Neumaier compensated summation; deterministic given a fixed visit order.
class KahanSum {
 public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;   // standard error of the mean
  double var = 0.0;  // unbiased sample variance
  int64_t n = 0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe r;
  r.n = static_cast<int64_t>(xs.size());
  if (r.n == 0) return r;
  KahanSum s;
  for (double x : xs) s.add(x);
  r.mean = s.value() / static_cast<double>(r.n);
  if (r.n > 1) {
    KahanSum q;
    for (double x : xs) q.add((x - r.mean) * (x - r.mean));
    r.var = q.value() / static_cast<double>(r.n - 1);
    r.se = std::sqrt(r.var / static_cast<double>(r.n));
  }
  return r;
}

struct WilsonCi {
  double p_hat = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Wilson score interval at z sigmas (z = 1.96 for 95%).
inline WilsonCi wilson_ci(int64_t successes, int64_t n, double z = 1.96) {
  WilsonCi ci;
  if (n <= 0) return ci;
  const double p = static_cast<double>(successes) / static_cast<double>(n);
  ci.p_hat = p;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / static_cast<double>(n);
  const double center = p + z2 / (2.0 * static_cast<double>(n));
  const double half = z * std::sqrt(p * (1.0 - p) / static_cast<double>(n) +
                                    z2 / (4.0 * static_cast<double>(n) * static_cast<double>(n)));
  ci.lo = std::max(0.0, (center - half) / denom);
  ci.hi = std::min(1.0, (center + half) / denom);
  return ci;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Kolmogorov-Smirnov distance of a sample against N(0, sigma^2).
inline double ks_distance_normal(std::vector<double> xs, double sigma) {
  if (xs.empty() || sigma <= 0.0) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double f = normal_cdf(xs[i] / sigma);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

namespace detail {
inline std::vector<double> midranks(const std::vector<double>& xs) {
  const size_t n = xs.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}
}  // namespace detail

// Spearman rank correlation with midranks for ties; z = rho * sqrt(n-1)
// is approximately standard normal under independence.
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) throw std::invalid_argument("spearman_rho: need matched samples, n >= 3");
  const auto rx = detail::midranks(x);
  const auto ry = detail::midranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// Weighted least squares of y on x: returns {slope, slope standard error}.
struct SlopeFit {
  double slope = 0.0;
  double se = 0.0;
  double intercept = 0.0;
};

inline SlopeFit wls_slope(const std::vector<double>& x, const std::vector<double>& y,
                          const std::vector<double>& w) {
  if (x.size() != y.size() || x.size() != w.size() || x.size() < 2)
    throw std::invalid_argument("wls_slope: need n >= 2 matched points");
  double sw = 0, swx = 0, swy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    swx += w[i] * x[i];
    swy += w[i] * y[i];
  }
  const double xbar = swx / sw, ybar = swy / sw;
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - xbar) * (x[i] - xbar);
    sxy += w[i] * (x[i] - xbar) * (y[i] - ybar);
  }
  SlopeFit f;
  if (sxx == 0) throw std::invalid_argument("wls_slope: degenerate x");
  f.slope = sxy / sxx;
  f.intercept = ybar - f.slope * xbar;
  // with w_i = 1/var_i the slope variance is 1/sxx
  f.se = std::sqrt(1.0 / sxx);
  return f;
}

}  // namespace rwre
