#pragma once

// Quenched walk simulation and the stopping-time experiments: l2 exit times
// against the (r+1)^2 bound, the periodized-environment generating-function
// bound, annulus visit counts, horizon visit counts and CLT statistics.
//
// Every Monte Carlo routine draws sample i from its own counter-based stream
// and reduces stored per-sample results in index order, so outputs do not
// depend on the worker count.

#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "rwre/environment.hpp"
#include "rwre/grid.hpp"
#include "rwre/linsolve.hpp"
#include "rwre/parallel.hpp"
#include "rwre/rng.hpp"
#include "rwre/stats.hpp"
#include "rwre/torus.hpp"

namespace rwre {

inline constexpr int64_t kDefaultStepCap = 100000000;  // 1e8

// One quenched step. The cumulative layout is (stay, +e1, -e1, +e2, -e2, ...);
// leftover rounding mass (<= 1e-12) falls to the last branch.
inline Site step_site(const SiteKernel& k, int d, const Site& x, RngStream& rs) {
  double u = rs.uniform();
  u -= k.stay;
  if (u < 0.0) return x;
  for (int a = 0; a < d; ++a) {
    const double w = k.axis[static_cast<size_t>(a)];
    u -= w;
    if (u < 0.0) return neighbor(x, a, +1);
    u -= w;
    if (u < 0.0) return neighbor(x, a, -1);
  }
  return neighbor(x, d - 1, -1);
}

// Memoizes lazily generated kernels for a single walk; recurrent walks
// revisit sites often enough that this pays for itself outside the box.
// Translation-invariant variants skip the map entirely.
class KernelCache {
 public:
  explicit KernelCache(const Environment& env) : env_(&env) {
    if (env.spec().variant == EnvVariant::UniformSrw) {
      constant_ = env.kernel(Site{});
      has_constant_ = true;
    }
  }

  const SiteKernel& get(const Site& x) {
    if (has_constant_) return constant_;
    auto it = cache_.find(x);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(x, env_->kernel(x)).first->second;
  }

 private:
  const Environment* env_;
  std::unordered_map<Site, SiteKernel, SiteHash> cache_;
  SiteKernel constant_;
  bool has_constant_ = false;
};

// ---------------------------------------------------------------------------
// sample_path
// ---------------------------------------------------------------------------

struct WalkPath {
  Site start;
  std::vector<int8_t> steps;  // 0 = hold, +k / -k = +/- e_k (1-based axis)

  size_t length() const { return steps.size(); }

  std::vector<Site> sites() const {
    std::vector<Site> out;
    out.reserve(steps.size() + 1);
    Site x = start;
    out.push_back(x);
    for (int8_t s : steps) {
      if (s != 0) x[std::abs(s) - 1] += (s > 0 ? 1 : -1);
      out.push_back(x);
    }
    return out;
  }
};

inline WalkPath sample_path(const Environment& env, const Site& x0, int64_t n, RngStream rs) {
  if (n < 0) throw std::invalid_argument("sample_path: negative length");
  WalkPath p;
  p.start = x0;
  p.steps.reserve(static_cast<size_t>(n));
  const int d = env.d();
  Site x = x0;
  for (int64_t t = 0; t < n; ++t) {
    const Site y = step_site(env.kernel(x), d, x, rs);
    int8_t code = 0;
    for (int a = 0; a < d; ++a) {
      if (y[a] != x[a]) {
        code = static_cast<int8_t>((a + 1) * (y[a] > x[a] ? 1 : -1));
        break;
      }
    }
    p.steps.push_back(code);
    x = y;
  }
  return p;
}

// ---------------------------------------------------------------------------
// exit times tau(r) = inf{ n : |X_n - x0| > r } (l2)
// ---------------------------------------------------------------------------

struct ExitTimeSamples {
  std::vector<int64_t> tau;
  double mean = 0.0;
  double se = 0.0;
  double r = 0.0;
  int64_t truncated = 0;  // samples stopped by the step cap (kept, flagged)
};

inline ExitTimeSamples exit_time_samples(const Environment& env, const Site& x0, double r, int M,
                                         uint64_t master_seed, int workers = 1,
                                         int64_t step_cap = kDefaultStepCap) {
  if (M <= 0) throw std::invalid_argument("exit_time_samples: M must be positive");
  ExitTimeSamples out;
  out.r = r;
  out.tau.assign(static_cast<size_t>(M), 0);
  std::vector<uint8_t> trunc(static_cast<size_t>(M), 0);
  const int d = env.d();
  const double r2 = r * r;
  parallel_for(M, workers, [&](int64_t i) {
    RngStream rs = derive_stream(master_seed, "exit-time", static_cast<uint64_t>(i));
    Site x = x0;
    int64_t t = 0;
    while (t < step_cap) {
      const SiteKernel k = env.kernel(x);
      if (k.stay != 0.0)
        throw std::runtime_error("exit_time_samples: nonzero holding probability at " +
                                 rwre::to_string(x, d) + " (remove laziness first)");
      x = step_site(k, d, x, rs);
      ++t;
      if (static_cast<double>(norm_l2sq(x - x0)) > r2) break;
    }
    out.tau[static_cast<size_t>(i)] = t;
    trunc[static_cast<size_t>(i)] = (t >= step_cap) ? 1 : 0;
  });
  std::vector<double> vals(out.tau.begin(), out.tau.end());
  const MeanSe ms = mean_se(vals);
  out.mean = ms.mean;
  out.se = ms.se;
  for (uint8_t f : trunc) out.truncated += f;
  return out;
}

// Exact E^x[exit time] on a finite domain via the absorbing-chain system
// (I - P_EE) t = 1; the walk's martingale structure is the test-side oracle.
inline GridFunction exact_expected_exit_time(const Environment& env, const SiteSet& domain) {
  const int d = env.d();
  const int64_t n = static_cast<int64_t>(domain.size());
  if (n == 0) throw std::invalid_argument("exact_expected_exit_time: empty domain");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(n) * (2 * d + 1));
  for (int64_t i = 0; i < n; ++i) {
    const Site x = domain[static_cast<size_t>(i)];
    const SiteKernel k = env.kernel(x);
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0 - k.stay);
    for (int a = 0; a < d; ++a) {
      for (int sgn : {+1, -1}) {
        const int32_t j = domain.find(neighbor(x, a, sgn));
        if (j >= 0) trip.emplace_back(static_cast<int>(i), j, -k.axis[static_cast<size_t>(a)]);
      }
    }
  }
  const std::vector<double> rhs(static_cast<size_t>(n), 1.0);
  std::vector<double> t = solve_sparse(n, trip, rhs, 1e-10, "exact_expected_exit_time");
  GridFunction f(std::make_shared<SiteSet>(domain.sites()));
  f.values() = std::move(t);
  return f;
}

// ---------------------------------------------------------------------------
// Lemma-E style bound: estimate E (1 - c/N^2)^tau with c = 16 d^2 over the
// periodized environment, tau the l-infinity exit over distance N from a
// uniformly shifted start.
// ---------------------------------------------------------------------------

struct LemmaECheck {
  int d = 0;
  int N = 0;
  double c = 0.0;
  double factor = 0.0;  // 1 - c/N^2, clamped at 0
  bool clamped = false;
  double estimate = 0.0;
  double se = 0.0;
  double bound = 0.0;  // exp(-1) + 1/2
  bool holds = false;
  bool counted = false;  // clamped (tiny-N) runs are reported but not scored
  int64_t samples = 0;
};

inline LemmaECheck lemma_E_check(const TorusEnv& tenv, int M, uint64_t master_seed, int workers = 1,
                                 int64_t step_cap = kDefaultStepCap) {
  LemmaECheck out;
  const int d = tenv.d();
  const int N = tenv.N();
  out.d = d;
  out.N = N;
  out.c = 16.0 * d * d;
  out.factor = std::max(0.0, 1.0 - out.c / (static_cast<double>(N) * N));
  out.clamped = out.c >= static_cast<double>(N) * N;
  out.bound = std::exp(-1.0) + 0.5;
  out.samples = M;

  std::vector<double> vals(static_cast<size_t>(M), 0.0);
  const int64_t count = tenv.count();
  parallel_for(M, workers, [&](int64_t i) {
    RngStream rs = derive_stream(master_seed, "lemma-e", static_cast<uint64_t>(i));
    const Site x0 = tenv.site(static_cast<int64_t>(rs.below(static_cast<uint64_t>(count))));
    Site x = x0;
    int64_t t = 0;
    while (t < step_cap) {
      x = step_site(tenv.kernel(x), d, x, rs);
      ++t;
      if (norm_linf(x - x0) > N) break;
    }
    vals[static_cast<size_t>(i)] = out.factor == 0.0 ? 0.0 : std::pow(out.factor, static_cast<double>(t));
  });
  const MeanSe ms = mean_se(vals);
  out.estimate = ms.mean;
  out.se = ms.se;
  out.holds = out.estimate <= out.bound + 3.0 * out.se;
  out.counted = !out.clamped;
  return out;
}

// ---------------------------------------------------------------------------
// annulus visit counts: tau_i = inf{ n : |X_n| > K^i } (l2), visits to the
// origin inside [tau_i, tau_{i+1})
// ---------------------------------------------------------------------------

struct VisitReport {
  int K = 0;
  int i_max = 0;
  int M = 0;
  // slot 0: visits during [0, tau_1) counting time 0; slot i: [tau_i, tau_{i+1})
  std::vector<double> mean_visits;
  std::vector<double> se;
  double cumulative_mean = 0.0;
  double cumulative_se = 0.0;
  int64_t truncated_samples = 0;
};

inline VisitReport annulus_visits(const Environment& env, int K, int i_max, int M, uint64_t master_seed,
                                  int workers = 1, int64_t step_cap = kDefaultStepCap) {
  if (K < 3) throw std::invalid_argument("annulus_visits: K must be >= 3");
  if (i_max < 0) throw std::invalid_argument("annulus_visits: i_max must be >= 0");
  VisitReport out;
  out.K = K;
  out.i_max = i_max;
  out.M = M;
  const int d = env.d();
  const int slots = i_max + 1;
  std::vector<int64_t> counts(static_cast<size_t>(M) * slots, 0);
  std::vector<uint8_t> trunc(static_cast<size_t>(M), 0);

  std::vector<int64_t> radius2(static_cast<size_t>(i_max + 2));
  for (int i = 0; i <= i_max + 1; ++i) {
    int64_t r = 1;
    for (int k = 0; k < i; ++k) r *= K;
    radius2[static_cast<size_t>(i)] = r * r;
  }

  parallel_for(M, workers, [&](int64_t s) {
    RngStream rs = derive_stream(master_seed, "annulus-visits", static_cast<uint64_t>(s));
    KernelCache cache(env);
    Site x{};  // origin
    int64_t* row = &counts[static_cast<size_t>(s) * slots];
    int level = 0;  // walking inside radius K^(level+1), counting slot `level`
    row[0] = 1;     // time 0 visit
    int64_t t = 0;
    while (t < step_cap) {
      const SiteKernel& k = cache.get(x);
      if (k.stay != 0.0)
        throw std::runtime_error("annulus_visits: nonzero holding probability (remove laziness first)");
      x = step_site(k, d, x, rs);
      ++t;
      const int64_t q = norm_l2sq(x);
      while (q > radius2[static_cast<size_t>(level + 1)]) {
        ++level;
        if (level > i_max) break;
      }
      if (level > i_max) break;
      if (q == 0) ++row[level];
    }
    if (t >= step_cap) trunc[static_cast<size_t>(s)] = 1;
  });

  out.mean_visits.resize(static_cast<size_t>(slots));
  out.se.resize(static_cast<size_t>(slots));
  std::vector<double> tmp(static_cast<size_t>(M));
  for (int j = 0; j < slots; ++j) {
    for (int64_t s = 0; s < M; ++s) tmp[static_cast<size_t>(s)] = static_cast<double>(counts[static_cast<size_t>(s) * slots + j]);
    const MeanSe ms = mean_se(tmp);
    out.mean_visits[static_cast<size_t>(j)] = ms.mean;
    out.se[static_cast<size_t>(j)] = ms.se;
  }
  for (int64_t s = 0; s < M; ++s) {
    int64_t tot = 0;
    for (int j = 0; j < slots; ++j) tot += counts[static_cast<size_t>(s) * slots + j];
    tmp[static_cast<size_t>(s)] = static_cast<double>(tot);
  }
  const MeanSe ms = mean_se(tmp);
  out.cumulative_mean = ms.mean;
  out.cumulative_se = ms.se;
  for (uint8_t f : trunc) out.truncated_samples += f;
  return out;
}

// Mean number of visits to the origin by each step horizon (horizons sorted).
struct HorizonVisits {
  std::vector<int64_t> horizons;
  std::vector<double> mean_visits;
  std::vector<double> se;
  int M = 0;
};

inline HorizonVisits visits_by_horizon(const Environment& env, std::vector<int64_t> horizons, int M,
                                       uint64_t master_seed, int workers = 1) {
  if (horizons.empty()) throw std::invalid_argument("visits_by_horizon: no horizons");
  std::sort(horizons.begin(), horizons.end());
  HorizonVisits out;
  out.horizons = horizons;
  out.M = M;
  const int d = env.d();
  const size_t H = horizons.size();
  std::vector<int64_t> counts(static_cast<size_t>(M) * H, 0);
  parallel_for(M, workers, [&](int64_t s) {
    RngStream rs = derive_stream(master_seed, "horizon-visits", static_cast<uint64_t>(s));
    KernelCache cache(env);
    Site x{};
    int64_t visits = 1;  // time 0
    size_t h = 0;
    const int64_t n_max = horizons.back();
    for (int64_t t = 1; t <= n_max; ++t) {
      x = step_site(cache.get(x), d, x, rs);
      if (norm_l2sq(x) == 0) ++visits;
      while (h < H && t == horizons[h]) {
        counts[static_cast<size_t>(s) * H + h] = visits;
        ++h;
      }
    }
    while (h < H) {
      counts[static_cast<size_t>(s) * H + h] = visits;
      ++h;
    }
  });
  out.mean_visits.resize(H);
  out.se.resize(H);
  std::vector<double> tmp(static_cast<size_t>(M));
  for (size_t j = 0; j < H; ++j) {
    for (int64_t s = 0; s < M; ++s) tmp[static_cast<size_t>(s)] = static_cast<double>(counts[static_cast<size_t>(s) * H + j]);
    const MeanSe ms = mean_se(tmp);
    out.mean_visits[j] = ms.mean;
    out.se[j] = ms.se;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CLT statistics: covariance of X_n / sqrt(n) plus a per-coordinate
// KS diagnostic against the variance-matched centered normal.
// ---------------------------------------------------------------------------

struct CltReport {
  int d = 0;
  int64_t n = 0;
  int M = 0;
  std::array<std::array<double, kMaxDim>, kMaxDim> cov{};  // sample covariance of X_n/sqrt(n)
  std::array<double, kMaxDim> diag_se{};                   // moment-based SE of cov[i][i]
  std::array<double, kMaxDim> offdiag_se{};                // SE of cov[i][j] pooled per row (max over j)
  std::array<double, kMaxDim> mean{};                      // coordinate means of X_n/sqrt(n)
  std::array<double, kMaxDim> mean_se{};
  std::array<double, kMaxDim> ks{};                        // KS distance vs N(0, cov[i][i])
};

inline CltReport clt_covariance(const Environment& env, int64_t n, int M, uint64_t master_seed,
                                int workers = 1) {
  if (n <= 0 || M <= 1) throw std::invalid_argument("clt_covariance: need n >= 1, M >= 2");
  CltReport rep;
  const int d = env.d();
  rep.d = d;
  rep.n = n;
  rep.M = M;
  std::vector<double> end(static_cast<size_t>(M) * d, 0.0);
  parallel_for(M, workers, [&](int64_t s) {
    RngStream rs = derive_stream(master_seed, "clt", static_cast<uint64_t>(s));
    KernelCache cache(env);
    Site x{};
    for (int64_t t = 0; t < n; ++t) x = step_site(cache.get(x), d, x, rs);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (int a = 0; a < d; ++a) end[static_cast<size_t>(s) * d + a] = scale * x[a];
  });

  for (int a = 0; a < d; ++a) {
    KahanSum s;
    for (int64_t i = 0; i < M; ++i) s.add(end[static_cast<size_t>(i) * d + a]);
    rep.mean[static_cast<size_t>(a)] = s.value() / M;
  }
  for (int a = 0; a < d; ++a) {
    for (int b = a; b < d; ++b) {
      KahanSum s;
      for (int64_t i = 0; i < M; ++i)
        s.add((end[static_cast<size_t>(i) * d + a] - rep.mean[static_cast<size_t>(a)]) *
              (end[static_cast<size_t>(i) * d + b] - rep.mean[static_cast<size_t>(b)]));
      const double c = s.value() / (M - 1);
      rep.cov[static_cast<size_t>(a)][static_cast<size_t>(b)] = c;
      rep.cov[static_cast<size_t>(b)][static_cast<size_t>(a)] = c;
    }
  }
  std::vector<double> coord(static_cast<size_t>(M));
  for (int a = 0; a < d; ++a) {
    for (int64_t i = 0; i < M; ++i) coord[static_cast<size_t>(i)] = end[static_cast<size_t>(i) * d + a] - rep.mean[static_cast<size_t>(a)];
    // SE of the variance estimate from the fourth moment
    KahanSum m4;
    for (double v : coord) m4.add(v * v * v * v);
    const double var = rep.cov[static_cast<size_t>(a)][static_cast<size_t>(a)];
    const double v4 = m4.value() / M;
    rep.diag_se[static_cast<size_t>(a)] = std::sqrt(std::max(0.0, v4 - var * var) / M);
    rep.mean_se[static_cast<size_t>(a)] = std::sqrt(var / M);
    rep.ks[static_cast<size_t>(a)] = ks_distance_normal(coord, std::sqrt(std::max(var, 1e-300)));
    // pooled SE for off-diagonal entries of row a
    double se_max = 0.0;
    for (int b = 0; b < d; ++b) {
      if (b == a) continue;
      KahanSum s2;
      for (int64_t i = 0; i < M; ++i) {
        const double va = end[static_cast<size_t>(i) * d + a] - rep.mean[static_cast<size_t>(a)];
        const double vb = end[static_cast<size_t>(i) * d + b] - rep.mean[static_cast<size_t>(b)];
        const double prod = va * vb;
        s2.add(prod * prod);
      }
      const double cab = rep.cov[static_cast<size_t>(a)][static_cast<size_t>(b)];
      se_max = std::max(se_max, std::sqrt(std::max(0.0, s2.value() / M - cab * cab) / M));
    }
    rep.offdiag_se[static_cast<size_t>(a)] = se_max;
  }
  return rep;
}

}  // namespace rwre
