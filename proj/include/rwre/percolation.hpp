#pragma once

// Site percolation induced by small-ellipticity sites, the kappa-path
// structure around open clusters, exact coarse exit kernels, connectivity
// decay statistics, and the explicit-constant checkers built on them.
//
// A site is open iff min_i w(x, e_i) < eps0. Clusters use nearest-neighbor
// adjacency between open sites; cluster boundaries use the l-infinity
// boundary of the vertex set. All of this assumes stay-free kernels, so the
// universal floor max_i w(x, e_i) >= 1/(2d) = xi0 holds at every site.

#include <cmath>
#include <cstdint>
#include <map>
#include <queue>
#include <stdexcept>
#include <vector>

#include "rwre/elliptic.hpp"
#include "rwre/environment.hpp"
#include "rwre/stats.hpp"
#include "rwre/torus.hpp"
#include "rwre/walk.hpp"

namespace rwre {

inline double xi0_floor(int d) { return 1.0 / (2.0 * d); }

// ---------------------------------------------------------------------------
// ClusterMap
// ---------------------------------------------------------------------------

struct ClusterMap {
  struct Cluster {
    std::vector<Site> sites;     // vertex set A, row-major discovery order
    std::vector<Site> boundary;  // dA: l-infinity boundary of A, sorted
    int64_t l1_diam = 0;         // l(A) = sup_{x in A, y in dA} |x-y|_1
    bool censored = false;       // touches the box edge; diameter is a lower bound
  };

  int d = 2;
  int radius = 0;
  double eps0 = 0.0;
  std::vector<uint8_t> open;        // per box index
  std::vector<int32_t> cluster_id;  // per box index, -1 for closed
  std::vector<Cluster> clusters;

  bool in_range(const Site& x) const { return in_box(x, radius); }

  bool is_open(const Site& x) const {
    if (!in_range(x)) throw std::out_of_range("ClusterMap: site outside the labeled box");
    return open[static_cast<size_t>(box_index(d, radius, x))] != 0;
  }

  int32_t cluster_of(const Site& x) const {
    if (!in_range(x)) throw std::out_of_range("ClusterMap: site outside the labeled box");
    return cluster_id[static_cast<size_t>(box_index(d, radius, x))];
  }

  // l_x: cluster diameter for open x, 0 for closed x
  int64_t l_x(const Site& x) const {
    const int32_t id = cluster_of(x);
    return id < 0 ? 0 : clusters[static_cast<size_t>(id)].l1_diam;
  }

  bool censored_at(const Site& x) const {
    const int32_t id = cluster_of(x);
    return id >= 0 && clusters[static_cast<size_t>(id)].censored;
  }
};

inline bool site_open(const Environment& env, const Site& x, double eps0) {
  return env.kernel(x).min_axis(env.d()) < eps0;
}

inline ClusterMap build_cluster_map(const Environment& env, double eps0, int radius) {
  if (radius < 1) throw std::invalid_argument("build_cluster_map: radius must be >= 1");
  if (radius > env.radius() && env.spec().variant == EnvVariant::Custom)
    throw std::invalid_argument("build_cluster_map: box exceeds the materialized radius");
  ClusterMap cm;
  cm.d = env.d();
  cm.radius = radius;
  cm.eps0 = eps0;
  const int d = cm.d;
  const int64_t n = box_count(d, radius);
  cm.open.assign(static_cast<size_t>(n), 0);
  cm.cluster_id.assign(static_cast<size_t>(n), -1);
  for (int64_t i = 0; i < n; ++i)
    cm.open[static_cast<size_t>(i)] = site_open(env, box_site(d, radius, i), eps0) ? 1 : 0;

  // union-find over open nearest-neighbor pairs
  std::vector<int32_t> parent(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) parent[static_cast<size_t>(i)] = static_cast<int32_t>(i);
  std::function<int32_t(int32_t)> find = [&](int32_t a) {
    while (parent[static_cast<size_t>(a)] != a) {
      parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
      a = parent[static_cast<size_t>(a)];
    }
    return a;
  };
  for (int64_t i = 0; i < n; ++i) {
    if (!cm.open[static_cast<size_t>(i)]) continue;
    const Site x = box_site(d, radius, i);
    for (int a = 0; a < d; ++a) {
      const Site y = neighbor(x, a, +1);
      if (!in_box(y, radius)) continue;
      const int64_t j = box_index(d, radius, y);
      if (!cm.open[static_cast<size_t>(j)]) continue;
      const int32_t ri = find(static_cast<int32_t>(i)), rj = find(static_cast<int32_t>(j));
      if (ri != rj) parent[static_cast<size_t>(std::max(ri, rj))] = std::min(ri, rj);
    }
  }

  // assign ids in row-major order of the cluster roots
  std::unordered_map<int32_t, int32_t> root_to_id;
  for (int64_t i = 0; i < n; ++i) {
    if (!cm.open[static_cast<size_t>(i)]) continue;
    const int32_t r = find(static_cast<int32_t>(i));
    auto [it, fresh] = root_to_id.emplace(r, static_cast<int32_t>(cm.clusters.size()));
    if (fresh) cm.clusters.emplace_back();
    cm.cluster_id[static_cast<size_t>(i)] = it->second;
    cm.clusters[static_cast<size_t>(it->second)].sites.push_back(box_site(d, radius, i));
  }

  // boundaries and exact l1 diameters
  std::vector<Site> offsets;
  for (int64_t i = 0; i < box_count(d, 1); ++i) {
    const Site o = box_site(d, 1, i);
    if (norm_linf(o) == 1) offsets.push_back(o);
  }
  for (auto& cl : cm.clusters) {
    SiteSet bset;
    SiteSet aset(cl.sites);
    for (const Site& x : cl.sites) {
      if (norm_linf(x) == radius) cl.censored = true;
      for (const Site& o : offsets) {
        const Site y = x + o;
        if (!aset.contains(y)) bset.insert(y);
      }
    }
    bset.sort_lex();
    cl.boundary = bset.sites();
    int64_t diam = 0;
    for (const Site& x : cl.sites)
      for (const Site& y : cl.boundary) diam = std::max(diam, dist_l1(x, y));
    cl.l1_diam = diam;
  }
  return cm;
}

// ---------------------------------------------------------------------------
// kappa-paths and Lambda_x
// ---------------------------------------------------------------------------

struct KappaStructure {
  Site x;
  int d = 2;
  bool open = false;
  double xi0 = 0.0;
  // index kappa by bitmask m: kappa_i = +1 if bit i set, else -1
  std::vector<std::vector<Site>> paths;  // from x to y_kappa inclusive; empty when closed
  std::vector<Site> y_kappa;
  SiteSet lambda;  // union of path sites ({x} for closed x), sorted
};

inline Site kappa_of_mask(int d, int mask) {
  Site k;
  for (int i = 0; i < d; ++i) k[i] = (mask >> i) & 1 ? 1 : -1;
  return k;
}

// kappa-paths run through the open cluster and stop at the first closed site;
// the admissibility floor carries a relative slack so the guaranteed
// max-weight axis is never lost to rounding.
inline KappaStructure build_kappa(const Environment& env, const ClusterMap& cmap, const Site& x,
                                  double xi0) {
  const int d = env.d();
  KappaStructure ks;
  ks.x = x;
  ks.d = d;
  ks.xi0 = xi0;
  ks.open = cmap.is_open(x);
  if (!ks.open) {
    ks.lambda.insert(x);
    return ks;
  }
  if (cmap.censored_at(x))
    throw std::invalid_argument("build_kappa: cluster of " + rwre::to_string(x, d) +
                                " is censored by the box edge");
  const auto& cluster = cmap.clusters[static_cast<size_t>(cmap.cluster_of(x))];
  SiteSet in_cluster(cluster.sites);
  const double floor = xi0 * (1.0 - 1e-12);

  const int n_kappa = 1 << d;
  ks.paths.resize(static_cast<size_t>(n_kappa));
  ks.y_kappa.resize(static_cast<size_t>(n_kappa));
  ks.lambda.insert(x);

  for (int mask = 0; mask < n_kappa; ++mask) {
    const Site kappa = kappa_of_mask(d, mask);
    // monotone BFS: process open sites in increasing kappa-distance with
    // lexicographic order inside a layer, so parents are deterministic
    std::map<Site, Site> parent;  // open site -> predecessor
    std::map<Site, Site> terminal_parent;
    std::vector<Site> frontier{x};
    SiteSet seen;
    seen.insert(x);
    Site best_terminal;
    int64_t best_dist = -1;
    while (!frontier.empty()) {
      std::sort(frontier.begin(), frontier.end());
      std::vector<Site> next;
      for (const Site& z : frontier) {
        const SiteKernel k = env.kernel(z);
        if (k.stay != 0.0)
          throw std::invalid_argument("build_kappa: kernels must be stay-free at " + rwre::to_string(z, d));
        bool any_step = false;
        for (int a = 0; a < d; ++a) {
          if (k.axis[static_cast<size_t>(a)] < floor) continue;
          any_step = true;
          const Site t = neighbor(z, a, kappa[a]);
          if (in_cluster.contains(t)) {
            if (seen.insert(t)) {
              parent.emplace(t, z);
              next.push_back(t);
            }
          } else {
            // first closed site on the path: a terminal in dA_x; the first
            // discovery (layers processed in lex order) fixes the parent
            terminal_parent.emplace(t, z);
            const int64_t dist = dist_l1(t, x);
            if (dist > best_dist || (dist == best_dist && t < best_terminal)) {
              best_dist = dist;
              best_terminal = t;
            }
          }
        }
        if (!any_step)
          throw std::runtime_error("build_kappa: no xi0-admissible step at " + rwre::to_string(z, d) +
                                   " (malformed environment: balance guarantees one)");
      }
      frontier = std::move(next);
    }
    if (best_dist < 0)
      throw std::runtime_error("build_kappa: no kappa-path terminal found from " + rwre::to_string(x, d));
    // reconstruct x -> y_kappa
    std::vector<Site> rev{best_terminal};
    Site cur = terminal_parent.at(best_terminal);
    while (true) {
      rev.push_back(cur);
      if (cur == x) break;
      cur = parent.at(cur);
    }
    std::vector<Site> path(rev.rbegin(), rev.rend());
    for (const Site& z : path) ks.lambda.insert(z);
    ks.y_kappa[static_cast<size_t>(mask)] = best_terminal;
    ks.paths[static_cast<size_t>(mask)] = std::move(path);
  }
  ks.lambda.sort_lex();
  return ks;
}

// ---------------------------------------------------------------------------
// Coarse exit kernel a(x, .) = exit law of the walk from Lambda_x.
// ---------------------------------------------------------------------------

struct CoarseKernel {
  Site x;
  int d = 2;
  std::vector<std::pair<Site, double>> law;  // over exit sites, sorted
  double reach = 0.0;                        // h_x = max |x-y| (l2) over the support
  size_t lambda_size = 0;
};

inline CoarseKernel build_coarse_kernel(const Environment& env, const KappaStructure& ks) {
  const int d = env.d();
  const SiteSet& lambda = ks.lambda;
  const int64_t n = static_cast<int64_t>(lambda.size());

  // expected visits v(z) started from x: (I - T)^T v = e_x
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
  for (int64_t i = 0; i < n; ++i) {
    const Site z = lambda[static_cast<size_t>(i)];
    const SiteKernel k = env.kernel(z);
    if (k.stay != 0.0)
      throw std::invalid_argument("build_coarse_kernel: kernels must be stay-free");
    for (int a = 0; a < d; ++a) {
      for (int sgn : {+1, -1}) {
        const int32_t j = lambda.find(neighbor(z, a, sgn));
        if (j >= 0) A(j, i) -= k.axis[static_cast<size_t>(a)];  // transposed
      }
    }
  }
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  e(lambda.at(ks.x)) = 1.0;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  const Eigen::VectorXd v = lu.solve(e);
  if (!v.allFinite() || (A * v - e).cwiseAbs().maxCoeff() > 1e-9)
    throw std::runtime_error("build_coarse_kernel: singular absorbing system");

  std::map<Site, double> law;
  for (int64_t i = 0; i < n; ++i) {
    const Site z = lambda[static_cast<size_t>(i)];
    const SiteKernel k = env.kernel(z);
    for (int a = 0; a < d; ++a) {
      for (int sgn : {+1, -1}) {
        const Site y = neighbor(z, a, sgn);
        if (lambda.contains(y)) continue;
        law[y] += v(i) * k.axis[static_cast<size_t>(a)];
      }
    }
  }

  CoarseKernel ck;
  ck.x = ks.x;
  ck.d = d;
  ck.lambda_size = static_cast<size_t>(n);
  double mass = 0.0;
  double drift[kMaxDim] = {0, 0, 0, 0};
  for (const auto& [y, a] : law) {
    ck.law.emplace_back(y, a);
    ck.reach = std::max(ck.reach, norm_l2(y - ks.x));
    mass += a;
    for (int c = 0; c < d; ++c) drift[c] += a * (y[c] - ks.x[c]);
  }
  if (std::abs(mass - 1.0) > 1e-10)
    throw std::runtime_error("build_coarse_kernel: exit law mass " + std::to_string(mass));
  for (int c = 0; c < d; ++c)
    if (std::abs(drift[c]) > 1e-10)
      throw std::runtime_error("build_coarse_kernel: exit law violates balance");
  return ck;
}

// Coarse operator with one row per site of E. l_x values are read off the
// cluster map; censored clusters inside E raise.
inline JumpOperator coarse_operator(const Environment& env, const ClusterMap& cmap, const SiteSet& E,
                                    double xi0) {
  JumpOperator op;
  op.d = env.d();
  op.domain = std::make_shared<SiteSet>(E.sites());
  op.rows.resize(E.size());
  for (size_t i = 0; i < E.size(); ++i) {
    const KappaStructure ks = build_kappa(env, cmap, E[i], xi0);
    const CoarseKernel ck = build_coarse_kernel(env, ks);
    op.rows[i] = ck.law;
  }
  detail::finish_jump_operator(op);
  return op;
}

// ---------------------------------------------------------------------------
// Lemma "Phicontrol": for open x in Delta_N with l_x <= N,
//   Phi_N(x) <= xi0^{-l_x} sum_{y in dA_x cap Delta_N} Phi_N(y).
// ---------------------------------------------------------------------------

struct PhiControlResult {
  struct Violation {
    Site x;
    double lhs, rhs;
  };
  std::vector<Violation> violations;
  int64_t checked = 0;
  int64_t skipped_large = 0;     // l_x > N (hypothesis gate)
  int64_t skipped_censored = 0;  // cluster diameter unknown
  int64_t closed_sites = 0;
};

inline PhiControlResult phicontrol_check(const TorusEnv& tenv, const StationaryDensity& phi,
                                         const ClusterMap& cmap, double xi0) {
  if (phi.N != tenv.N() || phi.d != tenv.d())
    throw std::invalid_argument("phicontrol_check: density does not match the torus");
  if (cmap.radius < tenv.N())
    throw std::invalid_argument("phicontrol_check: cluster map does not cover Delta_N");
  PhiControlResult out;
  const int N = tenv.N();
  for_each_box_site(tenv.d(), N, [&](const Site& x) {
    if (!cmap.is_open(x)) {
      ++out.closed_sites;
      return;
    }
    if (cmap.censored_at(x)) {
      ++out.skipped_censored;
      return;
    }
    const int64_t lx = cmap.l_x(x);
    if (lx > N) {
      ++out.skipped_large;
      return;
    }
    const auto& cl = cmap.clusters[static_cast<size_t>(cmap.cluster_of(x))];
    KahanSum s;
    for (const Site& y : cl.boundary)
      if (norm_linf(y) <= N) s.add(phi.at(y));
    const double lhs = phi.at(x);
    const double rhs = std::pow(xi0, -static_cast<double>(lx)) * s.value();
    ++out.checked;
    if (lhs > rhs + 1e-9 * (1.0 + lhs)) out.violations.push_back({x, lhs, rhs});
  });
  return out;
}

// ---------------------------------------------------------------------------
// Connectivity decay q_n = P{ o -> S_n } for i.i.d. specs.
// ---------------------------------------------------------------------------

struct ConnectivityStats {
  int d = 2;
  double eps0 = 0.0;
  int M = 0;
  std::vector<int> grid;
  std::vector<WilsonCi> q;            // per grid entry
  std::vector<int64_t> hits;          // samples with o -> S_n
  struct PairCheck {
    int m = 0, n = 0;
    double lhs_log = 0.0, rhs_log = 0.0, slack3 = 0.0;
    bool pass = false;
  };
  std::vector<PairCheck> sub1;        // q_{m+n} <= |S_m| q_m q_n
  std::vector<PairCheck> sub2;        // q_{m+n} >= q_m q_n / (2d |S_{m^n}|)
  double phi_hat = 0.0;               // fitted decay rate of -log q_n
  double phi_se = 0.0;
  bool phi_positive = false;          // 95% CI excludes zero
  std::vector<double> tail_l;         // P{ l_o >= n } per grid entry
  double tail_prefactor = 0.0;        // fitted C in C n^{d-1} exp(-n phi/(2d))
  int64_t censored = 0;               // clusters cut by the scan cap
};

inline int64_t sphere_count(int d, int n) {
  if (n == 0) return 1;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < d; ++i) {
    outer *= 2 * n + 1;
    inner *= 2 * n - 1;
  }
  return outer - inner;
}

inline ConnectivityStats connectivity_stats(const EnvSpec& spec, double eps0, std::vector<int> grid,
                                            int M, uint64_t master_seed, int workers = 1) {
  spec.validate();
  if (grid.empty()) throw std::invalid_argument("connectivity_stats: empty grid");
  std::sort(grid.begin(), grid.end());
  const int d = spec.d;
  const int n_max = grid.back();
  const int scan_cap = n_max + 1;

  ConnectivityStats out;
  out.d = d;
  out.eps0 = eps0;
  out.M = M;
  out.grid = grid;

  // per-sample: max l-infinity radius reached by the closed cluster closure
  // (-1 when the origin is closed), l_o, censored flag
  std::vector<int32_t> reach(static_cast<size_t>(M), -1);
  std::vector<int64_t> l_o(static_cast<size_t>(M), 0);
  std::vector<uint8_t> cens(static_cast<size_t>(M), 0);

  parallel_for(M, workers, [&](int64_t s) {
    RngStream seeder = derive_stream(master_seed, "perc-env", static_cast<uint64_t>(s));
    const uint64_t env_seed = seeder();
    std::unordered_map<Site, uint8_t, SiteHash> open_cache;
    auto is_open = [&](const Site& z) -> bool {
      auto it = open_cache.find(z);
      if (it != open_cache.end()) return it->second != 0;
      const bool o = detail::generate_kernel(spec, env_seed, z).min_axis(d) < eps0;
      open_cache.emplace(z, o ? 1 : 0);
      return o;
    };
    const Site origin{};
    if (!is_open(origin)) return;

    // BFS of A_o capped at |z|_inf <= scan_cap
    std::vector<Site> cluster{origin};
    SiteSet seen;
    seen.insert(origin);
    bool capped = false;
    for (size_t head = 0; head < cluster.size(); ++head) {
      const Site z = cluster[head];
      for (int a = 0; a < d && !capped; ++a) {
        for (int sgn : {+1, -1}) {
          const Site y = neighbor(z, a, sgn);
          if (seen.contains(y)) continue;
          if (!is_open(y)) continue;
          if (norm_linf(y) > scan_cap) {
            capped = true;
            break;
          }
          seen.insert(y);
          cluster.push_back(y);
        }
      }
      if (capped) break;
    }
    if (capped) {
      reach[static_cast<size_t>(s)] = static_cast<int32_t>(n_max + 1);
      cens[static_cast<size_t>(s)] = 1;
      return;
    }
    // closure reach and exact diameter
    int32_t r = 0;
    SiteSet aset(cluster);
    SiteSet bset;
    std::vector<Site> offsets;
    for (int64_t i = 0; i < box_count(d, 1); ++i) {
      const Site o = box_site(d, 1, i);
      if (norm_linf(o) == 1) offsets.push_back(o);
    }
    for (const Site& z : cluster) {
      r = std::max(r, norm_linf(z));
      for (const Site& o : offsets) {
        const Site y = z + o;
        if (!aset.contains(y)) bset.insert(y);
      }
    }
    for (const Site& y : bset) r = std::max(r, norm_linf(y));
    int64_t diam = 0;
    for (const Site& zx : cluster)
      for (const Site& zy : bset) diam = std::max(diam, dist_l1(zx, zy));
    reach[static_cast<size_t>(s)] = r;
    l_o[static_cast<size_t>(s)] = diam;
  });

  // reduce
  out.q.resize(grid.size());
  out.hits.assign(grid.size(), 0);
  out.tail_l.assign(grid.size(), 0.0);
  for (int64_t s = 0; s < M; ++s) {
    out.censored += cens[static_cast<size_t>(s)];
    const bool origin_open = reach[static_cast<size_t>(s)] >= 0;
    // l_o = 0 when the origin is closed; censored clusters exceed any grid n
    const int64_t lo = !origin_open ? 0
                       : cens[static_cast<size_t>(s)] != 0 ? std::numeric_limits<int64_t>::max()
                                                           : l_o[static_cast<size_t>(s)];
    for (size_t gi = 0; gi < grid.size(); ++gi) {
      if (reach[static_cast<size_t>(s)] >= grid[gi]) ++out.hits[gi];
      if (lo >= grid[gi]) out.tail_l[gi] += 1.0;
    }
  }
  for (size_t gi = 0; gi < grid.size(); ++gi) {
    out.q[gi] = wilson_ci(out.hits[gi], M);
    out.tail_l[gi] /= static_cast<double>(M);
  }

  // delta-method SE of log q
  auto log_se = [&](size_t gi) {
    const double p = static_cast<double>(out.hits[gi]) / M;
    if (p <= 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(p * (1.0 - p) / M) / p;
  };
  auto grid_pos = [&](int n) -> int {
    for (size_t gi = 0; gi < grid.size(); ++gi)
      if (grid[gi] == n) return static_cast<int>(gi);
    return -1;
  };
  for (size_t a = 0; a < grid.size(); ++a) {
    for (size_t b = a; b < grid.size(); ++b) {
      const int m = grid[a], n = grid[b];
      const int pos = grid_pos(m + n);
      if (pos < 0) continue;
      if (out.hits[a] == 0 || out.hits[b] == 0 || out.hits[static_cast<size_t>(pos)] == 0) continue;
      const double lq_m = std::log(out.q[a].p_hat), lq_n = std::log(out.q[b].p_hat);
      const double lq_mn = std::log(out.q[static_cast<size_t>(pos)].p_hat);
      const double slack = 3.0 * std::sqrt(log_se(a) * log_se(a) + log_se(b) * log_se(b) +
                                           log_se(static_cast<size_t>(pos)) * log_se(static_cast<size_t>(pos)));
      ConnectivityStats::PairCheck c1;
      c1.m = m;
      c1.n = n;
      c1.lhs_log = lq_mn;
      c1.rhs_log = std::log(static_cast<double>(sphere_count(d, m))) + lq_m + lq_n;
      c1.slack3 = slack;
      c1.pass = c1.lhs_log <= c1.rhs_log + slack;
      out.sub1.push_back(c1);
      ConnectivityStats::PairCheck c2;
      c2.m = m;
      c2.n = n;
      c2.lhs_log = lq_mn;
      c2.rhs_log = lq_m + lq_n - std::log(2.0 * d * static_cast<double>(sphere_count(d, std::min(m, n))));
      c2.slack3 = slack;
      c2.pass = c2.lhs_log >= c2.rhs_log - slack;
      out.sub2.push_back(c2);
    }
  }

  // weighted fit of -log q_n over n
  {
    std::vector<double> xs, ys, ws;
    for (size_t gi = 0; gi < grid.size(); ++gi) {
      if (grid[gi] == 0 || out.hits[gi] == 0) continue;
      const double se = log_se(gi);
      if (!std::isfinite(se) || se == 0.0) continue;
      xs.push_back(static_cast<double>(grid[gi]));
      ys.push_back(-std::log(out.q[gi].p_hat));
      ws.push_back(1.0 / (se * se));
    }
    if (xs.size() >= 2) {
      const SlopeFit fit = wls_slope(xs, ys, ws);
      out.phi_hat = fit.slope;
      out.phi_se = fit.se;
      out.phi_positive = fit.slope - 1.96 * fit.se > 0.0;
    }
  }

  // prefactor of the tail form C n^{d-1} exp(-n phi/(2d)), least squares in log
  {
    KahanSum acc;
    int cnt = 0;
    for (size_t gi = 0; gi < grid.size(); ++gi) {
      const int n = grid[gi];
      if (n == 0 || out.tail_l[gi] <= 0.0) continue;
      const double form = (d - 1) * std::log(static_cast<double>(n)) -
                          static_cast<double>(n) * out.phi_hat / (2.0 * d);
      acc.add(std::log(out.tail_l[gi]) - form);
      ++cnt;
    }
    out.tail_prefactor = cnt > 0 ? std::exp(acc.value() / cnt) : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Explicit-constant maximum principle over the coarse kernels:
//   max_E u <= (d diam(E~) / eps0) (sum_{contact} |g(x) (2d)^{l_x}|^d)^(1/d)
//              + max_{E^b} u
// No free constant: pass/fail is exact.
// ---------------------------------------------------------------------------

struct Mp2CheckResult {
  double max_E = 0.0;
  double max_Eb = 0.0;
  double rhs_sum_term = 0.0;  // (d diam / eps0) (...)^(1/d)
  bool pass = false;
  size_t contact_size = 0;
  std::vector<Site> hypothesis_violations;
};

inline Mp2CheckResult mp2_check(const JumpOperator& op, const ClusterMap& cmap, const GridFunction& u,
                                const GridFunction& g, double eps0) {
  const int d = op.d;
  Mp2CheckResult out;
  const ContactSet cs = contact_set(u, op);
  out.contact_size = cs.members.size();

  double scale = 0.0;
  for (const Site& z : *op.closure) scale = std::max(scale, std::abs(u.at(z)));
  const double tol = 1e-9 * (1.0 + scale);

  KahanSum sum;
  for (int32_t m : cs.members) {
    const Site x = (*op.domain)[static_cast<size_t>(m)];
    const double Lu = apply_jump(op, u, static_cast<size_t>(m));
    const double gx = g.at(x);
    if (Lu < -gx - tol) out.hypothesis_violations.push_back(x);
    const double w = std::pow(2.0 * d, static_cast<double>(cmap.l_x(x)));
    sum.add(std::pow(std::abs(gx) * w, static_cast<double>(d)));
  }
  out.max_E = -std::numeric_limits<double>::infinity();
  for (const Site& x : *op.domain) out.max_E = std::max(out.max_E, u.at(x));
  out.max_Eb = -std::numeric_limits<double>::infinity();
  for (const Site& y : *op.boundary) out.max_Eb = std::max(out.max_Eb, u.at(y));
  out.rhs_sum_term = (d * op.diam_closure() / eps0) * std::pow(sum.value(), 1.0 / static_cast<double>(d));
  out.pass = out.hypothesis_violations.empty() &&
             out.max_E <= out.rhs_sum_term + out.max_Eb + tol;
  return out;
}

// ---------------------------------------------------------------------------
// Coarse mean value inequality ratio (constant unspecified in the bound):
//   max_{B_{sigma R}} u / [ (diam B~_R / (eps0 R))^{d/p}
//                           || (h_x^2 (2d)^{l_x})^{d/p} u^+ ||_{B_R, p} ].
// The weight uses the actual reach h_x (h_x = 1 at closed sites), which is
// what the proof controls; closed-only environments then reduce to the
// nearest-neighbor inequality with eps replaced by the eps0 floor.
// ---------------------------------------------------------------------------

struct Mvi2CheckResult {
  double max_inner = 0.0;
  double denom = 0.0;
  double ratio = 0.0;
  bool vacuous = false;
};

inline Mvi2CheckResult mvi2_check(const JumpOperator& op, const ClusterMap& cmap, double R, double sigma,
                                  double p, const GridFunction& u, double eps0) {
  const int d = op.d;
  if (!(sigma > 0.0 && sigma < 1.0)) throw std::invalid_argument("mvi2_check: sigma in (0,1)");
  if (!(p > 0.0 && p <= static_cast<double>(d))) throw std::invalid_argument("mvi2_check: p in (0, d]");
  Mvi2CheckResult out;
  out.max_inner = -std::numeric_limits<double>::infinity();
  const double r_in2 = sigma * R * sigma * R;
  for (const Site& x : *op.domain)
    if (static_cast<double>(norm_l2sq(x)) < r_in2) out.max_inner = std::max(out.max_inner, u.at(x));

  KahanSum s;
  bool any_pos = false;
  for (size_t i = 0; i < op.domain->size(); ++i) {
    const Site x = (*op.domain)[i];
    const double up = std::max(u.at(x), 0.0);
    if (up == 0.0) continue;
    any_pos = true;
    const double hx = op.reach[i];
    const double w = std::pow(hx * hx * std::pow(2.0 * d, static_cast<double>(cmap.l_x(x))),
                              static_cast<double>(d) / p);
    s.add(std::pow(w * up, p));
  }
  if (!any_pos) {
    out.vacuous = true;
    return out;
  }
  const double norm = std::pow(s.value() / static_cast<double>(op.domain->size()), 1.0 / p);
  const double pref = std::pow(op.diam_closure() / (eps0 * R), static_cast<double>(d) / p);
  out.denom = pref * norm;
  out.ratio = out.max_inner / out.denom;
  return out;
}

// ---------------------------------------------------------------------------
// Transience experiment in the i.i.d. setting: annealed per-annulus visit
// probabilities P{ visit o in [tau_i, tau_{i+1}) } and the frequency of the
// regularity event Omega_i = { l_x <= K^{i-1} for all x in B^{i+2} }.
// ---------------------------------------------------------------------------

struct TransienceReport {
  int K = 0;
  int i_max = 0;
  int M = 0;
  std::vector<WilsonCi> visit_prob;     // index i-1 for annulus [tau_i, tau_{i+1})
  double cumulative = 0.0;              // sum of the point estimates
  std::vector<double> omega_freq;       // same indexing; NaN when not evaluated
  std::vector<int> omega_envs;          // environments scanned per index
  int64_t truncated = 0;
};

struct TransienceOptions {
  int omega_env_samples = 20;  // environments scanned for each Omega_i frequency
  int omega_radius_cap = 96;   // skip the scan when K^{i+2} exceeds this
  int64_t step_cap = kDefaultStepCap;
};

inline TransienceReport transience_iid_experiment(const EnvSpec& spec, double eps0, int K, int i_max,
                                                  int M, uint64_t master_seed, int workers = 1,
                                                  const TransienceOptions& opt = {}) {
  spec.validate();
  if (K < 4) throw std::invalid_argument("transience_iid_experiment: K must be >= 4");
  if (i_max < 1) throw std::invalid_argument("transience_iid_experiment: i_max must be >= 1");
  if (spec.variant == EnvVariant::Layered || spec.variant == EnvVariant::Custom)
    throw std::invalid_argument("transience_iid_experiment: spec must be i.i.d. across sites");

  TransienceReport out;
  out.K = K;
  out.i_max = i_max;
  out.M = M;

  std::vector<double> radius2(static_cast<size_t>(i_max + 2));
  for (int i = 0; i <= i_max + 1; ++i) radius2[static_cast<size_t>(i)] = std::pow(static_cast<double>(K), 2.0 * i);

  // annealed walk: a fresh environment per sample
  std::vector<uint8_t> visited(static_cast<size_t>(M) * i_max, 0);
  std::vector<uint8_t> trunc(static_cast<size_t>(M), 0);
  parallel_for(M, workers, [&](int64_t s) {
    RngStream seeder = derive_stream(master_seed, "transience-env", static_cast<uint64_t>(s));
    const uint64_t env_seed = seeder();
    const Environment env = Environment::generate(spec, env_seed, 1);
    RngStream rs = derive_stream(master_seed, "transience-walk", static_cast<uint64_t>(s));
    KernelCache cache(env);
    Site x{};
    const int d = spec.d;
    int level = 0;
    int64_t t = 0;
    uint8_t* row = &visited[static_cast<size_t>(s) * i_max];
    while (t < opt.step_cap) {
      const SiteKernel& k = cache.get(x);
      if (k.stay != 0.0)
        throw std::runtime_error("transience_iid_experiment: spec must generate stay-free kernels");
      x = step_site(k, d, x, rs);
      ++t;
      const double q = static_cast<double>(norm_l2sq(x));
      while (level <= i_max && q > radius2[static_cast<size_t>(level + 1)] ) {
        ++level;
        if (level > i_max) break;
      }
      if (level > i_max) break;
      if (q == 0.0 && level >= 1) row[level - 1] = 1;
    }
    if (t >= opt.step_cap) trunc[static_cast<size_t>(s)] = 1;
  });

  out.visit_prob.resize(static_cast<size_t>(i_max));
  for (int i = 0; i < i_max; ++i) {
    int64_t hits = 0;
    for (int64_t s = 0; s < M; ++s) hits += visited[static_cast<size_t>(s) * i_max + i];
    out.visit_prob[static_cast<size_t>(i)] = wilson_ci(hits, M);
    out.cumulative += out.visit_prob[static_cast<size_t>(i)].p_hat;
  }
  for (uint8_t f : trunc) out.truncated += f;

  // Omega_i frequencies
  out.omega_freq.assign(static_cast<size_t>(i_max), std::numeric_limits<double>::quiet_NaN());
  out.omega_envs.assign(static_cast<size_t>(i_max), 0);
  const bool const_kernel = spec.variant == EnvVariant::UniformSrw;
  for (int i = 1; i <= i_max; ++i) {
    int64_t threshold = 1;
    for (int k = 0; k < i - 1; ++k) threshold *= K;
    int64_t ball = 1;
    for (int k = 0; k < i + 2; ++k) ball *= K;
    if (const_kernel) {
      // every kernel equals the uniform one: either no site is open
      // (l_x = 0 everywhere) or every site is (l_x unbounded)
      const bool open = detail::uniform_srw_kernel(spec.d).min_axis(spec.d) < eps0;
      out.omega_freq[static_cast<size_t>(i - 1)] = open ? 0.0 : 1.0;
      out.omega_envs[static_cast<size_t>(i - 1)] = opt.omega_env_samples;
      continue;
    }
    if (ball > opt.omega_radius_cap) continue;  // reported as NaN
    const int scan_radius = static_cast<int>(ball + threshold + 2);
    std::vector<uint8_t> ok(static_cast<size_t>(opt.omega_env_samples), 0);
    parallel_for(opt.omega_env_samples, workers, [&](int64_t j) {
      RngStream seeder = derive_stream(master_seed, "omega-env", static_cast<uint64_t>(j));
      const uint64_t env_seed = seeder();
      const Environment env = Environment::generate(spec, env_seed, scan_radius);
      const ClusterMap cm = build_cluster_map(env, eps0, scan_radius);
      bool good = true;
      const double ball2 = static_cast<double>(ball) * static_cast<double>(ball);
      for_each_box_site(spec.d, static_cast<int>(ball), [&](const Site& x) {
        if (!good) return;
        if (static_cast<double>(norm_l2sq(x)) > ball2) return;
        if (!cm.is_open(x)) return;
        // a censored cluster already spans past the margin, hence too large
        if (cm.censored_at(x) || cm.l_x(x) > threshold) good = false;
      });
      ok[static_cast<size_t>(j)] = good ? 1 : 0;
    });
    int64_t good_count = 0;
    for (uint8_t f : ok) good_count += f;
    out.omega_freq[static_cast<size_t>(i - 1)] =
        static_cast<double>(good_count) / static_cast<double>(opt.omega_env_samples);
    out.omega_envs[static_cast<size_t>(i - 1)] = opt.omega_env_samples;
  }
  return out;
}

}  // namespace rwre
