// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line. Tolerances are pinned here, in code. Heavier Monte Carlo settings
// than the unit suites; expect a few minutes of wall time.

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <chrono>
#include <complex>
#include <cstdio>
#include <filesystem>

#include "rwre/percolation.hpp"
#include "rwre/runner.hpp"
#include "rwre/torus.hpp"
#include "rwre/walk.hpp"

using namespace rwre;

namespace {

int workers() { return default_workers(); }

struct Verdict {
  const char* name;
  bool pass = true;
  void expect(bool ok) { pass = pass && ok; }
  ~Verdict() { std::printf("[%s] %s\n", name, pass ? "PASS" : "FAIL"); }
};

EnvSpec uniform(int d) {
  EnvSpec s;
  s.variant = EnvVariant::UniformSrw;
  s.d = d;
  return s;
}

EnvSpec iid_elliptic(int d, double shape) {
  EnvSpec s;
  s.variant = EnvVariant::IidElliptic;
  s.d = d;
  s.shape = shape;
  return s;
}

EnvSpec iid_max_jump(int d, double p_open, double eps0) {
  EnvSpec s;
  s.variant = EnvVariant::IidMaxJump;
  s.d = d;
  s.p_open = p_open;
  s.eps0 = eps0;
  return s;
}

EnvSpec trap(int d, double a) {
  EnvSpec s;
  s.variant = EnvVariant::Trap;
  s.d = d;
  s.tail_a = a;
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> dense_left_eigenvector(const TorusEnv& t) {
  const int64_t n = t.count();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (int64_t i = 0; i < n; ++i) {
    const Site x = t.site(i);
    const SiteKernel k = t.kernel(x);
    P(i, i) += k.stay;
    for (int a = 0; a < t.d(); ++a) {
      P(i, t.index(neighbor(x, a, +1))) += k.axis[static_cast<size_t>(a)];
      P(i, t.index(neighbor(x, a, -1))) += k.axis[static_cast<size_t>(a)];
    }
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(P.transpose());
  int best = 0;
  double best_gap = 1e9;
  for (int i = 0; i < n; ++i) {
    const double gap = std::abs(es.eigenvalues()(i) - std::complex<double>(1.0, 0.0));
    if (gap < best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  Eigen::VectorXd v = es.eigenvectors().col(best).real();
  if (v.sum() < 0) v = -v;
  v *= static_cast<double>(n) / v.sum();
  return std::vector<double>(v.data(), v.data() + n);
}

}  // namespace

TEST_CASE("criterion 1: exact stationary density of the uniform walk") {
  Verdict v{"criterion 1: uniform-srw Phi == 1, N in {2,4,8}, < 1 s"};
  const auto t0 = std::chrono::steady_clock::now();
  for (int N : {2, 4, 8}) {
    const Environment env = generate(uniform(2), 0, N);
    const StationaryDensity phi = solve_phi(periodize(env, N));
    for (double val : phi.phi) v.expect(std::abs(val - 1.0) <= 1e-10);
  }
  const double dt = seconds_since(t0);
  v.expect(dt < 1.0);
  CHECK(v.pass);
}

TEST_CASE("criterion 2: solver equals the dense left-eigenvector oracle") {
  Verdict v{"criterion 2: solve_phi vs dense eigensolve, 20 envs, <= 1e-9, < 10 s"};
  const auto t0 = std::chrono::steady_clock::now();
  double max_diff = 0.0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    const int N = 1 + static_cast<int>(seed % 2);
    const Environment env = generate(iid_elliptic(2, 1.5), seed, N);
    const TorusEnv t = periodize(env, N);
    const StationaryDensity phi = solve_phi(t);
    const auto oracle = dense_left_eigenvector(t);
    for (size_t i = 0; i < phi.phi.size(); ++i)
      max_diff = std::max(max_diff, std::abs(phi.phi[i] - oracle[i]));
  }
  v.expect(max_diff <= 1e-9);
  v.expect(seconds_since(t0) < 10.0);
  CHECK(v.pass);
}

TEST_CASE("criterion 3: Theorem-Phi norm sequence stays bounded over N") {
  Verdict v{"criterion 3: ||Phi eps||_{Delta_N,2} no increasing trend, max <= 2x N=4 max"};
  // shape 4 gives finite inverse-eps moments up to order 8 > 6 in d = 2
  const EnvSpec spec = iid_elliptic(2, 4.0);
  std::vector<double> xs, ys;
  double max_n4 = 0.0, max_all = 0.0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    const Environment env = generate(spec, seed, 16);
    for (int N : {4, 8, 16}) {
      SolvePhiOptions opt;
      opt.workers = workers();
      const StationaryDensity phi = solve_phi(periodize(env, N), opt);
      const PhiDiagnostics diag = phi_bound_diagnostics(periodize(env, N), phi, 6.0);
      xs.push_back(static_cast<double>(N));
      ys.push_back(diag.norm_phi_eps_beta);
      if (N == 4) max_n4 = std::max(max_n4, diag.norm_phi_eps_beta);
      max_all = std::max(max_all, diag.norm_phi_eps_beta);
    }
  }
  const double z = spearman_rho(xs, ys) * std::sqrt(static_cast<double>(xs.size()) - 1.0);
  v.expect(z < 1.645);  // one-sided 5% level
  v.expect(max_all <= 2.0 * max_n4);
  CHECK(v.pass);
}

TEST_CASE("criterion 4: Phicontrol inequality has zero violations") {
  Verdict v{"criterion 4: Phicontrol, 20 seeds, d=2, N=16, p(eps0)=0.05"};
  const int N = 16;
  const double eps0 = 0.2;
  int64_t total_checked = 0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    const Environment env = generate(iid_max_jump(2, 0.05, eps0), seed, 40);
    SolvePhiOptions opt;
    opt.workers = workers();
    const TorusEnv t = periodize(env, N);
    const StationaryDensity phi = solve_phi(t, opt);
    const ClusterMap cm = build_cluster_map(env, eps0, 40);
    const PhiControlResult r = phicontrol_check(t, phi, cm, xi0_floor(2));
    v.expect(r.violations.empty());
    total_checked += r.checked;
  }
  v.expect(total_checked > 100);  // the check must actually bite
  CHECK(v.pass);
}

TEST_CASE("criterion 5: explicit-constant maximum principle, 200 instances") {
  Verdict v{"criterion 5: mp2 exact inequality, d=2 and d=3, radius up to 12"};
  int64_t failures = 0, done = 0;
  const double xi0_2 = xi0_floor(2), xi0_3 = xi0_floor(3);
  // 130 instances in d=2 (radius 3..12), 70 in d=3 (radius 3..8, two at 10/12)
  struct Plan {
    int d;
    int radius;
  };
  std::vector<Plan> plan;
  for (int i = 0; i < 130; ++i) plan.push_back({2, 3 + i % 10});
  for (int i = 0; i < 68; ++i) plan.push_back({3, 3 + i % 6});
  plan.push_back({3, 10});
  plan.push_back({3, 12});

  uint64_t attempt = 0;
  for (const Plan& pl : plan) {
    const double eps0 = 0.2 / (pl.d - 1);  // keep eps0 <= 1/(2d)
    const EnvSpec spec = iid_max_jump(pl.d, 0.1, eps0);
    while (true) {
      const uint64_t seed = 1000 + attempt++;
      const int env_radius = pl.radius + 12;
      const Environment env = Environment::generate(spec, seed, env_radius);
      const ClusterMap cm = build_cluster_map(env, eps0, env_radius);
      const SiteSet E = *LatticeDomain::box(pl.d, pl.radius).interior;
      bool usable = true;
      for (const Site& x : E)
        if (cm.is_open(x) && cm.censored_at(x)) usable = false;
      if (!usable) continue;
      const JumpOperator op = coarse_operator(env, cm, E, pl.d == 2 ? xi0_2 : xi0_3);
      RngStream rs = derive_stream(2025, "acceptance-mp2", attempt);
      GridFunction h(op.domain);
      for (size_t k = 0; k < h.size(); ++k) h[k] = rs.uniform();
      GridFunction g(op.boundary);
      for (size_t k = 0; k < g.size(); ++k) g[k] = rs.uniform() - 0.3;
      GridFunction u = jump_dirichlet_solve(op, h, g);
      double slope[kMaxDim] = {0, 0, 0, 0};
      for (int c = 0; c < pl.d; ++c) slope[c] = 0.4 * rs.uniform() - 0.2;
      for (size_t k = 0; k < u.size(); ++k) {
        const Site& z = (*op.closure)[k];
        for (int c = 0; c < pl.d; ++c) u[k] += slope[c] * z[c];
      }
      const Mp2CheckResult r = mp2_check(op, cm, u, h, eps0);
      if (!r.pass) ++failures;
      ++done;
      break;
    }
  }
  v.expect(done == 200);
  v.expect(failures == 0);
  CHECK(v.pass);
}

TEST_CASE("criterion 6: cutoff lemma with the explicit constant, 70 instances") {
  Verdict v{"criterion 6: C(beta) = beta^2 2^(4beta+2) + 32, zero violations"};
  int64_t violations = 0;
  double max_reach = 0.0;
  // 50 nearest-neighbor instances on the uniform walk
  {
    const Environment env = generate(uniform(2), 1, 16);
    const LatticeDomain dom = LatticeDomain::ball_l2(2, 12.0);
    const JumpOperator op = nn_operator(env, *dom.interior);
    for (uint64_t i = 0; i < 50; ++i) {
      RngStream rs = derive_stream(99, "acceptance-cutoff-nn", i);
      GridFunction g(op.boundary);
      for (size_t k = 0; k < g.size(); ++k) g[k] = 2.0 * rs.uniform() - 0.5;
      const GridFunction u = jump_dirichlet_solve(op, GridFunction(op.domain), g);
      const CutoffCheckResult r = cutoff_lemma_check(op, u, 12.0, 4.0);
      violations += static_cast<int64_t>(r.violations.size());
    }
  }
  // 20 coarse-kernel instances with reaches past nearest neighbors
  {
    const double eps0 = 0.2;
    const EnvSpec spec = iid_max_jump(2, 0.2, eps0);
    int instances = 0;
    uint64_t attempt = 0;
    while (instances < 20) {
      const uint64_t seed = 500 + attempt++;
      const Environment env = Environment::generate(spec, seed, 26);
      const ClusterMap cm = build_cluster_map(env, eps0, 26);
      const LatticeDomain dom = LatticeDomain::ball_l2(2, 12.0);
      bool usable = true;
      for (const Site& x : *dom.interior)
        if (cm.is_open(x) && cm.censored_at(x)) usable = false;
      if (!usable) continue;
      const JumpOperator op = coarse_operator(env, cm, *dom.interior, xi0_floor(2));
      for (double h : op.reach) max_reach = std::max(max_reach, h);
      RngStream rs = derive_stream(99, "acceptance-cutoff-coarse", attempt);
      GridFunction g(op.boundary);
      for (size_t k = 0; k < g.size(); ++k) g[k] = 2.0 * rs.uniform() - 0.5;
      const GridFunction u = jump_dirichlet_solve(op, GridFunction(op.domain), g);
      const CutoffCheckResult r = cutoff_lemma_check(op, u, 12.0, 4.0);
      violations += static_cast<int64_t>(r.violations.size());
      ++instances;
    }
  }
  std::printf("  (coarse-kernel max reach observed: %.3f)\n", max_reach);
  v.expect(violations == 0);
  v.expect(max_reach >= 2.0);  // the coarse corpus exercised genuine jumps
  CHECK(v.pass);
}

TEST_CASE("criterion 7: exit-time bound E tau <= (r+1)^2") {
  Verdict v{"criterion 7: mean exit time <= (r+1)^2 + 3 SE, r in {1,2,4,8}; E tau(1) = 8/3"};
  const std::vector<Environment> envs = {
      generate(uniform(2), 1, 2),
      remove_laziness(generate(iid_elliptic(2, 2.0), 3, 2)),
      generate(iid_max_jump(2, 0.1, 0.2), 5, 2),
  };
  for (const Environment& env : envs) {
    for (double r : {1.0, 2.0, 4.0, 8.0}) {
      const ExitTimeSamples s = exit_time_samples(env, Site{}, r, 10000, 71, workers());
      v.expect(s.mean <= (r + 1.0) * (r + 1.0) + 3.0 * s.se);
    }
  }
  // exact oracle: linear solve on the closed unit ball, E tau = 8/3 <= 4
  SiteSet ball;
  for (const Site& x : std::vector<Site>{{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}}) ball.insert(x);
  const GridFunction t = exact_expected_exit_time(generate(uniform(2), 1, 2), ball);
  v.expect(std::abs(t.at(Site{}) - 8.0 / 3.0) <= 1e-10);
  v.expect(t.at(Site{}) <= 4.0);
  CHECK(v.pass);
}

TEST_CASE("criterion 8: generating-function exit bound on the periodized walk") {
  Verdict v{"criterion 8: E(1-16d^2/N^2)^tau <= e^-1 + 1/2 + 3 SE, N in {8,16}, d in {2,3}"};
  for (int d : {2, 3}) {
    for (int N : {8, 16}) {
      for (uint64_t seed = 1; seed <= 10; ++seed) {
        const Environment env = generate(iid_elliptic(d, 3.0), seed, N);
        const LemmaECheck c = lemma_E_check(periodize(env, N), 3000, 77 + seed, workers());
        v.expect(c.holds);
      }
    }
  }
  CHECK(v.pass);
}

TEST_CASE("criterion 9: desk-scale CLT statistics") {
  Verdict v{"criterion 9: covariances, seed agreement, trap-env contrast"};
  // uniform walk: diagonal within 5% of 1/2, off-diagonal within 3 sigma of 0
  {
    const Environment env = generate(uniform(2), 1, 4);
    const CltReport rep = clt_covariance(env, 10000, 10000, 2024, workers());
    for (int a = 0; a < 2; ++a)
      v.expect(std::abs(rep.cov[static_cast<size_t>(a)][static_cast<size_t>(a)] - 0.5) <= 0.025);
    v.expect(std::abs(rep.cov[0][1]) <= 3.0 * rep.offdiag_se[0]);
  }
  // two seeds of a moment-condition iid spec agree on the diagonal
  {
    const Environment e1 = generate(iid_elliptic(2, 4.0), 101, 256);
    const Environment e2 = generate(iid_elliptic(2, 4.0), 202, 256);
    const CltReport r1 = clt_covariance(e1, 10000, 10000, 5, workers());
    const CltReport r2 = clt_covariance(e2, 10000, 10000, 6, workers());
    for (int a = 0; a < 2; ++a) {
      const double se = std::sqrt(r1.diag_se[static_cast<size_t>(a)] * r1.diag_se[static_cast<size_t>(a)] +
                                  r2.diag_se[static_cast<size_t>(a)] * r2.diag_se[static_cast<size_t>(a)]);
      v.expect(std::abs(r1.cov[static_cast<size_t>(a)][static_cast<size_t>(a)] -
                        r2.cov[static_cast<size_t>(a)][static_cast<size_t>(a)]) <= 3.0 * se);
    }
  }
  // trap environment: no sqrt(n) stabilization between horizons
  {
    const Environment env = generate(trap(2, 0.5), 137, 3);
    const CltReport lo = clt_covariance(env, 1000, 10000, 41, workers());
    const CltReport hi = clt_covariance(env, 100000, 10000, 43, workers());
    const double d_lo = lo.cov[0][0] + lo.cov[1][1];
    const double d_hi = hi.cov[0][0] + hi.cov[1][1];
    v.expect(std::abs(d_hi - d_lo) / std::max(d_hi, d_lo) > 0.25);
  }
  CHECK(v.pass);
}

TEST_CASE("criterion 10: subcritical connectivity decay") {
  Verdict v{"criterion 10: phi_hat > 0 (CI excludes 0), sub1 within 3 sigma, BFS oracle match"};
  const EnvSpec spec = iid_max_jump(2, 0.1, 0.2);
  const ConnectivityStats st =
      connectivity_stats(spec, 0.2, {2, 4, 6, 8, 10, 12, 14, 16}, 100000, 4242, workers());
  v.expect(st.phi_positive);
  v.expect(st.phi_hat > 0.0);
  for (const auto& c : st.sub1) v.expect(c.pass);
  // labeling matches an independent BFS pass exactly on 10 seeds
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    const Environment env = generate(spec, seed, 24);
    const ClusterMap cm = build_cluster_map(env, 0.2, 24);
    // second pass: repeat the row-major BFS labeling independently
    const int64_t n = box_count(2, 24);
    std::vector<int32_t> label(static_cast<size_t>(n), -1);
    int32_t next_id = 0;
    for (int64_t i = 0; i < n; ++i) {
      const Site x0 = box_site(2, 24, i);
      if (!cm.is_open(x0) || label[static_cast<size_t>(i)] >= 0) continue;
      std::vector<Site> queue{x0};
      label[static_cast<size_t>(i)] = next_id;
      for (size_t h = 0; h < queue.size(); ++h) {
        for (int a = 0; a < 2; ++a) {
          for (int sgn : {+1, -1}) {
            const Site y = neighbor(queue[h], a, sgn);
            if (!in_box(y, 24) || !cm.is_open(y)) continue;
            const int64_t j = box_index(2, 24, y);
            if (label[static_cast<size_t>(j)] >= 0) continue;
            label[static_cast<size_t>(j)] = next_id;
            queue.push_back(y);
          }
        }
      }
      ++next_id;
    }
    for (int64_t i = 0; i < n; ++i)
      v.expect(cm.cluster_id[static_cast<size_t>(i)] == label[static_cast<size_t>(i)]);
  }
  CHECK(v.pass);
}

TEST_CASE("criterion 11: transience in d=3, recurrence-rate growth in d=2") {
  Verdict v{"criterion 11: d=3 visits ~ 1.516 (3%), geometric decay; d=2 log growth"};
  // d=3: cumulative expected visits to the origin, counting time 0
  {
    const Environment env = generate(uniform(3), 2, 1);
    const VisitReport rep = annulus_visits(env, 4, 3, 10000, 505, workers());
    v.expect(std::abs(rep.cumulative_mean - 1.5164) <= 0.03 * 1.5164);
    // per-annulus visit probabilities decrease geometrically for i <= 3
    const TransienceReport tr = transience_iid_experiment(uniform(3), 0.1, 4, 3, 10000, 606, workers());
    for (int i = 0; i + 1 < 3; ++i)
      v.expect(tr.visit_prob[static_cast<size_t>(i + 1)].p_hat <
               0.6 * tr.visit_prob[static_cast<size_t>(i)].p_hat + 3.0 *
                   (tr.visit_prob[static_cast<size_t>(i + 1)].hi - tr.visit_prob[static_cast<size_t>(i + 1)].p_hat));
  }
  // d=2: cumulative visits grow like (1/pi) log n between 1e4 and 1e6
  {
    const Environment env = generate(uniform(2), 2, 1);
    const HorizonVisits rep = visits_by_horizon(env, {10000, 1000000}, 2000, 707, workers());
    const double growth = rep.mean_visits[1] - rep.mean_visits[0];
    // exact oracle: partial sums of the return probabilities p_2k = (C(2k,k) 2^-2k)^2
    double p = 1.0, v_lo = 0.0, v_hi = 0.0;
    for (int64_t k = 0; 2 * k <= 1000000; ++k) {
      if (2 * k <= 10000) v_lo += p;
      v_hi += p;
      const double r = (2.0 * k + 1.0) / (2.0 * k + 2.0);
      p *= r * r;
    }
    const double oracle = v_hi - v_lo;  // ~ (1/pi) log(100)
    v.expect(growth >= 0.5);
    v.expect(std::abs(growth - oracle) <= 0.15 * oracle);
  }
  CHECK(v.pass);
}

TEST_CASE("criterion 12: worker-count determinism of every experiment") {
  Verdict v{"criterion 12: byte-identical outputs for every kind across worker counts"};
  namespace fs = std::filesystem;
  struct KindCfg {
    const char* kind;
    std::map<std::string, std::string> params;
  };
  const std::vector<KindCfg> kinds = {
      {"gen-env", {{"spec", "iid-elliptic shape=2"}, {"d", "2"}, {"seed", "3"}, {"radius", "6"}}},
      {"stationary", {{"spec", "iid-elliptic shape=2"}, {"d", "2"}, {"seed", "3"}, {"N", "4"}}},
      {"phi-diagnostics",
       {{"spec", "iid-elliptic shape=4"}, {"d", "2"}, {"seed", "1"}, {"N_list", "2,4"}, {"seed_count", "2"}}},
      {"mp-check", {{"count", "8"}, {"d", "2"}, {"seed", "5"}, {"radius_min", "3"}, {"radius_max", "4"}}},
      {"mvi-check", {{"count", "6"}, {"d", "2"}, {"seed", "5"}, {"R", "6"}}},
      {"cutoff-check", {{"count", "4"}, {"d", "2"}, {"seed", "5"}, {"R", "6"}, {"beta", "3"}}},
      {"perc-stats",
       {{"spec", "iid-max-jump p_open=0.1 eps0=0.2"}, {"d", "2"}, {"eps0", "0.2"}, {"grid", "1,2,3"},
        {"M", "2000"}, {"seed", "9"}}},
      {"mp2-check",
       {{"count", "6"}, {"d", "2"}, {"seed", "13"}, {"radius_min", "3"}, {"radius_max", "4"},
        {"eps0", "0.2"}, {"p_open", "0.1"}}},
      {"mvi2-check",
       {{"count", "4"}, {"d", "2"}, {"seed", "13"}, {"R", "6"}, {"eps0", "0.2"}, {"p_open", "0.1"}}},
      {"walk-clt",
       {{"spec", "iid-elliptic shape=3"}, {"d", "2"}, {"seed", "4"}, {"n", "500"}, {"M", "400"},
        {"radius", "16"}}},
      {"transience",
       {{"spec", "uniform-srw"}, {"d", "3"}, {"seed", "4"}, {"eps0", "0.1"}, {"K", "4"},
        {"i_max", "1"}, {"M", "400"}}},
      {"recurrence-contrast",
       {{"spec", "uniform-srw"}, {"d", "2"}, {"seed", "4"}, {"horizons", "1000,5000"}, {"M", "200"},
        {"radius", "8"}}},
  };
  for (const KindCfg& kc : kinds) {
    ExperimentConfig cfg;
    cfg.kind = kc.kind;
    cfg.params = kc.params;
    const fs::path d1 = fs::temp_directory_path() / (std::string("rwre_acc_w1_") + kc.kind);
    const fs::path d2 = fs::temp_directory_path() / (std::string("rwre_acc_w3_") + kc.kind);
    fs::remove_all(d1);
    fs::remove_all(d2);
    const RunManifest m1 = run_experiment(cfg, d1, 1);
    const RunManifest m2 = run_experiment(cfg, d2, 3);
    bool same = m1.outputs.size() == m2.outputs.size();
    for (size_t i = 0; same && i < m1.outputs.size(); ++i)
      same = m1.outputs[i].first == m2.outputs[i].first && m1.outputs[i].second == m2.outputs[i].second;
    if (!same) std::printf("  (determinism breach in %s)\n", kc.kind);
    v.expect(same);
    fs::remove_all(d1);
    fs::remove_all(d2);
  }
  CHECK(v.pass);
}
