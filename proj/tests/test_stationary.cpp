#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <complex>

#include "rwre/environment.hpp"
#include "rwre/torus.hpp"

using namespace rwre;

namespace {

EnvSpec uniform(int d) {
  EnvSpec s;
  s.variant = EnvVariant::UniformSrw;
  s.d = d;
  return s;
}

EnvSpec iid_elliptic(int d, double shape, double stay_shape = 0.0) {
  EnvSpec s;
  s.variant = EnvVariant::IidElliptic;
  s.d = d;
  s.shape = shape;
  s.stay_shape = stay_shape;
  return s;
}

// Independent oracle: dense left eigenvector of the torus transition matrix
// at eigenvalue 1, normalized to mean 1.
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
  REQUIRE(best_gap < 1e-8);
  Eigen::VectorXd v = es.eigenvectors().col(best).real();
  if (v.sum() < 0) v = -v;
  v *= static_cast<double>(n) / v.sum();
  return std::vector<double>(v.data(), v.data() + n);
}

void check_density_invariants(const StationaryDensity& phi, const TorusEnv& t) {
  KahanSum s;
  for (double v : phi.phi) {
    REQUIRE(v >= 0.0);
    s.add(v);
  }
  CHECK(std::abs(s.value() / static_cast<double>(t.count()) - 1.0) <= 1e-10);
  CHECK(phi.residual <= 1e-10);
}

}  // namespace

TEST_CASE("periodize wraps lookups with period 2N+1") {
  const Environment env = generate(iid_elliptic(2, 3.0), 44, 8);
  const TorusEnv t = periodize(env, 3);
  CHECK(t.count() == 49);
  RngStream rs(7);
  for (int i = 0; i < 100; ++i) {
    Site x;
    for (int c = 0; c < 2; ++c) x[c] = static_cast<int32_t>(rs.below(64)) - 32;
    const Site shifted = x + Site{7 * 3, 0} + Site{0, -7 * 5};
    const SiteKernel a = t.kernel(x);
    const SiteKernel b = t.kernel(shifted);
    CHECK(a.axis[0] == b.axis[0]);
    CHECK(a.axis[1] == b.axis[1]);
  }
  SECTION("translation-invariant base gives equal kernels on the torus") {
    const Environment u = generate(uniform(2), 0, 4);
    const TorusEnv tu = periodize(u, 2);
    for (int64_t i = 0; i < tu.count(); ++i) CHECK(tu.kernel(tu.site(i)).axis[0] == 0.25);
  }
  SECTION("N = 1 in d = 2 has 9 torus classes") {
    CHECK(periodize(generate(uniform(2), 0, 4), 1).count() == 9);
  }
  SECTION("N beyond the materialized radius is an error") {
    CHECK_THROWS_AS(periodize(generate(uniform(2), 0, 4), 5), std::invalid_argument);
  }
}

TEST_CASE("uniform walk has Phi identically 1") {
  for (int N : {1, 2, 4}) {
    const Environment env = generate(uniform(2), 0, N);
    const TorusEnv t = periodize(env, N);
    const StationaryDensity phi = solve_phi(t);
    for (double v : phi.phi) CHECK(std::abs(v - 1.0) <= 1e-10);
    check_density_invariants(phi, t);
  }
}

TEST_CASE("hand-specified 9-site torus matches the dense eigenvector oracle") {
  // d=2, N=1: fill the 9 kernels with assorted balanced elliptic laws
  std::vector<SiteKernel> kernels;
  RngStream rs(5150);
  for (int i = 0; i < 9; ++i) {
    SiteKernel k;
    const double a1 = 0.05 + 0.4 * rs.uniform();
    const double a2 = 0.5 - a1;
    k.stay = 0.0;
    k.axis = {a1, a2, 0, 0};
    kernels.push_back(k);
  }
  const Environment env = Environment::from_table(2, 1, kernels);
  const TorusEnv t = periodize(env, 1);
  const StationaryDensity phi = solve_phi(t);
  check_density_invariants(phi, t);
  const auto oracle = dense_left_eigenvector(t);
  for (int64_t i = 0; i < 9; ++i)
    CHECK(std::abs(phi.phi[static_cast<size_t>(i)] - oracle[static_cast<size_t>(i)]) <= 1e-10);
}

TEST_CASE("solve_phi equals the dense oracle on random elliptic environments") {
  for (uint64_t seed = 1; seed <= 6; ++seed) {
    for (int N : {1, 2}) {
      const Environment env = generate(iid_elliptic(2, 1.5, seed % 2 ? 0.5 : 0.0), seed, N);
      const TorusEnv t = periodize(env, N);
      const StationaryDensity phi = solve_phi(t);
      check_density_invariants(phi, t);
      const auto oracle = dense_left_eigenvector(t);
      for (size_t i = 0; i < phi.phi.size(); ++i)
        CHECK(std::abs(phi.phi[i] - oracle[i]) <= 1e-9);
    }
  }
}

TEST_CASE("solve_phi is deterministic and worker-count independent") {
  const Environment env = generate(iid_elliptic(2, 2.0), 321, 4);
  const TorusEnv t = periodize(env, 4);
  SolvePhiOptions one;
  one.workers = 1;
  SolvePhiOptions four;
  four.workers = 4;
  const StationaryDensity a = solve_phi(t, one);
  const StationaryDensity b = solve_phi(t, one);
  const StationaryDensity c = solve_phi(t, four);
  for (size_t i = 0; i < a.phi.size(); ++i) {
    CHECK(a.phi[i] == b.phi[i]);
    CHECK(a.phi[i] == c.phi[i]);
  }
}

TEST_CASE("anti-diagonal stripes are doubly stochastic, so Phi stays 1") {
  // kernels constant on stripes x1 + x2 = s (mod 2N+1): incoming mass at any
  // site is (a+b)(s-1) + (a+b)(s+1) = 1, so the torus kernel is doubly
  // stochastic for any per-stripe split a(s) + b(s) = 1/2
  const int N = 2, side = 2 * N + 1;
  std::vector<double> a(static_cast<size_t>(side));
  RngStream rs(8);
  for (auto& v : a) v = 0.05 + 0.4 * rs.uniform();
  std::vector<SiteKernel> kernels(static_cast<size_t>(box_count(2, N)));
  for_each_box_site(2, N, [&](const Site& x) {
    int s = (x[0] + x[1]) % side;
    if (s < 0) s += side;
    SiteKernel k;
    k.axis = {a[static_cast<size_t>(s)], 0.5 - a[static_cast<size_t>(s)], 0, 0};
    kernels[static_cast<size_t>(box_index(2, N, x))] = k;
  });
  const Environment env = Environment::from_table(2, N, kernels);
  const TorusEnv t = periodize(env, N);
  const StationaryDensity phi = solve_phi(t);
  for (double v : phi.phi) CHECK(std::abs(v - 1.0) <= 1e-10);
}

TEST_CASE("laziness removal rescales Phi by the jump mass") {
  // stationarity of the jump chain: phi_jump proportional to phi * (1 - stay)
  const EnvSpec spec = iid_elliptic(2, 2.0, 1.0);  // has stay mass
  for (int N : {1, 2}) {
    const Environment lazy = generate(spec, 17, N);
    const Environment bare = remove_laziness(lazy);
    const TorusEnv tl = periodize(lazy, N);
    const TorusEnv tb = periodize(bare, N);
    const StationaryDensity pl = solve_phi(tl);
    const StationaryDensity pb = solve_phi(tb);
    std::vector<double> rescaled(pl.phi.size());
    KahanSum mass;
    for (size_t i = 0; i < pl.phi.size(); ++i) {
      const double f = 1.0 - tl.kernel(tl.site(static_cast<int64_t>(i))).stay;
      rescaled[i] = pl.phi[i] * f;
      mass.add(rescaled[i]);
    }
    const double mean = mass.value() / static_cast<double>(pl.phi.size());
    for (size_t i = 0; i < pb.phi.size(); ++i)
      CHECK(pb.phi[i] == Catch::Approx(rescaled[i] / mean).margin(1e-8));
  }
}

TEST_CASE("solver error path carries the best residual") {
  const Environment env = generate(iid_elliptic(2, 2.0), 9, 2);
  const TorusEnv t = periodize(env, 2);
  SolvePhiOptions opt;
  opt.tol = 1e-30;  // unreachable
  opt.max_sweeps = 5;
  opt.direct_fallback_max_N = 0;  // fallback disabled
  CHECK_THROWS_WITH(solve_phi(t, opt), Catch::Matchers::ContainsSubstring("residual"));
}

TEST_CASE("phi diagnostics on the uniform walk give the constant-field values") {
  const Environment env = generate(uniform(2), 0, 4);
  const TorusEnv t = periodize(env, 4);
  const StationaryDensity phi = solve_phi(t);
  const PhiDiagnostics diag = phi_bound_diagnostics(t, phi, 6.0);
  CHECK(diag.beta == Catch::Approx(2.0));
  CHECK(diag.norm_phi_eps_beta == Catch::Approx(0.25).margin(1e-9));
  CHECK(diag.norm_phi_alpha == Catch::Approx(1.0).margin(1e-9));
  CHECK(diag.norm_inv_eps_p == Catch::Approx(4.0).margin(1e-9));
  // alpha = (1 - 1/d + 1/p)^-1; at p = infinity and d = 2 this is 2
  CHECK(holder_alpha(2, std::numeric_limits<double>::infinity()) == Catch::Approx(2.0));
}

TEST_CASE("duality sanity: ||Phi h||_1 <= ||Phi eps||_beta for unit ||h/eps||_d") {
  const Environment env = generate(iid_elliptic(2, 2.5), 77, 4);
  const TorusEnv t = periodize(env, 4);
  const StationaryDensity phi = solve_phi(t);
  const PhiDiagnostics diag = phi_bound_diagnostics(t, phi, 6.0);
  const int64_t n = t.count();
  std::vector<double> eps(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) eps[static_cast<size_t>(i)] = t.kernel(t.site(i)).epsilon(2);

  RngStream rs(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> h(static_cast<size_t>(n));
    for (auto& v : h) v = rs.uniform();
    // normalize to ||h / eps||_{Delta_N, d} = 1
    std::vector<double> ratio(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) ratio[static_cast<size_t>(i)] = h[static_cast<size_t>(i)] / eps[static_cast<size_t>(i)];
    const double nrm = lattice_norm(ratio, 2.0);
    for (auto& v : h) v /= nrm;
    std::vector<double> phi_h(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) phi_h[static_cast<size_t>(i)] = phi.phi[static_cast<size_t>(i)] * h[static_cast<size_t>(i)];
    CHECK(lattice_norm(phi_h, 1.0) <= diag.norm_phi_eps_beta + 1e-9);
  }
}
