#pragma once

// Periodized environments and their exact stationary densities.
//
// The base environment restricted to the box Delta_N = [-N,N]^d is tiled with
// period 2N+1. The projected chain on the torus classes is finite and
// irreducible (given ellipticity), so it has a unique invariant probability
// measure; Phi_N is its density normalized to mean 1 over Delta_N.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rwre/environment.hpp"
#include "rwre/grid.hpp"
#include "rwre/linsolve.hpp"
#include "rwre/parallel.hpp"

namespace rwre {

class TorusEnv {
 public:
  TorusEnv(Environment env, int N) : env_(std::move(env)), N_(N) {
    if (N < 1) throw std::invalid_argument("TorusEnv: N must be >= 1");
    if (N > env_.radius())
      throw std::invalid_argument("TorusEnv: period radius exceeds the materialized radius");
  }

  int d() const { return env_.d(); }
  int N() const { return N_; }
  int64_t side() const { return box_side(N_); }
  int64_t count() const { return box_count(d(), N_); }
  const Environment& base() const { return env_; }

  // representative of x in [-N, N]^d
  Site wrap(Site x) const {
    const int32_t s = static_cast<int32_t>(side());
    for (int i = 0; i < d(); ++i) {
      int32_t r = (x[i] + N_) % s;
      if (r < 0) r += s;
      x[i] = r - N_;
    }
    return x;
  }

  SiteKernel kernel(const Site& x) const { return env_.kernel(wrap(x)); }
  int64_t index(const Site& x) const { return box_index(d(), N_, wrap(x)); }
  Site site(int64_t idx) const { return box_site(d(), N_, idx); }

  std::shared_ptr<const SiteSet> domain_sites() const {
    auto s = std::make_shared<SiteSet>();
    for_each_box_site(d(), N_, [&](const Site& x) { s->insert(x); });
    return s;
  }

 private:
  Environment env_;
  int N_;
};

inline TorusEnv periodize(const Environment& env, int N) { return TorusEnv(env, N); }

struct StationaryDensity {
  int d = 0;
  int N = 0;
  std::vector<double> phi;  // row-major over Delta_N, mean 1
  double residual = 0.0;    // max_x |sum_y phi(y) P(y,x) - phi(x)|
  int64_t iterations = 0;
  bool direct_solve = false;

  double at_index(int64_t i) const { return phi[static_cast<size_t>(i)]; }
  double at(const Site& x) const { return phi[static_cast<size_t>(box_index(d, N, x))]; }
};

namespace detail {

struct TorusStencil {
  // flattened (state, 2d) incoming/outgoing neighbor indices and weights
  int64_t n = 0;
  int d = 0;
  std::vector<int32_t> nbr;     // outgoing target index per (i, dir)
  std::vector<double> weight;   // axis weight per (i, dir/2)
  std::vector<double> stay;

  static TorusStencil build(const TorusEnv& t) {
    TorusStencil s;
    s.n = t.count();
    s.d = t.d();
    s.nbr.resize(static_cast<size_t>(s.n) * 2 * s.d);
    s.weight.resize(static_cast<size_t>(s.n) * s.d);
    s.stay.resize(static_cast<size_t>(s.n));
    for (int64_t i = 0; i < s.n; ++i) {
      const Site x = t.site(i);
      const SiteKernel k = t.kernel(x);
      s.stay[static_cast<size_t>(i)] = k.stay;
      for (int a = 0; a < s.d; ++a) {
        s.weight[static_cast<size_t>(i * s.d + a)] = k.axis[static_cast<size_t>(a)];
        s.nbr[static_cast<size_t>(i * 2 * s.d + 2 * a)] = static_cast<int32_t>(t.index(neighbor(x, a, +1)));
        s.nbr[static_cast<size_t>(i * 2 * s.d + 2 * a + 1)] = static_cast<int32_t>(t.index(neighbor(x, a, -1)));
      }
    }
    return s;
  }

  // mass flowing into state i in one step of the chain, out[i] = (m P)(i)
  void pull(const std::vector<double>& m, std::vector<double>& out, int workers) const {
    const int d_ = d;
    parallel_for(n, workers, [&](int64_t i) {
      double acc = m[static_cast<size_t>(i)] * stay[static_cast<size_t>(i)];
      for (int a = 0; a < d_; ++a) {
        const int32_t up = nbr[static_cast<size_t>(i * 2 * d_ + 2 * a)];
        const int32_t dn = nbr[static_cast<size_t>(i * 2 * d_ + 2 * a + 1)];
        // the site at x -/+ e_a jumps to x with its own axis weight
        acc += m[static_cast<size_t>(dn)] * weight[static_cast<size_t>(dn * d_ + a)];
        acc += m[static_cast<size_t>(up)] * weight[static_cast<size_t>(up * d_ + a)];
      }
      out[static_cast<size_t>(i)] = acc;
    });
  }
};

}  // namespace detail

struct SolvePhiOptions {
  double tol = 1e-10;
  int64_t max_sweeps = 200000;
  int workers = 1;
  int direct_fallback_max_N = 16;
};

// Power iteration on the mass-transport update with a 1/2-lazy damping step
// (kills the bipartite period of stay-free kernels without moving the fixed
// point), direct sparse solve of (P^T - I) Phi = 0 as fallback for small N.
inline StationaryDensity solve_phi(const TorusEnv& tenv, const SolvePhiOptions& opt = {}) {
  const int64_t n = tenv.count();
  const auto stencil = detail::TorusStencil::build(tenv);

  StationaryDensity out;
  out.d = tenv.d();
  out.N = tenv.N();

  std::vector<double> m(static_cast<size_t>(n), 1.0);
  std::vector<double> next(static_cast<size_t>(n), 0.0);
  // iterate well below the contract tolerance so the density values, not just
  // the residual, are good to opt.tol; stop early at the numeric floor
  const double target = 0.01 * opt.tol;
  double residual = std::numeric_limits<double>::infinity();
  int64_t sweeps = 0;
  int stalled = 0;
  for (; sweeps < opt.max_sweeps && residual > target; ++sweeps) {
    stencil.pull(m, next, opt.workers);
    double r = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      r = std::max(r, std::abs(next[static_cast<size_t>(i)] - m[static_cast<size_t>(i)]));
      m[static_cast<size_t>(i)] = 0.5 * (m[static_cast<size_t>(i)] + next[static_cast<size_t>(i)]);
    }
    stalled = (r > 0.999 * residual && r <= opt.tol) ? stalled + 1 : 0;
    residual = r;
    if (stalled >= 50) break;  // converged to the rounding floor below tol
    if ((sweeps & 0xff) == 0xff) {
      // keep the mean pinned at 1 against rounding drift
      KahanSum s;
      for (double v : m) s.add(v);
      const double mean = s.value() / static_cast<double>(n);
      for (double& v : m) v /= mean;
    }
  }

  const bool converged = residual <= opt.tol;
  if (!converged) {
    if (tenv.N() <= opt.direct_fallback_max_N) {
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(static_cast<size_t>(n) * (2 * tenv.d() + 2));
      // rows 1..n-1: (P^T - I) phi = 0; row 0: normalization sum phi = n
      for (int64_t j = 0; j < n; ++j) trip.emplace_back(0, static_cast<int>(j), 1.0);
      for (int64_t i = 0; i < n; ++i) {
        // column contributions of state i's outgoing mass
        auto add = [&](int64_t row, double v) {
          if (row != 0) trip.emplace_back(static_cast<int>(row), static_cast<int>(i), v);
        };
        add(i, stencil.stay[static_cast<size_t>(i)] - 1.0);
        for (int a = 0; a < tenv.d(); ++a) {
          const double w = stencil.weight[static_cast<size_t>(i * tenv.d() + a)];
          add(stencil.nbr[static_cast<size_t>(i * 2 * tenv.d() + 2 * a)], w);
          add(stencil.nbr[static_cast<size_t>(i * 2 * tenv.d() + 2 * a + 1)], w);
        }
      }
      std::vector<double> rhs(static_cast<size_t>(n), 0.0);
      rhs[0] = static_cast<double>(n);
      m = solve_sparse(n, trip, rhs, 1e-6, "solve_phi direct fallback");
      for (double& v : m) {
        if (v < 0.0) {
          if (v < -1e-9) throw std::runtime_error("solve_phi: negative density from direct solve");
          v = 0.0;
        }
      }
      out.direct_solve = true;
    } else {
      throw std::runtime_error("solve_phi: power iteration stalled at residual " + std::to_string(residual) +
                               " > tol with N too large for the direct fallback");
    }
  }

  // final normalization and exact residual on the normalized density
  KahanSum s;
  for (double v : m) s.add(v);
  const double mean = s.value() / static_cast<double>(n);
  for (double& v : m) v /= mean;
  stencil.pull(m, next, opt.workers);
  double r = 0.0;
  for (int64_t i = 0; i < n; ++i)
    r = std::max(r, std::abs(next[static_cast<size_t>(i)] - m[static_cast<size_t>(i)]));
  if (out.direct_solve && r > opt.tol)
    throw std::runtime_error("solve_phi: direct solve residual " + std::to_string(r) + " exceeds tol");
  out.phi = std::move(m);
  out.residual = r;
  out.iterations = sweeps;
  if (!out.direct_solve && out.residual > opt.tol)
    throw std::runtime_error("solve_phi: failed to reach tolerance, best residual " +
                             std::to_string(out.residual));
  return out;
}

// ---------------------------------------------------------------------------
// Norm diagnostics behind the boundedness target for ||Phi_N||:
//   beta = d/(d-1),  alpha = (1 - 1/d + 1/p)^(-1).
// ---------------------------------------------------------------------------

struct PhiDiagnostics {
  int d = 0;
  int N = 0;
  double p = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double norm_phi_eps_beta = 0.0;  // ||Phi eps||_{Delta_N, beta}
  double norm_phi_alpha = 0.0;     // ||Phi||_{Delta_N, alpha}
  double norm_inv_eps_p = 0.0;     // ||eps^-1||_{Delta_N, p}; +inf if eps hits 0
  double residual = 0.0;
};

inline double holder_alpha(int d, double p) {
  const double inv_p = std::isinf(p) ? 0.0 : 1.0 / p;
  return 1.0 / (1.0 - 1.0 / static_cast<double>(d) + inv_p);
}

inline PhiDiagnostics phi_bound_diagnostics(const TorusEnv& tenv, const StationaryDensity& phi, double p) {
  if (phi.N != tenv.N() || phi.d != tenv.d())
    throw std::invalid_argument("phi_bound_diagnostics: density does not match the torus");
  PhiDiagnostics diag;
  diag.d = tenv.d();
  diag.N = tenv.N();
  diag.p = p;
  diag.beta = static_cast<double>(tenv.d()) / (tenv.d() - 1.0);
  diag.alpha = holder_alpha(tenv.d(), p);
  diag.residual = phi.residual;

  const int64_t n = tenv.count();
  std::vector<double> eps(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) eps[static_cast<size_t>(i)] = tenv.kernel(tenv.site(i)).epsilon(tenv.d());

  std::vector<double> phi_eps(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) phi_eps[static_cast<size_t>(i)] = phi.phi[static_cast<size_t>(i)] * eps[static_cast<size_t>(i)];
  diag.norm_phi_eps_beta = lattice_norm(phi_eps, diag.beta);
  diag.norm_phi_alpha = lattice_norm(phi.phi, diag.alpha);

  bool degenerate = false;
  std::vector<double> inv_eps(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    if (eps[static_cast<size_t>(i)] <= 0.0) {
      degenerate = true;
      break;
    }
    inv_eps[static_cast<size_t>(i)] = 1.0 / eps[static_cast<size_t>(i)];
  }
  diag.norm_inv_eps_p = degenerate ? std::numeric_limits<double>::infinity() : lattice_norm(inv_eps, p);
  return diag;
}

}  // namespace rwre
