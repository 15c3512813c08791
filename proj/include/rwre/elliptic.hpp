#pragma once

// Balanced difference operators and the a-priori estimate checkers.
//
//   L_w f(x) = sum_i w(x,e_i) [f(x+e_i) + f(x-e_i) - 2 f(x)]
//   L_a f(x) = sum_y a(x,y) (f(y) - f(x)),    sum_y a(x,y)(y-x) = 0
//
// The Dirichlet solver uses the expected-visits sign convention
// L f = -h for h >= 0, so f(x) = E^x[ sum_{j<exit} h(X_j) ] + E^x[ g(X_exit) ]
// holds exactly; the maximum-principle checkers consume its solutions.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <vector>

#include "rwre/domain.hpp"
#include "rwre/environment.hpp"
#include "rwre/grid.hpp"
#include "rwre/linsolve.hpp"
#include "rwre/simplex.hpp"

namespace rwre {

inline double apply_L(const Environment& env, const GridFunction& f, const Site& x) {
  const int d = env.d();
  const SiteKernel k = env.kernel(x);
  const double fx = f.at(x);
  double acc = 0.0;
  for (int a = 0; a < d; ++a) {
    if (!f.defined_at(neighbor(x, a, +1)) || !f.defined_at(neighbor(x, a, -1)))
      throw std::out_of_range("apply_L: missing neighbor value at " + rwre::to_string(x, d));
    acc += k.axis[static_cast<size_t>(a)] *
           (f.at(neighbor(x, a, +1)) + f.at(neighbor(x, a, -1)) - 2.0 * fx);
  }
  return acc;
}

// Solve L_w f = -h on E with f = g on dE; returns f on the closure.
inline GridFunction dirichlet_solve(const Environment& env, const LatticeDomain& dom,
                                    const GridFunction& h, const GridFunction& g) {
  const int d = env.d();
  const SiteSet& E = *dom.interior;
  const int64_t n = static_cast<int64_t>(E.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(n) * (2 * d + 1));
  std::vector<double> rhs(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const Site x = E[static_cast<size_t>(i)];
    const SiteKernel k = env.kernel(x);
    if (!k.elliptic(d))
      throw std::invalid_argument("dirichlet_solve: non-elliptic site inside E at " + rwre::to_string(x, d));
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0 - k.stay);
    double b = h.at(x);
    for (int a = 0; a < d; ++a) {
      for (int sgn : {+1, -1}) {
        const Site y = neighbor(x, a, sgn);
        const int32_t j = E.find(y);
        if (j >= 0)
          trip.emplace_back(static_cast<int>(i), j, -k.axis[static_cast<size_t>(a)]);
        else
          b += k.axis[static_cast<size_t>(a)] * g.at(y);
      }
    }
    rhs[static_cast<size_t>(i)] = b;
  }
  std::vector<double> sol = solve_sparse(n, trip, rhs, 1e-10, "dirichlet_solve");
  GridFunction f(dom.closure);
  for (int64_t i = 0; i < n; ++i) f.set(E[static_cast<size_t>(i)], sol[static_cast<size_t>(i)]);
  for (const Site& y : *dom.boundary) f.set(y, g.at(y));
  return f;
}

// ---------------------------------------------------------------------------
// General balanced jump operators over a finite domain E.
// ---------------------------------------------------------------------------

struct JumpOperator {
  int d = 2;
  std::shared_ptr<const SiteSet> domain;    // E (row sites)
  std::shared_ptr<const SiteSet> boundary;  // E^b = exit sites reachable in one jump
  std::shared_ptr<const SiteSet> closure;   // E then E^b
  std::vector<std::vector<std::pair<Site, double>>> rows;  // a(x, .), self entries omitted
  std::vector<double> reach;                               // h_x = max |x-y| (l2) over the support

  int diam_closure() const { return linf_diameter(*closure, d); }
};

// Verifies stochasticity and coordinatewise balance of every row.
inline void check_balanced(const JumpOperator& op, double tol = 1e-10) {
  for (size_t i = 0; i < op.domain->size(); ++i) {
    const Site x = (*op.domain)[i];
    double mass = 0.0;
    double drift[kMaxDim] = {0, 0, 0, 0};
    for (const auto& [y, a] : op.rows[i]) {
      if (a < 0.0) throw std::runtime_error("JumpOperator: negative weight");
      mass += a;
      for (int c = 0; c < op.d; ++c) drift[c] += a * (y[c] - x[c]);
    }
    if (std::abs(mass - 1.0) > tol)
      throw std::runtime_error("JumpOperator: row mass " + std::to_string(mass) + " at " +
                               rwre::to_string(x, op.d));
    for (int c = 0; c < op.d; ++c)
      if (std::abs(drift[c]) > tol)
        throw std::runtime_error("JumpOperator: unbalanced row at " + rwre::to_string(x, op.d));
  }
}

namespace detail {
inline void finish_jump_operator(JumpOperator& op) {
  auto boundary = std::make_shared<SiteSet>();
  auto closure = std::make_shared<SiteSet>(op.domain->sites());
  op.reach.resize(op.rows.size());
  for (size_t i = 0; i < op.rows.size(); ++i) {
    const Site x = (*op.domain)[i];
    double h = 0.0;
    for (const auto& [y, a] : op.rows[i]) {
      (void)a;
      h = std::max(h, norm_l2(y - x));
      if (!op.domain->contains(y)) {
        boundary->insert(y);
        closure->insert(y);
      }
    }
    op.reach[i] = h;
  }
  op.boundary = std::move(boundary);
  op.closure = std::move(closure);
}
}  // namespace detail

// The nearest-neighbor operator of a stay-free environment: a(x, x+/-e_i) = w(x, e_i).
inline JumpOperator nn_operator(const Environment& env, const SiteSet& E) {
  JumpOperator op;
  op.d = env.d();
  op.domain = std::make_shared<SiteSet>(E.sites());
  op.rows.resize(E.size());
  for (size_t i = 0; i < E.size(); ++i) {
    const Site x = E[i];
    const SiteKernel k = env.kernel(x);
    if (k.stay != 0.0)
      throw std::invalid_argument("nn_operator: kernels must be stay-free (remove laziness first)");
    auto& row = op.rows[i];
    row.reserve(static_cast<size_t>(2 * op.d));
    for (int a = 0; a < op.d; ++a) {
      row.emplace_back(neighbor(x, a, +1), k.axis[static_cast<size_t>(a)]);
      row.emplace_back(neighbor(x, a, -1), k.axis[static_cast<size_t>(a)]);
    }
  }
  detail::finish_jump_operator(op);
  return op;
}

inline double apply_jump(const JumpOperator& op, const GridFunction& f, size_t row) {
  const Site x = (*op.domain)[row];
  const double fx = f.at(x);
  double acc = 0.0;
  for (const auto& [y, a] : op.rows[row]) acc += a * (f.at(y) - fx);
  return acc;
}

// Solve L_a f = -h on E with f = g on E^b.
inline GridFunction jump_dirichlet_solve(const JumpOperator& op, const GridFunction& h,
                                         const GridFunction& g) {
  const SiteSet& E = *op.domain;
  const int64_t n = static_cast<int64_t>(E.size());
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<double> rhs(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const Site x = E[static_cast<size_t>(i)];
    double diag = 0.0;
    double b = h.at(x);
    for (const auto& [y, a] : op.rows[static_cast<size_t>(i)]) {
      if (y == x) continue;
      diag += a;
      const int32_t j = E.find(y);
      if (j >= 0)
        trip.emplace_back(static_cast<int>(i), j, -a);
      else
        b += a * g.at(y);
    }
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), diag);
    rhs[static_cast<size_t>(i)] = b;
  }
  std::vector<double> sol = solve_sparse(n, trip, rhs, 1e-10, "jump_dirichlet_solve");
  GridFunction f(op.closure);
  for (int64_t i = 0; i < n; ++i) f.set(E[static_cast<size_t>(i)], sol[static_cast<size_t>(i)]);
  for (const Site& y : *op.boundary) f.set(y, g.at(y));
  return f;
}

// ---------------------------------------------------------------------------
// Upper contact sets. Membership is decided by the hull LP with feasibility
// slack; two cheap necessary conditions (axis midpoints and per-line hulls)
// prune the candidates first.
// ---------------------------------------------------------------------------

struct ContactSet {
  std::vector<int32_t> members;  // indices into the interior site set
  std::vector<std::array<double, kMaxDim>> witness;
  std::vector<double> defect;  // hull gap, <= slack for members
  double slack = 0.0;
};

namespace detail {

// Points on the upper hull of one lattice line; (t, val) pairs.
inline void mark_line_hull(std::vector<std::pair<int32_t, size_t>>& line, const std::vector<double>& val,
                           std::vector<uint8_t>& on_hull, double tol) {
  std::sort(line.begin(), line.end());
  const size_t k = line.size();
  if (k <= 2) {
    for (auto& [t, idx] : line) on_hull[idx] = 1;
    return;
  }
  // monotone chain, upper hull
  std::vector<size_t> hull;
  for (size_t i = 0; i < k; ++i) {
    const double xi = static_cast<double>(line[i].first);
    const double yi = val[line[i].second];
    while (hull.size() >= 2) {
      const double xa = static_cast<double>(line[hull[hull.size() - 2]].first);
      const double ya = val[line[hull[hull.size() - 2]].second];
      const double xb = static_cast<double>(line[hull.back()].first);
      const double yb = val[line[hull.back()].second];
      // drop b if it lies (weakly) below segment a-i
      if ((yb - ya) * (xi - xa) <= (yi - ya) * (xb - xa) + tol)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(i);
  }
  // evaluate hull height at every abscissa and keep points within tol of it
  size_t seg = 0;
  for (size_t i = 0; i < k; ++i) {
    const double xi = static_cast<double>(line[i].first);
    while (seg + 1 < hull.size() && static_cast<double>(line[hull[seg + 1]].first) < xi) ++seg;
    double hv;
    if (seg + 1 >= hull.size()) {
      hv = val[line[hull[seg]].second];
    } else {
      const double xa = static_cast<double>(line[hull[seg]].first);
      const double ya = val[line[hull[seg]].second];
      const double xb = static_cast<double>(line[hull[seg + 1]].first);
      const double yb = val[line[hull[seg + 1]].second];
      hv = xb > xa ? ya + (yb - ya) * (xi - xa) / (xb - xa) : std::max(ya, yb);
    }
    if (val[line[i].second] >= hv - tol) on_hull[line[i].second] = 1;
  }
}

}  // namespace detail

inline ContactSet contact_set_core(const SiteSet& interior, const SiteSet& closure,
                                   const std::vector<double>& u, int d, double slack) {
  if (u.size() != closure.size())
    throw std::invalid_argument("contact_set: values must cover the closure");
  double lo = u.empty() ? 0.0 : u[0], hi = lo;
  for (double v : u) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (slack < 0.0) slack = 1e-9 * std::max(1.0, hi - lo);
  const double pre_tol = 16.0 * slack;  // prefilters only reject clear non-members

  const size_t nc = closure.size();
  std::vector<uint8_t> candidate(interior.size(), 1);

  // per-line upper hulls along each axis
  {
    std::vector<uint8_t> on_hull(nc, 0);
    for (int a = 0; a < d; ++a) {
      std::fill(on_hull.begin(), on_hull.end(), 0);
      std::map<std::array<int32_t, kMaxDim>, std::vector<std::pair<int32_t, size_t>>> lines;
      for (size_t i = 0; i < nc; ++i) {
        Site key = closure[i];
        const int32_t t = key[a];
        key[a] = 0;
        lines[key.c].push_back({t, i});
      }
      for (auto& [key, line] : lines) detail::mark_line_hull(line, u, on_hull, pre_tol);
      for (size_t i = 0; i < interior.size(); ++i) {
        if (!candidate[i]) continue;
        const size_t ci = static_cast<size_t>(closure.at(interior[i]));
        if (!on_hull[ci]) candidate[i] = 0;
      }
    }
  }

  // axis midpoint filter
  for (size_t i = 0; i < interior.size(); ++i) {
    if (!candidate[i]) continue;
    const Site x = interior[i];
    const double ux = u[static_cast<size_t>(closure.at(x))];
    for (int a = 0; a < d && candidate[i]; ++a) {
      const int32_t jp = closure.find(neighbor(x, a, +1));
      const int32_t jm = closure.find(neighbor(x, a, -1));
      if (jp >= 0 && jm >= 0 &&
          ux < 0.5 * (u[static_cast<size_t>(jp)] + u[static_cast<size_t>(jm)]) - pre_tol)
        candidate[i] = 0;
    }
  }

  ContactSet cs;
  cs.slack = slack;
  const std::vector<Site>& pts = closure.sites();
  for (size_t i = 0; i < interior.size(); ++i) {
    if (!candidate[i]) continue;
    const size_t ci = static_cast<size_t>(closure.at(interior[i]));
    const HullLpResult lp = upper_hull_gap(pts, u, d, ci);
    if (lp.gap <= slack) {
      cs.members.push_back(static_cast<int32_t>(i));
      cs.witness.push_back(lp.witness);
      cs.defect.push_back(lp.gap);
    }
  }
  return cs;
}

// contact set over the nearest-neighbor closure (E with its l-infinity boundary)
inline ContactSet contact_set(const GridFunction& u, const LatticeDomain& dom, double slack = -1.0) {
  std::vector<double> vals(dom.closure->size());
  for (size_t i = 0; i < dom.closure->size(); ++i) vals[i] = u.at((*dom.closure)[i]);
  return contact_set_core(*dom.interior, *dom.closure, vals, dom.d, slack);
}

// contact set over the jump closure E~ = E union E^b
inline ContactSet contact_set(const GridFunction& u, const JumpOperator& op, double slack = -1.0) {
  std::vector<double> vals(op.closure->size());
  for (size_t i = 0; i < op.closure->size(); ++i) vals[i] = u.at((*op.closure)[i]);
  return contact_set_core(*op.domain, *op.closure, vals, op.d, slack);
}

// ---------------------------------------------------------------------------
// Maximum-principle checker:
//   max_E u <= C diam(closure) (sum_{contact} |g/eps|^d)^(1/d) + max_dE u.
// The dimensional constant C is calibrated over a reference corpus; the
// checker reports lhs, the constant-free rhs core and their ratio.
// ---------------------------------------------------------------------------

struct MpCheckResult {
  double lhs = 0.0;       // max_E u - max_dE u
  double rhs_core = 0.0;  // diam(closure) * (sum over contact |g/eps|^d)^(1/d)
  double ratio = 0.0;
  bool ratio_valid = false;
  size_t contact_size = 0;
  std::vector<Site> hypothesis_violations;  // contact points with L u < -g
};

inline MpCheckResult mp_check(const Environment& env, const LatticeDomain& dom, const GridFunction& u,
                              const GridFunction& g) {
  const int d = env.d();
  MpCheckResult out;
  const ContactSet cs = contact_set(u, dom);
  out.contact_size = cs.members.size();

  double scale = 0.0;
  for (const Site& x : *dom.closure) scale = std::max(scale, std::abs(u.at(x)));
  const double tol = 1e-9 * (1.0 + scale);

  KahanSum sum;
  for (size_t m = 0; m < cs.members.size(); ++m) {
    const Site x = (*dom.interior)[static_cast<size_t>(cs.members[m])];
    const double Lu = apply_L(env, u, x);
    const double gx = g.at(x);
    if (Lu < -gx - tol) out.hypothesis_violations.push_back(x);
    const double eps = env.epsilon(x);
    sum.add(std::pow(std::abs(gx) / eps, static_cast<double>(d)));
  }
  double max_E = -std::numeric_limits<double>::infinity();
  for (const Site& x : *dom.interior) max_E = std::max(max_E, u.at(x));
  double max_dE = -std::numeric_limits<double>::infinity();
  for (const Site& x : *dom.boundary) max_dE = std::max(max_dE, u.at(x));
  out.lhs = max_E - max_dE;
  out.rhs_core = dom.diam_closure * std::pow(sum.value(), 1.0 / static_cast<double>(d));
  if (out.hypothesis_violations.empty() && out.rhs_core > 0.0) {
    out.ratio = out.lhs / out.rhs_core;
    out.ratio_valid = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mean-value-inequality checker for w-harmonic functions:
//   max_{B_{sigma R}} u <= C || u^+ / eps^{d/p} ||_{B_R, p}.
// ---------------------------------------------------------------------------

struct MviCheckResult {
  double max_inner = 0.0;
  double denom = 0.0;
  double ratio = 0.0;
  bool vacuous = false;  // u <= 0 on B_R: nothing to bound
};

inline MviCheckResult mvi_check(const Environment& env, double R, double sigma, double p,
                                const GridFunction& boundary_g) {
  if (!(sigma > 0.0 && sigma < 1.0)) throw std::invalid_argument("mvi_check: sigma in (0,1)");
  const int d = env.d();
  if (!(p > 0.0 && p <= static_cast<double>(d))) throw std::invalid_argument("mvi_check: p in (0, d]");
  const LatticeDomain dom = LatticeDomain::ball_l2(d, R);
  const GridFunction h(dom.interior);  // zero forcing: u is w-harmonic
  const GridFunction u = dirichlet_solve(env, dom, h, boundary_g);

  MviCheckResult out;
  out.max_inner = -std::numeric_limits<double>::infinity();
  const double r_in2 = sigma * R * sigma * R;
  for (const Site& x : *dom.interior)
    if (static_cast<double>(norm_l2sq(x)) < r_in2) out.max_inner = std::max(out.max_inner, u.at(x));

  KahanSum s;
  for (const Site& x : *dom.interior) {
    const double up = std::max(u.at(x), 0.0);
    if (up == 0.0) continue;
    const double w = up / std::pow(env.epsilon(x), static_cast<double>(d) / p);
    s.add(std::pow(w, p));
  }
  out.denom = std::pow(s.value() / static_cast<double>(dom.interior->size()), 1.0 / p);
  if (out.denom == 0.0) {
    out.vacuous = true;  // u^+ vanishes, max over the inner ball is <= 0
    return out;
  }
  out.ratio = out.max_inner / out.denom;
  return out;
}

// ---------------------------------------------------------------------------
// Cutoff-profile lemma: for L_a-harmonic u on B_R, v = eta u^+ with
// eta = (1 - |x|^2/R^2)^beta satisfies, at every contact point of v,
//   L_a v >= -(beta^2 2^(4 beta + 2) + 32) eta^(1-2/beta) R^-2 h_x^2 u^+ .
// Both proof branches are folded into the explicit constant; the inequality
// is exact, so the checker expects zero violations.
// ---------------------------------------------------------------------------

struct CutoffProfile {
  double R = 0.0;
  double beta = 2.0;

  double eta(const Site& x) const {
    const double q = static_cast<double>(norm_l2sq(x)) / (R * R);
    if (q >= 1.0) return 0.0;
    return std::pow(1.0 - q, beta);
  }
};

struct CutoffCheckResult {
  struct Violation {
    Site x;
    double lhs;  // L_a v
    double rhs;  // -(const) eta^(1-2/beta) R^-2 h_x^2 u^+
  };
  std::vector<Violation> violations;
  size_t contact_size = 0;
  double harmonic_residual = 0.0;
  double constant = 0.0;
};

inline CutoffCheckResult cutoff_lemma_check(const JumpOperator& op, const GridFunction& u, double R,
                                            double beta) {
  if (!(beta >= 2.0)) throw std::invalid_argument("cutoff_lemma_check: beta must be >= 2");
  CutoffCheckResult out;
  out.constant = beta * beta * std::pow(2.0, 4.0 * beta + 2.0) + 32.0;

  for (size_t i = 0; i < op.domain->size(); ++i)
    out.harmonic_residual = std::max(out.harmonic_residual, std::abs(apply_jump(op, u, i)));
  if (out.harmonic_residual > 1e-9)
    throw std::invalid_argument("cutoff_lemma_check: u is not L_a-harmonic (residual " +
                                std::to_string(out.harmonic_residual) + ")");

  const CutoffProfile eta{R, beta};
  GridFunction v(op.closure);
  for (size_t i = 0; i < op.closure->size(); ++i) {
    const Site& z = (*op.closure)[i];
    v[i] = eta.eta(z) * std::max(u.at(z), 0.0);
  }

  const ContactSet cs = contact_set(v, op);
  out.contact_size = cs.members.size();
  double scale = 0.0;
  for (size_t i = 0; i < v.size(); ++i) scale = std::max(scale, std::abs(v[i]));
  const double tol = 1e-11 * (1.0 + scale);

  for (int32_t m : cs.members) {
    const Site x = (*op.domain)[static_cast<size_t>(m)];
    const double lhs = apply_jump(op, v, static_cast<size_t>(m));
    const double up = std::max(u.at(x), 0.0);
    const double hx = op.reach[static_cast<size_t>(m)];
    const double rhs = -out.constant * std::pow(eta.eta(x), 1.0 - 2.0 / beta) / (R * R) * hx * hx * up;
    if (lhs < rhs - tol) out.violations.push_back({x, lhs, rhs});
  }
  return out;
}

}  // namespace rwre
