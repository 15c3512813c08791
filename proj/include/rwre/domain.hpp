#pragma once

// Finite lattice domains E with their l-infinity boundary
// dE = { y not in E : exists x in E with |x-y|_inf = 1 }, closure and diameter.

#include <memory>
#include <stdexcept>
#include <vector>

#include "rwre/lattice.hpp"

namespace rwre {

struct LatticeDomain {
  std::shared_ptr<const SiteSet> interior;  // E
  std::shared_ptr<const SiteSet> boundary;  // dE
  std::shared_ptr<const SiteSet> closure;   // E union dE, interior sites first
  int d = 2;
  int diam_closure = 0;  // max l-infinity distance within the closure

  static LatticeDomain from_sites(int d, const std::vector<Site>& sites);

  // l-infinity box of given radius around the origin
  static LatticeDomain box(int d, int radius) {
    std::vector<Site> sites;
    sites.reserve(static_cast<size_t>(box_count(d, radius)));
    for_each_box_site(d, radius, [&](const Site& x) { sites.push_back(x); });
    return from_sites(d, sites);
  }

  // open l2 ball {|x - center| < r}
  static LatticeDomain ball_l2(int d, double r, const Site& center = Site{}) {
    std::vector<Site> sites;
    const int R = static_cast<int>(std::floor(r)) + 1;
    for_each_box_site(d, R, [&](const Site& x) {
      if (norm_l2sq(x) < r * r) sites.push_back(x + center);
    });
    return from_sites(d, sites);
  }

  // closed l2 ball {|x - center| <= r}
  static LatticeDomain ball_l2_closed(int d, double r, const Site& center = Site{}) {
    std::vector<Site> sites;
    const int R = static_cast<int>(std::floor(r)) + 1;
    for_each_box_site(d, R, [&](const Site& x) {
      if (norm_l2sq(x) <= r * r) sites.push_back(x + center);
    });
    return from_sites(d, sites);
  }
};

// l-infinity diameter of a site set: per-coordinate range maximum.
inline int linf_diameter(const SiteSet& s, int d) {
  if (s.empty()) return 0;
  int diam = 0;
  for (int i = 0; i < d; ++i) {
    int32_t lo = s[0][i], hi = s[0][i];
    for (const Site& x : s) {
      lo = std::min(lo, x[i]);
      hi = std::max(hi, x[i]);
    }
    diam = std::max(diam, hi - lo);
  }
  return diam;
}

inline LatticeDomain LatticeDomain::from_sites(int d, const std::vector<Site>& sites) {
  if (sites.empty()) throw std::invalid_argument("LatticeDomain: empty interior");
  LatticeDomain dom;
  dom.d = d;
  auto interior = std::make_shared<SiteSet>(sites);
  auto boundary = std::make_shared<SiteSet>();
  auto closure = std::make_shared<SiteSet>(sites);

  // l-infinity neighborhood: all 3^d - 1 offsets
  std::vector<Site> offsets;
  const int64_t n_off = box_count(d, 1);
  for (int64_t i = 0; i < n_off; ++i) {
    const Site o = box_site(d, 1, i);
    if (norm_linf(o) == 1) offsets.push_back(o);
  }
  for (const Site& x : *interior) {
    for (const Site& o : offsets) {
      const Site y = x + o;
      if (!interior->contains(y)) {
        boundary->insert(y);
        closure->insert(y);
      }
    }
  }
  dom.interior = std::move(interior);
  dom.boundary = std::move(boundary);
  dom.closure = std::move(closure);
  dom.diam_closure = linf_diameter(*dom.closure, d);
  return dom;
}

}  // namespace rwre
