#pragma once

// Balanced lattice environments: per-site kernels, the generator family
// (uniform walk, i.i.d. Dirichlet-type, i.i.d. with a max-weight floor,
// layered, heavy-tailed trap), laziness removal and validation.
//
// A kernel stores one weight per axis, so w(x, +e_i) = w(x, -e_i) holds by
// construction and the walk is a quenched martingale for every environment
// this module can represent.

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwre/lattice.hpp"
#include "rwre/rng.hpp"

namespace rwre {

inline constexpr double kStochasticTol = 1e-12;

struct SiteKernel {
  double stay = 0.0;
  std::array<double, kMaxDim> axis{0.0, 0.0, 0.0, 0.0};  // axis[i] = w(x, +/- e_{i+1})

  double jump_mass(int d) const {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += axis[static_cast<size_t>(i)];
    return 2.0 * s;
  }
  double total(int d) const { return stay + jump_mass(d); }

  double min_axis(int d) const {
    double m = axis[0];
    for (int i = 1; i < d; ++i) m = std::min(m, axis[static_cast<size_t>(i)]);
    return m;
  }
  double max_axis(int d) const {
    double m = axis[0];
    for (int i = 1; i < d; ++i) m = std::max(m, axis[static_cast<size_t>(i)]);
    return m;
  }
  bool elliptic(int d) const { return min_axis(d) > 0.0; }

  // local ellipticity scale: geometric mean of the axis weights
  double epsilon(int d) const {
    double p = 1.0;
    for (int i = 0; i < d; ++i) p *= axis[static_cast<size_t>(i)];
    if (p <= 0.0) return 0.0;
    return std::pow(p, 1.0 / static_cast<double>(d));
  }

  void normalize(int d) {
    const double t = total(d);
    if (!(t > 0.0)) throw std::runtime_error("SiteKernel::normalize: nonpositive total mass");
    stay /= t;
    for (int i = 0; i < d; ++i) axis[static_cast<size_t>(i)] /= t;
  }
};

enum class EnvVariant { UniformSrw, IidElliptic, IidMaxJump, Layered, Trap, Custom };

inline const char* variant_name(EnvVariant v) {
  switch (v) {
    case EnvVariant::UniformSrw: return "uniform-srw";
    case EnvVariant::IidElliptic: return "iid-elliptic";
    case EnvVariant::IidMaxJump: return "iid-max-jump";
    case EnvVariant::Layered: return "layered";
    case EnvVariant::Trap: return "trap";
    case EnvVariant::Custom: return "custom";
  }
  return "?";
}

// Distribution parameters for the generator family.
//
//   uniform-srw   stay = 0, axis = 1/(2d) everywhere.
//   iid-elliptic  axis_i = G_i / (G_0 + 2 sum G_j), G_i ~ Gamma(shape),
//                 G_0 ~ Gamma(stay_shape) (0 when stay_shape = 0).
//                 E[eps(o)^-p] < infinity exactly when p < d * shape.
//   iid-max-jump  stay = 0; with prob p_open one axis weight is U(0, eps0),
//                 otherwise all weights are >= eps0. In both branches
//                 max_i axis_i >= 1/(2d); requires eps0 <= 1/(2d). The site
//                 percolation density at threshold eps0 is exactly p_open.
//   layered       axis_1 = eps_z, axis_i = (1 - 2 eps_z)/(2(d-1)) where
//                 eps_z ~ U(eps_lo, eps_hi) depends only on z(x) = (x_2..x_d);
//                 kernels are constant along the e_1 axis.
//   trap          stay = 1 - delta, axis_i = delta/(2d), delta = U^(1/tail_a);
//                 tail_a < 1 breaks every p-th inverse moment with p >= tail_a.
struct EnvSpec {
  EnvVariant variant = EnvVariant::UniformSrw;
  int d = 2;

  double shape = 1.0;       // iid-elliptic
  double stay_shape = 0.0;  // iid-elliptic
  double p_open = 0.0;      // iid-max-jump
  double eps0 = 0.0;        // iid-max-jump
  double eps_lo = 0.25;     // layered
  double eps_hi = 0.25;     // layered
  double tail_a = 0.5;      // trap
  bool trap_lazy = true;    // trap

  void validate() const {
    if (d < 2 || d > kMaxDim) throw std::invalid_argument("EnvSpec: dimension must be in [2,4]");
    switch (variant) {
      case EnvVariant::UniformSrw:
      case EnvVariant::Custom:
        break;
      case EnvVariant::IidElliptic:
        if (!(shape > 0.0)) throw std::invalid_argument("EnvSpec: iid-elliptic needs shape > 0");
        if (stay_shape < 0.0) throw std::invalid_argument("EnvSpec: iid-elliptic needs stay_shape >= 0");
        break;
      case EnvVariant::IidMaxJump:
        if (!(p_open >= 0.0 && p_open <= 1.0))
          throw std::invalid_argument("EnvSpec: iid-max-jump needs p_open in [0,1]");
        if (!(eps0 > 0.0 && eps0 <= 1.0 / (2.0 * d)))
          throw std::invalid_argument("EnvSpec: iid-max-jump needs eps0 in (0, 1/(2d)]");
        break;
      case EnvVariant::Layered:
        if (!(eps_lo > 0.0 && eps_lo <= eps_hi && eps_hi < 0.5))
          throw std::invalid_argument(
              "EnvSpec: layered needs 0 < eps_lo <= eps_hi < 1/2 (law support inside (0,1/2))");
        break;
      case EnvVariant::Trap:
        if (!(tail_a > 0.0)) throw std::invalid_argument("EnvSpec: trap needs tail exponent > 0");
        break;
    }
  }

  std::string to_string() const {
    std::ostringstream os;
    os.precision(17);
    os << variant_name(variant);
    switch (variant) {
      case EnvVariant::IidElliptic: os << " shape=" << shape << " stay_shape=" << stay_shape; break;
      case EnvVariant::IidMaxJump: os << " p_open=" << p_open << " eps0=" << eps0; break;
      case EnvVariant::Layered: os << " eps_lo=" << eps_lo << " eps_hi=" << eps_hi; break;
      case EnvVariant::Trap: os << " a=" << tail_a << " lazy=" << (trap_lazy ? 1 : 0); break;
      default: break;
    }
    return os.str();
  }

  static EnvSpec parse(const std::string& text, int d) {
    std::istringstream is(text);
    std::string name;
    is >> name;
    EnvSpec s;
    s.d = d;
    if (name == "uniform-srw")
      s.variant = EnvVariant::UniformSrw;
    else if (name == "iid-elliptic")
      s.variant = EnvVariant::IidElliptic;
    else if (name == "iid-max-jump")
      s.variant = EnvVariant::IidMaxJump;
    else if (name == "layered")
      s.variant = EnvVariant::Layered;
    else if (name == "trap")
      s.variant = EnvVariant::Trap;
    else if (name == "custom")
      s.variant = EnvVariant::Custom;
    else
      throw std::invalid_argument("EnvSpec: unknown variant '" + name + "'");
    std::string kv;
    while (is >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("EnvSpec: bad parameter '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const double val = std::strtod(kv.c_str() + eq + 1, nullptr);
      if (key == "shape")
        s.shape = val;
      else if (key == "stay_shape")
        s.stay_shape = val;
      else if (key == "p_open")
        s.p_open = val;
      else if (key == "eps0")
        s.eps0 = val;
      else if (key == "eps_lo")
        s.eps_lo = val;
      else if (key == "eps_hi")
        s.eps_hi = val;
      else if (key == "a")
        s.tail_a = val;
      else if (key == "lazy")
        s.trap_lazy = val != 0.0;
      else
        throw std::invalid_argument("EnvSpec: unknown parameter '" + key + "'");
    }
    s.validate();
    return s;
  }
};

namespace detail {

inline SiteKernel uniform_srw_kernel(int d) {
  SiteKernel k;
  k.stay = 0.0;
  for (int i = 0; i < d; ++i) k.axis[static_cast<size_t>(i)] = 1.0 / (2.0 * d);
  return k;
}

// Draws the kernel of site x from (spec, seed). Each site owns a hashed
// stream, so materialized boxes and lazy lookups agree bit for bit.
inline SiteKernel generate_kernel(const EnvSpec& spec, uint64_t seed, const Site& x) {
  const int d = spec.d;
  SiteKernel k;
  switch (spec.variant) {
    case EnvVariant::UniformSrw:
      return uniform_srw_kernel(d);
    case EnvVariant::IidElliptic: {
      RngStream rs = derive_site_stream(seed, "env-kernel", x);
      std::gamma_distribution<double> ga(spec.shape, 1.0);
      double g0 = 0.0;
      if (spec.stay_shape > 0.0) {
        std::gamma_distribution<double> g0d(spec.stay_shape, 1.0);
        g0 = g0d(rs);
      }
      double tot = g0;
      for (int i = 0; i < d; ++i) {
        double g;
        do {
          g = ga(rs);
        } while (!(g > 0.0));
        k.axis[static_cast<size_t>(i)] = g;
        tot += 2.0 * g;
      }
      k.stay = g0;
      for (int i = 0; i < d; ++i) k.axis[static_cast<size_t>(i)] /= tot;
      k.stay /= tot;
      break;
    }
    case EnvVariant::IidMaxJump: {
      RngStream rs = derive_site_stream(seed, "env-kernel", x);
      k.stay = 0.0;
      const bool open = rs.uniform() < spec.p_open;
      if (open) {
        const int j = static_cast<int>(rs.below(static_cast<uint64_t>(d)));
        const double m = spec.eps0 * rs.uniform_open();
        double e[kMaxDim];
        double se = 0.0;
        for (int i = 0; i < d - 1; ++i) {
          e[i] = -std::log(rs.uniform_open());
          se += e[i];
        }
        k.axis[static_cast<size_t>(j)] = m;
        int slot = 0;
        for (int i = 0; i < d; ++i) {
          if (i == j) continue;
          k.axis[static_cast<size_t>(i)] = (0.5 - m) * e[slot] / se;
          ++slot;
        }
      } else {
        double e[kMaxDim];
        double se = 0.0;
        for (int i = 0; i < d; ++i) {
          e[i] = -std::log(rs.uniform_open());
          se += e[i];
        }
        for (int i = 0; i < d; ++i)
          k.axis[static_cast<size_t>(i)] = spec.eps0 + (0.5 - d * spec.eps0) * e[i] / se;
      }
      break;
    }
    case EnvVariant::Layered: {
      Site z = x;
      z[0] = 0;
      RngStream rs = derive_site_stream(seed, "env-layer", z);
      const double eps = spec.eps_lo + (spec.eps_hi - spec.eps_lo) * rs.uniform();
      k.stay = 0.0;
      k.axis[0] = eps;
      for (int i = 1; i < d; ++i) k.axis[static_cast<size_t>(i)] = (1.0 - 2.0 * eps) / (2.0 * (d - 1));
      break;
    }
    case EnvVariant::Trap: {
      RngStream rs = derive_site_stream(seed, "env-kernel", x);
      double delta = std::pow(rs.uniform_open(), 1.0 / spec.tail_a);
      // floor keeps 1/(1 - stay) finite in double arithmetic
      delta = std::max(delta, 1e-9);
      if (!spec.trap_lazy) return uniform_srw_kernel(d);
      k.stay = 1.0 - delta;
      for (int i = 0; i < d; ++i) k.axis[static_cast<size_t>(i)] = (1.0 - k.stay) / (2.0 * d);
      break;
    }
    case EnvVariant::Custom:
      throw std::logic_error("generate_kernel: custom environments have no generator");
  }
  k.normalize(d);
  return k;
}

}  // namespace detail

struct ValidationReport {
  struct Violation {
    Site x;
    std::string what;
  };
  std::vector<Violation> violations;
  int64_t sites_checked = 0;
  int64_t non_elliptic_sites = 0;
  double min_epsilon = 0.0;
  double xi_hat = 0.0;  // min over sites of max_i axis[i]
  bool ok() const { return violations.empty(); }
};

// Immutable environment: a deterministic site -> kernel map. Sites inside the
// materialized box are table lookups; i.i.d./layered/trap variants extend
// lazily outside via the per-site streams, so walks may leave the box.
class Environment {
 public:
  static Environment generate(const EnvSpec& spec, uint64_t seed, int radius) {
    spec.validate();
    if (radius < 1) throw std::invalid_argument("Environment::generate: radius must be >= 1");
    if (spec.variant == EnvVariant::Custom)
      throw std::invalid_argument("Environment::generate: custom spec has no generator");
    Environment env;
    env.spec_ = spec;
    env.seed_ = seed;
    env.radius_ = radius;
    auto table = std::make_shared<std::vector<SiteKernel>>();
    table->reserve(static_cast<size_t>(box_count(spec.d, radius)));
    for_each_box_site(spec.d, radius, [&](const Site& x) {
      table->push_back(detail::generate_kernel(spec, seed, x));
    });
    env.table_ = std::move(table);
    return env;
  }

  static Environment from_table(int d, int radius, std::vector<SiteKernel> kernels) {
    if (d < 2 || d > kMaxDim) throw std::invalid_argument("Environment::from_table: bad dimension");
    if (static_cast<int64_t>(kernels.size()) != box_count(d, radius))
      throw std::invalid_argument("Environment::from_table: kernel count does not match box");
    Environment env;
    env.spec_.variant = EnvVariant::Custom;
    env.spec_.d = d;
    env.seed_ = 0;
    env.radius_ = radius;
    env.table_ = std::make_shared<std::vector<SiteKernel>>(std::move(kernels));
    return env;
  }

  // used by the file loader: keeps the generator spec for lazy extension
  static Environment from_parts(const EnvSpec& spec, uint64_t seed, int radius, bool lazy_removed,
                                std::vector<SiteKernel> kernels) {
    if (static_cast<int64_t>(kernels.size()) != box_count(spec.d, radius))
      throw std::invalid_argument("Environment::from_parts: kernel count does not match box");
    Environment env;
    env.spec_ = spec;
    env.seed_ = seed;
    env.radius_ = radius;
    env.lazy_removed_ = lazy_removed;
    env.table_ = std::make_shared<std::vector<SiteKernel>>(std::move(kernels));
    return env;
  }

  int d() const { return spec_.d; }
  int radius() const { return radius_; }
  uint64_t seed() const { return seed_; }
  const EnvSpec& spec() const { return spec_; }
  bool laziness_removed() const { return lazy_removed_; }
  const std::vector<SiteKernel>& table() const { return *table_; }

  bool materialized(const Site& x) const { return in_box(x, radius_); }

  SiteKernel kernel(const Site& x) const {
    if (in_box(x, radius_)) return (*table_)[static_cast<size_t>(box_index(spec_.d, radius_, x))];
    if (spec_.variant == EnvVariant::Custom)
      throw std::out_of_range("Environment: site " + rwre::to_string(x, spec_.d) +
                              " outside the materialized box of a custom environment");
    SiteKernel k = detail::generate_kernel(spec_, seed_, x);
    if (lazy_removed_) strip_stay(k, x, spec_.d);
    return k;
  }

  double epsilon(const Site& x) const { return kernel(x).epsilon(spec_.d); }

  // The jump chain of the walk: stay mass removed, axis weights rescaled.
  Environment without_laziness() const {
    Environment env = *this;
    auto table = std::make_shared<std::vector<SiteKernel>>(*table_);
    for (int64_t i = 0; i < static_cast<int64_t>(table->size()); ++i) {
      strip_stay((*table)[static_cast<size_t>(i)], box_site(spec_.d, radius_, i), spec_.d);
    }
    env.table_ = std::move(table);
    env.lazy_removed_ = true;
    return env;
  }

  ValidationReport validate() const {
    ValidationReport rep;
    rep.min_epsilon = std::numeric_limits<double>::infinity();
    rep.xi_hat = std::numeric_limits<double>::infinity();
    const int d = spec_.d;
    for_each_box_site(d, radius_, [&](const Site& x) {
      const SiteKernel k = kernel(x);
      ++rep.sites_checked;
      if (std::abs(k.total(d) - 1.0) > kStochasticTol)
        rep.violations.push_back({x, "stochasticity: |total-1| = " + std::to_string(std::abs(k.total(d) - 1.0))});
      if (k.stay < 0.0) rep.violations.push_back({x, "negative stay mass"});
      for (int i = 0; i < d; ++i)
        if (k.axis[static_cast<size_t>(i)] < 0.0) rep.violations.push_back({x, "negative axis weight"});
      if (!k.elliptic(d)) ++rep.non_elliptic_sites;
      rep.min_epsilon = std::min(rep.min_epsilon, k.epsilon(d));
      rep.xi_hat = std::min(rep.xi_hat, k.max_axis(d));
    });
    return rep;
  }

 private:
  static void strip_stay(SiteKernel& k, const Site& x, int d) {
    const double jump = k.jump_mass(d);
    if (!(jump > 0.0))
      throw std::runtime_error("remove_laziness: absorbing site (stay = 1) at " + rwre::to_string(x, d));
    for (int i = 0; i < d; ++i) k.axis[static_cast<size_t>(i)] /= jump;
    k.stay = 0.0;
  }

  EnvSpec spec_;
  uint64_t seed_ = 0;
  int radius_ = 0;
  bool lazy_removed_ = false;
  std::shared_ptr<const std::vector<SiteKernel>> table_;
};

// Spec-level operation names.
inline Environment generate(const EnvSpec& spec, uint64_t seed, int radius) {
  return Environment::generate(spec, seed, radius);
}

inline double epsilon(const Environment& env, const Site& x) {
  if (!env.materialized(x) && env.spec().variant == EnvVariant::Custom)
    throw std::out_of_range("epsilon: unmaterialized site");
  return env.epsilon(x);
}

inline Environment remove_laziness(const Environment& env) { return env.without_laziness(); }

}  // namespace rwre
