#pragma once

// Real-valued functions on a finite site set, and the normalized l^j norms
// ||f||_{E,j} = (|E|^-1 sum_{x in E} |f(x)|^j)^(1/j).

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "rwre/lattice.hpp"
#include "rwre/stats.hpp"

namespace rwre {

class GridFunction {
 public:
  GridFunction() = default;
  explicit GridFunction(std::shared_ptr<const SiteSet> domain, double init = 0.0)
      : domain_(std::move(domain)), values_(domain_->size(), init) {}

  static GridFunction on(std::shared_ptr<const SiteSet> domain, double init = 0.0) {
    return GridFunction(std::move(domain), init);
  }

  const SiteSet& domain() const { return *domain_; }
  std::shared_ptr<const SiteSet> domain_ptr() const { return domain_; }
  size_t size() const { return values_.size(); }

  bool defined_at(const Site& x) const { return domain_ && domain_->contains(x); }

  double at(const Site& x) const {
    const int32_t i = domain_->find(x);
    if (i < 0) throw std::out_of_range("GridFunction: undefined at " + rwre::to_string(x, kMaxDim));
    return values_[static_cast<size_t>(i)];
  }

  void set(const Site& x, double v) { values_[static_cast<size_t>(domain_->at(x))] = v; }

  double operator[](size_t i) const { return values_[i]; }
  double& operator[](size_t i) { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

 private:
  std::shared_ptr<const SiteSet> domain_;
  std::vector<double> values_;
};

// ||f||_{E,j}; j may be +infinity (sup norm). f must be defined on all of E.
inline double lattice_norm(const GridFunction& f, const SiteSet& E, double j) {
  if (E.empty()) throw std::invalid_argument("lattice_norm: empty site set");
  if (!(j >= 1.0)) throw std::invalid_argument("lattice_norm: exponent must be >= 1");
  if (std::isinf(j)) {
    double m = 0.0;
    for (const Site& x : E) m = std::max(m, std::abs(f.at(x)));
    return m;
  }
  KahanSum s;
  for (const Site& x : E) s.add(std::pow(std::abs(f.at(x)), j));
  return std::pow(s.value() / static_cast<double>(E.size()), 1.0 / j);
}

inline double lattice_norm(const GridFunction& f, double j) { return lattice_norm(f, f.domain(), j); }

// same norm over raw values (used where a GridFunction would be overhead)
inline double lattice_norm(const std::vector<double>& v, double j) {
  if (v.empty()) throw std::invalid_argument("lattice_norm: empty value set");
  if (!(j >= 1.0)) throw std::invalid_argument("lattice_norm: exponent must be >= 1");
  if (std::isinf(j)) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  }
  KahanSum s;
  for (double x : v) s.add(std::pow(std::abs(x), j));
  return std::pow(s.value() / static_cast<double>(v.size()), 1.0 / j);
}

}  // namespace rwre
