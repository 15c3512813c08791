#pragma once

// Lattice sites in Z^d (d <= 4), norms, boxes and row-major indexing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>
#include <unordered_map>

namespace rwre {

inline constexpr int kMaxDim = 4;

// A point of Z^d. Coordinates beyond the active dimension stay zero, so
// equality and hashing never need to know d.
struct Site {
  std::array<int32_t, kMaxDim> c{0, 0, 0, 0};

  Site() = default;
  Site(std::initializer_list<int32_t> xs) {
    int i = 0;
    for (int32_t v : xs) {
      if (i >= kMaxDim) throw std::invalid_argument("Site: more than 4 coordinates");
      c[i++] = v;
    }
  }

  int32_t& operator[](int i) { return c[static_cast<size_t>(i)]; }
  int32_t operator[](int i) const { return c[static_cast<size_t>(i)]; }

  friend bool operator==(const Site& a, const Site& b) { return a.c == b.c; }
  friend bool operator!=(const Site& a, const Site& b) { return a.c != b.c; }
  // lexicographic; used wherever a deterministic order is needed
  friend bool operator<(const Site& a, const Site& b) { return a.c < b.c; }

  friend Site operator+(Site a, const Site& b) {
    for (int i = 0; i < kMaxDim; ++i) a.c[i] += b.c[i];
    return a;
  }
  friend Site operator-(Site a, const Site& b) {
    for (int i = 0; i < kMaxDim; ++i) a.c[i] -= b.c[i];
    return a;
  }
};

inline Site unit(int axis) {
  Site e;
  e[axis] = 1;
  return e;
}

// x +/- e_axis
inline Site neighbor(Site x, int axis, int sign) {
  x[axis] += sign;
  return x;
}

inline int32_t norm_linf(const Site& x) {
  int32_t m = 0;
  for (int i = 0; i < kMaxDim; ++i) m = std::max(m, std::abs(x.c[i]));
  return m;
}

inline int64_t norm_l1(const Site& x) {
  int64_t s = 0;
  for (int i = 0; i < kMaxDim; ++i) s += std::abs(static_cast<int64_t>(x.c[i]));
  return s;
}

inline int64_t norm_l2sq(const Site& x) {
  int64_t s = 0;
  for (int i = 0; i < kMaxDim; ++i) s += static_cast<int64_t>(x.c[i]) * x.c[i];
  return s;
}

inline double norm_l2(const Site& x) { return std::sqrt(static_cast<double>(norm_l2sq(x))); }

inline int64_t dist_l1(const Site& a, const Site& b) { return norm_l1(a - b); }
inline int32_t dist_linf(const Site& a, const Site& b) { return norm_linf(a - b); }

struct SiteHash {
  size_t operator()(const Site& s) const {
    uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (int i = 0; i < kMaxDim; ++i) {
      h ^= static_cast<uint64_t>(static_cast<uint32_t>(s.c[i])) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<size_t>(h);
  }
};

inline std::string to_string(const Site& s, int d) {
  std::ostringstream os;
  os << '(';
  for (int i = 0; i < d; ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Boxes: the l-infinity box of given radius. Sites are ordered row-major,
// lexicographic in (x_1, ..., x_d) with the last coordinate fastest; file
// formats and Phi tables rely on this order.
// ---------------------------------------------------------------------------

inline int64_t box_side(int radius) { return 2LL * radius + 1; }

inline int64_t box_count(int d, int radius) {
  int64_t n = 1;
  for (int i = 0; i < d; ++i) n *= box_side(radius);
  return n;
}

inline bool in_box(const Site& x, int radius) { return norm_linf(x) <= radius; }

inline int64_t box_index(int d, int radius, const Site& x) {
  const int64_t side = box_side(radius);
  int64_t idx = 0;
  for (int i = 0; i < d; ++i) {
    const int64_t k = static_cast<int64_t>(x[i]) + radius;
    idx = idx * side + k;
  }
  return idx;
}

inline Site box_site(int d, int radius, int64_t index) {
  const int64_t side = box_side(radius);
  Site x;
  for (int i = d - 1; i >= 0; --i) {
    x[i] = static_cast<int32_t>(index % side - radius);
    index /= side;
  }
  return x;
}

template <class F>
void for_each_box_site(int d, int radius, F&& fn) {
  const int64_t n = box_count(d, radius);
  for (int64_t i = 0; i < n; ++i) fn(box_site(d, radius, i));
}

// ---------------------------------------------------------------------------
// SiteSet: an ordered set of sites with O(1) membership and index lookup.
// Construction order is preserved; builders below produce deterministic
// (row-major or sorted) orders.
// ---------------------------------------------------------------------------

class SiteSet {
 public:
  SiteSet() = default;
  explicit SiteSet(std::vector<Site> sites) {
    sites_.reserve(sites.size());
    for (const Site& s : sites) insert(s);
  }

  bool insert(const Site& s) {
    auto [it, fresh] = index_.emplace(s, static_cast<int32_t>(sites_.size()));
    if (fresh) sites_.push_back(s);
    return fresh;
  }

  bool contains(const Site& s) const { return index_.count(s) != 0; }

  // index of s, or -1
  int32_t find(const Site& s) const {
    auto it = index_.find(s);
    return it == index_.end() ? -1 : it->second;
  }

  int32_t at(const Site& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) throw std::out_of_range("SiteSet: site not in set");
    return it->second;
  }

  size_t size() const { return sites_.size(); }
  bool empty() const { return sites_.empty(); }
  const Site& operator[](size_t i) const { return sites_[i]; }
  const std::vector<Site>& sites() const { return sites_; }
  auto begin() const { return sites_.begin(); }
  auto end() const { return sites_.end(); }

  void sort_lex() {
    std::sort(sites_.begin(), sites_.end());
    index_.clear();
    for (size_t i = 0; i < sites_.size(); ++i) index_.emplace(sites_[i], static_cast<int32_t>(i));
  }

 private:
  std::vector<Site> sites_;
  std::unordered_map<Site, int32_t, SiteHash> index_;
};

}  // namespace rwre
