#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace curvlab {

// A monomial weight: a nonnegative integer or +infinity.
class Weight {
 public:
  Weight() = default;
  explicit Weight(long v) : v_(v) {
    if (v < 0) throw std::invalid_argument("negative weight");
  }
  static Weight infinity() {
    Weight w;
    w.inf_ = true;
    return w;
  }
  bool is_infinite() const { return inf_; }
  long value() const {
    if (inf_) throw std::logic_error("infinite weight has no value");
    return v_;
  }

  friend Weight operator+(Weight a, Weight b) {
    if (a.inf_ || b.inf_) return infinity();
    return Weight(a.v_ + b.v_);
  }
  // k * w with the convention 0 * inf = 0 (an absent variable contributes nothing).
  friend Weight operator*(long k, Weight w) {
    if (k == 0) return Weight(0);
    if (w.inf_) return infinity();
    return Weight(k * w.v_);
  }
  friend bool operator==(Weight a, Weight b) { return a.inf_ == b.inf_ && (a.inf_ || a.v_ == b.v_); }
  friend std::strong_ordering operator<=>(Weight a, Weight b) {
    if (a.inf_ && b.inf_) return std::strong_ordering::equal;
    if (a.inf_) return std::strong_ordering::greater;
    if (b.inf_) return std::strong_ordering::less;
    return a.v_ <=> b.v_;
  }
  std::string str() const { return inf_ ? "inf" : std::to_string(v_); }

 private:
  long v_ = 0;
  bool inf_ = false;
};

inline std::ostream& operator<<(std::ostream& os, Weight w) { return os << w.str(); }

// Exponent vector of a monomial. Ordered by total order, then lexicographically.
struct MultiIndex {
  std::vector<int> exps;

  MultiIndex() = default;
  explicit MultiIndex(std::size_t nvars) : exps(nvars, 0) {}
  MultiIndex(std::initializer_list<int> e) : exps(e) { check(); }
  explicit MultiIndex(std::vector<int> e) : exps(std::move(e)) { check(); }

  static MultiIndex unit(std::size_t nvars, std::size_t i, int power = 1) {
    MultiIndex m(nvars);
    m.exps.at(i) = power;
    return m;
  }

  std::size_t size() const { return exps.size(); }
  int operator[](std::size_t i) const { return exps[i]; }
  int& operator[](std::size_t i) { return exps[i]; }

  int order() const { return std::accumulate(exps.begin(), exps.end(), 0); }

  Weight weighted_order(const std::vector<Weight>& w) const {
    if (w.size() != exps.size()) throw std::invalid_argument("weight vector length mismatch");
    Weight total(0);
    for (std::size_t i = 0; i < exps.size(); ++i) total = total + static_cast<long>(exps[i]) * w[i];
    return total;
  }

  bool is_zero() const {
    for (int e : exps)
      if (e != 0) return false;
    return true;
  }

  MultiIndex operator+(const MultiIndex& o) const {
    if (o.size() != size()) throw std::invalid_argument("multi-index length mismatch");
    MultiIndex r(*this);
    for (std::size_t i = 0; i < size(); ++i) r.exps[i] += o.exps[i];
    return r;
  }

  // Componentwise a <= b.
  bool divides(const MultiIndex& o) const {
    for (std::size_t i = 0; i < size(); ++i)
      if (exps[i] > o.exps[i]) return false;
    return true;
  }

  friend bool operator==(const MultiIndex& a, const MultiIndex& b) { return a.exps == b.exps; }
  friend bool operator<(const MultiIndex& a, const MultiIndex& b) {
    int oa = a.order(), ob = b.order();
    if (oa != ob) return oa < ob;
    return a.exps < b.exps;
  }

  std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < exps.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(exps[i]);
    }
    return s + ")";
  }

 private:
  void check() const {
    for (int e : exps)
      if (e < 0) throw std::invalid_argument("negative exponent in multi-index");
  }
};

struct MultiIndexHash {
  std::size_t operator()(const MultiIndex& m) const noexcept {
    std::size_t h = m.exps.size();
    for (int e : m.exps) h = h * 0x9e3779b97f4a7c15ULL + static_cast<std::size_t>(e) + (h >> 29);
    return h;
  }
};

// All multi-indices in nvars variables of total order exactly `order`, ascending.
inline std::vector<MultiIndex> multi_indices_of_order(std::size_t nvars, int order) {
  std::vector<MultiIndex> out;
  MultiIndex cur(nvars);
  // Enumerate in lexicographic order of the exponent vector.
  auto rec = [&](auto&& self, std::size_t pos, int remaining) -> void {
    if (pos + 1 == nvars) {
      cur.exps[pos] = remaining;
      out.push_back(cur);
      return;
    }
    for (int e = 0; e <= remaining; ++e) {
      cur.exps[pos] = e;
      self(self, pos + 1, remaining - e);
    }
    cur.exps[pos] = 0;
  };
  if (nvars == 0) {
    if (order == 0) out.push_back(cur);
    return out;
  }
  rec(rec, 0, order);
  return out;
}

inline std::vector<MultiIndex> multi_indices_up_to(std::size_t nvars, int max_order, int min_order = 0) {
  std::vector<MultiIndex> out;
  for (int o = min_order; o <= max_order; ++o) {
    auto v = multi_indices_of_order(nvars, o);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

inline long multi_factorial(const MultiIndex& a) {
  long f = 1;
  for (int e : a.exps)
    for (int i = 2; i <= e; ++i) f *= i;
  return f;
}

}  // namespace curvlab
