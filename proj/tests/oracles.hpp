#pragma once

// Slow, direct reference implementations used only by the tests. They share
// no code with the library beyond the plain Array container.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "taco/tensor.hpp"

namespace oracle {

using taco::Array;

inline double cos_dist(const Array& a, std::size_t i, const Array& b, std::size_t j) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    dot += a(i, c) * b(j, c);
    na += a(i, c) * a(i, c);
    nb += b(j, c) * b(j, c);
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

inline Array distance_matrix(const Array& a, const Array& b) {
  Array d({a.rows(), b.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) d(i, j) = cos_dist(a, i, b, j);
  return d;
}

struct TopK {
  std::vector<std::vector<std::size_t>> neighbors;
  std::vector<std::vector<std::size_t>> pools;
};

// Full sort of every row by (value, index).
inline TopK full_sort_topk(const Array& d, std::size_t omega) {
  TopK out;
  const std::size_t k = d.rows();
  for (std::size_t a = 0; a < k; ++a) {
    std::vector<std::pair<double, std::size_t>> row;
    for (std::size_t b = 0; b < k; ++b)
      if (b != a) row.emplace_back(d(a, b), b);
    std::sort(row.begin(), row.end());
    std::vector<std::size_t> nb, pool;
    for (std::size_t r = 0; r < row.size(); ++r) {
      if (r < omega) nb.push_back(row[r].second);
      if (r > omega) pool.push_back(row[r].second);
    }
    std::sort(pool.begin(), pool.end());
    out.neighbors.push_back(nb);
    out.pools.push_back(pool);
  }
  return out;
}

// Double-loop argmin in both directions, lowest index on ties.
inline std::vector<std::pair<std::size_t, std::size_t>> brute_force_mnn(const Array& za,
                                                                        const Array& zb) {
  if (za.rows() > 64 || zb.rows() > 64) throw std::invalid_argument("brute_force_mnn: K > 64");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < za.rows(); ++a) {
    std::size_t best_b = 0;
    for (std::size_t b = 1; b < zb.rows(); ++b)
      if (cos_dist(za, a, zb, b) < cos_dist(za, a, zb, best_b)) best_b = b;
    std::size_t best_a = 0;
    for (std::size_t a2 = 1; a2 < za.rows(); ++a2)
      if (cos_dist(za, a2, zb, best_b) < cos_dist(za, best_a, zb, best_b)) best_a = a2;
    if (best_a == a) out.emplace_back(a, best_b);
  }
  return out;
}

struct Triple {
  std::size_t a, p, n;
  bool operator==(const Triple&) const = default;
};

// Direct enumeration of intra triplets with identity correspondence.
inline std::vector<Triple> intra_triples(const TopK& t, const std::vector<std::size_t>& negs,
                                         std::size_t omega) {
  std::vector<Triple> out;
  for (std::size_t a = 0; a < t.neighbors.size(); ++a)
    for (std::size_t r = 0; r < omega; ++r) out.push_back({a, t.neighbors[a][r], negs[a * omega + r]});
  return out;
}

inline std::vector<Triple> inter_triples(const TopK& t, const std::vector<std::size_t>& negs,
                                         std::size_t omega,
                                         const std::vector<std::pair<std::size_t, std::size_t>>& v) {
  auto find = [&v](std::size_t s) -> long {
    for (auto [x, y] : v)
      if (x == s) return static_cast<long>(y);
    return -1;
  };
  std::vector<Triple> out;
  for (auto [a, a2] : v)
    for (std::size_t r = 0; r < omega; ++r) {
      const long p2 = find(t.neighbors[a][r]);
      const long n2 = find(negs[a * omega + r]);
      if (p2 >= 0 && n2 >= 0)
        out.push_back({a2, static_cast<std::size_t>(p2), static_cast<std::size_t>(n2)});
    }
  return out;
}

inline double hinge_mean(const Array& z, const std::vector<Triple>& tri, double delta) {
  if (tri.empty()) return 0.0;
  double s = 0.0;
  for (const Triple& t : tri) s += std::max(0.0, cos_dist(z, t.a, z, t.p) - cos_dist(z, t.a, z, t.n) + delta);
  return s / static_cast<double>(tri.size());
}

struct Alignment {
  double pos, neg, hard, top1, top5, rank, mnn;
};

inline Alignment brute_force_alignment(const Array& za, const Array& zb) {
  const std::size_t k = za.rows();
  Alignment r{};
  double negs = 0.0, pairs = 0.0, correct = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    const double p = cos_dist(za, a, zb, a);
    r.pos += p / static_cast<double>(k);
    double hard = 1e300;
    std::vector<double> all;
    for (std::size_t b = 0; b < k; ++b) {
      if (b == a) continue;
      const double n = cos_dist(za, a, zb, b);
      r.neg += n;
      negs += 1.0;
      hard = std::min(hard, n);
      all.push_back(n);
      pairs += 1.0;
      correct += p < n ? 1.0 : 0.0;
    }
    r.hard += hard / static_cast<double>(k);
    const auto better = std::count_if(all.begin(), all.end(), [p](double n) { return n < p; });
    r.top1 += better == 0 ? 100.0 / static_cast<double>(k) : 0.0;
    r.top5 += better < 5 ? 100.0 / static_cast<double>(k) : 0.0;
  }
  r.neg /= negs;
  r.rank = 100.0 * correct / pairs;
  for (auto [s, t] : brute_force_mnn(za, zb)) r.mnn += s == t ? 100.0 / static_cast<double>(k) : 0.0;
  return r;
}

// Central differences of f with respect to every entry of *x.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, Array* x,
                                            double eps = 1e-5) {
  std::vector<double> g(x->size());
  for (std::size_t i = 0; i < x->size(); ++i) {
    const double keep = x->data[i];
    x->data[i] = keep + eps;
    const double up = f();
    x->data[i] = keep - eps;
    const double down = f();
    x->data[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

// Largest |a-b| / max(floor, |a|, |b|) over entries.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({floor, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace oracle
