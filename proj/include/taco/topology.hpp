#pragma once

// Non-differentiated index machinery: top-omega neighbourhoods, negative
// pools, mutual-nearest-neighbour matching and triplet construction.
//
// Every argmin/argsort breaks ties towards the lowest index.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "taco/errors.hpp"
#include "taco/rng.hpp"
#include "taco/tensor.hpp"

namespace taco {

// Per-anchor neighbour indices (exactly omega each) and negative pools.
class NeighborSets {
 public:
  NeighborSets() = default;
  NeighborSets(std::size_t omega, std::vector<std::vector<std::size_t>> neighbors,
               std::vector<std::vector<std::size_t>> pools)
      : omega_(omega), neighbors_(std::move(neighbors)), pools_(std::move(pools)) {
    if (omega_ == 0) throw ConfigError("omega must be positive");
    if (neighbors_.size() != pools_.size())
      throw DimensionError("neighbour and pool lists cover different anchor counts");
    for (const auto& n : neighbors_)
      if (n.size() != omega_) throw DimensionError("every anchor needs exactly omega neighbours");
  }

  std::size_t omega() const noexcept { return omega_; }
  std::size_t anchor_count() const noexcept { return neighbors_.size(); }
  std::span<const std::size_t> neighbors(std::size_t anchor) const { return neighbors_.at(anchor); }
  // Ascending index order.
  std::span<const std::size_t> negative_pool(std::size_t anchor) const { return pools_.at(anchor); }

 private:
  std::size_t omega_ = 0;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::vector<std::vector<std::size_t>> pools_;
};

// omega sampled negatives per anchor, row-major [anchor][rank].
struct NegativeSamples {
  std::size_t omega = 0;
  std::vector<std::size_t> indices;

  std::span<const std::size_t> of(std::size_t anchor) const {
    return {indices.data() + anchor * omega, omega};
  }
};

// Mutual-nearest-neighbour pairs (source a, target a'); a partial injection.
class MatchSet {
 public:
  MatchSet() = default;
  MatchSet(std::vector<std::pair<std::size_t, std::size_t>> pairs, std::size_t source_count,
           std::size_t target_count)
      : pairs_(std::move(pairs)),
        source_count_(source_count),
        target_count_(target_count),
        forward_(source_count) {
    std::vector<bool> seen_target(target_count, false);
    for (auto [a, b] : pairs_) {
      if (a >= source_count || b >= target_count)
        throw DimensionError("match index out of range");
      if (forward_[a] || seen_target[b])
        throw DimensionError("match set is not injective");
      forward_[a] = b;
      seen_target[b] = true;
    }
  }

  static MatchSet identity(std::size_t k) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs(k);
    for (std::size_t i = 0; i < k; ++i) pairs[i] = {i, i};
    return MatchSet(std::move(pairs), k, k);
  }

  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const noexcept { return pairs_; }
  std::size_t size() const noexcept { return pairs_.size(); }
  bool empty() const noexcept { return pairs_.empty(); }
  std::size_t source_count() const noexcept { return source_count_; }
  std::size_t target_count() const noexcept { return target_count_; }

  std::optional<std::size_t> target_of(std::size_t source) const {
    if (source >= forward_.size()) return std::nullopt;
    return forward_[source];
  }

  bool operator==(const MatchSet& o) const {
    return pairs_ == o.pairs_ && source_count_ == o.source_count_ &&
           target_count_ == o.target_count_;
  }

 private:
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::size_t source_count_ = 0;
  std::size_t target_count_ = 0;
  std::vector<std::optional<std::size_t>> forward_;
};

// Token correspondence: positional identity (same instance, registered
// modalities) or an MNN pseudo-correspondence. Lookups on unmatched tokens
// return nullopt.
class Correspondence {
 public:
  enum class Kind { identity, mnn };

  static Correspondence identity(std::size_t k) { return Correspondence(Kind::identity, k, {}); }
  static Correspondence mnn(MatchSet matches) {
    const std::size_t k = matches.source_count();
    return Correspondence(Kind::mnn, k, std::move(matches));
  }

  Kind kind() const noexcept { return kind_; }
  std::size_t source_count() const noexcept { return k_; }

  std::optional<std::size_t> map(std::size_t source) const {
    if (kind_ == Kind::identity) {
      if (source < k_) return source;
      return std::nullopt;
    }
    return matches_.target_of(source);
  }

 private:
  Correspondence(Kind kind, std::size_t k, MatchSet matches)
      : kind_(kind), k_(k), matches_(std::move(matches)) {}
  Kind kind_;
  std::size_t k_;
  MatchSet matches_;
};

struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
  bool operator==(const Triplet&) const = default;
};

// Which token matrices produced (source) and receive (target) a triplet set.
struct TripletSource {
  std::uint64_t source_instance = 0;
  std::size_t source_modality = 0;
  std::uint64_t target_instance = 0;
  std::size_t target_modality = 0;
  bool operator==(const TripletSource&) const = default;
};

// Index triples into the target token matrix.
struct TripletSet {
  std::vector<Triplet> triples;
  TripletSource source;

  std::size_t size() const noexcept { return triples.size(); }
  bool empty() const noexcept { return triples.empty(); }
};

// Neighbourhoods from a square distance matrix. Row a is ordered by
// (distance, index) over off-diagonal entries; the first omega are the
// neighbours, the next one is a skipped buffer, and the rest form the
// negative pool.
inline NeighborSets topk_neighbors(const Array& dist, std::size_t omega) {
  if (dist.rank() != 2 || dist.rows() != dist.cols())
    throw DimensionError("topk_neighbors: distance matrix must be square");
  if (omega == 0) throw ConfigError("topk_neighbors: omega must be positive");
  const std::size_t k = dist.rows();
  if (k < omega + 3)
    throw InsufficientTokensError("topk_neighbors: " + std::to_string(k) + " tokens for omega " +
                                  std::to_string(omega) + " (need at least omega + 3)");
  std::vector<std::vector<std::size_t>> neighbors(k), pools(k);
  std::vector<std::size_t> order;
  order.reserve(k - 1);
  std::vector<char> excluded(k, 0);
  for (std::size_t a = 0; a < k; ++a) {
    order.clear();
    for (std::size_t o = 0; o < k; ++o)
      if (o != a) order.push_back(o);
    const auto* row = dist.data.data() + a * k;
    auto closer = [row](std::size_t x, std::size_t y) {
      return row[x] < row[y] || (row[x] == row[y] && x < y);
    };
    // neighbours plus the buffer slot
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(omega + 1),
                      order.end(), closer);
    neighbors[a].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(omega));
    for (std::size_t r = 0; r <= omega; ++r) excluded[order[r]] = 1;
    excluded[a] = 1;
    pools[a].reserve(k - omega - 2);
    for (std::size_t o = 0; o < k; ++o)
      if (!excluded[o]) pools[a].push_back(o);
    for (std::size_t r = 0; r <= omega; ++r) excluded[order[r]] = 0;
    excluded[a] = 0;
  }
  return NeighborSets(omega, std::move(neighbors), std::move(pools));
}

// omega uniform draws per anchor from its pool: without replacement when the
// pool is large enough, with replacement otherwise.
inline NegativeSamples sample_negatives(const NeighborSets& sets, std::size_t omega,
                                        std::uint64_t seed) {
  if (omega == 0) throw ConfigError("sample_negatives: omega must be positive");
  Rng rng(seed);
  NegativeSamples out{omega, std::vector<std::size_t>(sets.anchor_count() * omega)};
  std::vector<std::size_t> scratch;
  for (std::size_t a = 0; a < sets.anchor_count(); ++a) {
    const auto pool = sets.negative_pool(a);
    if (pool.empty())
      throw InsufficientTokensError("sample_negatives: empty negative pool for anchor " +
                                    std::to_string(a));
    std::size_t* dst = out.indices.data() + a * omega;
    if (pool.size() >= omega) {
      scratch.assign(pool.begin(), pool.end());
      for (std::size_t r = 0; r < omega; ++r) {
        const std::size_t j = r + static_cast<std::size_t>(rng.below(scratch.size() - r));
        std::swap(scratch[r], scratch[j]);
        dst[r] = scratch[r];
      }
    } else {
      for (std::size_t r = 0; r < omega; ++r) dst[r] = pool[rng.below(pool.size())];
    }
  }
  return out;
}

// Pairs (a, a') where a' is the row argmin of D[a,:] and a is the column
// argmin of D[:,a'].
inline MatchSet mutual_nearest_matches(const Array& dist) {
  if (dist.rank() != 2) throw DimensionError("mutual_nearest_matches: expected a matrix");
  const std::size_t ka = dist.rows(), kb = dist.cols();
  std::vector<std::size_t> row_min(ka, 0), col_min(kb, 0);
  for (std::size_t a = 0; a < ka; ++a) {
    const double* row = dist.data.data() + a * kb;
    std::size_t best = 0;
    for (std::size_t b = 1; b < kb; ++b)
      if (row[b] < row[best]) best = b;
    row_min[a] = best;
  }
  std::vector<double> best_val(kb);
  for (std::size_t b = 0; b < kb; ++b) best_val[b] = dist.data[b];
  for (std::size_t a = 1; a < ka; ++a) {
    const double* row = dist.data.data() + a * kb;
    for (std::size_t b = 0; b < kb; ++b)
      if (row[b] < best_val[b]) {
        best_val[b] = row[b];
        col_min[b] = a;
      }
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < ka; ++a)
    if (col_min[row_min[a]] == a) pairs.emplace_back(a, row_min[a]);
  return MatchSet(std::move(pairs), ka, kb);
}

inline MatchSet mutual_nearest_matches(const Array& za, const Array& zb) {
  if (za.rank() != 2 || zb.rank() != 2 || za.rows() == 0 || zb.rows() == 0)
    throw DimensionError("mutual_nearest_matches: token matrices must be non-empty");
  return mutual_nearest_matches(cosine_distance(za, zb));
}

// For each anchor a and rank r: (C(a), C(nbr_r(a)), C(neg_r(a))); K*omega triples.
inline TripletSet build_intra_triplets(const NeighborSets& sets, const NegativeSamples& negs,
                                       const Correspondence& corr, TripletSource source = {}) {
  if (negs.omega != sets.omega() || negs.indices.size() != sets.anchor_count() * sets.omega())
    throw DimensionError("build_intra_triplets: negatives do not match the neighbour sets");
  auto mapped = [&corr](std::size_t i) {
    auto m = corr.map(i);
    if (!m) throw ConfigError("build_intra_triplets: correspondence is not total");
    return *m;
  };
  TripletSet out;
  out.source = source;
  out.triples.reserve(sets.anchor_count() * sets.omega());
  for (std::size_t a = 0; a < sets.anchor_count(); ++a) {
    const std::size_t a2 = mapped(a);
    const auto nb = sets.neighbors(a);
    const auto ng = negs.of(a);
    for (std::size_t r = 0; r < sets.omega(); ++r)
      out.triples.push_back({a2, mapped(nb[r]), mapped(ng[r])});
  }
  return out;
}

// For each matched anchor (a, a') and rank r, emits (a', p', n') when both the
// r-th neighbour and r-th negative of a are matched; otherwise the rank is
// skipped.
inline TripletSet build_inter_triplets(const NeighborSets& sets, const NegativeSamples& negs,
                                       const MatchSet& matches, TripletSource source = {}) {
  if (negs.omega != sets.omega() || negs.indices.size() != sets.anchor_count() * sets.omega())
    throw DimensionError("build_inter_triplets: negatives do not match the neighbour sets");
  if (matches.source_count() != sets.anchor_count())
    throw DimensionError("build_inter_triplets: match set and neighbour sets disagree on K");
  TripletSet out;
  out.source = source;
  for (auto [a, a2] : matches.pairs()) {
    const auto nb = sets.neighbors(a);
    const auto ng = negs.of(a);
    for (std::size_t r = 0; r < sets.omega(); ++r) {
      const auto p2 = matches.target_of(nb[r]);
      const auto n2 = matches.target_of(ng[r]);
      if (p2 && n2) out.triples.push_back({a2, *p2, *n2});
    }
  }
  return out;
}

}  // namespace taco
