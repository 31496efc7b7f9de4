#pragma once

// Differentiable training objectives: reconstruction, the intra-instance
// cross-modal neighbourhood-ranking loss and the inter-instance MNN loss.
//
// Index selection (neighbourhoods, negatives, matches) always runs on
// detached feature values; gradients flow only through the triplet distances
// evaluated in the target token matrix.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "taco/errors.hpp"
#include "taco/rng.hpp"
#include "taco/tensor.hpp"
#include "taco/topology.hpp"

namespace taco {

class Margin {
 public:
  explicit Margin(double delta = 0.3) : delta_(delta) {
    if (!(delta > 0.0 && delta < 2.0)) throw ConfigError("margin delta must lie in (0, 2)");
  }
  double value() const noexcept { return delta_; }

 private:
  double delta_;
};

struct LossReport {
  double l_uni = 0.0;
  double l_intra = 0.0;
  double l_inter = 0.0;
  double l_total = 0.0;
  std::size_t uni_terms = 0;
  std::size_t intra_triplets = 0;
  std::size_t inter_triplets = 0;
  // Share of triplets (intra and inter) whose hinge is strictly positive.
  double active_fraction = 0.0;
};

// A scalar loss on the tape plus triplet bookkeeping.
struct LossTerm {
  Tensor value;
  std::size_t triplets = 0;
  std::size_t active = 0;
};

inline Tensor reconstruction_loss(const Tensor& xhat, const Tensor& x) { return mse(xhat, x); }

// Mean over triples of max(0, d(a,p) - d(a,n) + delta) in `target`; 0 for an
// empty set.
inline LossTerm triplet_hinge_mean(const Tensor& target, const TripletSet& triples,
                                   const Margin& delta) {
  Tape& tape = target.tape();
  if (triples.empty()) return {tape.constant(Array::scalar(0.0)), 0, 0};
  std::vector<std::size_t> a(triples.size()), p(triples.size()), n(triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    a[i] = triples.triples[i].anchor;
    p[i] = triples.triples[i].positive;
    n[i] = triples.triples[i].negative;
  }
  Tensor d_pos = row_pair_cosine_distance(target, a, p);
  Tensor d_neg = row_pair_cosine_distance(target, std::move(a), std::move(n));
  Tensor margin = tape.constant(Array({triples.size()}, delta.value()));
  Tensor h = hinge(add(sub(d_pos, d_neg), margin));
  std::size_t active = 0;
  for (double v : h.values()) active += v > 0.0;
  return {mean(h), triples.size(), active};
}

// Token features of one instance in a batch, one matrix per modality.
struct InstanceFeatures {
  std::uint64_t instance_id = 0;
  std::vector<Tensor> modalities;
};

// One directed cross-instance term: source (instance h, modality i) shapes
// the triplets evaluated in target (instance g, modality t). Indices refer to
// positions in the batch.
struct InterPair {
  std::size_t source_instance;
  std::size_t source_modality;
  std::size_t target_instance;
  std::size_t target_modality;
};

struct LossOptions {
  std::size_t omega = 5;
  Margin delta{0.3};
  // Already mixed with step/epoch by the caller; per-term seeds are derived
  // from it and the instance/modality ids.
  std::uint64_t seed = 0;
  std::function<void(const std::string&)> warn;
};

namespace detail {

inline Array selection_distances(const Tensor& z) { return cosine_distance(z.value(), z.value()); }

inline void check_same_tape(const Tensor& a, const Tensor& b) { (void)same_tape(a, b); }

}  // namespace detail

// Directional intra term i -> j for one instance: neighbourhoods from
// detached Z_i, identity correspondence, hinge mean in live Z_j.
inline LossTerm intra_pair_term(const Tensor& source, const Tensor& target, std::size_t omega,
                                const Margin& delta, std::uint64_t negative_seed,
                                TripletSource tag = {}) {
  detail::check_same_tape(source, target);
  if (source.shape() != target.shape())
    throw DimensionError("intra term: modalities of one instance must share K and F");
  const NeighborSets sets = topk_neighbors(detail::selection_distances(source), omega);
  const NegativeSamples negs = sample_negatives(sets, omega, negative_seed);
  const TripletSet triples =
      build_intra_triplets(sets, negs, Correspondence::identity(sets.anchor_count()), tag);
  return triplet_hinge_mean(target, triples, delta);
}

// Directional inter term: MNN matches between detached source and target,
// neighbourhoods from detached source, hinge mean in live target. A forced
// match set replaces the MNN computation.
inline LossTerm inter_pair_term(const Tensor& source, const Tensor& target, std::size_t omega,
                                const Margin& delta, std::uint64_t negative_seed,
                                const MatchSet* forced_matches = nullptr,
                                TripletSource tag = {}) {
  detail::check_same_tape(source, target);
  const MatchSet matches =
      forced_matches ? *forced_matches : mutual_nearest_matches(source.value(), target.value());
  const NeighborSets sets = topk_neighbors(detail::selection_distances(source), omega);
  const NegativeSamples negs = sample_negatives(sets, omega, negative_seed);
  const TripletSet triples = build_inter_triplets(sets, negs, matches, tag);
  return triplet_hinge_mean(target, triples, delta);
}

inline std::uint64_t intra_seed(std::uint64_t base, std::uint64_t instance, std::size_t i,
                                std::size_t j) {
  return derive_seed({base, 0x1a7a, instance, i, j});
}

inline std::uint64_t inter_seed(std::uint64_t base, std::uint64_t h, std::size_t i,
                                std::uint64_t g, std::size_t t) {
  return derive_seed({base, 0x17e7, h, i, g, t});
}

namespace detail {

inline LossTerm average_terms(Tape& tape, const std::vector<LossTerm>& terms) {
  if (terms.empty()) return {tape.constant(Array::scalar(0.0)), 0, 0};
  LossTerm out{terms.front().value, terms.front().triplets, terms.front().active};
  for (std::size_t i = 1; i < terms.size(); ++i) {
    out.value = add(out.value, terms[i].value);
    out.triplets += terms[i].triplets;
    out.active += terms[i].active;
  }
  out.value = scale(out.value, 1.0 / static_cast<double>(terms.size()));
  return out;
}

inline Tape& batch_tape(const std::vector<InstanceFeatures>& batch) {
  for (const auto& inst : batch)
    if (!inst.modalities.empty()) return inst.modalities.front().tape();
  throw ConfigError("loss over an empty batch");
}

}  // namespace detail

// Mean of the directional terms over every instance and ordered modality
// pair (i, j), i != j. Instances with a single modality are skipped.
inline LossTerm intra_loss(const std::vector<InstanceFeatures>& batch, const LossOptions& opt) {
  Tape& tape = detail::batch_tape(batch);
  std::vector<LossTerm> terms;
  for (const auto& inst : batch) {
    const std::size_t m = inst.modalities.size();
    if (m < 2) {
      if (opt.warn)
        opt.warn("intra_loss: instance " + std::to_string(inst.instance_id) +
                 " has fewer than two modalities; skipped");
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) {
      const Tensor& src = inst.modalities[i];
      const NeighborSets sets = topk_neighbors(detail::selection_distances(src), opt.omega);
      const Correspondence ident = Correspondence::identity(sets.anchor_count());
      for (std::size_t j = 0; j < m; ++j) {
        if (i == j) continue;
        const Tensor& tgt = inst.modalities[j];
        if (tgt.shape() != src.shape())
          throw DimensionError("intra_loss: modalities of one instance must share K and F");
        const NegativeSamples negs =
            sample_negatives(sets, opt.omega, intra_seed(opt.seed, inst.instance_id, i, j));
        const TripletSet triples = build_intra_triplets(
            sets, negs, ident, {inst.instance_id, i, inst.instance_id, j});
        terms.push_back(triplet_hinge_mean(tgt, triples, opt.delta));
      }
    }
  }
  return detail::average_terms(tape, terms);
}

// Mean of the directed cross-instance terms; a pair whose triplet set is
// empty contributes 0.
inline LossTerm inter_loss(const std::vector<InstanceFeatures>& batch,
                           const std::vector<InterPair>& pairing, const LossOptions& opt) {
  Tape& tape = detail::batch_tape(batch);
  std::vector<LossTerm> terms;
  terms.reserve(pairing.size());
  for (const InterPair& p : pairing) {
    if (p.source_instance >= batch.size() || p.target_instance >= batch.size())
      throw ConfigError("inter_loss: pairing refers outside the batch");
    const auto& hs = batch[p.source_instance];
    const auto& gs = batch[p.target_instance];
    if (hs.instance_id == gs.instance_id)
      throw ConfigError("inter_loss: pairs must join distinct instances");
    if (p.source_modality >= hs.modalities.size() || p.target_modality >= gs.modalities.size())
      throw ConfigError("inter_loss: modality index out of range");
    terms.push_back(inter_pair_term(
        hs.modalities[p.source_modality], gs.modalities[p.target_modality], opt.omega, opt.delta,
        inter_seed(opt.seed, hs.instance_id, p.source_modality, gs.instance_id,
                   p.target_modality),
        nullptr, {hs.instance_id, p.source_modality, gs.instance_id, p.target_modality}));
  }
  return detail::average_terms(tape, terms);
}

struct TotalLoss {
  Tensor value;
  LossReport report;
};

// Unweighted sum of the three objectives.
inline TotalLoss total_loss(const Tensor& l_uni, const LossTerm& l_intra, const LossTerm& l_inter,
                            std::size_t uni_terms = 1) {
  TotalLoss out;
  out.value = add(add(l_uni, l_intra.value), l_inter.value);
  LossReport& r = out.report;
  r.l_uni = l_uni.item();
  r.l_intra = l_intra.value.item();
  r.l_inter = l_inter.value.item();
  r.l_total = out.value.item();
  r.uni_terms = uni_terms;
  r.intra_triplets = l_intra.triplets;
  r.inter_triplets = l_inter.triplets;
  const std::size_t all = l_intra.triplets + l_inter.triplets;
  r.active_fraction =
      all ? static_cast<double>(l_intra.active + l_inter.active) / static_cast<double>(all) : 0.0;
  return out;
}

}  // namespace taco
