#pragma once

// Latent-space evaluation: cross-modal alignment statistics, the rigid-error
// robustness sweep, anatomy cluster purity and a 2-D PCA export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "taco/errors.hpp"
#include "taco/model.hpp"
#include "taco/rng.hpp"
#include "taco/synthdata.hpp"
#include "taco/tensor.hpp"
#include "taco/topology.hpp"

namespace taco {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  bool operator==(const MeanStd&) const = default;
};

struct AlignmentReport {
  std::size_t tokens = 0;
  MeanStd pos_cos_dist;
  MeanStd neg_cos_dist;
  MeanStd hard_neg_cos_dist;
  double neg_pos_gap = 0.0;
  double hard_neg_pos_gap = 0.0;
  double top1_retrieval = 0.0;  // percentages
  double top5_retrieval = 0.0;
  double pairwise_rank_acc = 0.0;
  double mnn_selected_ratio = 0.0;
};

namespace detail {

struct Moments {
  double n = 0.0, sum = 0.0, sumsq = 0.0;
  void add(double x) {
    n += 1.0;
    sum += x;
    sumsq += x * x;
  }
  void merge(const Moments& o) {
    n += o.n;
    sum += o.sum;
    sumsq += o.sumsq;
  }
  MeanStd get() const {
    if (n == 0.0) return {};
    const double m = sum / n;
    return {m, std::sqrt(std::max(0.0, sumsq / n - m * m))};
  }
};

}  // namespace detail

// Raw sums behind an AlignmentReport, so that several token matrix pairs can
// be pooled.
struct AlignmentAccumulator {
  detail::Moments pos, neg, hard;
  double anchors = 0.0, top1 = 0.0, top5 = 0.0;
  double rank_pairs = 0.0, rank_correct = 0.0;
  double mnn_correct = 0.0;

  void merge(const AlignmentAccumulator& o) {
    pos.merge(o.pos);
    neg.merge(o.neg);
    hard.merge(o.hard);
    anchors += o.anchors;
    top1 += o.top1;
    top5 += o.top5;
    rank_pairs += o.rank_pairs;
    rank_correct += o.rank_correct;
    mnn_correct += o.mnn_correct;
  }

  AlignmentReport report() const {
    AlignmentReport r;
    r.tokens = static_cast<std::size_t>(anchors);
    r.pos_cos_dist = pos.get();
    r.neg_cos_dist = neg.get();
    r.hard_neg_cos_dist = hard.get();
    r.neg_pos_gap = r.neg_cos_dist.mean - r.pos_cos_dist.mean;
    r.hard_neg_pos_gap = r.hard_neg_cos_dist.mean - r.pos_cos_dist.mean;
    if (anchors > 0.0) {
      r.top1_retrieval = 100.0 * top1 / anchors;
      r.top5_retrieval = 100.0 * top5 / anchors;
      r.mnn_selected_ratio = 100.0 * mnn_correct / anchors;
    }
    if (rank_pairs > 0.0) r.pairwise_rank_acc = 100.0 * rank_correct / rank_pairs;
    return r;
  }
};

// Identity correspondence between rows of Za and Zb. A token's rank is the
// number of wrong candidates strictly closer than its correspondent, so ties
// count in its favour. With `subset`, both matrices are restricted to those
// rows before anything is computed.
inline AlignmentAccumulator alignment_accumulate(const Array& za, const Array& zb,
                                                 const std::vector<std::size_t>* subset = nullptr) {
  if (za.rank() != 2 || zb.rank() != 2 || za.shape != zb.shape)
    throw DimensionError("alignment: token matrices must have equal shapes, got " +
                         shape_str(za.shape) + " and " + shape_str(zb.shape));
  Array d = cosine_distance(za, zb);
  if (subset) {
    const std::size_t n = subset->size();
    if (n < 2) throw DegenerateInputError("alignment: subset needs at least two tokens");
    Array sub({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) sub(i, j) = d(subset->at(i), subset->at(j));
    d = std::move(sub);
  }
  const std::size_t k = d.rows();
  if (k < 2) throw DegenerateInputError("alignment: need at least two tokens");
  AlignmentAccumulator acc;
  for (std::size_t a = 0; a < k; ++a) {
    const double p = d(a, a);
    acc.pos.add(p);
    double hard = std::numeric_limits<double>::infinity();
    std::size_t closer = 0;
    for (std::size_t b = 0; b < k; ++b) {
      if (b == a) continue;
      const double n = d(a, b);
      acc.neg.add(n);
      hard = std::min(hard, n);
      closer += n < p;
      acc.rank_pairs += 1.0;
      acc.rank_correct += p < n;
    }
    acc.hard.add(hard);
    acc.anchors += 1.0;
    acc.top1 += closer < 1;
    acc.top5 += closer < 5;
  }
  const MatchSet mnn = mutual_nearest_matches(d);
  for (auto [s, t] : mnn.pairs()) acc.mnn_correct += s == t;
  return acc;
}

inline AlignmentReport alignment_metrics(const Array& za, const Array& zb,
                                         const std::vector<std::size_t>* subset = nullptr) {
  return alignment_accumulate(za, zb, subset).report();
}

// Per-subject mean and spread of each field of several reports.
struct AlignmentSummary {
  std::size_t subjects = 0;
  MeanStd pos_cos_dist, neg_cos_dist, hard_neg_cos_dist;
  MeanStd neg_pos_gap, hard_neg_pos_gap;
  MeanStd top1_retrieval, top5_retrieval, pairwise_rank_acc, mnn_selected_ratio;
};

inline AlignmentSummary summarize(const std::vector<AlignmentReport>& reports) {
  AlignmentSummary s;
  s.subjects = reports.size();
  auto field = [&](auto get) {
    detail::Moments m;
    for (const auto& r : reports) m.add(get(r));
    return m.get();
  };
  s.pos_cos_dist = field([](const AlignmentReport& r) { return r.pos_cos_dist.mean; });
  s.neg_cos_dist = field([](const AlignmentReport& r) { return r.neg_cos_dist.mean; });
  s.hard_neg_cos_dist = field([](const AlignmentReport& r) { return r.hard_neg_cos_dist.mean; });
  s.neg_pos_gap = field([](const AlignmentReport& r) { return r.neg_pos_gap; });
  s.hard_neg_pos_gap = field([](const AlignmentReport& r) { return r.hard_neg_pos_gap; });
  s.top1_retrieval = field([](const AlignmentReport& r) { return r.top1_retrieval; });
  s.top5_retrieval = field([](const AlignmentReport& r) { return r.top5_retrieval; });
  s.pairwise_rank_acc = field([](const AlignmentReport& r) { return r.pairwise_rank_acc; });
  s.mnn_selected_ratio = field([](const AlignmentReport& r) { return r.mnn_selected_ratio; });
  return s;
}

// ---------------------------------------------------------------------------
// Robustness to rigid registration errors.

struct RobustnessRow {
  PerturbLevel level = PerturbLevel::clean;
  double pos_cos_dist = 0.0;
  double top1_retrieval = 0.0;
  double mnn_selected_ratio = 0.0;
  std::size_t trials = 0;
};

struct RobustnessOptions {
  std::vector<PerturbLevel> levels{PerturbLevel::clean, PerturbLevel::mild, PerturbLevel::moderate,
                                   PerturbLevel::strong};
  std::size_t seeds = 5;
  std::uint64_t seed = 0;
  std::size_t fixed_modality = 0;
  std::size_t perturbed_modality = 1;
};

// Rows averaged over instances and perturbation seeds. Only
// `perturbed_modality` is moved; the clean row uses the unperturbed volumes.
inline std::vector<RobustnessRow> robustness_sweep(const ModelParams& params, const PatchGrid& grid,
                                                   const std::vector<InstanceSample>& instances,
                                                   const RobustnessOptions& opt) {
  if (instances.empty()) throw ConfigError("robustness: no instances");
  if (opt.seeds == 0) throw ConfigError("robustness: need at least one seed");
  std::vector<RobustnessRow> rows;
  for (PerturbLevel level : opt.levels) {
    RobustnessRow row;
    row.level = level;
    for (const InstanceSample& s : instances) {
      if (s.modalities.size() < 2 || opt.fixed_modality >= s.modalities.size() ||
          opt.perturbed_modality >= s.modalities.size() ||
          opt.fixed_modality == opt.perturbed_modality)
        throw ConfigError("robustness: instance needs two distinct modalities");
      const Array za = encode(params, s.modalities[opt.fixed_modality], grid);
      const std::size_t n = level == PerturbLevel::clean ? 1 : opt.seeds;
      for (std::size_t t = 0; t < n; ++t) {
        const RigidPerturbation p =
            sample_perturbation(level, derive_seed({opt.seed, s.id, static_cast<std::uint64_t>(level), t}));
        const Array zb =
            encode(params, apply_rigid_perturbation(s.modalities[opt.perturbed_modality], p), grid);
        const AlignmentReport r = alignment_metrics(za, zb);
        row.pos_cos_dist += r.pos_cos_dist.mean;
        row.top1_retrieval += r.top1_retrieval;
        row.mnn_selected_ratio += r.mnn_selected_ratio;
        ++row.trials;
      }
    }
    row.pos_cos_dist /= static_cast<double>(row.trials);
    row.top1_retrieval /= static_cast<double>(row.trials);
    row.mnn_selected_ratio /= static_cast<double>(row.trials);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Clustering.

struct KMeansResult {
  std::vector<std::size_t> assignment;
  Array centers;
  std::size_t iterations = 0;
};

// k-means++ seeding then Lloyd iterations until assignments stop changing.
// Ties go to the lowest centre; an emptied cluster keeps its centre.
inline KMeansResult kmeans(const Array& x, std::size_t k, std::uint64_t seed,
                           std::size_t max_iters = 100) {
  if (x.rank() != 2) throw DimensionError("kmeans: expected a matrix");
  const std::size_t n = x.rows(), f = x.cols();
  if (k == 0) throw ConfigError("kmeans: k must be positive");
  {
    std::set<std::vector<double>> distinct;
    for (std::size_t i = 0; i < n && distinct.size() < k; ++i)
      distinct.emplace(x.row(i).begin(), x.row(i).end());
    if (distinct.size() < k)
      throw DegenerateInputError("kmeans: fewer distinct points than clusters");
  }
  auto dist2 = [&](std::size_t i, const double* c) {
    const double* r = x.data.data() + i * f;
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) s += (r[j] - c[j]) * (r[j] - c[j]);
    return s;
  };
  Rng rng(derive_seed({seed, 0x6b6d}));
  KMeansResult out;
  out.centers = Array({k, f});
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(x.data.data() + pick * f, f, out.centers.data.data() + c * f);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], dist2(i, out.centers.data.data() + c * f));
      total += d2[i];
    }
    if (c + 1 == k) break;
    double u = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      if (u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    while (d2[pick] <= 0.0) pick = (pick + n - 1) % n;
  }
  out.assignment.assign(n, k);
  for (out.iterations = 0; out.iterations < max_iters; ++out.iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = dist2(i, out.centers.data.data() + c * f);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      changed |= out.assignment[i] != best;
      out.assignment[i] = best;
    }
    if (!changed) break;
    std::vector<double> sum(k * f, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++cnt[out.assignment[i]];
      for (std::size_t j = 0; j < f; ++j) sum[out.assignment[i] * f + j] += x.data[i * f + j];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (cnt[c])
        for (std::size_t j = 0; j < f; ++j)
          out.centers.data[c * f + j] = sum[c * f + j] / static_cast<double>(cnt[c]);
  }
  return out;
}

inline double purity(const std::vector<std::size_t>& assignment,
                     const std::vector<std::uint16_t>& labels, std::size_t k) {
  if (assignment.size() != labels.size() || labels.empty())
    throw DimensionError("purity: assignment and labels differ in length");
  std::vector<std::map<std::uint16_t, std::size_t>> counts(k);
  for (std::size_t i = 0; i < labels.size(); ++i) ++counts[assignment[i]][labels[i]];
  std::size_t hit = 0;
  for (const auto& c : counts) {
    std::size_t best = 0;
    for (auto [lab, n] : c) best = std::max(best, n);
    hit += best;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// Tokens are L2-normalised first, so clusters follow cosine geometry. With
// k = 0 the number of distinct labels is used.
inline double anatomy_cluster_purity(const Array& tokens, const std::vector<std::uint16_t>& labels,
                                     std::size_t k = 0, std::uint64_t seed = 0) {
  if (tokens.rank() != 2 || tokens.rows() != labels.size())
    throw DimensionError("purity: one label per token required");
  if (k == 0) k = std::set<std::uint16_t>(labels.begin(), labels.end()).size();
  Array x = tokens;
  const auto norms = detail::row_norms(x, "anatomy_cluster_purity");
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (double& v : x.row(i)) v /= norms[i];
  return purity(kmeans(x, k, seed).assignment, labels, k);
}

struct NullBand {
  double lower = 0.0;  // 0.5% quantile
  double upper = 0.0;  // 99.5% quantile
  double mean = 0.0;
  std::size_t trials = 0;
};

// Purity of i.i.d. Gaussian tokens carrying the given labels.
inline NullBand purity_null_band(const std::vector<std::uint16_t>& labels, std::size_t dims,
                                 std::size_t trials, std::uint64_t seed, std::size_t k = 0) {
  if (trials == 0) throw ConfigError("null band: need at least one trial");
  std::vector<double> vals;
  Rng rng(derive_seed({seed, 0x0b1d}));
  for (std::size_t t = 0; t < trials; ++t) {
    Array x({labels.size(), dims});
    for (double& v : x.data) v = rng.normal();
    vals.push_back(anatomy_cluster_purity(x, labels, k, derive_seed({seed, t})));
  }
  std::sort(vals.begin(), vals.end());
  auto q = [&](double p) {
    return vals[static_cast<std::size_t>(std::floor(p * static_cast<double>(vals.size() - 1)))];
  };
  NullBand b;
  b.trials = trials;
  b.lower = q(0.005);
  b.upper = vals[static_cast<std::size_t>(std::ceil(0.995 * static_cast<double>(vals.size() - 1)))];
  for (double v : vals) b.mean += v / static_cast<double>(vals.size());
  return b;
}

// Mean, over ordered pairs of token matrices, of the fraction of MNN pairs
// whose region labels agree.
inline double cross_instance_agreement(const std::vector<Array>& tokens,
                                       const std::vector<std::vector<std::uint16_t>>& labels) {
  if (tokens.size() != labels.size() || tokens.size() < 2)
    throw ConfigError("agreement: need at least two labelled token matrices");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t a = 0; a < tokens.size(); ++a)
    for (std::size_t b = 0; b < tokens.size(); ++b) {
      if (a == b) continue;
      const MatchSet m = mutual_nearest_matches(tokens[a], tokens[b]);
      std::size_t agree = 0;
      for (auto [s, t] : m.pairs()) agree += labels[a].at(s) == labels[b].at(t);
      total += static_cast<double>(agree) / static_cast<double>(m.size());
      ++n;
    }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// PCA.

struct PcaResult {
  Array coords;                      // K x dims
  std::vector<double> eigenvalues;   // all F, descending
  Array components;                  // dims x F, unit rows
  std::vector<double> mean;
};

// Sign convention: the largest-magnitude entry of each component is positive
// (lowest index on ties).
inline PcaResult pca_project(const Array& tokens, std::size_t dims = 2) {
  if (tokens.rank() != 2 || tokens.rows() < 2) throw DimensionError("pca: need at least two rows");
  const std::size_t k = tokens.rows(), f = tokens.cols();
  if (dims == 0 || dims > f) throw ConfigError("pca: dims must lie in [1, F]");
  Eigen::MatrixXd x(k, f);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < f; ++j) x(i, j) = tokens(i, j);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(k);
  if (cov.cwiseAbs().maxCoeff() == 0.0) throw DegenerateInputError("pca: input has rank 0");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw Error("pca: eigendecomposition failed");

  PcaResult out;
  out.mean.assign(mu.data(), mu.data() + f);
  for (std::size_t c = 0; c < f; ++c) out.eigenvalues.push_back(es.eigenvalues()(static_cast<Eigen::Index>(f - 1 - c)));
  out.components = Array({dims, f});
  for (std::size_t c = 0; c < dims; ++c) {
    Eigen::VectorXd v = es.eigenvectors().col(static_cast<Eigen::Index>(f - 1 - c));
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < v.size(); ++j)
      if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
    if (v(arg) < 0) v = -v;
    for (std::size_t j = 0; j < f; ++j) out.components(c, j) = v(static_cast<Eigen::Index>(j));
  }
  out.coords = Array({k, dims});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t c = 0; c < dims; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < f; ++j) s += x(i, j) * out.components(c, j);
      out.coords(i, c) = s;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Cohort evaluation shared by the CLI and the acceptance checks.

struct EvalOptions {
  // Number of held-out instances pooled for purity and agreement.
  std::size_t purity_instances = 4;
  std::size_t purity_modalities = 2;
  std::size_t null_trials = 1000;
  std::uint64_t seed = 0;
  bool foreground_only = false;
};

struct EvalReport {
  AlignmentSummary summary;
  AlignmentReport pooled;
  std::vector<AlignmentReport> per_subject;  // one per (instance, modality pair)
  double purity = 0.0;
  std::optional<NullBand> null_band;
  double cross_instance_agreement = 0.0;
};

// Alignment over every modality pair i < j of every instance; purity and
// agreement on the first `purity_instances` instances.
inline EvalReport evaluate(const ModelParams& params, const PatchGrid& grid,
                           const std::vector<InstanceSample>& instances, const EvalOptions& opt) {
  if (instances.empty()) throw ConfigError("evaluate: no instances");
  EvalReport rep;
  AlignmentAccumulator pooled;
  std::vector<std::vector<Array>> z;
  std::vector<std::vector<std::uint16_t>> tok_labels;
  for (const InstanceSample& s : instances) {
    std::vector<Array> zs;
    for (const Volume& v : s.modalities) zs.push_back(encode(params, v, grid));
    tok_labels.push_back(token_region_labels(s.labels, grid));
    std::vector<std::size_t> fg;
    for (std::size_t k = 0; k < tok_labels.back().size(); ++k)
      if (tok_labels.back()[k] != 0) fg.push_back(k);
    for (std::size_t i = 0; i < zs.size(); ++i)
      for (std::size_t j = i + 1; j < zs.size(); ++j) {
        const auto acc = alignment_accumulate(zs[i], zs[j], opt.foreground_only ? &fg : nullptr);
        rep.per_subject.push_back(acc.report());
        pooled.merge(acc);
      }
    z.push_back(std::move(zs));
  }
  rep.summary = summarize(rep.per_subject);
  rep.pooled = pooled.report();

  const std::size_t ni = std::min(opt.purity_instances, instances.size());
  const std::size_t nm = std::min(opt.purity_modalities, instances.front().modalities.size());
  const std::size_t f = z.front().front().cols();
  std::vector<std::uint16_t> labels;
  std::vector<double> rows;
  for (std::size_t h = 0; h < ni; ++h)
    for (std::size_t m = 0; m < nm; ++m) {
      rows.insert(rows.end(), z[h][m].data.begin(), z[h][m].data.end());
      labels.insert(labels.end(), tok_labels[h].begin(), tok_labels[h].end());
    }
  const Array pooled_tokens({labels.size(), f}, std::move(rows));
  rep.purity = anatomy_cluster_purity(pooled_tokens, labels, 0, opt.seed);
  if (opt.null_trials) rep.null_band = purity_null_band(labels, f, opt.null_trials, opt.seed);
  if (ni >= 2) {
    std::vector<Array> zt;
    std::vector<std::vector<std::uint16_t>> lt;
    for (std::size_t h = 0; h < ni; ++h) {
      zt.push_back(z[h][0]);
      lt.push_back(tok_labels[h]);
    }
    rep.cross_instance_agreement = cross_instance_agreement(zt, lt);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Serialisation.

inline nlohmann::ordered_json to_json(const MeanStd& m) {
  return {{"mean", m.mean}, {"std", m.std}};
}

inline nlohmann::ordered_json to_json(const AlignmentReport& r) {
  return {{"tokens", r.tokens},
          {"pos_cos_dist", to_json(r.pos_cos_dist)},
          {"neg_cos_dist", to_json(r.neg_cos_dist)},
          {"hard_neg_cos_dist", to_json(r.hard_neg_cos_dist)},
          {"neg_pos_gap", r.neg_pos_gap},
          {"hard_neg_pos_gap", r.hard_neg_pos_gap},
          {"top1_retrieval", r.top1_retrieval},
          {"top5_retrieval", r.top5_retrieval},
          {"pairwise_rank_acc", r.pairwise_rank_acc},
          {"mnn_selected_ratio", r.mnn_selected_ratio}};
}

inline nlohmann::ordered_json to_json(const AlignmentSummary& s) {
  return {{"subjects", s.subjects},
          {"pos_cos_dist", to_json(s.pos_cos_dist)},
          {"neg_cos_dist", to_json(s.neg_cos_dist)},
          {"hard_neg_cos_dist", to_json(s.hard_neg_cos_dist)},
          {"neg_pos_gap", to_json(s.neg_pos_gap)},
          {"hard_neg_pos_gap", to_json(s.hard_neg_pos_gap)},
          {"top1_retrieval", to_json(s.top1_retrieval)},
          {"top5_retrieval", to_json(s.top5_retrieval)},
          {"pairwise_rank_acc", to_json(s.pairwise_rank_acc)},
          {"mnn_selected_ratio", to_json(s.mnn_selected_ratio)}};
}

inline nlohmann::ordered_json to_json(const RobustnessRow& r) {
  return {{"level", to_string(r.level)},
          {"pos_cos_dist", r.pos_cos_dist},
          {"top1_retrieval", r.top1_retrieval},
          {"mnn_selected_ratio", r.mnn_selected_ratio},
          {"trials", r.trials}};
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["alignment"] = to_json(r.summary);
  j["alignment_pooled"] = to_json(r.pooled);
  j["per_subject"] = nlohmann::ordered_json::array();
  for (const auto& s : r.per_subject) j["per_subject"].push_back(to_json(s));
  j["anatomy_cluster_purity"] = r.purity;
  if (r.null_band)
    j["purity_null_band"] = {{"lower", r.null_band->lower},
                             {"upper", r.null_band->upper},
                             {"mean", r.null_band->mean},
                             {"trials", r.null_band->trials}};
  j["cross_instance_agreement"] = r.cross_instance_agreement;
  return j;
}

inline std::string robustness_csv(const std::vector<RobustnessRow>& rows) {
  std::string out = "level,pos_cos_dist,top1_retrieval,mnn_selected_ratio,trials\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%zu\n", to_string(r.level).c_str(),
                  r.pos_cos_dist, r.top1_retrieval, r.mnn_selected_ratio, r.trials);
    out += buf;
  }
  return out;
}

struct EmbeddingRow {
  std::size_t token_id;
  std::uint16_t region_label;
  std::string modality;
  double pc1, pc2;
};

inline std::string embedding_csv(const std::vector<EmbeddingRow>& rows) {
  std::string out = "token_id,region_label,modality,pc1,pc2\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%u,%s,%.10g,%.10g\n", r.token_id,
                  static_cast<unsigned>(r.region_label), r.modality.c_str(), r.pc1, r.pc2);
    out += buf;
  }
  return out;
}

}  // namespace taco
