#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "taco/metrics.hpp"
#include "taco/rng.hpp"

using namespace taco;

namespace {

Array random_tokens(std::size_t k, std::size_t f, Rng& rng) {
  Array z({k, f});
  for (double& v : z.data) v = rng.uniform(-1.0, 1.0);
  return z;
}

void expect_matches_oracle(const AlignmentReport& r, const oracle::Alignment& o, double tol) {
  EXPECT_NEAR(r.pos_cos_dist.mean, o.pos, tol);
  EXPECT_NEAR(r.neg_cos_dist.mean, o.neg, tol);
  EXPECT_NEAR(r.hard_neg_cos_dist.mean, o.hard, tol);
  EXPECT_NEAR(r.top1_retrieval, o.top1, 1e-9);
  EXPECT_NEAR(r.top5_retrieval, o.top5, 1e-9);
  EXPECT_NEAR(r.pairwise_rank_acc, o.rank, 1e-9);
  EXPECT_NEAR(r.mnn_selected_ratio, o.mnn, 1e-9);
}

}  // namespace

TEST(Alignment, IdentityInput) {
  Rng rng(1);
  Array z = random_tokens(12, 5, rng);
  auto r = alignment_metrics(z, z);
  EXPECT_NEAR(r.pos_cos_dist.mean, 0.0, 1e-12);
  EXPECT_EQ(r.top1_retrieval, 100.0);
  EXPECT_EQ(r.pairwise_rank_acc, 100.0);
  EXPECT_EQ(r.mnn_selected_ratio, 100.0);
  EXPECT_EQ(r.tokens, 12u);
}

TEST(Alignment, HandBuiltThreeTokens) {
  // Zb swaps the last two basis vectors of Za.
  Array za = Array::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  Array zb = Array::matrix({{1, 0, 0}, {0, 0, 1}, {0, 1, 0}});
  auto r = alignment_metrics(za, zb);
  EXPECT_NEAR(r.pos_cos_dist.mean, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.neg_cos_dist.mean, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.hard_neg_cos_dist.mean, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.neg_pos_gap, 0.0, 1e-12);
  EXPECT_NEAR(r.hard_neg_pos_gap, -1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.top1_retrieval, 100.0 / 3.0, 1e-9);
  EXPECT_NEAR(r.top5_retrieval, 100.0, 1e-9);
  EXPECT_NEAR(r.pairwise_rank_acc, 100.0 / 3.0, 1e-9);
  EXPECT_NEAR(r.mnn_selected_ratio, 100.0 / 3.0, 1e-9);
  expect_matches_oracle(r, oracle::brute_force_alignment(za, zb), 1e-12);
}

TEST(Alignment, MatchesBruteForceOnRandomInstances) {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 2 + rng.below(15), f = 1 + rng.below(6);
    Array za = random_tokens(k, f, rng);
    Array zb = random_tokens(k, f, rng);
    // partially correlated so retrieval is neither always 0 nor always 100
    for (std::size_t i = 0; i < zb.size(); ++i) zb.data[i] = 0.7 * za.data[i] + 0.3 * zb.data[i];
    auto r = alignment_metrics(za, zb);
    expect_matches_oracle(r, oracle::brute_force_alignment(za, zb), 1e-12);
    EXPECT_NEAR(r.neg_pos_gap, r.neg_cos_dist.mean - r.pos_cos_dist.mean, 1e-12);
    EXPECT_NEAR(r.hard_neg_pos_gap, r.hard_neg_cos_dist.mean - r.pos_cos_dist.mean, 1e-12);
    for (double pct : {r.top1_retrieval, r.top5_retrieval, r.pairwise_rank_acc, r.mnn_selected_ratio}) {
      EXPECT_GE(pct, 0.0);
      EXPECT_LE(pct, 100.0);
    }
  }
}

TEST(Alignment, ScaleInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Array za = random_tokens(10, 4, rng), zb = random_tokens(10, 4, rng);
    const auto base = alignment_metrics(za, zb);
    for (double c : {0.1, 10.0, 1e4}) {
      Array s = zb;
      for (double& v : s.data) v *= c;
      const auto r = alignment_metrics(za, s);
      EXPECT_EQ(r.mnn_selected_ratio, base.mnn_selected_ratio);
      EXPECT_NEAR(r.pos_cos_dist.mean, base.pos_cos_dist.mean, 1e-12);
    }
  }
}

TEST(Alignment, ShapeMismatchRejected) {
  EXPECT_THROW(alignment_metrics(Array({4, 3}, 1.0), Array({5, 3}, 1.0)), DimensionError);
}

TEST(Alignment, PooledAccumulatorAndSummary) {
  Rng rng(4);
  Array a1 = random_tokens(8, 3, rng), b1 = random_tokens(8, 3, rng);
  Array a2 = random_tokens(6, 3, rng), b2 = random_tokens(6, 3, rng);
  auto acc = alignment_accumulate(a1, b1);
  acc.merge(alignment_accumulate(a2, b2));
  const auto pooled = acc.report();
  const auto r1 = alignment_metrics(a1, b1), r2 = alignment_metrics(a2, b2);
  EXPECT_NEAR(pooled.top1_retrieval, (r1.top1_retrieval * 8 + r2.top1_retrieval * 6) / 14, 1e-9);
  EXPECT_EQ(pooled.tokens, 14u);
  const auto s = summarize({r1, r2});
  EXPECT_NEAR(s.top1_retrieval.mean, (r1.top1_retrieval + r2.top1_retrieval) / 2, 1e-12);
  EXPECT_NEAR(s.top1_retrieval.std, std::abs(r1.top1_retrieval - r2.top1_retrieval) / 2, 1e-9);
}

TEST(Robustness, CleanRowAndIdentityPerturbation) {
  SynthConfig cfg;
  cfg.volume_shape = {16, 16, 16};
  cfg.modalities = 2;
  auto cohort = generate_cohort(AnatomyTemplate::standard(), cfg, 2, 21);
  ModelConfig mc;
  mc.feature_dim = 8;
  mc.hidden_dim = 16;
  const ModelParams params = ModelParams::init(mc, 1);
  const PatchGrid grid({16, 16, 16}, {4, 4, 4});
  RobustnessOptions opt;
  opt.levels = {PerturbLevel::clean, PerturbLevel::strong};
  opt.seeds = 2;
  const std::vector<InstanceSample> one{cohort[0]};
  auto rows = robustness_sweep(params, grid, one, opt);
  ASSERT_EQ(rows.size(), 2u);
  const Array za = encode(params, cohort[0].modalities[0], grid);
  const Array zb = encode(params, cohort[0].modalities[1], grid);
  const auto clean = alignment_metrics(za, zb);
  EXPECT_EQ(rows[0].top1_retrieval, clean.top1_retrieval);
  EXPECT_EQ(rows[0].pos_cos_dist, clean.pos_cos_dist.mean);
  EXPECT_EQ(rows[0].mnn_selected_ratio, clean.mnn_selected_ratio);
  EXPECT_EQ(rows[0].trials, 1u);
  EXPECT_EQ(rows[1].trials, 2u);
  EXPECT_GT(rows[1].pos_cos_dist, rows[0].pos_cos_dist);

  const RigidPerturbation zero{{}, {}, PerturbLevel::strong};
  const Array zp = encode(params, apply_rigid_perturbation(cohort[0].modalities[1], zero), grid);
  const auto same = alignment_metrics(za, zp);
  EXPECT_EQ(same.top1_retrieval, clean.top1_retrieval);
  EXPECT_EQ(same.pos_cos_dist.mean, clean.pos_cos_dist.mean);
  EXPECT_EQ(same.mnn_selected_ratio, clean.mnn_selected_ratio);
}

TEST(Purity, OneHotTokensArePure) {
  std::vector<std::uint16_t> labels;
  Array z({60, 6});
  for (std::size_t i = 0; i < 60; ++i) {
    labels.push_back(static_cast<std::uint16_t>(i % 6));
    z(i, i % 6) = 1.0;
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    EXPECT_EQ(anatomy_cluster_purity(z, labels, 6, seed), 1.0);
}

TEST(Purity, IdenticalTokensRejected) {
  Array z({20, 3}, 0.5);
  std::vector<std::uint16_t> labels(20, 0);
  labels[3] = 1;
  EXPECT_THROW(anatomy_cluster_purity(z, labels, 2, 0), DegenerateInputError);
}

TEST(Purity, ClusterAssignmentsHandChecked) {
  EXPECT_DOUBLE_EQ(purity({0, 0, 1, 1, 1}, {3, 3, 3, 4, 4}, 2), 4.0 / 5.0);
  EXPECT_DOUBLE_EQ(purity({0, 1, 0, 1}, {1, 1, 2, 2}, 2), 0.5);
}

TEST(Purity, KMeansSeparatesWellSpacedBlobs) {
  Rng rng(5);
  Array x({90, 2});
  std::vector<std::uint16_t> labels;
  const double cx[] = {0, 10, 20};
  for (std::size_t i = 0; i < 90; ++i) {
    x(i, 0) = cx[i % 3] + 0.1 * rng.normal();
    x(i, 1) = 0.1 * rng.normal();
    labels.push_back(static_cast<std::uint16_t>(i % 3));
  }
  auto r = kmeans(x, 3, 7);
  EXPECT_EQ(purity(r.assignment, labels, 3), 1.0);
  EXPECT_EQ(kmeans(x, 3, 7).assignment, r.assignment);
}

TEST(Purity, NullBandForBalancedLabels) {
  auto band_for = [](std::size_t k) {
    std::vector<std::uint16_t> labels;
    for (std::size_t i = 0; i < k; ++i) labels.push_back(static_cast<std::uint16_t>(i % 6));
    return purity_null_band(labels, 8, 1000, 3);
  };
  const NullBand small = band_for(60), large = band_for(600);
  // purity can never fall below the largest label share
  EXPECT_GE(small.lower, 1.0 / 6.0);
  EXPECT_GE(large.lower, 1.0 / 6.0);
  EXPECT_LE(small.lower, small.mean);
  EXPECT_LE(small.mean, small.upper);
  // the small-sample bias shrinks with K
  EXPECT_LT(large.mean, small.mean);
  EXPECT_LT(large.mean, 1.0 / 6.0 + 0.06);
  EXPECT_EQ(large.trials, 1000u);
}

TEST(Agreement, IdenticalInstancesAgreeFully) {
  Rng rng(6);
  Array z = random_tokens(20, 4, rng);
  std::vector<std::uint16_t> lab(20);
  for (std::size_t i = 0; i < 20; ++i) lab[i] = static_cast<std::uint16_t>(i % 4);
  EXPECT_DOUBLE_EQ(cross_instance_agreement({z, z, z}, {lab, lab, lab}), 1.0);
  std::vector<std::uint16_t> other(20, 9);
  EXPECT_DOUBLE_EQ(cross_instance_agreement({z, z}, {lab, other}), 0.0);
}

TEST(Pca, LineHasZeroSecondCoordinate) {
  Array x({10, 3});
  for (std::size_t i = 0; i < 10; ++i) {
    const double t = static_cast<double>(i) - 4.5;
    x(i, 0) = 1 + 2 * t;
    x(i, 1) = -t;
    x(i, 2) = 3 + 0.5 * t;
  }
  auto p = pca_project(x);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(p.coords(i, 1), 0.0, 1e-10);
}

TEST(Pca, TwoDimensionalInputKeepsDistances) {
  Rng rng(7);
  Array x = random_tokens(15, 2, rng);
  auto p = pca_project(x);
  for (std::size_t i = 0; i < 15; ++i)
    for (std::size_t j = 0; j < 15; ++j) {
      const double d0 = std::hypot(x(i, 0) - x(j, 0), x(i, 1) - x(j, 1));
      const double d1 = std::hypot(p.coords(i, 0) - p.coords(j, 0), p.coords(i, 1) - p.coords(j, 1));
      EXPECT_NEAR(d0, d1, 1e-12);
    }
}

TEST(Pca, ResidualEqualsDiscardedEigenvalues) {
  Rng rng(8);
  Array x = random_tokens(40, 6, rng);
  auto p = pca_project(x);
  double residual = 0.0;
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double back = p.mean[j];
      for (std::size_t c = 0; c < 2; ++c) back += p.coords(i, c) * p.components(c, j);
      residual += (x(i, j) - back) * (x(i, j) - back) / 40.0;
    }
  double discarded = 0.0;
  for (std::size_t c = 2; c < 6; ++c) discarded += p.eigenvalues[c];
  EXPECT_NEAR(residual, discarded, 1e-12);
  for (std::size_t c = 0; c < 2; ++c) {
    double big = 0.0;
    for (std::size_t j = 0; j < 6; ++j)
      if (std::abs(p.components(c, j)) > std::abs(big)) big = p.components(c, j);
    EXPECT_GT(big, 0.0);
  }
}

TEST(Pca, ConstantInputRejected) {
  EXPECT_THROW(pca_project(Array({5, 3}, 2.0)), DegenerateInputError);
  EXPECT_THROW(pca_project(Array({1, 3}, 2.0)), DimensionError);
}

TEST(Reports, JsonAndCsvFields) {
  Rng rng(9);
  auto j = to_json(alignment_metrics(random_tokens(6, 3, rng), random_tokens(6, 3, rng)));
  for (const char* key : {"pos_cos_dist", "neg_cos_dist", "hard_neg_cos_dist", "neg_pos_gap",
                          "hard_neg_pos_gap", "top1_retrieval", "top5_retrieval",
                          "pairwise_rank_acc", "mnn_selected_ratio"})
    EXPECT_TRUE(j.contains(key)) << key;
  const std::string csv = embedding_csv({{3, 2, "mod1", 0.5, -1.25}});
  EXPECT_EQ(csv, "token_id,region_label,modality,pc1,pc2\n3,2,mod1,0.5,-1.25\n");
  const std::string rcsv = robustness_csv({{PerturbLevel::mild, 0.1, 50.0, 40.0, 5}});
  EXPECT_EQ(rcsv, "level,pos_cos_dist,top1_retrieval,mnn_selected_ratio,trials\nmild,0.1,50,40,5\n");
}
