#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "taco/checkpoint.hpp"
#include "taco/synthdata.hpp"

using namespace taco;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::path(testing::TempDir()) / ("synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<double> histogram(const Volume& v, int bins) {
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  for (double x : v.data) {
    const int b = std::min(bins - 1, static_cast<int>(x * bins));
    h[static_cast<std::size_t>(b)] += 1.0 / static_cast<double>(v.size());
  }
  return h;
}

}  // namespace

TEST(Cohort, SameSeedIsIdentical) {
  const auto tmpl = AnatomyTemplate::standard();
  const SynthConfig cfg;
  auto a = generate_cohort(tmpl, cfg, 3, 42);
  auto b = generate_cohort(tmpl, cfg, 3, 42);
  for (std::size_t h = 0; h < 3; ++h) {
    EXPECT_EQ(a[h].labels, b[h].labels);
    EXPECT_EQ(a[h].modalities, b[h].modalities);
  }
  auto c = generate_cohort(tmpl, cfg, 3, 43);
  EXPECT_NE(a[0].modalities[0], c[0].modalities[0]);
  // an id range generated on its own matches the same ids inside a larger cohort
  auto tail = generate_cohort(tmpl, cfg, 42, 2, 1);
  EXPECT_EQ(tail[0].modalities, a[2].modalities);
}

TEST(Cohort, SameSeedWritesIdenticalBytes) {
  const auto tmpl = AnatomyTemplate::standard();
  SynthConfig cfg;
  cfg.modalities = 2;
  CohortInfo info{2, 0, 2, tmpl.label_count(), cfg.volume_shape, 9};
  const fs::path d1 = scratch("bytes1"), d2 = scratch("bytes2");
  write_cohort(d1, info, generate_cohort(tmpl, cfg, 2, 9));
  write_cohort(d2, info, generate_cohort(tmpl, cfg, 2, 9));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(d1)) {
    EXPECT_EQ(read_bytes(e.path()), read_bytes(d2 / e.path().filename())) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 2u * (2 * 2 + 2) + 1);
}

TEST(Cohort, InstancesDifferButShareAdjacency) {
  const auto tmpl = AnatomyTemplate::standard();
  const SynthConfig cfg;
  const auto want = tmpl.adjacency(cfg.volume_shape);
  EXPECT_GE(want.size(), 6u);
  auto cohort = generate_cohort(tmpl, cfg, 6, 5);
  for (std::size_t h = 1; h < cohort.size(); ++h) EXPECT_NE(cohort[h].labels, cohort[0].labels);
  for (const auto& s : cohort) {
    EXPECT_EQ(label_adjacency(s.labels), want);
    for (const Volume& v : s.modalities) EXPECT_EQ(v.shape, s.labels.shape);
  }
}

TEST(Cohort, ValuesNormalisedAndFloatExact) {
  auto cohort = generate_cohort(AnatomyTemplate::standard(), SynthConfig{}, 2, 1);
  for (const auto& s : cohort)
    for (const Volume& v : s.modalities) {
      const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
      EXPECT_GE(*lo, 0.0);
      EXPECT_LE(*hi, 1.0);
      for (double x : v.data) ASSERT_EQ(static_cast<double>(static_cast<float>(x)), x);
    }
}

TEST(Cohort, NoiselessModalitiesDifferOnSharedLabels) {
  SynthConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.texture_waves = 0;
  auto cohort = generate_cohort(AnatomyTemplate::standard(), cfg, 2, 3);
  const auto& s = cohort[0];
  // with no noise or texture every voxel of a label has one intensity per modality
  std::map<std::uint16_t, std::set<double>> per_label0, per_label1;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    per_label0[s.labels.data[i]].insert(s.modalities[0].data[i]);
    per_label1[s.labels.data[i]].insert(s.modalities[1].data[i]);
  }
  int differing = 0;
  for (auto& [lab, vals] : per_label0) {
    EXPECT_EQ(vals.size(), 1u) << "label " << lab;
    differing += *vals.begin() != *per_label1[lab].begin();
  }
  EXPECT_GE(differing, 5);
}

TEST(Cohort, HistogramsDifferAcrossModalities) {
  auto cohort = generate_cohort(AnatomyTemplate::standard(), SynthConfig{}, 2, 8);
  const auto& s = cohort[0];
  for (std::size_t i = 0; i < s.modalities.size(); ++i)
    for (std::size_t j = i + 1; j < s.modalities.size(); ++j) {
      const auto hi = histogram(s.modalities[i], 20), hj = histogram(s.modalities[j], 20);
      double l1 = 0.0;
      for (std::size_t b = 0; b < hi.size(); ++b) l1 += std::abs(hi[b] - hj[b]);
      EXPECT_GT(l1, 0.1) << i << " vs " << j;
    }
}

TEST(Cohort, OversizedWarpsAbortGeneration) {
  SynthConfig cfg;
  cfg.max_rotation_deg = 45.0;
  cfg.max_scale_change = 0.5;
  cfg.max_translation = 0.5;
  EXPECT_THROW(generate_cohort(AnatomyTemplate::standard(), cfg, 10, 1), ConfigError);
}

TEST(Cohort, InvalidConfigRejected) {
  const auto tmpl = AnatomyTemplate::standard();
  EXPECT_THROW(generate_cohort(tmpl, SynthConfig{}, 1, 0), ConfigError);
  SynthConfig one;
  one.modalities = 1;
  EXPECT_THROW(generate_cohort(tmpl, one, 2, 0), ConfigError);
  SynthConfig bad_tables;
  bad_tables.tissue_level.pop_back();
  EXPECT_THROW(generate_cohort(tmpl, bad_tables, 2, 0), ConfigError);
}

TEST(Perturbation, CleanIsBitIdentical) {
  auto v = generate_cohort(AnatomyTemplate::standard(), SynthConfig{}, 2, 2)[0].modalities[0];
  EXPECT_EQ(apply_rigid_perturbation(v, sample_perturbation(PerturbLevel::clean, 4)), v);
  EXPECT_EQ(apply_rigid_perturbation(v, RigidPerturbation{{}, {}, PerturbLevel::strong}), v);
}

TEST(Perturbation, TranslationMovesImpulse) {
  Volume v({12, 12, 12});
  v(5, 6, 7) = 1.0;
  RigidPerturbation p{{2.0, 0.0, 0.0}, {}, PerturbLevel::mild};
  Volume out = apply_rigid_perturbation(v, p);
  Volume want({12, 12, 12});
  want(7, 6, 7) = 1.0;
  EXPECT_EQ(out, want);
}

TEST(Perturbation, FullTurnIsIdentityOnSmoothField) {
  Volume v({16, 16, 16});
  for (std::size_t z = 0; z < 16; ++z)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        v(z, y, x) = std::sin(0.3 * z) * std::cos(0.2 * y) + 0.1 * x;
  for (const Vec3& rot : {Vec3{360, 0, 0}, Vec3{0, 360, 0}, Vec3{0, 0, 360}, Vec3{360, 360, 360}}) {
    Volume out = rigid_resample(v, {0, 0, 0}, rot);
    double worst = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(out.data[i] - v.data[i]));
    EXPECT_LT(worst, 1e-6);
  }
}

TEST(Perturbation, LevelBoundsEnforced) {
  Volume v({8, 8, 8}, 1.0);
  EXPECT_THROW(apply_rigid_perturbation(v, {{3.0, 0, 0}, {}, PerturbLevel::mild}), ConfigError);
  EXPECT_THROW(apply_rigid_perturbation(v, {{}, {0, 3.0, 0}, PerturbLevel::mild}), ConfigError);
  EXPECT_THROW(apply_rigid_perturbation(v, {{0, 0, 0.5}, {}, PerturbLevel::clean}), ConfigError);
  EXPECT_NO_THROW(apply_rigid_perturbation(v, {{0, 4.0, 0}, {0, 0, -5.0}, PerturbLevel::moderate}));
  EXPECT_THROW(apply_rigid_perturbation(v, {{0, 8.5, 0}, {}, PerturbLevel::strong}), ConfigError);
}

TEST(Perturbation, SampledMagnitudesInUpperHalfOfRange) {
  for (PerturbLevel level : {PerturbLevel::mild, PerturbLevel::moderate, PerturbLevel::strong}) {
    const LevelBounds b = level_bounds(level);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto p = sample_perturbation(level, seed);
      EXPECT_NO_THROW(p.validate());
      const double t = std::hypot(p.translation[0], p.translation[1], p.translation[2]);
      EXPECT_GE(t, b.translation_vox / 2 - 1e-12);
      for (double a : p.rotation) EXPECT_GE(std::abs(a), b.rotation_deg / 2);
    }
    EXPECT_EQ(parse_level(to_string(level)), level);
  }
  EXPECT_THROW(parse_level("severe"), ConfigError);
}

TEST(TokenLabels, MajorityAndTies) {
  PatchGrid grid({4, 4, 4}, {2, 2, 2});
  LabelVolume single({4, 4, 4}, 4);
  for (auto l : token_region_labels(single, grid)) EXPECT_EQ(l, 4);

  LabelVolume lab({4, 4, 4}, 0);
  // token 0: all 3; token 1: 50/50 between 2 and 1; token 2: 5 of label 5, 3 of label 0
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) {
        lab(z, y, x) = 3;
        lab(z, y, 2 + x) = x == 0 ? 2 : 1;
      }
  lab(0, 2, 0) = lab(0, 2, 1) = lab(0, 3, 0) = lab(1, 2, 0) = lab(1, 3, 1) = 5;
  auto t = token_region_labels(lab, grid);
  EXPECT_EQ(t[0], 3);
  EXPECT_EQ(t[1], 1);
  EXPECT_EQ(t[2], 5);
  EXPECT_EQ(t[3], 0);
}

TEST(Files, VolumeAndLabelRoundTrip) {
  const fs::path dir = scratch("io");
  auto s = generate_cohort(AnatomyTemplate::standard(), SynthConfig{}, 2, 6)[1];
  write_volume(dir / "v", s.modalities[2], "mod2", 1, 6);
  write_labels(dir / "l", s.labels, 1, 6);
  EXPECT_EQ(read_volume(dir / "v"), s.modalities[2]);
  EXPECT_EQ(read_labels(dir / "l"), s.labels);

  Volume one({1, 1, 2}, 1.0);
  write_volume(dir / "one", one, "mod0", 0, 0);
  const std::string raw = read_bytes(dir / "one.f32");
  EXPECT_EQ(raw, std::string("\x00\x00\x80\x3f\x00\x00\x80\x3f", 8));
}

TEST(Files, CohortMetadataRoundTripAndErrors) {
  const auto tmpl = AnatomyTemplate::standard();
  SynthConfig cfg;
  cfg.modalities = 2;
  const fs::path dir = scratch("cohort");
  CohortInfo info{1, 1, 2, tmpl.label_count(), cfg.volume_shape, 77};
  auto cohort = generate_cohort(tmpl, cfg, 2, 77);
  write_cohort(dir, info, cohort);
  const CohortInfo back = read_cohort_info(dir);
  EXPECT_EQ(back.train, 1u);
  EXPECT_EQ(back.holdout, 1u);
  EXPECT_EQ(back.volume_shape, cfg.volume_shape);
  EXPECT_EQ(back.seed, 77u);
  auto inst = read_instance(dir, back, 1);
  EXPECT_EQ(inst.modalities, cohort[1].modalities);
  EXPECT_EQ(inst.labels, cohort[1].labels);

  std::ofstream(dir / "cohort.meta", std::ios::app) << "";
  std::string meta = read_bytes(dir / "cohort.meta");
  meta.replace(meta.find("train_instances = 1"), 19, "train_instances = x");
  write_bytes(dir / "cohort.meta", meta);
  try {
    read_cohort_info(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.field(), "train_instances");
  }
}
