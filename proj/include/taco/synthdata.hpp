#pragma once

// Synthetic multi-modal phantoms. Every instance warps one shared ellipsoid
// template, so region adjacency is identical across the cohort while shapes,
// texture and noise differ. Modalities are monotone intensity transfers of
// the same tissue map, so all modalities of an instance are registered.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "taco/errors.hpp"
#include "taco/model.hpp"
#include "taco/rng.hpp"
#include "taco/volume.hpp"

namespace taco {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

namespace detail {

inline Vec3 mat_vec(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

inline Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat3 transpose(const Mat3& a) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
  return t;
}

// Rotation by `rad` in the (i, j) coordinate plane.
inline Mat3 plane_rotation(double rad, int i, int j) {
  Mat3 m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const double c = std::cos(rad), s = std::sin(rad);
  m[i][i] = c;
  m[j][j] = c;
  m[i][j] = -s;
  m[j][i] = s;
  return m;
}

// Angles about the z, y and x axes (zyx coordinates), applied x first.
inline Mat3 euler_rotation(const Vec3& deg) {
  const double k = std::numbers::pi / 180.0;
  return mat_mul(mat_mul(plane_rotation(deg[0] * k, 1, 2), plane_rotation(deg[1] * k, 0, 2)),
                 plane_rotation(deg[2] * k, 0, 1));
}

// Voxel centres mapped to [-1, 1].
inline double canonical(std::size_t i, std::size_t n) {
  return (static_cast<double>(i) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
}

}  // namespace detail

struct Ellipsoid {
  Vec3 center;     // zyx, canonical cube [-1, 1]^3
  Vec3 semi_axes;  // zyx

  bool contains(const Vec3& u) const {
    double q = 0.0;
    for (int d = 0; d < 3; ++d) {
      const double t = (u[d] - center[d]) / semi_axes[d];
      q += t * t;
    }
    return q <= 1.0;
  }
};

using Adjacency = std::set<std::pair<std::uint16_t, std::uint16_t>>;

// 6-connected label pairs (lower label first) that touch somewhere.
inline Adjacency label_adjacency(const LabelVolume& lab) {
  Adjacency out;
  const auto& s = lab.shape;
  auto note = [&out](std::uint16_t a, std::uint16_t b) {
    if (a != b) out.emplace(std::min(a, b), std::max(a, b));
  };
  for (std::size_t z = 0; z < s[0]; ++z)
    for (std::size_t y = 0; y < s[1]; ++y)
      for (std::size_t x = 0; x < s[2]; ++x) {
        const auto v = lab(z, y, x);
        if (z + 1 < s[0]) note(v, lab(z + 1, y, x));
        if (y + 1 < s[1]) note(v, lab(z, y + 1, x));
        if (x + 1 < s[2]) note(v, lab(z, y, x + 1));
      }
  return out;
}

// Regions are painted in order; a later region overwrites earlier ones, so
// region r is label r + 1 and label 0 is background.
class AnatomyTemplate {
 public:
  explicit AnatomyTemplate(std::vector<Ellipsoid> regions) : regions_(std::move(regions)) {
    if (regions_.empty() || regions_.size() > 60000) throw ConfigError("template: bad region count");
    for (const auto& e : regions_)
      for (double a : e.semi_axes)
        if (!(a > 0.0)) throw ConfigError("template: semi-axes must be positive");
  }

  // Six regions: a body, two lateral lobes, a superior and an inferior
  // structure, and a thin medial structure between the lobes.
  static AnatomyTemplate standard() {
    return AnatomyTemplate({{{0.0, 0.0, 0.0}, {1.3, 1.35, 1.32}},
                            {{0.0, 0.1, -0.55}, {0.9, 0.95, 0.55}},
                            {{0.0, 0.1, 0.55}, {0.9, 0.95, 0.55}},
                            {{0.7, 0.0, 0.0}, {0.45, 0.9, 0.6}},
                            {{-0.62, -0.45, 0.0}, {0.55, 0.7, 0.72}},
                            {{0.0, 0.2, 0.0}, {0.6, 0.7, 0.28}}});
  }

  std::size_t region_count() const noexcept { return regions_.size(); }
  std::size_t label_count() const noexcept { return regions_.size() + 1; }
  const std::vector<Ellipsoid>& regions() const noexcept { return regions_; }

  std::uint16_t label_at(const Vec3& u) const {
    std::uint16_t lab = 0;
    for (std::size_t r = 0; r < regions_.size(); ++r)
      if (regions_[r].contains(u)) lab = static_cast<std::uint16_t>(r + 1);
    return lab;
  }

  LabelVolume rasterize(const Extent3& shape) const {
    LabelVolume out(shape);
    for (std::size_t z = 0; z < shape[0]; ++z)
      for (std::size_t y = 0; y < shape[1]; ++y)
        for (std::size_t x = 0; x < shape[2]; ++x)
          out(z, y, x) = label_at({detail::canonical(z, shape[0]), detail::canonical(y, shape[1]),
                                   detail::canonical(x, shape[2])});
    return out;
  }

  Adjacency adjacency(const Extent3& shape) const { return label_adjacency(rasterize(shape)); }

 private:
  std::vector<Ellipsoid> regions_;
};

// Per-instance smooth warp of canonical coordinates: u = A x + b plus a
// low-frequency sinusoidal displacement.
struct Deformation {
  Mat3 affine{};
  Vec3 translation{};
  Vec3 wave_amplitude{};
  Vec3 wave_phase{};

  Vec3 apply(const Vec3& x) const {
    Vec3 u = detail::mat_vec(affine, x);
    for (int d = 0; d < 3; ++d)
      u[d] += translation[d] + wave_amplitude[d] * std::sin(std::numbers::pi * x[(d + 1) % 3] + wave_phase[d]);
    return u;
  }
};

struct SynthConfig {
  Extent3 volume_shape{32, 32, 32};
  std::size_t modalities = 3;
  double noise_sigma = 0.02;
  // Warp bounds.
  double max_rotation_deg = 6.0;
  double max_scale_change = 0.07;
  double max_translation = 0.05;
  double max_wave_amplitude = 0.04;
  // Texture: a sum of plane waves in template coordinates.
  std::size_t texture_waves = 8;
  double texture_frequency = 5.0;
  // Per-volume min-max normalisation before the final clip to [0, 1].
  bool minmax = true;
  // Base tissue value per label (background first) and texture gain.
  std::vector<double> tissue_level{0.05, 0.3, 0.5, 0.62, 0.78, 0.9, 0.15};
  std::vector<double> texture_gain{0.02, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08};
  // Modality m maps tissue q to offset[m] + (1 - offset[m]) * q^gamma[m].
  std::vector<double> gamma{1.0, 0.8, 1.25, 0.9, 1.1, 0.7, 1.4, 1.05};
  std::vector<double> offset{0.0, 0.05, 0.0, 0.1, 0.02, 0.04, 0.0, 0.08};

  void validate(const AnatomyTemplate& tmpl) const {
    for (std::size_t d : volume_shape)
      if (d < 2) throw ConfigError("synth: volume extents must be at least 2");
    if (modalities < 2) throw ConfigError("synth: need at least two modalities");
    if (modalities > gamma.size() || modalities > offset.size())
      throw ConfigError("synth: at most " + std::to_string(std::min(gamma.size(), offset.size())) +
                        " modalities have transfer functions");
    if (tissue_level.size() != tmpl.label_count() || texture_gain.size() != tmpl.label_count())
      throw ConfigError("synth: tissue tables must have one entry per label");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise sigma must be non-negative");
    for (std::size_t m = 0; m < modalities; ++m)
      if (!(gamma[m] > 0.0) || !(offset[m] >= 0.0 && offset[m] < 1.0))
        throw ConfigError("synth: invalid transfer for modality " + std::to_string(m));
  }
};

struct InstanceSample {
  std::uint64_t id = 0;
  std::vector<Volume> modalities;
  LabelVolume labels;
  Deformation deformation;
};

inline std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t id) {
  return derive_seed({seed, 0x5a17, id});
}

inline std::vector<std::string> modality_names(std::size_t m) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back("mod" + std::to_string(i));
  return out;
}

inline InstanceSample generate_instance(const AnatomyTemplate& tmpl, const SynthConfig& cfg,
                                        std::uint64_t seed, std::uint64_t id,
                                        const Adjacency* expected_adjacency = nullptr) {
  cfg.validate(tmpl);
  Rng rng(instance_seed(seed, id));
  InstanceSample s;
  s.id = id;

  Deformation& w = s.deformation;
  Vec3 ang;
  for (double& a : ang) a = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  w.affine = detail::euler_rotation(ang);
  for (int c = 0; c < 3; ++c) {
    const double sc = rng.uniform(1.0 - cfg.max_scale_change, 1.0 + cfg.max_scale_change);
    for (int r = 0; r < 3; ++r) w.affine[r][c] *= sc;
  }
  for (double& t : w.translation) t = rng.uniform(-cfg.max_translation, cfg.max_translation);
  for (double& a : w.wave_amplitude) a = rng.uniform(-cfg.max_wave_amplitude, cfg.max_wave_amplitude);
  for (double& p : w.wave_phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);

  struct Wave {
    Vec3 dir;
    double freq, phase;
  };
  std::vector<Wave> waves(cfg.texture_waves);
  for (Wave& wv : waves) {
    double n = 0.0;
    do {
      for (double& d : wv.dir) d = rng.normal();
      n = std::sqrt(wv.dir[0] * wv.dir[0] + wv.dir[1] * wv.dir[1] + wv.dir[2] * wv.dir[2]);
    } while (n < 1e-9);
    for (double& d : wv.dir) d /= n;
    wv.freq = rng.uniform(0.6, 1.4) * cfg.texture_frequency;
    wv.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double tex_norm = waves.empty() ? 0.0 : 1.0 / std::sqrt(waves.size() / 2.0);

  const Extent3& shape = cfg.volume_shape;
  s.labels = LabelVolume(shape);
  std::vector<double> tissue(s.labels.size());
  for (std::size_t z = 0, i = 0; z < shape[0]; ++z)
    for (std::size_t y = 0; y < shape[1]; ++y)
      for (std::size_t x = 0; x < shape[2]; ++x, ++i) {
        const Vec3 u = w.apply({detail::canonical(z, shape[0]), detail::canonical(y, shape[1]),
                                detail::canonical(x, shape[2])});
        const std::uint16_t lab = tmpl.label_at(u);
        double tex = 0.0;
        for (const Wave& wv : waves)
          tex += std::sin(std::numbers::pi * wv.freq * (u[0] * wv.dir[0] + u[1] * wv.dir[1] + u[2] * wv.dir[2]) +
                          wv.phase);
        s.labels.data[i] = lab;
        tissue[i] = std::clamp(cfg.tissue_level[lab] + cfg.texture_gain[lab] * tex * tex_norm, 0.0, 1.0);
      }

  const Adjacency got = label_adjacency(s.labels);
  const Adjacency want = expected_adjacency ? *expected_adjacency : tmpl.adjacency(shape);
  if (got != want)
    throw ConfigError("synth: instance " + std::to_string(id) +
                      " changed region adjacency; warp bounds too large for the template");

  for (std::size_t m = 0; m < cfg.modalities; ++m) {
    Volume v(shape);
    for (std::size_t i = 0; i < v.size(); ++i)
      v.data[i] = cfg.offset[m] + (1.0 - cfg.offset[m]) * std::pow(tissue[i], cfg.gamma[m]) +
                  cfg.noise_sigma * rng.normal();
    if (cfg.minmax) {
      const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
      const double a = *lo, span = *hi - *lo;
      if (span > 0.0)
        for (double& x : v.data) x = (x - a) / span;
    }
    for (double& x : v.data) x = static_cast<float>(std::clamp(x, 0.0, 1.0));
    s.modalities.push_back(std::move(v));
  }
  return s;
}

// Instances first_id .. first_id + count - 1. Each instance has its own seed
// stream, so any id range can be generated independently.
inline std::vector<InstanceSample> generate_cohort(const AnatomyTemplate& tmpl,
                                                   const SynthConfig& cfg, std::uint64_t seed,
                                                   std::uint64_t first_id, std::size_t count) {
  cfg.validate(tmpl);
  const Adjacency adj = tmpl.adjacency(cfg.volume_shape);
  std::vector<InstanceSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(generate_instance(tmpl, cfg, seed, first_id + i, &adj));
  return out;
}

inline std::vector<InstanceSample> generate_cohort(const AnatomyTemplate& tmpl,
                                                   const SynthConfig& cfg, std::size_t n_instances,
                                                   std::uint64_t seed) {
  if (n_instances < 2) throw ConfigError("synth: need at least two instances");
  return generate_cohort(tmpl, cfg, seed, 0, n_instances);
}

// Majority label per token; ties go to the lowest label.
inline std::vector<std::uint16_t> token_region_labels(const LabelVolume& labels,
                                                      const PatchGrid& grid) {
  if (labels.shape != grid.volume_shape())
    throw ConfigError("token labels: label volume does not match grid");
  std::vector<std::map<std::uint16_t, std::size_t>> counts(grid.token_count());
  grid.for_each_voxel([&](std::size_t k, std::size_t, std::size_t i) { ++counts[k][labels.data[i]]; });
  std::vector<std::uint16_t> out(grid.token_count());
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::size_t best = 0;
    for (auto [lab, n] : counts[k])
      if (n > best) {
        best = n;
        out[k] = lab;
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rigid registration errors.

enum class PerturbLevel { clean, mild, moderate, strong };

inline std::string to_string(PerturbLevel l) {
  switch (l) {
    case PerturbLevel::clean: return "clean";
    case PerturbLevel::mild: return "mild";
    case PerturbLevel::moderate: return "moderate";
    case PerturbLevel::strong: return "strong";
  }
  return "?";
}

inline PerturbLevel parse_level(const std::string& s) {
  if (s == "clean") return PerturbLevel::clean;
  if (s == "mild") return PerturbLevel::mild;
  if (s == "moderate") return PerturbLevel::moderate;
  if (s == "strong") return PerturbLevel::strong;
  throw ConfigError("unknown perturbation level '" + s + "'");
}

struct LevelBounds {
  double translation_vox;
  double rotation_deg;
};

inline LevelBounds level_bounds(PerturbLevel l) {
  switch (l) {
    case PerturbLevel::clean: return {0.0, 0.0};
    case PerturbLevel::mild: return {2.0, 2.0};
    case PerturbLevel::moderate: return {4.0, 5.0};
    case PerturbLevel::strong: return {8.0, 10.0};
  }
  return {0.0, 0.0};
}

struct RigidPerturbation {
  Vec3 translation{};  // voxels, zyx
  Vec3 rotation{};     // degrees about z, y, x
  PerturbLevel level = PerturbLevel::clean;

  bool is_identity() const {
    for (int d = 0; d < 3; ++d)
      if (translation[d] != 0.0 || rotation[d] != 0.0) return false;
    return true;
  }

  // Translation bound applies to the vector length, rotation bound to each angle.
  void validate() const {
    const LevelBounds b = level_bounds(level);
    const double t = std::sqrt(translation[0] * translation[0] + translation[1] * translation[1] +
                               translation[2] * translation[2]);
    if (t > b.translation_vox + 1e-9)
      throw ConfigError(to_string(level) + " perturbation: translation " + std::to_string(t) +
                        " exceeds " + std::to_string(b.translation_vox) + " voxels");
    for (double a : rotation)
      if (std::abs(a) > b.rotation_deg + 1e-9)
        throw ConfigError(to_string(level) + " perturbation: rotation " + std::to_string(a) +
                          " exceeds " + std::to_string(b.rotation_deg) + " degrees");
  }
};

// Random perturbation in the upper half of the level's range: translation of
// length in [b/2, b] along a random direction, each angle of magnitude in
// [b/2, b] with random sign.
inline RigidPerturbation sample_perturbation(PerturbLevel level, std::uint64_t seed) {
  RigidPerturbation p;
  p.level = level;
  if (level == PerturbLevel::clean) return p;
  const LevelBounds b = level_bounds(level);
  Rng rng(derive_seed({seed, 0x219d}));
  Vec3 dir;
  double n = 0.0;
  do {
    for (double& d : dir) d = rng.normal();
    n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  } while (n < 1e-9);
  const double len = b.translation_vox * rng.uniform(0.5, 1.0);
  for (int d = 0; d < 3; ++d) p.translation[d] = dir[d] / n * len;
  for (double& a : p.rotation) a = b.rotation_deg * rng.uniform(0.5, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return p;
}

// Trilinear sample; voxels outside the volume read as zero.
inline double sample_trilinear(const Volume& v, const Vec3& p) {
  const auto& s = v.shape;
  const double fz = std::floor(p[0]), fy = std::floor(p[1]), fx = std::floor(p[2]);
  const double tz = p[0] - fz, ty = p[1] - fy, tx = p[2] - fx;
  const auto z0 = static_cast<long long>(fz), y0 = static_cast<long long>(fy),
             x0 = static_cast<long long>(fx);
  auto at = [&](long long z, long long y, long long x) {
    if (z < 0 || y < 0 || x < 0 || z >= static_cast<long long>(s[0]) ||
        y >= static_cast<long long>(s[1]) || x >= static_cast<long long>(s[2]))
      return 0.0;
    return v(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };
  double out = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wgt = (dz ? tz : 1 - tz) * (dy ? ty : 1 - ty) * (dx ? tx : 1 - tx);
        if (wgt != 0.0) out += wgt * at(z0 + dz, y0 + dy, x0 + dx);
      }
  return out;
}

// Moves the content by the rigid transform about the volume centre:
// out(p) = in(R^T (p - c - t) + c). No bounds are checked.
inline Volume rigid_resample(const Volume& v, const Vec3& translation, const Vec3& rotation_deg) {
  const Mat3 rt = detail::transpose(detail::euler_rotation(rotation_deg));
  Vec3 c;
  for (int d = 0; d < 3; ++d) c[d] = (static_cast<double>(v.shape[d]) - 1.0) / 2.0;
  Volume out(v.shape);
  for (std::size_t z = 0; z < v.shape[0]; ++z)
    for (std::size_t y = 0; y < v.shape[1]; ++y)
      for (std::size_t x = 0; x < v.shape[2]; ++x) {
        const Vec3 q{z - c[0] - translation[0], y - c[1] - translation[1],
                     x - c[2] - translation[2]};
        Vec3 src = detail::mat_vec(rt, q);
        for (int d = 0; d < 3; ++d) src[d] += c[d];
        out(z, y, x) = sample_trilinear(v, src);
      }
  return out;
}

inline Volume apply_rigid_perturbation(const Volume& v, const RigidPerturbation& p) {
  p.validate();
  if (p.level == PerturbLevel::clean || p.is_identity()) return v;
  return rigid_resample(v, p.translation, p.rotation);
}

// ---------------------------------------------------------------------------
// Cohort files. Volumes are little-endian float32 and labels little-endian
// uint16, both z-major, each with a `key = value` sidecar.

namespace detail {

inline void write_le(std::ofstream& out, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline std::map<std::string, std::string> read_kv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline const std::string& kv_get(const std::map<std::string, std::string>& kv,
                                 const std::string& key, const std::filesystem::path& file) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(key, "missing in " + file.string());
  return it->second;
}

inline Extent3 parse_extent(const std::string& s, const std::string& field) {
  Extent3 e{};
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  if (!(in >> e[0] >> x1 >> e[1] >> x2 >> e[2]) || x1 != 'x' || x2 != 'x')
    throw FormatError(field, "expected DxHxW, got '" + s + "'");
  return e;
}

inline std::vector<unsigned char> read_raw(const std::filesystem::path& path, std::size_t bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<unsigned char> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (in.gcount() != static_cast<std::streamsize>(bytes) || in.peek() != EOF)
    throw FormatError("shape", path.string() + " size does not match its metadata");
  return buf;
}

}  // namespace detail

inline std::string volume_stem(std::uint64_t id, std::size_t m) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "inst%03llu_mod%zu", static_cast<unsigned long long>(id), m);
  return buf;
}

inline std::string label_stem(std::uint64_t id) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "inst%03llu_labels", static_cast<unsigned long long>(id));
  return buf;
}

inline void write_volume(const std::filesystem::path& stem, const Volume& v,
                         const std::string& modality, std::uint64_t instance, std::uint64_t seed) {
  std::ofstream out(stem.string() + ".f32", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + stem.string() + ".f32");
  for (double x : v.data) detail::write_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)), 4);
  std::ofstream meta(stem.string() + ".f32.meta", std::ios::trunc);
  meta << "shape = " << extent_str(v.shape) << "\n"
       << "dtype = float32-le\n"
       << "order = z-major\n"
       << "modality = " << modality << "\n"
       << "instance = " << instance << "\n"
       << "seed = " << seed << "\n";
}

inline Volume read_volume(const std::filesystem::path& stem) {
  const std::filesystem::path meta = stem.string() + ".f32.meta";
  const auto kv = detail::read_kv(meta);
  const Extent3 shape = detail::parse_extent(detail::kv_get(kv, "shape", meta), "shape");
  Volume v(shape);
  const auto raw = detail::read_raw(stem.string() + ".f32", 4 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 3; b >= 0; --b) u = (u << 8) | raw[4 * i + b];
    v.data[i] = std::bit_cast<float>(u);
  }
  return v;
}

inline void write_labels(const std::filesystem::path& stem, const LabelVolume& l,
                         std::uint64_t instance, std::uint64_t seed) {
  std::ofstream out(stem.string() + ".u16", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + stem.string() + ".u16");
  for (std::uint16_t x : l.data) detail::write_le(out, x, 2);
  std::ofstream meta(stem.string() + ".u16.meta", std::ios::trunc);
  meta << "shape = " << extent_str(l.shape) << "\n"
       << "dtype = uint16-le\n"
       << "order = z-major\n"
       << "instance = " << instance << "\n"
       << "seed = " << seed << "\n";
}

inline LabelVolume read_labels(const std::filesystem::path& stem) {
  const std::filesystem::path meta = stem.string() + ".u16.meta";
  const auto kv = detail::read_kv(meta);
  LabelVolume l(detail::parse_extent(detail::kv_get(kv, "shape", meta), "shape"));
  const auto raw = detail::read_raw(stem.string() + ".u16", 2 * l.size());
  for (std::size_t i = 0; i < l.size(); ++i)
    l.data[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
  return l;
}

// A generated cohort on disk: training instances 0 .. train-1, held-out
// instances train .. train+holdout-1.
struct CohortInfo {
  std::size_t train = 0;
  std::size_t holdout = 0;
  std::size_t modalities = 0;
  std::size_t region_labels = 0;
  Extent3 volume_shape{};
  std::uint64_t seed = 0;
};

inline void write_cohort(const std::filesystem::path& dir, const CohortInfo& info,
                         const std::vector<InstanceSample>& instances) {
  std::filesystem::create_directories(dir);
  const auto names = modality_names(info.modalities);
  for (const auto& s : instances) {
    for (std::size_t m = 0; m < s.modalities.size(); ++m)
      write_volume(dir / volume_stem(s.id, m), s.modalities[m], names[m], s.id, info.seed);
    write_labels(dir / label_stem(s.id), s.labels, s.id, info.seed);
  }
  std::ofstream meta(dir / "cohort.meta", std::ios::trunc);
  meta << "format = taco-cohort-1\n"
       << "train_instances = " << info.train << "\n"
       << "holdout_instances = " << info.holdout << "\n"
       << "modalities = " << info.modalities << "\n"
       << "region_labels = " << info.region_labels << "\n"
       << "shape = " << extent_str(info.volume_shape) << "\n"
       << "seed = " << info.seed << "\n";
}

inline CohortInfo read_cohort_info(const std::filesystem::path& dir) {
  const auto file = dir / "cohort.meta";
  if (!std::filesystem::exists(file)) throw Error("no cohort.meta in " + dir.string());
  const auto kv = detail::read_kv(file);
  CohortInfo info;
  auto num = [&](const std::string& key) -> std::uint64_t {
    const std::string& s = detail::kv_get(kv, key, file);
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw FormatError(key, "not an unsigned integer: '" + s + "'");
    }
  };
  if (detail::kv_get(kv, "format", file) != "taco-cohort-1")
    throw FormatError("format", "unsupported cohort format");
  info.train = num("train_instances");
  info.holdout = num("holdout_instances");
  info.modalities = num("modalities");
  info.region_labels = num("region_labels");
  info.seed = num("seed");
  info.volume_shape = detail::parse_extent(detail::kv_get(kv, "shape", file), "shape");
  return info;
}

inline InstanceSample read_instance(const std::filesystem::path& dir, const CohortInfo& info,
                                    std::uint64_t id) {
  InstanceSample s;
  s.id = id;
  for (std::size_t m = 0; m < info.modalities; ++m) {
    s.modalities.push_back(read_volume(dir / volume_stem(id, m)));
    if (s.modalities.back().shape != info.volume_shape)
      throw FormatError("shape", volume_stem(id, m) + " does not match cohort shape");
  }
  s.labels = read_labels(dir / label_stem(id));
  return s;
}

}  // namespace taco
