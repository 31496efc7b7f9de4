#pragma once

// Checkpoint layout: a text header of `key value` lines ending with `end`,
// then every parameter as a little-endian float64, in ModelParams::tensors()
// order.

#include <bit>
#include <cstdint>
#include <fstream>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "taco/errors.hpp"
#include "taco/model.hpp"

namespace taco {

inline constexpr const char* kCheckpointMagic = "taco-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  PatchGrid grid{{32, 32, 32}, {4, 4, 4}};
  ModelParams params;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

inline void put_f64(std::string& out, double v) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t u = 0;
  for (int b = 7; b >= 0; --b) u = (u << 8) | p[b];
  return std::bit_cast<double>(u);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const ModelConfig& c = ck.params.config;
  std::ostringstream h;
  const auto& v = ck.grid.volume_shape();
  const auto& p = ck.grid.patch();
  h << kCheckpointMagic << '\n'
    << "format_version " << kCheckpointVersion << '\n'
    << "volume_shape " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n'
    << "patch_shape " << p[0] << ' ' << p[1] << ' ' << p[2] << '\n'
    << "input_dim " << c.input_dim << '\n'
    << "feature_dim " << c.feature_dim << '\n'
    << "hidden_dim " << c.hidden_dim << '\n'
    << "encoder_depth " << c.encoder_depth << '\n'
    << "decoder_depth " << c.decoder_depth << '\n'
    << "mix " << (c.mix ? 1 : 0) << '\n';
  for (const Linear& l : ck.params.encoder) h << "layer encoder " << l.in() << ' ' << l.out() << '\n';
  for (const Linear& l : ck.params.decoder) h << "layer decoder " << l.in() << ' ' << l.out() << '\n';
  h << "seed " << ck.seed << '\n'
    << "step " << ck.step << '\n'
    << "param_count " << ck.params.parameter_count() << '\n'
    << "end\n";
  std::string out = h.str();
  out.reserve(out.size() + 8 * ck.params.parameter_count());
  for (const Array* a : ck.params.tensors())
    for (double x : a->data) detail::put_f64(out, x);
  return out;
}

namespace detail {

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

  // Next line split into a key and the remaining stream.
  std::istringstream expect(const std::string& key) {
    const std::string line = next_line(key);
    std::istringstream in(line);
    std::string k;
    in >> k;
    if (k != key) throw FormatError(key, "expected '" + key + "', found '" + line + "'");
    return in;
  }

  template <class T>
  T value(const std::string& key) {
    auto in = expect(key);
    T v{};
    if (!(in >> v)) throw FormatError(key, "unreadable value");
    std::string rest;
    if (in >> rest) throw FormatError(key, "trailing data '" + rest + "'");
    return v;
  }

  Extent3 extent(const std::string& key) {
    auto in = expect(key);
    Extent3 e{};
    if (!(in >> e[0] >> e[1] >> e[2])) throw FormatError(key, "expected three extents");
    return e;
  }

  std::string next_line(const std::string& field) {
    const auto nl = bytes_.find('\n', pos_);
    if (nl == std::string::npos) throw FormatError(field, "header truncated");
    std::string line = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return line;
  }

  std::size_t position() const noexcept { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::HeaderReader r(bytes);
  if (r.next_line("magic") != kCheckpointMagic) throw FormatError("magic", "not a checkpoint file");
  const int version = r.value<int>("format_version");
  if (version != kCheckpointVersion)
    throw FormatError("format_version", "unsupported version " + std::to_string(version));
  const Extent3 vshape = r.extent("volume_shape");
  const Extent3 pshape = r.extent("patch_shape");
  ModelConfig c;
  c.input_dim = r.value<std::size_t>("input_dim");
  c.feature_dim = r.value<std::size_t>("feature_dim");
  c.hidden_dim = r.value<std::size_t>("hidden_dim");
  c.encoder_depth = r.value<std::size_t>("encoder_depth");
  c.decoder_depth = r.value<std::size_t>("decoder_depth");
  const int mix = r.value<int>("mix");
  if (mix != 0 && mix != 1) throw FormatError("mix", "expected 0 or 1");
  c.mix = mix == 1;

  Checkpoint ck;
  try {
    ck.grid = PatchGrid(vshape, pshape);
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError("volume_shape", e.what());
  }
  if (c.input_dim != ck.grid.patch_voxels())
    throw FormatError("input_dim", "does not match patch_shape");

  auto read_layers = [&r](const std::string& part,
                          const std::vector<std::pair<std::size_t, std::size_t>>& expected) {
    std::vector<Linear> layers;
    for (auto [in_dim, out_dim] : expected) {
      auto in = r.expect("layer");
      std::string name;
      std::size_t a = 0, b = 0;
      if (!(in >> name >> a >> b) || name != part || a != in_dim || b != out_dim)
        throw FormatError("layer", part + " layer shape inconsistent with dims");
      layers.push_back({Array({a, b}), Array({1, b})});
    }
    return layers;
  };
  ck.params.config = c;
  ck.params.encoder = read_layers("encoder", ModelParams::encoder_shapes(c));
  ck.params.decoder = read_layers("decoder", ModelParams::decoder_shapes(c));
  ck.seed = r.value<std::uint64_t>("seed");
  ck.step = r.value<std::uint64_t>("step");
  const auto count = r.value<std::size_t>("param_count");
  if (count != ck.params.parameter_count())
    throw FormatError("param_count", "header says " + std::to_string(count) + ", layers imply " +
                                         std::to_string(ck.params.parameter_count()));
  if (r.next_line("end") != "end") throw FormatError("end", "missing end of header");

  const std::size_t blob = bytes.size() - r.position();
  if (blob != 8 * count)
    throw FormatError("param_count", "parameter blob has " + std::to_string(blob) +
                                         " bytes, expected " + std::to_string(8 * count));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + r.position();
  for (Array* a : ck.params.tensors())
    for (double& x : a->data) {
      x = detail::get_f64(p);
      p += 8;
    }
  return ck;
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_bytes(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_bytes(path));
}

}  // namespace taco
