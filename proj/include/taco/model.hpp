#pragma once

// Patch tokenizer plus a token-wise MLP encoder/decoder shared by all
// modalities.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "taco/errors.hpp"
#include "taco/rng.hpp"
#include "taco/tensor.hpp"
#include "taco/volume.hpp"

namespace taco {

class PatchGrid {
 public:
  PatchGrid(Extent3 volume_shape, Extent3 patch) : volume_(volume_shape), patch_(patch) {
    for (int d = 0; d < 3; ++d) {
      if (patch[d] == 0 || volume_shape[d] == 0)
        throw ConfigError("patch grid: zero extent");
      if (volume_shape[d] % patch[d] != 0)
        throw ConfigError("patch grid: patch " + extent_str(patch) + " does not divide volume " +
                          extent_str(volume_shape));
      cells_[d] = volume_shape[d] / patch[d];
    }
  }

  const Extent3& volume_shape() const noexcept { return volume_; }
  const Extent3& patch() const noexcept { return patch_; }
  const Extent3& cells() const noexcept { return cells_; }
  std::size_t token_count() const noexcept { return cells_[0] * cells_[1] * cells_[2]; }
  std::size_t patch_voxels() const noexcept { return patch_[0] * patch_[1] * patch_[2]; }

  // Token k -> cell (z, y, x), z-major.
  Extent3 cell(std::size_t k) const {
    return {k / (cells_[1] * cells_[2]), (k / cells_[2]) % cells_[1], k % cells_[2]};
  }

  // Calls f(token, offset_in_patch, voxel_index) for every voxel.
  template <class F>
  void for_each_voxel(F&& f) const {
    std::size_t k = 0;
    for (std::size_t cz = 0; cz < cells_[0]; ++cz)
      for (std::size_t cy = 0; cy < cells_[1]; ++cy)
        for (std::size_t cx = 0; cx < cells_[2]; ++cx, ++k) {
          std::size_t o = 0;
          for (std::size_t pz = 0; pz < patch_[0]; ++pz)
            for (std::size_t py = 0; py < patch_[1]; ++py)
              for (std::size_t px = 0; px < patch_[2]; ++px, ++o) {
                const std::size_t z = cz * patch_[0] + pz;
                const std::size_t y = cy * patch_[1] + py;
                const std::size_t x = cx * patch_[2] + px;
                f(k, o, (z * volume_[1] + y) * volume_[2] + x);
              }
        }
  }

  bool operator==(const PatchGrid&) const = default;

 private:
  Extent3 volume_;
  Extent3 patch_;
  Extent3 cells_{};
};

inline Array patchify(const Volume& v, const PatchGrid& grid) {
  if (v.shape != grid.volume_shape())
    throw ConfigError("patchify: volume " + extent_str(v.shape) + " does not match grid " +
                      extent_str(grid.volume_shape()));
  Array out({grid.token_count(), grid.patch_voxels()});
  const std::size_t p = grid.patch_voxels();
  grid.for_each_voxel([&](std::size_t k, std::size_t o, std::size_t i) { out.data[k * p + o] = v.data[i]; });
  return out;
}

inline Volume depatchify(const Array& patches, const PatchGrid& grid) {
  if (patches.shape != Shape{grid.token_count(), grid.patch_voxels()})
    throw DimensionError("depatchify: expected " + std::to_string(grid.token_count()) + "x" +
                         std::to_string(grid.patch_voxels()) + ", got " +
                         shape_str(patches.shape));
  Volume out(grid.volume_shape());
  const std::size_t p = grid.patch_voxels();
  grid.for_each_voxel([&](std::size_t k, std::size_t o, std::size_t i) { out.data[i] = patches.data[k * p + o]; });
  return out;
}

struct ModelConfig {
  std::size_t input_dim = 64;  // voxels per patch
  std::size_t feature_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t encoder_depth = 3;
  std::size_t decoder_depth = 2;
  // Concatenate the token-mean of the penultimate activations before the
  // final encoder layer.
  bool mix = true;

  void validate() const {
    if (input_dim == 0 || feature_dim == 0 || hidden_dim == 0)
      throw ConfigError("model: dimensions must be positive");
    if (encoder_depth == 0 || decoder_depth == 0)
      throw ConfigError("model: encoder and decoder need at least one layer");
  }
  bool operator==(const ModelConfig&) const = default;
};

struct Linear {
  Array weight;  // [in x out]
  Array bias;    // [1 x out]

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }

  bool operator==(const Linear&) const = default;
};

struct ModelParams {
  ModelConfig config;
  std::vector<Linear> encoder;
  std::vector<Linear> decoder;

  // Layer shapes (in, out) implied by the config.
  static std::vector<std::pair<std::size_t, std::size_t>> encoder_shapes(const ModelConfig& c) {
    std::vector<std::pair<std::size_t, std::size_t>> s;
    std::size_t in = c.input_dim;
    for (std::size_t l = 0; l + 1 < c.encoder_depth; ++l) {
      s.emplace_back(in, c.hidden_dim);
      in = c.hidden_dim;
    }
    s.emplace_back(c.mix ? 2 * in : in, c.feature_dim);
    return s;
  }

  static std::vector<std::pair<std::size_t, std::size_t>> decoder_shapes(const ModelConfig& c) {
    std::vector<std::pair<std::size_t, std::size_t>> s;
    std::size_t in = c.feature_dim;
    for (std::size_t l = 0; l + 1 < c.decoder_depth; ++l) {
      s.emplace_back(in, c.hidden_dim);
      in = c.hidden_dim;
    }
    s.emplace_back(in, c.input_dim);
    return s;
  }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static ModelParams init(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    ModelParams p;
    p.config = c;
    Rng rng(derive_seed({seed, 0x1417}));
    auto make = [&rng](std::pair<std::size_t, std::size_t> shape) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape.first));
      Linear l{Array({shape.first, shape.second}), Array({1, shape.second})};
      for (double& w : l.weight.data) w = rng.uniform(-bound, bound);
      for (double& b : l.bias.data) b = rng.uniform(-bound, bound);
      return l;
    };
    for (auto s : encoder_shapes(c)) p.encoder.push_back(make(s));
    for (auto s : decoder_shapes(c)) p.decoder.push_back(make(s));
    return p;
  }

  // Weight then bias of each encoder layer, then of each decoder layer.
  std::vector<Array*> tensors() {
    std::vector<Array*> out;
    for (auto* layers : {&encoder, &decoder})
      for (Linear& l : *layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      }
    return out;
  }
  std::vector<const Array*> tensors() const {
    std::vector<const Array*> out;
    for (auto* layers : {&encoder, &decoder})
      for (const Linear& l : *layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Array* a : tensors()) n += a->size();
    return n;
  }

  bool all_finite() const {
    for (const Array* a : tensors())
      if (!a->all_finite()) return false;
    return true;
  }

  bool operator==(const ModelParams&) const = default;
};

// Parameters placed on a tape for one forward/backward pass. Both modalities
// of every instance go through the same leaves.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParams& params, bool requires_grad = true)
      : params_(&params), tape_(&tape) {
    for (const Array* a : params.tensors()) leaves_.push_back(tape.leaf(*a, requires_grad));
  }

  Tensor encode(const Tensor& patches) const {
    const ModelConfig& c = params_->config;
    if (patches.shape().size() != 2 || patches.shape()[1] != c.input_dim)
      throw DimensionError("encode: expected patches with " + std::to_string(c.input_dim) +
                           " columns, got " + shape_str(patches.shape()));
    Tensor h = patches;
    const std::size_t n = c.encoder_depth;
    for (std::size_t l = 0; l + 1 < n; ++l) h = tanh(layer(l, h));
    if (c.mix) h = concat_cols(h, repeat_rows(mean_rows(h), h.shape()[0]));
    return layer(n - 1, h);
  }

  Tensor decode(const Tensor& tokens) const {
    const ModelConfig& c = params_->config;
    if (tokens.shape().size() != 2 || tokens.shape()[1] != c.feature_dim)
      throw DimensionError("decode: expected tokens with " + std::to_string(c.feature_dim) +
                           " columns, got " + shape_str(tokens.shape()));
    Tensor h = tokens;
    const std::size_t base = c.encoder_depth;
    const std::size_t n = c.decoder_depth;
    for (std::size_t l = 0; l + 1 < n; ++l) h = tanh(layer(base + l, h));
    return layer(base + n - 1, h);
  }

  // Leaves in ModelParams::tensors() order.
  const std::vector<Tensor>& leaves() const noexcept { return leaves_; }
  Tape& tape() const noexcept { return *tape_; }

 private:
  Tensor layer(std::size_t l, const Tensor& x) const {
    return add_row_vector(matmul(x, leaves_[2 * l]), leaves_[2 * l + 1]);
  }

  const ModelParams* params_;
  Tape* tape_;
  std::vector<Tensor> leaves_;
};

// Gradient-free encoding for evaluation.
inline Array encode(const ModelParams& params, const Array& patches) {
  Tape tape;
  BoundModel m(tape, params, false);
  return m.encode(tape.constant(patches)).value();
}

inline Array encode(const ModelParams& params, const Volume& v, const PatchGrid& grid) {
  return encode(params, patchify(v, grid));
}

inline Volume reconstruct(const ModelParams& params, const Volume& v, const PatchGrid& grid) {
  Tape tape;
  BoundModel m(tape, params, false);
  return depatchify(m.decode(m.encode(tape.constant(patchify(v, grid)))).value(), grid);
}

}  // namespace taco
