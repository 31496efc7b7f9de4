#pragma once

// AdamW with a warmup + cosine schedule over the combined objective
// L_uni + L_intra + L_inter.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "taco/checkpoint.hpp"
#include "taco/errors.hpp"
#include "taco/losses.hpp"
#include "taco/model.hpp"
#include "taco/rng.hpp"
#include "taco/synthdata.hpp"

namespace taco {

struct TrainConfig {
  double learning_rate = 3e-4;
  double weight_decay = 1e-5;
  std::size_t iterations = 2000;
  std::size_t batch_instances = 2;
  std::size_t omega = 5;
  double delta = 0.3;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 7;
  std::size_t patch = 4;
  std::size_t feature_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t encoder_depth = 3;
  std::size_t decoder_depth = 2;
  bool mix = true;
  bool use_intra = true;
  bool use_inter = true;
  // Every ordered instance pair and modality combination instead of the
  // round-robin pairing with one random modality per side.
  bool full_inter_pairs = false;
  // 0 writes only the final checkpoint.
  std::size_t checkpoint_every = 0;
  std::string data;
  std::string out;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
      throw ConfigError("warmup_fraction must lie in [0, 1)");
    if (omega < 1) throw ConfigError("omega must be at least 1");
    if (batch_instances < 1) throw ConfigError("batch_instances must be at least 1");
    if (use_inter && batch_instances < 2)
      throw ConfigError("the inter-instance loss needs batch_instances >= 2");
    if (patch < 1) throw ConfigError("patch must be positive");
    (void)Margin(delta);
  }

  ModelConfig model_config() const {
    ModelConfig c;
    c.input_dim = patch * patch * patch;
    c.feature_dim = feature_dim;
    c.hidden_dim = hidden_dim;
    c.encoder_depth = encoder_depth;
    c.decoder_depth = decoder_depth;
    c.mix = mix;
    return c;
  }
};

// Flat `key = value` text, `#` starts a comment.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config_text(s.str());
}

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  if constexpr (std::is_unsigned_v<T>)
    if (!v.empty() && v[0] == '-') throw ConfigError(key + ": expected a non-negative value");
  if (!(in >> out) || !(in >> std::ws).eof()) throw ConfigError(key + ": cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

}  // namespace detail

inline void apply_config(TrainConfig& c, const std::map<std::string, std::string>& kv) {
  using detail::parse_bool;
  using detail::parse_number;
  for (const auto& [k, v] : kv) {
    if (k == "learning_rate") c.learning_rate = parse_number<double>(k, v);
    else if (k == "weight_decay") c.weight_decay = parse_number<double>(k, v);
    else if (k == "iterations") c.iterations = parse_number<std::size_t>(k, v);
    else if (k == "batch_instances") c.batch_instances = parse_number<std::size_t>(k, v);
    else if (k == "omega") c.omega = parse_number<std::size_t>(k, v);
    else if (k == "delta") c.delta = parse_number<double>(k, v);
    else if (k == "warmup_fraction") c.warmup_fraction = parse_number<double>(k, v);
    else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "patch") c.patch = parse_number<std::size_t>(k, v);
    else if (k == "feature_dim") c.feature_dim = parse_number<std::size_t>(k, v);
    else if (k == "hidden_dim") c.hidden_dim = parse_number<std::size_t>(k, v);
    else if (k == "encoder_depth") c.encoder_depth = parse_number<std::size_t>(k, v);
    else if (k == "decoder_depth") c.decoder_depth = parse_number<std::size_t>(k, v);
    else if (k == "mix") c.mix = parse_bool(k, v);
    else if (k == "use_intra") c.use_intra = parse_bool(k, v);
    else if (k == "use_inter") c.use_inter = parse_bool(k, v);
    else if (k == "full_inter_pairs") c.full_inter_pairs = parse_bool(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = parse_number<std::size_t>(k, v);
    else if (k == "data") c.data = v;
    else if (k == "out") c.out = v;
    else throw ConfigError("unknown config key '" + k + "'");
  }
}

inline std::string describe(const TrainConfig& c) {
  std::ostringstream s;
  s.precision(17);
  s << "learning_rate = " << c.learning_rate << "\n"
    << "weight_decay = " << c.weight_decay << "\n"
    << "iterations = " << c.iterations << "\n"
    << "batch_instances = " << c.batch_instances << "\n"
    << "omega = " << c.omega << "\n"
    << "delta = " << c.delta << "\n"
    << "warmup_fraction = " << c.warmup_fraction << "\n"
    << "seed = " << c.seed << "\n"
    << "patch = " << c.patch << "\n"
    << "feature_dim = " << c.feature_dim << "\n"
    << "hidden_dim = " << c.hidden_dim << "\n"
    << "encoder_depth = " << c.encoder_depth << "\n"
    << "decoder_depth = " << c.decoder_depth << "\n"
    << "mix = " << c.mix << "\n"
    << "use_intra = " << c.use_intra << "\n"
    << "use_inter = " << c.use_inter << "\n"
    << "full_inter_pairs = " << c.full_inter_pairs << "\n"
    << "checkpoint_every = " << c.checkpoint_every << "\n"
    << "data = " << c.data << "\n"
    << "out = " << c.out << "\n";
  return s.str();
}

// ---------------------------------------------------------------------------

struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One AdamW update. Decay is decoupled: w <- w - lr*wd*w, then the
// bias-corrected Adam step. Throws before touching anything if a gradient is
// not finite.
inline void adamw_step(const std::vector<Array*>& params,
                       const std::vector<const std::vector<double>*>& grads, AdamWState& state,
                       double lr, double wd, AdamWHyper h = {}) {
  if (params.size() != grads.size()) throw DimensionError("adamw: parameter/gradient count mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (grads[t]->size() != params[t]->size())
      throw DimensionError("adamw: gradient " + std::to_string(t) + " has wrong size");
    for (double g : *grads[t])
      if (!std::isfinite(g))
        throw NonFiniteError("adamw: non-finite gradient in parameter tensor " + std::to_string(t));
  }
  if (state.m.empty()) {
    for (const Array* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adamw: state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& w = params[t]->data;
    const auto& g = *grads[t];
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr * wd * w[i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + h.eps);
    }
  }
}

// Linear warmup from 0 over floor(warmup_fraction * total) steps, then cosine
// decay to 0 at `total`.
inline double lr_schedule(std::size_t step, std::size_t total, double base_lr,
                          double warmup_fraction) {
  if (total == 0) return 0.0;
  step = std::min(step, total);
  const auto warm = static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total)));
  if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (total == warm) return base_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------

struct StepLog {
  std::size_t step = 0;  // 1-based
  LossReport loss;
  double lr = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string loss_csv(const std::vector<StepLog>& log) {
  std::string out = "step,l_uni,l_intra,l_inter,l_total,lr\n";
  for (const StepLog& s : log)
    out += std::to_string(s.step) + "," + format_double(s.loss.l_uni) + "," +
           format_double(s.loss.l_intra) + "," + format_double(s.loss.l_inter) + "," +
           format_double(s.loss.l_total) + "," + format_double(s.lr) + "\n";
  return out;
}

// Instances drawn for a step: a seeded partial shuffle of the training ids.
inline std::vector<std::size_t> sample_batch(std::size_t n, std::size_t b, std::uint64_t seed,
                                             std::size_t step) {
  if (b > n) throw ConfigError("batch_instances exceeds the number of training instances");
  Rng rng(derive_seed({seed, 0xba7c, step}));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(b);
  return idx;
}

// Round-robin pairing q -> q+1 (mod B) with one random modality per side, or
// the full enumeration.
inline std::vector<InterPair> inter_pairing(std::size_t batch, std::size_t modalities, bool full,
                                            std::uint64_t seed, std::size_t step) {
  std::vector<InterPair> pairs;
  if (batch < 2) return pairs;
  if (full) {
    for (std::size_t h = 0; h < batch; ++h)
      for (std::size_t g = 0; g < batch; ++g)
        if (h != g)
          for (std::size_t i = 0; i < modalities; ++i)
            for (std::size_t t = 0; t < modalities; ++t) pairs.push_back({h, i, g, t});
    return pairs;
  }
  Rng rng(derive_seed({seed, 0x9a12, step}));
  for (std::size_t q = 0; q < batch; ++q) {
    const std::size_t i = rng.below(modalities);
    const std::size_t t = rng.below(modalities);
    pairs.push_back({q, i, (q + 1) % batch, t});
  }
  return pairs;
}

struct TrainHooks {
  std::function<void(const std::string&)> warn;
  // Called after each step.
  std::function<void(const StepLog&)> on_step;
};

// Trains on `train` (every instance must carry all modalities). When
// config.out is set, checkpoints and loss.csv are written there.
inline TrainResult train(const TrainConfig& config, const std::vector<InstanceSample>& train_set,
                         const TrainHooks& hooks = {}) {
  config.validate();
  if (train_set.empty()) throw ConfigError("train: no training instances");
  const Extent3 shape = train_set.front().modalities.at(0).shape;
  const PatchGrid grid(shape, {config.patch, config.patch, config.patch});
  const std::size_t modalities = train_set.front().modalities.size();

  std::vector<std::vector<Array>> patches;
  for (const auto& s : train_set) {
    if (s.modalities.size() != modalities)
      throw ConfigError("train: all instances need the same modalities");
    std::vector<Array> per;
    for (const Volume& v : s.modalities) per.push_back(patchify(v, grid));
    patches.push_back(std::move(per));
  }

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck.grid = grid;
  ck.seed = config.seed;
  ck.params = ModelParams::init(config.model_config(), config.seed);
  AdamWState opt;
  const std::filesystem::path out = config.out;
  auto save = [&](const std::string& name) {
    if (!config.out.empty()) save_checkpoint(out / name, ck);
  };

  for (std::size_t s = 0; s < config.iterations; ++s) {
    const std::size_t step = s + 1;
    const double lr = lr_schedule(step, config.iterations, config.learning_rate, config.warmup_fraction);
    const auto batch_idx = sample_batch(train_set.size(), config.batch_instances, config.seed, step);

    Tape tape;
    BoundModel model(tape, ck.params);
    std::vector<InstanceFeatures> batch;
    std::vector<Tensor> recon;
    for (std::size_t b : batch_idx) {
      InstanceFeatures f{train_set[b].id, {}};
      for (std::size_t m = 0; m < modalities; ++m) {
        const Tensor x = tape.constant(patches[b][m]);
        const Tensor z = model.encode(x);
        recon.push_back(reconstruction_loss(model.decode(z), x));
        f.modalities.push_back(z);
      }
      batch.push_back(std::move(f));
    }
    // Non-finite tokens would otherwise surface as a degenerate-norm error in
    // the triplet terms.
    for (const auto& f : batch)
      for (const Tensor& z : f.modalities)
        if (!z.value().all_finite()) {
          save("last_good.ckpt");
          throw NonFiniteError("train: non-finite tokens at step " + std::to_string(step));
        }
    Tensor l_uni = recon.front();
    for (std::size_t i = 1; i < recon.size(); ++i) l_uni = add(l_uni, recon[i]);
    l_uni = scale(l_uni, 1.0 / static_cast<double>(recon.size()));

    LossOptions lo{config.omega, Margin(config.delta), derive_seed({config.seed, step}), hooks.warn};
    const LossTerm none{tape.constant(Array::scalar(0.0)), 0, 0};
    const LossTerm l_intra = config.use_intra ? intra_loss(batch, lo) : none;
    const LossTerm l_inter =
        config.use_inter
            ? inter_loss(batch,
                         inter_pairing(batch.size(), modalities, config.full_inter_pairs,
                                       config.seed, step),
                         lo)
            : none;
    const TotalLoss total = total_loss(l_uni, l_intra, l_inter, recon.size());
    if (!std::isfinite(total.report.l_total)) {
      save("last_good.ckpt");
      throw NonFiniteError("train: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(total.value);

    std::vector<const std::vector<double>*> grads;
    for (const Tensor& leaf : model.leaves()) grads.push_back(&tape.grad_buffer(leaf.id()));
    try {
      adamw_step(ck.params.tensors(), grads, opt, lr, config.weight_decay);
    } catch (const NonFiniteError&) {
      save("last_good.ckpt");
      throw;
    }
    ck.step = step;
    result.log.push_back({step, total.report, lr});
    if (hooks.on_step) hooks.on_step(result.log.back());
    if (config.checkpoint_every && step % config.checkpoint_every == 0 && step != config.iterations)
      save("step_" + std::to_string(step) + ".ckpt");
  }

  if (!config.out.empty()) {
    save("final.ckpt");
    write_bytes(out / "loss.csv", loss_csv(result.log));
  }
  return result;
}

}  // namespace taco
