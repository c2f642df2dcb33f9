#include "ddlab/models.hpp"

#include <cmath>
#include <stdexcept>

#include "ddlab/errors.hpp"
#include "ddlab/rng.hpp"

namespace ddlab {

void ModelConfig::validate() const {
  if (seq_len < 1 || vocab < 1 || embed_width < 1 || hidden_width < 1 || depth < 1 ||
      time_width < 2 || noise_width < 0) {
    throw std::invalid_argument("ModelConfig: widths must be >= 1 and depth >= 1");
  }
  if (time_width % 2 != 0) throw std::invalid_argument("ModelConfig: time_width must be even");
}

bool ModelConfig::compatible_with(const ModelConfig& o) const {
  return seq_len == o.seq_len && vocab == o.vocab && has_mask == o.has_mask &&
         embed_width == o.embed_width && hidden_width == o.hidden_width && depth == o.depth &&
         time_width == o.time_width;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  return {{"model.seq_len", std::to_string(seq_len)},
          {"model.vocab", std::to_string(vocab)},
          {"model.has_mask", has_mask ? "true" : "false"},
          {"model.embed_width", std::to_string(embed_width)},
          {"model.hidden_width", std::to_string(hidden_width)},
          {"model.depth", std::to_string(depth)},
          {"model.time_width", std::to_string(time_width)},
          {"model.noise_width", std::to_string(noise_width)}};
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw IncompatibleArtifact("checkpoint header lacks " + key);
    return it->second;
  };
  ModelConfig c;
  c.seq_len = std::stoi(get("model.seq_len"));
  c.vocab = std::stoi(get("model.vocab"));
  c.has_mask = get("model.has_mask") == "true";
  c.embed_width = std::stoi(get("model.embed_width"));
  c.hidden_width = std::stoi(get("model.hidden_width"));
  c.depth = std::stoi(get("model.depth"));
  c.time_width = std::stoi(get("model.time_width"));
  c.noise_width = std::stoi(get("model.noise_width"));
  c.validate();
  return c;
}

Tensor time_features(std::span<const double> t, int width) {
  const std::size_t half = static_cast<std::size_t>(width / 2);
  Tensor out({t.size(), static_cast<std::size_t>(width)});
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      // Frequencies spread geometrically over [1, 100].
      const double f = half > 1 ? std::exp(std::log(100.0) * i / (half - 1)) : 1.0;
      out.at(b, i) = std::sin(f * t[b]);
      out.at(b, half + i) = std::cos(f * t[b]);
    }
  }
  return out;
}

namespace {

std::string block_name(int l, const char* part) {
  return "block" + std::to_string(l) + "." + part;
}

}  // namespace

void init_network_params(const ModelConfig& c, ParamStore& store, std::uint64_t seed) {
  c.validate();
  const auto vin = static_cast<std::size_t>(c.input_vocab());
  const auto e = static_cast<std::size_t>(c.embed_width);
  const auto h = static_cast<std::size_t>(c.hidden_width);
  const auto d = static_cast<std::size_t>(c.seq_len);
  const auto k = static_cast<std::size_t>(c.vocab);
  const auto tw = static_cast<std::size_t>(c.time_width);
  Rng rng(seed);

  auto normal_block = [&](const std::string& name, Shape shape, double stddev) {
    store.add(name, std::move(shape));
    for (auto& v : store.values(name)) v = stddev * rng.normal();
  };
  auto zero_block = [&](const std::string& name, Shape shape) { store.add(name, std::move(shape)); };

  normal_block("embed", {vin, e}, 1.0);
  normal_block("in_proj", {e, h}, 1.0 / std::sqrt(double(e)));
  zero_block("in_bias", {h});
  normal_block("pos", {d, h}, 0.5);
  normal_block("time_proj", {tw, h}, 1.0 / std::sqrt(double(tw)));
  for (int l = 0; l < c.depth; ++l) {
    normal_block(block_name(l, "ch_w1"), {h, h}, 1.0 / std::sqrt(double(h)));
    zero_block(block_name(l, "ch_b1"), {h});
    normal_block(block_name(l, "ch_w2"), {h, h}, 0.5 / std::sqrt(double(h)));
    zero_block(block_name(l, "ch_b2"), {h});
    normal_block(block_name(l, "mix_in"), {h, h}, 1.0 / std::sqrt(double(h)));
    normal_block(block_name(l, "mix_pos"), {d, d}, 1.0 / std::sqrt(double(d)));
    normal_block(block_name(l, "mix_out"), {h, h}, 0.5 / std::sqrt(double(h)));
  }
  normal_block("head_w", {h, k}, c.head_init_scale / std::sqrt(double(h)));
  zero_block("head_b", {k});
  if (c.noise_width > 0) zero_block("noise_proj", {static_cast<std::size_t>(c.noise_width), h});
}

Var network_forward(Tape& tape, const ModelConfig& c, const ParamStore& store,
                    ParamStore* trainable, const TokenBatch& z, std::span<const double> t,
                    const Tensor* noise) {
  const auto d = static_cast<std::size_t>(c.seq_len);
  const auto k = static_cast<std::size_t>(c.vocab);
  const std::size_t b = z.batch();
  if (z.positions() != d) {
    throw std::invalid_argument("model: expected " + std::to_string(d) + " positions, got " +
                                std::to_string(z.positions()));
  }
  if (t.size() != b) throw std::invalid_argument("model: one time per example");
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] < 0 || z[i] >= c.input_vocab()) {
      throw std::invalid_argument("model: invalid token id " + std::to_string(z[i]));
    }
  }
  auto leaf = [&](const std::string& name) {
    if (trainable != nullptr) return tape.param(*trainable, name);
    const auto& seg = store.segment(name);
    auto vals = store.values(name);
    return tape.constant(Tensor(seg.shape, std::vector<double>(vals.begin(), vals.end())));
  };

  Var h = gather_rows(leaf("embed"), z.tokens());
  h = add_bias(matmul(h, leaf("in_proj")), leaf("in_bias"));
  h = add_tiled(h, leaf("pos"));
  Var tf = tape.constant(time_features(t, c.time_width));
  h = h + repeat_rows(matmul(tf, leaf("time_proj")), d);
  if (c.noise_width > 0) {
    const Shape want{b, static_cast<std::size_t>(c.noise_width)};
    if (noise == nullptr || noise->shape() != want) {
      throw std::invalid_argument("generator: noise must have shape " + shape_str(want));
    }
    Var n = tape.constant(*noise);
    h = h + repeat_rows(matmul(n, leaf("noise_proj")), d);
  }
  for (int l = 0; l < c.depth; ++l) {
    Var u = tanh(add_bias(matmul(h, leaf(block_name(l, "ch_w1"))), leaf(block_name(l, "ch_b1"))));
    h = h + add_bias(matmul(u, leaf(block_name(l, "ch_w2"))), leaf(block_name(l, "ch_b2")));
    Var v = tanh(matmul(h, leaf(block_name(l, "mix_in"))));
    Var m = mix_positions(leaf(block_name(l, "mix_pos")), v, d);
    h = h + matmul(m, leaf(block_name(l, "mix_out")));
  }
  Var logits = add_bias(matmul(h, leaf("head_w")), leaf("head_b"));
  return reshape(logits, {b, d, k});
}

// ------------------------------------------------------------------ Denoiser

Denoiser::Denoiser(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.noise_width = 0;
  init_network_params(config_, params_, seed);
}

Denoiser::Denoiser(ModelConfig config, ParamStore params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  if (config_.noise_width != 0) throw IncompatibleArtifact("denoiser cannot take noise input");
}

Var Denoiser::forward(Tape& tape, const TokenBatch& z, std::span<const double> t) {
  return network_forward(tape, config_, params_, &params_, z, t, nullptr);
}

Var Denoiser::forward_const(Tape& tape, const TokenBatch& z, std::span<const double> t) const {
  return network_forward(tape, config_, params_, nullptr, z, t, nullptr);
}

Tensor Denoiser::logits(const TokenBatch& z, std::span<const double> t) const {
  Tape tape;
  return forward_const(tape, z, t).value();
}

Tensor Denoiser::logits(const TokenBatch& z, double t) const {
  std::vector<double> ts(z.batch(), t);
  return logits(z, ts);
}

// ----------------------------------------------------------------- Generator

Generator::Generator(ModelConfig config, std::uint64_t seed) : config_(config) {
  init_network_params(config_, params_, seed);
}

Generator::Generator(ModelConfig config, ParamStore params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
}

Var Generator::forward(Tape& tape, const TokenBatch& z, std::span<const double> t,
                       const Tensor& noise) {
  return network_forward(tape, config_, params_, &params_, z, t, &noise);
}

Var Generator::forward_const(Tape& tape, const TokenBatch& z, std::span<const double> t,
                             const Tensor& noise) const {
  return network_forward(tape, config_, params_, nullptr, z, t, &noise);
}

Tensor Generator::logits(const TokenBatch& z, double t, const Tensor& noise) const {
  Tape tape;
  std::vector<double> ts(z.batch(), t);
  return forward_const(tape, z, ts, noise).value();
}

Tensor Generator::draw_noise(std::size_t batch, Rng& rng) const {
  Tensor n({batch, static_cast<std::size_t>(config_.noise_width)});
  for (auto& v : n.vec()) v = rng.normal();
  return n;
}

DistillModels init_from_teacher(const Denoiser& teacher, const ModelConfig& generator_config,
                                double noise_init_scale, std::uint64_t seed) {
  if (!teacher.config().compatible_with(generator_config)) {
    throw IncompatibleArtifact("init_from_teacher: generator config does not match teacher");
  }
  ModelConfig gen_config = teacher.config();
  gen_config.noise_width = generator_config.noise_width;
  ParamStore gen_params = teacher.params();
  if (gen_config.noise_width > 0) {
    gen_params.add("noise_proj", {static_cast<std::size_t>(gen_config.noise_width),
                                  static_cast<std::size_t>(gen_config.hidden_width)});
    Rng rng(seed);
    for (auto& v : gen_params.values("noise_proj")) v = noise_init_scale * rng.normal();
  }
  return DistillModels{Generator(gen_config, std::move(gen_params)),
                       Denoiser(teacher.config(), teacher.params())};
}

}  // namespace ddlab
