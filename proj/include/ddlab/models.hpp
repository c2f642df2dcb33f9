#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "ddlab/autodiff.hpp"
#include "ddlab/categorical.hpp"
#include "ddlab/tensor.hpp"

namespace ddlab {

struct ModelConfig {
  int seq_len = 2;          // D
  int vocab = 2;            // K, data categories (output head width)
  bool has_mask = true;     // adds a MASK row to the embedding table
  int embed_width = 16;
  int hidden_width = 32;
  int depth = 2;            // residual blocks
  int time_width = 8;       // sinusoidal features, must be even
  int noise_width = 0;      // generator noise input; 0 disables
  double head_init_scale = 0.01;

  int input_vocab() const { return vocab + (has_mask ? 1 : 0); }
  void validate() const;
  // Same network shape ignoring the generator-only noise input.
  bool compatible_with(const ModelConfig& other) const;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Sinusoidal features of t in [0, 1]: [B, width].
Tensor time_features(std::span<const double> t, int width);

// Shared residual network. `trainable` binds leaves to that store for
// gradients; when null the parameters of `store` enter as constants.
// noise: [B, noise_width] or empty when noise_width == 0.
Var network_forward(Tape& tape, const ModelConfig& config, const ParamStore& store,
                    ParamStore* trainable, const TokenBatch& z, std::span<const double> t,
                    const Tensor* noise);

void init_network_params(const ModelConfig& config, ParamStore& store, std::uint64_t seed);

// Factorized denoiser: logits over data categories per position (MASK is
// input-only). Also used for the auxiliary model.
class Denoiser {
 public:
  Denoiser(ModelConfig config, std::uint64_t seed);
  Denoiser(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // logits [B, D, K] with parameters on the tape as trainable leaves.
  Var forward(Tape& tape, const TokenBatch& z, std::span<const double> t);
  // Same computation with parameters as constants.
  Var forward_const(Tape& tape, const TokenBatch& z, std::span<const double> t) const;
  Tensor logits(const TokenBatch& z, double t) const;
  Tensor logits(const TokenBatch& z, std::span<const double> t) const;

 private:
  ModelConfig config_;
  ParamStore params_;
};

// Noise-conditioned generator: a denoiser plus a learned linear projection of
// a standard normal vector added to the first hidden residual.
class Generator {
 public:
  Generator(ModelConfig config, std::uint64_t seed);
  Generator(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int noise_width() const { return config_.noise_width; }

  Var forward(Tape& tape, const TokenBatch& z, std::span<const double> t, const Tensor& noise);
  Var forward_const(Tape& tape, const TokenBatch& z, std::span<const double> t,
                    const Tensor& noise) const;
  Tensor logits(const TokenBatch& z, double t, const Tensor& noise) const;

  // Standard normal noise of shape [batch, noise_width].
  Tensor draw_noise(std::size_t batch, Rng& rng) const;

 private:
  ModelConfig config_;
  ParamStore params_;
};

struct DistillModels {
  Generator generator;
  Denoiser auxiliary;
};

// Warm start: generator and auxiliary copy the teacher; the generator gains a
// noise projection of width generator_config.noise_width with N(0, scale^2)
// entries (zero when noise_init_scale is 0, which reproduces the teacher
// exactly). Throws IncompatibleArtifact if the shapes differ.
DistillModels init_from_teacher(const Denoiser& teacher, const ModelConfig& generator_config,
                                double noise_init_scale = 0.0, std::uint64_t seed = 0);

}  // namespace ddlab
