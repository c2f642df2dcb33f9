#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ddlab/models.hpp"

namespace ddlab {

// On-disk layout (version 1):
//   "DDLAB-CHECKPOINT 1\n"
//   "header_bytes <n>\n"            n bytes of "key = value\n" lines, keys sorted
//   "values <count>\n"
//   count x 8 bytes, IEEE-754 binary64, little-endian
struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<double> values;

  const std::string& get(const std::string& key) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr int kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Model checkpoints carry kind = teacher | generator | auxiliary plus the
// model config; `extra` entries (config hash, seed) are merged into the header.
Checkpoint model_checkpoint(const std::string& kind, const ModelConfig& config,
                            const ParamStore& params,
                            const std::map<std::string, std::string>& extra = {});
Denoiser denoiser_from_checkpoint(const Checkpoint& ckpt);
Generator generator_from_checkpoint(const Checkpoint& ckpt);

// Loads `values` into a store with the layout implied by `config`.
ParamStore params_from_values(const ModelConfig& config, const std::vector<double>& values);

}  // namespace ddlab
