#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddlab/datasets.hpp"
#include "ddlab/diffusion.hpp"
#include "ddlab/distill.hpp"
#include "ddlab/models.hpp"
#include "ddlab/teacher.hpp"

namespace ddlab {

// Invalid configuration. `line` is 0 when no single line is to blame.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

struct EvalSettings {
  int k = 1;                       // sampling steps of the evaluated sampler
  double temperature = 1.0;        // sampling modifications
  double top_p = 1.0;
  std::vector<std::string> metrics{"kl", "gm", "perplexity", "sample_entropy"};
  // model | data | uniform | corrupted
  std::string sampler = "model";
  double corrupt_prob = 0.1;
  std::size_t samples = 10000;     // for perplexity and sample entropy
  std::size_t gm_batch = 256;
  int gm_pairs = 200;
  int noise_draws = 256;           // generator noise draws in the exact chain
  int entropy_probes = 256;
  std::vector<int> table_ks{1, 2, 4, 8, 16, 32, 64};
};

struct ReferenceSettings {
  int steps = 1500;
  std::size_t batch = 256;
  double lr = 0.05;
};

struct DistillSettings {
  DistillConfig algo;
  std::uint64_t steps = 8000;
  int noise_width = 4;
  // Standard deviation of the generator's initial noise projection.
  double noise_init_scale = 2.0;
  // constant | cosine (decays both learning rates to 0 over `steps`)
  std::string lr_schedule = "cosine";
  int log_every = 10;
  int eval_every = 500;
  int save_state_every = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  bool record_wallclock = true;

  DatasetSpec dataset;
  ProcessKind process = ProcessKind::masked;
  ScheduleKind schedule = ScheduleKind::linear;
  ModelConfig model;  // seq_len / vocab / has_mask follow dataset and process
  TeacherTrainConfig teacher;
  DistillSettings distill;
  EvalSettings eval;
  ReferenceSettings reference;

  SyntheticDataset make_dataset() const { return SyntheticDataset(dataset); }
  DiffusionProcess make_process() const;

  // Canonical text form; parse(serialize(c)) == c.
  std::string serialize() const;
  // FNV-1a 64 of the canonical text without the output directory, hex.
  std::string hash() const;

  static ExperimentConfig parse(const std::string& text, const std::string& source = "<config>");
  static ExperimentConfig load(const std::filesystem::path& path);

  // Sets one field from its "section.key" name and text value, as if it had
  // appeared in the file. Throws ConfigError for unknown keys or bad values.
  void set(const std::string& dotted_key, const std::string& value);

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return a.serialize() == b.serialize();
  }
};

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace ddlab
