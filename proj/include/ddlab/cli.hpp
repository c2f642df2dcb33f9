#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ddlab/checkpoint.hpp"
#include "ddlab/config.hpp"
#include "ddlab/exact_distribution.hpp"

namespace ddlab {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitArtifact = 3,
  kExitNumerical = 4,
};

// Entry point of the `ddlab` tool. Never throws; returns the exit code.
int run_cli(int argc, const char* const* argv);

struct MetricRecord {
  std::string metric;
  double value = 0.0;
  std::optional<double> stderr_;
};

// Metrics of the sampler selected by config.eval (model samplers need a
// teacher or generator checkpoint). Each metric draws from its own seeded
// stream, so values do not depend on which other metrics are requested.
std::vector<MetricRecord> evaluate_metrics(const ExperimentConfig& config,
                                           const Checkpoint* checkpoint,
                                           const std::vector<std::string>& metrics);

// Each token independently replaced by a uniform draw with probability c.
ExactDistribution corrupted_distribution(const ExactDistribution& q, double c);

}  // namespace ddlab
