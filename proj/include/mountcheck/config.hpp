#pragma once

#include <cstdint>
#include <string>

#include "mountcheck/detector.hpp"
#include "mountcheck/pipeline.hpp"
#include "mountcheck/synthgen.hpp"

namespace mountcheck {

struct EvalConfig {
  double threshold = 0.5;
  /// Cross values beyond +-cross_limit are clamped into the edge bins of
  /// the distribution export.
  double cross_limit = 20.0;
};

/// Everything a run depends on. Every key of the JSON form is optional and
/// defaults to the values below; unknown keys are rejected. See
/// docs/formats.md for the document layout.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";
  DatasetConfig dataset;
  PipelineConfig pipeline;
  int n_bins = kDefaultBins;
  TrainConfig train;
  EvalConfig eval;

  /// Sets the global seed and every module seed derived from it.
  void set_seed(std::uint64_t s);
  /// Enforces every module invariant; messages name the offending key.
  void validate() const;
};

/// Parses and validates. Throws SchemaViolation for unknown keys or wrong
/// types, and the module's own error kind for violated invariants.
RunConfig parse_run_config(const std::string& json_text);
/// Full document with every key spelled out; parse_run_config inverts it.
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace mountcheck
