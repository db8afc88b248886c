#pragma once

// The four pipeline stages behind the command-line tool. Each stage reads the
// previous stage's files, writes its own, copies the config it ran with into
// its output directory and returns a process exit code.

#include <cstddef>
#include <exception>
#include <filesystem>
#include <functional>
#include <iosfwd>

#include "mountcheck/config.hpp"

namespace mountcheck {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalidInput = 1;
inline constexpr int kExitPartialFailure = 2;
inline constexpr int kExitInternal = 3;

struct CommandOptions {
  std::size_t jobs = 1;
  bool oracle = false;
  bool json = false;
  std::ostream* out = nullptr;  // defaults to std::cout
  std::ostream* err = nullptr;  // defaults to std::cerr
};

/// Exit code for an exception escaping a stage: 1 for bad input or files,
/// 3 for divergence and anything unexpected.
int exit_code_for(const std::exception& e);

/// Runs body(i, worker) for i in [0, n) on up to `jobs` threads. Callers
/// write results into slot i, so output order never depends on scheduling.
/// The first exception thrown by any body is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs,
                  const std::function<void(std::size_t index, std::size_t worker)>& body);

/// Writes config.json, dataset.json and samples/<id>/ under `out_dir`.
int cmd_generate(const RunConfig& cfg, const fs::path& out_dir, const CommandOptions& opts);

/// Writes <id>.fcfl per sample and flow_log.jsonl into `flows_dir`. A sample
/// that fails is logged and skipped; the exit code is then 2.
int cmd_flow(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& flows_dir,
             const CommandOptions& opts);

/// Trains on the train part of the seeded split and writes checkpoint.fcck,
/// train_log.jsonl, split.json and validation.txt into `out_dir`.
int cmd_train(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& flows_dir,
              const fs::path& out_dir, const CommandOptions& opts);

/// Evaluates the test part of the seeded split and writes report.txt,
/// report.json, distributions.csv, features.csv and predictions.csv.
int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& dataset_dir,
             const fs::path& flows_dir, const fs::path& out_dir, const CommandOptions& opts);

}  // namespace mountcheck
