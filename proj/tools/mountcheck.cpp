#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mountcheck/commands.hpp"
#include "mountcheck/dataio.hpp"

using namespace mountcheck;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Global seed; overrides the config");
  cmd->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "Output directory");
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : parse_run_config(io::read_text(c.config));
  if (c.seed) cfg.set_seed(*c.seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR mount miscalibration detector"};
  app.require_subcommand(1);

  Common common;
  bool oracle = false;
  bool as_json = false;
  std::string dataset, flows, checkpoint;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  add_common(gen, common);

  auto* flow = app.add_subcommand("flow", "Estimate scene flow for every sample");
  add_common(flow, common);
  flow->add_option("dataset", dataset, "Dataset directory")->required();
  flow->add_flag("--oracle", oracle, "Use analytic flows instead of estimation");

  auto* train = app.add_subcommand("train", "Train the detector");
  add_common(train, common);
  train->add_option("dataset", dataset, "Dataset directory")->required();
  train->add_option("--flows", flows, "Flow directory (default <dataset>/flows)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval, common);
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("dataset", dataset, "Dataset directory")->required();
  eval->add_option("--flows", flows, "Flow directory (default <dataset>/flows)");
  eval->add_flag("--json", as_json, "Print the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalidInput;
  }

  try {
    RunConfig cfg = load_config(common);
    CommandOptions opts;
    opts.jobs = common.jobs;
    opts.oracle = oracle;
    opts.json = as_json;
    const fs::path flows_dir = flows.empty() ? fs::path(dataset) / "flows" : fs::path(flows);

    if (gen->parsed()) {
      if (!common.out.empty()) cfg.out = common.out;
      return cmd_generate(cfg, cfg.out, opts);
    }
    if (flow->parsed()) {
      const fs::path out = common.out.empty() ? fs::path(dataset) / "flows" : fs::path(common.out);
      return cmd_flow(cfg, dataset, out, opts);
    }
    if (train->parsed()) {
      if (!common.out.empty()) cfg.out = common.out;
      return cmd_train(cfg, dataset, flows_dir, cfg.out, opts);
    }
    const fs::path out = common.out.empty() ? fs::path(checkpoint).parent_path() / "eval" : fs::path(common.out);
    return cmd_eval(cfg, checkpoint, dataset, flows_dir, out, opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
