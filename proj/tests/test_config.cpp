#include <atomic>
#include <filesystem>
#include <stdexcept>

#include <doctest.h>
#include <json.hpp>

#include "mountcheck/commands.hpp"
#include "mountcheck/config.hpp"
#include "mountcheck/error.hpp"

using namespace mountcheck;
using json = nlohmann::json;

namespace {

/// Parses `text` and returns the error, failing the test if it parses.
Error parse_error(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected a config error");
  return Error(ErrorKind::InvalidArgument, "");
}

}  // namespace

TEST_CASE("empty document gives the defaults") {
  const RunConfig c = parse_run_config("{}");
  const RunConfig d;
  CHECK(c.seed == 0);
  CHECK(c.out == "run");
  CHECK(c.dataset.n_samples == d.dataset.n_samples);
  CHECK(c.dataset.aligned_fraction == 0.5);
  CHECK(c.train.lr == 8e-3);
  CHECK(c.train.epochs == d.train.epochs);
  CHECK(c.n_bins == 72);
  CHECK(c.eval.threshold == 0.5);
  CHECK_FALSE(c.dataset.severity_mix.has_value());
}

TEST_CASE("config round trip") {
  RunConfig c;
  c.set_seed(42);
  c.out = "elsewhere";
  c.dataset.n_samples = 17;
  c.dataset.severity_mix = std::array<double, 3>{2, 1, 1};
  c.dataset.scene.box_height = {1.0, 2.5};
  c.dataset.trajectories.frame_rate = 10.0;
  c.dataset.trajectories.duration = 1.0;
  c.pipeline.solver.lambda = 0.25;
  c.n_bins = 36;
  c.train.batch_size = 8;
  c.eval.cross_limit = 5.0;

  const std::string text = run_config_to_json(c);
  const RunConfig back = parse_run_config(text);
  CHECK(run_config_to_json(back) == text);
  CHECK(back.seed == 42);
  CHECK(back.dataset.seed == 42);
  CHECK(back.train.seed == 42);
  CHECK(back.dataset.severity_mix == c.dataset.severity_mix);
  CHECK(back.dataset.scene.box_height.max == 2.5);
  CHECK(back.pipeline.solver.lambda == 0.25);

  // every key is spelled out in the serialized form
  const json j = json::parse(text);
  CHECK(j.at("dataset").at("scene").contains("noise_sigma"));
  CHECK(j.at("flow").contains("max_flow_vectors"));
  CHECK(j.at("dataset").at("severity_mix").is_array());
  CHECK(json::parse(run_config_to_json(RunConfig{})).at("dataset").at("severity_mix").is_null());
}

TEST_CASE("seed propagates to module seeds") {
  const RunConfig c = parse_run_config(R"({"seed": 9})");
  CHECK(c.dataset.seed == 9);
  CHECK(c.train.seed == 9);
}

TEST_CASE("schema violations name the key") {
  Error e = parse_error(R"({"dataset": {"scene": {"boxs": 3}}})");
  CHECK(e.kind() == ErrorKind::SchemaViolation);
  CHECK(std::string(e.what()).find("dataset.scene.boxs") != std::string::npos);

  e = parse_error(R"({"train": {"epochs": 1.5}})");
  CHECK(e.kind() == ErrorKind::SchemaViolation);
  CHECK(std::string(e.what()).find("train.epochs") != std::string::npos);

  e = parse_error(R"({"seed": -1})");
  CHECK(e.kind() == ErrorKind::SchemaViolation);

  e = parse_error(R"({"dataset": {"scene": {"box_height": [1]}}})");
  CHECK(std::string(e.what()).find("box_height") != std::string::npos);

  e = parse_error(R"({"dataset": []})");
  CHECK(e.kind() == ErrorKind::SchemaViolation);

  e = parse_error("[1, 2");
  CHECK(e.kind() == ErrorKind::SchemaViolation);
}

TEST_CASE("module invariants are enforced at parse time") {
  Error e = parse_error(R"({"dataset": {"combination_weights": [0, 0, 0, 0, 0, 0, 0]}})");
  CHECK(e.kind() == ErrorKind::InfeasibleMix);
  CHECK(std::string(e.what()).find("dataset") != std::string::npos);

  e = parse_error(R"({"dataset": {"severity_mix": [-1, 1, 1]}})");
  CHECK(std::string(e.what()).find("dataset") != std::string::npos);

  e = parse_error(R"({"train": {"lr": 0}})");
  CHECK(std::string(e.what()).find("train") != std::string::npos);

  e = parse_error(R"({"eval": {"threshold": 1.0}})");
  CHECK(std::string(e.what()).find("eval.threshold") != std::string::npos);

  e = parse_error(R"({"features": {"n_bins": 0}})");
  CHECK(std::string(e.what()).find("features.n_bins") != std::string::npos);

  e = parse_error(R"({"out": ""})");
  CHECK(std::string(e.what()).find("out") != std::string::npos);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(Error(ErrorKind::SchemaViolation, "x")) == kExitInvalidInput);
  CHECK(exit_code_for(Error(ErrorKind::Io, "x")) == kExitInvalidInput);
  CHECK(exit_code_for(Error(ErrorKind::LayoutMismatch, "x")) == kExitInvalidInput);
  CHECK(exit_code_for(Error(ErrorKind::Diverged, "x")) == kExitInternal);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitInternal);
  CHECK(exit_code_for(std::filesystem::filesystem_error("x", std::error_code())) == kExitInvalidInput);
}

TEST_CASE("parallel_for") {
  for (std::size_t jobs : {1, 2, 4}) {
    std::vector<int> slots(100, 0);
    parallel_for(slots.size(), jobs, [&](std::size_t i, std::size_t worker) {
      CHECK(worker < jobs);
      slots[i] = static_cast<int>(i) * 2;
    });
    for (std::size_t i = 0; i < slots.size(); ++i) CHECK(slots[i] == static_cast<int>(i) * 2);
  }

  parallel_for(0, 3, [](std::size_t, std::size_t) { FAIL("no work expected"); });

  std::atomic<int> ran{0};
  CHECK_THROWS_AS(parallel_for(50, 2,
                               [&](std::size_t i, std::size_t) {
                                 ++ran;
                                 if (i == 7) throw Error(ErrorKind::Io, "boom");
                               }),
                  Error);
  CHECK(ran.load() >= 8);
}
