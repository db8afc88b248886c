#include "mountcheck/commands.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "mountcheck/dataio.hpp"
#include "mountcheck/error.hpp"
#include "mountcheck/evalreport.hpp"
#include "mountcheck/pipeline.hpp"

namespace mountcheck {

using json = nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const fs::filesystem_error*>(&e) != nullptr) return kExitInvalidInput;
  const auto* err = dynamic_cast<const Error*>(&e);
  if (err == nullptr) return kExitInternal;
  switch (err->kind()) {
    case ErrorKind::Diverged:
    case ErrorKind::DoubleTransform:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::NoValidAngles:
      return kExitInternal;
    default:
      return kExitInvalidInput;
  }
}

void parallel_for(std::size_t n, std::size_t jobs,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i, 0);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      while (!failed.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i, w);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first) std::rethrow_exception(first);
}

namespace {

std::ostream& out_stream(const CommandOptions& o) { return o.out != nullptr ? *o.out : std::cout; }
std::ostream& err_stream(const CommandOptions& o) { return o.err != nullptr ? *o.err : std::cerr; }

void prepare_dir(const fs::path& dir, const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, fmt::format("cannot create directory {}: {}", dir.string(), ec.message()));
  io::write_text(dir / "config.json", run_config_to_json(cfg));
}

std::vector<SeverityBucket> buckets_of(const io::DatasetIndex& index) {
  std::vector<SeverityBucket> b;
  b.reserve(index.samples.size());
  for (const auto& e : index.samples) b.push_back(classify_severity(e.error));
  return b;
}

fs::path flow_path(const fs::path& flows_dir, const std::string& id) { return flows_dir / (id + ".fcfl"); }

json optional_number(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::string population_of(const RotationError& e) { return e.any_active() ? "misaligned" : "aligned"; }

}  // namespace

int cmd_generate(const RunConfig& cfg, const fs::path& out_dir, const CommandOptions& opts) {
  cfg.validate();
  const auto plans = plan_dataset(cfg.dataset);
  prepare_dir(out_dir, cfg);

  parallel_for(plans.size(), opts.jobs, [&](std::size_t i, std::size_t) {
    const LabeledSample s = materialize(plans[i], cfg.dataset);
    io::write_sample(out_dir / "samples" / s.id / "manifest.json", s);
  });

  io::DatasetIndex index;
  std::array<std::size_t, 4> counts{};
  for (const auto& p : plans) {
    index.samples.push_back({p.id, fmt::format("samples/{}/manifest.json", p.id), p.error});
    ++counts[static_cast<std::size_t>(classify_severity(p.error))];
  }
  io::write_dataset_index(out_dir, index);

  out_stream(opts) << fmt::format("generated {} samples: Aligned {}, Hard {}, Medium {}, Easy {}\n",
                                  plans.size(), counts[0], counts[1], counts[2], counts[3]);
  return kExitOk;
}

int cmd_flow(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& flows_dir,
             const CommandOptions& opts) {
  cfg.validate();
  const io::DatasetIndex index = io::read_dataset_index(dataset_dir);
  prepare_dir(flows_dir, cfg);

  struct Outcome {
    std::optional<SampleFlows> flows;
    std::string error;
  };
  std::vector<Outcome> outcomes(index.samples.size());
  parallel_for(index.samples.size(), opts.jobs, [&](std::size_t i, std::size_t) {
    const auto& entry = index.samples[i];
    const fs::path target = flow_path(flows_dir, entry.id);
    try {
      const LabeledSample s = io::read_sample(dataset_dir / entry.manifest);
      SampleFlows f = compute_sample_flows(s.sequence, s.boxes, s.error, opts.oracle, cfg.pipeline,
                                           derive_seed(cfg.seed, i));
      io::write_flow(target, f.flows);
      outcomes[i].flows = std::move(f);
    } catch (const Error& e) {
      outcomes[i].error = e.what();
      std::error_code ec;
      fs::remove(target, ec);  // never leave a stale result behind
    }
  });

  std::string log;
  std::size_t failed = 0;
  double epe_sum = 0.0;
  std::size_t epe_count = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    json line{{"id", index.samples[i].id}};
    if (o.flows) {
      line["status"] = "ok";
      line["mean_epe"] = optional_number(o.flows->mean_epe);
      line["lateral_mean"] = o.flows->lateral_mean;
      line["vectors"] = o.flows->flows.size();
      line["error"] = nullptr;
      if (o.flows->mean_epe) {
        epe_sum += *o.flows->mean_epe;
        ++epe_count;
      }
    } else {
      ++failed;
      line["status"] = "error";
      line["mean_epe"] = nullptr;
      line["lateral_mean"] = nullptr;
      line["vectors"] = 0;
      line["error"] = o.error;
      err_stream(opts) << fmt::format("sample {}: {}\n", index.samples[i].id, o.error);
    }
    log += line.dump() + "\n";
  }
  io::write_text(flows_dir / "flow_log.jsonl", log);

  std::string summary = fmt::format("flow ({}): {} samples, {} ok, {} failed", opts.oracle ? "oracle" : "estimated",
                                    outcomes.size(), outcomes.size() - failed, failed);
  if (epe_count > 0) summary += fmt::format(", mean EPE {:.4f} m", epe_sum / static_cast<double>(epe_count));
  out_stream(opts) << summary << "\n";
  return failed > 0 ? kExitPartialFailure : kExitOk;
}

namespace {

struct LoadedInputs {
  std::vector<std::optional<DetectorInput>> inputs;  // indexed like the dataset
  std::vector<std::optional<FlowField>> flows;
  std::vector<std::string> missing;
};

/// Reads and featurizes the flows of `wanted`. Absent flow files are listed
/// in `missing`; unreadable ones are errors.
LoadedInputs load_inputs(const io::DatasetIndex& index, const std::vector<std::size_t>& wanted,
                         const fs::path& flows_dir, int n_bins, std::size_t jobs, bool keep_flows) {
  LoadedInputs r;
  r.inputs.resize(index.samples.size());
  r.flows.resize(index.samples.size());
  std::vector<char> absent(wanted.size(), 0);
  parallel_for(wanted.size(), jobs, [&](std::size_t k, std::size_t) {
    const std::size_t i = wanted[k];
    const fs::path p = flow_path(flows_dir, index.samples[i].id);
    if (!fs::exists(p)) {
      absent[k] = 1;
      return;
    }
    FlowField f = io::read_flow(p);
    r.inputs[i] = make_input(f, n_bins);
    if (keep_flows) r.flows[i] = std::move(f);
  });
  for (std::size_t k = 0; k < wanted.size(); ++k) {
    if (absent[k] != 0) r.missing.push_back(index.samples[wanted[k]].id);
  }
  return r;
}

json ids_json(const io::DatasetIndex& index, const std::vector<std::size_t>& part) {
  json a = json::array();
  for (auto i : part) a.push_back(index.samples[i].id);
  return a;
}

}  // namespace

int cmd_train(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& flows_dir,
              const fs::path& out_dir, const CommandOptions& opts) {
  cfg.validate();
  const io::DatasetIndex index = io::read_dataset_index(dataset_dir);
  const SplitIndices split = stratified_split(buckets_of(index), cfg.seed);

  std::vector<std::size_t> wanted = split.train;
  wanted.insert(wanted.end(), split.val.begin(), split.val.end());
  const LoadedInputs loaded = load_inputs(index, wanted, flows_dir, cfg.n_bins, opts.jobs, false);
  for (const auto& id : loaded.missing) err_stream(opts) << fmt::format("sample {}: no flow file, skipped\n", id);

  const auto collect = [&](const std::vector<std::size_t>& part) {
    std::vector<TrainingSample> v;
    for (auto i : part) {
      if (loaded.inputs[i]) v.push_back({&*loaded.inputs[i], Label::from_error(index.samples[i].error)});
    }
    return v;
  };
  const std::vector<TrainingSample> train = collect(split.train);
  const std::vector<TrainingSample> val = collect(split.val);
  std::size_t aligned = 0;
  for (const auto& s : train) aligned += s.label.misaligned ? 0 : 1;
  if (aligned == 0) throw Error(ErrorKind::InvalidArgument, "training split has no aligned samples");
  if (aligned == train.size()) throw Error(ErrorKind::InvalidArgument, "training split has no misaligned samples");

  prepare_dir(out_dir, cfg);
  TrainResult result = train_detector(train, val, cfg.train, cfg.n_bins);
  io::save_checkpoint(out_dir / "checkpoint.fcck", result.model);

  std::string log;
  for (const auto& e : result.log) {
    log += json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                {"val_accuracy", e.val_accuracy}}
               .dump() +
           "\n";
  }
  io::write_text(out_dir / "train_log.jsonl", log);
  const json split_doc{{"seed", cfg.seed},
                       {"train", ids_json(index, split.train)},
                       {"val", ids_json(index, split.val)},
                       {"test", ids_json(index, split.test)}};
  io::write_text(out_dir / "split.json", split_doc.dump(2) + "\n");

  std::vector<EvalRecord> records;
  for (auto i : split.val) {
    if (!loaded.inputs[i]) continue;
    const auto& e = index.samples[i];
    records.push_back(EvalRecord::make(e.id, e.error, predict(result.model, *loaded.inputs[i], cfg.eval.threshold)));
  }
  const std::string validation = render_text(make_report(records));
  io::write_text(out_dir / "validation.txt", validation);

  auto& out = out_stream(opts);
  const EpochLog last = result.log.empty() ? EpochLog{} : result.log.back();
  out << fmt::format("trained on {} samples ({} validation) for {} epochs; final train loss {:.4f}\n",
                     train.size(), val.size(), result.log.size(), last.train_loss);
  out << "validation:\n" << validation;
  return loaded.missing.empty() ? kExitOk : kExitPartialFailure;
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& dataset_dir,
             const fs::path& flows_dir, const fs::path& out_dir, const CommandOptions& opts) {
  cfg.validate();
  const DetectorModel model = io::load_checkpoint(checkpoint, cfg.n_bins);
  const io::DatasetIndex index = io::read_dataset_index(dataset_dir);
  const SplitIndices split = stratified_split(buckets_of(index), cfg.seed);
  const LoadedInputs loaded = load_inputs(index, split.test, flows_dir, cfg.n_bins, opts.jobs, true);
  for (const auto& id : loaded.missing) err_stream(opts) << fmt::format("sample {}: no flow file, skipped\n", id);

  std::vector<std::size_t> present;
  for (auto i : split.test) {
    if (loaded.inputs[i]) present.push_back(i);
  }
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.jobs, present.size()));
  std::vector<DetectorModel> models(workers, model);
  std::vector<Verdict> verdicts(present.size());
  parallel_for(present.size(), workers, [&](std::size_t k, std::size_t w) {
    verdicts[k] = predict(models[w], *loaded.inputs[present[k]], cfg.eval.threshold);
  });

  std::vector<EvalRecord> records;
  std::vector<FeatureRow> features;
  DistributionAccumulator dist(cfg.n_bins, cfg.eval.cross_limit);
  std::string predictions =
      "id,bucket,combination,true_misaligned,true_roll,true_pitch,true_yaw,global_score,roll_score,"
      "pitch_score,yaw_score,misaligned,roll,pitch,yaw\n";
  for (std::size_t k = 0; k < present.size(); ++k) {
    const std::size_t i = present[k];
    const auto& e = index.samples[i];
    const EvalRecord rec = EvalRecord::make(e.id, e.error, verdicts[k]);
    const Verdict& v = rec.verdict;
    const auto b = [](bool x) { return x ? 1 : 0; };
    predictions += fmt::format("{},{},{},{},{},{},{},{:.9g},{:.9g},{:.9g},{:.9g},{},{},{},{}\n", e.id,
                               to_string(rec.bucket), combination_name(rec.truth.axes), b(rec.truth.misaligned),
                               b(rec.truth.axes[0]), b(rec.truth.axes[1]), b(rec.truth.axes[2]), v.global_score,
                               v.axis_scores[0], v.axis_scores[1], v.axis_scores[2], b(v.misaligned),
                               b(v.axes[0]), b(v.axes[1]), b(v.axes[2]));
    dist.add(population_of(e.error), *loaded.flows[i]);
    features.push_back({e.id, population_of(e.error), loaded.inputs[i]->geometric});
    records.push_back(rec);
  }

  const Report report = make_report(records);
  const std::string text = render_text(report);
  const std::string js = render_json(report);
  prepare_dir(out_dir, cfg);
  io::write_text(out_dir / "report.txt", text);
  io::write_text(out_dir / "report.json", js);
  io::write_text(out_dir / "predictions.csv", predictions);
  std::ostringstream d;
  dist.write(d);
  io::write_text(out_dir / "distributions.csv", d.str());
  std::ostringstream f;
  write_feature_table(f, features, cfg.n_bins);
  io::write_text(out_dir / "features.csv", f.str());

  out_stream(opts) << (opts.json ? js : text);
  return loaded.missing.empty() ? kExitOk : kExitPartialFailure;
}

}  // namespace mountcheck
