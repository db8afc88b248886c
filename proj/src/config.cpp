#include "mountcheck/config.hpp"

#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "mountcheck/error.hpp"

namespace mountcheck {

using json = nlohmann::json;

namespace {

[[noreturn]] void bad_key(const std::string& path, std::string_view msg) {
  throw Error(ErrorKind::SchemaViolation, fmt::format("config key {}: {}", path, msg));
}

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad_key(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename T>
  void field(const std::string& key, T& target) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    used_.insert(key);
    read(*it, join(key), target);
  }

  template <typename F>
  void object(const std::string& key, F&& body) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    used_.insert(key);
    Reader child(*it, join(key));
    body(child);
    child.finish();
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!used_.contains(key)) bad_key(join(key), "unknown key");
    }
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  static void read(const json& v, const std::string& path, double& out) {
    if (!v.is_number()) bad_key(path, "expected a number");
    out = v.get<double>();
  }
  static void read(const json& v, const std::string& path, int& out) {
    if (!v.is_number_integer()) bad_key(path, "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) bad_key(path, "out of range");
    out = static_cast<int>(x);
  }
  static void read(const json& v, const std::string& path, std::uint64_t& out) {
    if (!v.is_number_unsigned()) bad_key(path, "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void read(const json& v, const std::string& path, std::string& out) {
    if (!v.is_string()) bad_key(path, "expected a string");
    out = v.get<std::string>();
  }
  static void read(const json& v, const std::string& path, SizeRange& out) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      bad_key(path, "expected [min, max]");
    }
    out = {v[0].get<double>(), v[1].get<double>()};
  }
  template <std::size_t N>
  static void read(const json& v, const std::string& path, std::array<double, N>& out) {
    if (!v.is_array() || v.size() != N) bad_key(path, fmt::format("expected an array of {} numbers", N));
    for (std::size_t i = 0; i < N; ++i) {
      if (!v[i].is_number()) bad_key(path, fmt::format("expected an array of {} numbers", N));
      out[i] = v[i].get<double>();
    }
  }
  template <std::size_t N>
  static void read(const json& v, const std::string& path, std::optional<std::array<double, N>>& out) {
    if (v.is_null()) {
      out.reset();
      return;
    }
    std::array<double, N> a{};
    read(v, path, a);
    out = a;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) { j_ = json::object(); }

  template <typename T>
  void field(const std::string& key, const T& value) {
    j_[key] = to_json(value);
  }

  template <typename F>
  void object(const std::string& key, F&& body) {
    Writer child(j_[key]);
    body(child);
  }

 private:
  template <typename T>
  static json to_json(const T& v) {
    return v;
  }
  static json to_json(const SizeRange& r) { return json::array({r.min, r.max}); }
  template <std::size_t N>
  static json to_json(const std::optional<std::array<double, N>>& v) {
    if (!v) return nullptr;
    return *v;
  }

  json& j_;
};

// One field list drives both parsing and serialization.
template <typename V>
void visit(V& v, RunConfig& c) {
  v.field("seed", c.seed);
  v.field("out", c.out);
  v.object("dataset", [&](auto& d) {
    d.field("n_samples", c.dataset.n_samples);
    d.field("aligned_fraction", c.dataset.aligned_fraction);
    d.field("combination_weights", c.dataset.combination_weights);
    d.field("severity_mix", c.dataset.severity_mix);
    d.object("trajectories", [&](auto& t) {
      auto& m = c.dataset.trajectories;
      t.field("straight", m.straight);
      t.field("arc", m.arc);
      t.field("lane_change", m.lane_change);
      t.field("speed", m.speed);
      t.field("curvature", m.curvature);
      t.field("lateral_offset", m.lateral_offset);
      t.field("duration", m.duration);
      t.field("frame_rate", m.frame_rate);
    });
    d.object("scene", [&](auto& s) {
      auto& sc = c.dataset.scene;
      s.field("boxes", sc.boxes);
      s.field("poles", sc.poles);
      s.field("walls", sc.walls);
      s.field("box_footprint", sc.box_footprint);
      s.field("box_height", sc.box_height);
      s.field("pole_radius", sc.pole_radius);
      s.field("pole_height", sc.pole_height);
      s.field("wall_length", sc.wall_length);
      s.field("wall_height", sc.wall_height);
      s.field("ground_extent", sc.ground_extent);
      s.field("placement_radius", sc.placement_radius);
      s.field("corridor_half_width", sc.corridor_half_width);
      s.field("point_density", sc.point_density);
      s.field("sensor_height", sc.sensor_height);
      s.field("sensor_range", sc.sensor_range);
      s.field("points_per_frame", sc.points_per_frame);
      s.field("noise_sigma", sc.noise_sigma);
      s.field("dynamic_objects", sc.dynamic_objects);
    });
  });
  v.object("preprocess", [&](auto& p) {
    auto& pc = c.pipeline.preprocess;
    p.field("n_t", pc.n_t);
    p.field("dynamic_margin", pc.dynamic_margin);
    p.object("ground", [&](auto& g) {
      g.field("max_iters", pc.ground.max_iters);
      g.field("inlier_threshold", pc.ground.inlier_threshold);
      g.field("min_inlier_fraction", pc.ground.min_inlier_fraction);
      g.field("max_normal_tilt_deg", pc.ground.max_normal_tilt_deg);
    });
  });
  v.object("flow", [&](auto& f) {
    auto& s = c.pipeline.solver;
    f.field("hidden_width", s.hidden_width);
    f.field("hidden_layers", s.hidden_layers);
    f.field("iterations", s.iterations);
    f.field("step_size", s.step_size);
    f.field("lambda", s.lambda);
    f.field("tolerance", s.tolerance);
    f.field("patience", s.patience);
    f.field("nn_cap", s.nn_cap);
    f.field("coordinate_scale", s.coordinate_scale);
    f.field("max_flow_vectors", c.pipeline.max_flow_vectors);
    f.field("flow_points", c.pipeline.flow_points);
  });
  v.object("features", [&](auto& f) { f.field("n_bins", c.n_bins); });
  v.object("train", [&](auto& t) {
    t.field("epochs", c.train.epochs);
    t.field("batch_size", c.train.batch_size);
    t.field("lr", c.train.lr);
    t.field("weight_decay", c.train.weight_decay);
    t.field("threshold", c.train.threshold);
    t.field("axis_loss_weight", c.train.axis_loss_weight);
  });
  v.object("eval", [&](auto& e) {
    e.field("threshold", c.eval.threshold);
    e.field("cross_limit", c.eval.cross_limit);
  });
}

template <typename F>
void with_prefix(std::string_view prefix, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    throw Error(e.kind(), fmt::format("{}: {}", prefix, e.what()));
  }
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  dataset.seed = s;
  train.seed = s;
}

void RunConfig::validate() const {
  with_prefix("dataset", [&] { dataset.validate(); });
  with_prefix("flow", [&] { pipeline.validate(); });
  if (n_bins < 1) throw Error(ErrorKind::InvalidArgument, "features.n_bins must be >= 1");
  with_prefix("train", [&] { train.validate(); });
  if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "eval.threshold must lie in (0, 1)");
  }
  if (!(eval.cross_limit > 0.0)) throw Error(ErrorKind::InvalidArgument, "eval.cross_limit must be positive");
  if (out.empty()) throw Error(ErrorKind::InvalidArgument, "out must be a nonempty path");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::SchemaViolation, fmt::format("config is not valid JSON: {}", e.what()));
  }
  RunConfig cfg;
  Reader r(j, "");
  visit(r, cfg);
  r.finish();
  cfg.set_seed(cfg.seed);
  cfg.validate();
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  Writer w(j);
  RunConfig copy = cfg;
  visit(w, copy);
  return j.dump(2) + "\n";
}

}  // namespace mountcheck
