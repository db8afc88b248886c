#include "mountcheck/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "mountcheck/error.hpp"

namespace mountcheck::io {

using json = nlohmann::json;

namespace {

constexpr std::array<char, 4> kCloudMagic{'F', 'C', 'P', 'C'};
constexpr std::array<char, 4> kFlowMagic{'F', 'C', 'F', 'L'};
constexpr std::array<char, 4> kCheckpointMagic{'F', 'C', 'C', 'K'};

class ByteWriter {
 public:
  void magic(const std::array<char, 4>& m) {
    for (char c : m) out_.push_back(static_cast<std::uint8_t>(c));
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  Bytes take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(const Bytes& b) : b_(b) {}

  void magic(const std::array<char, 4>& m, std::string_view what) {
    need(4);
    if (std::memcmp(b_.data(), m.data(), 4) != 0) {
      throw Error(ErrorKind::BadMagic, fmt::format("bad magic: not a {} file", what));
    }
    pos_ += 4;
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  /// Fails early on a declared payload larger than what is left.
  void expect(std::uint64_t n) { need(n); }
  void finish() const {
    if (pos_ != b_.size()) {
      throw Error(ErrorKind::SchemaViolation,
                  fmt::format("{} trailing bytes after payload at byte offset {}", b_.size() - pos_, pos_));
    }
  }

 private:
  void need(std::uint64_t n) const {
    if (b_.size() - pos_ < n) {
      throw Error(ErrorKind::TruncatedPayload,
                  fmt::format("truncated payload at byte offset {}: need {} bytes, {} left", pos_, n,
                              b_.size() - pos_));
    }
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const Bytes& b_;
  std::size_t pos_ = 0;
};

void check_version(std::uint16_t got, std::uint16_t want, std::string_view what) {
  if (got != want) {
    throw Error(ErrorKind::VersionMismatch,
                fmt::format("version mismatch: {} version {} (supported: {})", what, got, want));
  }
}

}  // namespace

// ---- raw files -------------------------------------------------------------

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, fmt::format("write failed for {}", path.string()));
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, Bytes(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const Bytes b = read_file(path);
  return {b.begin(), b.end()};
}

// ---- clouds and flows ------------------------------------------------------

Bytes encode_cloud(const PointCloud& cloud) {
  ByteWriter w;
  w.magic(kCloudMagic);
  w.u16(kCloudVersion);
  w.u8(static_cast<std::uint8_t>(cloud.frame));
  w.u32(static_cast<std::uint32_t>(cloud.size()));
  for (const auto& p : cloud.points) {
    w.f32(p.x());
    w.f32(p.y());
    w.f32(p.z());
  }
  return w.take();
}

PointCloud decode_cloud(const Bytes& bytes) {
  ByteReader r(bytes);
  r.magic(kCloudMagic, "point cloud");
  check_version(r.u16(), kCloudVersion, "point cloud");
  const std::uint8_t frame = r.u8();
  if (frame > 1) throw Error(ErrorKind::SchemaViolation, fmt::format("unknown frame tag {}", frame));
  PointCloud c;
  c.frame = static_cast<Frame>(frame);
  const std::uint32_t n = r.u32();
  r.expect(static_cast<std::uint64_t>(n) * 12);
  c.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double x = r.f32(), y = r.f32(), z = r.f32();
    c.points.emplace_back(x, y, z);
  }
  r.finish();
  return c;
}

void write_cloud(const fs::path& path, const PointCloud& cloud) { write_file(path, encode_cloud(cloud)); }
PointCloud read_cloud(const fs::path& path) { return decode_cloud(read_file(path)); }

Bytes encode_flow(const FlowField& flow) {
  flow.validate();
  ByteWriter w;
  w.magic(kFlowMagic);
  w.u16(kFlowVersion);
  w.u32(static_cast<std::uint32_t>(flow.size()));
  for (std::size_t i = 0; i < flow.size(); ++i) {
    for (int a = 0; a < 3; ++a) w.f32(flow.anchors[i][a]);
    for (int a = 0; a < 3; ++a) w.f32(flow.vectors[i][a]);
  }
  return w.take();
}

FlowField decode_flow(const Bytes& bytes) {
  ByteReader r(bytes);
  r.magic(kFlowMagic, "flow");
  check_version(r.u16(), kFlowVersion, "flow");
  const std::uint32_t n = r.u32();
  r.expect(static_cast<std::uint64_t>(n) * 24);
  FlowField f;
  f.anchors.reserve(n);
  f.vectors.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Vec3 p, u;
    for (int a = 0; a < 3; ++a) p[a] = r.f32();
    for (int a = 0; a < 3; ++a) u[a] = r.f32();
    f.anchors.push_back(p);
    f.vectors.push_back(u);
  }
  r.finish();
  return f;
}

void write_flow(const fs::path& path, const FlowField& flow) { write_file(path, encode_flow(flow)); }
FlowField read_flow(const fs::path& path) { return decode_flow(read_file(path)); }

// ---- checkpoints -----------------------------------------------------------

Bytes encode_checkpoint(const DetectorModel& model) {
  const auto tensors = model.export_tensors();
  ByteWriter w;
  w.magic(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.n_bins()));
  w.u64(model.layout().hash());
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(t.rows()));
    w.u32(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) w.f32(t(i, j));
  }
  return w.take();
}

DetectorModel decode_checkpoint(const Bytes& bytes, int expected_n_bins) {
  ByteReader r(bytes);
  r.magic(kCheckpointMagic, "checkpoint");
  check_version(r.u16(), kCheckpointVersion, "checkpoint");
  const auto n_bins = static_cast<int>(r.u32());
  const std::uint64_t hash = r.u64();
  const FeatureLayout expected = FeatureLayout::make(expected_n_bins);
  if (hash != expected.hash() || n_bins != expected_n_bins) {
    throw Error(ErrorKind::LayoutMismatch,
                fmt::format("feature layout mismatch: checkpoint has {} bins (hash {:016x}), "
                            "expected {} bins (hash {:016x})",
                            n_bins, hash, expected_n_bins, expected.hash()));
  }
  const std::uint32_t count = r.u32();
  std::map<std::string, nn::Tensor2> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.raw(r.u16());
    const std::uint32_t rows = r.u32(), cols = r.u32();
    r.expect(static_cast<std::uint64_t>(rows) * cols * 4);
    nn::Tensor2 t(rows, cols);
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = r.f32();
    if (!tensors.emplace(std::move(name), std::move(t)).second) {
      throw Error(ErrorKind::SchemaViolation, "duplicate tensor name in checkpoint");
    }
  }
  r.finish();
  DetectorModel model(n_bins);
  model.import_tensors(tensors);
  return model;
}

void save_checkpoint(const fs::path& path, const DetectorModel& model) {
  write_file(path, encode_checkpoint(model));
}

DetectorModel load_checkpoint(const fs::path& path, int expected_n_bins) {
  return decode_checkpoint(read_file(path), expected_n_bins);
}

// ---- JSON helpers ----------------------------------------------------------

namespace {

[[noreturn]] void schema_error(std::string_view ctx, std::string_view msg) {
  throw Error(ErrorKind::SchemaViolation, fmt::format("schema violation at {}: {}", ctx, msg));
}

void check_keys(const json& j, std::string_view ctx, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) schema_error(ctx, "expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) schema_error(fmt::format("{}.{}", ctx, key), "unknown key");
  }
}

const json& field(const json& j, std::string_view ctx, const std::string& key) {
  const auto it = j.find(key);
  if (it == j.end()) schema_error(fmt::format("{}.{}", ctx, key), "missing");
  return *it;
}

double number(const json& j, std::string_view ctx, const std::string& key) {
  const json& v = field(j, ctx, key);
  if (!v.is_number()) schema_error(fmt::format("{}.{}", ctx, key), "expected a number");
  return v.get<double>();
}

std::uint64_t unsigned_int(const json& j, std::string_view ctx, const std::string& key) {
  const json& v = field(j, ctx, key);
  if (!v.is_number_unsigned()) schema_error(fmt::format("{}.{}", ctx, key), "expected an unsigned integer");
  return v.get<std::uint64_t>();
}

std::string string(const json& j, std::string_view ctx, const std::string& key) {
  const json& v = field(j, ctx, key);
  if (!v.is_string()) schema_error(fmt::format("{}.{}", ctx, key), "expected a string");
  return v.get<std::string>();
}

template <std::size_t N>
std::array<double, N> numbers(const json& j, std::string_view ctx, const std::string& key) {
  const json& v = field(j, ctx, key);
  if (!v.is_array() || v.size() != N) {
    schema_error(fmt::format("{}.{}", ctx, key), fmt::format("expected {} numbers", N));
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!v[i].is_number()) schema_error(fmt::format("{}.{}", ctx, key), "expected numbers");
    out[i] = v[i].get<double>();
  }
  return out;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j, std::string_view ctx, const std::string& key) {
  const auto a = numbers<3>(j, ctx, key);
  return {a[0], a[1], a[2]};
}

json error_json(const RotationError& e) {
  return {{"angles_deg", json::array({e.angles_deg[0], e.angles_deg[1], e.angles_deg[2]})},
          {"active", json::array({e.active[0], e.active[1], e.active[2]})}};
}

RotationError error_from(const json& j, std::string_view ctx) {
  check_keys(j, ctx, {"angles_deg", "active"});
  RotationError e;
  e.angles_deg = numbers<3>(j, ctx, "angles_deg");
  const json& a = field(j, ctx, "active");
  if (!a.is_array() || a.size() != 3) schema_error(fmt::format("{}.active", ctx), "expected 3 booleans");
  for (std::size_t i = 0; i < 3; ++i) {
    if (!a[i].is_boolean()) schema_error(fmt::format("{}.active", ctx), "expected booleans");
    e.active[i] = a[i].get<bool>();
  }
  if (!e.is_valid()) schema_error(ctx, "label violates the rotation error invariants");
  return e;
}

json trajectory_json(const TrajectorySpec& t) {
  return {{"kind", std::string(to_string(t.kind))}, {"speed", t.speed},
          {"duration", t.duration},                 {"frame_rate", t.frame_rate},
          {"curvature", t.curvature},               {"lateral_offset", t.lateral_offset}};
}

TrajectorySpec trajectory_from(const json& j, std::string_view ctx) {
  check_keys(j, ctx, {"kind", "speed", "duration", "frame_rate", "curvature", "lateral_offset"});
  TrajectorySpec t;
  try {
    t.kind = trajectory_kind_from_string(string(j, ctx, "kind"));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::SchemaViolation) throw;
    schema_error(fmt::format("{}.kind", ctx), e.what());
  }
  t.speed = number(j, ctx, "speed");
  t.duration = number(j, ctx, "duration");
  t.frame_rate = number(j, ctx, "frame_rate");
  t.curvature = number(j, ctx, "curvature");
  t.lateral_offset = number(j, ctx, "lateral_offset");
  try {
    t.validate();
  } catch (const Error& e) {
    schema_error(ctx, e.what());
  }
  return t;
}

json parse_json(const std::string& text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::SchemaViolation, fmt::format("{} is not valid JSON: {}", what, e.what()));
  }
}

}  // namespace

// ---- manifests -------------------------------------------------------------

std::string manifest_to_json(const SampleManifest& m) {
  json frames = json::array();
  for (const auto& f : m.frames) {
    const auto q = f.pose.rotation.quaternion_wxyz();
    json frame = {{"file", f.file},
                  {"timestamp", f.timestamp},
                  {"pose", {{"translation", vec_json(f.pose.translation)},
                            {"rotation_wxyz", json::array({q[0], q[1], q[2], q[3]})}}}};
    if (m.has_boxes) {
      json boxes = json::array();
      for (const auto& b : f.boxes) {
        boxes.push_back({{"center", vec_json(b.center)},
                         {"half_extents", vec_json(b.half_extents)},
                         {"yaw", b.yaw_rad}});
      }
      frame["boxes"] = std::move(boxes);
    }
    frames.push_back(std::move(frame));
  }
  const json doc = {{"format", "mountcheck-sample"},
                    {"version", kManifestVersion},
                    {"id", m.id},
                    {"f_sampled", m.f_sampled},
                    {"frames", std::move(frames)},
                    {"label", error_json(m.error)},
                    {"trajectory", trajectory_json(m.trajectory)},
                    {"seeds", {{"scene", m.scene_seed}, {"render", m.render_seed}}}};
  return doc.dump(2) + "\n";
}

SampleManifest manifest_from_json(const std::string& text) {
  const json j = parse_json(text, "manifest");
  constexpr std::string_view ctx = "manifest";
  check_keys(j, ctx, {"format", "version", "id", "f_sampled", "frames", "label", "trajectory", "seeds"});
  if (string(j, ctx, "format") != "mountcheck-sample") schema_error("manifest.format", "not a sample manifest");
  if (unsigned_int(j, ctx, "version") != kManifestVersion) {
    throw Error(ErrorKind::VersionMismatch, "version mismatch: unsupported manifest version");
  }
  SampleManifest m;
  m.id = string(j, ctx, "id");
  m.f_sampled = number(j, ctx, "f_sampled");
  if (!(m.f_sampled > 0.0)) schema_error("manifest.f_sampled", "must be positive");
  const json& frames = field(j, ctx, "frames");
  if (!frames.is_array() || frames.empty()) schema_error("manifest.frames", "expected a nonempty array");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string fctx = fmt::format("manifest.frames[{}]", i);
    const json& f = frames[i];
    check_keys(f, fctx, {"file", "timestamp", "pose", "boxes"});
    ManifestFrame mf;
    mf.file = string(f, fctx, "file");
    mf.timestamp = number(f, fctx, "timestamp");
    const json& pose = field(f, fctx, "pose");
    const std::string pctx = fctx + ".pose";
    check_keys(pose, pctx, {"translation", "rotation_wxyz"});
    mf.pose.translation = vec_from(pose, pctx, "translation");
    try {
      mf.pose.rotation = Rotation3::from_quaternion_wxyz(numbers<4>(pose, pctx, "rotation_wxyz"));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::SchemaViolation) throw;
      schema_error(pctx + ".rotation_wxyz", "quaternion is not unit within 1e-6");
    }
    if (const auto it = f.find("boxes"); it != f.end()) {
      m.has_boxes = true;
      if (!it->is_array()) schema_error(fctx + ".boxes", "expected an array");
      for (std::size_t b = 0; b < it->size(); ++b) {
        const std::string bctx = fmt::format("{}.boxes[{}]", fctx, b);
        const json& jb = (*it)[b];
        check_keys(jb, bctx, {"center", "half_extents", "yaw"});
        BoundingBox box{vec_from(jb, bctx, "center"), vec_from(jb, bctx, "half_extents"),
                        number(jb, bctx, "yaw")};
        try {
          box.validate();
        } catch (const Error& e) {
          schema_error(bctx, e.what());
        }
        mf.boxes.push_back(box);
      }
    }
    m.frames.push_back(std::move(mf));
  }
  m.error = error_from(field(j, ctx, "label"), "manifest.label");
  m.trajectory = trajectory_from(field(j, ctx, "trajectory"), "manifest.trajectory");
  const json& seeds = field(j, ctx, "seeds");
  check_keys(seeds, "manifest.seeds", {"scene", "render"});
  m.scene_seed = unsigned_int(seeds, "manifest.seeds", "scene");
  m.render_seed = unsigned_int(seeds, "manifest.seeds", "render");
  return m;
}

void write_sample(const fs::path& manifest_path, const LabeledSample& sample) {
  const fs::path dir = manifest_path.parent_path();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  SampleManifest m;
  m.id = sample.id;
  m.f_sampled = sample.sequence.sample_rate_hz;
  m.error = sample.error;
  m.trajectory = sample.trajectory;
  m.scene_seed = sample.scene_seed;
  m.render_seed = sample.render_seed;
  m.has_boxes = !sample.boxes.empty();
  for (std::size_t i = 0; i < sample.sequence.size(); ++i) {
    ManifestFrame f;
    f.file = fmt::format("frame_{:03d}.fcpc", i);
    f.timestamp = sample.sequence.clouds[i].timestamp;
    f.pose = sample.sequence.poses[i];
    if (m.has_boxes) f.boxes = sample.boxes[i];
    write_cloud(dir / f.file, sample.sequence.clouds[i]);
    m.frames.push_back(std::move(f));
  }
  write_text(manifest_path, manifest_to_json(m));
}

SampleManifest read_manifest(const fs::path& manifest_path) {
  SampleManifest m = manifest_from_json(read_text(manifest_path));
  for (const auto& f : m.frames) {
    const fs::path p = manifest_path.parent_path() / f.file;
    if (!fs::exists(p)) throw Error(ErrorKind::MissingFrame, fmt::format("missing frame: {}", p.string()));
  }
  return m;
}

LabeledSample read_sample(const fs::path& manifest_path) {
  const SampleManifest m = read_manifest(manifest_path);
  LabeledSample s;
  s.id = m.id;
  s.error = m.error;
  s.trajectory = m.trajectory;
  s.scene_seed = m.scene_seed;
  s.render_seed = m.render_seed;
  s.sequence.sample_rate_hz = m.f_sampled;
  for (const auto& f : m.frames) {
    PointCloud c = read_cloud(manifest_path.parent_path() / f.file);
    c.timestamp = f.timestamp;
    s.sequence.clouds.push_back(std::move(c));
    s.sequence.poses.push_back(f.pose);
    if (m.has_boxes) s.boxes.push_back(f.boxes);
  }
  return s;
}

// ---- dataset index ---------------------------------------------------------

std::string dataset_index_to_json(const DatasetIndex& index) {
  json samples = json::array();
  for (const auto& e : index.samples) {
    samples.push_back({{"id", e.id},
                       {"manifest", e.manifest},
                       {"label", error_json(e.error)},
                       {"bucket", std::string(to_string(classify_severity(e.error)))},
                       {"combination", combination_name(e.error.active)}});
  }
  const json doc = {{"format", "mountcheck-dataset"}, {"version", kDatasetVersion}, {"samples", samples}};
  return doc.dump(2) + "\n";
}

DatasetIndex dataset_index_from_json(const std::string& text) {
  const json j = parse_json(text, "dataset index");
  check_keys(j, "dataset", {"format", "version", "samples"});
  if (string(j, "dataset", "format") != "mountcheck-dataset") schema_error("dataset.format", "not a dataset index");
  if (unsigned_int(j, "dataset", "version") != kDatasetVersion) {
    throw Error(ErrorKind::VersionMismatch, "version mismatch: unsupported dataset version");
  }
  const json& samples = field(j, "dataset", "samples");
  if (!samples.is_array()) schema_error("dataset.samples", "expected an array");
  DatasetIndex index;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string ctx = fmt::format("dataset.samples[{}]", i);
    check_keys(samples[i], ctx, {"id", "manifest", "label", "bucket", "combination"});
    DatasetEntry e;
    e.id = string(samples[i], ctx, "id");
    e.manifest = string(samples[i], ctx, "manifest");
    e.error = error_from(field(samples[i], ctx, "label"), ctx + ".label");
    if (!ids.insert(e.id).second) schema_error(ctx + ".id", "duplicate sample id");
    index.samples.push_back(std::move(e));
  }
  return index;
}

void write_dataset_index(const fs::path& root, const DatasetIndex& index) {
  write_text(root / "dataset.json", dataset_index_to_json(index));
}

DatasetIndex read_dataset_index(const fs::path& root) {
  return dataset_index_from_json(read_text(root / "dataset.json"));
}

}  // namespace mountcheck::io
