#pragma once

// On-disk formats. All binary layouts are little-endian.
//
//   cloud (.fcpc)       "FCPC" u16 version, u8 frame, u32 count, count x 3 f32
//   flow (.fcfl)        "FCFL" u16 version, u32 count, count x 6 f32
//                       (anchor xyz, vector xyz)
//   checkpoint (.fcck)  "FCCK" u16 version, u32 n_bins, u64 layout hash,
//                       u32 tensor count, then per tensor: u16 name length,
//                       name bytes, u32 rows, u32 cols, rows x cols f32
//                       (row-major). Tensors are written in name order.
//
// Sample manifests and dataset indexes are JSON documents; see
// docs/formats.md for their grammar.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mountcheck/detector.hpp"
#include "mountcheck/geometry.hpp"
#include "mountcheck/sceneflow.hpp"
#include "mountcheck/synthgen.hpp"

namespace mountcheck::io {

namespace fs = std::filesystem;

inline constexpr std::uint16_t kCloudVersion = 1;
inline constexpr std::uint16_t kFlowVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr int kManifestVersion = 1;
inline constexpr int kDatasetVersion = 1;

using Bytes = std::vector<std::uint8_t>;

Bytes encode_cloud(const PointCloud& cloud);
/// The file carries no timestamp; the result has timestamp 0.
PointCloud decode_cloud(const Bytes& bytes);
void write_cloud(const fs::path& path, const PointCloud& cloud);
PointCloud read_cloud(const fs::path& path);

Bytes encode_flow(const FlowField& flow);
FlowField decode_flow(const Bytes& bytes);
void write_flow(const fs::path& path, const FlowField& flow);
FlowField read_flow(const fs::path& path);

Bytes encode_checkpoint(const DetectorModel& model);
/// Throws LayoutMismatch when the stored layout hash differs from the
/// layout for `expected_n_bins`.
DetectorModel decode_checkpoint(const Bytes& bytes, int expected_n_bins);
void save_checkpoint(const fs::path& path, const DetectorModel& model);
DetectorModel load_checkpoint(const fs::path& path, int expected_n_bins);

/// Raw file access used by the readers above; errors are Io.
Bytes read_file(const fs::path& path);
void write_file(const fs::path& path, const Bytes& bytes);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

struct ManifestFrame {
  std::string file;  // relative to the manifest's directory
  double timestamp = 0.0;
  RigidTransform pose;
  std::vector<BoundingBox> boxes;
};

struct SampleManifest {
  std::string id;
  double f_sampled = 0.0;
  std::vector<ManifestFrame> frames;
  bool has_boxes = false;
  RotationError error;
  TrajectorySpec trajectory;
  std::uint64_t scene_seed = 0;
  std::uint64_t render_seed = 0;
};

std::string manifest_to_json(const SampleManifest& m);
/// Schema-checked parse; throws SchemaViolation naming the offending key.
SampleManifest manifest_from_json(const std::string& text);

/// Writes the sample's frames next to `manifest_path` and then the manifest.
void write_sample(const fs::path& manifest_path, const LabeledSample& sample);
/// Reads a manifest and checks that every frame file exists (MissingFrame
/// otherwise, naming the path).
SampleManifest read_manifest(const fs::path& manifest_path);
LabeledSample read_sample(const fs::path& manifest_path);

struct DatasetEntry {
  std::string id;
  std::string manifest;  // relative to the dataset root
  RotationError error;
};

struct DatasetIndex {
  std::vector<DatasetEntry> samples;
};

std::string dataset_index_to_json(const DatasetIndex& index);
DatasetIndex dataset_index_from_json(const std::string& text);
void write_dataset_index(const fs::path& root, const DatasetIndex& index);
DatasetIndex read_dataset_index(const fs::path& root);

}  // namespace mountcheck::io
