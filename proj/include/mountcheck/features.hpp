#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mountcheck/diffcore.hpp"
#include "mountcheck/sceneflow.hpp"

namespace mountcheck {

/// Projection planes. For pair "ab" the in-plane vector is (v_a, v_b): the
/// angle is atan2(v_b, v_a) in [0, 360) and the cross value is
/// p_a u_b - p_b u_a.
enum class AxisPair : std::uint8_t { YZ = 0, XZ = 1, XY = 2 };

inline constexpr std::array<AxisPair, 3> kAxisPairs{AxisPair::YZ, AxisPair::XZ, AxisPair::XY};
inline constexpr int kDefaultBins = 72;
inline constexpr double kDegenerateComponent = 1e-9;

std::string_view to_string(AxisPair pair);
std::array<int, 2> pair_components(AxisPair pair);

struct MagnitudeStats {
  double mean = 0.0;
  double std = 0.0;  // population
  double median = 0.0;
};

MagnitudeStats flow_magnitudes(const FlowField& flows);

/// In-plane flow angle in degrees, or nullopt when both components are below
/// 1e-9 in magnitude.
std::optional<double> flow_angle_deg(const Vec3& u, AxisPair pair);

/// Unit-sum histogram of in-plane flow angles over n_bins equal bins of
/// [0, 360). Throws NoValidAngles when every vector is degenerate in-plane.
std::vector<double> angle_histogram(const FlowField& flows, AxisPair pair, int n_bins);

double cross_value(const Point3& anchor, const Vec3& u, AxisPair pair);

struct CrossStats {
  double mean = 0.0;
  double std = 0.0;
};

CrossStats cross_features(const FlowField& flows, AxisPair pair);

/// Named slices of the geometric descriptor. Layout: for each pair in
/// (yz, xz, xy) six scalars [cross_mean, cross_std, proj_mag_mean,
/// proj_mag_std, angle_circ_mean, angle_resultant]; then magnitude mean, std,
/// median; then one n_bins histogram per pair. Dimension 21 + 3 n_bins.
struct FeatureLayout {
  struct Slice {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
  };

  int n_bins = kDefaultBins;
  std::vector<Slice> slices;

  static FeatureLayout make(int n_bins);
  std::size_t dimension() const;
  /// Column names, one per dimension.
  std::vector<std::string> column_names() const;
  /// FNV-1a over the slice names and lengths.
  std::uint64_t hash() const;
  const Slice& slice(std::string_view name) const;
};

struct GeometricFeatureVector {
  int n_bins = kDefaultBins;
  std::vector<double> values;

  std::size_t dimension() const { return values.size(); }
};

/// A pair whose every vector is degenerate in-plane (e.g. yz under pure
/// forward motion) contributes a uniform histogram and zero circular
/// statistics; only a field degenerate in all three pairs is an error.
GeometricFeatureVector build_geometric_vector(const FlowField& flows, int n_bins = kDefaultBins);

/// Learned branch: per-point 3 -> 64 -> 128 blocks (linear, batch norm,
/// ReLU), then channelwise max and mean pooling per sample.
struct FlowEncoder {
  static constexpr int kHidden = 64;
  static constexpr int kChannels = 128;
  static constexpr int kEmbedding = 2 * kChannels;

  nn::Linear fc1, fc2;
  nn::BatchNorm bn1, bn2;

  FlowEncoder() = default;
  explicit FlowEncoder(std::mt19937_64& rng);

  /// `vectors` stacks every sample's flow vectors (rows); `offsets` has one
  /// entry per sample boundary. Returns a (samples x 256) embedding.
  nn::Var operator()(nn::Tape& tape, const nn::Tensor2& vectors,
                     std::span<const std::size_t> offsets, nn::Mode mode);

  std::vector<nn::Parameter*> parameters();
};

struct GlobalFlowEmbedding {
  std::array<double, FlowEncoder::kEmbedding> values{};
};

/// Stacks flow vectors into an N x 3 tensor.
nn::Tensor2 flow_matrix(const FlowField& flows);

GlobalFlowEmbedding encode_global(const FlowField& flows, FlowEncoder& encoder, nn::Mode mode);

struct FeatureRow {
  std::string id;
  std::string population;  // "aligned" or "misaligned"
  GeometricFeatureVector features;
};

/// Comma-separated table: header "id,population,<layout columns>", one row per
/// sample.
void write_feature_table(std::ostream& out, const std::vector<FeatureRow>& rows, int n_bins);

}  // namespace mountcheck
