#include "mountcheck/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include <fmt/format.h>

#include "mountcheck/error.hpp"

namespace mountcheck {

std::string_view to_string(AxisPair pair) {
  switch (pair) {
    case AxisPair::YZ: return "yz";
    case AxisPair::XZ: return "xz";
    case AxisPair::XY: return "xy";
  }
  return "?";
}

std::array<int, 2> pair_components(AxisPair pair) {
  switch (pair) {
    case AxisPair::YZ: return {1, 2};
    case AxisPair::XZ: return {0, 2};
    case AxisPair::XY: return {0, 1};
  }
  return {0, 1};
}

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

void require_vectors(const FlowField& flows, std::size_t min_count, std::string_view what) {
  if (flows.size() < min_count) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("{} needs at least {} flow vectors, got {}", what, min_count,
                            flows.size()));
  }
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Sum in ascending order, so the result does not depend on input order.
double ordered_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum;
}

template <typename F>
MeanStd mean_std(std::size_t n, F&& value_at) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = value_at(i);
  const double mean = ordered_sum(v) / static_cast<double>(n);
  for (auto& x : v) x = (x - mean) * (x - mean);
  return {mean, std::sqrt(ordered_sum(v) / static_cast<double>(n))};
}

struct AngleStats {
  std::vector<double> histogram;
  double circ_mean_deg = 0.0;
  double resultant = 0.0;
  bool valid = false;
};

AngleStats angle_stats(const FlowField& flows, AxisPair pair, int n_bins) {
  if (n_bins < 1) throw Error(ErrorKind::InvalidArgument, "n_bins must be >= 1");
  AngleStats out;
  out.histogram.assign(static_cast<std::size_t>(n_bins), 0.0);
  const double width = 360.0 / n_bins;
  std::vector<double> sines, cosines;
  std::size_t valid = 0;
  for (const auto& u : flows.vectors) {
    const auto angle = flow_angle_deg(u, pair);
    if (!angle) continue;
    const auto bin = std::min(static_cast<std::size_t>(*angle / width),
                              static_cast<std::size_t>(n_bins - 1));
    out.histogram[bin] += 1.0;
    sines.push_back(std::sin(*angle / kRadToDeg));
    cosines.push_back(std::cos(*angle / kRadToDeg));
    ++valid;
  }
  if (valid == 0) return out;
  out.valid = true;
  const double inv = 1.0 / static_cast<double>(valid);
  for (auto& h : out.histogram) h *= inv;
  const double s = ordered_sum(sines) * inv;
  const double c = ordered_sum(cosines) * inv;
  out.resultant = std::hypot(s, c);
  double mean = std::atan2(s, c) * kRadToDeg;
  if (mean < 0.0) mean += 360.0;
  if (mean >= 360.0) mean -= 360.0;
  out.circ_mean_deg = mean;
  return out;
}

}  // namespace

MagnitudeStats flow_magnitudes(const FlowField& flows) {
  require_vectors(flows, 2, "magnitude statistics");
  std::vector<double> m(flows.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = flows.vectors[i].norm();
  const auto ms = mean_std(m.size(), [&](std::size_t i) { return m[i]; });
  std::sort(m.begin(), m.end());
  const std::size_t h = m.size() / 2;
  const double median = m.size() % 2 == 1 ? m[h] : 0.5 * (m[h - 1] + m[h]);
  return {ms.mean, ms.std, median};
}

std::optional<double> flow_angle_deg(const Vec3& u, AxisPair pair) {
  const auto [a, b] = pair_components(pair);
  if (std::abs(u[a]) < kDegenerateComponent && std::abs(u[b]) < kDegenerateComponent) {
    return std::nullopt;
  }
  double angle = std::atan2(u[b], u[a]) * kRadToDeg;
  if (angle < 0.0) angle += 360.0;
  if (angle >= 360.0) angle -= 360.0;
  return angle;
}

std::vector<double> angle_histogram(const FlowField& flows, AxisPair pair, int n_bins) {
  require_vectors(flows, 1, "angle histogram");
  auto stats = angle_stats(flows, pair, n_bins);
  if (!stats.valid) {
    throw Error(ErrorKind::NoValidAngles,
                fmt::format("no valid angles in the {} plane", to_string(pair)));
  }
  return std::move(stats.histogram);
}

double cross_value(const Point3& anchor, const Vec3& u, AxisPair pair) {
  const auto [a, b] = pair_components(pair);
  return anchor[a] * u[b] - anchor[b] * u[a];
}

CrossStats cross_features(const FlowField& flows, AxisPair pair) {
  require_vectors(flows, 2, "cross features");
  if (flows.anchors.size() != flows.vectors.size()) {
    throw Error(ErrorKind::ShapeMismatch, "cross features need one anchor per vector");
  }
  const auto ms = mean_std(flows.size(), [&](std::size_t i) {
    return cross_value(flows.anchors[i], flows.vectors[i], pair);
  });
  return {ms.mean, ms.std};
}

FeatureLayout FeatureLayout::make(int n_bins) {
  if (n_bins < 1) throw Error(ErrorKind::InvalidArgument, "n_bins must be >= 1");
  FeatureLayout layout;
  layout.n_bins = n_bins;
  std::size_t offset = 0;
  const auto add = [&](std::string name, std::size_t length) {
    layout.slices.push_back({std::move(name), offset, length});
    offset += length;
  };
  for (AxisPair pair : kAxisPairs) {
    const auto p = to_string(pair);
    add(fmt::format("{}.cross_mean", p), 1);
    add(fmt::format("{}.cross_std", p), 1);
    add(fmt::format("{}.proj_mag_mean", p), 1);
    add(fmt::format("{}.proj_mag_std", p), 1);
    add(fmt::format("{}.angle_circ_mean", p), 1);
    add(fmt::format("{}.angle_resultant", p), 1);
  }
  add("mag.mean", 1);
  add("mag.std", 1);
  add("mag.median", 1);
  for (AxisPair pair : kAxisPairs) {
    add(fmt::format("{}.angle_hist", to_string(pair)), static_cast<std::size_t>(n_bins));
  }
  return layout;
}

std::size_t FeatureLayout::dimension() const {
  return slices.empty() ? 0 : slices.back().offset + slices.back().length;
}

std::vector<std::string> FeatureLayout::column_names() const {
  std::vector<std::string> names;
  names.reserve(dimension());
  for (const auto& s : slices) {
    if (s.length == 1) {
      names.push_back(s.name);
    } else {
      for (std::size_t i = 0; i < s.length; ++i) names.push_back(fmt::format("{}[{}]", s.name, i));
    }
  }
  return names;
}

std::uint64_t FeatureLayout::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](std::string_view bytes) {
    for (unsigned char ch : bytes) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : slices) mix(fmt::format("{}:{};", s.name, s.length));
  return h;
}

const FeatureLayout::Slice& FeatureLayout::slice(std::string_view name) const {
  for (const auto& s : slices) {
    if (s.name == name) return s;
  }
  throw Error(ErrorKind::InvalidArgument, fmt::format("no feature slice named {}", name));
}

GeometricFeatureVector build_geometric_vector(const FlowField& flows, int n_bins) {
  require_vectors(flows, 2, "geometric features");
  flows.validate();
  const FeatureLayout layout = FeatureLayout::make(n_bins);
  GeometricFeatureVector out;
  out.n_bins = n_bins;
  out.values.assign(layout.dimension(), 0.0);

  std::array<AngleStats, 3> angles;
  bool any_valid = false;
  for (std::size_t k = 0; k < 3; ++k) {
    angles[k] = angle_stats(flows, kAxisPairs[k], n_bins);
    any_valid = any_valid || angles[k].valid;
  }
  if (!any_valid) throw Error(ErrorKind::NoValidAngles, "no valid angles: flow field is all zero");

  std::size_t at = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const AxisPair pair = kAxisPairs[k];
    const auto [a, b] = pair_components(pair);
    const auto cross = cross_features(flows, pair);
    const auto proj = mean_std(flows.size(), [&](std::size_t i) {
      return std::hypot(flows.vectors[i][a], flows.vectors[i][b]);
    });
    out.values[at++] = cross.mean;
    out.values[at++] = cross.std;
    out.values[at++] = proj.mean;
    out.values[at++] = proj.std;
    out.values[at++] = angles[k].circ_mean_deg;
    out.values[at++] = angles[k].resultant;
  }
  const auto mag = flow_magnitudes(flows);
  out.values[at++] = mag.mean;
  out.values[at++] = mag.std;
  out.values[at++] = mag.median;
  for (std::size_t k = 0; k < 3; ++k) {
    const double uniform = 1.0 / n_bins;
    for (int bin = 0; bin < n_bins; ++bin) {
      out.values[at++] = angles[k].valid ? angles[k].histogram[static_cast<std::size_t>(bin)] : uniform;
    }
  }
  return out;
}

FlowEncoder::FlowEncoder(std::mt19937_64& rng)
    : fc1("encoder.fc1", 3, kHidden, rng),
      fc2("encoder.fc2", kHidden, kChannels, rng),
      bn1("encoder.bn1", kHidden),
      bn2("encoder.bn2", kChannels) {}

nn::Var FlowEncoder::operator()(nn::Tape& tape, const nn::Tensor2& vectors,
                                std::span<const std::size_t> offsets, nn::Mode mode) {
  nn::Var h = tape.input(vectors);
  h = nn::relu(tape, bn1(tape, fc1(tape, h), mode));
  h = nn::relu(tape, bn2(tape, fc2(tape, h), mode));
  return nn::concat_cols(tape, nn::segment_max(tape, h, offsets), nn::segment_mean(tape, h, offsets));
}

std::vector<nn::Parameter*> FlowEncoder::parameters() {
  return {&fc1.weight, &fc1.bias, &bn1.gamma, &bn1.beta,
          &fc2.weight, &fc2.bias, &bn2.gamma, &bn2.beta};
}

nn::Tensor2 flow_matrix(const FlowField& flows) {
  nn::Tensor2 m(static_cast<Eigen::Index>(flows.size()), 3);
  for (std::size_t i = 0; i < flows.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = flows.vectors[i].transpose();
  }
  return m;
}

GlobalFlowEmbedding encode_global(const FlowField& flows, FlowEncoder& encoder, nn::Mode mode) {
  require_vectors(flows, 2, "global flow encoding");
  const std::array<std::size_t, 2> offsets{0, flows.size()};
  nn::Tape tape;
  const nn::Var e = encoder(tape, flow_matrix(flows), offsets, mode);
  GlobalFlowEmbedding out;
  for (int i = 0; i < FlowEncoder::kEmbedding; ++i) out.values[static_cast<std::size_t>(i)] = tape.value(e)(0, i);
  return out;
}

void write_feature_table(std::ostream& out, const std::vector<FeatureRow>& rows, int n_bins) {
  const FeatureLayout layout = FeatureLayout::make(n_bins);
  out << "id,population";
  for (const auto& name : layout.column_names()) out << ',' << name;
  out << '\n';
  for (const auto& row : rows) {
    if (row.features.dimension() != layout.dimension()) {
      throw Error(ErrorKind::LayoutMismatch, "feature layout mismatch in table export");
    }
    out << row.id << ',' << row.population;
    for (double v : row.features.values) out << ',' << fmt::format("{:.9g}", v);
    out << '\n';
  }
}

}  // namespace mountcheck
