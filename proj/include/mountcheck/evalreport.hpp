#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mountcheck/detector.hpp"
#include "mountcheck/features.hpp"
#include "mountcheck/geometry.hpp"

namespace mountcheck {

struct EvalRecord {
  std::string id;
  Label truth;
  Verdict verdict;
  RotationError error;
  SeverityBucket bucket = SeverityBucket::Aligned;

  static EvalRecord make(std::string id, const RotationError& error, const Verdict& verdict);
};

/// 100 * num / den rounded half-up to two decimals, in hundredths of a
/// percent. Integer arithmetic, so published count/percent pairs reproduce
/// exactly.
std::int64_t percent_hundredths(std::size_t num, std::size_t den);
/// "81.16"; den must be positive.
std::string format_percent(std::size_t num, std::size_t den);

/// A ratio that may be undefined (zero denominator), e.g. precision without
/// positive predictions.
struct Metric {
  std::size_t num = 0;
  std::size_t den = 0;

  bool defined() const { return den > 0; }
  /// Percent with two decimals, or "n/a".
  std::string text() const;
};

struct CountRow {
  std::string name;
  std::size_t correct = 0;
  std::size_t incorrect = 0;

  std::size_t total() const { return correct + incorrect; }
  bool present() const { return total() > 0; }
  /// Percent text, or "-" for an absent row.
  std::string percent() const;
};

/// Rows Aligned, Hard, Medium, Easy and Total. Aligned samples count as
/// correct when the global head stays silent, misaligned ones when it fires.
struct BucketTable {
  std::array<CountRow, 4> rows;
  CountRow total;
};

BucketTable bucket_table(std::span<const EvalRecord> records);

/// Misaligned samples with max |angle| <= 2 deg (Hard and Medium) detected
/// by the global head.
CountRow small_angle_sensitivity(std::span<const EvalRecord> records);

/// Misaligned samples only, one row per axis combination in the order of
/// kAxisCombinations; correct means the global head fired.
std::array<CountRow, 7> combination_table(std::span<const EvalRecord> records);

struct AxisMetrics {
  std::string axis;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  Metric accuracy() const { return {tp + tn, tp + fp + fn + tn}; }
  Metric precision() const { return {tp, tp + fp}; }
  Metric recall() const { return {tp, tp + fn}; }
};

std::array<AxisMetrics, 3> axis_metrics(std::span<const EvalRecord> records);

struct Report {
  std::size_t samples = 0;
  BucketTable buckets;
  CountRow small_angle;
  std::array<CountRow, 7> combinations;
  std::array<AxisMetrics, 3> axes;
};

Report make_report(std::span<const EvalRecord> records);
std::string render_text(const Report& report);
std::string render_json(const Report& report);

/// Aligned-vs-misaligned histograms of per-vector angle and cross value in
/// each projection plane. Counts are integers, so accumulation order does not
/// matter.
class DistributionAccumulator {
 public:
  explicit DistributionAccumulator(int n_bins = kDefaultBins, double cross_limit = 20.0);

  void add(const std::string& population, const FlowField& flows);
  void merge(const DistributionAccumulator& other);

  /// Delimited text: header "population,quantity,bin,lower,upper,value", then
  /// n_bins rows per (population, quantity); values sum to 1 per pair.
  /// Cross values beyond +-cross_limit land in the edge bins.
  void write(std::ostream& out) const;

  int n_bins() const { return n_bins_; }

 private:
  struct Histograms {
    std::array<std::vector<std::uint64_t>, 3> angle;
    std::array<std::vector<std::uint64_t>, 3> cross;
  };
  Histograms& slot(const std::string& population);

  int n_bins_;
  double cross_limit_;
  std::map<std::string, Histograms> populations_;
};

}  // namespace mountcheck
