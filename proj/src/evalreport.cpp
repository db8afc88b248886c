#include "mountcheck/evalreport.hpp"

#include <ostream>

#include <fmt/format.h>
#include <json.hpp>

#include "mountcheck/error.hpp"
#include "mountcheck/synthgen.hpp"

namespace mountcheck {

using json = nlohmann::json;

EvalRecord EvalRecord::make(std::string id, const RotationError& error, const Verdict& verdict) {
  return {std::move(id), Label::from_error(error), verdict, error, classify_severity(error)};
}

std::int64_t percent_hundredths(std::size_t num, std::size_t den) {
  if (den == 0) throw Error(ErrorKind::InvalidArgument, "percent of an empty count");
  const auto n = static_cast<std::int64_t>(num), d = static_cast<std::int64_t>(den);
  return (2 * n * 10000 + d) / (2 * d);
}

std::string format_percent(std::size_t num, std::size_t den) {
  const std::int64_t h = percent_hundredths(num, den);
  return fmt::format("{}.{:02d}", h / 100, h % 100);
}

std::string Metric::text() const { return defined() ? format_percent(num, den) : "n/a"; }

std::string CountRow::percent() const { return present() ? format_percent(correct, total()) : "-"; }

namespace {

bool global_correct(const EvalRecord& r) { return r.verdict.misaligned == r.truth.misaligned; }

constexpr std::array<std::string_view, 4> kBucketNames{"Aligned", "Hard", "Medium", "Easy"};
constexpr std::array<std::string_view, 3> kAxisNames{"roll", "pitch", "yaw"};

void tally(CountRow& row, bool correct) { ++(correct ? row.correct : row.incorrect); }

}  // namespace

BucketTable bucket_table(std::span<const EvalRecord> records) {
  BucketTable t;
  for (std::size_t b = 0; b < 4; ++b) t.rows[b].name = std::string(kBucketNames[b]);
  t.total.name = "Total";
  for (const auto& r : records) {
    tally(t.rows[static_cast<std::size_t>(r.bucket)], global_correct(r));
  }
  for (const auto& row : t.rows) {
    t.total.correct += row.correct;
    t.total.incorrect += row.incorrect;
  }
  return t;
}

CountRow small_angle_sensitivity(std::span<const EvalRecord> records) {
  CountRow row{"Hard+Medium", 0, 0};
  for (const auto& r : records) {
    if (r.bucket == SeverityBucket::Hard || r.bucket == SeverityBucket::Medium) tally(row, r.verdict.misaligned);
  }
  return row;
}

std::array<CountRow, 7> combination_table(std::span<const EvalRecord> records) {
  std::array<CountRow, 7> rows;
  for (std::size_t c = 0; c < 7; ++c) rows[c].name = combination_name(kAxisCombinations[c]);
  for (const auto& r : records) {
    if (!r.truth.misaligned) continue;
    for (std::size_t c = 0; c < 7; ++c) {
      if (kAxisCombinations[c] == r.truth.axes) tally(rows[c], r.verdict.misaligned);
    }
  }
  return rows;
}

std::array<AxisMetrics, 3> axis_metrics(std::span<const EvalRecord> records) {
  std::array<AxisMetrics, 3> m;
  for (std::size_t a = 0; a < 3; ++a) m[a].axis = std::string(kAxisNames[a]);
  for (const auto& r : records) {
    for (std::size_t a = 0; a < 3; ++a) {
      const bool truth = r.truth.axes[a], pred = r.verdict.axes[a];
      if (truth && pred) ++m[a].tp;
      else if (!truth && pred) ++m[a].fp;
      else if (truth && !pred) ++m[a].fn;
      else ++m[a].tn;
    }
  }
  return m;
}

Report make_report(std::span<const EvalRecord> records) {
  Report r;
  r.samples = records.size();
  r.buckets = bucket_table(records);
  r.small_angle = small_angle_sensitivity(records);
  r.combinations = combination_table(records);
  r.axes = axis_metrics(records);
  return r;
}

std::string render_text(const Report& report) {
  std::string out;
  const auto row = [&out](const CountRow& r) {
    out += fmt::format("{:<16}{:>9}{:>11}{:>9}\n", r.name, r.correct, r.incorrect, r.percent());
  };
  out += fmt::format("samples: {}\n\n", report.samples);
  out += "Global detection by severity\n";
  out += fmt::format("{:<16}{:>9}{:>11}{:>9}\n", "bucket", "correct", "incorrect", "percent");
  for (const auto& r : report.buckets.rows) row(r);
  row(report.buckets.total);
  out += "\n";
  out += fmt::format("aligned specificity: {}\n", report.buckets.rows[0].percent());
  out += fmt::format("small-angle sensitivity (0.5-2 deg): {} of {} = {}\n\n", report.small_angle.correct,
                     report.small_angle.total(), report.small_angle.percent());
  out += "Misaligned samples by axis combination (global head)\n";
  out += fmt::format("{:<16}{:>9}{:>11}{:>9}\n", "combination", "correct", "incorrect", "percent");
  for (const auto& r : report.combinations) row(r);
  out += "\n";
  out += "Per-axis detection (axis head)\n";
  out += fmt::format("{:<8}{:>10}{:>11}{:>9}{:>7}{:>7}{:>7}{:>7}\n", "axis", "accuracy", "precision",
                     "recall", "TP", "FP", "FN", "TN");
  for (const auto& a : report.axes) {
    out += fmt::format("{:<8}{:>10}{:>11}{:>9}{:>7}{:>7}{:>7}{:>7}\n", a.axis, a.accuracy().text(),
                       a.precision().text(), a.recall().text(), a.tp, a.fp, a.fn, a.tn);
  }
  return out;
}

namespace {

json percent_json(const Metric& m) {
  if (!m.defined()) return nullptr;
  return static_cast<double>(percent_hundredths(m.num, m.den)) / 100.0;
}

json row_json(const CountRow& r) {
  return {{"name", r.name},
          {"correct", r.correct},
          {"incorrect", r.incorrect},
          {"percent", percent_json({r.correct, r.total()})}};
}

}  // namespace

std::string render_json(const Report& report) {
  json buckets = json::array();
  for (const auto& r : report.buckets.rows) buckets.push_back(row_json(r));
  json combos = json::array();
  for (const auto& r : report.combinations) combos.push_back(row_json(r));
  json axes = json::array();
  for (const auto& a : report.axes) {
    axes.push_back({{"axis", a.axis},
                    {"accuracy", percent_json(a.accuracy())},
                    {"precision", percent_json(a.precision())},
                    {"recall", percent_json(a.recall())},
                    {"tp", a.tp},
                    {"fp", a.fp},
                    {"fn", a.fn},
                    {"tn", a.tn}});
  }
  const json doc = {{"samples", report.samples},
                    {"buckets", buckets},
                    {"total", row_json(report.buckets.total)},
                    {"aligned_specificity", percent_json({report.buckets.rows[0].correct,
                                                          report.buckets.rows[0].total()})},
                    {"small_angle_sensitivity", row_json(report.small_angle)},
                    {"combinations", combos},
                    {"axes", axes}};
  return doc.dump(2) + "\n";
}

DistributionAccumulator::DistributionAccumulator(int n_bins, double cross_limit)
    : n_bins_(n_bins), cross_limit_(cross_limit) {
  if (n_bins < 1 || !(cross_limit > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "distribution export needs n_bins >= 1 and a positive cross limit");
  }
}

DistributionAccumulator::Histograms& DistributionAccumulator::slot(const std::string& population) {
  auto [it, inserted] = populations_.try_emplace(population);
  if (inserted) {
    for (auto& h : it->second.angle) h.assign(static_cast<std::size_t>(n_bins_), 0);
    for (auto& h : it->second.cross) h.assign(static_cast<std::size_t>(n_bins_), 0);
  }
  return it->second;
}

void DistributionAccumulator::add(const std::string& population, const FlowField& flows) {
  flows.validate();
  Histograms& h = slot(population);
  const double angle_width = 360.0 / n_bins_;
  const double cross_width = 2.0 * cross_limit_ / n_bins_;
  const auto last = static_cast<std::size_t>(n_bins_ - 1);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < flows.size(); ++i) {
      if (const auto a = flow_angle_deg(flows.vectors[i], kAxisPairs[k])) {
        ++h.angle[k][std::min(static_cast<std::size_t>(*a / angle_width), last)];
      }
      const double c = cross_value(flows.anchors[i], flows.vectors[i], kAxisPairs[k]);
      const double pos = std::clamp((c + cross_limit_) / cross_width, 0.0, static_cast<double>(last));
      ++h.cross[k][static_cast<std::size_t>(pos)];
    }
  }
}

void DistributionAccumulator::merge(const DistributionAccumulator& other) {
  if (other.n_bins_ != n_bins_ || other.cross_limit_ != cross_limit_) {
    throw Error(ErrorKind::InvalidArgument, "cannot merge distributions with different binning");
  }
  for (const auto& [name, src] : other.populations_) {
    Histograms& dst = slot(name);
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t b = 0; b < dst.angle[k].size(); ++b) {
        dst.angle[k][b] += src.angle[k][b];
        dst.cross[k][b] += src.cross[k][b];
      }
    }
  }
}

void DistributionAccumulator::write(std::ostream& out) const {
  out << "population,quantity,bin,lower,upper,value\n";
  const auto emit = [&](const std::string& pop, const std::string& quantity,
                        const std::vector<std::uint64_t>& counts, double lo, double width) {
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    for (std::size_t b = 0; b < counts.size(); ++b) {
      const double value = total > 0 ? static_cast<double>(counts[b]) / static_cast<double>(total) : 0.0;
      out << fmt::format("{},{},{},{:.6g},{:.6g},{:.9g}\n", pop, quantity, b,
                         lo + width * static_cast<double>(b), lo + width * static_cast<double>(b + 1), value);
    }
  };
  for (const auto& [pop, h] : populations_) {
    for (std::size_t k = 0; k < 3; ++k) {
      emit(pop, fmt::format("angle_{}", to_string(kAxisPairs[k])), h.angle[k], 0.0, 360.0 / n_bins_);
    }
    for (std::size_t k = 0; k < 3; ++k) {
      emit(pop, fmt::format("cross_{}", to_string(kAxisPairs[k])), h.cross[k], -cross_limit_,
           2.0 * cross_limit_ / n_bins_);
    }
  }
}

}  // namespace mountcheck
