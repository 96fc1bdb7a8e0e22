#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finetag/attributes.hpp"
#include "finetag/errors.hpp"
#include "finetag/label_matrix.hpp"
#include "finetag/losses.hpp"
#include "finetag/tensor.hpp"

namespace finetag {

// Default ranking breaks score ties by ascending label index; the other two
// rules bound the effect of ties by putting relevant labels first or last.
enum class TieRule { by_index, optimistic, pessimistic };

// Permutation of label indices, best-ranked first. tau(label) is 1-based.
struct RankedLabels {
  std::vector<std::uint32_t> order;

  std::uint32_t tau(std::uint32_t label) const {
    for (std::uint32_t i = 0; i < order.size(); ++i)
      if (order[i] == label) return i + 1;
    throw Error(ErrorCode::LengthMismatch, "label not in ranking");
  }
};

namespace detail {

inline void check_finite_scores(std::span<const double> scores) {
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!std::isfinite(scores[i]))
      throw Error(ErrorCode::NonFiniteLogit,
                  "score at position " + std::to_string(i) + " is not finite");
}

// Shared ranking core for labels-within-image and images-within-label.
inline std::vector<std::uint32_t> rank_descending(std::span<const double> scores,
                                                  std::span<const std::uint8_t> relevant,
                                                  TieRule tie) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (tie != TieRule::by_index && relevant[a] != relevant[b])
      return tie == TieRule::optimistic ? relevant[a] > relevant[b]
                                        : relevant[a] < relevant[b];
    return a < b;
  });
  return order;
}

}  // namespace detail

inline RankedLabels rank_labels(std::span<const double> scores,
                                std::span<const std::uint8_t> relevant,
                                TieRule tie = TieRule::by_index) {
  if (scores.size() != relevant.size())
    throw Error(ErrorCode::LengthMismatch, "scores/relevance length mismatch");
  detail::check_finite_scores(scores);
  return RankedLabels{detail::rank_descending(scores, relevant, tie)};
}

// Per-image ranking-based average precision: rank all N labels by score,
// then average, over the relevant labels, the fraction of relevant labels
// at or above each one's rank. 1.0 exactly when every relevant label
// outranks every irrelevant one.
inline double avgprec(std::span<const double> scores,
                      std::span<const std::uint8_t> relevant,
                      TieRule tie = TieRule::by_index) {
  if (scores.size() != relevant.size())
    throw Error(ErrorCode::LengthMismatch, "scores/relevance length mismatch");
  std::size_t num_relevant = 0;
  for (auto r : relevant) num_relevant += r ? 1 : 0;
  if (num_relevant == 0)
    throw Error(ErrorCode::EmptyRelevantSet, "image has no relevant labels");
  detail::check_finite_scores(scores);

  auto order = detail::rank_descending(scores, relevant, tie);
  double sum = 0.0;
  std::size_t seen = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (relevant[order[k]]) {
      ++seen;
      sum += double(seen) / double(k + 1);
    }
  }
  return sum / double(num_relevant);
}

template <typename S>
double avgprec(std::span<const S> scores, const RelevanceSets& rel,
               TieRule tie = TieRule::by_index) {
  std::vector<double> s(scores.begin(), scores.end());
  if (rel.num_labels != scores.size())
    throw Error(ErrorCode::LengthMismatch, "scores/relevance length mismatch");
  return avgprec(std::span<const double>(s), std::span<const std::uint8_t>(rel.positive_mask()), tie);
}

struct DatasetAvgprec {
  double mean = 0.0;
  std::uint32_t counted = 0;
  std::uint32_t skipped = 0;
};

// Mean per-image avgprec; images with an empty relevant set are skipped and
// counted. Images where every label is relevant score exactly 1 and are
// included by default.
inline DatasetAvgprec dataset_avgprec(const Matrix<double>& scores,
                                      const LabelMatrix& labels,
                                      std::span<const std::uint32_t> rows,
                                      TieRule tie = TieRule::by_index,
                                      bool include_complete = true) {
  if (scores.rows() != rows.size() || scores.cols() != labels.cols())
    throw Error(ErrorCode::LengthMismatch, "score matrix does not match label rows");

  DatasetAvgprec out;
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::uint8_t> relevant(labels.cols(), 0);
    std::size_t positives = 0;
    for (std::uint32_t c = 0; c < labels.cols(); ++c) {
      relevant[c] = labels.get(rows[i], c) ? 1 : 0;
      positives += relevant[c];
    }
    if (positives == 0 || (!include_complete && positives == labels.cols())) {
      ++out.skipped;
      continue;
    }
    total += avgprec(scores.row(std::uint32_t(i)), std::span<const std::uint8_t>(relevant), tie);
    ++out.counted;
  }
  if (out.counted == 0)
    throw Error(ErrorCode::AllImagesSkipped, "no image has a relevant label");
  out.mean = total / out.counted;
  return out;
}

// Per-label AP over the image axis, without precision-recall interpolation:
// AP = (1/R) * sum of precision@k at each relevant hit. Undefined (nullopt)
// when the label has no positive image.
inline std::optional<double> average_precision_noninterp(
    std::span<const double> scores, std::span<const std::uint8_t> relevant,
    TieRule tie = TieRule::by_index) {
  if (scores.size() != relevant.size())
    throw Error(ErrorCode::LengthMismatch, "scores/relevance length mismatch");
  detail::check_finite_scores(scores);
  std::size_t total_relevant = 0;
  for (auto r : relevant) total_relevant += r ? 1 : 0;
  if (total_relevant == 0) return std::nullopt;

  auto order = detail::rank_descending(scores, relevant, tie);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (relevant[order[k]]) {
      ++hits;
      sum += double(hits) / double(k + 1);
    }
  }
  return sum / double(total_relevant);
}

struct WeightedMap {
  double overall = 0.0;
  std::uint32_t defined_labels = 0;
  std::uint32_t undefined_labels = 0;
  // Group name -> W_MAP restricted to that group; nullopt when the group has
  // no defined label.
  std::vector<std::pair<std::string, std::optional<double>>> per_group;
};

// Frequency-weighted mean AP: weights are count_l / sum of counts, both
// restricted to labels whose AP is defined.
inline WeightedMap weighted_map(
    std::span<const std::optional<double>> per_label_ap,
    std::span<const std::uint64_t> label_counts,
    const AttributeVocabulary* vocab = nullptr) {
  if (per_label_ap.size() != label_counts.size())
    throw Error(ErrorCode::LengthMismatch, "AP/count length mismatch");

  auto weighted_over = [&](std::span<const std::uint32_t> labels) -> std::optional<double> {
    double weight_sum = 0.0, acc = 0.0;
    for (std::uint32_t l : labels) {
      if (!per_label_ap[l]) continue;
      weight_sum += double(label_counts[l]);
      acc += double(label_counts[l]) * *per_label_ap[l];
    }
    if (weight_sum == 0.0) return std::nullopt;
    return acc / weight_sum;
  };

  WeightedMap out;
  std::vector<std::uint32_t> all(per_label_ap.size());
  std::iota(all.begin(), all.end(), 0u);
  for (std::uint32_t l : all) {
    if (per_label_ap[l]) ++out.defined_labels;
    else ++out.undefined_labels;
  }
  auto overall = weighted_over(all);
  if (!overall)
    throw Error(ErrorCode::EmptyRelevantSet, "no label has a defined AP");
  out.overall = *overall;

  if (vocab) {
    if (vocab->num_attributes() != per_label_ap.size())
      throw Error(ErrorCode::LengthMismatch, "vocabulary does not match AP array");
    for (const auto& [group, ids] : vocab->groups()) {
      std::vector<std::uint32_t> labels;
      labels.reserve(ids.size());
      for (std::uint32_t id : ids) labels.push_back(id - 1);  // ids are 1-based
      out.per_group.emplace_back(group, weighted_over(labels));
    }
  }
  return out;
}

struct ApFrequencyRow {
  std::uint32_t label = 0;  // 0-based label index
  std::uint64_t count = 0;
  double ap = 0.0;
};

struct ApFrequencyTable {
  std::vector<ApFrequencyRow> rows;       // defined labels, count ascending
  std::uint32_t undefined_labels = 0;
};

inline ApFrequencyTable ap_vs_frequency_table(
    std::span<const std::optional<double>> per_label_ap,
    std::span<const std::uint64_t> label_counts) {
  if (per_label_ap.size() != label_counts.size())
    throw Error(ErrorCode::LengthMismatch, "AP/count length mismatch");
  ApFrequencyTable table;
  for (std::uint32_t l = 0; l < per_label_ap.size(); ++l) {
    if (!per_label_ap[l]) {
      ++table.undefined_labels;
      continue;
    }
    table.rows.push_back({l, label_counts[l], *per_label_ap[l]});
  }
  std::sort(table.rows.begin(), table.rows.end(),
            [](const ApFrequencyRow& a, const ApFrequencyRow& b) {
              if (a.count != b.count) return a.count < b.count;
              return a.label < b.label;
            });
  return table;
}

struct MetricsReport {
  double avgprec_mean = 0.0;
  std::uint32_t images_counted = 0;
  std::uint32_t skipped_images = 0;
  std::vector<std::optional<double>> per_label_ap;  // [N]
  std::vector<std::uint64_t> label_counts;          // [N] positives in eval set
  WeightedMap wmap;
};

// Full evaluation over a score matrix [M images x N labels] aligned with the
// given label-matrix rows.
inline MetricsReport compute_metrics(const Matrix<double>& scores,
                                     const LabelMatrix& labels,
                                     std::span<const std::uint32_t> rows,
                                     const AttributeVocabulary* vocab = nullptr,
                                     TieRule tie = TieRule::by_index) {
  if (scores.rows() != rows.size() || scores.cols() != labels.cols())
    throw Error(ErrorCode::LengthMismatch, "score matrix does not match label rows");

  MetricsReport report;
  auto ds = dataset_avgprec(scores, labels, rows, tie);
  report.avgprec_mean = ds.mean;
  report.images_counted = ds.counted;
  report.skipped_images = ds.skipped;

  const std::uint32_t n = labels.cols();
  report.per_label_ap.resize(n);
  report.label_counts.assign(n, 0);
  std::vector<double> column(rows.size());
  std::vector<std::uint8_t> truth(rows.size());
  for (std::uint32_t l = 0; l < n; ++l) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      column[i] = scores(std::uint32_t(i), l);
      truth[i] = labels.get(rows[i], l) ? 1 : 0;
      report.label_counts[l] += truth[i];
    }
    report.per_label_ap[l] = average_precision_noninterp(
        std::span<const double>(column), std::span<const std::uint8_t>(truth), tie);
  }

  report.wmap = weighted_map(std::span<const std::optional<double>>(report.per_label_ap),
                             std::span<const std::uint64_t>(report.label_counts), vocab);
  return report;
}

namespace detail {

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

inline std::string format_real(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << v;
  return ss.str();
}

}  // namespace detail

// One row per label: id, full name, positive count, AP (blank if undefined).
inline void write_per_label_csv(const MetricsReport& report,
                                const AttributeVocabulary& vocab, std::ostream& out) {
  out << "attribute_id,attribute,count,average_precision\n";
  for (std::uint32_t l = 0; l < report.per_label_ap.size(); ++l) {
    out << (l + 1) << ',' << detail::csv_escape(vocab.entry(l + 1).full_name()) << ','
        << report.label_counts[l] << ',';
    if (report.per_label_ap[l]) out << detail::format_real(*report.per_label_ap[l]);
    out << '\n';
  }
}

// One column per group plus a leading metric column, mirroring a wide
// results table; a second row would hold another model's values.
inline void write_per_group_csv(const MetricsReport& report, std::ostream& out) {
  out << "metric";
  for (const auto& [group, value] : report.wmap.per_group)
    out << ',' << detail::csv_escape(group);
  out << "\nwmap";
  for (const auto& [group, value] : report.wmap.per_group) {
    out << ',';
    if (value) out << detail::format_real(*value);
  }
  out << '\n';
}

inline void write_ap_vs_frequency_csv(const MetricsReport& report, std::ostream& out) {
  auto table = ap_vs_frequency_table(
      std::span<const std::optional<double>>(report.per_label_ap),
      std::span<const std::uint64_t>(report.label_counts));
  out << "attribute_id,count,average_precision\n";
  for (const auto& row : table.rows)
    out << (row.label + 1) << ',' << row.count << ',' << detail::format_real(row.ap)
        << '\n';
  out << "# undefined_labels," << table.undefined_labels << "\n";
}

inline nlohmann::ordered_json metrics_summary_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["avgprec"] = report.avgprec_mean;
  j["wmap"] = report.wmap.overall;
  j["images_counted"] = report.images_counted;
  j["skipped"] = report.skipped_images;
  j["undefined_labels"] = report.wmap.undefined_labels;
  nlohmann::ordered_json groups = nlohmann::ordered_json::object();
  for (const auto& [group, value] : report.wmap.per_group) {
    if (value) groups[group] = *value;
    else groups[group] = nullptr;
  }
  if (!report.wmap.per_group.empty()) j["per_group_wmap"] = groups;
  return j;
}

}  // namespace finetag
