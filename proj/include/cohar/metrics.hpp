#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cohar/conditional_model.hpp"
#include "cohar/data.hpp"
#include "cohar/error.hpp"

namespace cohar {

namespace detail {

inline void check_pair(std::span<const int> pred, std::span<const int> truth, const char* op) {
  if (pred.size() != truth.size()) {
    throw ContractError(std::string(op) + ": prediction length " + std::to_string(pred.size()) +
                        " differs from truth length " + std::to_string(truth.size()));
  }
  if (pred.empty()) throw ContractError(std::string(op) + ": empty input");
}

inline void check_ids(std::span<const int> ids, std::size_t C, const char* op) {
  for (int c : ids) {
    if (c < 0 || static_cast<std::size_t>(c) >= C) {
      throw LabelError(std::string(op) + ": class " + std::to_string(c) + " outside [0," + std::to_string(C) + ")");
    }
  }
}

}  // namespace detail

inline double accuracy(std::span<const int> pred, std::span<const int> truth) {
  detail::check_pair(pred, truth, "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// Rows are ground truth, columns predictions.
struct ConfusionMatrix {
  std::string label;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::uint64_t>> counts;

  std::size_t num_classes() const { return counts.size(); }

  std::uint64_t row_sum(std::size_t i) const {
    std::uint64_t s = 0;
    for (auto v : counts[i]) s += v;
    return s;
  }

  std::uint64_t col_sum(std::size_t j) const {
    std::uint64_t s = 0;
    for (const auto& row : counts) s += row[j];
    return s;
  }

  /// Rows divided by their sums; rows without support stay all-zero.
  std::vector<std::vector<double>> normalized() const {
    std::vector<std::vector<double>> out(num_classes(), std::vector<double>(num_classes(), 0.0));
    for (std::size_t i = 0; i < num_classes(); ++i) {
      const auto s = row_sum(i);
      if (s == 0) continue;
      for (std::size_t j = 0; j < num_classes(); ++j) out[i][j] = static_cast<double>(counts[i][j]) / static_cast<double>(s);
    }
    return out;
  }

  std::vector<bool> zero_support_rows() const {
    std::vector<bool> out(num_classes());
    for (std::size_t i = 0; i < num_classes(); ++i) out[i] = row_sum(i) == 0;
    return out;
  }
};

inline ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> truth, std::size_t C) {
  detail::check_pair(pred, truth, "confusion");
  detail::check_ids(pred, C, "confusion");
  detail::check_ids(truth, C, "confusion");
  ConfusionMatrix m;
  m.counts.assign(C, std::vector<std::uint64_t>(C, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++m.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  return m;
}

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;    // true instances
  std::uint64_t predicted = 0;  // predicted instances
};

inline std::vector<ClassScores> class_scores(const ConfusionMatrix& m) {
  std::vector<ClassScores> out(m.num_classes());
  for (std::size_t c = 0; c < m.num_classes(); ++c) {
    auto& s = out[c];
    const auto tp = static_cast<double>(m.counts[c][c]);
    s.support = m.row_sum(c);
    s.predicted = m.col_sum(c);
    s.precision = s.predicted ? tp / static_cast<double>(s.predicted) : 0.0;
    s.recall = s.support ? tp / static_cast<double>(s.support) : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  }
  return out;
}

/// Unweighted mean of per-class F1 over classes that occur in the truth or
/// the prediction.
inline double macro_f1(const ConfusionMatrix& m) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : class_scores(m)) {
    if (s.support == 0 && s.predicted == 0) continue;
    sum += s.f1;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

inline double macro_f1(std::span<const int> pred, std::span<const int> truth, std::size_t C) {
  return macro_f1(confusion(pred, truth, C));
}

struct LabelMetrics {
  LabelSpec label;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassScores> classes;
  ConfusionMatrix confusion;
};

struct MetricsReport {
  std::vector<LabelMetrics> labels;
  std::uint64_t samples = 0;
  std::string config_digest;
  std::uint64_t seed = 0;

  const LabelMetrics& at(const std::string& name) const {
    for (const auto& l : labels) {
      if (l.label.name == name) return l;
    }
    throw ContractError("metrics: no label '" + name + "'");
  }
};

/// Metrics of one label over flat prediction/truth arrays.
inline LabelMetrics label_metrics(const LabelSpec& label, std::span<const int> pred, std::span<const int> truth) {
  LabelMetrics m;
  m.label = label;
  m.confusion = confusion(pred, truth, label.num_classes);
  m.confusion.label = label.name;
  for (std::size_t c = 0; c < label.num_classes; ++c) m.confusion.class_names.push_back(label.class_name(c));
  m.accuracy = accuracy(pred, truth);
  m.classes = class_scores(m.confusion);
  m.macro_f1 = macro_f1(m.confusion);
  return m;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["samples"] = r.samples;
  j["seed"] = r.seed;
  j["config_digest"] = r.config_digest;
  j["labels"] = nlohmann::ordered_json::array();
  for (const auto& l : r.labels) {
    nlohmann::ordered_json lj;
    lj["name"] = l.label.name;
    lj["accuracy"] = l.accuracy;
    lj["macro_f1"] = l.macro_f1;
    lj["classes"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < l.classes.size(); ++c) {
      nlohmann::ordered_json cj;
      cj["class"] = l.label.class_name(c);
      cj["precision"] = l.classes[c].precision;
      cj["recall"] = l.classes[c].recall;
      cj["f1"] = l.classes[c].f1;
      cj["support"] = l.classes[c].support;
      cj["predicted"] = l.classes[c].predicted;
      lj["classes"].push_back(cj);
    }
    lj["confusion"] = l.confusion.counts;
    lj["confusion_normalized"] = l.confusion.normalized();
    j["labels"].push_back(lj);
  }
  return j;
}

/// Row-normalized matrix with a `truth_class` row header and one column per
/// predicted class. Rows without support are written as zeros.
inline void write_confusion_csv(const ConfusionMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "truth_class";
  for (const auto& n : m.class_names) out << ',' << n;
  out << '\n';
  const auto norm = m.normalized();
  for (std::size_t i = 0; i < m.num_classes(); ++i) {
    out << m.class_names.at(i);
    for (double v : norm[i]) out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace cohar
