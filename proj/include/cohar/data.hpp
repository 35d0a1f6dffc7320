#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cohar/conditional_model.hpp"
#include "cohar/error.hpp"
#include "cohar/rng.hpp"

namespace cohar {

/// One recording: K channel rows and H label rows over T samples, both
/// stored row-major (channel-major for X).
struct SampleSequence {
  std::string id;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> X;  // [K * T]
  std::vector<int> Y;     // [H * T]

  double x(std::size_t k, std::size_t t) const { return X[k * length + t]; }
  int y(std::size_t h, std::size_t t) const { return Y[h * length + t]; }
  std::size_t num_labels() const { return length ? Y.size() / length : 0; }
};

struct Dataset {
  std::vector<std::string> channel_names;
  std::vector<LabelSpec> labels;
  double sample_rate_hz = 12.5;
  std::vector<SampleSequence> sequences;
  bool normalized = false;

  std::size_t num_channels() const { return channel_names.size(); }
  std::size_t num_labels() const { return labels.size(); }

  std::size_t label_index(const std::string& name) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].name == name) return i;
    }
    throw ConfigError("unknown label '" + name + "'");
  }

  std::size_t total_samples() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.length;
    return n;
  }

  void validate() const {
    const std::size_t K = num_channels(), H = num_labels();
    if (K == 0) throw DataError("dataset has no channels");
    for (const auto& l : labels) l.validate();
    for (const auto& s : sequences) {
      if (s.length == 0) throw DataError("sequence '" + s.id + "' is empty");
      if (s.channels != K || s.X.size() != K * s.length) {
        throw DataError("sequence '" + s.id + "' does not have " + std::to_string(K) + " channels");
      }
      if (s.Y.size() != H * s.length) {
        throw DataError("sequence '" + s.id + "' does not have " + std::to_string(H) + " label rows");
      }
      for (double v : s.X) {
        if (!std::isfinite(v)) throw DataError("sequence '" + s.id + "' contains non-finite values");
      }
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t t = 0; t < s.length; ++t) {
          const int c = s.y(h, t);
          if (c < 0 || static_cast<std::size_t>(c) >= labels[h].num_classes) {
            throw LabelError("sequence '" + s.id + "' label '" + labels[h].name + "' has class " +
                             std::to_string(c) + " at t=" + std::to_string(t));
          }
        }
      }
    }
  }

  /// Same metadata, no sequences.
  Dataset empty_like() const {
    Dataset d;
    d.channel_names = channel_names;
    d.labels = labels;
    d.sample_rate_hz = sample_rate_hz;
    d.normalized = normalized;
    return d;
  }
};

// ---------------------------------------------------------------------------
// CSV + sidecar metadata

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::ordered_json metadata_json(const Dataset& d) {
  nlohmann::ordered_json j;
  j["sample_rate_hz"] = d.sample_rate_hz;
  j["channels"] = d.channel_names;
  j["labels"] = nlohmann::ordered_json::array();
  for (const auto& l : d.labels) {
    nlohmann::ordered_json lj;
    lj["name"] = l.name;
    lj["num_classes"] = l.num_classes;
    lj["null_class"] = l.null_class;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < l.num_classes; ++c) names.push_back(l.class_name(c));
    lj["classes"] = names;
    j["labels"].push_back(lj);
  }
  return j;
}

inline void apply_metadata(Dataset& d, const nlohmann::json& j) {
  try {
    d.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    d.channel_names = j.at("channels").get<std::vector<std::string>>();
    d.labels.clear();
    for (const auto& lj : j.at("labels")) {
      LabelSpec l;
      l.name = lj.at("name").get<std::string>();
      l.num_classes = lj.at("num_classes").get<std::size_t>();
      l.null_class = lj.value("null_class", std::size_t{0});
      if (lj.contains("classes")) l.class_names = lj.at("classes").get<std::vector<std::string>>();
      l.validate();
      d.labels.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metadata: ") + e.what());
  }
}

inline std::filesystem::path metadata_path_for(const std::filesystem::path& csv) {
  return csv.parent_path() / "meta.json";
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool parse_int(std::string_view s, long long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

/// Parses `seq_id,t,ch_0..ch_{K-1},label_0..label_{H-1}` rows. Metadata
/// comes from meta.json beside the file when present; otherwise channel and
/// label names come from the header and class counts from the largest id.
inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string where = path.string();
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(where, lineno, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  if (header.size() < 3 || header[0] != "seq_id" || header[1] != "t") {
    throw ParseError(where, lineno, "header must start with seq_id,t");
  }
  std::vector<std::string> channels, label_names;
  for (std::size_t i = 2; i < header.size(); ++i) {
    const std::string col(header[i]);
    if (col.rfind("ch_", 0) == 0) {
      if (!label_names.empty()) throw ParseError(where, lineno, "channel column after label columns");
      channels.push_back(col);
    } else if (col.rfind("label_", 0) == 0) {
      label_names.push_back(col);
    } else {
      throw ParseError(where, lineno, "unexpected column '" + col + "'");
    }
  }
  if (channels.empty()) throw ParseError(where, lineno, "missing channel columns");
  if (label_names.empty()) throw ParseError(where, lineno, "missing label columns");
  const std::size_t K = channels.size(), H = label_names.size();

  Dataset d;
  const auto meta_path = metadata_path_for(path);
  const bool have_meta = std::filesystem::exists(meta_path);
  if (have_meta) {
    std::ifstream mf(meta_path);
    nlohmann::json j;
    try {
      mf >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(meta_path.string() + ": " + e.what());
    }
    apply_metadata(d, j);
    if (d.channel_names.size() != K) throw DataError(meta_path.string() + ": channel count differs from CSV header");
    if (d.labels.size() != H) throw DataError(meta_path.string() + ": label count differs from CSV header");
  } else {
    d.channel_names = channels;
    for (const auto& n : label_names) d.labels.push_back({n, 0, 0, {}});
  }

  std::vector<std::vector<double>> xrows(K);
  std::vector<std::vector<int>> yrows(H);
  std::string current;
  bool open = false;
  std::vector<std::string> seen;
  auto flush = [&]() {
    SampleSequence s;
    s.id = current;
    s.channels = K;
    s.length = xrows[0].size();
    for (auto& r : xrows) {
      s.X.insert(s.X.end(), r.begin(), r.end());
      r.clear();
    }
    for (auto& r : yrows) {
      s.Y.insert(s.Y.end(), r.begin(), r.end());
      r.clear();
    }
    d.sequences.push_back(std::move(s));
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != 2 + K + H) {
      throw ParseError(where, lineno, "expected " + std::to_string(2 + K + H) + " cells, got " +
                                          std::to_string(cells.size()));
    }
    const std::string id(cells[0]);
    if (id.empty()) throw ParseError(where, lineno, "empty seq_id");
    if (!open || id != current) {
      if (open) flush();
      for (const auto& s : seen) {
        if (s == id) throw ParseError(where, lineno, "rows of seq_id '" + id + "' are not contiguous");
      }
      seen.push_back(id);
      current = id;
      open = true;
    }
    long long t = 0;
    if (!detail::parse_int(cells[1], t)) throw ParseError(where, lineno, "non-integer t '" + std::string(cells[1]) + "'");
    if (t != static_cast<long long>(xrows[0].size())) {
      throw ParseError(where, lineno, "t=" + std::to_string(t) + " out of order, expected " +
                                          std::to_string(xrows[0].size()));
    }
    for (std::size_t k = 0; k < K; ++k) {
      double v = 0.0;
      if (!detail::parse_double(cells[2 + k], v) || !std::isfinite(v)) {
        throw ParseError(where, lineno, "non-numeric value '" + std::string(cells[2 + k]) + "' in " + channels[k]);
      }
      xrows[k].push_back(v);
    }
    for (std::size_t h = 0; h < H; ++h) {
      long long c = 0;
      if (!detail::parse_int(cells[2 + K + h], c) || c < 0) {
        throw ParseError(where, lineno, "invalid class id '" + std::string(cells[2 + K + h]) + "' in " +
                                            label_names[h]);
      }
      if (have_meta && static_cast<std::size_t>(c) >= d.labels[h].num_classes) {
        throw ParseError(where, lineno, "class id " + std::to_string(c) + " >= declared class count " +
                                            std::to_string(d.labels[h].num_classes) + " of label '" +
                                            d.labels[h].name + "'");
      }
      yrows[h].push_back(static_cast<int>(c));
    }
  }
  if (open) flush();
  if (d.sequences.empty()) throw DataError(where + ": no data rows");
  if (!have_meta) {
    for (std::size_t h = 0; h < H; ++h) {
      int mx = 1;
      for (const auto& s : d.sequences) {
        for (std::size_t t = 0; t < s.length; ++t) mx = std::max(mx, s.y(h, t));
      }
      d.labels[h].num_classes = static_cast<std::size_t>(mx) + 1;
    }
  }
  d.validate();
  return d;
}

inline void write_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t K = d.num_channels(), H = d.num_labels();
  out << "seq_id,t";
  for (std::size_t k = 0; k < K; ++k) out << ",ch_" << k;
  for (std::size_t h = 0; h < H; ++h) out << ",label_" << h;
  out << '\n';
  for (const auto& s : d.sequences) {
    for (std::size_t t = 0; t < s.length; ++t) {
      out << s.id << ',' << t;
      for (std::size_t k = 0; k < K; ++k) out << ',' << format_double(s.x(k, t));
      for (std::size_t h = 0; h < H; ++h) out << ',' << s.y(h, t);
      out << '\n';
    }
  }
}

inline void write_metadata(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << metadata_json(d).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Windowing

enum class PadPolicy { Drop, ZeroPad };

/// A fixed-length slice of one sequence. Positions past the end of the
/// sequence (ZeroPad only) have X = 0, null-class labels and mask = 0.
struct Window {
  std::size_t sequence = 0;
  std::size_t offset = 0;
  std::size_t length = 0;
  std::vector<double> X;           // [K * L]
  std::vector<int> Y;              // [H * L]
  std::vector<unsigned char> mask;  // [L]
};

inline std::vector<std::size_t> window_offsets(std::size_t T, std::size_t L, std::size_t stride, PadPolicy policy) {
  std::vector<std::size_t> offs;
  if (policy == PadPolicy::Drop) {
    for (std::size_t o = 0; o + L <= T; o += stride) offs.push_back(o);
  } else {
    for (std::size_t o = 0;; o += stride) {
      offs.push_back(o);
      if (o + L >= T) break;
    }
  }
  return offs;
}

/// Sliding windows over every sequence, in sequence order then offset order.
/// Returns an empty list when no sequence holds a full window under Drop.
inline std::vector<Window> make_windows(const Dataset& d, std::size_t L, std::size_t stride, PadPolicy policy) {
  if (L == 0) throw ConfigError("window length must be >= 1");
  if (stride == 0) throw ConfigError("window stride must be >= 1");
  const std::size_t K = d.num_channels(), H = d.num_labels();
  std::vector<Window> out;
  for (std::size_t si = 0; si < d.sequences.size(); ++si) {
    const auto& s = d.sequences[si];
    for (auto off : window_offsets(s.length, L, stride, policy)) {
      Window w{si, off, L, std::vector<double>(K * L, 0.0), std::vector<int>(H * L, 0),
               std::vector<unsigned char>(L, 0)};
      const std::size_t n = std::min(L, s.length - off);
      for (std::size_t k = 0; k < K; ++k) {
        std::copy_n(s.X.begin() + static_cast<std::ptrdiff_t>(k * s.length + off), n,
                    w.X.begin() + static_cast<std::ptrdiff_t>(k * L));
      }
      for (std::size_t h = 0; h < H; ++h) {
        std::copy_n(s.Y.begin() + static_cast<std::ptrdiff_t>(h * s.length + off), n,
                    w.Y.begin() + static_cast<std::ptrdiff_t>(h * L));
        std::fill(w.Y.begin() + static_cast<std::ptrdiff_t>(h * L + n), w.Y.begin() + static_cast<std::ptrdiff_t>((h + 1) * L),
                  static_cast<int>(d.labels[h].null_class));
      }
      std::fill_n(w.mask.begin(), n, 1);
      out.push_back(std::move(w));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-channel affine map x -> (x - mean) * inv_scale fitted on a training split.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> scale;  // std, or 1 for constant channels

  bool empty() const { return mean.empty(); }

  static Normalizer fit(const Dataset& train) {
    const std::size_t K = train.num_channels();
    if (train.sequences.empty() || train.total_samples() == 0) throw DataError("normalize: empty training split");
    Normalizer n{std::vector<double>(K, 0.0), std::vector<double>(K, 1.0)};
    const double N = static_cast<double>(train.total_samples());
    for (std::size_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (const auto& seq : train.sequences) {
        for (std::size_t t = 0; t < seq.length; ++t) s += seq.x(k, t);
      }
      const double mu = s / N;
      double v = 0.0;
      for (const auto& seq : train.sequences) {
        for (std::size_t t = 0; t < seq.length; ++t) v += (seq.x(k, t) - mu) * (seq.x(k, t) - mu);
      }
      const double sd = std::sqrt(v / N);
      n.mean[k] = mu;
      n.scale[k] = sd > 0.0 ? sd : 1.0;
    }
    return n;
  }

  void apply(Dataset& d) const {
    if (d.normalized) throw DataError("normalize: dataset is already normalized");
    if (mean.size() != d.num_channels()) throw DimensionError("normalize: channel count mismatch");
    for (auto& s : d.sequences) {
      for (std::size_t k = 0; k < mean.size(); ++k) {
        for (std::size_t t = 0; t < s.length; ++t) s.X[k * s.length + t] = (s.X[k * s.length + t] - mean[k]) / scale[k];
      }
    }
    d.normalized = true;
  }
};

inline Normalizer normalize(const Dataset& train_split) { return Normalizer::fit(train_split); }

// ---------------------------------------------------------------------------
// Splitting

/// Whole sequences go to one side; round(train_frac * N) train sequences,
/// clamped so both sides are non-empty. Each side keeps the original order.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("split: train_frac must be in (0, 1)");
  const std::size_t N = d.sequences.size();
  if (N < 2) throw DataError("split: need at least 2 sequences, got " + std::to_string(N));
  std::vector<std::size_t> idx(N);
  for (std::size_t i = 0; i < N; ++i) idx[i] = i;
  SeededRng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(N)));
  n_train = std::clamp<std::size_t>(n_train, 1, N - 1);
  std::vector<char> is_train(N, 0);
  for (std::size_t i = 0; i < n_train; ++i) is_train[idx[i]] = 1;
  Dataset train = d.empty_like(), test = d.empty_like();
  for (std::size_t i = 0; i < N; ++i) (is_train[i] ? train : test).sequences.push_back(d.sequences[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace cohar
