#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cohar/adam.hpp"
#include "cohar/conditional_model.hpp"
#include "cohar/data.hpp"
#include "cohar/metrics.hpp"

namespace cohar {

struct WindowSpec {
  std::size_t length = 64;
  std::size_t stride = 32;

  bool operator==(const WindowSpec&) const = default;
};

struct TrainOptions {
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  AdamOptions adam;
  std::uint64_t seed = 1;
  WindowSpec window;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(adam.lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (window.length < 1 || window.stride < 1) throw ConfigError("train: window length and stride must be >= 1");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean chain loss over the epoch's batches
  double tau = 0.0;
  std::vector<double> val_accuracy;  // dataset label order; empty without validation data
  std::vector<double> val_f1;
};

using TrainHistory = std::vector<EpochRecord>;

/// A model plus what is needed to apply it to raw recordings.
struct TrainedModel {
  DenseModel model;
  Normalizer normalizer;
  WindowSpec window;
  std::vector<std::string> channel_names;
  double sample_rate_hz = 12.5;
  std::string config_digest;  // provenance, carried into evaluation reports
  std::uint64_t seed = 0;
};

namespace detail {

// Dataset label index for every model label, matched by name.
inline std::vector<std::size_t> label_mapping(const DenseModel& model, const Dataset& d) {
  std::vector<std::size_t> map;
  for (const auto& l : model_labels(model)) {
    const std::size_t i = d.label_index(l.name);
    if (d.labels[i].num_classes != l.num_classes) {
      throw ContractError("label '" + l.name + "' has " + std::to_string(d.labels[i].num_classes) +
                          " classes in the data but " + std::to_string(l.num_classes) + " in the model");
    }
    map.push_back(i);
  }
  return map;
}

inline void check_inputs(const DenseModel& model, const Dataset& d) {
  if (d.num_channels() != model_in_channels(model)) {
    throw ContractError("data has " + std::to_string(d.num_channels()) + " channels, model expects " +
                        std::to_string(model_in_channels(model)));
  }
}

// Stacks windows [first, first + count) of `order` into an input batch and
// chain-ordered targets.
inline Tensor stack_windows(const std::vector<Window>& windows, const std::vector<std::size_t>& order,
                            std::size_t first, std::size_t count, std::size_t K) {
  const std::size_t L = windows[order[first]].length;
  Tensor x({count, K, L});
  for (std::size_t b = 0; b < count; ++b) {
    const auto& w = windows[order[first + b]];
    std::copy(w.X.begin(), w.X.end(), x.data().begin() + static_cast<std::ptrdiff_t>(b * K * L));
  }
  return x;
}

inline LabelBatch stack_targets(const std::vector<Window>& windows, const std::vector<std::size_t>& order,
                                std::size_t first, std::size_t count, const std::vector<std::size_t>& mapping) {
  const std::size_t L = windows[order[first]].length;
  LabelBatch targets(mapping.size(), std::vector<int>(count * L));
  for (std::size_t h = 0; h < mapping.size(); ++h) {
    for (std::size_t b = 0; b < count; ++b) {
      const auto& w = windows[order[first + b]];
      std::copy_n(w.Y.begin() + static_cast<std::ptrdiff_t>(mapping[h] * L), L,
                  targets[h].begin() + static_cast<std::ptrdiff_t>(b * L));
    }
  }
  return targets;
}

}  // namespace detail

/// Dense predictions for every sequence, [H * T] in the dataset's label
/// order. Windows overlap; each time step keeps the prediction of the window
/// whose center is nearest (earlier window on ties).
inline std::vector<std::vector<int>> predict_sequences(const DenseModel& model, const Dataset& d, const WindowSpec& win,
                                                       std::size_t max_batch = 32) {
  detail::check_inputs(model, d);
  const auto mapping = detail::label_mapping(model, d);
  if (win.length % model_time_multiple(model) != 0) {
    throw GeometryError("window length " + std::to_string(win.length) + " is not divisible by " +
                        std::to_string(model_time_multiple(model)));
  }
  const std::size_t K = d.num_channels(), H = d.num_labels(), L = win.length;
  std::vector<std::vector<int>> out;
  for (std::size_t si = 0; si < d.sequences.size(); ++si) {
    const auto& s = d.sequences[si];
    Dataset one = d.empty_like();
    one.sequences.push_back(s);
    const auto windows = make_windows(one, L, win.stride, PadPolicy::ZeroPad);
    std::vector<int> pred(H * s.length, 0);
    for (std::size_t h = 0; h < H; ++h) {
      std::fill(pred.begin() + static_cast<std::ptrdiff_t>(h * s.length),
                pred.begin() + static_cast<std::ptrdiff_t>((h + 1) * s.length), static_cast<int>(d.labels[h].null_class));
    }
    std::vector<double> best(s.length, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t first = 0; first < windows.size(); first += max_batch) {
      const std::size_t count = std::min(max_batch, windows.size() - first);
      const Tensor x = detail::stack_windows(windows, order, first, count, K);
      const LabelBatch ids = predict_dense(model, x);
      for (std::size_t b = 0; b < count; ++b) {
        const auto& w = windows[first + b];
        const double center = static_cast<double>(w.offset) + (static_cast<double>(L) - 1.0) / 2.0;
        for (std::size_t j = 0; j < L; ++j) {
          if (!w.mask[j]) continue;
          const std::size_t t = w.offset + j;
          const double dist = std::abs(static_cast<double>(t) - center);
          if (!(dist < best[t])) continue;
          best[t] = dist;
          for (std::size_t h = 0; h < mapping.size(); ++h) pred[mapping[h] * s.length + t] = ids[h][b * L + j];
        }
      }
    }
    out.push_back(std::move(pred));
  }
  return out;
}

/// Per-label metrics over flat predictions, in the dataset's label order.
/// Labels the model does not predict are skipped.
inline MetricsReport metrics_from_predictions(const Dataset& d, const std::vector<std::vector<int>>& preds,
                                              const std::vector<std::size_t>& labels) {
  MetricsReport r;
  r.samples = d.total_samples();
  for (auto h : labels) {
    std::vector<int> p, t;
    for (std::size_t si = 0; si < d.sequences.size(); ++si) {
      const auto& s = d.sequences[si];
      p.insert(p.end(), preds[si].begin() + static_cast<std::ptrdiff_t>(h * s.length),
               preds[si].begin() + static_cast<std::ptrdiff_t>((h + 1) * s.length));
      t.insert(t.end(), s.Y.begin() + static_cast<std::ptrdiff_t>(h * s.length),
               s.Y.begin() + static_cast<std::ptrdiff_t>((h + 1) * s.length));
    }
    r.labels.push_back(label_metrics(d.labels[h], p, t));
  }
  return r;
}

/// `d` must already be normalized with the model's transform.
inline MetricsReport evaluate(const DenseModel& model, const Dataset& d, const WindowSpec& win) {
  const auto preds = predict_sequences(model, d, win);
  auto mapping = detail::label_mapping(model, d);
  std::sort(mapping.begin(), mapping.end());
  return metrics_from_predictions(d, preds, mapping);
}

/// Shuffled mini-batch Adam on chain_loss over windows of `train_data`
/// (already normalized). The temperature follows the chain's schedule per
/// epoch. When `val_data` is given, per-label accuracy and macro-F1 are
/// recorded each epoch. `on_epoch_end` runs after every epoch.
inline TrainHistory train(DenseModel& model, const Dataset& train_data, const Dataset* val_data,
                          const TrainOptions& opts,
                          const std::function<void(const EpochRecord&)>& on_epoch_end = {}) {
  opts.validate();
  detail::check_inputs(model, train_data);
  if (opts.window.length % model_time_multiple(model) != 0) {
    throw GeometryError("window length " + std::to_string(opts.window.length) + " is not divisible by " +
                        std::to_string(model_time_multiple(model)));
  }
  const auto mapping = detail::label_mapping(model, train_data);
  const auto windows = make_windows(train_data, opts.window.length, opts.window.stride, PadPolicy::Drop);
  if (windows.empty()) throw DataError("train: dataset yields no full windows of length " + std::to_string(opts.window.length));
  const std::size_t batches = windows.size() / opts.batch_size;
  if (batches == 0) {
    throw DataError("train: " + std::to_string(windows.size()) + " windows are fewer than one batch of " +
                    std::to_string(opts.batch_size));
  }

  const auto* chain = std::get_if<ConditionalUNet>(&model);
  const TemperatureSchedule schedule = chain ? chain->config().generator.schedule : TemperatureSchedule{};
  const SeededRng root(opts.seed);
  SeededRng shuffle_rng = root.stream("shuffle");
  SeededRng gumbel_rng = root.stream("gumbel");
  auto params = model_parameters(model);
  AdamState adam{opts.adam, {}, {}, 0};
  const std::size_t K = train_data.num_channels();

  std::vector<std::size_t> val_labels;
  if (val_data) {
    val_labels = detail::label_mapping(model, *val_data);
    std::sort(val_labels.begin(), val_labels.end());
  }

  TrainHistory history;
  std::vector<std::size_t> order(windows.size());
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order.begin(), order.end());
    const double tau = anneal(schedule, epoch);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t first = bi * opts.batch_size;
      const Tensor x = detail::stack_windows(windows, order, first, opts.batch_size, K);
      const LabelBatch targets = detail::stack_targets(windows, order, first, opts.batch_size, mapping);
      Tape tape;
      ForwardOptions fo{ForwardMode::Train, tau, &gumbel_rng, &tape, &targets};
      const Tensor loss = chain_loss(forward_chain(model, x, fo), targets);
      if (!std::isfinite(loss.item())) throw TrainingError(epoch, "loss is not finite");
      tape.backward(loss);
      adam_step(params, adam);
      loss_sum += loss.item();
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), tau, {}, {}};
    if (val_data) {
      const auto preds = predict_sequences(model, *val_data, opts.window);
      const auto report = metrics_from_predictions(*val_data, preds, val_labels);
      for (const auto& l : report.labels) {
        rec.val_accuracy.push_back(l.accuracy);
        rec.val_f1.push_back(l.macro_f1);
      }
    }
    history.push_back(rec);
    if (on_epoch_end) on_epoch_end(rec);
  }
  return history;
}

}  // namespace cohar
