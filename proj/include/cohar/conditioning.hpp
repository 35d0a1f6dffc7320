#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cohar/ops.hpp"
#include "cohar/rng.hpp"
#include "cohar/sampling.hpp"
#include "cohar/tensor.hpp"

namespace cohar {

enum class GeneratorKind { NaiveMax, GumbelMax };

/// Monotone map applied to (logits + noise) / tau; its Jacobian is the
/// straight-through gradient of the hard sample.
enum class Relaxation { Tanh, Softmax };

struct TemperatureSchedule {
  double tau0 = 1.0;
  double decay_rate = 0.01;  // per epoch
  double tau_min = 0.5;

  void validate() const {
    if (!(tau0 > 0.0)) throw ConfigError("schedule: tau0 must be > 0");
    if (!(decay_rate >= 0.0)) throw ConfigError("schedule: decay_rate must be >= 0");
    if (!(tau_min > 0.0)) throw ConfigError("schedule: tau_min must be > 0");
  }

  bool operator==(const TemperatureSchedule&) const = default;
};

/// max(tau_min, tau0 * exp(-decay_rate * epoch))
inline double anneal(const TemperatureSchedule& s, std::size_t epoch) {
  return std::max(s.tau_min, s.tau0 * std::exp(-s.decay_rate * static_cast<double>(epoch)));
}

struct GeneratorMode {
  GeneratorKind kind = GeneratorKind::GumbelMax;
  Relaxation relaxation = Relaxation::Tanh;
  TemperatureSchedule schedule;

  bool operator==(const GeneratorMode&) const = default;
};

inline const char* to_string(GeneratorKind k) { return k == GeneratorKind::NaiveMax ? "naive_max" : "gumbel_max"; }
inline const char* to_string(Relaxation r) { return r == Relaxation::Tanh ? "tanh" : "softmax"; }

namespace detail {

// Index of the largest of C values strided by T; ties go to the lowest class.
inline std::size_t column_argmax(const double* p, std::size_t C, std::size_t T) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < C; ++c) {
    if (p[c * T] > p[best * T]) best = c;
  }
  return best;
}

}  // namespace detail

/// Hard one-hot at the per-column argmax of the logits. Backward passes the
/// output gradient of the selected class to that class's logit only.
inline Tensor generate_naive_max(const Tensor& logits) {
  ops::detail::expect_rank(logits, 3, "generate_naive_max", "logits");
  const std::size_t B = logits.dim(0), C = logits.dim(1), T = logits.dim(2);
  Tensor hard(logits.shape());
  std::vector<std::size_t> pick(B * T);
  const double* lp = logits.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t c = detail::column_argmax(lp + b * C * T + t, C, T);
      pick[b * T + t] = c;
      hard[(b * C + c) * T + t] = 1.0;
    }
  }
  Tape* tape = common_tape({&logits});
  if (!tape) return hard;
  return tape->record("generate_naive_max", hard, {&logits},
                      [=, logits = logits.detached(), hard = hard.detached(), pick = std::move(pick)]() mutable {
                        auto dl = logits.grad();
                        auto dh = hard.grad();
                        for (std::size_t b = 0; b < B; ++b) {
                          for (std::size_t t = 0; t < T; ++t) {
                            const std::size_t i = (b * C + pick[b * T + t]) * T + t;
                            dl[i] += dh[i];
                          }
                        }
                      });
}

/// Relaxed sample act((logits + noise) / tau), act applied elementwise (tanh)
/// or over the class axis (softmax). No tape; this is the forward of the soft
/// path that the straight-through gradient differentiates.
inline Tensor relax(const Tensor& logits, const Tensor& noise, double tau, Relaxation act) {
  const std::size_t B = logits.dim(0), C = logits.dim(1), T = logits.dim(2);
  Tensor soft(logits.shape());
  for (std::size_t i = 0; i < soft.size(); ++i) soft[i] = (logits[i] + noise[i]) / tau;
  if (act == Relaxation::Tanh) {
    for (double& v : soft.data()) v = std::tanh(v);
    return soft;
  }
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      double* col = soft.data().data() + b * C * T + t;
      double mx = col[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, col[c * T]);
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        col[c * T] = std::exp(col[c * T] - mx);
        z += col[c * T];
      }
      for (std::size_t c = 0; c < C; ++c) col[c * T] /= z;
    }
  }
  return soft;
}

/// Gumbel-Max generation with explicit noise (forward hard, backward soft).
/// The hard class is argmax(logits + noise), which equals the argmax of the
/// relaxed sample for any tau > 0 but does not suffer from tanh saturation
/// ties. With all-zero noise the output equals generate_naive_max exactly.
inline Tensor generate_gumbel_max(const Tensor& logits, double tau, const Tensor& noise,
                                  Relaxation act = Relaxation::Tanh) {
  ops::detail::expect_rank(logits, 3, "generate_gumbel_max", "logits");
  if (!(tau > 0.0)) throw ConfigError("generate_gumbel_max: tau must be > 0, got " + std::to_string(tau));
  if (noise.shape() != logits.shape()) {
    throw DimensionError("generate_gumbel_max: noise shape " + shape_str(noise.shape()) + " does not match logits " +
                         shape_str(logits.shape()));
  }
  const std::size_t B = logits.dim(0), C = logits.dim(1), T = logits.dim(2);
  Tensor perturbed(logits.shape());
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] = logits[i] + noise[i];
  Tensor hard(logits.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t c = detail::column_argmax(perturbed.data().data() + b * C * T + t, C, T);
      hard[(b * C + c) * T + t] = 1.0;
    }
  }
  Tape* tape = common_tape({&logits});
  if (!tape) return hard;
  Tensor soft = relax(logits, noise, tau, act);
  return tape->record(
      "generate_gumbel_max", hard, {&logits},
      [=, logits = logits.detached(), hard = hard.detached(), soft = std::move(soft)]() mutable {
        auto dl = logits.grad();
        auto dh = hard.grad();
        if (act == Relaxation::Tanh) {
          for (std::size_t i = 0; i < dl.size(); ++i) dl[i] += dh[i] * (1.0 - soft[i] * soft[i]) / tau;
          return;
        }
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t t = 0; t < T; ++t) {
            const std::size_t base = b * C * T + t;
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += soft[base + c * T] * dh[base + c * T];
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t i = base + c * T;
              dl[i] += soft[i] * (dh[i] - dot) / tau;
            }
          }
        }
      });
}

/// Gumbel-Max generation drawing the noise from `rng`.
inline Tensor generate_gumbel_max(const Tensor& logits, double tau, SeededRng& rng,
                                  Relaxation act = Relaxation::Tanh) {
  ops::detail::expect_rank(logits, 3, "generate_gumbel_max", "logits");
  return generate_gumbel_max(logits, tau, gumbel_sample(rng, logits.shape()), act);
}

/// Learnable [C, E] table for one label.
struct EmbeddingTable {
  std::size_t label = 0;
  Tensor W;

  std::size_t num_classes() const { return W.dim(0); }
  std::size_t dim() const { return W.dim(1); }
};

inline std::size_t default_embedding_dim(std::size_t num_classes) { return (num_classes + 1) / 2; }

/// Table entries drawn uniformly from [-1, 1].
inline EmbeddingTable make_embedding(std::size_t label, std::size_t num_classes, std::size_t dim, SeededRng& rng) {
  if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
  EmbeddingTable table{label, Tensor({num_classes, dim})};
  for (double& v : table.W.data()) v = rng.uniform(-1.0, 1.0);
  return table;
}

inline Tensor embed(const Tensor& onehot, const EmbeddingTable& table, Tape* tape = nullptr) {
  if (onehot.rank() != 3 || onehot.dim(1) != table.num_classes()) {
    throw DimensionError("embed: expected [B," + std::to_string(table.num_classes()) + ",T] one-hot, got " +
                         shape_str(onehot.shape()));
  }
  return ops::embedding_lookup(tape ? tape->watch(table.W) : table.W, onehot);
}

/// Raw channels first, then embeddings in chain order.
inline Tensor merge(const Tensor& x, const std::vector<Tensor>& embeddings) {
  if (embeddings.empty()) return x;
  std::vector<Tensor> parts;
  parts.reserve(embeddings.size() + 1);
  parts.push_back(x);
  parts.insert(parts.end(), embeddings.begin(), embeddings.end());
  return ops::concat_channels(parts);
}

/// Class ids [B, T] as a one-hot tensor [B, C, T].
inline Tensor one_hot(std::span<const int> ids, std::size_t batch, std::size_t classes, std::size_t time) {
  if (ids.size() != batch * time) throw DimensionError("one_hot: id count does not match batch * time");
  Tensor out({batch, classes, time});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < time; ++t) {
      const int c = ids[b * time + t];
      if (c < 0 || static_cast<std::size_t>(c) >= classes) {
        throw LabelError("one_hot: class " + std::to_string(c) + " outside [0," + std::to_string(classes) + ")");
      }
      out[(b * classes + static_cast<std::size_t>(c)) * time + t] = 1.0;
    }
  }
  return out;
}

}  // namespace cohar
