#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cohar/conditioning.hpp"
#include "cohar/ops.hpp"
#include "cohar/unet1d.hpp"

namespace cohar {

struct LabelSpec {
  std::string name;
  std::size_t num_classes = 2;
  std::size_t null_class = 0;
  std::vector<std::string> class_names;  // optional; empty or num_classes entries

  void validate() const {
    if (name.empty()) throw ConfigError("label name must not be empty");
    if (num_classes < 2) throw ConfigError("label '" + name + "': num_classes must be >= 2");
    if (null_class >= num_classes) throw ConfigError("label '" + name + "': null_class out of range");
    if (!class_names.empty() && class_names.size() != num_classes) {
      throw ConfigError("label '" + name + "': class_names must list every class");
    }
  }

  std::string class_name(std::size_t c) const {
    return class_names.empty() ? "class_" + std::to_string(c) : class_names.at(c);
  }

  bool operator==(const LabelSpec&) const = default;
};

/// Labels in conditioning order: stage 0 sees only the raw channels, stage i
/// additionally sees the embedded generated classes of stages 0..i-1.
struct ChainConfig {
  std::vector<LabelSpec> labels;
  UNetConfig unet;                                // shared by all stages; channel counts are set per stage
  std::map<std::size_t, UNetConfig> stage_unet;   // optional per-stage overrides
  std::vector<std::size_t> embed_dims;            // per conditioning stage; empty means ceil(C/2)
  GeneratorMode generator;
  bool teacher_forcing = false;
  bool stochastic_inference = false;

  void validate() const {
    if (labels.empty()) throw ConfigError("chain: at least one label is required");
    for (const auto& l : labels) l.validate();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      for (std::size_t j = i + 1; j < labels.size(); ++j) {
        if (labels[i].name == labels[j].name) throw ConfigError("chain: duplicate label '" + labels[i].name + "'");
      }
    }
    if (!embed_dims.empty() && embed_dims.size() + 1 != labels.size()) {
      throw ConfigError("chain: embed_dims must have one entry per label except the last");
    }
    for (auto e : embed_dims) {
      if (e < 1) throw ConfigError("chain: embedding dimensions must be >= 1");
    }
    generator.schedule.validate();
    unet.validate();
  }

  std::size_t embed_dim(std::size_t stage) const {
    return embed_dims.empty() ? default_embedding_dim(labels.at(stage).num_classes) : embed_dims.at(stage);
  }

  UNetConfig stage_config(std::size_t stage, std::size_t in_channels) const {
    auto it = stage_unet.find(stage);
    UNetConfig c = it != stage_unet.end() ? it->second : unet;
    c.in_channels = in_channels;
    c.out_classes = labels.at(stage).num_classes;
    return c;
  }
};

/// Per-label class ids, each row-major [B, T], in the model's label order.
using LabelBatch = std::vector<std::vector<int>>;

enum class ForwardMode { Train, Infer };

struct ForwardOptions {
  ForwardMode mode = ForwardMode::Infer;
  double tau = 1.0;
  SeededRng* rng = nullptr;             // Gumbel noise; required for stochastic generation
  Tape* tape = nullptr;                 // parameters are watched here when set
  const LabelBatch* targets = nullptr;  // ground truth, used only with teacher forcing
};

namespace detail {

template <typename F>
auto at_stage(std::size_t stage, F&& f) {
  const std::string where = "stage " + std::to_string(stage) + ": ";
  try {
    return f();
  } catch (const GeometryError& e) {
    throw GeometryError(where + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(where + e.what());
  }
}

}  // namespace detail

/// Chain of UNet stages; every stage but the last owns an embedding table.
class ConditionalUNet {
 public:
  struct Stage {
    UNet1D unet;
    std::optional<EmbeddingTable> embedding;
  };

  ConditionalUNet() = default;

  ConditionalUNet(ChainConfig config, std::size_t in_channels, SeededRng& rng)
      : config_(std::move(config)), in_channels_(in_channels) {
    config_.validate();
    if (in_channels_ < 1) throw ConfigError("chain: at least one input channel is required");
    std::size_t channels = in_channels_;
    for (std::size_t i = 0; i < config_.labels.size(); ++i) {
      Stage s{UNet1D(config_.stage_config(i, channels), rng), std::nullopt};
      if (i + 1 < config_.labels.size()) {
        s.embedding = make_embedding(i, config_.labels[i].num_classes, config_.embed_dim(i), rng);
        channels += s.embedding->dim();
      }
      stages_.push_back(std::move(s));
    }
  }

  const ChainConfig& config() const noexcept { return config_; }
  const std::vector<LabelSpec>& labels() const noexcept { return config_.labels; }
  const std::vector<Stage>& stages() const noexcept { return stages_; }
  std::vector<Stage>& stages() noexcept { return stages_; }
  std::size_t in_channels() const noexcept { return in_channels_; }

  std::size_t time_multiple() const {
    std::size_t m = 1;
    for (const auto& s : stages_) m = std::max(m, s.unet.config().time_multiple());
    return m;
  }

  /// Logits [B, C_h, T] for every label in chain order.
  std::vector<Tensor> forward(const Tensor& x, const ForwardOptions& opt = {}) const {
    const bool train = opt.mode == ForwardMode::Train;
    if (train && config_.teacher_forcing && opt.targets == nullptr) {
      throw ContractError("chain: teacher forcing needs ground-truth targets");
    }
    std::vector<Tensor> logits;
    std::vector<Tensor> embeddings;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const auto& stage = stages_[i];
      Tensor out = detail::at_stage(i, [&] { return stage.unet.forward(merge(x, embeddings), opt.tape); });
      logits.push_back(out);
      if (!stage.embedding) continue;
      Tensor hard = detail::at_stage(i, [&] { return generate(i, out, opt); });
      embeddings.push_back(embed(hard, *stage.embedding, opt.tape));
    }
    return logits;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const std::string prefix = "stage." + std::to_string(i) + ".";
      for (auto& [name, t] : stages_[i].unet.named_parameters()) out.emplace_back(prefix + "unet." + name, t);
      if (stages_[i].embedding) out.emplace_back(prefix + "embed.W", stages_[i].embedding->W);
    }
    return out;
  }

 private:
  Tensor generate(std::size_t stage, const Tensor& logits, const ForwardOptions& opt) const {
    const bool train = opt.mode == ForwardMode::Train;
    const auto& gen = config_.generator;
    if (train && config_.teacher_forcing) {
      const auto& ids = opt.targets->at(stage);
      return one_hot(ids, logits.dim(0), logits.dim(1), logits.dim(2));
    }
    const bool stochastic = gen.kind == GeneratorKind::GumbelMax && (train || config_.stochastic_inference);
    if (stochastic) {
      if (opt.rng == nullptr) throw ContractError("chain: Gumbel-Max generation needs an rng");
      return generate_gumbel_max(logits, opt.tau, *opt.rng, gen.relaxation);
    }
    return generate_naive_max(logits);
  }

  ChainConfig config_;
  std::size_t in_channels_ = 0;
  std::vector<Stage> stages_;
};

/// Independent baseline: one UNet whose head emits the logits of every label
/// side by side; labels are split off by channel range.
class MultiHeadUNet {
 public:
  MultiHeadUNet() = default;

  MultiHeadUNet(std::vector<LabelSpec> labels, UNetConfig unet, std::size_t in_channels, SeededRng& rng)
      : labels_(std::move(labels)) {
    if (labels_.empty()) throw ConfigError("baseline: at least one label is required");
    for (const auto& l : labels_) l.validate();
    unet.in_channels = in_channels;
    unet.out_classes = 0;
    for (const auto& l : labels_) unet.out_classes += l.num_classes;
    trunk_ = UNet1D(unet, rng);
  }

  const std::vector<LabelSpec>& labels() const noexcept { return labels_; }
  const UNet1D& trunk() const noexcept { return trunk_; }
  std::size_t in_channels() const { return trunk_.config().in_channels; }
  std::size_t time_multiple() const { return trunk_.config().time_multiple(); }

  /// Channel range [begin, end) of label h in the head output.
  std::pair<std::size_t, std::size_t> head_range(std::size_t h) const {
    std::size_t begin = 0;
    for (std::size_t i = 0; i < h; ++i) begin += labels_[i].num_classes;
    return {begin, begin + labels_.at(h).num_classes};
  }

  std::vector<Tensor> forward(const Tensor& x, const ForwardOptions& opt = {}) const {
    Tensor all = trunk_.forward(x, opt.tape);
    if (labels_.size() == 1) return {all};
    std::vector<Tensor> out;
    for (std::size_t h = 0; h < labels_.size(); ++h) {
      auto [b, e] = head_range(h);
      out.push_back(ops::slice_channels(all, b, e));
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, t] : trunk_.named_parameters()) out.emplace_back("trunk." + name, t);
    return out;
  }

 private:
  std::vector<LabelSpec> labels_;
  UNet1D trunk_;
};

inline MultiHeadUNet build_baseline(const std::vector<LabelSpec>& labels, const UNetConfig& unet,
                                    std::size_t in_channels, SeededRng& rng) {
  return MultiHeadUNet(labels, unet, in_channels, rng);
}

/// Either model kind; both map [B, K, T] inputs to one logit tensor per label.
using DenseModel = std::variant<ConditionalUNet, MultiHeadUNet>;

inline std::vector<Tensor> forward_chain(const DenseModel& model, const Tensor& x, const ForwardOptions& opt = {}) {
  return std::visit([&](const auto& m) { return m.forward(x, opt); }, model);
}

inline const std::vector<LabelSpec>& model_labels(const DenseModel& model) {
  return std::visit([](const auto& m) -> const std::vector<LabelSpec>& { return m.labels(); }, model);
}

inline std::size_t model_in_channels(const DenseModel& model) {
  return std::visit([](const auto& m) { return m.in_channels(); }, model);
}

inline std::size_t model_time_multiple(const DenseModel& model) {
  return std::visit([](const auto& m) { return m.time_multiple(); }, model);
}

inline std::vector<std::pair<std::string, Tensor>> model_named_parameters(const DenseModel& model) {
  return std::visit([](const auto& m) { return m.named_parameters(); }, model);
}

inline std::vector<Tensor> model_parameters(const DenseModel& model) {
  std::vector<Tensor> out;
  for (auto& [name, t] : model_named_parameters(model)) out.push_back(t);
  return out;
}

inline std::size_t model_parameter_count(const DenseModel& model) {
  std::size_t n = 0;
  for (const auto& t : model_parameters(model)) n += t.size();
  return n;
}

/// Sum over labels of the mean dense cross-entropy of each label.
inline Tensor chain_loss(const std::vector<Tensor>& logits, const LabelBatch& targets) {
  if (logits.empty() || logits.size() != targets.size()) {
    throw ContractError("chain_loss: " + std::to_string(logits.size()) + " logit tensors for " +
                        std::to_string(targets.size()) + " target rows");
  }
  Tensor total = ops::cross_entropy_dense(logits[0], targets[0]);
  for (std::size_t h = 1; h < logits.size(); ++h) total = ops::add(total, ops::cross_entropy_dense(logits[h], targets[h]));
  return total;
}

/// Per-label argmax of inference logits, [H][B*T] with ties to the lowest class.
inline LabelBatch argmax_labels(const std::vector<Tensor>& logits) {
  LabelBatch out;
  for (const auto& l : logits) {
    const std::size_t B = l.dim(0), C = l.dim(1), T = l.dim(2);
    std::vector<int> ids(B * T);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        ids[b * T + t] = static_cast<int>(detail::column_argmax(l.data().data() + b * C * T + t, C, T));
      }
    }
    out.push_back(std::move(ids));
  }
  return out;
}

inline LabelBatch predict_dense(const DenseModel& model, const Tensor& x, SeededRng* rng = nullptr) {
  ForwardOptions opt;
  opt.rng = rng;
  return argmax_labels(forward_chain(model, x, opt));
}

}  // namespace cohar
