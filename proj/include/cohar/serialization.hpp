#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cohar/conditional_model.hpp"
#include "cohar/synth.hpp"
#include "cohar/train.hpp"

// JSON forms of the configuration types. Readers fill missing keys with the
// type's defaults, so a partial document is a valid override of the defaults,
// and writers emit every key, so written documents round-trip exactly.
namespace cohar {

using Json = nlohmann::ordered_json;

namespace detail {

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

// A misspelled key would otherwise fall back to its default without notice.
inline void expect_object(const Json& j, const char* what, std::initializer_list<std::string_view> keys = {}) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  if (keys.size() == 0) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (auto k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace detail

inline Json to_json(const UNetConfig& c) {
  return Json{{"in_channels", c.in_channels},
              {"out_classes", c.out_classes},
              {"depth", c.depth},
              {"base_channels", c.base_channels},
              {"kernel_size", c.kernel_size}};
}

inline UNetConfig unet_from_json(const Json& j, UNetConfig c = {}) {
  detail::expect_object(j, "unet", {"in_channels", "out_classes", "depth", "base_channels", "kernel_size"});
  detail::read(j, "in_channels", c.in_channels);
  detail::read(j, "out_classes", c.out_classes);
  detail::read(j, "depth", c.depth);
  detail::read(j, "base_channels", c.base_channels);
  detail::read(j, "kernel_size", c.kernel_size);
  return c;
}

inline Json to_json(const LabelSpec& l) {
  Json j{{"name", l.name}, {"num_classes", l.num_classes}, {"null_class", l.null_class}};
  j["classes"] = l.class_names;
  return j;
}

inline LabelSpec label_from_json(const Json& j) {
  detail::expect_object(j, "label", {"name", "num_classes", "null_class", "classes"});
  LabelSpec l;
  detail::read(j, "name", l.name);
  detail::read(j, "num_classes", l.num_classes);
  detail::read(j, "null_class", l.null_class);
  detail::read(j, "classes", l.class_names);
  return l;
}

inline Json to_json(const GeneratorMode& g) {
  return Json{{"mode", to_string(g.kind)},
              {"relaxation", to_string(g.relaxation)},
              {"schedule",
               Json{{"tau0", g.schedule.tau0}, {"decay_rate", g.schedule.decay_rate}, {"tau_min", g.schedule.tau_min}}}};
}

inline GeneratorMode generator_from_json(const Json& j, GeneratorMode g = {}) {
  detail::expect_object(j, "generator", {"mode", "relaxation", "schedule"});
  std::string mode = to_string(g.kind), relaxation = to_string(g.relaxation);
  detail::read(j, "mode", mode);
  detail::read(j, "relaxation", relaxation);
  if (mode == "naive_max") {
    g.kind = GeneratorKind::NaiveMax;
  } else if (mode == "gumbel_max") {
    g.kind = GeneratorKind::GumbelMax;
  } else {
    throw ConfigError("generator mode must be naive_max or gumbel_max, got '" + mode + "'");
  }
  if (relaxation == "tanh") {
    g.relaxation = Relaxation::Tanh;
  } else if (relaxation == "softmax") {
    g.relaxation = Relaxation::Softmax;
  } else {
    throw ConfigError("generator relaxation must be tanh or softmax, got '" + relaxation + "'");
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    detail::expect_object(s, "schedule", {"tau0", "decay_rate", "tau_min"});
    detail::read(s, "tau0", g.schedule.tau0);
    detail::read(s, "decay_rate", g.schedule.decay_rate);
    detail::read(s, "tau_min", g.schedule.tau_min);
  }
  g.schedule.validate();
  return g;
}

inline Json to_json(const ChainConfig& c) {
  Json j;
  j["labels"] = Json::array();
  for (const auto& l : c.labels) j["labels"].push_back(to_json(l));
  j["unet"] = to_json(c.unet);
  j["stage_unet"] = Json::object();
  for (const auto& [stage, u] : c.stage_unet) j["stage_unet"][std::to_string(stage)] = to_json(u);
  j["embed_dims"] = c.embed_dims;
  j["generator"] = to_json(c.generator);
  j["teacher_forcing"] = c.teacher_forcing;
  j["stochastic_inference"] = c.stochastic_inference;
  return j;
}

inline ChainConfig chain_from_json(const Json& j) {
  detail::expect_object(j, "chain", {"labels", "unet", "stage_unet", "embed_dims", "generator", "teacher_forcing", "stochastic_inference"});
  ChainConfig c;
  if (j.contains("labels")) {
    for (const auto& lj : j.at("labels")) c.labels.push_back(label_from_json(lj));
  }
  if (j.contains("unet")) c.unet = unet_from_json(j.at("unet"));
  if (j.contains("stage_unet")) {
    for (const auto& [key, uj] : j.at("stage_unet").items()) c.stage_unet[std::stoul(key)] = unet_from_json(uj, c.unet);
  }
  detail::read(j, "embed_dims", c.embed_dims);
  if (j.contains("generator")) c.generator = generator_from_json(j.at("generator"));
  detail::read(j, "teacher_forcing", c.teacher_forcing);
  detail::read(j, "stochastic_inference", c.stochastic_inference);
  return c;
}

inline Json to_json(const SynthConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["num_sequences"] = c.num_sequences;
  j["duration_s"] = c.duration_s;
  j["sample_rate_hz"] = c.sample_rate_hz;
  j["walk_amplitude"] = c.walk_amplitude;
  j["walk_frequency_hz"] = c.walk_frequency_hz;
  j["phase_jitter"] = c.phase_jitter;
  j["harmonic_ratio"] = c.harmonic_ratio;
  j["segment_min_s"] = c.segment_min_s;
  j["segment_max_s"] = c.segment_max_s;
  j["walk_weights"] = c.walk_weights;
  j["harmonic_weights"] = c.harmonic_weights;
  j["gesture_amplitude"] = c.gesture_amplitude;
  j["gestures_per_sequence"] = c.gestures_per_sequence;
  j["min_gap_s"] = c.min_gap_s;
  j["noise_std"] = c.noise_std;
  j["gestures"] = Json::array();
  for (const auto& g : c.gestures) {
    j["gestures"].push_back(Json{{"name", g.name},
                                 {"min_duration_s", g.min_duration_s},
                                 {"max_duration_s", g.max_duration_s},
                                 {"shape", g.shape == PulseShape::HalfSine ? "half_sine" : "full_sine"},
                                 {"weights", g.weights}});
  }
  return j;
}

/// Accepts `dominance_ratio` as an alternative to `gesture_amplitude`
/// (gesture_amplitude = walk_amplitude / dominance_ratio).
inline SynthConfig synth_from_json(const Json& j) {
  detail::expect_object(j, "synth",
                        {"seed", "num_sequences", "duration_s", "sample_rate_hz", "walk_amplitude", "walk_frequency_hz",
                         "phase_jitter", "harmonic_ratio", "segment_min_s", "segment_max_s", "walk_weights",
                         "harmonic_weights", "gesture_amplitude", "dominance_ratio", "gestures_per_sequence", "min_gap_s",
                         "noise_std", "gestures"});
  SynthConfig c;
  detail::read(j, "seed", c.seed);
  detail::read(j, "num_sequences", c.num_sequences);
  detail::read(j, "duration_s", c.duration_s);
  detail::read(j, "sample_rate_hz", c.sample_rate_hz);
  detail::read(j, "walk_amplitude", c.walk_amplitude);
  detail::read(j, "walk_frequency_hz", c.walk_frequency_hz);
  detail::read(j, "phase_jitter", c.phase_jitter);
  detail::read(j, "harmonic_ratio", c.harmonic_ratio);
  detail::read(j, "segment_min_s", c.segment_min_s);
  detail::read(j, "segment_max_s", c.segment_max_s);
  detail::read(j, "walk_weights", c.walk_weights);
  detail::read(j, "harmonic_weights", c.harmonic_weights);
  detail::read(j, "gesture_amplitude", c.gesture_amplitude);
  if (j.contains("dominance_ratio")) {
    if (j.contains("gesture_amplitude")) throw ConfigError("synth: give gesture_amplitude or dominance_ratio, not both");
    double ratio = 0.0;
    detail::read(j, "dominance_ratio", ratio);
    if (!(ratio > 0.0)) throw ConfigError("synth: dominance_ratio must be > 0");
    c.gesture_amplitude = c.walk_amplitude / ratio;
  }
  detail::read(j, "gestures_per_sequence", c.gestures_per_sequence);
  detail::read(j, "min_gap_s", c.min_gap_s);
  detail::read(j, "noise_std", c.noise_std);
  if (j.contains("gestures")) {
    c.gestures.clear();
    for (const auto& gj : j.at("gestures")) {
      GestureClass g;
      detail::expect_object(gj, "gesture", {"name", "min_duration_s", "max_duration_s", "shape", "weights"});
      detail::read(gj, "name", g.name);
      detail::read(gj, "min_duration_s", g.min_duration_s);
      detail::read(gj, "max_duration_s", g.max_duration_s);
      std::string shape = "half_sine";
      detail::read(gj, "shape", shape);
      if (shape != "half_sine" && shape != "full_sine") throw ConfigError("synth: gesture shape must be half_sine or full_sine");
      g.shape = shape == "half_sine" ? PulseShape::HalfSine : PulseShape::FullSine;
      detail::read(gj, "weights", g.weights);
      c.gestures.push_back(std::move(g));
    }
  }
  c.validate();
  return c;
}

inline Json to_json(const TrainOptions& o) {
  return Json{{"epochs", o.epochs},
              {"batch_size", o.batch_size},
              {"lr", o.adam.lr},
              {"beta1", o.adam.beta1},
              {"beta2", o.adam.beta2},
              {"eps", o.adam.eps},
              {"window_length", o.window.length},
              {"window_stride", o.window.stride},
              {"checkpoint_every", o.checkpoint_every}};
}

/// The seed is not part of the JSON form; it comes from the experiment's root seed.
inline TrainOptions train_from_json(const Json& j) {
  detail::expect_object(j, "train", {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "window_length", "window_stride",
                                    "checkpoint_every"});
  TrainOptions o;
  detail::read(j, "epochs", o.epochs);
  detail::read(j, "batch_size", o.batch_size);
  detail::read(j, "lr", o.adam.lr);
  detail::read(j, "beta1", o.adam.beta1);
  detail::read(j, "beta2", o.adam.beta2);
  detail::read(j, "eps", o.adam.eps);
  detail::read(j, "window_length", o.window.length);
  detail::read(j, "window_stride", o.window.stride);
  detail::read(j, "checkpoint_every", o.checkpoint_every);
  o.validate();
  return o;
}

}  // namespace cohar
