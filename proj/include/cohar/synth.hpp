#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "cohar/data.hpp"
#include "cohar/rng.hpp"

namespace cohar {

enum class PulseShape { HalfSine, FullSine };

/// One gesture class: a smooth pulse over its duration, loaded onto the
/// channels by `weights` (one entry per channel).
struct GestureClass {
  std::string name;
  double min_duration_s = 1.5;
  double max_duration_s = 1.7;
  PulseShape shape = PulseShape::HalfSine;
  std::vector<double> weights;
};

/// Generator for a two-label recording set: label 0 is walk/sit (a strong
/// periodic oscillation while walking), label 1 is a head gesture (weak
/// pulses on top). Channels follow the accelerometer xyz, gyroscope xyz
/// layout of a head-worn IMU.
struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t num_sequences = 20;
  double duration_s = 60.0;
  double sample_rate_hz = 12.5;

  // Walk/sit condition.
  double walk_amplitude = 2.0;
  double walk_frequency_hz = 2.0;
  double phase_jitter = 0.05;     // std of the per-sample phase increment noise, radians
  double harmonic_ratio = 0.5;    // amplitude of the 2f component relative to the fundamental
  double segment_min_s = 8.0;
  double segment_max_s = 20.0;
  std::vector<double> walk_weights = {0.6, 0.3, 1.0, 0.8, 0.5, 0.4};
  std::vector<double> harmonic_weights = {0.0, 0.0, 1.0, 0.6, 0.0, 0.0};

  // Gestures.
  double gesture_amplitude = 0.5;  // walk_amplitude / gesture_amplitude is the dominance ratio
  std::size_t gestures_per_sequence = 10;
  double min_gap_s = 1.0;
  std::vector<GestureClass> gestures = default_gestures();

  double noise_std = 0.1;

  std::size_t num_channels() const { return walk_weights.size(); }
  double dominance_ratio() const { return walk_amplitude / gesture_amplitude; }

  void validate() const {
    if (num_sequences < 1) throw ConfigError("synth: num_sequences must be >= 1");
    if (!(sample_rate_hz > 0.0)) throw ConfigError("synth: sample_rate_hz must be > 0");
    if (!(duration_s > 0.0)) throw ConfigError("synth: duration_s must be > 0");
    if (!(walk_amplitude >= 0.0)) throw ConfigError("synth: walk_amplitude must be >= 0");
    if (!(gesture_amplitude >= 0.0)) throw ConfigError("synth: gesture_amplitude must be >= 0");
    if (!(noise_std >= 0.0)) throw ConfigError("synth: noise_std must be >= 0");
    if (!(segment_min_s > 0.0 && segment_max_s >= segment_min_s)) throw ConfigError("synth: invalid walk segment range");
    if (num_channels() == 0) throw ConfigError("synth: walk_weights must cover every channel");
    if (harmonic_weights.size() != num_channels()) throw ConfigError("synth: harmonic_weights must cover every channel");
    if (gestures.empty()) throw ConfigError("synth: at least one gesture class is required");
    for (const auto& g : gestures) {
      if (!(g.min_duration_s > 0.0 && g.max_duration_s >= g.min_duration_s)) {
        throw ConfigError("synth: gesture '" + g.name + "' has an invalid duration range");
      }
      if (g.weights.size() != num_channels()) {
        throw ConfigError("synth: gesture '" + g.name + "' template must span all " +
                          std::to_string(num_channels()) + " channels");
      }
    }
    const std::size_t T = length();
    std::size_t worst = gap_samples() * (gestures_per_sequence + 1);
    std::size_t longest = 0;
    for (const auto& g : gestures) longest = std::max(longest, duration_samples(g.max_duration_s));
    worst += longest * gestures_per_sequence;
    if (worst > T) {
      throw ConfigError("synth: " + std::to_string(gestures_per_sequence) + " gestures of up to " +
                        std::to_string(longest) + " samples do not fit a " + std::to_string(T) + "-sample sequence");
    }
  }

  std::size_t length() const { return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz)); }
  std::size_t gap_samples() const { return static_cast<std::size_t>(std::llround(min_gap_s * sample_rate_hz)); }
  std::size_t duration_samples(double seconds) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(seconds * sample_rate_hz)));
  }

  // Duration ranges follow the recorded head-gesture summary: up/down/left
  // 1.5-1.8 s, right and leans 1.5-1.7 s, rolls 1.9-2.1 s.
  static std::vector<GestureClass> default_gestures() {
    //            ax    ay    az    gx    gy    gz
    return {
        {"head_up", 1.5, 1.8, PulseShape::HalfSine, {0.3, 0.0, 0.0, 0.0, 1.0, 0.0}},
        {"head_down", 1.5, 1.8, PulseShape::HalfSine, {-0.3, 0.0, 0.0, 0.0, -1.0, 0.0}},
        {"head_left", 1.5, 1.8, PulseShape::HalfSine, {0.0, 0.3, 0.0, 0.0, 0.0, 1.0}},
        {"head_right", 1.5, 1.7, PulseShape::HalfSine, {0.0, -0.3, 0.0, 0.0, 0.0, -1.0}},
        {"left_lean", 1.5, 1.7, PulseShape::HalfSine, {0.0, 0.4, 0.0, 1.0, 0.0, 0.0}},
        {"right_lean", 1.5, 1.7, PulseShape::HalfSine, {0.0, -0.4, 0.0, -1.0, 0.0, 0.0}},
        {"left_roll", 1.9, 2.1, PulseShape::FullSine, {0.0, 0.3, 0.0, 1.0, 0.0, 0.6}},
        {"right_roll", 1.9, 2.1, PulseShape::FullSine, {0.0, -0.3, 0.0, -1.0, 0.0, -0.6}},
    };
  }
};

inline double pulse(PulseShape shape, double u) {
  return shape == PulseShape::HalfSine ? std::sin(std::numbers::pi * u) : std::sin(2.0 * std::numbers::pi * u);
}

/// Walk/sit segments, gesture events and the summed signal for every
/// sequence. Label 0 is "walk" (0 sit, 1 walk), label 1 is "gesture"
/// (0 none, 1..n the configured classes). Deterministic given config.seed.
inline Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t K = cfg.num_channels();
  const std::size_t T = cfg.length();
  const double fs = cfg.sample_rate_hz;

  Dataset d;
  static const char* kImuNames[] = {"acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z"};
  for (std::size_t k = 0; k < K; ++k) d.channel_names.push_back(K == 6 ? kImuNames[k] : "ch_" + std::to_string(k));
  d.sample_rate_hz = fs;
  d.labels.push_back({"walk", 2, 0, {"sit", "walk"}});
  LabelSpec gesture{"gesture", cfg.gestures.size() + 1, 0, {"none"}};
  for (const auto& g : cfg.gestures) gesture.class_names.push_back(g.name);
  d.labels.push_back(gesture);

  const SeededRng root(cfg.seed);
  for (std::size_t si = 0; si < cfg.num_sequences; ++si) {
    SeededRng rng = root.stream("synth").stream("sequence." + std::to_string(si));
    SampleSequence s;
    s.id = "seq" + std::to_string(si);
    s.channels = K;
    s.length = T;
    s.X.assign(K * T, 0.0);
    s.Y.assign(2 * T, 0);

    // Walk/sit segmentation covering [0, T).
    bool walking = rng.below(2) == 1;
    std::size_t t0 = 0;
    while (t0 < T) {
      const auto len = cfg.duration_samples(rng.uniform(cfg.segment_min_s, cfg.segment_max_s));
      const std::size_t t1 = std::min(T, t0 + len);
      double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double step = 2.0 * std::numbers::pi * cfg.walk_frequency_hz / fs;
      for (std::size_t t = t0; t < t1; ++t) {
        const double jitter = rng.normal() * cfg.phase_jitter;
        if (!walking) continue;
        s.Y[t] = 1;
        const double fundamental = cfg.walk_amplitude * std::sin(phase);
        const double harmonic = cfg.walk_amplitude * cfg.harmonic_ratio * std::sin(2.0 * phase);
        for (std::size_t k = 0; k < K; ++k) {
          s.X[k * T + t] += cfg.walk_weights[k] * fundamental + cfg.harmonic_weights[k] * harmonic;
        }
        phase += step + jitter;
      }
      walking = !walking;
      t0 = t1;
    }

    // Non-overlapping gesture events separated by at least min_gap.
    const std::size_t n = cfg.gestures_per_sequence;
    std::vector<std::size_t> cls(n), len(n);
    std::size_t busy = cfg.gap_samples() * (n + 1);
    for (std::size_t i = 0; i < n; ++i) {
      cls[i] = rng.below(cfg.gestures.size());
      const auto& g = cfg.gestures[cls[i]];
      len[i] = cfg.duration_samples(rng.uniform(g.min_duration_s, g.max_duration_s));
      busy += len[i];
    }
    const std::size_t slack = T - busy;
    std::vector<double> share(n + 1);
    double total = 0.0;
    for (auto& w : share) total += (w = -std::log(rng.uniform_open()));
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      pos += cfg.gap_samples() + static_cast<std::size_t>(std::floor(static_cast<double>(slack) * share[i] / total));
      const auto& g = cfg.gestures[cls[i]];
      for (std::size_t j = 0; j < len[i]; ++j) {
        const std::size_t t = pos + j;
        const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(len[i]);
        const double v = cfg.gesture_amplitude * pulse(g.shape, u);
        for (std::size_t k = 0; k < K; ++k) s.X[k * T + t] += g.weights[k] * v;
        s.Y[T + t] = static_cast<int>(cls[i]) + 1;
      }
      pos += len[i];
    }

    for (double& v : s.X) v += cfg.noise_std * rng.normal();
    d.sequences.push_back(std::move(s));
  }
  d.validate();
  return d;
}

}  // namespace cohar
