#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "cohar/data.hpp"
#include "cohar/synth.hpp"

using namespace cohar;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cohar_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

SynthConfig small_synth(std::size_t n = 4) {
  SynthConfig sc;
  sc.num_sequences = n;
  sc.duration_s = 30.0;
  sc.gestures_per_sequence = 5;
  return sc;
}

struct Event {
  std::size_t start, length;
  int cls;
};

std::vector<Event> gesture_events(const SampleSequence& s) {
  std::vector<Event> out;
  for (std::size_t t = 0; t < s.length;) {
    const int c = s.y(1, t);
    if (c == 0) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e < s.length && s.y(1, e) == c) ++e;
    out.push_back({t, e - t, c});
    t = e;
  }
  return out;
}

Dataset hand_dataset() {
  Dataset d;
  d.channel_names = {"ch_0", "ch_1"};
  d.labels = {LabelSpec{"label_0", 3, 0, {}}};
  for (int i = 0; i < 10; ++i) {
    SampleSequence s{"s" + std::to_string(i), 2, 5, std::vector<double>(10, static_cast<double>(i)), std::vector<int>(5, i % 3)};
    d.sequences.push_back(s);
  }
  return d;
}

}  // namespace

TEST(Csv, RoundTripIsByteExact) {
  const fs::path dir = fresh_dir("roundtrip");
  const Dataset d = generate_synthetic(small_synth());
  write_csv(d, dir / "data.csv");
  write_metadata(d, dir / "meta.json");
  const Dataset back = load_csv(dir / "data.csv");
  ASSERT_EQ(back.sequences.size(), d.sequences.size());
  for (std::size_t i = 0; i < d.sequences.size(); ++i) {
    EXPECT_EQ(back.sequences[i].X, d.sequences[i].X);
    EXPECT_EQ(back.sequences[i].Y, d.sequences[i].Y);
    EXPECT_EQ(back.sequences[i].id, d.sequences[i].id);
  }
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.channel_names, d.channel_names);
  EXPECT_EQ(back.sample_rate_hz, d.sample_rate_hz);
  write_csv(back, dir / "again.csv");
  EXPECT_EQ(slurp(dir / "data.csv"), slurp(dir / "again.csv"));
  fs::remove_all(dir);
}

TEST(Csv, LabelBeyondDeclaredClassesNamesLine) {
  const fs::path dir = fresh_dir("badlabel");
  Dataset d = hand_dataset();
  d.sequences.resize(1);
  write_csv(d, dir / "data.csv");
  write_metadata(d, dir / "meta.json");
  std::string text = slurp(dir / "data.csv");
  // third data row is line 4; its label becomes 3 with only 3 declared classes
  const std::string row = "s0,2,0,0,0\n";
  const auto pos = text.find(row);
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, row.size(), "s0,2,0,0,3\n");
  spit(dir / "data.csv", text);
  try {
    load_csv(dir / "data.csv");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Csv, MalformedCells) {
  const fs::path dir = fresh_dir("malformed");
  spit(dir / "a.csv", "seq_id,t,ch_0,label_0\ns,0,1.5,0\ns,1,abc,0\n");
  try {
    load_csv(dir / "a.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  spit(dir / "a.csv", "seq_id,t,ch_0\ns,0,1.5\n");
  EXPECT_THROW(load_csv(dir / "a.csv"), ParseError);
  spit(dir / "a.csv", "seq_id,t,ch_0,label_0\ns,0,1.5\n");
  EXPECT_THROW(load_csv(dir / "a.csv"), ParseError);
  spit(dir / "a.csv", "seq_id,t,ch_0,label_0\ns,0,1.5,-1\n");
  EXPECT_THROW(load_csv(dir / "a.csv"), ParseError);
  spit(dir / "a.csv", "seq_id,t,ch_0,label_0\ns,1,1.5,0\n");
  EXPECT_THROW(load_csv(dir / "a.csv"), ParseError);
  EXPECT_THROW(load_csv(dir / "missing.csv"), DataError);
  fs::remove_all(dir);
}

TEST(Csv, SchemaInferredFromHeader) {
  const fs::path dir = fresh_dir("infer");
  std::string text = "seq_id,t,ch_0,ch_1,ch_2,ch_3,ch_4,ch_5,label_0,label_1\n";
  for (int t = 0; t < 3; ++t) text += "a," + std::to_string(t) + ",1,2,3,4,5,6,1," + std::to_string(t) + "\n";
  text += "b,0,0.5,0,0,0,0,0,0,4\n";
  spit(dir / "data.csv", text);
  const Dataset d = load_csv(dir / "data.csv");
  EXPECT_EQ(d.num_channels(), 6u);
  EXPECT_EQ(d.num_labels(), 2u);
  EXPECT_EQ(d.sequences.size(), 2u);
  EXPECT_EQ(d.sequences[0].length, 3u);
  EXPECT_EQ(d.labels[1].num_classes, 5u);
  EXPECT_EQ(d.sequences[1].x(0, 0), 0.5);
  fs::remove_all(dir);
}

TEST(Synth, GestureOfOnePointSixSecondsIsTwentySamples) {
  EXPECT_EQ(SynthConfig{}.duration_samples(1.6), 20u);
  EXPECT_EQ(SynthConfig{}.sample_rate_hz, 12.5);
}

TEST(Synth, DurationRangesPerClass) {
  SynthConfig sc = small_synth(10);
  const Dataset d = generate_synthetic(sc);
  std::size_t rolls = 0, leans = 0;
  for (const auto& s : d.sequences) {
    for (const auto& e : gesture_events(s)) {
      const auto& name = d.labels[1].class_names.at(static_cast<std::size_t>(e.cls));
      const double seconds = static_cast<double>(e.length) / sc.sample_rate_hz;
      if (name.ends_with("roll")) {
        ++rolls;
        EXPECT_GE(seconds, 1.9 - 0.5 / sc.sample_rate_hz);
        EXPECT_LE(seconds, 2.1 + 0.5 / sc.sample_rate_hz);
      } else if (name.ends_with("lean")) {
        ++leans;
        EXPECT_GE(seconds, 1.5 - 0.5 / sc.sample_rate_hz);
        EXPECT_LE(seconds, 1.7 + 0.5 / sc.sample_rate_hz);
      }
    }
  }
  EXPECT_GT(rolls, 0u);
  EXPECT_GT(leans, 0u);
}

TEST(Synth, ZeroGestureAmplitudeOnlyChangesGestureSpans) {
  SynthConfig with = small_synth();
  SynthConfig without = with;
  without.gesture_amplitude = 0.0;
  const Dataset a = generate_synthetic(with), b = generate_synthetic(without);
  for (std::size_t i = 0; i < a.sequences.size(); ++i) {
    const auto& sa = a.sequences[i];
    const auto& sb = b.sequences[i];
    EXPECT_EQ(sa.Y, sb.Y);
    std::size_t differing = 0;
    for (std::size_t k = 0; k < sa.channels; ++k)
      for (std::size_t t = 0; t < sa.length; ++t) {
        const bool inside = sa.y(1, t) != 0;
        if (!inside) {
          EXPECT_EQ(sa.x(k, t), sb.x(k, t));
        } else if (sa.x(k, t) != sb.x(k, t)) {
          ++differing;
        }
      }
    EXPECT_GT(differing, 0u);
    EXPECT_EQ(gesture_events(sb).size(), with.gestures_per_sequence);
  }
}

TEST(Synth, DeterministicAndSeedSensitive) {
  SynthConfig sc = small_synth(2);
  const Dataset a = generate_synthetic(sc), b = generate_synthetic(sc);
  EXPECT_EQ(a.sequences[1].X, b.sequences[1].X);
  sc.seed += 1;
  EXPECT_NE(generate_synthetic(sc).sequences[1].X, a.sequences[1].X);
}

TEST(Synth, DenseLabelsAndNonOverlappingEvents) {
  SynthConfig sc = small_synth(6);
  const Dataset d = generate_synthetic(sc);
  for (const auto& s : d.sequences) {
    ASSERT_EQ(s.Y.size(), 2 * s.length);
    const auto events = gesture_events(s);
    EXPECT_EQ(events.size(), sc.gestures_per_sequence);
    for (std::size_t i = 1; i < events.size(); ++i) {
      EXPECT_GE(events[i].start, events[i - 1].start + events[i - 1].length + sc.gap_samples());
    }
    for (std::size_t t = 0; t < s.length; ++t) EXPECT_TRUE(s.y(0, t) == 0 || s.y(0, t) == 1);
  }
}

TEST(Synth, GestureSpansCarryMoreEnergyOnDominantChannel) {
  SynthConfig sc = small_synth(8);
  sc.walk_amplitude = 0.0;
  const Dataset d = generate_synthetic(sc);
  std::vector<double> inside(sc.gestures.size(), 0.0), outside(sc.gestures.size(), 0.0);
  std::vector<double> n_in(sc.gestures.size(), 0.0), n_out(sc.gestures.size(), 0.0);
  for (const auto& s : d.sequences) {
    for (const auto& e : gesture_events(s)) {
      const auto g = static_cast<std::size_t>(e.cls - 1);
      const auto& w = sc.gestures[g].weights;
      const auto k = static_cast<std::size_t>(std::max_element(w.begin(), w.end(), [](double a, double b) {
                                                return std::abs(a) < std::abs(b);
                                              }) - w.begin());
      for (std::size_t t = e.start; t < e.start + e.length; ++t) {
        inside[g] += s.x(k, t) * s.x(k, t);
        n_in[g] += 1;
      }
      // adjacent null span: the gap samples right before the event
      for (std::size_t t = e.start - sc.gap_samples(); t < e.start; ++t) {
        outside[g] += s.x(k, t) * s.x(k, t);
        n_out[g] += 1;
      }
    }
  }
  for (std::size_t g = 0; g < sc.gestures.size(); ++g) {
    if (n_in[g] == 0) continue;
    EXPECT_GT(inside[g] / n_in[g], outside[g] / n_out[g]) << sc.gestures[g].name;
  }
}

TEST(Synth, ConfigErrors) {
  SynthConfig sc;
  sc.gestures_per_sequence = 100;
  EXPECT_THROW(generate_synthetic(sc), ConfigError);
  SynthConfig bad_template;
  bad_template.gestures[0].weights.pop_back();
  EXPECT_THROW(generate_synthetic(bad_template), ConfigError);
  SynthConfig bad_range;
  bad_range.gestures[0].max_duration_s = 1.0;
  EXPECT_THROW(generate_synthetic(bad_range), ConfigError);
}

TEST(Window, DropPolicyOffsets) {
  EXPECT_EQ(window_offsets(100, 64, 32, PadPolicy::Drop), (std::vector<std::size_t>{0, 32}));
  EXPECT_EQ(window_offsets(64, 64, 32, PadPolicy::Drop), (std::vector<std::size_t>{0}));
  EXPECT_TRUE(window_offsets(50, 64, 32, PadPolicy::Drop).empty());
}

TEST(Window, ZeroPadTailIsNullAndMasked) {
  Dataset d;
  d.channel_names = {"a"};
  d.labels = {LabelSpec{"x", 3, 2, {}}, LabelSpec{"y", 2, 0, {}}};
  SampleSequence s{"s", 1, 10, std::vector<double>(10, 1.0), std::vector<int>(20, 1)};
  d.sequences.push_back(s);
  const auto windows = make_windows(d, 8, 8, PadPolicy::ZeroPad);
  ASSERT_EQ(windows.size(), 2u);
  const auto& tail = windows[1];
  EXPECT_EQ(tail.offset, 8u);
  for (std::size_t j = 0; j < 8; ++j) {
    const bool real = j < 2;
    EXPECT_EQ(tail.mask[j], real ? 1 : 0);
    EXPECT_EQ(tail.X[j], real ? 1.0 : 0.0);
    EXPECT_EQ(tail.Y[j], real ? 1 : 2);
    EXPECT_EQ(tail.Y[8 + j], real ? 1 : 0);
  }
}

TEST(Window, ContentsMatchSource) {
  const Dataset d = generate_synthetic(small_synth(2));
  const auto windows = make_windows(d, 64, 32, PadPolicy::Drop);
  const auto& w = windows[3];
  const auto& s = d.sequences[w.sequence];
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(w.X[k * 64 + j], s.x(k, w.offset + j));
  EXPECT_THROW(make_windows(d, 0, 32, PadPolicy::Drop), ConfigError);
}

TEST(Normalize, DefiningPropertiesOnTrain) {
  const Dataset full = generate_synthetic(small_synth(6));
  auto [train, val] = split(full, 0.5, 3);
  const Normalizer n = normalize(train);
  n.apply(train);
  for (std::size_t k = 0; k < train.num_channels(); ++k) {
    double s = 0.0, ss = 0.0, N = 0.0;
    for (const auto& seq : train.sequences)
      for (std::size_t t = 0; t < seq.length; ++t) {
        s += seq.x(k, t);
        ss += seq.x(k, t) * seq.x(k, t);
        N += 1;
      }
    EXPECT_LT(std::abs(s / N), 1e-10);
    EXPECT_NEAR(std::sqrt(ss / N - (s / N) * (s / N)), 1.0, 1e-10);
  }
  n.apply(val);
  bool any_off = false;
  for (std::size_t k = 0; k < val.num_channels(); ++k) {
    double s = 0.0, N = 0.0;
    for (const auto& seq : val.sequences)
      for (std::size_t t = 0; t < seq.length; ++t) {
        s += seq.x(k, t);
        N += 1;
      }
    any_off |= std::abs(s / N) > 1e-6;
  }
  EXPECT_TRUE(any_off);
  EXPECT_THROW(n.apply(train), DataError);
}

TEST(Normalize, ConstantChannelKeepsUnitScale) {
  Dataset d = hand_dataset();
  d.sequences.resize(1);
  const Normalizer n = normalize(d);
  EXPECT_EQ(n.mean[0], 0.0);
  EXPECT_EQ(n.scale[0], 1.0);
  EXPECT_THROW(normalize(d.empty_like()), DataError);
}

TEST(Split, SizesDisjointDeterministic) {
  const Dataset d = hand_dataset();
  auto [train, test] = split(d, 0.8, 5);
  EXPECT_EQ(train.sequences.size(), 8u);
  EXPECT_EQ(test.sequences.size(), 2u);
  std::set<std::string> ids;
  for (const auto& s : train.sequences) ids.insert(s.id);
  for (const auto& s : test.sequences) EXPECT_FALSE(ids.count(s.id));
  auto [train2, test2] = split(d, 0.8, 5);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(test.sequences[i].id, test2.sequences[i].id);
}

TEST(Split, Errors) {
  Dataset d = hand_dataset();
  EXPECT_THROW(split(d, 0.0, 1), ConfigError);
  EXPECT_THROW(split(d, 1.0, 1), ConfigError);
  d.sequences.resize(1);
  EXPECT_THROW(split(d, 0.5, 1), DataError);
}

TEST(DatasetValidate, RejectsBadContent) {
  Dataset d = hand_dataset();
  d.sequences[0].Y[0] = 7;
  EXPECT_THROW(d.validate(), LabelError);
  d = hand_dataset();
  d.sequences[0].X[0] = std::nan("");
  EXPECT_THROW(d.validate(), DataError);
}
