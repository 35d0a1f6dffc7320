#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cohar/checkpoint.hpp"
#include "cohar/gradcheck.hpp"
#include "cohar/serialization.hpp"
#include "cohar/synth.hpp"

// The command layer: experiment configuration, the output-directory rules and
// one function per CLI command. Every artifact is written under the output
// directory given to the command.
namespace cohar {

namespace fs = std::filesystem;

/// Raised when an output directory holds files and overwriting was not allowed.
class OverwriteError : public Error {
 public:
  using Error::Error;
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 1;
};

struct CompareSpec {
  std::vector<std::vector<std::string>> orders;  // empty: dataset order and its reverse
  std::string weak_label;                        // empty: last label of the first order
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string csv;  // data source; empty means synthetic
  SynthConfig synth;
  SplitSpec split;
  std::vector<std::string> order;  // chain order by label name; empty means dataset order
  GeneratorMode generator;
  bool teacher_forcing = false;
  bool stochastic_inference = false;
  std::vector<std::size_t> embed_dims;
  UNetConfig unet;
  TrainOptions train;
  CompareSpec compare;

  bool uses_csv() const { return !csv.empty(); }
};

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["data"] = c.uses_csv() ? Json{{"csv", c.csv}} : Json{{"synth", to_json(c.synth)}};
  j["split"] = Json{{"train_fraction", c.split.train_fraction}, {"seed", c.split.seed}};
  Json chain;
  chain["order"] = c.order;
  chain["generator"] = to_json(c.generator);
  chain["teacher_forcing"] = c.teacher_forcing;
  chain["stochastic_inference"] = c.stochastic_inference;
  chain["embed_dims"] = c.embed_dims;
  j["chain"] = chain;
  Json unet = to_json(c.unet);
  unet.erase("in_channels");
  unet.erase("out_classes");
  j["unet"] = unet;
  j["train"] = to_json(c.train);
  j["compare"] = Json{{"orders", c.compare.orders}, {"weak_label", c.compare.weak_label}};
  return j;
}

/// `base_dir` resolves a relative csv path (normally the config file's directory).
inline ExperimentConfig experiment_from_json(const Json& j, const fs::path& base_dir = {}) {
  detail::expect_object(j, "experiment config", {"seed", "data", "split", "chain", "unet", "train", "compare"});
  ExperimentConfig c;
  detail::read(j, "seed", c.seed);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::expect_object(d, "data", {"csv", "synth"});
    if (d.contains("csv") == d.contains("synth")) throw ConfigError("data: give exactly one of 'csv' or 'synth'");
    if (d.contains("csv")) {
      detail::read(d, "csv", c.csv);
      if (c.csv.empty()) throw ConfigError("data: csv path is empty");
      fs::path p(c.csv);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      c.csv = fs::absolute(p).lexically_normal().string();
    } else {
      c.synth = synth_from_json(d.at("synth"));
    }
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    detail::expect_object(s, "split", {"train_fraction", "seed"});
    detail::read(s, "train_fraction", c.split.train_fraction);
    detail::read(s, "seed", c.split.seed);
    if (!(c.split.train_fraction > 0.0 && c.split.train_fraction < 1.0)) {
      throw ConfigError("split: train_fraction must be in (0, 1)");
    }
  }
  if (j.contains("chain")) {
    const auto& ch = j.at("chain");
    detail::expect_object(ch, "chain", {"order", "generator", "teacher_forcing", "stochastic_inference", "embed_dims"});
    detail::read(ch, "order", c.order);
    if (ch.contains("generator")) c.generator = generator_from_json(ch.at("generator"));
    detail::read(ch, "teacher_forcing", c.teacher_forcing);
    detail::read(ch, "stochastic_inference", c.stochastic_inference);
    detail::read(ch, "embed_dims", c.embed_dims);
  }
  if (j.contains("unet")) c.unet = unet_from_json(j.at("unet"));
  c.unet.validate();
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  c.train.seed = c.seed;
  if (j.contains("compare")) {
    const auto& cm = j.at("compare");
    detail::expect_object(cm, "compare", {"orders", "weak_label"});
    detail::read(cm, "orders", c.compare.orders);
    detail::read(cm, "weak_label", c.compare.weak_label);
  }
  return c;
}

inline Json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline ExperimentConfig load_experiment(const fs::path& path) {
  return experiment_from_json(read_json_file(path), fs::absolute(path).parent_path());
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_digest(const ExperimentConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Output directory handling

/// Creates `dir`, or refuses when it already holds files and `force` is off.
inline void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw OverwriteError(dir.string() + " exists and is not a directory");
    if (!force && !fs::is_empty(dir)) {
      throw OverwriteError(dir.string() + " is not empty; pass --force to overwrite");
    }
  }
  fs::create_directories(dir);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Building blocks shared by the commands

/// Accepts a CSV file or a directory holding data.csv.
inline Dataset load_data_path(const fs::path& path) {
  if (fs::is_directory(path)) return load_csv(path / "data.csv");
  return load_csv(path);
}

inline Dataset load_experiment_data(const ExperimentConfig& c) {
  return c.uses_csv() ? load_csv(c.csv) : generate_synthetic(c.synth);
}

inline std::vector<LabelSpec> ordered_labels(const Dataset& d, const std::vector<std::string>& order) {
  if (order.empty()) return d.labels;
  if (order.size() != d.labels.size()) {
    throw ConfigError("chain order names " + std::to_string(order.size()) + " labels, data has " +
                      std::to_string(d.labels.size()));
  }
  std::vector<LabelSpec> out;
  for (const auto& name : order) {
    const auto& l = d.labels[d.label_index(name)];
    for (const auto& prev : out) {
      if (prev.name == name) throw ConfigError("chain order repeats label '" + name + "'");
    }
    out.push_back(l);
  }
  return out;
}

inline ChainConfig chain_config(const ExperimentConfig& c, const Dataset& d, const std::vector<std::string>& order) {
  ChainConfig cc;
  cc.labels = ordered_labels(d, order);
  cc.unet = c.unet;
  cc.embed_dims = c.embed_dims;
  cc.generator = c.generator;
  cc.teacher_forcing = c.teacher_forcing;
  cc.stochastic_inference = c.stochastic_inference;
  cc.validate();
  return cc;
}

inline DenseModel build_model(const ExperimentConfig& c, const Dataset& d, bool baseline,
                              const std::vector<std::string>& order, std::uint64_t seed) {
  SeededRng init = SeededRng(seed).stream("init");
  if (baseline) return build_baseline(ordered_labels(d, order), c.unet, d.num_channels(), init);
  return ConditionalUNet(chain_config(c, d, order), d.num_channels(), init);
}

struct PreparedData {
  Dataset train;
  Dataset test;
  Normalizer normalizer;
};

/// Split at sequence level, then normalize both sides with train statistics.
inline PreparedData prepare_data(const ExperimentConfig& c) {
  const Dataset all = load_experiment_data(c);
  auto [train, test] = split(all, c.split.train_fraction, c.split.seed);
  PreparedData p{std::move(train), std::move(test), {}};
  p.normalizer = Normalizer::fit(p.train);
  p.normalizer.apply(p.train);
  p.normalizer.apply(p.test);
  return p;
}

inline void write_history_csv(const TrainHistory& h, const std::vector<LabelSpec>& labels, const fs::path& path) {
  std::ostringstream out;
  out << "epoch,loss,tau";
  for (const auto& l : labels) out << ',' << l.name << "_val_accuracy," << l.name << "_val_f1";
  out << '\n';
  for (const auto& r : h) {
    out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.tau);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      out << ',' << (i < r.val_accuracy.size() ? format_double(r.val_accuracy[i]) : "")
          << ',' << (i < r.val_f1.size() ? format_double(r.val_f1[i]) : "");
    }
    out << '\n';
  }
  write_text(path, out.str());
}

/// One row per (sequence, time step): truth and prediction for every label.
inline void write_predictions_csv(const Dataset& d, const std::vector<std::vector<int>>& preds, const fs::path& path) {
  std::ostringstream out;
  out << "seq_id,t";
  for (const auto& l : d.labels) out << ',' << l.name << "_true," << l.name << "_pred";
  out << '\n';
  for (std::size_t si = 0; si < d.sequences.size(); ++si) {
    const auto& s = d.sequences[si];
    for (std::size_t t = 0; t < s.length; ++t) {
      out << s.id << ',' << t;
      for (std::size_t h = 0; h < d.num_labels(); ++h) out << ',' << s.y(h, t) << ',' << preds[si][h * s.length + t];
      out << '\n';
    }
  }
  write_text(path, out.str());
}

inline void write_metrics(const MetricsReport& r, const fs::path& dir) {
  write_json(dir / "metrics.json", to_json(r));
  for (const auto& l : r.labels) write_confusion_csv(l.confusion, dir / ("confusion_" + l.label.name + ".csv"));
}

// ---------------------------------------------------------------------------
// Commands

/// `config` is either a synth config or an experiment config with data.synth.
inline Dataset cmd_synth(const fs::path& config, const fs::path& out_dir, bool force, std::ostream& log) {
  const Json j = read_json_file(config);
  SynthConfig sc;
  if (j.is_object() && j.contains("data")) {
    const auto& d = j.at("data");
    if (!d.is_object() || !d.contains("synth")) throw ConfigError("synth: config has no data.synth section");
    sc = synth_from_json(d.at("synth"));
  } else {
    sc = synth_from_json(j);
  }
  const Dataset d = generate_synthetic(sc);
  prepare_out_dir(out_dir, force);
  write_csv(d, out_dir / "data.csv");
  write_metadata(d, out_dir / "meta.json");

  log << d.sequences.size() << " sequences, " << d.total_samples() << " samples, " << d.num_channels()
      << " channels at " << d.sample_rate_hz << " Hz\n";
  for (std::size_t h = 0; h < d.num_labels(); ++h) {
    std::vector<std::size_t> counts(d.labels[h].num_classes, 0);
    for (const auto& s : d.sequences) {
      for (std::size_t t = 0; t < s.length; ++t) ++counts[static_cast<std::size_t>(s.y(h, t))];
    }
    log << d.labels[h].name << ":";
    for (std::size_t c = 0; c < counts.size(); ++c) log << ' ' << d.labels[h].class_name(c) << '=' << counts[c];
    log << '\n';
  }
  return d;
}

struct TrainRun {
  TrainedModel model;
  TrainHistory history;
  MetricsReport test_metrics;
};

/// Trains one model on a prepared split and evaluates it on the test side.
inline TrainRun train_run(const ExperimentConfig& c, const PreparedData& data, bool baseline,
                          const std::vector<std::string>& order, std::uint64_t seed,
                          const std::function<void(const EpochRecord&)>& on_epoch_end = {}) {
  TrainRun run;
  run.model.model = build_model(c, data.train, baseline, order, seed);
  run.model.normalizer = data.normalizer;
  run.model.window = c.train.window;
  run.model.channel_names = data.train.channel_names;
  run.model.sample_rate_hz = data.train.sample_rate_hz;
  run.model.config_digest = config_digest(c);
  run.model.seed = seed;
  TrainOptions opts = c.train;
  opts.seed = seed;
  run.history = train(run.model.model, data.train, &data.test, opts, on_epoch_end);
  run.test_metrics = evaluate(run.model.model, data.test, c.train.window);
  run.test_metrics.seed = seed;
  run.test_metrics.config_digest = config_digest(c);
  return run;
}

inline void cmd_train(const fs::path& config, const fs::path& out_dir, bool baseline, bool force, std::ostream& log) {
  const Json raw = read_json_file(config);
  const ExperimentConfig c = experiment_from_json(raw, fs::absolute(config).parent_path());
  if (baseline && raw.contains("chain")) {
    const auto& ch = raw.at("chain");
    for (const char* key : {"generator", "embed_dims", "teacher_forcing", "stochastic_inference"}) {
      if (ch.is_object() && ch.contains(key)) {
        std::cerr << "warning: --baseline ignores the chain's generator and embedding settings\n";
        break;
      }
    }
  }
  const PreparedData data = prepare_data(c);
  prepare_out_dir(out_dir, force);
  write_json(out_dir / "config.resolved.json", to_json(c));

  auto on_epoch = [&](const EpochRecord& r) {
    log << "epoch " << r.epoch + 1 << "/" << c.train.epochs << " loss " << format_double(r.loss) << " tau "
        << r.tau;
    for (std::size_t i = 0; i < r.val_f1.size(); ++i) {
      log << ' ' << data.train.labels[i].name << " acc " << r.val_accuracy[i] << " f1 " << r.val_f1[i];
    }
    log << '\n';
  };
  TrainRun run;
  if (c.train.checkpoint_every > 0) {
    // Periodic checkpoints need the live model, so train here directly.
    run.model.model = build_model(c, data.train, baseline, c.order, c.seed);
    run.model.normalizer = data.normalizer;
    run.model.window = c.train.window;
    run.model.channel_names = data.train.channel_names;
    run.model.sample_rate_hz = data.train.sample_rate_hz;
    run.model.config_digest = config_digest(c);
    run.model.seed = c.seed;
    run.history = train(run.model.model, data.train, &data.test, c.train, [&](const EpochRecord& r) {
      on_epoch(r);
      if ((r.epoch + 1) % c.train.checkpoint_every == 0) {
        save_checkpoint(run.model, out_dir / ("checkpoint.epoch" + std::to_string(r.epoch + 1)));
      }
    });
  } else {
    run = train_run(c, data, baseline, c.order, c.seed, on_epoch);
  }
  save_checkpoint(run.model, out_dir / "checkpoint");
  write_history_csv(run.history, data.train.labels, out_dir / "history.csv");
  log << "wrote " << (out_dir / "checkpoint").string() << " (" << model_parameter_count(run.model.model)
      << " parameters)\n";
}

inline MetricsReport cmd_eval(const fs::path& checkpoint, const fs::path& data_path, const fs::path& out_dir, bool force,
                              std::ostream& log) {
  const TrainedModel tm = load_checkpoint(checkpoint);
  Dataset d = load_data_path(data_path);
  if (d.channel_names.size() != tm.channel_names.size()) {
    throw ContractError("data has " + std::to_string(d.num_channels()) + " channels, checkpoint expects " +
                        std::to_string(tm.channel_names.size()));
  }
  tm.normalizer.apply(d);
  const auto preds = predict_sequences(tm.model, d, tm.window);
  auto mapping = detail::label_mapping(tm.model, d);
  std::sort(mapping.begin(), mapping.end());
  MetricsReport r = metrics_from_predictions(d, preds, mapping);
  r.config_digest = tm.config_digest;
  r.seed = tm.seed;
  prepare_out_dir(out_dir, force);
  write_metrics(r, out_dir);
  write_predictions_csv(d, preds, out_dir / "predictions.csv");
  for (const auto& l : r.labels) log << l.label.name << ": accuracy " << l.accuracy << " macro-F1 " << l.macro_f1 << '\n';
  return r;
}

/// Prints one line per case and returns the report; the caller maps a
/// failure to its exit code.
inline GradCheckReport cmd_gradcheck(const GradCheckOptions& opt, std::ostream& log) {
  const GradCheckReport report = run_gradcheck(opt);
  char line[160];
  for (const auto& c : report.cases) {
    std::snprintf(line, sizeof line, "%-28s max_rel_err %.3e  tol %.0e  %s\n", c.name.c_str(), c.max_rel_error,
                  c.tolerance, c.passed() ? "ok" : "FAIL");
    log << line;
  }
  for (const auto& op : report.uncovered) log << op << ": no gradient check exercised this op\n";
  if (report.passed()) {
    log << "all " << report.cases.size() << " checks passed\n";
  } else {
    log << "failing:";
    for (const auto& f : report.failing()) log << ' ' << f;
    log << '\n';
  }
  return report;
}

struct CompareSummary {
  std::vector<std::string> models;
  std::vector<std::uint64_t> seeds;
  std::string weak_label;
  std::string strong_label;
  std::vector<double> weak_f1_delta;    // per seed, first chain minus baseline
  std::vector<double> strong_f1_delta;  // per seed, first chain minus baseline
  Json json;

  double mean_weak_delta() const;
  std::size_t positive_weak_deltas() const {
    return static_cast<std::size_t>(std::count_if(weak_f1_delta.begin(), weak_f1_delta.end(), [](double v) { return v > 0.0; }));
  }
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double CompareSummary::mean_weak_delta() const { return mean_of(weak_f1_delta); }

inline std::string model_tag(const std::vector<std::string>& order) {
  std::string s = "chain";
  for (const auto& n : order) s += "_" + n;
  return s;
}

/// Baseline plus two chain orders per seed, all on the same data and split.
/// Seeds are config.seed, config.seed + 1, ...
inline CompareSummary cmd_compare(const fs::path& config, std::size_t num_seeds, const fs::path& out_dir, bool force,
                                  std::ostream& log) {
  if (num_seeds < 1) throw ConfigError("compare: --seeds must be >= 1");
  const ExperimentConfig c = load_experiment(config);
  const PreparedData data = prepare_data(c);

  std::vector<std::vector<std::string>> orders = c.compare.orders;
  if (orders.empty()) {
    std::vector<std::string> names;
    for (const auto& l : data.train.labels) names.push_back(l.name);
    orders.push_back(names);
    orders.emplace_back(names.rbegin(), names.rend());
  }
  if (orders.size() != 2) throw ConfigError("compare: exactly two chain orders are required");
  for (const auto& o : orders) ordered_labels(data.train, o);
  const std::string weak = c.compare.weak_label.empty() ? orders[0].back() : c.compare.weak_label;
  data.train.label_index(weak);
  const std::string strong = orders[0].front() == weak ? orders[0].back() : orders[0].front();

  prepare_out_dir(out_dir, force);
  write_json(out_dir / "config.resolved.json", to_json(c));

  CompareSummary summary;
  summary.models = {"baseline", model_tag(orders[0]), model_tag(orders[1])};
  summary.weak_label = weak;
  summary.strong_label = strong;

  std::ostringstream csv;
  csv << "seed,model,label,metric,value\n";
  // results[model][label] -> per-seed {accuracy, f1}
  std::map<std::string, std::map<std::string, std::vector<std::pair<double, double>>>> results;
  for (std::size_t i = 0; i < num_seeds; ++i) {
    const std::uint64_t seed = c.seed + i;
    summary.seeds.push_back(seed);
    std::map<std::string, MetricsReport> reports;
    for (std::size_t m = 0; m < 3; ++m) {
      const auto& name = summary.models[m];
      const bool baseline = m == 0;
      const auto& order = baseline ? orders[0] : orders[m - 1];
      const TrainRun run = train_run(c, data, baseline, order, seed);
      const fs::path cell = out_dir / ("seed_" + std::to_string(seed)) / name;
      fs::create_directories(cell);
      write_history_csv(run.history, data.train.labels, cell / "history.csv");
      write_metrics(run.test_metrics, cell);
      for (const auto& l : run.test_metrics.labels) {
        csv << seed << ',' << name << ',' << l.label.name << ",accuracy," << format_double(l.accuracy) << '\n';
        csv << seed << ',' << name << ',' << l.label.name << ",macro_f1," << format_double(l.macro_f1) << '\n';
        results[name][l.label.name].emplace_back(l.accuracy, l.macro_f1);
      }
      log << "seed " << seed << ' ' << name << ':';
      for (const auto& l : run.test_metrics.labels) log << ' ' << l.label.name << " acc " << l.accuracy << " f1 " << l.macro_f1;
      log << '\n';
      reports.emplace(name, run.test_metrics);
    }
    const auto& base = reports.at("baseline");
    const auto& chain = reports.at(summary.models[1]);
    summary.weak_f1_delta.push_back(chain.at(weak).macro_f1 - base.at(weak).macro_f1);
    summary.strong_f1_delta.push_back(chain.at(strong).macro_f1 - base.at(strong).macro_f1);
  }
  write_text(out_dir / "comparison.csv", csv.str());

  Json s;
  s["seeds"] = summary.seeds;
  s["weak_label"] = weak;
  s["strong_label"] = strong;
  s["models"] = Json::array();
  for (const auto& name : summary.models) {
    Json mj{{"model", name}};
    mj["labels"] = Json::array();
    for (const auto& l : data.train.labels) {
      std::vector<double> acc, f1;
      for (const auto& [a, f] : results[name][l.name]) {
        acc.push_back(a);
        f1.push_back(f);
      }
      mj["labels"].push_back(Json{{"label", l.name}, {"mean_accuracy", mean_of(acc)}, {"mean_macro_f1", mean_of(f1)}});
    }
    s["models"].push_back(mj);
  }
  s["weak_f1_delta"] = Json{{"chain", summary.models[1]},
                            {"per_seed", summary.weak_f1_delta},
                            {"mean", summary.mean_weak_delta()},
                            {"positive_seeds", summary.positive_weak_deltas()}};
  s["strong_f1_delta"] = Json{{"chain", summary.models[1]},
                              {"per_seed", summary.strong_f1_delta},
                              {"mean", mean_of(summary.strong_f1_delta)}};
  summary.json = s;
  write_json(out_dir / "summary.json", s);

  char line[200];
  log << "model                         label      mean_acc  mean_f1\n";
  for (const auto& mj : s["models"]) {
    for (const auto& lj : mj["labels"]) {
      std::snprintf(line, sizeof line, "%-29s %-10s %.4f    %.4f\n", mj["model"].get<std::string>().c_str(),
                    lj["label"].get<std::string>().c_str(), lj["mean_accuracy"].get<double>(),
                    lj["mean_macro_f1"].get<double>());
      log << line;
    }
  }
  std::snprintf(line, sizeof line, "%s macro-F1 delta (%s - baseline): mean %+.4f, positive on %zu of %zu seeds\n",
                weak.c_str(), summary.models[1].c_str(), summary.mean_weak_delta(), summary.positive_weak_deltas(),
                summary.weak_f1_delta.size());
  log << line;
  return summary;
}

}  // namespace cohar
