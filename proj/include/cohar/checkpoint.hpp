#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cohar/serialization.hpp"
#include "cohar/train.hpp"

// Checkpoint container:
//
//   offset 0   8 bytes   magic "COHARCKP"
//   offset 8   u32 LE    format version (1)
//   offset 12  u64 LE    header length N
//   offset 20  N bytes   UTF-8 JSON header
//   then                 parameter payload: little-endian IEEE-754 doubles of
//                        every parameter, concatenated in header order
//
// The header holds the model kind ("chain" or "baseline"), the configuration
// needed to rebuild the architecture, the input normalizer, the window spec,
// channel names, and a "parameters" table of {name, shape, offset} where
// offset counts doubles from the start of the payload.
namespace cohar {

inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'H', 'A', 'R', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline Json checkpoint_header(const TrainedModel& tm) {
  Json h;
  if (const auto* chain = std::get_if<ConditionalUNet>(&tm.model)) {
    h["kind"] = "chain";
    h["in_channels"] = chain->in_channels();
    h["chain"] = to_json(chain->config());
  } else {
    const auto& base = std::get<MultiHeadUNet>(tm.model);
    h["kind"] = "baseline";
    h["in_channels"] = base.in_channels();
    h["labels"] = Json::array();
    for (const auto& l : base.labels()) h["labels"].push_back(to_json(l));
    h["unet"] = to_json(base.trunk().config());
  }
  h["normalizer"] = Json{{"mean", tm.normalizer.mean}, {"scale", tm.normalizer.scale}};
  h["window"] = Json{{"length", tm.window.length}, {"stride", tm.window.stride}};
  h["channels"] = tm.channel_names;
  h["sample_rate_hz"] = tm.sample_rate_hz;
  h["config_digest"] = tm.config_digest;
  h["seed"] = tm.seed;
  h["parameters"] = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : model_named_parameters(tm.model)) {
    h["parameters"].push_back(Json{{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  return h;
}

inline void save_checkpoint(const TrainedModel& tm, const std::filesystem::path& path) {
  const std::string header = checkpoint_header(tm).dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kCheckpointMagic, 8);
  unsigned char ver[4];
  for (int i = 0; i < 4; ++i) ver[i] = static_cast<unsigned char>(kCheckpointVersion >> (8 * i));
  out.write(reinterpret_cast<const char*>(ver), 4);
  detail::put_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : model_named_parameters(tm.model)) {
    for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

inline TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError(path.string() + ": not a checkpoint file");
  }
  unsigned char ver[4];
  if (!in.read(reinterpret_cast<char*>(ver), 4)) throw DataError("checkpoint: truncated file");
  const std::uint32_t version = ver[0] | (ver[1] << 8) | (ver[2] << 16) | (static_cast<std::uint32_t>(ver[3]) << 24);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t n = detail::get_u64(in);
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint: truncated header");

  Json h;
  try {
    h = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  TrainedModel tm;
  try {
    const std::size_t K = h.at("in_channels").get<std::size_t>();
    SeededRng unused(0);
    const std::string kind = h.at("kind").get<std::string>();
    if (kind == "chain") {
      tm.model = ConditionalUNet(chain_from_json(h.at("chain")), K, unused);
    } else if (kind == "baseline") {
      std::vector<LabelSpec> labels;
      for (const auto& lj : h.at("labels")) labels.push_back(label_from_json(lj));
      tm.model = MultiHeadUNet(labels, unet_from_json(h.at("unet")), K, unused);
    } else {
      throw DataError("checkpoint: unknown model kind '" + kind + "'");
    }
    tm.normalizer.mean = h.at("normalizer").at("mean").get<std::vector<double>>();
    tm.normalizer.scale = h.at("normalizer").at("scale").get<std::vector<double>>();
    tm.window.length = h.at("window").at("length").get<std::size_t>();
    tm.window.stride = h.at("window").at("stride").get<std::size_t>();
    tm.channel_names = h.at("channels").get<std::vector<std::string>>();
    tm.sample_rate_hz = h.at("sample_rate_hz").get<double>();
    tm.config_digest = h.value("config_digest", std::string());
    tm.seed = h.value("seed", std::uint64_t{0});

    auto params = model_named_parameters(tm.model);
    const auto& table = h.at("parameters");
    if (table.size() != params.size()) throw DataError("checkpoint: parameter table does not match the architecture");
    std::uint64_t expected_offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& [name, t] = params[i];
      const auto& entry = table.at(i);
      if (entry.at("name").get<std::string>() != name || entry.at("shape").get<Shape>() != t.shape() ||
          entry.at("offset").get<std::uint64_t>() != expected_offset) {
        throw DataError("checkpoint: parameter '" + name + "' does not match the architecture");
      }
      for (double& v : t.data()) v = std::bit_cast<double>(detail::get_u64(in));
      expected_offset += t.size();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  return tm;
}

}  // namespace cohar
