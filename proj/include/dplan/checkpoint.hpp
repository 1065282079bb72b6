#pragma once

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dplan/model.hpp"
#include "dplan/optim.hpp"
#include "dplan/tokenizer.hpp"

namespace dplan {

// Container layout: "DPLN" | u32 version | u64 header length | header JSON |
// raw little-endian f64 payloads in directory order. Directory order is the
// model's canonical parameter order followed by the optimizer moments.
struct Checkpoint {
  ModelConfig model_config;
  std::vector<std::string> vocab_symbols;
  int epoch = 0;
  std::string train_config_hash;
  int64_t optimizer_steps = 0;
  int64_t optimizer_skipped = 0;
  std::vector<std::string> tensor_names;
  std::vector<std::vector<double>> tensors;

  PlannerModel restore_model() const {
    Vocab::from_symbols(vocab_symbols);  // vocabulary mismatch is a load error
    PlannerModel m(model_config);
    const auto& names = m.param_names();
    require(tensor_names.size() >= names.size(), "checkpoint: missing parameter tensors");
    for (size_t i = 0; i < names.size(); ++i) {
      require(tensor_names[i] == names[i], "checkpoint: parameter directory mismatch");
      auto dst = const_cast<Tensor&>(m.params()[i]).mutable_data();
      require(tensors[i].size() == dst.size(), "checkpoint: tensor size mismatch");
      std::copy(tensors[i].begin(), tensors[i].end(), dst.begin());
    }
    return m;
  }
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

inline uint64_t get_u64(const std::string& s, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len}, {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json header;
  header["epoch"] = c.epoch;
  header["model_config"] = detail::model_config_json(c.model_config);
  header["optimizer"] = {{"steps", c.optimizer_steps}, {"skipped", c.optimizer_skipped}};
  header["train_config_hash"] = c.train_config_hash;
  header["vocab"] = c.vocab_symbols;
  nlohmann::json dir = nlohmann::json::array();
  for (size_t i = 0; i < c.tensor_names.size(); ++i)
    dir.push_back({{"name", c.tensor_names[i]}, {"count", c.tensors[i].size()}});
  header["tensors"] = dir;

  std::string out = "DPLN";
  detail::put_u32(out, kCheckpointFormatVersion);
  std::string hj = header.dump();
  detail::put_u64(out, hj.size());
  out += hj;
  for (const auto& t : c.tensors) {
    size_t off = out.size();
    out.resize(off + t.size() * 8);
    std::memcpy(out.data() + off, t.data(), t.size() * 8);
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  require(bytes.size() >= 16 && bytes.compare(0, 4, "DPLN") == 0,
          "checkpoint: bad magic bytes");
  uint32_t version = detail::get_u32(bytes, 4);
  require(version == kCheckpointFormatVersion, "checkpoint: unsupported container version");
  uint64_t hlen = detail::get_u64(bytes, 8);
  require(16 + hlen <= bytes.size(), "checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(bytes.substr(16, hlen));

  Checkpoint c;
  c.epoch = header.at("epoch").get<int>();
  c.model_config = detail::model_config_from_json(header.at("model_config"));
  c.optimizer_steps = header.at("optimizer").at("steps").get<int64_t>();
  c.optimizer_skipped = header.at("optimizer").at("skipped").get<int64_t>();
  c.train_config_hash = header.at("train_config_hash").get<std::string>();
  c.vocab_symbols = header.at("vocab").get<std::vector<std::string>>();

  size_t off = 16 + hlen;
  for (const auto& entry : header.at("tensors")) {
    c.tensor_names.push_back(entry.at("name").get<std::string>());
    size_t count = entry.at("count").get<size_t>();
    require(off + count * 8 <= bytes.size(), "checkpoint: truncated payload");
    std::vector<double> t(count);
    std::memcpy(t.data(), bytes.data() + off, count * 8);
    off += count * 8;
    c.tensors.push_back(std::move(t));
  }
  require(off == bytes.size(), "checkpoint: trailing bytes");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "checkpoint: cannot open " + path.string() + " for writing");
  std::string bytes = serialize_checkpoint(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), "checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace dplan
