#include "ivt/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace ivt {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'I', 'V', 'T', 'C', 'K', 'P', 'T', '\n'};

json config_to_json(const EncoderConfig& cfg) {
  return json{{"depth", cfg.depth},
              {"width", cfg.width},
              {"heads", cfg.heads},
              {"patch_size", cfg.patch_size},
              {"image_height", cfg.image_height},
              {"image_width", cfg.image_width},
              {"vocab_size", cfg.vocab_size},
              {"max_text_len", cfg.max_text_len},
              {"mlp_ratio", cfg.mlp_ratio}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig cfg;
  cfg.depth = j.at("depth").get<int>();
  cfg.width = j.at("width").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.patch_size = j.at("patch_size").get<int>();
  cfg.image_height = j.at("image_height").get<int>();
  cfg.image_width = j.at("image_width").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.max_text_len = j.at("max_text_len").get<int>();
  cfg.mlp_ratio = j.at("mlp_ratio").get<double>();
  return cfg;
}

json index_for(const ParamStore& store, const std::string& prefix, std::uint64_t& offset) {
  json out = json::array();
  for (const ParamInfo& info : store.layout().entries()) {
    const std::uint64_t count = static_cast<std::uint64_t>(info.rows) * static_cast<std::uint64_t>(info.cols);
    out.push_back(json{{"name", prefix + info.name},
                       {"offset", offset},
                       {"shape", json::array({info.rows, info.cols})}});
    offset += count;
  }
  return out;
}

void write_store(std::ofstream& out, const ParamStore& store) {
  std::vector<float> buffer(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) buffer[i] = static_cast<float>(store.data()[i]);
  out.write(reinterpret_cast<const char*>(buffer.data()),
            static_cast<std::streamsize>(buffer.size() * sizeof(float)));
}

void read_store(const std::vector<float>& payload, const json& index, const std::string& prefix,
                ParamStore& store) {
  const auto& entries = store.layout().entries();
  std::size_t matched = 0;
  for (const json& item : index) {
    const std::string name = item.at("name").get<std::string>();
    if (name.rfind(prefix, 0) != 0) continue;
    const std::string bare = name.substr(prefix.size());
    const int idx = store.layout().index_of(bare);
    if (idx < 0) throw ConfigError("checkpoint carries unknown parameter: " + name);
    const ParamInfo& info = store.layout().info(idx);
    const auto shape = item.at("shape");
    if (shape.size() != 2 || shape[0].get<int>() != info.rows || shape[1].get<int>() != info.cols) {
      throw ConfigError("checkpoint shape mismatch for " + name);
    }
    const std::uint64_t offset = item.at("offset").get<std::uint64_t>();
    const std::uint64_t count = static_cast<std::uint64_t>(info.rows) * static_cast<std::uint64_t>(info.cols);
    if (offset + count > payload.size()) throw ConfigError("checkpoint payload too short");
    double* dst = store.data() + info.offset;
    for (std::uint64_t i = 0; i < count; ++i) dst[i] = static_cast<double>(payload[offset + i]);
    ++matched;
  }
  if (matched != entries.size()) {
    throw ConfigError("checkpoint is missing parameters for prefix '" + prefix + "'");
  }
}

}  // namespace

void save_checkpoint(Checkpoint& ckpt, const std::string& path) {
  if (!ckpt.params.has_value()) throw ConfigError("checkpoint has no parameters to save");
  ckpt.params->quantize_to_f32();
  if (ckpt.momentum.has_value()) ckpt.momentum->quantize_to_f32();

  std::uint64_t offset = 0;
  json index = index_for(*ckpt.params, "", offset);
  json header;
  header["config"] = config_to_json(ckpt.config);
  header["vocab"] = ckpt.vocab_tokens;
  header["seed"] = ckpt.seed;
  header["step"] = ckpt.step;
  header["params"] = std::move(index);
  if (ckpt.momentum.has_value()) {
    header["momentum"] = index_for(*ckpt.momentum, "momentum/", offset);
  }
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t header_len = header_text.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  write_store(out, *ckpt.params);
  if (ckpt.momentum.has_value()) write_store(out, *ckpt.momentum);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError("not a checkpoint file: " + path);
  }
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ConfigError("truncated checkpoint header: " + path);
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw ConfigError("malformed checkpoint header: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  ckpt.config = config_from_json(header.at("config"));
  ckpt.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.step = header.at("step").get<std::uint64_t>();

  std::vector<float> payload;
  {
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (raw.size() % sizeof(float) != 0) throw ConfigError("checkpoint payload misaligned");
    payload.resize(raw.size() / sizeof(float));
    std::memcpy(payload.data(), raw.data(), raw.size());
  }

  auto layout = make_encoder_layout(ckpt.config);
  ckpt.params.emplace(layout);
  read_store(payload, header.at("params"), "", *ckpt.params);
  if (header.contains("momentum")) {
    ckpt.momentum.emplace(layout);
    read_store(payload, header.at("momentum"), "momentum/", *ckpt.momentum);
  }
  return ckpt;
}

}  // namespace ivt
