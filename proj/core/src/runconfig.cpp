#include "ivt/runconfig.hpp"

#include <fstream>
#include <sstream>

namespace ivt {

namespace {

std::string trim(const std::string& s) {
  const std::size_t begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const std::size_t end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::default_values() {
  static const std::map<std::string, std::string> kDefaults = {
      {"model.depth", "2"},
      {"model.width", "64"},
      {"model.heads", "4"},
      {"model.patch_size", "8"},
      {"model.image_height", "32"},
      {"model.image_width", "16"},
      {"model.max_text_len", "16"},
      {"model.mlp_ratio", "4.0"},
      {"train.base_lr", "0.005"},
      {"train.weight_decay", "0.0001"},
      {"train.momentum", "0.0"},
      {"train.batch_size", "32"},
      {"train.total_steps", "2000"},
      {"train.warmup_steps", "-1"},
      {"train.seed", "1"},
      {"train.checkpoint_every", "500"},
      {"train.eval_every", "500"},
      {"train.stop_after_step", "0"},
      {"mla.enabled", "true"},
      {"mla.level_augmentation_map", "sentence:identity,phrase:hflip,word:random_crop"},
      {"bmm.enabled", "true"},
      {"bmm.ratio", "0.3"},
      {"cmpm.epsilon", "1e-08"},
      {"cmpm.normalize_targets", "true"},
      {"data.corpus_dir", ""},
      {"eval.ks", "1,5,10"},
      {"eval.metric", "cosine"},
      {"output_dir", ""},
  };
  return kDefaults;
}

RunConfig::RunConfig() : values_(default_values()) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::apply_override(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  it->second = value;
}

const std::string& RunConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& raw = get_string(key);
  try {
    std::size_t used = 0;
    const int v = std::stoi(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects an integer, got '" + raw + "'");
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& raw = get_string(key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects an unsigned integer, got '" + raw + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& raw = get_string(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects a number, got '" + raw + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& raw = get_string(key);
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  throw ConfigError("config key " + key + " expects true/false, got '" + raw + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const std::string& raw = get_string(key);
  std::vector<int> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " expects a comma list of integers, got '" + raw + "'");
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " must not be empty");
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  const std::string& raw = get_string(key);
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " expects a comma list of numbers, got '" + raw + "'");
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " must not be empty");
  return out;
}

std::string RunConfig::canonical_text() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

std::string RunConfig::hash() const { return to_hex(fnv1a64(canonical_text())); }

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out << canonical_text();
}

EncoderConfig RunConfig::encoder_config(int vocab_size) const {
  EncoderConfig cfg;
  cfg.depth = get_int("model.depth");
  cfg.width = get_int("model.width");
  cfg.heads = get_int("model.heads");
  cfg.patch_size = get_int("model.patch_size");
  cfg.image_height = get_int("model.image_height");
  cfg.image_width = get_int("model.image_width");
  cfg.max_text_len = get_int("model.max_text_len");
  cfg.mlp_ratio = get_double("model.mlp_ratio");
  cfg.vocab_size = vocab_size;
  cfg.validate();
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.base_lr = get_double("train.base_lr");
  cfg.weight_decay = get_double("train.weight_decay");
  cfg.momentum = get_double("train.momentum");
  cfg.batch_size = get_int("train.batch_size");
  cfg.total_steps = get_int("train.total_steps");
  cfg.warmup_steps = get_int("train.warmup_steps");
  cfg.seed = get_u64("train.seed");
  cfg.checkpoint_every = get_int("train.checkpoint_every");
  cfg.eval_every = get_int("train.eval_every");
  cfg.stop_after_step = get_int("train.stop_after_step");
  cfg.validate();
  return cfg;
}

AlignmentConfig RunConfig::alignment_config() const {
  AlignmentConfig cfg;
  cfg.mla_enabled = get_bool("mla.enabled");
  cfg.bmm_enabled = get_bool("bmm.enabled");
  cfg.bmm_ratio = get_double("bmm.ratio");
  cfg.cmpm_epsilon = get_double("cmpm.epsilon");
  cfg.cmpm_normalize_targets = get_bool("cmpm.normalize_targets");
  cfg.level_augmentation = parse_level_augmentation_map(get_string("mla.level_augmentation_map"));
  if (cfg.bmm_ratio < 0.0 || cfg.bmm_ratio >= 1.0) {
    throw ConfigError("bmm.ratio must be in [0, 1)");
  }
  if (cfg.cmpm_epsilon <= 0.0) throw ConfigError("cmpm.epsilon must be positive");
  return cfg;
}

void RunConfig::require(const std::vector<std::string>& keys) const {
  for (const std::string& key : keys) {
    if (get_string(key).empty()) throw ConfigError("missing required config key: " + key);
  }
}

}  // namespace ivt
