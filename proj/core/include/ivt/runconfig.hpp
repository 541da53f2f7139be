#pragma once

#include <map>
#include <string>
#include <vector>

#include "ivt/alignment.hpp"
#include "ivt/encoder.hpp"
#include "ivt/training.hpp"

namespace ivt {

// Flat dotted-key configuration with a closed schema: unknown keys are errors,
// every run writes its fully-resolved form next to its outputs. Values are
// kept as strings; typed getters parse on demand and name the offending key.
class RunConfig {
 public:
  RunConfig();  // defaults (the desk-scale setup)

  static RunConfig from_file(const std::string& path);
  // "key=value" as provided on the command line.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get_string(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  // Alphabetical "key = value" lines; the canonical on-disk form.
  std::string canonical_text() const;
  std::string hash() const;
  void save(const std::string& path) const;

  EncoderConfig encoder_config(int vocab_size) const;
  TrainConfig train_config() const;
  AlignmentConfig alignment_config() const;

  // Throws ConfigError naming the first missing required key.
  void require(const std::vector<std::string>& keys) const;

  static const std::map<std::string, std::string>& default_values();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ivt
