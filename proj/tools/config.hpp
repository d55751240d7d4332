#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "potrl/common.hpp"

namespace potrl::cli {

// One flat key space shared by every command; values are scalars only.
// Resolution order: schema default, config file, POTRL_* environment
// override, command-line flag. Unknown keys fail closed at every layer.
class Config {
 public:
  enum class Type { kInt, kReal, kBool, kString };

  static const Config& schema_defaults();

  // Environment variable name for a key: POTRL_ + uppercase, dots to
  // underscores (train.mix.lambda -> POTRL_TRAIN_MIX_LAMBDA).
  static std::string env_name(const std::string& key);

  int64_t get_int(const std::string& key) const;
  Real get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  void set_from_string(const std::string& key, const std::string& value);
  void set_int(const std::string& key, int64_t value);
  void set_string(const std::string& key, const std::string& value);

  void merge_file(const std::filesystem::path& file);
  void merge_env();

  // Resolved snapshot of every key, for manifests.
  const nlohmann::ordered_json& values() const { return values_; }

 private:
  Type type_of(const std::string& key) const;
  nlohmann::ordered_json values_;
};

}  // namespace potrl::cli
