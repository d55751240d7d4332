#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

extern char** environ;

namespace potrl::cli {

namespace {

using json = nlohmann::ordered_json;

struct FieldSpec {
  const char* key;
  Config::Type type;
  json def;
};

const std::vector<FieldSpec>& schema() {
  static const std::vector<FieldSpec> fields = {
      {"seed", Config::Type::kInt, 0},
      {"out", Config::Type::kString, "out"},
      {"workers", Config::Type::kInt, 1},
      {"data.dir", Config::Type::kString, "data"},

      {"gen.labeled", Config::Type::kInt, 2000},
      {"gen.unlabeled", Config::Type::kInt, 20000},
      {"gen.eval", Config::Type::kInt, 500},
      {"gen.operand_min", Config::Type::kInt, 1},
      {"gen.operand_max", Config::Type::kInt, 99},

      {"model.emb", Config::Type::kInt, 32},
      {"model.hidden", Config::Type::kInt, 64},
      {"model.max_response", Config::Type::kInt, 96},

      {"sft.epochs", Config::Type::kInt, 10},
      {"sft.batch", Config::Type::kInt, 24},
      {"sft.lr", Config::Type::kReal, 1e-3},

      {"train.algo", Config::Type::kString, "ppo"},
      {"train.warmup", Config::Type::kString, ""},
      {"train.resume", Config::Type::kString, ""},
      {"train.mix.lambda", Config::Type::kReal, 1.0},
      {"train.mix.mu", Config::Type::kReal, 0.0},
      {"train.mix.rho", Config::Type::kReal, 0.0},
      {"train.steps", Config::Type::kInt, 200},
      {"train.batch", Config::Type::kInt, 24},
      {"train.grpo_batch", Config::Type::kInt, 16},
      {"train.group_size", Config::Type::kInt, 8},
      {"train.ppo_epochs", Config::Type::kInt, 2},
      {"train.gamma", Config::Type::kReal, 1.0},
      {"train.gae_lambda", Config::Type::kReal, 0.95},
      {"train.clip_eps", Config::Type::kReal, 0.2},
      {"train.alpha", Config::Type::kReal, 1.0},
      {"train.beta", Config::Type::kReal, 0.01},
      {"train.value_clip", Config::Type::kString, "paper"},
      {"train.lr", Config::Type::kReal, 1e-4},
      {"train.schedule", Config::Type::kString, "joint"},
      {"train.eval_every", Config::Type::kInt, 50},
      {"train.checkpoint_every", Config::Type::kInt, 0},
      {"train.step_budget", Config::Type::kInt, 64},
      {"train.max_consecutive_nan", Config::Type::kInt, 10},
      {"train.rerank_rollouts_per_problem", Config::Type::kInt, 4},
      {"train.rerank_max_problems", Config::Type::kInt, 400},

      {"collapse.length_floor_frac", Config::Type::kReal, 0.4},
      {"collapse.judge_ceiling", Config::Type::kReal, 0.7},
      {"collapse.window", Config::Type::kInt, 50},
      {"collapse.action", Config::Type::kString, "flag"},

      {"judge.tau", Config::Type::kReal, 1.0},
      {"judge.accept", Config::Type::kReal, 0.35},
      {"judge.p_acc", Config::Type::kReal, 0.88},
      {"judge.margin", Config::Type::kReal, std::log(9.0)},
      {"judge.jitter", Config::Type::kReal, 0.25},
      {"judge.guard_min_lines", Config::Type::kInt, 4},
      {"judge.guard_enabled", Config::Type::kBool, false},
      {"judge.length_bias_margin", Config::Type::kReal, 0.0},
      {"judge.length_bias_max_lines", Config::Type::kInt, 3},
      {"judge.step_budget", Config::Type::kInt, 64},

      {"rerank.hash_dim", Config::Type::kInt, 4096},
      {"rerank.epochs", Config::Type::kInt, 30},
      {"rerank.lr", Config::Type::kReal, 0.02},
      {"rerank.l2", Config::Type::kReal, 1e-4},

      {"eval.checkpoint", Config::Type::kString, ""},
      {"eval.label", Config::Type::kString, ""},
      {"eval.vote_k", Config::Type::kInt, 1},
      {"eval.temperature", Config::Type::kReal, 0.7},
      {"eval.step_budget", Config::Type::kInt, 64},

      {"bench.n_pairs", Config::Type::kInt, 10000},
      {"bench.min_pairs", Config::Type::kInt, 20},
      {"bench.step_budget", Config::Type::kInt, 64},

      {"report.out", Config::Type::kString, "report_combined.csv"},
  };
  return fields;
}

const std::map<std::string, const FieldSpec*>& schema_index() {
  static const std::map<std::string, const FieldSpec*> index = [] {
    std::map<std::string, const FieldSpec*> m;
    for (const auto& f : schema()) m[f.key] = &f;
    return m;
  }();
  return index;
}

const std::map<std::string, const FieldSpec*>& env_index() {
  static const std::map<std::string, const FieldSpec*> index = [] {
    std::map<std::string, const FieldSpec*> m;
    for (const auto& f : schema()) {
      auto name = Config::env_name(f.key);
      if (!m.emplace(name, &f).second)
        throw ConfigError("schema keys collide under env mapping: " + name);
    }
    return m;
  }();
  return index;
}

const FieldSpec& spec_of(const std::string& key) {
  auto it = schema_index().find(key);
  if (it == schema_index().end())
    throw ConfigError("unknown config key: " + key);
  return *it->second;
}

json parse_typed(const FieldSpec& f, const std::string& text) {
  try {
    switch (f.type) {
      case Config::Type::kInt:
        return static_cast<int64_t>(std::stoll(text));
      case Config::Type::kReal:
        return std::stod(text);
      case Config::Type::kBool:
        if (text == "1" || text == "true") return true;
        if (text == "0" || text == "false") return false;
        throw ConfigError("");
      case Config::Type::kString:
        return text;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("config key " + std::string(f.key) +
                    ": cannot parse value '" + text + "'");
}

void check_typed(const FieldSpec& f, const json& v) {
  bool ok = false;
  switch (f.type) {
    case Config::Type::kInt:
      ok = v.is_number_integer();
      break;
    case Config::Type::kReal:
      ok = v.is_number();
      break;
    case Config::Type::kBool:
      ok = v.is_boolean();
      break;
    case Config::Type::kString:
      ok = v.is_string();
      break;
  }
  if (!ok)
    throw ConfigError("config key " + std::string(f.key) +
                      ": wrong type, got " + std::string(v.type_name()));
}

}  // namespace

const Config& Config::schema_defaults() {
  static const Config base = [] {
    Config c;
    for (const auto& f : schema()) c.values_[f.key] = f.def;
    return c;
  }();
  return base;
}

std::string Config::env_name(const std::string& key) {
  std::string out = "POTRL_";
  for (char ch : key)
    out += ch == '.' ? '_' : static_cast<char>(std::toupper(ch));
  return out;
}

Config::Type Config::type_of(const std::string& key) const {
  return spec_of(key).type;
}

int64_t Config::get_int(const std::string& key) const {
  if (type_of(key) != Type::kInt) throw ConfigError(key + " is not an integer key");
  return values_.at(key).get<int64_t>();
}

Real Config::get_real(const std::string& key) const {
  if (type_of(key) != Type::kReal) throw ConfigError(key + " is not a real key");
  return values_.at(key).get<Real>();
}

bool Config::get_bool(const std::string& key) const {
  if (type_of(key) != Type::kBool) throw ConfigError(key + " is not a boolean key");
  return values_.at(key).get<bool>();
}

const std::string& Config::get_string(const std::string& key) const {
  if (type_of(key) != Type::kString) throw ConfigError(key + " is not a string key");
  return values_.at(key).get_ref<const std::string&>();
}

void Config::set_from_string(const std::string& key, const std::string& value) {
  values_[key] = parse_typed(spec_of(key), value);
}

void Config::set_int(const std::string& key, int64_t value) {
  const auto& f = spec_of(key);
  if (f.type != Type::kInt) throw ConfigError(key + " is not an integer key");
  values_[key] = value;
}

void Config::set_string(const std::string& key, const std::string& value) {
  const auto& f = spec_of(key);
  if (f.type != Type::kString) throw ConfigError(key + " is not a string key");
  values_[key] = value;
}

void Config::merge_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open config " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + file.string() + ": " + e.what());
  }
  if (!doc.is_object())
    throw ConfigError("config " + file.string() + " must be a flat JSON object");

  std::vector<std::string> unknown;
  for (const auto& [key, value] : doc.items()) {
    if (!schema_index().count(key)) {
      unknown.push_back(key);
      continue;
    }
    if (value.is_object() || value.is_array())
      throw ConfigError("config key " + key + " must be a scalar");
    check_typed(spec_of(key), value);
  }
  if (!unknown.empty()) {
    std::sort(unknown.begin(), unknown.end());
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  for (const auto& [key, value] : doc.items()) values_[key] = value;
}

void Config::merge_env() {
  for (char** e = environ; *e != nullptr; ++e) {
    std::string entry(*e);
    if (entry.rfind("POTRL_", 0) != 0) continue;
    auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(0, eq);
    auto it = env_index().find(name);
    if (it == env_index().end())
      throw ConfigError("unknown environment override: " + name);
    values_[it->second->key] = parse_typed(*it->second, entry.substr(eq + 1));
  }
}

}  // namespace potrl::cli
