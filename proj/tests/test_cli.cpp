#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "commands.hpp"
#include "config.hpp"
#include "potrl/taskgen.hpp"

using namespace potrl;
using namespace potrl::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& leaf) {
  auto dir = fs::temp_directory_path() / ("potrl_cli_" + leaf);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_json(const fs::path& dir, const std::string& name,
                    const std::string& body) {
  auto path = dir / name;
  std::ofstream out(path);
  out << body;
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Minimal config sized for test speed; data.dir and out are filled per test.
Config tiny_config(const fs::path& data_dir, const fs::path& out_dir) {
  Config cfg = Config::schema_defaults();
  cfg.set_from_string("gen.labeled", "12");
  cfg.set_from_string("gen.unlabeled", "8");
  cfg.set_from_string("gen.eval", "6");
  cfg.set_from_string("model.emb", "8");
  cfg.set_from_string("model.hidden", "16");
  cfg.set_from_string("model.max_response", "24");
  cfg.set_from_string("sft.epochs", "2");
  cfg.set_from_string("sft.batch", "8");
  cfg.set_from_string("train.steps", "2");
  cfg.set_from_string("train.batch", "3");
  cfg.set_from_string("train.eval_every", "0");
  cfg.set_string("data.dir", data_dir.string());
  cfg.set_string("out", out_dir.string());
  return cfg;
}

}  // namespace

TEST_CASE("config rejects unknown keys listing all of them") {
  auto dir = fresh_dir("badkeys");
  auto path = write_json(dir, "cfg.json",
                         R"({"train.stepz": 5, "jugde.tau": 1.0, "seed": 3})");
  Config cfg = Config::schema_defaults();
  try {
    cfg.merge_file(path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("jugde.tau") != std::string::npos);
    CHECK(msg.find("train.stepz") != std::string::npos);
  }
}

TEST_CASE("config rejects wrong types and non-scalar values") {
  auto dir = fresh_dir("badtypes");
  Config cfg = Config::schema_defaults();
  auto p1 = write_json(dir, "a.json", R"({"train.steps": "fast"})");
  CHECK_THROWS_AS(cfg.merge_file(p1), ConfigError);
  auto p2 = write_json(dir, "b.json", R"({"train": {"steps": 5}})");
  CHECK_THROWS_AS(cfg.merge_file(p2), ConfigError);
  auto p3 = write_json(dir, "c.json", R"([1, 2])");
  CHECK_THROWS_AS(cfg.merge_file(p3), ConfigError);
  CHECK_THROWS_AS(cfg.merge_file(dir / "missing.json"), IoError);
}

TEST_CASE("config file values land with integer-for-real coercion") {
  auto dir = fresh_dir("goodfile");
  auto path = write_json(dir, "cfg.json",
                         R"({"train.gamma": 1, "train.steps": 42, "judge.guard_enabled": true})");
  Config cfg = Config::schema_defaults();
  cfg.merge_file(path);
  CHECK(cfg.get_real("train.gamma") == 1.0);
  CHECK(cfg.get_int("train.steps") == 42);
  CHECK(cfg.get_bool("judge.guard_enabled"));
  CHECK(cfg.get_string("train.algo") == "ppo");
}

TEST_CASE("environment overrides map dotted keys and fail closed") {
  CHECK(Config::env_name("train.mix.lambda") == "POTRL_TRAIN_MIX_LAMBDA");

  setenv("POTRL_TRAIN_STEPS", "7", 1);
  Config cfg = Config::schema_defaults();
  cfg.merge_env();
  CHECK(cfg.get_int("train.steps") == 7);
  unsetenv("POTRL_TRAIN_STEPS");

  setenv("POTRL_NOT_A_KEY", "1", 1);
  Config bad = Config::schema_defaults();
  CHECK_THROWS_AS(bad.merge_env(), ConfigError);
  unsetenv("POTRL_NOT_A_KEY");

  setenv("POTRL_TRAIN_STEPS", "many", 1);
  Config unparsable = Config::schema_defaults();
  CHECK_THROWS_AS(unparsable.merge_env(), ConfigError);
  unsetenv("POTRL_TRAIN_STEPS");
}

TEST_CASE("gen-data writes the full split set deterministically") {
  auto out_a = fresh_dir("gen_a");
  auto out_b = fresh_dir("gen_b");
  Config cfg = tiny_config(out_a, out_a);
  auto artifacts = cmd_gen_data(cfg, "");

  auto names = taskgen::split_file_names();
  REQUIRE(names.size() == 6);
  for (const auto& n : names) CHECK(fs::exists(out_a / n));
  CHECK(fs::exists(out_a / taskgen::kAnswerFileName));
  CHECK(fs::exists(out_a / "run_manifest.json"));
  CHECK(artifacts.size() == 8);  // 6 splits + answers + manifest

  Config cfg_b = tiny_config(out_b, out_b);
  cmd_gen_data(cfg_b, "");
  for (const auto& n : names) CHECK(slurp(out_a / n) == slurp(out_b / n));
}

TEST_CASE("manifest records command, seed, snapshot, and artifacts") {
  auto out = fresh_dir("manifest");
  Config cfg = tiny_config(out, out);
  cfg.set_int("seed", 99);
  cmd_gen_data(cfg, "some/cfg.json");
  auto doc = nlohmann::json::parse(slurp(out / "run_manifest.json"));
  CHECK(doc.at("command") == "gen-data");
  CHECK(doc.at("seed") == 99);
  CHECK(doc.at("config_path") == "some/cfg.json");
  CHECK(doc.at("config").at("gen.labeled") == 12);
  CHECK(doc.at("git_describe").is_string());
  CHECK(doc.at("started_utc").is_string());
  CHECK(doc.at("artifacts").size() == 7);
}

TEST_CASE("sft, eval, and report round-trip through files") {
  auto data = fresh_dir("pipe_data");
  auto sft_out = fresh_dir("pipe_sft");
  auto eval_out = fresh_dir("pipe_eval");
  auto rep_out = fresh_dir("pipe_rep");

  Config cfg = tiny_config(data, data);
  cmd_gen_data(cfg, "");

  cfg.set_string("out", sft_out.string());
  auto sft_artifacts = cmd_sft(cfg, "");
  CHECK(fs::exists(sft_out / "sft.bin"));
  CHECK(fs::exists(sft_out / "sft_metrics.jsonl"));
  CHECK(sft_artifacts.size() == 3);

  cfg.set_string("out", eval_out.string());
  cfg.set_string("eval.checkpoint", (sft_out / "sft.bin").string());
  cmd_eval(cfg, "");
  auto csv = slurp(eval_out / "report.csv");
  CHECK(csv.rfind("label,clean,perturbed,p1,p2\nsft,", 0) == 0);
  auto report = nlohmann::json::parse(slurp(eval_out / "report.json"));
  CHECK(report.at("clean").is_number());
  CHECK(report.at("clean").get<double>() <= 1.0);

  cfg.set_string("out", rep_out.string());
  cmd_report(cfg, {(eval_out / "report.json").string()}, "");
  auto combined = slurp(rep_out / "report_combined.csv");
  CHECK(combined.find("label,clean,perturbed,p1,p2") == 0);
  CHECK(combined.find("pipe_eval") != std::string::npos);
}

TEST_CASE("train catches an empty labeled split at train time") {
  auto data = fresh_dir("empty_data");
  auto sft_out = fresh_dir("empty_sft");
  Config cfg = tiny_config(data, data);
  cmd_gen_data(cfg, "");
  cfg.set_string("out", sft_out.string());
  cmd_sft(cfg, "");

  // A dataset edited down to an empty labeled file passes gen and sft-load
  // stages but must be refused when the vr channel needs it.
  std::ofstream(data / taskgen::split_file_names()[0], std::ios::trunc);
  cfg.set_string("train.warmup", (sft_out / "sft.bin").string());
  cfg.set_string("out", fresh_dir("empty_rl").string());
  CHECK_THROWS_AS((void)cmd_train(cfg, ""), ConfigError);
}

TEST_CASE("missing checkpoint fails before any partial output") {
  auto data = fresh_dir("miss_data");
  Config cfg = tiny_config(data, data);
  cmd_gen_data(cfg, "");

  auto out = fresh_dir("miss_out");
  fs::remove_all(out);
  cfg.set_string("out", out.string());
  cfg.set_string("train.warmup", "nowhere/sft.bin");
  CHECK_THROWS_AS((void)cmd_train(cfg, ""), IoError);
  CHECK(!fs::exists(out / "rl_metrics.jsonl"));
  CHECK(!fs::exists(out / "run_manifest.json"));

  cfg.set_string("eval.checkpoint", "nowhere/sft.bin");
  CHECK_THROWS_AS((void)cmd_eval(cfg, ""), IoError);
  CHECK(!fs::exists(out / "report.json"));
}

TEST_CASE("train and judge-bench produce their artifact sets") {
  auto data = fresh_dir("full_data");
  auto sft_out = fresh_dir("full_sft");
  auto rl_out = fresh_dir("full_rl");
  auto bench_out = fresh_dir("full_bench");

  Config cfg = tiny_config(data, data);
  cfg.set_from_string("bench.n_pairs", "6");
  cfg.set_from_string("bench.min_pairs", "3");
  cmd_gen_data(cfg, "");
  cfg.set_string("out", sft_out.string());
  cmd_sft(cfg, "");

  cfg.set_string("out", rl_out.string());
  cfg.set_string("train.warmup", (sft_out / "sft.bin").string());
  cmd_train(cfg, "");
  CHECK(fs::exists(rl_out / "rl_final.bin"));
  auto metrics = slurp(rl_out / "rl_metrics.jsonl");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 2);
  auto summary = nlohmann::json::parse(slurp(rl_out / "train_summary.json"));
  CHECK(summary.at("optimizer_steps") == 2);

  cfg.set_string("out", bench_out.string());
  cmd_judge_bench(cfg, "");
  auto bench = nlohmann::json::parse(slurp(bench_out / "judge_bench.json"));
  CHECK(bench.at("pairs").get<int>() >= 3);
  CHECK(bench.at("accuracy").get<double>() >= 0.0);
}

TEST_CASE("run_cli maps outcomes to exit codes") {
  auto dir = fresh_dir("exitcodes");
  auto bad = write_json(dir, "bad.json", R"({"no.such.key": 1})");
  auto good = write_json(dir, "good.json",
                         R"({"gen.labeled": 8, "gen.unlabeled": 6, "gen.eval": 4})");

  auto run = [](std::vector<std::string> args) {
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>("potrl"));
    for (auto& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  };

  auto out = (dir / "gen").string();
  CHECK(run({"gen-data", "--config", good.string(), "--out", out}) == 0);
  CHECK(fs::exists(dir / "gen" / "run_manifest.json"));
  CHECK(run({"gen-data", "--config", bad.string(), "--out", out}) == 2);
  CHECK(run({"eval", "--out", out}) == 2);  // no checkpoint configured
}
