#include "commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "potrl/eval.hpp"
#include "potrl/mathx.hpp"
#include "potrl/policy.hpp"
#include "potrl/rewards.hpp"
#include "potrl/taskgen.hpp"
#include "potrl/trainer.hpp"

namespace potrl::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write to " + path.string());
  }
  fs::rename(tmp, path);
}

struct ManifestClock {
  std::string started = utc_now();
};

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::string& config_path, const Config& cfg,
                    const ManifestClock& clock,
                    std::vector<std::string>& artifacts) {
  json m;
  m["command"] = command;
  m["config_path"] = config_path.empty() ? "(defaults)" : config_path;
  m["config"] = cfg.values();
  m["seed"] = cfg.get_int("seed");
  m["git_describe"] = POTRL_GIT_DESCRIBE;
  m["started_utc"] = clock.started;
  m["finished_utc"] = utc_now();
  m["artifacts"] = artifacts;
  auto path = out_dir / "run_manifest.json";
  write_text(path, m.dump(2) + "\n");
  artifacts.push_back(path.string());
}

fs::path out_dir_of(const Config& cfg) {
  fs::path dir = cfg.get_string("out");
  fs::create_directories(dir);
  return dir;
}

taskgen::DatasetBundle load_bundle(const Config& cfg) {
  fs::path dir = cfg.get_string("data.dir");
  auto names = taskgen::split_file_names();
  taskgen::DatasetBundle b;
  b.labeled = taskgen::load_problems(dir / names[0]);
  b.unlabeled = taskgen::load_problems(dir / names[1]);
  b.eval_clean = taskgen::load_problems(dir / names[2]);
  b.eval_perturbed = taskgen::load_problems(dir / names[3]);
  b.eval_p1 = taskgen::load_problems(dir / names[4]);
  b.eval_p2 = taskgen::load_problems(dir / names[5]);
  b.answers = taskgen::load_answers(dir / taskgen::kAnswerFileName);
  return b;
}

policy::ModelConfig model_config(const Config& cfg) {
  policy::ModelConfig mc;
  mc.vocab = vocab().size();
  mc.emb = static_cast<int>(cfg.get_int("model.emb"));
  mc.hidden = static_cast<int>(cfg.get_int("model.hidden"));
  mc.max_response = static_cast<int>(cfg.get_int("model.max_response"));
  return mc;
}

rewards::JudgeConfig judge_config(const Config& cfg) {
  rewards::JudgeConfig jc;
  jc.tau = cfg.get_real("judge.tau");
  jc.accept = cfg.get_real("judge.accept");
  jc.p_acc = cfg.get_real("judge.p_acc");
  jc.margin = cfg.get_real("judge.margin");
  jc.jitter = cfg.get_real("judge.jitter");
  jc.guard_min_lines = static_cast<int>(cfg.get_int("judge.guard_min_lines"));
  jc.guard_enabled = cfg.get_bool("judge.guard_enabled");
  jc.length_bias_margin = cfg.get_real("judge.length_bias_margin");
  jc.length_bias_max_lines =
      static_cast<int>(cfg.get_int("judge.length_bias_max_lines"));
  jc.step_budget = static_cast<int>(cfg.get_int("judge.step_budget"));
  return jc;
}

trainer::RlConfig rl_config(const Config& cfg) {
  trainer::RlConfig rc;
  rc.algo = trainer::rl_algo_from_name(cfg.get_string("train.algo"));
  rc.mix.lambda = cfg.get_real("train.mix.lambda");
  rc.mix.mu = cfg.get_real("train.mix.mu");
  rc.mix.rho = cfg.get_real("train.mix.rho");
  rc.steps = static_cast<int>(cfg.get_int("train.steps"));
  rc.batch = static_cast<int>(cfg.get_int("train.batch"));
  rc.grpo_batch = static_cast<int>(cfg.get_int("train.grpo_batch"));
  rc.group_size = static_cast<int>(cfg.get_int("train.group_size"));
  rc.ppo_epochs = static_cast<int>(cfg.get_int("train.ppo_epochs"));
  rc.gamma = cfg.get_real("train.gamma");
  rc.gae_lambda = cfg.get_real("train.gae_lambda");
  rc.clip_eps = cfg.get_real("train.clip_eps");
  rc.alpha = cfg.get_real("train.alpha");
  rc.beta = cfg.get_real("train.beta");
  const auto& vc = cfg.get_string("train.value_clip");
  if (vc == "paper") {
    rc.value_clip = algo::ValueClipMode::kPaper;
  } else if (vc == "standard") {
    rc.value_clip = algo::ValueClipMode::kStandard;
  } else {
    throw ConfigError("unknown value_clip mode: " + vc);
  }
  rc.lr = cfg.get_real("train.lr");
  rc.schedule = trainer::schedule_from_name(cfg.get_string("train.schedule"));
  rc.collapse.length_floor_frac = cfg.get_real("collapse.length_floor_frac");
  rc.collapse.judge_ceiling = cfg.get_real("collapse.judge_ceiling");
  rc.collapse.window = static_cast<int>(cfg.get_int("collapse.window"));
  rc.collapse.action =
      trainer::collapse_action_from_name(cfg.get_string("collapse.action"));
  rc.judge = judge_config(cfg);
  rc.rerank.hash_dim = static_cast<size_t>(cfg.get_int("rerank.hash_dim"));
  rc.rerank.epochs = static_cast<int>(cfg.get_int("rerank.epochs"));
  rc.rerank.lr = cfg.get_real("rerank.lr");
  rc.rerank.l2 = cfg.get_real("rerank.l2");
  rc.rerank_rollouts_per_problem =
      static_cast<int>(cfg.get_int("train.rerank_rollouts_per_problem"));
  rc.rerank_max_problems =
      static_cast<int>(cfg.get_int("train.rerank_max_problems"));
  rc.eval_every = static_cast<int>(cfg.get_int("train.eval_every"));
  rc.checkpoint_every = static_cast<int>(cfg.get_int("train.checkpoint_every"));
  rc.step_budget = static_cast<int>(cfg.get_int("train.step_budget"));
  rc.workers = static_cast<int>(cfg.get_int("workers"));
  rc.max_consecutive_nan =
      static_cast<int>(cfg.get_int("train.max_consecutive_nan"));
  rc.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  return rc;
}

// Deterministic correct/incorrect candidate pair for bench commands: the
// gold program and the gold program with its first operand off by one.
eval::CandidateSupplier gold_pair_supplier() {
  return [](const taskgen::Problem& p, Rng&) {
    auto ops = taskgen::extract_operands(p.template_id, p.question);
    auto gold = taskgen::gold_program(p.template_id, ops);
    ops[0] += 1;
    auto bad = taskgen::gold_program(p.template_id, ops);
    return std::vector<std::vector<int>>{gold, bad};
  };
}

}  // namespace

std::vector<std::string> cmd_gen_data(const Config& cfg,
                                      const std::string& config_path) {
  ManifestClock clock;
  taskgen::GenConfig gc;
  gc.sizes.labeled = cfg.get_int("gen.labeled");
  gc.sizes.unlabeled = cfg.get_int("gen.unlabeled");
  gc.sizes.eval = cfg.get_int("gen.eval");
  gc.operand_min = cfg.get_int("gen.operand_min");
  gc.operand_max = cfg.get_int("gen.operand_max");
  gc.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  auto bundle = taskgen::make_splits(gc);

  auto dir = out_dir_of(cfg);
  taskgen::write_jsonl(bundle, dir);
  std::vector<std::string> artifacts;
  for (const auto& name : taskgen::split_file_names())
    artifacts.push_back((dir / name).string());
  artifacts.push_back((dir / taskgen::kAnswerFileName).string());
  write_manifest(dir, "gen-data", config_path, cfg, clock, artifacts);
  return artifacts;
}

std::vector<std::string> cmd_sft(const Config& cfg,
                                 const std::string& config_path) {
  ManifestClock clock;
  auto bundle = load_bundle(cfg);
  auto mc = model_config(cfg);
  policy::Net net(mc);
  uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
  auto init = policy::init_model(mc, derive_seed(seed, "init"));

  trainer::SftConfig sc;
  sc.epochs = static_cast<int>(cfg.get_int("sft.epochs"));
  sc.batch = static_cast<int>(cfg.get_int("sft.batch"));
  sc.lr = cfg.get_real("sft.lr");
  sc.seed = seed;
  auto result = trainer::warmup_sft(net, init, bundle, sc);

  auto dir = out_dir_of(cfg);
  auto ck_path = dir / "sft.bin";
  policy::save_checkpoint(result.checkpoint, ck_path);
  std::string lines;
  for (size_t i = 0; i < result.losses.size(); ++i) {
    json rec;
    rec["step"] = i + 1;
    rec["loss"] = result.losses[i];
    lines += rec.dump() + "\n";
  }
  auto metrics_path = dir / "sft_metrics.jsonl";
  write_text(metrics_path, lines);

  std::vector<std::string> artifacts{ck_path.string(), metrics_path.string()};
  write_manifest(dir, "sft", config_path, cfg, clock, artifacts);
  return artifacts;
}

std::vector<std::string> cmd_train(const Config& cfg,
                                   const std::string& config_path) {
  ManifestClock clock;
  const auto& warmup_path = cfg.get_string("train.warmup");
  if (warmup_path.empty())
    throw ConfigError("train.warmup must point at an sft checkpoint");
  auto warmup = policy::load_checkpoint(warmup_path);

  std::optional<policy::Checkpoint> resume;
  const auto& resume_path = cfg.get_string("train.resume");
  if (!resume_path.empty()) resume = policy::load_checkpoint(resume_path);

  auto bundle = load_bundle(cfg);
  auto rc = rl_config(cfg);
  policy::Net net(warmup.model.cfg);

  auto dir = out_dir_of(cfg);
  auto metrics_path = dir / "rl_metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());

  auto result = trainer::train_rl(
      net, warmup, bundle, rc, dir, resume ? &*resume : nullptr,
      [&metrics](const trainer::StepRecord& r) {
        metrics << trainer::step_record_json(r) << "\n";
        metrics.flush();
      });
  metrics.close();

  json summary;
  summary["optimizer_steps"] = result.optimizer_steps;
  summary["collapsed"] = result.collapsed;
  summary["final_checkpoint"] = (dir / "rl_final.bin").string();
  auto summary_path = dir / "train_summary.json";
  write_text(summary_path, summary.dump(2) + "\n");

  std::vector<std::string> artifacts{(dir / "rl_final.bin").string(),
                                     metrics_path.string(),
                                     summary_path.string()};
  write_manifest(dir, "train", config_path, cfg, clock, artifacts);
  return artifacts;
}

std::vector<std::string> cmd_eval(const Config& cfg,
                                  const std::string& config_path) {
  ManifestClock clock;
  const auto& ck_path = cfg.get_string("eval.checkpoint");
  if (ck_path.empty())
    throw ConfigError("eval.checkpoint must point at a checkpoint");
  auto ck = policy::load_checkpoint(ck_path);
  auto bundle = load_bundle(cfg);
  policy::Net net(ck.model.cfg);

  auto report = eval::evaluate_report(
      net, ck.model, bundle, static_cast<int>(cfg.get_int("eval.vote_k")),
      cfg.get_real("eval.temperature"),
      static_cast<uint64_t>(cfg.get_int("seed")),
      static_cast<int>(cfg.get_int("eval.step_budget")));

  std::string label = cfg.get_string("eval.label");
  if (label.empty()) label = fs::path(ck_path).stem().string();

  auto dir = out_dir_of(cfg);
  auto json_path = dir / "report.json";
  auto csv_path = dir / "report.csv";
  write_text(json_path, eval::report_json_line(report) + "\n");
  write_text(csv_path, eval::report_csv_header() + "\n" +
                           eval::report_csv_row(label, report) + "\n");

  std::vector<std::string> artifacts{json_path.string(), csv_path.string()};
  write_manifest(dir, "eval", config_path, cfg, clock, artifacts);
  return artifacts;
}

std::vector<std::string> cmd_judge_bench(const Config& cfg,
                                         const std::string& config_path) {
  ManifestClock clock;
  auto bundle = load_bundle(cfg);
  rewards::OracleJudge judge(judge_config(cfg), &bundle.answers);

  eval::BenchConfig bc;
  bc.n_pairs = static_cast<int>(cfg.get_int("bench.n_pairs"));
  bc.min_pairs = static_cast<int>(cfg.get_int("bench.min_pairs"));
  bc.step_budget = static_cast<int>(cfg.get_int("bench.step_budget"));
  bc.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  auto r = eval::judge_quality_bench(judge, bundle.eval_clean,
                                     gold_pair_supplier(), bundle.answers, bc);

  json doc;
  doc["pairs"] = r.pairs;
  doc["wins"] = r.wins;
  doc["accuracy"] = r.accuracy;
  doc["p_acc"] = cfg.get_real("judge.p_acc");
  auto dir = out_dir_of(cfg);
  auto path = dir / "judge_bench.json";
  write_text(path, doc.dump(2) + "\n");

  std::vector<std::string> artifacts{path.string()};
  write_manifest(dir, "judge-bench", config_path, cfg, clock, artifacts);
  return artifacts;
}

std::vector<std::string> cmd_report(const Config& cfg,
                                    const std::vector<std::string>& inputs,
                                    const std::string& config_path) {
  ManifestClock clock;
  if (inputs.empty()) throw InputError("report needs at least one report.json");

  std::string csv = eval::report_csv_header() + "\n";
  for (const auto& in_path : inputs) {
    std::ifstream in(in_path);
    if (!in) throw IoError("cannot open " + in_path);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw InputError(in_path + ": " + e.what());
    }
    eval::EvalReport r;
    r.clean = doc.at("clean").get<Real>();
    r.perturbed = doc.at("perturbed").get<Real>();
    r.p1 = doc.at("p1").get<Real>();
    r.p2 = doc.at("p2").get<Real>();
    fs::path p(in_path);
    std::string label = p.parent_path().filename().string();
    if (label.empty()) label = p.stem().string();
    csv += eval::report_csv_row(label, r) + "\n";
  }

  auto dir = out_dir_of(cfg);
  auto path = dir / cfg.get_string("report.out");
  write_text(path, csv);
  std::vector<std::string> artifacts{path.string()};
  write_manifest(dir, "report", config_path, cfg, clock, artifacts);
  return artifacts;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Desk-scale program-of-thought RL fine-tuning"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "Flat JSON config file");
  std::optional<int64_t> seed_flag;
  app.add_option("--seed", seed_flag, "Root seed override");
  std::optional<std::string> out_flag;
  app.add_option("--out", out_flag, "Output directory override");
  std::optional<int64_t> workers_flag;
  app.add_option("--workers", workers_flag, "Worker thread cap");
  std::optional<std::string> resume_flag;
  app.add_option("--resume", resume_flag, "Checkpoint to resume training from");

  auto* gen = app.add_subcommand("gen-data", "Generate dataset splits");
  auto* sft = app.add_subcommand("sft", "Supervised warm-up");
  auto* train = app.add_subcommand("train", "RL fine-tuning (PPO or GRPO)");
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* bench = app.add_subcommand("judge-bench", "Pairwise judge benchmark");
  auto* report = app.add_subcommand("report", "Combine eval reports into CSV");
  std::vector<std::string> report_inputs;
  report->add_option("inputs", report_inputs, "report.json files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    Config cfg = Config::schema_defaults();
    if (!config_path.empty()) cfg.merge_file(config_path);
    cfg.merge_env();
    if (seed_flag) cfg.set_int("seed", *seed_flag);
    if (out_flag) cfg.set_string("out", *out_flag);
    if (workers_flag) cfg.set_int("workers", *workers_flag);
    if (resume_flag) cfg.set_string("train.resume", *resume_flag);

    if (gen->parsed()) {
      cmd_gen_data(cfg, config_path);
    } else if (sft->parsed()) {
      cmd_sft(cfg, config_path);
    } else if (train->parsed()) {
      cmd_train(cfg, config_path);
    } else if (evalc->parsed()) {
      cmd_eval(cfg, config_path);
    } else if (bench->parsed()) {
      cmd_judge_bench(cfg, config_path);
    } else if (report->parsed()) {
      cmd_report(cfg, report_inputs, config_path);
    }
    return 0;
  } catch (const std::exception& e) {
    const char* kind = "Error";
    if (dynamic_cast<const ConfigError*>(&e)) {
      kind = "ConfigError";
    } else if (dynamic_cast<const InputError*>(&e)) {
      kind = "InputError";
    } else if (dynamic_cast<const TrainingError*>(&e)) {
      kind = "TrainingError";
    } else if (dynamic_cast<const GenerationError*>(&e)) {
      kind = "GenerationError";
    } else if (dynamic_cast<const EncodingError*>(&e)) {
      kind = "EncodingError";
    } else if (dynamic_cast<const IoError*>(&e)) {
      kind = "IoError";
    }
    json err;
    err["error"] = kind;
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    bool usage = std::string(kind) == "ConfigError" ||
                 std::string(kind) == "InputError";
    return usage ? 2 : 1;
  }
}

}  // namespace potrl::cli
