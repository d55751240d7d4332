#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "potrl/algo.hpp"
#include "potrl/common.hpp"
#include "potrl/eval.hpp"
#include "potrl/policy.hpp"
#include "potrl/rewards.hpp"
#include "potrl/taskgen.hpp"

namespace potrl::trainer {

enum class RlAlgo { kPpo, kGrpo };
enum class Schedule { kJoint, kAlternate };
enum class CollapseAction { kFlag, kHalt };

RlAlgo rl_algo_from_name(const std::string& name);
Schedule schedule_from_name(const std::string& name);
CollapseAction collapse_action_from_name(const std::string& name);

struct MixConfig {
  Real lambda = 1.0;  // verifiable channel
  Real mu = 0.0;      // judge channel
  Real rho = 0.0;     // rerank channel

  void validate() const;  // nonnegative, sums to 1 within 1e-9
};

// Weighted channel sum. A loss must be present wherever its coefficient is
// nonzero; zero-coefficient channels are ignored entirely.
Real mix_losses(std::optional<Real> l_vr, std::optional<Real> l_yon,
                std::optional<Real> l_rerank, const MixConfig& mix);

struct CollapseConfig {
  Real length_floor_frac = 0.4;  // of the warm-up mean response length
  Real judge_ceiling = 0.7;
  int window = 50;
  CollapseAction action = CollapseAction::kFlag;
};

struct StepRecord {
  int64_t step = 0;   // optimizer update index, 1-based
  int64_t round = 0;  // rollout round the update consumed
  std::optional<Real> reward_vr, reward_yon, reward_rerank;
  Real kl = 0;        // mean per-token rollout KL against the reference
  Real resp_len = 0;  // mean sampled response length
  Real loss = 0, loss_policy = 0, loss_value = 0;
  std::optional<Real> eval_clean;
  bool skipped_nan = false;
  bool collapsed = false;
};

struct RunMetrics {
  std::vector<StepRecord> records;
};

std::string step_record_json(const StepRecord& r);

// Alarm when, over the last cfg.window records, mean response length sinks
// below length_floor_frac * baseline_len while the mean judge reward sits
// above judge_ceiling. Records without a judge reward count it as zero.
bool detect_collapse(std::span<const StepRecord> records, Real baseline_len,
                     const CollapseConfig& cfg);

struct SftConfig {
  int epochs = 10;
  int batch = 24;
  Real lr = 1e-3;
  uint64_t seed = 0;
};

struct SftResult {
  policy::Checkpoint checkpoint;
  std::vector<Real> losses;  // one per optimizer step
};

// Cross-entropy warm-up on the labeled split against gold programs.
SftResult warmup_sft(const policy::Net& net, const policy::Model& init,
                     const taskgen::DatasetBundle& data, const SftConfig& cfg);

struct RlConfig {
  RlAlgo algo = RlAlgo::kPpo;
  MixConfig mix;
  int steps = 200;  // optimizer updates, the unit all cadences count in
  int batch = 24;
  int grpo_batch = 16;
  int group_size = 8;
  int ppo_epochs = 2;
  Real gamma = 1.0;
  Real gae_lambda = 0.95;
  Real clip_eps = 0.2;
  Real alpha = 1.0;  // value loss coefficient
  Real beta = 0.01;  // KL penalty weight
  algo::ValueClipMode value_clip = algo::ValueClipMode::kPaper;
  Real lr = 1e-4;
  Schedule schedule = Schedule::kJoint;
  CollapseConfig collapse;
  rewards::JudgeConfig judge;
  rewards::RerankConfig rerank;
  int rerank_rollouts_per_problem = 4;
  int rerank_max_problems = 400;
  int eval_every = 50;        // 0 disables periodic eval
  int checkpoint_every = 0;   // 0 disables periodic checkpoints
  int step_budget = 64;
  int workers = 1;
  int max_consecutive_nan = 10;
  uint64_t seed = 0;

  void validate() const;
};

struct RlResult {
  policy::Checkpoint final_checkpoint;
  RunMetrics metrics;
  bool collapsed = false;
  int64_t optimizer_steps = 0;
};

// Builds the rerank reward model's training set from labeled problems: the
// gold program, a corrupted near miss, and graded warm-up policy rollouts.
std::vector<rewards::RerankExample> build_rerank_training_set(
    const policy::Net& net, const policy::Model& warmup,
    std::span<const taskgen::Problem> labeled, const RlConfig& cfg);

// Mean response length of the warm-up policy, the collapse-detector anchor.
Real baseline_response_length(const policy::Net& net,
                              const policy::Model& warmup,
                              std::span<const taskgen::Problem> problems,
                              int max_problems, uint64_t seed);

// The RL loop. Writes periodic checkpoints into out_dir when enabled, emits
// one StepRecord per optimizer update (through on_record when given), and
// aborts with the last good parameters intact if losses blow up. resume
// continues a checkpoint produced by this function under the same config.
RlResult train_rl(const policy::Net& net, const policy::Checkpoint& warmup,
                  const taskgen::DatasetBundle& data, const RlConfig& cfg,
                  const std::filesystem::path& out_dir,
                  const policy::Checkpoint* resume = nullptr,
                  const std::function<void(const StepRecord&)>& on_record = {});

}  // namespace potrl::trainer
