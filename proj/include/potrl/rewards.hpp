#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "potrl/common.hpp"
#include "potrl/rng.hpp"
#include "potrl/taskgen.hpp"

namespace potrl::rewards {

struct JudgeVerdict {
  Real log_yes = 0;
  Real log_no = 0;
  Real score = 0;  // recomputable: judge_score(log_yes, log_no, tau, accept)
  std::string tag;
};

struct JudgeConfig {
  Real tau = 1.0;
  Real accept = 0.35;
  Real p_acc = 0.88;               // chance the oracle tells the truth
  Real margin = std::log(Real(9)); // verdict log-odds magnitude, sigma(m)=0.9
  Real jitter = 0.25;              // stddev of Gaussian logit noise
  int guard_min_lines = 4;
  bool guard_enabled = false;
  // Deliberately miscalibrated variant for hacking experiments: programs
  // shorter than length_bias_max_lines statements get this added to the
  // Yes log-odds. 0 keeps the judge honest.
  Real length_bias_margin = 0.0;
  int length_bias_max_lines = 3;
  int step_budget = 64;

  void validate() const;
};

// sigma((log_yes - log_no)/tau), zeroed below the acceptance threshold.
Real judge_score(Real log_yes, Real log_no, Real tau, Real accept);

// Simulated judge: executes the program, compares to the generator-private
// answer, tells the truth with probability p_acc, and emits the verdict as
// +-margin log-odds plus jitter, normalized over {Yes, No}.
JudgeVerdict oracle_judge(const taskgen::Problem& problem,
                          std::span<const int> program, const JudgeConfig& cfg,
                          const taskgen::AnswerBook& answers, Rng& rng);

// Two-logit judge contract; any wire-level implementation slots in here.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeVerdict verdict(const taskgen::Problem& problem,
                               std::span<const int> program, Rng& rng) const = 0;
};

class OracleJudge final : public Judge {
 public:
  OracleJudge(JudgeConfig cfg, const taskgen::AnswerBook* answers)
      : cfg_(cfg), answers_(answers) {
    cfg_.validate();
    if (answers_ == nullptr) throw ConfigError("oracle judge needs an answer book");
  }

  JudgeVerdict verdict(const taskgen::Problem& problem,
                       std::span<const int> program, Rng& rng) const override {
    return oracle_judge(problem, program, cfg_, *answers_, rng);
  }

  const JudgeConfig& config() const { return cfg_; }

 private:
  JudgeConfig cfg_;
  const taskgen::AnswerBook* answers_;
};

// Zeroes the score of programs with fewer than guard_min_lines statements
// (a failed parse counts as zero statements). Pass-through when disabled.
Real apply_hacking_guard(std::span<const int> program, Real score,
                         const JudgeConfig& cfg);

// Reference prompt for wire-level judge implementations.
std::string render_judge_prompt(const std::string& question,
                                const std::string& solution);

struct RerankConfig {
  int hash_dim = 4096;
  int epochs = 30;
  Real lr = 0.02;
  Real l2 = 1e-4;
  uint64_t seed = 0;

  void validate() const;
};

struct RerankExample {
  std::vector<int> question;
  std::vector<int> program;
  bool correct = false;
};

struct RerankModel {
  int hash_dim = 0;
  std::vector<Real> w;
  Real bias = 0;
  int trained_on = 0;
};

// Logistic regression over hashed binary presence features: program
// unigrams/bigrams plus question-cross-program unigrams.
RerankModel rerank_train(std::span<const RerankExample> examples,
                         const RerankConfig& cfg);

Real rerank_score(const RerankModel& model, std::span<const int> question,
                  std::span<const int> program);

// Per-step totals: -beta*kl everywhere, plus the raw reward at the last
// step. kl must hold one entry per trajectory step.
std::vector<Real> assemble_total_rewards(Real raw_terminal,
                                         std::span<const Real> kl, Real beta,
                                         size_t trajectory_len);

}  // namespace potrl::rewards
