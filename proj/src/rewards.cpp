#include "potrl/rewards.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>

#include "potrl/interp.hpp"
#include "potrl/mathx.hpp"

namespace potrl::rewards {

void JudgeConfig::validate() const {
  if (!(tau > 0)) throw ConfigError("judge tau must be positive");
  if (accept < 0 || accept > 1) throw ConfigError("judge accept must be in [0, 1]");
  if (p_acc < 0 || p_acc > 1) throw ConfigError("judge p_acc must be in [0, 1]");
  if (margin < 0) throw ConfigError("judge margin must be non-negative");
  if (jitter < 0) throw ConfigError("judge jitter must be non-negative");
  if (guard_min_lines < 0) throw ConfigError("judge guard_min_lines must be non-negative");
  if (length_bias_margin < 0) throw ConfigError("judge length_bias_margin must be non-negative");
  if (step_budget < 1) throw ConfigError("judge step_budget must be positive");
}

Real judge_score(Real log_yes, Real log_no, Real tau, Real accept) {
  if (!(tau > 0)) throw ConfigError("judge tau must be positive");
  Real s = sigmoid((log_yes - log_no) / tau);
  return s >= accept ? s : Real(0);
}

namespace {

// log sigma(u) without overflow on either tail.
Real log_sigmoid(Real u) {
  if (u >= 0) return -std::log1p(std::exp(-u));
  return u - std::log1p(std::exp(u));
}

}  // namespace

JudgeVerdict oracle_judge(const taskgen::Problem& problem,
                          std::span<const int> program, const JudgeConfig& cfg,
                          const taskgen::AnswerBook& answers, Rng& rng) {
  cfg.validate();
  int64_t truth = taskgen::truth_of(problem, answers);
  interp::ExecResult res = interp::run(program, cfg.step_budget);
  bool correct = interp::grade(res, truth) == Real(1);
  bool says_yes = rng.uniform() < cfg.p_acc ? correct : !correct;
  Real u = (says_yes ? cfg.margin : -cfg.margin) + cfg.jitter * rng.normal();
  if (cfg.length_bias_margin > 0 &&
      interp::statement_count(program) < cfg.length_bias_max_lines) {
    u += cfg.length_bias_margin;
  }
  JudgeVerdict v;
  v.log_yes = log_sigmoid(u);
  v.log_no = log_sigmoid(-u);
  v.score = judge_score(v.log_yes, v.log_no, cfg.tau, cfg.accept);
  v.tag = "oracle";
  return v;
}

Real apply_hacking_guard(std::span<const int> program, Real score,
                         const JudgeConfig& cfg) {
  if (!cfg.guard_enabled) return score;
  if (interp::statement_count(program) < cfg.guard_min_lines) return 0;
  return score;
}

std::string render_judge_prompt(const std::string& question,
                                const std::string& solution) {
  std::string out;
  out += "You are checking a student's worked solution to a word problem.\n";
  out += "The solution is a short straight-line program whose return value\n";
  out += "should equal the problem's answer.\n\n";
  out += "Problem:\n";
  out += question;
  out += "\n\nProposed solution:\n";
  out += solution;
  out += "\n\nDoes this solution produce the correct answer? Reply with a ";
  out += "single word, Yes or No.\n";
  return out;
}

void RerankConfig::validate() const {
  if (hash_dim < 2) throw ConfigError("rerank hash_dim must be >= 2");
  if (epochs < 1) throw ConfigError("rerank epochs must be positive");
  if (!(lr > 0)) throw ConfigError("rerank lr must be positive");
  if (l2 < 0) throw ConfigError("rerank l2 must be non-negative");
}

namespace {

uint64_t hash_tokens(uint64_t tag, int a, int b) {
  uint64_t h = 1469598103934665603ull ^ tag;
  auto mix = [&h](uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  mix(static_cast<uint64_t>(a) + 1);
  mix(static_cast<uint64_t>(b) + 1);
  return h;
}

constexpr uint64_t kTagProgUni = 1;
constexpr uint64_t kTagProgBi = 2;
constexpr uint64_t kTagCross = 3;

// Sparse binary presence features; deterministic slot order for
// reproducible training. Presence beats counts here: digit multiplicity
// varies wildly across operand draws and drowns the small per-example
// deltas that separate the classes.
std::vector<std::pair<int, Real>> featurize(std::span<const int> question,
                                            std::span<const int> program,
                                            int hash_dim) {
  std::vector<Real> dense(static_cast<size_t>(hash_dim), 0);
  auto bump = [&](uint64_t h) { dense[h % static_cast<uint64_t>(hash_dim)] = 1; };
  for (size_t i = 0; i < program.size(); ++i) {
    bump(hash_tokens(kTagProgUni, program[i], -1));
    if (i + 1 < program.size()) bump(hash_tokens(kTagProgBi, program[i], program[i + 1]));
  }
  for (int q : question)
    for (int p : program) bump(hash_tokens(kTagCross, q, p));
  std::vector<std::pair<int, Real>> sparse;
  for (int i = 0; i < hash_dim; ++i)
    if (dense[static_cast<size_t>(i)] != 0) sparse.emplace_back(i, dense[static_cast<size_t>(i)]);
  return sparse;
}

}  // namespace

RerankModel rerank_train(std::span<const RerankExample> examples,
                         const RerankConfig& cfg) {
  cfg.validate();
  if (examples.empty()) throw TrainingError("rerank training set is empty");
  bool has_pos = false, has_neg = false;
  for (const auto& e : examples) (e.correct ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw TrainingError("rerank training set has a single class");

  std::vector<std::vector<std::pair<int, Real>>> feats;
  feats.reserve(examples.size());
  for (const auto& e : examples)
    feats.push_back(featurize(e.question, e.program, cfg.hash_dim));

  RerankModel model;
  model.hash_dim = cfg.hash_dim;
  model.w.assign(static_cast<size_t>(cfg.hash_dim), 0);
  model.trained_on = static_cast<int>(examples.size());

  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "rerank/train", static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    for (size_t idx : order) {
      Real dot = model.bias;
      for (auto [slot, cnt] : feats[idx]) dot += model.w[static_cast<size_t>(slot)] * cnt;
      Real err = sigmoid(dot) - (examples[idx].correct ? Real(1) : Real(0));
      for (auto [slot, cnt] : feats[idx]) {
        Real& w = model.w[static_cast<size_t>(slot)];
        w -= cfg.lr * (err * cnt + cfg.l2 * w);
      }
      model.bias -= cfg.lr * err;
    }
  }
  return model;
}

Real rerank_score(const RerankModel& model, std::span<const int> question,
                  std::span<const int> program) {
  if (model.hash_dim < 2 || model.w.size() != static_cast<size_t>(model.hash_dim))
    throw InputError("rerank model is uninitialized");
  Real dot = model.bias;
  for (auto [slot, cnt] : featurize(question, program, model.hash_dim))
    dot += model.w[static_cast<size_t>(slot)] * cnt;
  return sigmoid(dot);
}

std::vector<Real> assemble_total_rewards(Real raw_terminal,
                                         std::span<const Real> kl, Real beta,
                                         size_t trajectory_len) {
  if (kl.empty()) throw InputError("assemble_total_rewards: empty kl sequence");
  if (kl.size() != trajectory_len)
    throw InputError("assemble_total_rewards: kl length does not match trajectory");
  std::vector<Real> out(kl.size());
  for (size_t t = 0; t < kl.size(); ++t) out[t] = -beta * kl[t];
  out.back() += raw_terminal;
  return out;
}

}  // namespace potrl::rewards
