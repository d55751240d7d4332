#include "potrl/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <thread>

#include <json.hpp>

#include "potrl/interp.hpp"
#include "potrl/mathx.hpp"
#include "potrl/vocab.hpp"

namespace potrl::trainer {

namespace {

using json = nlohmann::ordered_json;

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int t = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(t));
  std::atomic<int> next{0};
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// Deterministic cycling sampler: a fresh seeded shuffle every epoch, so the
// stream depends only on (seed, tag, draw count) and resumes exactly.
class Loader {
 public:
  Loader(const std::vector<taskgen::Problem>& split, uint64_t seed,
         std::string tag)
      : split_(&split), seed_(seed), tag_(std::move(tag)) {
    if (split.empty()) throw ConfigError("loader over an empty split: " + tag_);
    perm_.resize(split.size());
  }

  const taskgen::Problem& next() {
    size_t n = split_->size();
    auto epoch = static_cast<uint64_t>(count_ / static_cast<int64_t>(n));
    auto pos = static_cast<size_t>(count_ % static_cast<int64_t>(n));
    if (pos == 0) {
      for (size_t i = 0; i < n; ++i) perm_[i] = i;
      Rng rng(derive_seed(seed_, tag_, epoch));
      rng.shuffle(perm_);
    }
    ++count_;
    return (*split_)[perm_[pos]];
  }

  void skip(int64_t n) {
    for (int64_t i = 0; i < n; ++i) next();
  }

 private:
  const std::vector<taskgen::Problem>* split_;
  std::vector<size_t> perm_;
  uint64_t seed_;
  std::string tag_;
  int64_t count_ = 0;
};

uint64_t hash_reals(uint64_t h, std::span<const Real> xs) {
  for (Real x : xs) {
    uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

bool all_finite(std::span<const Real> xs) {
  for (Real x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

Real mean_of(std::span<const Real> xs) {
  Real s = 0;
  for (Real x : xs) s += x;
  return xs.empty() ? 0 : s / static_cast<Real>(xs.size());
}

}  // namespace

RlAlgo rl_algo_from_name(const std::string& name) {
  if (name == "ppo") return RlAlgo::kPpo;
  if (name == "grpo") return RlAlgo::kGrpo;
  throw ConfigError("unknown rl algorithm: " + name);
}

Schedule schedule_from_name(const std::string& name) {
  if (name == "joint") return Schedule::kJoint;
  if (name == "alternate") return Schedule::kAlternate;
  throw ConfigError("unknown schedule: " + name);
}

CollapseAction collapse_action_from_name(const std::string& name) {
  if (name == "flag") return CollapseAction::kFlag;
  if (name == "halt") return CollapseAction::kHalt;
  throw ConfigError("unknown collapse action: " + name);
}

void MixConfig::validate() const {
  if (lambda < 0 || mu < 0 || rho < 0)
    throw ConfigError("mix coefficients must be nonnegative");
  if (std::abs(lambda + mu + rho - 1.0) > 1e-9)
    throw ConfigError("mix coefficients must sum to 1");
}

Real mix_losses(std::optional<Real> l_vr, std::optional<Real> l_yon,
                std::optional<Real> l_rerank, const MixConfig& mix) {
  mix.validate();
  Real total = 0;
  auto add = [&total](Real coeff, const std::optional<Real>& loss,
                      const char* name) {
    if (coeff == 0) return;
    if (!loss.has_value())
      throw InputError(std::string("mix_losses: missing loss for active channel ") + name);
    total += coeff * *loss;
  };
  add(mix.lambda, l_vr, "vr");
  add(mix.mu, l_yon, "yon");
  add(mix.rho, l_rerank, "rerank");
  return total;
}

std::string step_record_json(const StepRecord& r) {
  json rec;
  rec["step"] = r.step;
  rec["round"] = r.round;
  if (r.reward_vr) rec["reward_vr"] = *r.reward_vr;
  if (r.reward_yon) rec["reward_yon"] = *r.reward_yon;
  if (r.reward_rerank) rec["reward_rerank"] = *r.reward_rerank;
  rec["kl"] = r.kl;
  rec["resp_len"] = r.resp_len;
  rec["loss"] = r.loss;
  rec["loss_policy"] = r.loss_policy;
  rec["loss_value"] = r.loss_value;
  if (r.eval_clean) rec["eval_clean"] = *r.eval_clean;
  if (r.skipped_nan) rec["skipped_nan"] = true;
  rec["collapsed"] = r.collapsed;
  return rec.dump();
}

bool detect_collapse(std::span<const StepRecord> records, Real baseline_len,
                     const CollapseConfig& cfg) {
  if (cfg.window < 1) throw ConfigError("collapse window must be positive");
  if (static_cast<int>(records.size()) < cfg.window)
    throw InputError("detect_collapse: window longer than history");
  if (!(baseline_len > 0)) throw InputError("detect_collapse: baseline length must be positive");
  Real len_sum = 0, judge_sum = 0;
  for (size_t i = records.size() - static_cast<size_t>(cfg.window);
       i < records.size(); ++i) {
    len_sum += records[i].resp_len;
    judge_sum += records[i].reward_yon.value_or(0);
  }
  Real w = static_cast<Real>(cfg.window);
  return len_sum / w < cfg.length_floor_frac * baseline_len &&
         judge_sum / w > cfg.judge_ceiling;
}

SftResult warmup_sft(const policy::Net& net, const policy::Model& init,
                     const taskgen::DatasetBundle& data, const SftConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("sft epochs must be nonnegative");
  if (cfg.batch < 1) throw ConfigError("sft batch must be positive");
  if (!(cfg.lr > 0)) throw ConfigError("sft lr must be positive");
  if (data.labeled.empty()) throw ConfigError("sft needs a non-empty labeled split");

  SftResult out;
  out.checkpoint.model = init;
  out.checkpoint.phase = "sft";
  policy::Model& m = out.checkpoint.model;

  // Targets are the gold programs, reconstructed from the clean questions.
  std::vector<std::vector<int>> targets;
  targets.reserve(data.labeled.size());
  for (const auto& p : data.labeled) {
    auto ops = taskgen::extract_operands(p.template_id, p.question);
    targets.push_back(taskgen::gold_program(p.template_id, ops));
  }

  algo::AdamConfig acfg;
  acfg.lr = cfg.lr;
  algo::Adam adam(acfg, m.params.size());
  std::vector<Real> grad(m.params.size());
  std::vector<size_t> order(data.labeled.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, "sft/epoch", static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch)) {
      size_t hi = std::min(order.size(), at + static_cast<size_t>(cfg.batch));
      std::vector<policy::SftItem> items;
      items.reserve(hi - at);
      for (size_t k = at; k < hi; ++k)
        items.push_back({data.labeled[order[k]].question, targets[order[k]]});
      std::fill(grad.begin(), grad.end(), 0.0);
      Real loss = policy::sft_loss_and_grad(net, m, items, grad);
      if (!std::isfinite(loss) || !all_finite(grad))
        throw TrainingError("sft loss diverged at epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(out.losses.size()));
      adam.step(m.params, grad);
      out.losses.push_back(loss);
    }
  }
  out.checkpoint.step = static_cast<int64_t>(out.losses.size());
  out.checkpoint.adam = adam.state();
  return out;
}

void RlConfig::validate() const {
  mix.validate();
  if (steps < 1) throw ConfigError("rl steps must be positive");
  if (batch < 1) throw ConfigError("rl batch must be positive");
  if (grpo_batch < 1) throw ConfigError("grpo batch must be positive");
  if (group_size < 2) throw ConfigError("grpo group size must be >= 2");
  if (ppo_epochs < 1) throw ConfigError("ppo_epochs must be positive");
  if (gamma < 0 || gamma > 1) throw ConfigError("gamma must be in [0, 1]");
  if (gae_lambda < 0 || gae_lambda > 1) throw ConfigError("gae lambda must be in [0, 1]");
  if (!(clip_eps > 0)) throw ConfigError("clip epsilon must be positive");
  if (alpha < 0) throw ConfigError("alpha must be nonnegative");
  if (beta < 0) throw ConfigError("beta must be nonnegative");
  if (!(lr > 0)) throw ConfigError("rl lr must be positive");
  if (eval_every < 0) throw ConfigError("eval_every must be nonnegative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be nonnegative");
  if (checkpoint_every > 0 && checkpoint_every % ppo_epochs != 0)
    throw ConfigError("checkpoint_every must be a multiple of ppo_epochs");
  if (step_budget < 1) throw ConfigError("step_budget must be positive");
  if (workers < 1) throw ConfigError("workers must be positive");
  if (max_consecutive_nan < 1) throw ConfigError("max_consecutive_nan must be positive");
  if (rerank_rollouts_per_problem < 0)
    throw ConfigError("rerank_rollouts_per_problem must be nonnegative");
  if (rerank_max_problems < 1) throw ConfigError("rerank_max_problems must be positive");
  judge.validate();
  if (mix.rho > 0) rerank.validate();
}

std::vector<rewards::RerankExample> build_rerank_training_set(
    const policy::Net& net, const policy::Model& warmup,
    std::span<const taskgen::Problem> labeled, const RlConfig& cfg) {
  if (labeled.empty()) throw ConfigError("rerank training needs labeled problems");
  size_t n = std::min(labeled.size(), static_cast<size_t>(cfg.rerank_max_problems));
  std::vector<std::vector<rewards::RerankExample>> per(n);
  parallel_for(static_cast<int>(n), cfg.workers, [&](int i) {
    const auto& p = labeled[static_cast<size_t>(i)];
    if (!p.answer.has_value())
      throw ConfigError("rerank training problem has no answer");
    auto ops = taskgen::extract_operands(p.template_id, p.question);
    auto gold = taskgen::gold_program(p.template_id, ops);
    auto& out = per[static_cast<size_t>(i)];
    out.push_back({p.question, gold, true});
    // Deterministic near miss: first literal digit bumped to a wrong value.
    Rng rng(derive_seed(cfg.seed, "rerank/data", static_cast<uint64_t>(i)));
    auto near = gold;
    for (auto& tok : near) {
      if (Vocabulary::is_digit(tok)) {
        int d = Vocabulary::digit_value(tok);
        tok = Vocabulary::digit_token((d + 1 + static_cast<int>(rng.uniform_int(9))) % 10);
        break;
      }
    }
    if (interp::grade(interp::run(near, cfg.step_budget), *p.answer) != Real(1))
      out.push_back({p.question, near, false});
    for (int j = 0; j < cfg.rerank_rollouts_per_problem; ++j) {
      auto resp = eval::sample_response(net, warmup, p.question, 1.0, rng);
      bool ok = interp::grade(interp::run(resp, cfg.step_budget), *p.answer) == Real(1);
      out.push_back({p.question, std::move(resp), ok});
    }
  });
  std::vector<rewards::RerankExample> flat;
  for (auto& v : per)
    for (auto& e : v) flat.push_back(std::move(e));
  return flat;
}

Real baseline_response_length(const policy::Net& net,
                              const policy::Model& warmup,
                              std::span<const taskgen::Problem> problems,
                              int max_problems, uint64_t seed) {
  if (problems.empty()) throw ConfigError("baseline length needs problems");
  size_t n = std::min(problems.size(), static_cast<size_t>(max_problems));
  Real total = 0;
  for (size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "baseline", static_cast<uint64_t>(i)));
    auto resp = eval::sample_response(net, warmup, problems[i].question, 1.0, rng);
    total += static_cast<Real>(resp.size());
  }
  return total / static_cast<Real>(n);
}

namespace {

// One channel's frozen per-round data under PPO.
struct PpoChannel {
  Real coeff = 0;
  std::vector<Real> raw;                    // terminal rewards, for metrics
  std::vector<std::vector<Real>> adv, ret;  // per trajectory, per token
};

// One channel's frozen per-round data under GRPO.
struct GrpoChannel {
  Real coeff = 0;
  std::vector<Real> raw;
  std::vector<Real> adv;  // one scalar per trajectory
};

struct RoundBatch {
  std::vector<const taskgen::Problem*> problems;  // one per trajectory
  std::vector<policy::Trajectory> trajs;
};

uint64_t checksum_ppo(const std::vector<const PpoChannel*>& channels) {
  uint64_t h = 1469598103934665603ull;
  for (const auto* c : channels) {
    for (const auto& a : c->adv) h = hash_reals(h, a);
    for (const auto& r : c->ret) h = hash_reals(h, r);
  }
  return h;
}

struct Sides {
  bool labeled = false;
  bool unlabeled = false;
  MixConfig effective;
};

// Which loaders a round touches, and the coefficients re-normalized when the
// alternate schedule silences one side.
Sides sides_for_round(const RlConfig& cfg, int64_t round) {
  bool has_l = cfg.mix.lambda > 0;
  bool has_u = cfg.mix.mu > 0 || cfg.mix.rho > 0;
  Sides s;
  s.effective = cfg.mix;
  if (cfg.schedule == Schedule::kJoint || !has_l || !has_u) {
    s.labeled = has_l;
    s.unlabeled = has_u;
    return s;
  }
  if (round % 2 == 0) {
    s.labeled = true;
    s.effective = MixConfig{1.0, 0.0, 0.0};
  } else {
    s.unlabeled = true;
    Real u = cfg.mix.mu + cfg.mix.rho;
    s.effective = MixConfig{0.0, cfg.mix.mu / u, cfg.mix.rho / u};
  }
  return s;
}

}  // namespace

RlResult train_rl(const policy::Net& net, const policy::Checkpoint& warmup,
                  const taskgen::DatasetBundle& data, const RlConfig& cfg,
                  const std::filesystem::path& out_dir,
                  const policy::Checkpoint* resume,
                  const std::function<void(const StepRecord&)>& on_record) {
  cfg.validate();
  const bool want_labeled = cfg.mix.lambda > 0;
  const bool want_unlabeled = cfg.mix.mu > 0 || cfg.mix.rho > 0;
  if (want_labeled && data.labeled.empty())
    throw ConfigError("vr channel active but labeled split is empty");
  if (want_unlabeled && data.unlabeled.empty())
    throw ConfigError("judge/rerank channel active but unlabeled split is empty");
  if (cfg.mix.rho > 0 && data.labeled.empty())
    throw ConfigError("rerank channel needs labeled problems to fit its scorer");
  // No-leak invariant: the trainer must never see unlabeled answers.
  for (const auto& p : data.unlabeled) {
    if (p.answer.has_value())
      throw ConfigError("unlabeled problem " + std::to_string(p.id) +
                        " carries an answer");
  }
  if (warmup.model.cfg != net.config())
    throw ConfigError("warm-up checkpoint does not match the model config");

  const policy::Model& ref = warmup.model;
  policy::Model actor = resume ? resume->model : warmup.model;
  if (actor.cfg != net.config())
    throw ConfigError("resume checkpoint does not match the model config");

  algo::AdamConfig acfg;
  acfg.lr = cfg.lr;
  std::optional<algo::Adam> adam;
  int64_t start_step = 0;
  if (resume) {
    if (!resume->adam.has_value())
      throw ConfigError("resume checkpoint has no optimizer state");
    if (resume->step % cfg.ppo_epochs != 0)
      throw ConfigError("resume step must sit on a rollout-round boundary");
    adam.emplace(acfg, *resume->adam);
    start_step = resume->step;
  } else {
    adam.emplace(acfg, actor.params.size());
  }

  std::filesystem::create_directories(out_dir);

  std::optional<rewards::OracleJudge> judge;
  if (cfg.mix.mu > 0) judge.emplace(cfg.judge, &data.answers);

  std::optional<rewards::RerankModel> rerank_model;
  if (cfg.mix.rho > 0) {
    auto examples = build_rerank_training_set(net, warmup.model, data.labeled, cfg);
    auto rcfg = cfg.rerank;
    rcfg.seed = derive_seed(cfg.seed, "rerank/seed");
    rerank_model = rewards::rerank_train(examples, rcfg);
  }

  const auto& baseline_pool = !data.eval_clean.empty() ? data.eval_clean
                              : !data.labeled.empty() ? data.labeled
                                                      : data.unlabeled;
  Real baseline_len = baseline_response_length(net, warmup.model, baseline_pool,
                                               24, cfg.seed);

  const bool grpo = cfg.algo == RlAlgo::kGrpo;
  const int per_round_labeled = grpo ? cfg.grpo_batch : cfg.batch;
  const int per_round_unlabeled = per_round_labeled;

  std::optional<Loader> labeled_loader, unlabeled_loader;
  if (want_labeled) labeled_loader.emplace(data.labeled, cfg.seed, "loader/labeled");
  if (want_unlabeled)
    unlabeled_loader.emplace(data.unlabeled, cfg.seed, "loader/unlabeled");

  // Fast-forward the loaders over the rounds a resumed run already consumed.
  int64_t start_round = start_step / cfg.ppo_epochs;
  for (int64_t r = 0; r < start_round; ++r) {
    auto s = sides_for_round(cfg, r);
    if (s.labeled) labeled_loader->skip(per_round_labeled);
    if (s.unlabeled) unlabeled_loader->skip(per_round_unlabeled);
  }

  RlResult result;
  result.collapsed = false;
  auto& records = result.metrics.records;

  const int vocab = net.config().vocab;
  const size_t n_params = actor.params.size();

  auto raw_reward = [&](const taskgen::Problem& p, const policy::Trajectory& tj,
                        int channel, Rng* judge_rng) -> Real {
    switch (channel) {
      case 0:
        return interp::grade(interp::run(tj.response, cfg.step_budget),
                             taskgen::truth_of(p, data.answers));
      case 1: {
        auto v = judge->verdict(p, tj.response, *judge_rng);
        return rewards::apply_hacking_guard(tj.response, v.score, cfg.judge);
      }
      default:
        return rewards::rerank_score(*rerank_model, p.question, tj.response);
    }
  };

  auto rollout_side = [&](Loader& loader, const char* tag, int64_t round,
                          int count) {
    RoundBatch b;
    b.problems.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) b.problems.push_back(&loader.next());
    if (grpo) {
      // G rollouts per question, flattened in question-major order.
      std::vector<const taskgen::Problem*> expanded;
      for (const auto* p : b.problems)
        for (int g = 0; g < cfg.group_size; ++g) expanded.push_back(p);
      b.problems = std::move(expanded);
    }
    b.trajs.resize(b.problems.size());
    parallel_for(static_cast<int>(b.problems.size()), cfg.workers, [&](int i) {
      Rng rng(derive_seed(cfg.seed, tag, static_cast<uint64_t>(round),
                          static_cast<uint64_t>(i)));
      b.trajs[static_cast<size_t>(i)] = policy::sample_trajectory(
          net, actor, ref, b.problems[static_cast<size_t>(i)]->question, rng);
    });
    return b;
  };

  auto score_channel_ppo = [&](const RoundBatch& b, int channel, Real coeff,
                               int64_t round) {
    PpoChannel c;
    c.coeff = coeff;
    size_t n = b.trajs.size();
    c.raw.resize(n);
    c.adv.resize(n);
    c.ret.resize(n);
    parallel_for(static_cast<int>(n), cfg.workers, [&](int i) {
      auto si = static_cast<size_t>(i);
      const auto& tj = b.trajs[si];
      Rng jr(derive_seed(cfg.seed, "judge", static_cast<uint64_t>(round),
                         static_cast<uint64_t>(i)));
      Real raw = raw_reward(*b.problems[si], tj, channel, &jr);
      c.raw[si] = raw;
      auto totals = rewards::assemble_total_rewards(raw, tj.kl_ref, cfg.beta,
                                                    tj.response.size());
      auto g = algo::gae(totals, tj.value, cfg.gamma, cfg.gae_lambda);
      c.adv[si] = std::move(g.advantage);
      c.ret[si] = std::move(g.ret);
    });
    return c;
  };

  auto score_channel_grpo = [&](const RoundBatch& b, int channel, Real coeff,
                                int64_t round) {
    GrpoChannel c;
    c.coeff = coeff;
    size_t n = b.trajs.size();
    c.raw.resize(n);
    parallel_for(static_cast<int>(n), cfg.workers, [&](int i) {
      auto si = static_cast<size_t>(i);
      Rng jr(derive_seed(cfg.seed, "judge", static_cast<uint64_t>(round),
                         static_cast<uint64_t>(i)));
      c.raw[si] = raw_reward(*b.problems[si], b.trajs[si], channel, &jr);
    });
    c.adv.resize(n);
    size_t g = static_cast<size_t>(cfg.group_size);
    for (size_t at = 0; at < n; at += g) {
      auto grp = algo::group_advantages(std::span(c.raw).subspan(at, g));
      std::copy(grp.begin(), grp.end(), c.adv.begin() + static_cast<int64_t>(at));
    }
    return c;
  };

  // Per-trajectory gradient work buffers, reduced in index order so results
  // never depend on the worker count.
  struct TrajScratch {
    std::vector<Real> grad;
    Real policy_loss = 0, value_loss = 0;
  };

  // PPO: one inner update's loss and gradient over a channel batch.
  auto ppo_channel_update = [&](const RoundBatch& b, const PpoChannel& c,
                                std::span<Real> grad, Real& policy_out,
                                Real& value_out) {
    size_t n = b.trajs.size();
    std::vector<TrajScratch> scratch(n);
    Real scale = c.coeff / static_cast<Real>(n);
    parallel_for(static_cast<int>(n), cfg.workers, [&](int i) {
      auto si = static_cast<size_t>(i);
      const auto& tj = b.trajs[si];
      auto& s = scratch[si];
      s.grad.assign(n_params, 0.0);
      auto scored = policy::score_response(net, actor.params,
                                           b.problems[si]->question, tj.response);
      int T = scored.tape.T;
      int L = static_cast<int>(tj.response.size());
      std::vector<Real> dlogits(static_cast<size_t>(T) * static_cast<size_t>(vocab), 0.0);
      std::vector<Real> dvalue(static_cast<size_t>(T), 0.0);
      std::vector<Real> logits(static_cast<size_t>(vocab));
      std::vector<Real> probs(static_cast<size_t>(vocab));
      for (int t = 0; t < L; ++t) {
        auto st = static_cast<size_t>(t);
        auto tok = algo::ppo_token_loss(scored.logprob[st], tj.logprob[st],
                                        c.adv[si][st], c.ret[si][st],
                                        scored.value[st], tj.value[st],
                                        cfg.clip_eps, cfg.value_clip);
        s.policy_loss += tok.policy_loss;
        s.value_loss += tok.value_loss;
        int row = scored.prefix - 1 + t;
        if (tok.d_logprob != 0) {
          net.logits_at(actor.params, scored.tape, row, logits);
          softmax(logits, probs);
          Real* dst = dlogits.data() + static_cast<size_t>(row) * static_cast<size_t>(vocab);
          Real d = scale * tok.d_logprob;
          for (int k = 0; k < vocab; ++k) dst[static_cast<size_t>(k)] -= d * probs[static_cast<size_t>(k)];
          dst[static_cast<size_t>(tj.response[st])] += d;
        }
        dvalue[static_cast<size_t>(scored.prefix + t)] = scale * cfg.alpha * tok.d_value;
      }
      net.backward(actor.params, scored.tape, dlogits, dvalue, s.grad);
    });
    Real psum = 0, vsum = 0;
    for (size_t i = 0; i < n; ++i) {
      psum += scratch[i].policy_loss;
      vsum += scratch[i].value_loss;
      for (size_t k = 0; k < n_params; ++k) grad[k] += scratch[i].grad[k];
    }
    policy_out = psum / static_cast<Real>(n);
    value_out = vsum / static_cast<Real>(n);
  };

  // GRPO: reference log-distributions are fixed per round, computed once.
  auto grpo_ref_rows = [&](const RoundBatch& b) {
    size_t n = b.trajs.size();
    std::vector<std::vector<Real>> rows(n);
    parallel_for(static_cast<int>(n), cfg.workers, [&](int i) {
      auto si = static_cast<size_t>(i);
      const auto& tj = b.trajs[si];
      auto scored = policy::score_response(net, ref.params,
                                           b.problems[si]->question, tj.response);
      int L = static_cast<int>(tj.response.size());
      auto& out = rows[si];
      out.resize(static_cast<size_t>(L) * static_cast<size_t>(vocab));
      std::vector<Real> logits(static_cast<size_t>(vocab));
      for (int t = 0; t < L; ++t) {
        net.logits_at(ref.params, scored.tape, scored.prefix - 1 + t, logits);
        log_softmax(logits, std::span(out).subspan(
                                static_cast<size_t>(t) * static_cast<size_t>(vocab),
                                static_cast<size_t>(vocab)));
      }
    });
    return rows;
  };

  auto grpo_channel_update = [&](const RoundBatch& b, const GrpoChannel& c,
                                 const std::vector<std::vector<Real>>& ref_rows,
                                 std::span<Real> grad, Real& loss_out) {
    size_t n = b.trajs.size();
    size_t nq = n / static_cast<size_t>(cfg.group_size);
    std::vector<TrajScratch> scratch(n);
    parallel_for(static_cast<int>(n), cfg.workers, [&](int i) {
      auto si = static_cast<size_t>(i);
      const auto& tj = b.trajs[si];
      auto& s = scratch[si];
      s.grad.assign(n_params, 0.0);
      auto scored = policy::score_response(net, actor.params,
                                           b.problems[si]->question, tj.response);
      int T = scored.tape.T;
      int L = static_cast<int>(tj.response.size());
      Real scale = c.coeff / (static_cast<Real>(nq) * static_cast<Real>(cfg.group_size) *
                              static_cast<Real>(L));
      std::vector<Real> dlogits(static_cast<size_t>(T) * static_cast<size_t>(vocab), 0.0);
      std::vector<Real> dvalue(static_cast<size_t>(T), 0.0);
      std::vector<Real> logits(static_cast<size_t>(vocab));
      std::vector<Real> logp(static_cast<size_t>(vocab));
      Real a = c.adv[si];
      for (int t = 0; t < L; ++t) {
        auto st = static_cast<size_t>(t);
        int row = scored.prefix - 1 + t;
        net.logits_at(actor.params, scored.tape, row, logits);
        log_softmax(logits, logp);
        Real ratio = std::exp(scored.logprob[st] - tj.logprob[st]);
        Real lo = 1 - cfg.clip_eps, hi = 1 + cfg.clip_eps;
        Real s1 = ratio * a;
        Real s2 = std::clamp(ratio, lo, hi) * a;
        Real* dst = dlogits.data() + static_cast<size_t>(row) * static_cast<size_t>(vocab);
        if (s1 <= s2) {
          // Unclipped branch carries the surrogate gradient.
          s.policy_loss += -s1;
          Real d = -scale * s1;  // d(-ratio*a)/dlogprob = -ratio*a
          for (int k = 0; k < vocab; ++k)
            dst[static_cast<size_t>(k)] -= d * std::exp(logp[static_cast<size_t>(k)]);
          dst[static_cast<size_t>(tj.response[st])] += d;
        } else {
          s.policy_loss += -s2;
        }
        auto ref_row = std::span(ref_rows[si]).subspan(
            st * static_cast<size_t>(vocab), static_cast<size_t>(vocab));
        Real kl = algo::kl_categorical(logp, ref_row);
        s.policy_loss += cfg.beta * kl;
        algo::kl_grad_wrt_logits(logp, ref_row, scale * cfg.beta,
                                 std::span(dst, static_cast<size_t>(vocab)));
      }
      // Per-token mean inside the trajectory, then mean over the group.
      s.policy_loss /= static_cast<Real>(L);
      net.backward(actor.params, scored.tape, dlogits, dvalue, s.grad);
    });
    Real sum = 0;
    for (size_t i = 0; i < n; ++i) {
      sum += scratch[i].policy_loss;
      for (size_t k = 0; k < n_params; ++k) grad[k] += scratch[i].grad[k];
    }
    loss_out = sum / static_cast<Real>(n);
  };

  auto save_ck = [&](const std::filesystem::path& path, int64_t step) {
    policy::Checkpoint ck;
    ck.model = actor;
    ck.step = step;
    ck.phase = "rl";
    ck.adam = adam->state();
    policy::save_checkpoint(ck, path);
  };

  int64_t update = start_step;
  int64_t round = start_round;
  int consecutive_nan = 0;
  bool pending_skip = false;
  bool sticky_collapse = false;
  bool halted = false;

  try {
    while (update < cfg.steps && !halted) {
      auto sides = sides_for_round(cfg, round);

      std::optional<RoundBatch> lab, unlab;
      if (sides.labeled)
        lab = rollout_side(*labeled_loader, "rollout/labeled", round,
                           per_round_labeled);
      if (sides.unlabeled)
        unlab = rollout_side(*unlabeled_loader, "rollout/unlabeled", round,
                             per_round_unlabeled);

      // Round-level diagnostics over every sampled trajectory.
      Real len_sum = 0, kl_sum = 0;
      int64_t tok_count = 0, traj_count = 0;
      for (const auto* b : {lab ? &*lab : nullptr, unlab ? &*unlab : nullptr}) {
        if (!b) continue;
        for (const auto& tj : b->trajs) {
          len_sum += static_cast<Real>(tj.response.size());
          for (Real k : tj.kl_ref) kl_sum += k;
          tok_count += static_cast<int64_t>(tj.kl_ref.size());
          ++traj_count;
        }
      }
      Real mean_len = traj_count ? len_sum / static_cast<Real>(traj_count) : 0;
      Real mean_kl = tok_count ? kl_sum / static_cast<Real>(tok_count) : 0;

      std::optional<PpoChannel> vr_p, yon_p, rr_p;
      std::optional<GrpoChannel> vr_g, yon_g, rr_g;
      std::vector<std::vector<Real>> ref_rows_lab, ref_rows_unlab;
      if (!grpo) {
        if (sides.labeled && sides.effective.lambda > 0)
          vr_p = score_channel_ppo(*lab, 0, sides.effective.lambda, round);
        if (sides.unlabeled && sides.effective.mu > 0)
          yon_p = score_channel_ppo(*unlab, 1, sides.effective.mu, round);
        if (sides.unlabeled && sides.effective.rho > 0)
          rr_p = score_channel_ppo(*unlab, 2, sides.effective.rho, round);
      } else {
        if (sides.labeled && sides.effective.lambda > 0)
          vr_g = score_channel_grpo(*lab, 0, sides.effective.lambda, round);
        if (sides.unlabeled && sides.effective.mu > 0)
          yon_g = score_channel_grpo(*unlab, 1, sides.effective.mu, round);
        if (sides.unlabeled && sides.effective.rho > 0)
          rr_g = score_channel_grpo(*unlab, 2, sides.effective.rho, round);
        if (sides.labeled) ref_rows_lab = grpo_ref_rows(*lab);
        if (sides.unlabeled) ref_rows_unlab = grpo_ref_rows(*unlab);
      }

      std::vector<const PpoChannel*> frozen;
      for (const auto* c : {vr_p ? &*vr_p : nullptr, yon_p ? &*yon_p : nullptr,
                            rr_p ? &*rr_p : nullptr})
        if (c) frozen.push_back(c);
      uint64_t frozen_sum = checksum_ppo(frozen);

      std::vector<Real> grad(n_params);

      for (int e = 0; e < cfg.ppo_epochs && update < cfg.steps && !halted;) {
        std::fill(grad.begin(), grad.end(), 0.0);
        std::optional<Real> l_vr, l_yon, l_rerank;
        Real policy_mixed = 0, value_mixed = 0;

        if (!grpo) {
          auto run_channel = [&](const RoundBatch& b, const PpoChannel& c,
                                 std::optional<Real>& slot) {
            Real lp = 0, lv = 0;
            ppo_channel_update(b, c, grad, lp, lv);
            slot = lp + cfg.alpha * lv;
            policy_mixed += c.coeff * lp;
            value_mixed += c.coeff * lv;
          };
          if (vr_p) run_channel(*lab, *vr_p, l_vr);
          if (yon_p) run_channel(*unlab, *yon_p, l_yon);
          if (rr_p) run_channel(*unlab, *rr_p, l_rerank);
        } else {
          auto run_channel = [&](const RoundBatch& b, const GrpoChannel& c,
                                 const std::vector<std::vector<Real>>& rows,
                                 std::optional<Real>& slot) {
            Real l = 0;
            grpo_channel_update(b, c, rows, grad, l);
            slot = l;
            policy_mixed += c.coeff * l;
          };
          if (vr_g) run_channel(*lab, *vr_g, ref_rows_lab, l_vr);
          if (yon_g) run_channel(*unlab, *yon_g, ref_rows_unlab, l_yon);
          if (rr_g) run_channel(*unlab, *rr_g, ref_rows_unlab, l_rerank);
        }

        Real loss = mix_losses(l_vr, l_yon, l_rerank, sides.effective);

        if (!std::isfinite(loss) || !all_finite(grad)) {
          ++consecutive_nan;
          pending_skip = true;
          if (consecutive_nan >= cfg.max_consecutive_nan) {
            save_ck(out_dir / "rl_abort.bin", update);
            throw TrainingError(
                "rl loss blew up at update " + std::to_string(update + 1) +
                "; last good checkpoint written to rl_abort.bin");
          }
          ++e;
          continue;
        }
        consecutive_nan = 0;

        adam->step(actor.params, grad);
        ++update;
        ++e;

        StepRecord rec;
        rec.step = update;
        rec.round = round;
        if (!grpo) {
          if (vr_p) rec.reward_vr = mean_of(vr_p->raw);
          if (yon_p) rec.reward_yon = mean_of(yon_p->raw);
          if (rr_p) rec.reward_rerank = mean_of(rr_p->raw);
        } else {
          if (vr_g) rec.reward_vr = mean_of(vr_g->raw);
          if (yon_g) rec.reward_yon = mean_of(yon_g->raw);
          if (rr_g) rec.reward_rerank = mean_of(rr_g->raw);
        }
        rec.kl = mean_kl;
        rec.resp_len = mean_len;
        rec.loss = loss;
        rec.loss_policy = policy_mixed;
        rec.loss_value = value_mixed;
        rec.skipped_nan = pending_skip;
        pending_skip = false;

        if (cfg.eval_every > 0 && update % cfg.eval_every == 0 &&
            !data.eval_clean.empty()) {
          rec.eval_clean = eval::evaluate_accuracy(net, actor, data.eval_clean,
                                                   data.answers, cfg.step_budget);
        }

        records.push_back(rec);
        if (!sticky_collapse &&
            static_cast<int>(records.size()) >= cfg.collapse.window &&
            detect_collapse(records, baseline_len, cfg.collapse)) {
          sticky_collapse = true;
          result.collapsed = true;
          if (cfg.collapse.action == CollapseAction::kHalt) halted = true;
        }
        records.back().collapsed = sticky_collapse;
        if (on_record) on_record(records.back());

        if (cfg.checkpoint_every > 0 && update % cfg.checkpoint_every == 0)
          save_ck(out_dir / "rl_checkpoint.bin", update);
      }

      if (!frozen.empty() && checksum_ppo(frozen) != frozen_sum)
        throw TrainingError("frozen advantages mutated during inner epochs");
      ++round;
    }
  } catch (const TrainingError&) {
    throw;
  } catch (const std::exception& e) {
    save_ck(out_dir / "rl_abort.bin", update);
    throw TrainingError(std::string("rl loop failed: ") + e.what() +
                        "; last good checkpoint written to rl_abort.bin");
  }

  result.optimizer_steps = update;
  result.final_checkpoint.model = actor;
  result.final_checkpoint.step = update;
  result.final_checkpoint.phase = "rl";
  result.final_checkpoint.adam = adam->state();
  save_checkpoint(result.final_checkpoint, out_dir / "rl_final.bin");
  return result;
}

}  // namespace potrl::trainer
