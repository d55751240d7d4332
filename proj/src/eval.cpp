#include "potrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "potrl/interp.hpp"
#include "potrl/mathx.hpp"
#include "potrl/vocab.hpp"

namespace potrl::eval {

namespace {

using json = nlohmann::ordered_json;

// Shared decode loop: temperature 0 means argmax.
std::vector<int> decode(const policy::Net& net, const policy::Model& m,
                        std::span<const int> question, Real temperature,
                        Rng* rng) {
  const int vocab = m.cfg.vocab;
  std::vector<Real> h(static_cast<size_t>(m.cfg.hidden), 0);
  net.consume(m.params, Vocabulary::kBos, h);
  for (int q : question) net.consume(m.params, q, h);

  std::vector<int> out;
  std::vector<Real> logits(static_cast<size_t>(vocab));
  std::vector<Real> probs(static_cast<size_t>(vocab));
  for (int t = 0; t < m.cfg.max_response; ++t) {
    net.logits_from(m.params, h, logits);
    int tok;
    if (temperature <= 0) {
      tok = 0;
      for (int k = 1; k < vocab; ++k)
        if (logits[static_cast<size_t>(k)] > logits[static_cast<size_t>(tok)]) tok = k;
    } else {
      for (int k = 0; k < vocab; ++k)
        logits[static_cast<size_t>(k)] /= temperature;
      softmax(logits, probs);
      tok = rng->categorical(probs);
    }
    out.push_back(tok);
    if (tok == Vocabulary::kEos) break;
    net.consume(m.params, tok, h);
  }
  return out;
}

std::optional<int64_t> run_value(std::span<const int> program, int step_budget) {
  auto res = interp::run(program, step_budget);
  if (res.status != interp::ExecStatus::kOk) return std::nullopt;
  return res.value;
}

}  // namespace

std::vector<int> greedy_response(const policy::Net& net, const policy::Model& m,
                                 std::span<const int> question) {
  return decode(net, m, question, 0, nullptr);
}

std::vector<int> sample_response(const policy::Net& net, const policy::Model& m,
                                 std::span<const int> question, Real temperature,
                                 Rng& rng) {
  if (!(temperature > 0)) throw ConfigError("sampling temperature must be positive");
  return decode(net, m, question, temperature, &rng);
}

Real evaluate_accuracy(const policy::Net& net, const policy::Model& m,
                       std::span<const taskgen::Problem> split,
                       const taskgen::AnswerBook& answers, int step_budget) {
  if (split.empty()) throw InputError("evaluate_accuracy: empty split");
  int64_t hits = 0;
  for (const auto& p : split) {
    auto resp = greedy_response(net, m, p.question);
    auto res = interp::run(resp, step_budget);
    if (interp::grade(res, taskgen::truth_of(p, answers)) == Real(1)) ++hits;
  }
  return static_cast<Real>(hits) / static_cast<Real>(split.size());
}

std::optional<int64_t> modal_answer(
    std::span<const std::optional<int64_t>> answers) {
  std::map<int64_t, int> counts;
  for (const auto& a : answers)
    if (a.has_value()) ++counts[*a];
  if (counts.empty()) return std::nullopt;
  int best = 0;
  for (const auto& [v, n] : counts) best = std::max(best, n);
  for (const auto& [v, n] : counts)
    if (n == best) return v;  // std::map order makes ties pick the smallest
  return std::nullopt;
}

std::optional<int64_t> majority_vote(const policy::Net& net,
                                     const policy::Model& m,
                                     const taskgen::Problem& problem, int k,
                                     Real temperature, Rng& rng,
                                     int step_budget) {
  if (k < 1) throw ConfigError("majority_vote: k must be >= 1");
  std::vector<std::optional<int64_t>> values;
  values.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    auto resp = sample_response(net, m, problem.question, temperature, rng);
    values.push_back(run_value(resp, step_budget));
  }
  return modal_answer(values);
}

Real voted_accuracy(const policy::Net& net, const policy::Model& m,
                    std::span<const taskgen::Problem> split,
                    const taskgen::AnswerBook& answers, int k, Real temperature,
                    uint64_t seed, int step_budget) {
  if (split.empty()) throw InputError("voted_accuracy: empty split");
  int64_t hits = 0;
  for (const auto& p : split) {
    Rng rng(derive_seed(seed, "vote", static_cast<uint64_t>(p.id)));
    auto voted = majority_vote(net, m, p, k, temperature, rng, step_budget);
    if (voted.has_value() && *voted == taskgen::truth_of(p, answers)) ++hits;
  }
  return static_cast<Real>(hits) / static_cast<Real>(split.size());
}

CandidateSupplier policy_supplier(const policy::Net& net, const policy::Model& m,
                                  int samples_per_question, Real temperature) {
  if (samples_per_question < 2)
    throw ConfigError("bench sampler needs at least 2 samples per question");
  return [&net, &m, samples_per_question, temperature](
             const taskgen::Problem& p, Rng& rng) {
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<size_t>(samples_per_question));
    for (int i = 0; i < samples_per_question; ++i)
      out.push_back(sample_response(net, m, p.question, temperature, rng));
    return out;
  };
}

BenchResult pairwise_bench(const PairScorer& scorer,
                           std::span<const taskgen::Problem> problems,
                           const CandidateSupplier& supplier,
                           const taskgen::AnswerBook& answers,
                           const BenchConfig& cfg) {
  if (cfg.n_pairs < 1 || cfg.min_pairs < 1)
    throw ConfigError("bench pair counts must be positive");
  BenchResult r;
  for (const auto& p : problems) {
    if (r.pairs >= cfg.n_pairs) break;
    Rng rng(derive_seed(cfg.seed, "bench", static_cast<uint64_t>(p.id)));
    auto candidates = supplier(p, rng);
    int64_t truth = taskgen::truth_of(p, answers);
    std::vector<const std::vector<int>*> correct, incorrect;
    for (const auto& c : candidates) {
      if (interp::grade(interp::run(c, cfg.step_budget), truth) == Real(1))
        correct.push_back(&c);
      else
        incorrect.push_back(&c);
    }
    if (correct.empty() || incorrect.empty()) continue;
    const auto& yw = *correct[rng.uniform_int(correct.size())];
    const auto& yl = *incorrect[rng.uniform_int(incorrect.size())];
    Real sw = scorer(p, yw, rng);
    Real sl = scorer(p, yl, rng);
    ++r.pairs;
    if (sw > sl) ++r.wins;
  }
  if (r.pairs < cfg.min_pairs)
    throw InputError("judge bench: only " + std::to_string(r.pairs) +
                     " usable pairs, need at least " +
                     std::to_string(cfg.min_pairs));
  r.accuracy = static_cast<Real>(r.wins) / static_cast<Real>(r.pairs);
  return r;
}

BenchResult judge_quality_bench(const rewards::Judge& judge,
                                std::span<const taskgen::Problem> problems,
                                const CandidateSupplier& supplier,
                                const taskgen::AnswerBook& answers,
                                const BenchConfig& cfg) {
  PairScorer scorer = [&judge](const taskgen::Problem& p,
                               std::span<const int> program, Rng& rng) {
    auto v = judge.verdict(p, program, rng);
    // Un-thresholded: clipping to 0 would tie every below-threshold pair.
    return sigmoid(v.log_yes - v.log_no);
  };
  return pairwise_bench(scorer, problems, supplier, answers, cfg);
}

Real ll_score(const policy::Net& net, const policy::Model& ref,
              std::span<const int> question, std::span<const int> program) {
  if (program.empty()) throw InputError("ll_score: empty program");
  Real sum = policy::response_logprob_sum(net, ref, question, program);
  return sum / static_cast<Real>(program.size());
}

BenchResult ll_bench(const policy::Net& net, const policy::Model& ref,
                     std::span<const taskgen::Problem> problems,
                     const CandidateSupplier& supplier,
                     const taskgen::AnswerBook& answers, const BenchConfig& cfg) {
  PairScorer scorer = [&net, &ref](const taskgen::Problem& p,
                                   std::span<const int> program, Rng&) {
    return ll_score(net, ref, p.question, program);
  };
  return pairwise_bench(scorer, problems, supplier, answers, cfg);
}

EvalReport evaluate_report(const policy::Net& net, const policy::Model& m,
                           const taskgen::DatasetBundle& bundle, int vote_k,
                           Real temperature, uint64_t seed, int step_budget) {
  if (vote_k < 1) throw ConfigError("evaluate_report: vote_k must be >= 1");
  EvalReport r;
  r.vote_k = vote_k;
  r.temperature = vote_k > 1 ? temperature : 0;
  r.seed = seed;
  auto acc = [&](const std::vector<taskgen::Problem>& split) {
    if (vote_k == 1)
      return evaluate_accuracy(net, m, split, bundle.answers, step_budget);
    return voted_accuracy(net, m, split, bundle.answers, vote_k, temperature,
                          seed, step_budget);
  };
  r.clean = acc(bundle.eval_clean);
  r.perturbed = acc(bundle.eval_perturbed);
  r.p1 = acc(bundle.eval_p1);
  r.p2 = acc(bundle.eval_p2);
  r.n_clean = static_cast<int>(bundle.eval_clean.size());
  r.n_perturbed = static_cast<int>(bundle.eval_perturbed.size());
  r.n_p1 = static_cast<int>(bundle.eval_p1.size());
  r.n_p2 = static_cast<int>(bundle.eval_p2.size());
  return r;
}

std::string report_json_line(const EvalReport& r) {
  json rec;
  rec["clean"] = r.clean;
  rec["perturbed"] = r.perturbed;
  rec["p1"] = r.p1;
  rec["p2"] = r.p2;
  rec["n_clean"] = r.n_clean;
  rec["n_perturbed"] = r.n_perturbed;
  rec["n_p1"] = r.n_p1;
  rec["n_p2"] = r.n_p2;
  rec["vote_k"] = r.vote_k;
  rec["temperature"] = r.temperature;
  rec["seed"] = r.seed;
  return rec.dump();
}

std::string report_csv_header() { return "label,clean,perturbed,p1,p2"; }

std::string report_csv_row(const std::string& label, const EvalReport& r) {
  std::ostringstream os;
  os << label << ',' << r.clean << ',' << r.perturbed << ',' << r.p1 << ','
     << r.p2;
  return os.str();
}

}  // namespace potrl::eval
