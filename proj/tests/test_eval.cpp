#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "potrl/algo.hpp"
#include "potrl/eval.hpp"
#include "potrl/interp.hpp"
#include "potrl/policy.hpp"
#include "potrl/rewards.hpp"
#include "potrl/rng.hpp"
#include "potrl/taskgen.hpp"
#include "potrl/vocab.hpp"

using namespace potrl;
using namespace potrl::eval;

namespace {

policy::ModelConfig small_config() {
  policy::ModelConfig cfg;
  cfg.emb = 8;
  cfg.hidden = 16;
  cfg.max_response = 24;
  return cfg;
}

// Overfits the model on a fixed item list until it reproduces the targets.
void fit_sft(const policy::Net& net, policy::Model& m,
             const std::vector<taskgen::Problem>& problems, int steps, Real lr) {
  std::vector<std::vector<int>> targets;
  for (const auto& p : problems)
    targets.push_back(taskgen::gold_program(p.template_id, p.operands));
  std::vector<policy::SftItem> items;
  for (size_t i = 0; i < problems.size(); ++i)
    items.push_back({problems[i].question, targets[i]});
  algo::AdamConfig acfg;
  acfg.lr = lr;
  algo::Adam adam(acfg, m.params.size());
  std::vector<Real> grad(m.params.size());
  for (int s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    policy::sft_loss_and_grad(net, m, items, grad);
    adam.step(m.params, grad);
  }
}

// Problems with corpus-unique ids so per-question seed streams differ.
std::vector<taskgen::Problem> bench_problems(int n, uint64_t seed) {
  std::vector<taskgen::Problem> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int tpl = 1 + i % taskgen::num_templates();
    auto p = taskgen::gen_problem(tpl, derive_seed(seed, "bp", static_cast<uint64_t>(i)));
    p.id = i + 1;
    out.push_back(std::move(p));
  }
  return out;
}

// Deterministic gold + one-wrong-literal candidate pair per question.
CandidateSupplier synthetic_supplier() {
  return [](const taskgen::Problem& p, Rng&) {
    auto gold = taskgen::gold_program(p.template_id, p.operands);
    auto ops = p.operands;
    ops[0] += 1;
    auto bad = taskgen::gold_program(p.template_id, ops);
    return std::vector<std::vector<int>>{gold, bad};
  };
}

}  // namespace

TEST_CASE("modal answer: mode, ties, abstention") {
  using Opt = std::optional<int64_t>;
  std::vector<Opt> a{51, 51, 1900};
  CHECK(*modal_answer(a) == 51);
  std::vector<Opt> tie{2, 1, 1, 2};
  CHECK(*modal_answer(tie) == 1);
  std::vector<Opt> with_fail{std::nullopt, 7, std::nullopt};
  CHECK(*modal_answer(with_fail) == 7);
  std::vector<Opt> all_fail{std::nullopt, std::nullopt};
  CHECK(!modal_answer(all_fail).has_value());
  CHECK(!modal_answer({}).has_value());
}

TEST_CASE("greedy decode is deterministic") {
  auto cfg = small_config();
  policy::Net net(cfg);
  auto m = policy::init_model(cfg, 31);
  auto p = taskgen::make_problem(1, std::vector<int64_t>{4, 5});
  auto a = greedy_response(net, m, p.question);
  auto b = greedy_response(net, m, p.question);
  CHECK(a == b);
  CHECK(!a.empty());
}

TEST_CASE("random-init policy scores at chance level") {
  auto cfg = small_config();
  policy::Net net(cfg);
  auto m = policy::init_model(cfg, 5);
  taskgen::GenConfig gc;
  gc.sizes = {12, 12, 50};
  gc.seed = 907;
  auto bundle = taskgen::make_splits(gc);
  Real acc = evaluate_accuracy(net, m, bundle.eval_clean, bundle.answers);
  CHECK(acc <= 0.02);
  CHECK_THROWS_AS(evaluate_accuracy(net, m, {}, bundle.answers), InputError);
}

TEST_CASE("memorized policy solves its training subset") {
  auto cfg = small_config();
  policy::Net net(cfg);
  auto m = policy::init_model(cfg, 12);
  std::vector<taskgen::Problem> probs{
      taskgen::make_problem(1, std::vector<int64_t>{4, 5}),
      taskgen::make_problem(1, std::vector<int64_t>{7, 2}),
      taskgen::make_problem(1, std::vector<int64_t>{3, 9}),
  };
  for (size_t i = 0; i < probs.size(); ++i) probs[i].id = static_cast<int64_t>(i);
  fit_sft(net, m, probs, 1500, 0.03);
  taskgen::AnswerBook book;
  CHECK(evaluate_accuracy(net, m, probs, book) == 1.0);
}

TEST_CASE("majority vote with k=1 equals a single sample") {
  auto cfg = small_config();
  policy::Net net(cfg);
  auto m = policy::init_model(cfg, 8);
  auto p = taskgen::make_problem(3, std::vector<int64_t>{6, 7});
  Rng ra(77), rb(77);
  auto voted = majority_vote(net, m, p, 1, 1.0, ra);
  auto resp = sample_response(net, m, p.question, 1.0, rb);
  auto res = interp::run(resp, 64);
  if (res.status == interp::ExecStatus::kOk) {
    REQUIRE(voted.has_value());
    CHECK(*voted == *res.value);
  } else {
    CHECK(!voted.has_value());
  }
}

TEST_CASE("majority vote finds the mode on a memorized policy") {
  auto cfg = small_config();
  policy::Net net(cfg);
  auto m = policy::init_model(cfg, 12);
  std::vector<taskgen::Problem> probs{
      taskgen::make_problem(1, std::vector<int64_t>{4, 5}),
      taskgen::make_problem(1, std::vector<int64_t>{7, 2}),
  };
  for (size_t i = 0; i < probs.size(); ++i) probs[i].id = static_cast<int64_t>(i);
  fit_sft(net, m, probs, 1500, 0.03);
  taskgen::AnswerBook book;
  Real acc = voted_accuracy(net, m, probs, book, 5, 0.5, 42);
  CHECK(acc == 1.0);
}

TEST_CASE("majority vote validates k") {
  auto cfg = small_config();
  policy::Net net(cfg);
  auto m = policy::init_model(cfg, 8);
  auto p = taskgen::make_problem(1, std::vector<int64_t>{4, 5});
  Rng rng(1);
  CHECK_THROWS_AS(majority_vote(net, m, p, 0, 1.0, rng), ConfigError);
}

TEST_CASE("pairwise bench: perfect judge wins every pair") {
  auto problems = bench_problems(200, 64001);
  taskgen::AnswerBook book;
  rewards::JudgeConfig jc;
  jc.p_acc = 1.0;
  rewards::OracleJudge judge(jc, &book);
  BenchConfig bc;
  bc.n_pairs = 200;
  bc.seed = 5;
  auto r = judge_quality_bench(judge, problems, synthetic_supplier(), book, bc);
  CHECK(r.pairs == 200);
  CHECK(r.accuracy == 1.0);
}

TEST_CASE("pairwise bench calibration matches p_acc") {
  auto problems = bench_problems(10000, 8112);
  taskgen::AnswerBook book;
  BenchConfig bc;
  bc.n_pairs = 10000;
  bc.seed = 17;

  rewards::JudgeConfig half;
  half.p_acc = 0.5;
  auto r_half = judge_quality_bench(rewards::OracleJudge(half, &book), problems,
                                    synthetic_supplier(), book, bc);
  CHECK(r_half.pairs == 10000);
  CHECK(std::abs(r_half.accuracy - 0.5) <= 0.03);

  rewards::JudgeConfig cal;
  cal.p_acc = 0.88;
  auto r_cal = judge_quality_bench(rewards::OracleJudge(cal, &book), problems,
                                   synthetic_supplier(), book, bc);
  CHECK(std::abs(r_cal.accuracy - 0.88) <= 0.02);
}

TEST_CASE("pairwise bench is invariant to monotone score transforms") {
  auto problems = bench_problems(300, 3399);
  taskgen::AnswerBook book;
  rewards::JudgeConfig jc;
  jc.p_acc = 0.8;
  rewards::OracleJudge judge(jc, &book);
  BenchConfig bc;
  bc.n_pairs = 300;
  bc.seed = 23;

  PairScorer base = [&judge](const taskgen::Problem& p,
                             std::span<const int> prog, Rng& rng) {
    auto v = judge.verdict(p, prog, rng);
    return 1.0 / (1.0 + std::exp(-(v.log_yes - v.log_no)));
  };
  PairScorer warped = [&base](const taskgen::Problem& p,
                              std::span<const int> prog, Rng& rng) {
    return std::exp(3.0 * base(p, prog, rng)) + 1.0;
  };
  auto ra = pairwise_bench(base, problems, synthetic_supplier(), book, bc);
  auto rb = pairwise_bench(warped, problems, synthetic_supplier(), book, bc);
  CHECK(ra.accuracy == rb.accuracy);
  CHECK(ra.pairs == rb.pairs);
}

TEST_CASE("pairwise bench errors out below the pair floor") {
  auto problems = bench_problems(30, 51);
  taskgen::AnswerBook book;
  rewards::JudgeConfig jc;
  rewards::OracleJudge judge(jc, &book);
  BenchConfig bc;
  bc.n_pairs = 100;
  bc.min_pairs = 20;
  // Correct-only candidates: no usable pairs anywhere.
  CandidateSupplier gold_only = [](const taskgen::Problem& p, Rng&) {
    return std::vector<std::vector<int>>{
        taskgen::gold_program(p.template_id, p.operands)};
  };
  CHECK_THROWS_AS(
      judge_quality_bench(judge, problems, gold_only, book, bc), InputError);
}

TEST_CASE("ll score: uniform reference gives -ln V") {
  auto cfg = small_config();
  policy::Net net(cfg);
  policy::Model uniform;
  uniform.cfg = cfg;
  uniform.params.assign(policy::ParamLayout(cfg).total, 0);
  auto p = taskgen::make_problem(1, std::vector<int64_t>{4, 5});
  auto gold = taskgen::gold_program(1, p.operands);
  Real ll = ll_score(net, uniform, p.question, gold);
  CHECK(ll == doctest::Approx(-std::log(64.0)).epsilon(1e-12));
  CHECK_THROWS_AS(ll_score(net, uniform, p.question, {}), InputError);
}

TEST_CASE("ll score equals the per-step averaging oracle") {
  auto cfg = small_config();
  policy::Net net(cfg);
  auto ref = policy::init_model(cfg, 21);
  auto p = taskgen::make_problem(5, std::vector<int64_t>{3, 4, 5});
  auto gold = taskgen::gold_program(5, p.operands);
  auto scored = policy::score_response(net, ref.params, p.question, gold);
  Real sum = 0;
  for (Real lp : scored.logprob) sum += lp;
  Real expect = sum / static_cast<Real>(gold.size());
  CHECK(ll_score(net, ref, p.question, gold) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ll baseline does not beat a calibrated judge") {
  auto problems = bench_problems(300, 21012);
  taskgen::AnswerBook book;
  auto cfg = small_config();
  policy::Net net(cfg);
  BenchConfig bc;
  bc.n_pairs = 300;
  rewards::JudgeConfig jc;
  jc.p_acc = 0.88;
  rewards::OracleJudge judge(jc, &book);
  for (uint64_t seed : {1u, 2u, 3u}) {
    bc.seed = seed;
    auto ref = policy::init_model(cfg, seed);
    auto r_judge = judge_quality_bench(judge, problems, synthetic_supplier(), book, bc);
    auto r_ll = ll_bench(net, ref, problems, synthetic_supplier(), book, bc);
    CHECK(r_ll.accuracy <= r_judge.accuracy);
  }
}

TEST_CASE("eval report covers all four splits") {
  auto cfg = small_config();
  policy::Net net(cfg);
  auto m = policy::init_model(cfg, 3);
  taskgen::GenConfig gc;
  gc.sizes = {8, 8, 10};
  gc.seed = 6621;
  auto bundle = taskgen::make_splits(gc);
  auto r = evaluate_report(net, m, bundle, 1, 0.0, 9);
  CHECK(r.n_clean == 10);
  CHECK(r.n_perturbed == 10);
  CHECK(r.n_p1 == 10);
  CHECK(r.n_p2 == 10);
  for (Real a : {r.clean, r.perturbed, r.p1, r.p2}) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  CHECK(report_csv_header() == "label,clean,perturbed,p1,p2");
  auto row = report_csv_row("sft", r);
  CHECK(row.substr(0, 4) == "sft,");
  auto line = report_json_line(r);
  CHECK(line.find("\"clean\"") != std::string::npos);
  CHECK(line.find("\"vote_k\":1") != std::string::npos);
}
