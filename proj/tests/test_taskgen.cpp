#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "potrl/interp.hpp"
#include "potrl/rng.hpp"
#include "potrl/taskgen.hpp"
#include "potrl/vocab.hpp"

using namespace potrl;
using namespace potrl::taskgen;

namespace {

// Independent word-problem semantics, one formula per template, written from
// the question wording rather than from the generator's step tables.
int64_t expected_answer(int template_id, const std::vector<int64_t>& v) {
  switch (template_id) {
    case 1: return v[0] + v[1];
    case 2: return v[0] - v[1];
    case 3: return v[0] * v[1];
    case 4: return v[0] / v[1];
    case 5: return v[0] + v[1] + v[2];
    case 6: return (v[0] + v[1]) * v[2];
    case 7: return v[0] * v[1] + v[2];
    case 8: return v[0] - v[1] - v[2];
    case 9: return (v[0] - v[1]) * v[2];
    case 10: return v[0] / v[1] + v[2];
    case 11: return v[0] - v[1] + v[2];
    case 12: return (v[0] + v[1]) * v[2] + v[3];
    default: REQUIRE(false);
  }
  return 0;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const std::string& leaf) {
  auto dir = std::filesystem::temp_directory_path() / ("potrl_test_" + leaf);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("known worked instances") {
  // 76 dollars with a 25 dollar discount leaves 51.
  auto p = make_problem(2, std::vector<int64_t>{76, 25});
  REQUIRE(p.answer.has_value());
  CHECK(*p.answer == 51);
  CHECK(vocab().decode(p.question) ==
        "each pack costs 76 dollars . a discount of 25 dollars . how much to pay ?");

  // Degenerate sum is still a valid problem.
  auto z = make_problem(1, std::vector<int64_t>{0, 0});
  CHECK(*z.answer == 0);

  // Two-step bundle price: (2 + 3) * 4.
  auto b = make_problem(6, std::vector<int64_t>{2, 3, 4});
  CHECK(*b.answer == 20);
}

TEST_CASE("every template agrees with independent semantics") {
  for (int t = 1; t <= num_templates(); ++t) {
    for (uint64_t s = 0; s < 100; ++s) {
      auto p = gen_problem(t, derive_seed(5, "case", static_cast<uint64_t>(t), s));
      REQUIRE(p.answer.has_value());
      CHECK(*p.answer == expected_answer(t, p.operands));
      for (int64_t o : p.operands) {
        CHECK(o >= 1);
        CHECK(o <= 99);
      }
      CHECK(extract_operands(t, p.question) == p.operands);
    }
  }
}

TEST_CASE("gold programs parse, execute, and hit the answer") {
  for (int t = 1; t <= num_templates(); ++t) {
    for (uint64_t s = 0; s < 20; ++s) {
      auto p = gen_problem(t, derive_seed(6, "gold", static_cast<uint64_t>(t), s));
      auto prog = gold_program(t, p.operands);
      REQUIRE(!prog.empty());
      CHECK(prog.back() == Vocabulary::kEos);
      auto r = interp::run(prog, 64);
      REQUIRE(r.status == interp::ExecStatus::kOk);
      CHECK(*r.value == *p.answer);
      CHECK(interp::statement_count(prog) >= 2);
    }
  }
}

TEST_CASE("generation is deterministic in the seed") {
  auto a = gen_problem(7, 991);
  auto b = gen_problem(7, 991);
  CHECK(a.question == b.question);
  CHECK(a.operands == b.operands);
  CHECK(a.answer == b.answer);
  auto c = gen_problem(7, 992);
  CHECK(a.operands != c.operands);
}

TEST_CASE("template and range validation fail closed") {
  CHECK_THROWS_AS((void)gen_problem(0, 1), ConfigError);
  CHECK_THROWS_AS((void)gen_problem(13, 1), ConfigError);
  CHECK_THROWS_AS((void)gen_problem(1, 1, 0, 99), ConfigError);
  CHECK_THROWS_AS((void)gen_problem(1, 1, 10, 5), ConfigError);
  CHECK_THROWS_AS((void)gen_problem(1, 1, 1, 1000), ConfigError);
  CHECK_THROWS_AS((void)make_problem(1, std::vector<int64_t>{1, 2, 3}), ConfigError);
  // Division templates need exact quotients.
  CHECK_THROWS_AS((void)make_problem(4, std::vector<int64_t>{7, 2}), GenerationError);
  // a > b can never hold when the range is a single point.
  CHECK_THROWS_AS((void)gen_problem(2, 1, 5, 5), GenerationError);
}

TEST_CASE("numeric perturbation keeps the template and refreshes the answer") {
  auto base = gen_problem(9, 31);
  base.split = Split::kEval;
  int changed = 0;
  for (uint64_t s = 0; s < 20; ++s) {
    auto q = perturb_numeric(base, derive_seed(8, "p", s));
    CHECK(q.template_id == base.template_id);
    CHECK(q.split == Split::kEvalPerturbed);
    REQUIRE(q.answer.has_value());
    CHECK(*q.answer == expected_answer(9, q.operands));
    changed += (q.operands != base.operands);
  }
  CHECK(changed >= 19);

  auto labeled = gen_problem(9, 32);  // split defaults to labeled
  CHECK_THROWS_AS((void)perturb_numeric(labeled, 1), InputError);
}

TEST_CASE("distractor clauses pad the question without touching the answer") {
  auto base = gen_problem(3, 77);
  base.split = Split::kEval;
  auto p1 = add_distractors(base, 1, 501);
  auto p2 = add_distractors(base, 2, 502);
  CHECK(p1.split == Split::kEvalP1);
  CHECK(p2.split == Split::kEvalP2);
  CHECK(*p1.answer == *base.answer);
  CHECK(*p2.answer == *base.answer);
  CHECK(p1.question.size() > base.question.size());
  CHECK(p2.question.size() > p1.question.size());
  // The original final question sentence survives at the tail.
  std::vector<int> tail(p1.question.end() - 3, p1.question.end());
  std::vector<int> base_tail(base.question.end() - 3, base.question.end());
  CHECK(tail == base_tail);
  CHECK_THROWS_AS((void)add_distractors(base, 0, 1), ConfigError);
  CHECK_THROWS_AS((void)add_distractors(base, 3, 1), ConfigError);
}

TEST_CASE("make_splits partitions ids, answers, and content") {
  GenConfig cfg;
  cfg.sizes = {24, 36, 12};
  cfg.seed = 404;
  auto bundle = make_splits(cfg);

  CHECK(bundle.labeled.size() == 24);
  CHECK(bundle.unlabeled.size() == 36);
  CHECK(bundle.eval_clean.size() == 12);
  CHECK(bundle.eval_perturbed.size() == 12);
  CHECK(bundle.eval_p1.size() == 12);
  CHECK(bundle.eval_p2.size() == 12);

  std::set<int64_t> ids;
  std::set<std::string> content;
  auto visit = [&](const std::vector<Problem>& v, bool has_answer, Split split) {
    for (const auto& p : v) {
      CHECK(p.split == split);
      CHECK(ids.insert(p.id).second);
      CHECK(p.answer.has_value() == has_answer);
      std::string key;
      for (int t : p.question) key += std::to_string(t) + ",";
      CHECK(content.insert(std::to_string(p.template_id) + ":" + key).second);
      if (!has_answer) CHECK(bundle.answers.contains(p.id));
    }
  };
  visit(bundle.labeled, true, Split::kLabeled);
  visit(bundle.unlabeled, false, Split::kUnlabeled);
  visit(bundle.eval_clean, false, Split::kEval);
  visit(bundle.eval_perturbed, false, Split::kEvalPerturbed);
  visit(bundle.eval_p1, false, Split::kEvalP1);
  visit(bundle.eval_p2, false, Split::kEvalP2);
  for (const auto& p : bundle.labeled) CHECK_FALSE(bundle.answers.contains(p.id));

  // Private answers must match independent recomputation where operands are
  // recoverable from the question.
  for (const auto& p : bundle.unlabeled) {
    auto ops = extract_operands(p.template_id, p.question);
    CHECK(bundle.answers.lookup(p.id) == expected_answer(p.template_id, ops));
  }
  for (size_t i = 0; i < bundle.eval_perturbed.size(); ++i) {
    const auto& p = bundle.eval_perturbed[i];
    CHECK(p.template_id == bundle.eval_clean[i].template_id);
    auto ops = extract_operands(p.template_id, p.question);
    CHECK(bundle.answers.lookup(p.id) == expected_answer(p.template_id, ops));
  }
  // Distractor variants keep the source problem's answer.
  for (size_t i = 0; i < bundle.eval_p1.size(); ++i) {
    CHECK(bundle.answers.lookup(bundle.eval_p1[i].id) ==
          bundle.answers.lookup(bundle.eval_clean[i].id));
    CHECK(bundle.answers.lookup(bundle.eval_p2[i].id) ==
          bundle.answers.lookup(bundle.eval_clean[i].id));
  }

  CHECK(truth_of(bundle.labeled[0], bundle.answers) == *bundle.labeled[0].answer);
  CHECK_THROWS_AS((void)bundle.answers.lookup(999999), ConfigError);
}

TEST_CASE("infeasible split requests are rejected") {
  GenConfig cfg;
  cfg.sizes = {0, 10, 10};
  CHECK_THROWS_AS((void)make_splits(cfg), ConfigError);
  cfg.sizes = {600, 0, 1};
  cfg.operand_min = 1;
  cfg.operand_max = 2;
  CHECK_THROWS_AS((void)make_splits(cfg), ConfigError);
}

TEST_CASE("jsonl round-trips and regenerates byte-identically") {
  GenConfig cfg;
  cfg.sizes = {24, 24, 12};
  cfg.seed = 2026;
  auto bundle = make_splits(cfg);
  auto dir1 = fresh_dir("ds1");
  auto dir2 = fresh_dir("ds2");
  write_jsonl(bundle, dir1);
  write_jsonl(make_splits(cfg), dir2);

  for (const auto& name : split_file_names()) {
    CHECK(read_file(dir1 / name) == read_file(dir2 / name));
  }
  CHECK(read_file(dir1 / kAnswerFileName) == read_file(dir2 / kAnswerFileName));

  auto labeled = load_problems(dir1 / "labeled.jsonl");
  REQUIRE(labeled.size() == bundle.labeled.size());
  for (size_t i = 0; i < labeled.size(); ++i) {
    CHECK(labeled[i].id == bundle.labeled[i].id);
    CHECK(labeled[i].template_id == bundle.labeled[i].template_id);
    CHECK(labeled[i].question == bundle.labeled[i].question);
    CHECK(labeled[i].answer == bundle.labeled[i].answer);
    CHECK(labeled[i].split == Split::kLabeled);
  }
  auto unlabeled = load_problems(dir1 / "unlabeled.jsonl");
  for (const auto& p : unlabeled) CHECK_FALSE(p.answer.has_value());

  auto book = load_answers(dir1 / kAnswerFileName);
  CHECK(book.size() == bundle.answers.size());
  for (const auto& [id, ans] : bundle.answers.map()) CHECK(book.lookup(id) == ans);

  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("answers never leak into trainer-visible files") {
  GenConfig cfg;
  cfg.sizes = {12, 12, 12};
  cfg.seed = 7;
  auto dir = fresh_dir("leak");
  write_jsonl(make_splits(cfg), dir);
  for (const auto& name : split_file_names()) {
    if (name == "labeled.jsonl") continue;
    CHECK(read_file(dir / name).find("\"answer\"") == std::string::npos);
  }

  // A tampered unlabeled record with an answer must be refused on load.
  {
    std::ofstream out(dir / "tampered.jsonl", std::ios::binary);
    out << R"({"id":1,"template_id":1,"question_tokens":["what","is","the","sum","of","4","and","5","?"],"split":"unlabeled","answer":9})"
        << "\n";
  }
  CHECK_THROWS_AS((void)load_problems(dir / "tampered.jsonl"), InputError);
  {
    std::ofstream out(dir / "noanswer.jsonl", std::ios::binary);
    out << R"({"id":1,"template_id":1,"question_tokens":["what"],"split":"labeled"})"
        << "\n";
  }
  CHECK_THROWS_AS((void)load_problems(dir / "noanswer.jsonl"), InputError);
  CHECK_THROWS_AS((void)load_problems(dir / "missing.jsonl"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("split names round-trip") {
  for (int i = 0; i < 6; ++i) {
    auto s = static_cast<Split>(i);
    CHECK(split_from_name(split_name(s)) == s);
  }
  CHECK_THROWS_AS((void)split_from_name("training"), InputError);
}
