#include "potrl/taskgen.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace potrl::taskgen {
namespace {

using potrl::Vocabulary;
using potrl::vocab;
using json = nlohmann::ordered_json;

struct Piece {
  bool is_slot;
  int value;  // token id, or slot index
};

struct Operand {
  bool is_slot;
  int index;  // operand slot, or variable index
};

struct GoldStep {
  char op;
  Operand a, b;
};

using Validator = bool (*)(std::span<const int64_t>);

struct TemplateDef {
  std::string name;
  int n_operands;
  std::vector<Piece> pattern;
  std::vector<GoldStep> steps;
  Validator valid;
};

std::vector<Piece> parse_pattern(const std::string& text) {
  std::vector<Piece> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    if (word.size() >= 3 && word.front() == '{' && word.back() == '}') {
      out.push_back({true, std::stoi(word.substr(1, word.size() - 2))});
    } else {
      auto id = vocab().id(word);
      if (!id) throw ConfigError("template word not in vocabulary: " + word);
      out.push_back({false, *id});
    }
  }
  return out;
}

constexpr Operand slot(int i) { return {true, i}; }
constexpr Operand var(int i) { return {false, i}; }

bool always_valid(std::span<const int64_t>) { return true; }
bool a_gt_b(std::span<const int64_t> v) { return v[0] > v[1]; }
bool a_div_b(std::span<const int64_t> v) { return v[1] != 0 && v[0] % v[1] == 0; }
bool a_gt_b_plus_c(std::span<const int64_t> v) { return v[0] > v[1] + v[2]; }

const std::vector<TemplateDef>& registry() {
  static const std::vector<TemplateDef> defs = [] {
    std::vector<TemplateDef> r;
    r.push_back({"sum_two", 2,
                 parse_pattern("what is the sum of {0} and {1} ?"),
                 {{'+', slot(0), slot(1)}},
                 always_valid});
    r.push_back({"unit_price_after_discount", 2,
                 parse_pattern("each pack costs {0} dollars . a discount of {1} dollars . "
                               "how much to pay ?"),
                 {{'-', slot(0), slot(1)}},
                 a_gt_b});
    r.push_back({"apples_in_boxes", 2,
                 parse_pattern("each box holds {0} apples . how many apples in {1} boxes ?"),
                 {{'*', slot(0), slot(1)}},
                 always_valid});
    r.push_back({"candies_per_kid", 2,
                 parse_pattern("{0} candies shared among {1} kids . how many candies for "
                               "each ?"),
                 {{'/', slot(0), slot(1)}},
                 a_div_b});
    r.push_back({"sum_three", 3,
                 parse_pattern("what is the sum of {0} and {1} and {2} ?"),
                 {{'+', slot(0), slot(1)}, {'+', var(0), slot(2)}},
                 always_valid});
    r.push_back({"pack_and_box_bundles", 3,
                 parse_pattern("a pack costs {0} dollars and a box costs {1} dollars . how "
                               "much to pay for {2} of each ?"),
                 {{'+', slot(0), slot(1)}, {'*', var(0), slot(2)}},
                 always_valid});
    r.push_back({"boxes_plus_loose", 3,
                 parse_pattern("each box holds {0} apples . a store buys {1} boxes and {2} "
                               "more apples . how many apples ?"),
                 {{'*', slot(0), slot(1)}, {'+', var(0), slot(2)}},
                 always_valid});
    r.push_back({"double_discount", 3,
                 parse_pattern("each pack costs {0} dollars . a discount of {1} dollars "
                               "then a discount of {2} dollars . how much to pay ?"),
                 {{'-', slot(0), slot(1)}, {'-', var(0), slot(2)}},
                 a_gt_b_plus_c});
    r.push_back({"discounted_boxes", 3,
                 parse_pattern("each box costs {0} dollars . a discount of {1} dollars . "
                               "how much to pay for {2} boxes ?"),
                 {{'-', slot(0), slot(1)}, {'*', var(0), slot(2)}},
                 a_gt_b});
    r.push_back({"share_then_bonus", 3,
                 parse_pattern("{0} candies shared among {1} kids . then {2} more candies "
                               "for each . how many candies for each ?"),
                 {{'/', slot(0), slot(1)}, {'+', var(0), slot(2)}},
                 a_div_b});
    r.push_back({"pen_stock", 3,
                 parse_pattern("a store holds {0} pens . sells {1} pens then buys {2} more "
                               "pens . how many pens ?"),
                 {{'-', slot(0), slot(1)}, {'+', var(0), slot(2)}},
                 a_gt_b});
    r.push_back({"boxes_of_bundles_plus_loose", 4,
                 parse_pattern("a box holds {0} apples and {1} more apples . a store buys "
                               "{2} boxes and {3} more apples . how many apples ?"),
                 {{'+', slot(0), slot(1)}, {'*', var(0), slot(2)}, {'+', var(1), slot(3)}},
                 always_valid});
    return r;
  }();
  return defs;
}

const TemplateDef& def_of(int template_id) {
  const auto& r = registry();
  if (template_id < 1 || template_id > static_cast<int>(r.size())) {
    throw ConfigError("unknown template id " + std::to_string(template_id));
  }
  return r[static_cast<size_t>(template_id - 1)];
}

int64_t operand_value(const Operand& o, std::span<const int64_t> operands,
                      std::span<const int64_t> vars) {
  return o.is_slot ? operands[static_cast<size_t>(o.index)]
                   : vars[static_cast<size_t>(o.index)];
}

int64_t answer_of(const TemplateDef& def, std::span<const int64_t> operands) {
  std::vector<int64_t> vars;
  for (const auto& step : def.steps) {
    int64_t a = operand_value(step.a, operands, vars);
    int64_t b = operand_value(step.b, operands, vars);
    int64_t v = 0;
    switch (step.op) {
      case '+': v = a + b; break;
      case '-': v = a - b; break;
      case '*': v = a * b; break;
      case '/':
        if (b == 0 || a % b != 0) {
          throw GenerationError("gold step division is not exact");
        }
        v = a / b;
        break;
      default: throw GenerationError("bad gold op");
    }
    vars.push_back(v);
  }
  return vars.back();
}

std::vector<int> render_question(const TemplateDef& def,
                                 std::span<const int64_t> operands) {
  std::vector<int> q;
  for (const auto& piece : def.pattern) {
    if (piece.is_slot) {
      vocab().append_number(q, operands[static_cast<size_t>(piece.value)]);
    } else {
      q.push_back(piece.value);
    }
  }
  return q;
}

Problem instantiate(int template_id, std::span<const int64_t> operands) {
  const auto& def = def_of(template_id);
  if (static_cast<int>(operands.size()) != def.n_operands) {
    throw ConfigError("template " + def.name + " takes " +
                      std::to_string(def.n_operands) + " operands, got " +
                      std::to_string(operands.size()));
  }
  if (!def.valid(operands)) {
    throw GenerationError("operands violate constraints of template " + def.name);
  }
  Problem p;
  p.template_id = template_id;
  p.operands.assign(operands.begin(), operands.end());
  p.question = render_question(def, operands);
  p.answer = answer_of(def, operands);
  return p;
}

std::vector<int64_t> draw_operands(const TemplateDef& def, Rng& rng,
                                   int64_t lo, int64_t hi) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<int64_t> ops;
    ops.reserve(static_cast<size_t>(def.n_operands));
    for (int i = 0; i < def.n_operands; ++i) {
      ops.push_back(rng.uniform_range(lo, hi));
    }
    if (def.valid(ops)) return ops;
  }
  throw GenerationError("could not satisfy constraints of template " + def.name +
                        " within 1000 attempts");
}

void check_operand_range(int64_t lo, int64_t hi) {
  if (lo < 1 || hi > 999 || lo > hi) {
    throw ConfigError("operand range must satisfy 1 <= min <= max <= 999");
  }
}

const std::vector<std::vector<Piece>>& distractor_clauses() {
  static const std::vector<std::vector<Piece>> clauses = {
      parse_pattern("a store sells {0} pens ."),
      parse_pattern("each pack holds {0} candies ."),
      parse_pattern("a box costs {0} dollars ."),
      parse_pattern("the store buys {0} boxes ."),
  };
  return clauses;
}

// The final sentence holds the actual question; clauses go just before it.
size_t final_sentence_start(const std::vector<int>& question) {
  size_t start = 0;
  int period = *vocab().id(".");
  for (size_t i = 0; i + 1 < question.size(); ++i) {
    if (question[i] == period) start = i + 1;
  }
  return start;
}

}  // namespace

const std::string& split_name(Split s) {
  static const std::array<std::string, 6> names = {
      "labeled", "unlabeled", "eval", "eval-numeric-perturbed", "eval-p1", "eval-p2"};
  return names[static_cast<size_t>(s)];
}

Split split_from_name(const std::string& name) {
  for (int i = 0; i < 6; ++i) {
    if (split_name(static_cast<Split>(i)) == name) return static_cast<Split>(i);
  }
  throw InputError("unknown split name: " + name);
}

int64_t AnswerBook::lookup(int64_t id) const {
  auto it = answers_.find(id);
  if (it == answers_.end()) {
    throw ConfigError("no private answer recorded for problem id " +
                      std::to_string(id));
  }
  return it->second;
}

int64_t truth_of(const Problem& p, const AnswerBook& book) {
  if (p.answer.has_value()) return *p.answer;
  return book.lookup(p.id);
}

const std::vector<Problem>& DatasetBundle::split(Split s) const {
  switch (s) {
    case Split::kLabeled: return labeled;
    case Split::kUnlabeled: return unlabeled;
    case Split::kEval: return eval_clean;
    case Split::kEvalPerturbed: return eval_perturbed;
    case Split::kEvalP1: return eval_p1;
    case Split::kEvalP2: return eval_p2;
  }
  throw InputError("bad split");
}

int num_templates() { return static_cast<int>(registry().size()); }

const std::string& template_name(int template_id) { return def_of(template_id).name; }

Problem gen_problem(int template_id, uint64_t rng_seed,
                    int64_t operand_min, int64_t operand_max) {
  check_operand_range(operand_min, operand_max);
  const auto& def = def_of(template_id);
  Rng rng(rng_seed);
  auto ops = draw_operands(def, rng, operand_min, operand_max);
  return instantiate(template_id, ops);
}

Problem make_problem(int template_id, std::span<const int64_t> operands) {
  return instantiate(template_id, operands);
}

Problem perturb_numeric(const Problem& p, uint64_t rng_seed,
                        int64_t operand_min, int64_t operand_max) {
  if (p.split != Split::kEval) {
    throw InputError("perturb_numeric expects a clean eval problem");
  }
  check_operand_range(operand_min, operand_max);
  const auto& def = def_of(p.template_id);
  Rng rng(rng_seed);
  auto ops = draw_operands(def, rng, operand_min, operand_max);
  Problem q = instantiate(p.template_id, ops);
  q.id = p.id;
  q.split = Split::kEvalPerturbed;
  return q;
}

Problem add_distractors(const Problem& p, int k, uint64_t rng_seed,
                        int64_t operand_min, int64_t operand_max) {
  if (k != 1 && k != 2) {
    throw ConfigError("distractor count must be 1 or 2");
  }
  check_operand_range(operand_min, operand_max);
  Rng rng(rng_seed);
  const auto& clauses = distractor_clauses();
  std::vector<size_t> order(clauses.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  Problem q = p;
  q.split = (k == 1) ? Split::kEvalP1 : Split::kEvalP2;
  size_t at = final_sentence_start(q.question);
  std::vector<int> inserted;
  for (int c = 0; c < k; ++c) {
    int64_t value = rng.uniform_range(operand_min, operand_max);
    for (const auto& piece : clauses[order[static_cast<size_t>(c)]]) {
      if (piece.is_slot) {
        vocab().append_number(inserted, value);
      } else {
        inserted.push_back(piece.value);
      }
    }
  }
  q.question.insert(q.question.begin() + static_cast<ptrdiff_t>(at),
                    inserted.begin(), inserted.end());
  return q;
}

std::vector<int> gold_program(int template_id, std::span<const int64_t> operands) {
  const auto& def = def_of(template_id);
  if (static_cast<int>(operands.size()) != def.n_operands) {
    throw ConfigError("operand count mismatch for template " + def.name);
  }
  std::vector<int64_t> vars;
  std::vector<int> out;
  const auto& v = vocab();
  auto emit_operand = [&](const Operand& o) {
    if (o.is_slot) {
      v.append_number(out, operands[static_cast<size_t>(o.index)]);
    } else {
      out.push_back(Vocabulary::var_token(o.index));
    }
  };
  for (size_t i = 0; i < def.steps.size(); ++i) {
    const auto& step = def.steps[i];
    out.push_back(Vocabulary::var_token(static_cast<int>(i)));
    out.push_back(Vocabulary::kAssign);
    emit_operand(step.a);
    switch (step.op) {
      case '+': out.push_back(Vocabulary::kPlus); break;
      case '-': out.push_back(Vocabulary::kMinus); break;
      case '*': out.push_back(Vocabulary::kTimes); break;
      case '/': out.push_back(Vocabulary::kDivide); break;
      default: throw GenerationError("bad gold op");
    }
    emit_operand(step.b);
    out.push_back(Vocabulary::kNewline);
  }
  out.push_back(Vocabulary::kReturn);
  out.push_back(Vocabulary::var_token(static_cast<int>(def.steps.size()) - 1));
  out.push_back(Vocabulary::kNewline);
  out.push_back(Vocabulary::kEos);
  return out;
}

std::vector<int64_t> extract_operands(int template_id, std::span<const int> question) {
  const auto& def = def_of(template_id);
  std::vector<int64_t> ops;
  size_t pos = 0;
  for (const auto& piece : def.pattern) {
    if (piece.is_slot) {
      if (pos >= question.size() || !Vocabulary::is_digit(question[pos])) {
        throw InputError("question does not match template " + def.name);
      }
      int64_t value = 0;
      while (pos < question.size() && Vocabulary::is_digit(question[pos])) {
        value = value * 10 + Vocabulary::digit_value(question[pos]);
        ++pos;
      }
      ops.push_back(value);
    } else {
      if (pos >= question.size() || question[pos] != piece.value) {
        throw InputError("question does not match template " + def.name);
      }
      ++pos;
    }
  }
  if (pos != question.size()) {
    throw InputError("trailing tokens after template " + def.name);
  }
  return ops;
}

namespace {

std::string content_key(const Problem& p) {
  std::string key = std::to_string(p.template_id) + ":";
  for (int t : p.question) {
    key += std::to_string(t);
    key += ',';
  }
  return key;
}

}  // namespace

DatasetBundle make_splits(const GenConfig& config) {
  if (config.sizes.labeled < 1 || config.sizes.eval < 1 || config.sizes.unlabeled < 0) {
    throw ConfigError("split sizes must have labeled >= 1, eval >= 1, unlabeled >= 0");
  }
  check_operand_range(config.operand_min, config.operand_max);

  DatasetBundle bundle;
  bundle.config = config;
  std::set<std::string> seen;
  int64_t next_id = 1;
  int n_templates = num_templates();

  auto fill = [&](std::vector<Problem>& out, int64_t count, Split split,
                  const char* tag) {
    for (int64_t i = 0; i < count; ++i) {
      Problem p;
      bool placed = false;
      uint64_t attempt = 0;
      // Round-robin first choice; a template whose pool has run dry yields to
      // its successors, so feasibility binds on the total pool across
      // templates rather than on the scarcest one.
      for (int hop = 0; hop < n_templates && !placed; ++hop) {
        int template_id = 1 + static_cast<int>((i + hop) % n_templates);
        for (int local = 0; local < 1000; ++local) {
          try {
            p = gen_problem(template_id,
                            derive_seed(config.seed, tag, static_cast<uint64_t>(i), attempt++),
                            config.operand_min, config.operand_max);
          } catch (const GenerationError&) {
            break;
          }
          if (seen.insert(content_key(p)).second) {
            placed = true;
            break;
          }
        }
      }
      if (!placed) {
        throw ConfigError("split sizes infeasible: template pool exhausted at " +
                          std::string(tag) + " item " + std::to_string(i));
      }
      p.id = next_id++;
      p.split = split;
      out.push_back(std::move(p));
    }
  };

  fill(bundle.labeled, config.sizes.labeled, Split::kLabeled, "labeled");
  fill(bundle.unlabeled, config.sizes.unlabeled, Split::kUnlabeled, "unlabeled");
  fill(bundle.eval_clean, config.sizes.eval, Split::kEval, "eval");

  for (auto& p : bundle.unlabeled) {
    bundle.answers.put(p.id, *p.answer);
    p.answer.reset();
  }
  for (auto& p : bundle.eval_clean) {
    bundle.answers.put(p.id, *p.answer);
  }

  for (size_t i = 0; i < bundle.eval_clean.size(); ++i) {
    const Problem& src = bundle.eval_clean[i];
    Problem q;
    bool placed = false;
    for (uint64_t attempt = 0; attempt < 1000; ++attempt) {
      q = perturb_numeric(src, derive_seed(config.seed, "perturb", i, attempt),
                          config.operand_min, config.operand_max);
      if (seen.insert(content_key(q)).second) {
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw ConfigError("could not produce a distinct numeric perturbation");
    }
    q.id = next_id++;
    bundle.answers.put(q.id, *q.answer);
    bundle.eval_perturbed.push_back(std::move(q));
  }

  for (size_t i = 0; i < bundle.eval_clean.size(); ++i) {
    const Problem& src = bundle.eval_clean[i];
    Problem q1 = add_distractors(src, 1, derive_seed(config.seed, "distract1", i),
                                 config.operand_min, config.operand_max);
    q1.id = next_id++;
    bundle.answers.put(q1.id, *q1.answer);
    Problem q2 = add_distractors(src, 2, derive_seed(config.seed, "distract2", i),
                                 config.operand_min, config.operand_max);
    q2.id = next_id++;
    bundle.answers.put(q2.id, *q2.answer);
    bundle.eval_p1.push_back(std::move(q1));
    bundle.eval_p2.push_back(std::move(q2));
  }

  for (auto* split_vec : {&bundle.eval_clean, &bundle.eval_perturbed,
                          &bundle.eval_p1, &bundle.eval_p2}) {
    for (auto& p : *split_vec) p.answer.reset();
  }
  return bundle;
}

namespace {

json problem_record(const Problem& p) {
  json rec;
  rec["id"] = p.id;
  rec["template_id"] = p.template_id;
  rec["question_tokens"] = vocab().to_words(p.question);
  rec["split"] = split_name(p.split);
  if (p.split == Split::kLabeled) {
    if (!p.answer.has_value()) {
      throw IoError("labeled problem " + std::to_string(p.id) + " lost its answer");
    }
    rec["answer"] = *p.answer;
  } else if (p.answer.has_value()) {
    throw IoError("refusing to serialize an answer on split " + split_name(p.split));
  }
  return rec;
}

void write_lines(const std::filesystem::path& file, const std::vector<json>& lines) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  for (const auto& line : lines) {
    out << line.dump() << "\n";
  }
  if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace

std::vector<std::string> split_file_names() {
  return {"labeled.jsonl", "unlabeled.jsonl", "eval.jsonl",
          "eval_numeric_perturbed.jsonl", "eval_p1.jsonl", "eval_p2.jsonl"};
}

void write_jsonl(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto names = split_file_names();
  for (int s = 0; s < 6; ++s) {
    const auto& problems = bundle.split(static_cast<Split>(s));
    std::vector<json> lines;
    lines.reserve(problems.size());
    for (const auto& p : problems) lines.push_back(problem_record(p));
    write_lines(dir / names[static_cast<size_t>(s)], lines);
  }
  std::vector<std::pair<int64_t, int64_t>> answers(bundle.answers.map().begin(),
                                                   bundle.answers.map().end());
  std::sort(answers.begin(), answers.end());
  std::vector<json> lines;
  lines.reserve(answers.size());
  for (const auto& [id, value] : answers) {
    json rec;
    rec["id"] = id;
    rec["answer"] = value;
    lines.push_back(rec);
  }
  write_lines(dir / kAnswerFileName, lines);
}

std::vector<Problem> load_problems(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::vector<Problem> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw InputError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Problem p;
    try {
      p.id = rec.at("id").get<int64_t>();
      p.template_id = rec.at("template_id").get<int>();
      p.split = split_from_name(rec.at("split").get<std::string>());
      std::vector<std::string> words =
          rec.at("question_tokens").get<std::vector<std::string>>();
      p.question = vocab().encode_words(words);
      if (rec.contains("answer")) {
        if (p.split != Split::kLabeled) {
          throw InputError("answer present on split " + split_name(p.split) +
                           ", record id " + std::to_string(p.id));
        }
        p.answer = rec.at("answer").get<int64_t>();
      } else if (p.split == Split::kLabeled) {
        throw InputError("labeled record " + std::to_string(p.id) + " has no answer");
      }
    } catch (const json::exception& e) {
      throw InputError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

AnswerBook load_answers(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  AnswerBook book;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      book.put(rec.at("id").get<int64_t>(), rec.at("answer").get<int64_t>());
    } catch (const json::exception& e) {
      throw InputError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return book;
}

}  // namespace potrl::taskgen
