#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "potrl/common.hpp"
#include "potrl/rng.hpp"
#include "potrl/vocab.hpp"

namespace potrl::taskgen {

enum class Split {
  kLabeled,
  kUnlabeled,
  kEval,
  kEvalPerturbed,
  kEvalP1,
  kEvalP2,
};

const std::string& split_name(Split s);
Split split_from_name(const std::string& name);

struct Problem {
  int64_t id = 0;
  int template_id = 0;
  std::vector<int> question;        // token ids, no <bos>/<eos>
  std::vector<int64_t> operands;    // generator-side; also readable from question
  std::optional<int64_t> answer;    // trainer-visible only on the labeled split
  Split split = Split::kLabeled;
};

// Generator-private id -> answer map for unlabeled and eval problems. The
// trainer never sees it; the oracle judge and final scoring do.
class AnswerBook {
 public:
  void put(int64_t id, int64_t answer) { answers_[id] = answer; }
  int64_t lookup(int64_t id) const;
  bool contains(int64_t id) const { return answers_.count(id) > 0; }
  size_t size() const { return answers_.size(); }
  const std::unordered_map<int64_t, int64_t>& map() const { return answers_; }

 private:
  std::unordered_map<int64_t, int64_t> answers_;
};

// Ground truth for any problem: inline answer if present, else the book.
int64_t truth_of(const Problem& p, const AnswerBook& book);

struct GenSizes {
  int64_t labeled = 0;
  int64_t unlabeled = 0;
  int64_t eval = 0;
};

struct GenConfig {
  GenSizes sizes;
  int64_t operand_min = 1;
  int64_t operand_max = 99;
  uint64_t seed = 0;
};

struct DatasetBundle {
  std::vector<Problem> labeled;
  std::vector<Problem> unlabeled;
  std::vector<Problem> eval_clean;
  std::vector<Problem> eval_perturbed;
  std::vector<Problem> eval_p1;
  std::vector<Problem> eval_p2;
  AnswerBook answers;
  GenConfig config;

  const std::vector<Problem>& split(Split s) const;
};

int num_templates();
const std::string& template_name(int template_id);

// Draws operands for the template and instantiates the problem (id stays 0;
// make_splits assigns corpus-unique ids). Deterministic in (template_id, seed).
Problem gen_problem(int template_id, uint64_t rng_seed,
                    int64_t operand_min = 1, int64_t operand_max = 99);

// Instantiates a problem from explicit operands (test and perturbation path).
Problem make_problem(int template_id, std::span<const int64_t> operands);

// Same template, freshly drawn operands, recomputed answer. Resamples until
// the template's constraints (e.g. exact division) hold; gives up after 1000
// attempts. Only defined for clean eval problems.
Problem perturb_numeric(const Problem& p, uint64_t rng_seed,
                        int64_t operand_min = 1, int64_t operand_max = 99);

// Adds k irrelevant numeric clauses to the question; the answer is unchanged.
Problem add_distractors(const Problem& p, int k, uint64_t rng_seed,
                        int64_t operand_min = 1, int64_t operand_max = 99);

// Reference solution as program tokens, ending with newline + <eos>.
std::vector<int> gold_program(int template_id, std::span<const int64_t> operands);

// Reads the operand digit runs back out of a clean question.
std::vector<int64_t> extract_operands(int template_id, std::span<const int> question);

DatasetBundle make_splits(const GenConfig& config);

// One JSON record per line: {id, template_id, question_tokens, split} plus
// {answer} on labeled records only. Answers for the other splits go to a
// separate generator-private file.
void write_jsonl(const DatasetBundle& bundle, const std::filesystem::path& dir);
std::vector<Problem> load_problems(const std::filesystem::path& file);
AnswerBook load_answers(const std::filesystem::path& file);

// File names used by write_jsonl, in split order.
std::vector<std::string> split_file_names();
constexpr const char* kAnswerFileName = "answers_private.jsonl";

}  // namespace potrl::taskgen
