#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "potrl/common.hpp"
#include "potrl/policy.hpp"
#include "potrl/rewards.hpp"
#include "potrl/rng.hpp"
#include "potrl/taskgen.hpp"

namespace potrl::eval {

// Argmax decode, ties to the smallest token id. Deterministic.
std::vector<int> greedy_response(const policy::Net& net, const policy::Model& m,
                                 std::span<const int> question);

// Temperature sampling without the training bookkeeping.
std::vector<int> sample_response(const policy::Net& net, const policy::Model& m,
                                 std::span<const int> question, Real temperature,
                                 Rng& rng);

// Fraction of problems whose greedy program grades to exactly 1.
Real evaluate_accuracy(const policy::Net& net, const policy::Model& m,
                       std::span<const taskgen::Problem> split,
                       const taskgen::AnswerBook& answers, int step_budget = 64);

// Modal ok value; ties break to the smallest value; empty input or all
// failures abstain (nullopt).
std::optional<int64_t> modal_answer(std::span<const std::optional<int64_t>> answers);

// k temperature samples, executed and voted. Abstention grades to 0.
std::optional<int64_t> majority_vote(const policy::Net& net,
                                     const policy::Model& m,
                                     const taskgen::Problem& problem, int k,
                                     Real temperature, Rng& rng,
                                     int step_budget = 64);

Real voted_accuracy(const policy::Net& net, const policy::Model& m,
                    std::span<const taskgen::Problem> split,
                    const taskgen::AnswerBook& answers, int k, Real temperature,
                    uint64_t seed, int step_budget = 64);

// Candidate responses for one question; the bench classifies them by
// execution against the private truth.
using CandidateSupplier = std::function<std::vector<std::vector<int>>(
    const taskgen::Problem&, Rng&)>;

// Samples per-question responses from a policy at the given temperature.
CandidateSupplier policy_supplier(const policy::Net& net, const policy::Model& m,
                                  int samples_per_question, Real temperature);

// Scores one (problem, program) pair; higher should mean more likely correct.
using PairScorer =
    std::function<Real(const taskgen::Problem&, std::span<const int>, Rng&)>;

struct BenchConfig {
  int n_pairs = 200;      // stop once this many usable pairs are scored
  int min_pairs = 20;     // fewer usable pairs than this is an error
  int step_budget = 64;
  uint64_t seed = 0;
};

struct BenchResult {
  int pairs = 0;
  int wins = 0;
  Real accuracy = 0;
};

// For each question with at least one correct and one incorrect candidate,
// scores one pair and counts score(correct) > score(incorrect).
BenchResult pairwise_bench(const PairScorer& scorer,
                           std::span<const taskgen::Problem> problems,
                           const CandidateSupplier& supplier,
                           const taskgen::AnswerBook& answers,
                           const BenchConfig& cfg);

// Judge-quality benchmark: un-thresholded sigma of the verdict log-odds.
BenchResult judge_quality_bench(const rewards::Judge& judge,
                                std::span<const taskgen::Problem> problems,
                                const CandidateSupplier& supplier,
                                const taskgen::AnswerBook& answers,
                                const BenchConfig& cfg);

// Mean per-token reference log-likelihood of the program.
Real ll_score(const policy::Net& net, const policy::Model& ref,
              std::span<const int> question, std::span<const int> program);

// Same benchmark with ll_score as the scorer (the likelihood baseline).
BenchResult ll_bench(const policy::Net& net, const policy::Model& ref,
                     std::span<const taskgen::Problem> problems,
                     const CandidateSupplier& supplier,
                     const taskgen::AnswerBook& answers, const BenchConfig& cfg);

struct EvalReport {
  Real clean = 0, perturbed = 0, p1 = 0, p2 = 0;
  int n_clean = 0, n_perturbed = 0, n_p1 = 0, n_p2 = 0;
  int vote_k = 1;        // 1 = greedy decode
  Real temperature = 0;  // sampling temperature when vote_k > 1
  uint64_t seed = 0;
};

// Greedy when vote_k == 1, else voted accuracy on every eval split.
EvalReport evaluate_report(const policy::Net& net, const policy::Model& m,
                           const taskgen::DatasetBundle& bundle, int vote_k,
                           Real temperature, uint64_t seed,
                           int step_budget = 64);

std::string report_json_line(const EvalReport& r);
std::string report_csv_header();
std::string report_csv_row(const std::string& label, const EvalReport& r);

}  // namespace potrl::eval
