#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "potrl/common.hpp"

namespace potrl::interp {

enum class ExecStatus { kOk, kParseError, kRuntimeError, kStepBudgetExceeded };

const char* status_name(ExecStatus s);

struct Operand {
  bool is_var = false;
  int var = 0;
  int64_t literal = 0;
};

struct Statement {
  bool is_return = false;
  int target = 0;  // assigned variable, or the returned variable
  char op = '+';
  Operand a, b;
};

struct Program {
  std::vector<Statement> stmts;  // assignments followed by one return
};

struct ParseResult {
  std::optional<Program> program;
  std::string error;
  int error_pos = -1;  // token index the parser stopped at

  bool ok() const { return program.has_value(); }
};

// Grammar, one statement per line:
//   v = operand op operand
//   return v
// operand is a bound variable or an unsigned decimal literal. A trailing
// newline and/or <eos> after the return is accepted; anything else is not.
ParseResult parse(std::span<const int> tokens);

struct ExecResult {
  ExecStatus status = ExecStatus::kParseError;
  std::optional<int64_t> value;
  int steps_used = 0;
};

// Exact signed 64-bit arithmetic. Division by zero, a non-exact quotient, and
// overflow are runtime errors, never UB. Each statement costs one step.
ExecResult execute(const Program& program, int step_budget);

ExecResult run(std::span<const int> tokens, int step_budget);

// grade: 0 for parse/runtime/budget failure, 0.1 for a clean run with the
// wrong value, 1 for the right value.
Real grade(const ExecResult& result, int64_t ground_truth);

// Statements in a parseable program (assignments + return); 0 when the
// tokens do not parse. Feeds the short-output reward guard.
int statement_count(std::span<const int> tokens);

}  // namespace potrl::interp
