#include "potrl/interp.hpp"

#include <array>

#include "potrl/vocab.hpp"

namespace potrl::interp {
namespace {

using potrl::Vocabulary;

constexpr int kMaxLiteralDigits = 18;  // keeps literals inside int64

struct Parser {
  std::span<const int> tokens;
  size_t pos = 0;
  std::array<bool, Vocabulary::kNumVars> bound{};

  ParseResult fail(const std::string& msg) {
    ParseResult r;
    r.error = msg;
    r.error_pos = static_cast<int>(pos);
    return r;
  }

  bool at_end() const { return pos >= tokens.size(); }
  int peek() const { return tokens[pos]; }

  bool parse_operand(Operand& out, ParseResult& err) {
    if (at_end()) {
      err = fail("expected an operand");
      return false;
    }
    int tok = peek();
    if (Vocabulary::is_var(tok)) {
      int v = Vocabulary::var_index(tok);
      if (!bound[static_cast<size_t>(v)]) {
        err = fail("use of unbound variable");
        return false;
      }
      out = {true, v, 0};
      ++pos;
      return true;
    }
    if (Vocabulary::is_digit(tok)) {
      int64_t value = 0;
      int digits = 0;
      while (!at_end() && Vocabulary::is_digit(peek())) {
        if (++digits > kMaxLiteralDigits) {
          err = fail("literal too large");
          return false;
        }
        value = value * 10 + Vocabulary::digit_value(peek());
        ++pos;
      }
      out = {false, 0, value};
      return true;
    }
    err = fail("expected an operand");
    return false;
  }

  ParseResult run() {
    Program prog;
    if (tokens.empty()) return fail("empty program");
    for (int t : tokens) {
      if (t < 0 || t >= potrl::vocab().size()) return fail("token id out of range");
    }
    while (true) {
      if (at_end()) return fail("missing return");
      int tok = peek();
      if (tok == Vocabulary::kReturn) {
        ++pos;
        if (at_end() || !Vocabulary::is_var(peek())) {
          return fail("return expects a variable");
        }
        int v = Vocabulary::var_index(peek());
        if (!bound[static_cast<size_t>(v)]) return fail("use of unbound variable");
        ++pos;
        if (!at_end() && peek() == Vocabulary::kNewline) ++pos;
        if (!at_end() && peek() == Vocabulary::kEos) ++pos;
        if (!at_end()) return fail("tokens after return");
        Statement ret;
        ret.is_return = true;
        ret.target = v;
        prog.stmts.push_back(ret);
        ParseResult r;
        r.program = std::move(prog);
        return r;
      }
      if (tok == Vocabulary::kEos) return fail("missing return");
      if (!Vocabulary::is_var(tok)) return fail("expected a variable or return");
      Statement s;
      s.target = Vocabulary::var_index(tok);
      ++pos;
      if (at_end() || peek() != Vocabulary::kAssign) return fail("expected =");
      ++pos;
      ParseResult err;
      if (!parse_operand(s.a, err)) return err;
      if (at_end()) return fail("expected an operator");
      switch (peek()) {
        case Vocabulary::kPlus: s.op = '+'; break;
        case Vocabulary::kMinus: s.op = '-'; break;
        case Vocabulary::kTimes: s.op = '*'; break;
        case Vocabulary::kDivide: s.op = '/'; break;
        default: return fail("expected an operator");
      }
      ++pos;
      if (!parse_operand(s.b, err)) return err;
      if (at_end() || peek() != Vocabulary::kNewline) {
        return fail("expected a newline");
      }
      ++pos;
      bound[static_cast<size_t>(s.target)] = true;
      prog.stmts.push_back(s);
    }
  }
};

}  // namespace

const char* status_name(ExecStatus s) {
  switch (s) {
    case ExecStatus::kOk: return "ok";
    case ExecStatus::kParseError: return "parse_error";
    case ExecStatus::kRuntimeError: return "runtime_error";
    case ExecStatus::kStepBudgetExceeded: return "step_budget_exceeded";
  }
  return "unknown";
}

ParseResult parse(std::span<const int> tokens) {
  Parser p;
  p.tokens = tokens;
  return p.run();
}

ExecResult execute(const Program& program, int step_budget) {
  if (step_budget < 1) throw ConfigError("step budget must be positive");
  std::array<int64_t, Vocabulary::kNumVars> vars{};
  std::array<bool, Vocabulary::kNumVars> bound{};
  ExecResult result;
  result.status = ExecStatus::kRuntimeError;

  auto value_of = [&](const Operand& o, int64_t& out) {
    if (o.is_var) {
      if (!bound[static_cast<size_t>(o.var)]) return false;
      out = vars[static_cast<size_t>(o.var)];
      return true;
    }
    out = o.literal;
    return true;
  };

  for (const auto& s : program.stmts) {
    if (result.steps_used >= step_budget) {
      result.status = ExecStatus::kStepBudgetExceeded;
      return result;
    }
    ++result.steps_used;
    if (s.is_return) {
      if (!bound[static_cast<size_t>(s.target)]) return result;
      result.status = ExecStatus::kOk;
      result.value = vars[static_cast<size_t>(s.target)];
      return result;
    }
    int64_t a = 0, b = 0, v = 0;
    if (!value_of(s.a, a) || !value_of(s.b, b)) return result;
    switch (s.op) {
      case '+':
        if (__builtin_add_overflow(a, b, &v)) return result;
        break;
      case '-':
        if (__builtin_sub_overflow(a, b, &v)) return result;
        break;
      case '*':
        if (__builtin_mul_overflow(a, b, &v)) return result;
        break;
      case '/':
        if (b == 0 || a % b != 0) return result;
        v = a / b;
        break;
      default:
        return result;
    }
    vars[static_cast<size_t>(s.target)] = v;
    bound[static_cast<size_t>(s.target)] = true;
  }
  return result;  // parser guarantees a return, but stay defensive
}

ExecResult run(std::span<const int> tokens, int step_budget) {
  ParseResult parsed = parse(tokens);
  if (!parsed.ok()) {
    ExecResult r;
    r.status = ExecStatus::kParseError;
    return r;
  }
  return execute(*parsed.program, step_budget);
}

Real grade(const ExecResult& result, int64_t ground_truth) {
  if (result.status != ExecStatus::kOk || !result.value.has_value()) return 0.0;
  return (*result.value == ground_truth) ? 1.0 : 0.1;
}

int statement_count(std::span<const int> tokens) {
  ParseResult parsed = parse(tokens);
  if (!parsed.ok()) return 0;
  return static_cast<int>(parsed.program->stmts.size());
}

}  // namespace potrl::interp
