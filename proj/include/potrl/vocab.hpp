#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "potrl/common.hpp"

namespace potrl {

// Fixed 64-token action alphabet shared by questions and programs.
// Numbers are always written as digit-token runs ("76" -> ["7","6"]), so
// decode() joins consecutive digit tokens without a space. Two separate
// numeric literals therefore need a non-digit token between them; the
// question templates and the program grammar never place them adjacent.
class Vocabulary {
 public:
  static constexpr int kEos = 0;  // reserved terminal id
  static constexpr int kBos = 1;
  static constexpr int kNewline = 2;
  static constexpr int kDigit0 = 3;   // "0".."9" -> 3..12
  static constexpr int kVar0 = 13;    // "v0".."v7" -> 13..20
  static constexpr int kPlus = 21;
  static constexpr int kMinus = 22;
  static constexpr int kTimes = 23;
  static constexpr int kDivide = 24;
  static constexpr int kAssign = 25;
  static constexpr int kDef = 26;
  static constexpr int kSolution = 27;
  static constexpr int kReturn = 28;
  static constexpr int kNumVars = 8;

  Vocabulary();

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const;
  std::optional<int> id(std::string_view name) const;

  bool contains_id(int id) const { return id >= 0 && id < size(); }
  static bool is_digit(int id) { return id >= kDigit0 && id < kDigit0 + 10; }
  static int digit_value(int id) { return id - kDigit0; }
  static int digit_token(int value) { return kDigit0 + value; }
  static bool is_var(int id) { return id >= kVar0 && id < kVar0 + kNumVars; }
  static int var_index(int id) { return id - kVar0; }
  static int var_token(int index) { return kVar0 + index; }

  // Splits text on spaces and newlines; numbers become digit-token runs.
  std::vector<int> encode_text(std::string_view text) const;

  // One vocabulary name per element (the dataset-file representation).
  std::vector<int> encode_words(std::span<const std::string> words) const;

  std::string decode(std::span<const int> tokens) const;
  std::vector<std::string> to_words(std::span<const int> tokens) const;

  // Appends the digit-run encoding of a non-negative integer.
  static void append_number(std::vector<int>& out, int64_t value);

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
};

// The project-wide shared instance.
const Vocabulary& vocab();

}  // namespace potrl
