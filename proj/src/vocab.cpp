#include "potrl/vocab.hpp"

#include <algorithm>
#include <cctype>

namespace potrl {

Vocabulary::Vocabulary() {
  names_ = {"<eos>", "<bos>", "\n"};
  for (int d = 0; d < 10; ++d) names_.push_back(std::string(1, char('0' + d)));
  for (int v = 0; v < kNumVars; ++v) names_.push_back("v" + std::to_string(v));
  for (const char* s : {"+", "-", "*", "/", "="}) names_.push_back(s);
  for (const char* s : {"def", "solution", "return"}) names_.push_back(s);
  for (const char* s :
       {"what", "is",    "the",   "sum",     "of",     "and",  "?",
        ".",    "each",  "pack",  "costs",   "dollars", "a",   "discount",
        "how",  "much",  "to",    "pay",     "box",    "holds", "apples",
        "many", "in",    "boxes", "candies", "shared", "among", "kids",
        "for",  "buys",  "more",  "then",    "store",  "sells", "pens"}) {
    names_.push_back(s);
  }
  for (int i = 0; i < static_cast<int>(names_.size()); ++i) ids_[names_[i]] = i;
}

const std::string& Vocabulary::name(int id) const {
  if (!contains_id(id)) throw InputError("token id out of range: " + std::to_string(id));
  return names_[id];
}

std::optional<int> Vocabulary::id(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> Vocabulary::encode_text(std::string_view text) const {
  std::vector<int> out;
  size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == ' ') {
      ++i;
      continue;
    }
    if (c == '\n') {
      out.push_back(kNewline);
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\n') ++j;
    std::string_view word = text.substr(i, j - i);
    if (std::all_of(word.begin(), word.end(),
                    [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
      for (char ch : word) out.push_back(digit_token(ch - '0'));
    } else {
      auto tid = id(word);
      if (!tid) throw EncodingError("symbol not in vocabulary: " + std::string(word));
      out.push_back(*tid);
    }
    i = j;
  }
  return out;
}

std::vector<int> Vocabulary::encode_words(std::span<const std::string> words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) {
    auto tid = id(w);
    if (!tid) throw EncodingError("symbol not in vocabulary: " + w);
    out.push_back(*tid);
  }
  return out;
}

std::string Vocabulary::decode(std::span<const int> tokens) const {
  std::string out;
  bool prev_digit = false;
  for (int t : tokens) {
    const std::string& n = name(t);
    if (t == kNewline) {
      out += '\n';
      prev_digit = false;
      continue;
    }
    bool joined_digit = is_digit(t) && prev_digit;
    if (!out.empty() && out.back() != '\n' && !joined_digit) out += ' ';
    out += n;
    prev_digit = is_digit(t);
  }
  return out;
}

std::vector<std::string> Vocabulary::to_words(std::span<const int> tokens) const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (int t : tokens) out.push_back(name(t));
  return out;
}

void Vocabulary::append_number(std::vector<int>& out, int64_t value) {
  if (value < 0) throw InputError("negative literals have no token form");
  std::string digits = std::to_string(value);
  for (char c : digits) out.push_back(digit_token(c - '0'));
}

const Vocabulary& vocab() {
  static const Vocabulary v;
  return v;
}

}  // namespace potrl
