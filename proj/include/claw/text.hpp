#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace claw {

// Shared tokenizer for label extraction, trajectory token sequences and every
// metric: lowercase, split on whitespace and ASCII punctuation, punctuation
// dropped. Bytes >= 0x80 are kept as word characters so UTF-8 survives intact.
std::vector<std::string> tokenize(std::string_view text);

// Splits on any character of `boundaries`; the boundary characters are dropped
// and empty pieces are kept (callers tokenize each piece anyway).
std::vector<std::string_view> split_sentences(std::string_view text, std::string_view boundaries);

// Replaces every `{identifier}` with values.at(identifier). Braces that do not
// enclose an identifier (e.g. literal JSON in a prompt) pass through untouched.
// Throws std::out_of_range naming the placeholder when a value is missing.
std::string substitute(std::string_view tmpl, const std::map<std::string, std::string>& values);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

// Fixed vocabulary: token ids are ranks in lexicographic order of the distinct
// tokens seen at build time.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary build(std::span<const std::vector<std::string>> token_lists);

  [[nodiscard]] std::size_t size() const { return tokens_.size(); }
  [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }
  [[nodiscard]] int id(std::string_view token) const;  // throws std::out_of_range
  [[nodiscard]] std::vector<int> encode(std::span<const std::string> tokens) const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> tokens_;
};

}  // namespace claw
