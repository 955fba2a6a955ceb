#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"

namespace idpt {

enum class TokenKind : std::uint8_t {
  kIdentifier,
  kKeyword,
  kLiteral,
  kOperator,
  kPunctuation,
  kComment,
  kUnknown,
};

std::string_view to_string(TokenKind kind);

struct Span {
  std::size_t begin = 0;  // byte offset, inclusive
  std::size_t end = 0;    // byte offset, exclusive
};

struct LexToken {
  std::string text;
  TokenKind kind = TokenKind::kUnknown;
  Span span;
};

// Lexing rule table for one language. Immutable after construction, so a
// single instance can be shared across threads.
struct LanguageRules {
  std::string language;
  std::unordered_set<std::string> keywords;
  // Reserved words that denote values (true, null, ...). They lex as
  // literals and are never identifiers.
  std::unordered_set<std::string> literal_words;
  std::string identifier_extra_start;     // besides [A-Za-z_] and non-ASCII
  std::string identifier_extra_continue;  // besides the start set and [0-9]
  std::vector<std::string> line_comments;
  std::vector<std::pair<std::string, std::string>> block_comments;
  // Each delimiter opens and closes a string; backslash escapes the next byte.
  // Multi-byte delimiters (Python's triple quotes) are tried first.
  std::vector<std::string> string_delimiters;
  std::vector<std::string> operators;  // longest match wins
  std::string punctuation;

  static LanguageRules from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct LexOptions {
  bool keep_comments = false;
};

class LanguageLexer {
 public:
  explicit LanguageLexer(LanguageRules rules);

  const std::string& language() const { return rules_.language; }
  const LanguageRules& rules() const { return rules_; }

  bool is_keyword(std::string_view word) const;
  // True when `text` matches the identifier lexical rule and is not reserved.
  bool is_identifier(std::string_view text) const;

  std::vector<LexToken> lex(std::string_view source, const LexOptions& options = {}) const;

 private:
  bool identifier_start(unsigned char c) const;
  bool identifier_continue(unsigned char c) const;

  LanguageRules rules_;
  std::vector<std::string> operators_by_length_;
  std::vector<std::string> strings_by_length_;
};

// Binary identifier labels: 1 where the token is an identifier.
std::vector<std::uint8_t> label_identifiers(const std::vector<LexToken>& tokens);

// Distinct identifier lexemes in first-occurrence order.
std::vector<std::string> unique_identifiers(const std::vector<LexToken>& tokens);

// Set of lexers keyed by language tag, loaded from rule-table files.
class LanguageRegistry {
 public:
  LanguageRegistry() = default;

  // `path` is either a single rule-table JSON file or a directory of them.
  static LanguageRegistry load(const std::filesystem::path& path);

  void add(LanguageRules rules);
  bool supports(std::string_view tag) const;
  const LanguageLexer& get(std::string_view tag) const;  // throws UnsupportedLanguage
  std::vector<std::string> languages() const;

 private:
  std::map<std::string, std::shared_ptr<const LanguageLexer>, std::less<>> lexers_;
};

}  // namespace idpt
