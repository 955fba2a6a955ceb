#include "idpt/lexer.hpp"

#include <algorithm>
#include <fstream>

#include "idpt/error.hpp"

namespace idpt {

std::string_view to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::kIdentifier: return "identifier";
    case TokenKind::kKeyword: return "keyword";
    case TokenKind::kLiteral: return "literal";
    case TokenKind::kOperator: return "operator";
    case TokenKind::kPunctuation: return "punctuation";
    case TokenKind::kComment: return "comment";
    case TokenKind::kUnknown: return "unknown";
  }
  return "unknown";
}

namespace {

bool is_ascii_alpha(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool starts_with_at(std::string_view s, std::size_t pos, std::string_view prefix) {
  return s.size() - pos >= prefix.size() && s.compare(pos, prefix.size(), prefix) == 0;
}

// Length of the UTF-8 sequence introduced by lead byte `c`; invalid leads
// count as a single byte.
std::size_t utf8_length(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c & 0xE0) == 0xC0) return 2;
  if ((c & 0xF0) == 0xE0) return 3;
  if ((c & 0xF8) == 0xF0) return 4;
  return 1;
}

template <typename T>
std::vector<T> get_list(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return {};
  return j.at(key).get<std::vector<T>>();
}

std::vector<std::string> sorted_longest_first(std::vector<std::string> items) {
  std::stable_sort(items.begin(), items.end(),
                   [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
  return items;
}

}  // namespace

LanguageRules LanguageRules::from_json(const nlohmann::json& j) {
  LanguageRules r;
  try {
    r.language = j.at("language").get<std::string>();
    for (auto& k : get_list<std::string>(j, "keywords")) r.keywords.insert(k);
    for (auto& k : get_list<std::string>(j, "literal_words")) r.literal_words.insert(k);
    r.identifier_extra_start = j.value("identifier_extra_start", std::string{});
    r.identifier_extra_continue = j.value("identifier_extra_continue", std::string{});
    r.line_comments = get_list<std::string>(j, "line_comments");
    for (auto& pair : get_list<std::vector<std::string>>(j, "block_comments")) {
      if (pair.size() != 2) throw FormatError("block_comments entries must be [open, close] pairs");
      r.block_comments.emplace_back(pair[0], pair[1]);
    }
    r.string_delimiters = get_list<std::string>(j, "string_delimiters");
    r.operators = get_list<std::string>(j, "operators");
    r.punctuation = j.value("punctuation", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed language rule table: ") + e.what());
  }
  if (r.language.empty()) throw FormatError("language rule table has an empty language tag");
  if (r.keywords.empty()) throw FormatError("language '" + r.language + "' has no keywords");
  return r;
}

nlohmann::json LanguageRules::to_json() const {
  auto sorted = [](const std::unordered_set<std::string>& s) {
    std::vector<std::string> v(s.begin(), s.end());
    std::sort(v.begin(), v.end());
    return v;
  };
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& [open, close] : block_comments) blocks.push_back({open, close});
  return {{"language", language},
          {"keywords", sorted(keywords)},
          {"literal_words", sorted(literal_words)},
          {"identifier_extra_start", identifier_extra_start},
          {"identifier_extra_continue", identifier_extra_continue},
          {"line_comments", line_comments},
          {"block_comments", blocks},
          {"string_delimiters", string_delimiters},
          {"operators", operators},
          {"punctuation", punctuation}};
}

LanguageLexer::LanguageLexer(LanguageRules rules)
    : rules_(std::move(rules)),
      operators_by_length_(sorted_longest_first(rules_.operators)),
      strings_by_length_(sorted_longest_first(rules_.string_delimiters)) {
  if (rules_.keywords.empty()) {
    throw InvalidArgument("language '" + rules_.language + "' has an empty keyword set");
  }
}

bool LanguageLexer::identifier_start(unsigned char c) const {
  return is_ascii_alpha(c) || c == '_' || c >= 0x80 ||
         rules_.identifier_extra_start.find(static_cast<char>(c)) != std::string::npos;
}

bool LanguageLexer::identifier_continue(unsigned char c) const {
  return identifier_start(c) || is_digit(c) ||
         rules_.identifier_extra_continue.find(static_cast<char>(c)) != std::string::npos;
}

bool LanguageLexer::is_keyword(std::string_view word) const {
  return rules_.keywords.contains(std::string(word));
}

bool LanguageLexer::is_identifier(std::string_view text) const {
  if (text.empty() || !identifier_start(static_cast<unsigned char>(text[0]))) return false;
  for (unsigned char c : text.substr(1)) {
    if (!identifier_continue(c)) return false;
  }
  const std::string word(text);
  return !rules_.keywords.contains(word) && !rules_.literal_words.contains(word);
}

std::vector<LexToken> LanguageLexer::lex(std::string_view src, const LexOptions& options) const {
  std::vector<LexToken> out;
  std::size_t pos = 0;
  const std::size_t n = src.size();

  auto emit = [&](std::size_t begin, std::size_t end, TokenKind kind) {
    if (kind == TokenKind::kComment && !options.keep_comments) return;
    out.push_back(LexToken{std::string(src.substr(begin, end - begin)), kind, Span{begin, end}});
  };

  while (pos < n) {
    const auto c = static_cast<unsigned char>(src[pos]);
    if (is_space(c)) {
      ++pos;
      continue;
    }
    const std::size_t begin = pos;

    bool matched = false;
    for (const auto& lc : rules_.line_comments) {
      if (starts_with_at(src, pos, lc)) {
        const auto nl = src.find('\n', pos);
        pos = nl == std::string_view::npos ? n : nl;
        emit(begin, pos, TokenKind::kComment);
        matched = true;
        break;
      }
    }
    if (matched) continue;
    for (const auto& [open, close] : rules_.block_comments) {
      if (starts_with_at(src, pos, open)) {
        const auto end = src.find(close, pos + open.size());
        pos = end == std::string_view::npos ? n : end + close.size();
        emit(begin, pos, TokenKind::kComment);
        matched = true;
        break;
      }
    }
    if (matched) continue;
    for (const auto& delim : strings_by_length_) {
      if (starts_with_at(src, pos, delim)) {
        pos += delim.size();
        while (pos < n && !starts_with_at(src, pos, delim)) {
          pos += (src[pos] == '\\' && pos + 1 < n) ? 2 : 1;
        }
        pos = std::min(n, pos + delim.size());
        emit(begin, pos, TokenKind::kLiteral);
        matched = true;
        break;
      }
    }
    if (matched) continue;

    if (is_digit(c) || (c == '.' && pos + 1 < n && is_digit(static_cast<unsigned char>(src[pos + 1])))) {
      const bool hex = starts_with_at(src, begin, "0x") || starts_with_at(src, begin, "0X");
      ++pos;
      while (pos < n) {
        const auto d = static_cast<unsigned char>(src[pos]);
        const auto prev = static_cast<unsigned char>(src[pos - 1]);
        if (is_ascii_alpha(d) || is_digit(d) || d == '_' || d == '.' ||
            ((d == '+' || d == '-') && (prev == 'e' || prev == 'E') && !hex)) {
          ++pos;
        } else {
          break;
        }
      }
      emit(begin, pos, TokenKind::kLiteral);
      continue;
    }

    if (identifier_start(c)) {
      pos += utf8_length(c);
      while (pos < n && identifier_continue(static_cast<unsigned char>(src[pos]))) {
        pos += utf8_length(static_cast<unsigned char>(src[pos]));
      }
      pos = std::min(pos, n);
      const std::string word(src.substr(begin, pos - begin));
      TokenKind kind = TokenKind::kIdentifier;
      if (rules_.keywords.contains(word)) {
        kind = TokenKind::kKeyword;
      } else if (rules_.literal_words.contains(word)) {
        kind = TokenKind::kLiteral;
      }
      emit(begin, pos, kind);
      continue;
    }

    for (const auto& op : operators_by_length_) {
      if (starts_with_at(src, pos, op)) {
        pos += op.size();
        emit(begin, pos, TokenKind::kOperator);
        matched = true;
        break;
      }
    }
    if (matched) continue;

    if (rules_.punctuation.find(static_cast<char>(c)) != std::string::npos) {
      ++pos;
      emit(begin, pos, TokenKind::kPunctuation);
      continue;
    }

    pos = std::min(n, pos + utf8_length(c));
    emit(begin, pos, TokenKind::kUnknown);
  }
  return out;
}

std::vector<std::uint8_t> label_identifiers(const std::vector<LexToken>& tokens) {
  std::vector<std::uint8_t> labels;
  labels.reserve(tokens.size());
  for (const auto& t : tokens) labels.push_back(t.kind == TokenKind::kIdentifier ? 1 : 0);
  return labels;
}

std::vector<std::string> unique_identifiers(const std::vector<LexToken>& tokens) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& t : tokens) {
    if (t.kind == TokenKind::kIdentifier && seen.insert(t.text).second) out.push_back(t.text);
  }
  return out;
}

LanguageRegistry LanguageRegistry::load(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(path)) {
    files.push_back(path);
  } else {
    throw IoError("language config not found: " + path.string());
  }

  LanguageRegistry reg;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw IoError("cannot read language config: " + f.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(f.string() + ": " + e.what());
    }
    reg.add(LanguageRules::from_json(j));
  }
  return reg;
}

void LanguageRegistry::add(LanguageRules rules) {
  auto tag = rules.language;
  lexers_[tag] = std::make_shared<const LanguageLexer>(std::move(rules));
}

bool LanguageRegistry::supports(std::string_view tag) const { return lexers_.find(tag) != lexers_.end(); }

const LanguageLexer& LanguageRegistry::get(std::string_view tag) const {
  auto it = lexers_.find(tag);
  if (it == lexers_.end()) throw UnsupportedLanguage(std::string(tag));
  return *it->second;
}

std::vector<std::string> LanguageRegistry::languages() const {
  std::vector<std::string> out;
  for (const auto& [tag, _] : lexers_) out.push_back(tag);
  return out;
}

}  // namespace idpt
