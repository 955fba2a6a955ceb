#include "idpt/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "idpt/error.hpp"
#include "json.hpp"

namespace idpt {

namespace {

constexpr const char* kFormatVersion = "idpt-bpe 1";
constexpr const char* kPretokenizerName = "space-prefixed-letter-digit-symbol-runs v1";
constexpr const char* kByteAlphabetName = "printable-remap-256 (gpt2 bytes_to_unicode)";

std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

bool is_letter(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c >= 0x80;
}
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Returns false on malformed input (overlong, surrogate, truncated, > U+10FFFF).
bool next_codepoint(std::string_view s, std::size_t& pos, char32_t& cp) {
  const auto c = static_cast<unsigned char>(s[pos]);
  std::size_t len;
  if (c < 0x80) {
    cp = c;
    len = 1;
  } else if ((c & 0xE0) == 0xC0) {
    cp = c & 0x1F;
    len = 2;
  } else if ((c & 0xF0) == 0xE0) {
    cp = c & 0x0F;
    len = 3;
  } else if ((c & 0xF8) == 0xF0) {
    cp = c & 0x07;
    len = 4;
  } else {
    return false;
  }
  if (pos + len > s.size()) return false;
  for (std::size_t i = 1; i < len; ++i) {
    const auto cc = static_cast<unsigned char>(s[pos + i]);
    if ((cc & 0xC0) != 0x80) return false;
    cp = (cp << 6) | (cc & 0x3F);
  }
  static constexpr char32_t kMinForLength[] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMinForLength[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
  pos += len;
  return true;
}

bool nonprintable_codepoint(char32_t cp) {
  if (cp == '\n' || cp == '\t') return false;
  if (cp < 0x20 || (cp >= 0x7F && cp <= 0x9F)) return true;  // Cc
  struct Range {
    char32_t lo, hi;
  };
  static constexpr Range kFormatAndPrivate[] = {
      {0x00AD, 0x00AD},   {0x0600, 0x0605},   {0x061C, 0x061C},   {0x06DD, 0x06DD},
      {0x070F, 0x070F},   {0x0890, 0x0891},   {0x08E2, 0x08E2},   {0x180E, 0x180E},
      {0x200B, 0x200F},   {0x202A, 0x202E},   {0x2060, 0x2064},   {0x2066, 0x206F},
      {0xD800, 0xDFFF},   {0xE000, 0xF8FF},   {0xFDD0, 0xFDEF},   {0xFEFF, 0xFEFF},
      {0xFFF9, 0xFFFB},   {0x110BD, 0x110BD}, {0x110CD, 0x110CD}, {0x13430, 0x1343F},
      {0x1BCA0, 0x1BCA3}, {0x1D173, 0x1D17A}, {0xE0001, 0xE0001}, {0xE0020, 0xE007F},
      {0xF0000, 0x10FFFF},
  };
  for (const auto& r : kFormatAndPrivate) {
    if (cp >= r.lo && cp <= r.hi) return true;
  }
  return (cp & 0xFFFE) == 0xFFFE;  // noncharacters U+xxFFFE / U+xxFFFF
}

// Byte <-> printable-codepoint remapping used in the serialized vocabulary so
// every token is a whitespace-free printable string.
const std::vector<char32_t>& byte_to_codepoint() {
  static const std::vector<char32_t> table = [] {
    std::vector<char32_t> t(256, 0);
    std::vector<bool> direct(256, false);
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t extra = 256;
    for (int b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<char32_t>(b) : extra++;
    return t;
  }();
  return table;
}

std::string bytes_to_printable(std::string_view raw) {
  std::string out;
  for (unsigned char b : raw) append_utf8(out, byte_to_codepoint()[b]);
  return out;
}

std::string printable_to_bytes(std::string_view printable) {
  static const std::map<char32_t, unsigned char> inverse = [] {
    std::map<char32_t, unsigned char> m;
    for (int b = 0; b < 256; ++b) m[byte_to_codepoint()[b]] = static_cast<unsigned char>(b);
    return m;
  }();
  std::string out;
  std::size_t pos = 0;
  while (pos < printable.size()) {
    char32_t cp;
    if (!next_codepoint(printable, pos, cp)) throw FormatError("malformed token in vocabulary file");
    auto it = inverse.find(cp);
    if (it == inverse.end()) throw FormatError("token uses a codepoint outside the byte alphabet");
    out += static_cast<char>(it->second);
  }
  return out;
}

}  // namespace

std::string sentinel_text(int index) { return "[MASK" + std::to_string(index) + "]"; }

std::string language_tag(std::string_view language) { return "<" + std::string(language) + ">"; }

std::vector<std::string> default_language_tags() {
  std::vector<std::string> tags{"<en>"};
  for (const char* lang : {"mini", "java", "python", "go", "javascript", "php", "ruby", "c", "c_sharp"}) {
    tags.push_back(language_tag(lang));
  }
  return tags;
}

bool has_nonprintable(std::string_view text) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    char32_t cp;
    if (!next_codepoint(text, pos, cp)) return true;
    if (nonprintable_codepoint(cp)) return true;
  }
  return false;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> chunks;
  const std::size_t n = text.size();
  std::size_t pos = 0;
  auto run = [&](std::size_t from, auto pred) {
    while (from < n && pred(static_cast<unsigned char>(text[from]))) ++from;
    return from;
  };
  auto is_symbol = [](unsigned char c) { return !is_letter(c) && !is_digit(c) && !is_space(c); };
  while (pos < n) {
    const std::size_t begin = pos;
    auto c = static_cast<unsigned char>(text[pos]);
    std::size_t body = pos;
    if (c == ' ' && pos + 1 < n && !is_space(static_cast<unsigned char>(text[pos + 1]))) {
      body = pos + 1;
      c = static_cast<unsigned char>(text[body]);
    }
    if (is_letter(c)) {
      pos = run(body, is_letter);
    } else if (is_digit(c)) {
      pos = run(body, is_digit);
    } else if (!is_space(c)) {
      pos = run(body, is_symbol);
    } else {
      pos = run(pos, is_space);
      // Leave one trailing space for the next word, as in " foo".
      if (pos < n && pos - begin > 1 && text[pos - 1] == ' ') --pos;
    }
    chunks.push_back(text.substr(begin, pos - begin));
  }
  return chunks;
}

TokenId SubwordTokenizer::sentinel_id(int index) {
  if (index < 0 || index >= kNumSentinels) {
    throw SentinelExhausted("sentinel index " + std::to_string(index) + " exceeds [MASK" +
                            std::to_string(kNumSentinels - 1) + "]");
  }
  return kMask0Id + index;
}

SubwordTokenizer SubwordTokenizer::train(std::span<const std::string> corpus, const BpeTrainOptions& options) {
  SubwordTokenizer tok;
  tok.specials_ = {"[PAD]", "[CLS]", "[SEP]"};
  for (int i = 0; i < kNumSentinels; ++i) tok.specials_.push_back(sentinel_text(i));
  for (const auto& s : options.extra_specials) {
    if (std::find(tok.specials_.begin(), tok.specials_.end(), s) != tok.specials_.end()) {
      throw InvalidArgument("duplicate special token " + s);
    }
    tok.specials_.push_back(s);
  }
  const std::size_t base = tok.specials_.size() + 256;
  if (options.vocab_size <= base) {
    throw InvalidArgument("vocab_size " + std::to_string(options.vocab_size) + " must exceed " +
                          std::to_string(tok.specials_.size()) + " specials + 256 byte units");
  }
  if (options.min_freq < 1) throw InvalidArgument("min_freq must be at least 1");
  if (corpus.empty()) throw InvalidArgument("cannot train a tokenizer on an empty corpus");
  tok.build_tables();

  // Chunk frequencies; chunks with non-printable characters never contribute
  // merge candidates. std::map keeps the word order deterministic.
  std::map<std::string, std::int64_t> chunk_counts;
  bool any_text = false;
  for (const auto& text : corpus) {
    any_text = any_text || !text.empty();
    for (auto chunk : pretokenize(text)) {
      if (!has_nonprintable(chunk)) ++chunk_counts[std::string(chunk)];
    }
  }
  if (!any_text) throw InvalidArgument("cannot train a tokenizer on an empty corpus");

  struct Word {
    std::vector<TokenId> units;
    std::int64_t count;
  };
  std::vector<Word> words;
  words.reserve(chunk_counts.size());
  for (const auto& [chunk, count] : chunk_counts) {
    Word w{{}, count};
    for (unsigned char b : chunk) w.units.push_back(tok.byte_id(b));
    words.push_back(std::move(w));
  }

  std::unordered_map<std::string, TokenId> by_bytes;
  for (int b = 0; b < 256; ++b) by_bytes.emplace(tok.tokens_[tok.byte_id(static_cast<std::uint8_t>(b))], tok.byte_id(static_cast<std::uint8_t>(b)));

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  for (const auto& w : words) {
    for (std::size_t i = 0; i + 1 < w.units.size(); ++i) pair_counts[pair_key(w.units[i], w.units[i + 1])] += w.count;
  }

  while (tok.tokens_.size() < options.vocab_size) {
    std::uint64_t best_key = 0;
    std::int64_t best_count = 0;
    for (const auto& [key, count] : pair_counts) {
      if (count <= 0) continue;
      if (count > best_count) {
        best_key = key;
        best_count = count;
      } else if (count == best_count) {
        const auto a = static_cast<TokenId>(key >> 32), b = static_cast<TokenId>(key & 0xFFFFFFFF);
        const auto ba = static_cast<TokenId>(best_key >> 32), bb = static_cast<TokenId>(best_key & 0xFFFFFFFF);
        if (std::tie(tok.tokens_[a], tok.tokens_[b]) < std::tie(tok.tokens_[ba], tok.tokens_[bb])) best_key = key;
      }
    }
    if (best_count < static_cast<std::int64_t>(options.min_freq)) break;

    const auto left = static_cast<TokenId>(best_key >> 32);
    const auto right = static_cast<TokenId>(best_key & 0xFFFFFFFF);
    // Two different merge paths can spell the same bytes; they share one id.
    auto joined = tok.tokens_[left] + tok.tokens_[right];
    auto [slot, fresh] = by_bytes.emplace(joined, static_cast<TokenId>(tok.tokens_.size()));
    const TokenId merged = slot->second;
    if (fresh) tok.tokens_.push_back(std::move(joined));
    tok.merges_.emplace_back(left, right);
    tok.merge_results_.push_back(merged);

    // Rewrite affected words, updating pair counts for the changed neighbourhoods.
    for (auto& w : words) {
      auto& u = w.units;
      bool touched = false;
      for (std::size_t i = 0; i + 1 < u.size(); ++i) {
        if (u[i] == left && u[i + 1] == right) {
          touched = true;
          break;
        }
      }
      if (!touched) continue;
      for (std::size_t i = 0; i + 1 < u.size(); ++i) pair_counts[pair_key(u[i], u[i + 1])] -= w.count;
      std::vector<TokenId> next;
      next.reserve(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) {
        if (i + 1 < u.size() && u[i] == left && u[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(u[i]);
        }
      }
      u = std::move(next);
      for (std::size_t i = 0; i + 1 < u.size(); ++i) pair_counts[pair_key(u[i], u[i + 1])] += w.count;
    }
    pair_counts.erase(best_key);
  }
  tok.build_tables();
  return tok;
}

void SubwordTokenizer::build_tables() {
  if (tokens_.empty()) {
    tokens_ = specials_;
    for (int b = 0; b < 256; ++b) tokens_.emplace_back(1, static_cast<char>(b));
  }
  special_lookup_.clear();
  for (std::size_t i = 0; i < specials_.size(); ++i) special_lookup_[specials_[i]] = static_cast<TokenId>(i);
  specials_by_length_ = specials_;
  std::stable_sort(specials_by_length_.begin(), specials_by_length_.end(),
                   [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
  merge_rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    merge_rank_.emplace(pair_key(merges_[r].first, merges_[r].second),
                        std::pair{static_cast<std::int32_t>(r), merge_results_[r]});
  }
}

const std::string& SubwordTokenizer::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InvalidArgument("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId SubwordTokenizer::special_id(std::string_view literal) const {
  auto it = special_lookup_.find(std::string(literal));
  if (it == special_lookup_.end()) throw InvalidArgument("no special token " + std::string(literal));
  return it->second;
}

bool SubwordTokenizer::has_special(std::string_view literal) const {
  return special_lookup_.contains(std::string(literal));
}

void SubwordTokenizer::encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const {
  std::vector<TokenId> units;
  units.reserve(chunk.size());
  for (unsigned char b : chunk) units.push_back(byte_id(b));
  while (units.size() > 1) {
    std::int32_t best_rank = INT32_MAX;
    TokenId best_result = -1;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < units.size(); ++i) {
      auto it = merge_rank_.find(pair_key(units[i], units[i + 1]));
      if (it != merge_rank_.end() && it->second.first < best_rank) {
        best_rank = it->second.first;
        best_result = it->second.second;
        best_pos = i;
      }
    }
    if (best_result < 0) break;
    const auto [left, right] = merges_[static_cast<std::size_t>(best_rank)];
    std::vector<TokenId> next;
    next.reserve(units.size());
    for (std::size_t i = 0; i < units.size(); ++i) {
      if (i >= best_pos && i + 1 < units.size() && units[i] == left && units[i + 1] == right) {
        next.push_back(best_result);
        ++i;
      } else {
        next.push_back(units[i]);
      }
    }
    units = std::move(next);
  }
  out.insert(out.end(), units.begin(), units.end());
}

std::vector<TokenId> SubwordTokenizer::encode_ordinary(std::string_view text) const {
  std::vector<TokenId> ids;
  for (auto chunk : pretokenize(text)) encode_chunk(chunk, ids);
  return ids;
}

std::vector<TokenId> SubwordTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::size_t plain_begin = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const char c = text[pos];
    bool matched = false;
    if (c == '[' || c == '<') {
      for (const auto& s : specials_by_length_) {
        if (text.compare(pos, s.size(), s) == 0) {
          auto part = encode_ordinary(text.substr(plain_begin, pos - plain_begin));
          ids.insert(ids.end(), part.begin(), part.end());
          ids.push_back(special_lookup_.at(s));
          pos += s.size();
          plain_begin = pos;
          matched = true;
          break;
        }
      }
    }
    if (!matched) ++pos;
  }
  auto tail = encode_ordinary(text.substr(plain_begin));
  ids.insert(ids.end(), tail.begin(), tail.end());
  return ids;
}

std::string SubwordTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) out += token_bytes(id);
  return out;
}

void SubwordTokenizer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream vocab(dir / "vocab.txt");
  std::ofstream merges(dir / "merges.txt");
  if (!vocab || !merges) throw IoError("cannot write tokenizer to " + dir.string());
  vocab << "#version " << kFormatVersion << '\n';
  vocab << "#specials " << nlohmann::json(specials_).dump() << '\n';
  vocab << "#pretokenizer " << kPretokenizerName << '\n';
  vocab << "#byte_alphabet " << kByteAlphabetName << '\n';
  for (std::size_t id = specials_.size(); id < tokens_.size(); ++id) vocab << bytes_to_printable(tokens_[id]) << '\n';
  merges << "#version " << kFormatVersion << '\n';
  for (const auto& [a, b] : merges_) {
    merges << bytes_to_printable(tokens_[a]) << ' ' << bytes_to_printable(tokens_[b]) << '\n';
  }
}

SubwordTokenizer SubwordTokenizer::load(const std::filesystem::path& dir) {
  std::ifstream vocab(dir / "vocab.txt");
  std::ifstream merges(dir / "merges.txt");
  if (!vocab || !merges) throw IoError("cannot read tokenizer from " + dir.string());
  SubwordTokenizer tok;
  std::string line;
  std::vector<std::string> vocab_lines;
  bool saw_version = false;
  bool in_header = true;  // '#' lines are headers only before the first unit
  while (std::getline(vocab, line)) {
    in_header = in_header && line.starts_with("#");
    if (!in_header) {
      vocab_lines.push_back(printable_to_bytes(line));
    } else if (line.starts_with("#version ")) {
      if (line.substr(9) != kFormatVersion) throw FormatError("unsupported tokenizer version: " + line.substr(9));
      saw_version = true;
    } else if (line.starts_with("#specials ")) {
      try {
        tok.specials_ = nlohmann::json::parse(line.substr(10)).get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad specials header: ") + e.what());
      }
    }
  }
  if (!saw_version || tok.specials_.size() < 3 + static_cast<std::size_t>(kNumSentinels)) {
    throw FormatError("tokenizer header missing version or specials");
  }
  tok.build_tables();  // specials + bytes
  std::unordered_map<std::string, TokenId> by_bytes;
  for (std::size_t id = tok.specials_.size(); id < tok.tokens_.size(); ++id) by_bytes[tok.tokens_[id]] = static_cast<TokenId>(id);
  for (bool first = true; std::getline(merges, line); first = false) {
    if ((first && line.starts_with("#version ")) || line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw FormatError("malformed merge line: " + line);
    const auto a = printable_to_bytes(line.substr(0, sp));
    const auto b = printable_to_bytes(line.substr(sp + 1));
    auto ia = by_bytes.find(a), ib = by_bytes.find(b);
    if (ia == by_bytes.end() || ib == by_bytes.end()) throw FormatError("merge references unknown unit: " + line);
    tok.merges_.emplace_back(ia->second, ib->second);
    auto [slot, fresh] = by_bytes.emplace(a + b, static_cast<TokenId>(tok.tokens_.size()));
    if (fresh) tok.tokens_.push_back(a + b);
    tok.merge_results_.push_back(slot->second);
  }
  if (vocab_lines.size() + tok.specials_.size() != tok.tokens_.size()) {
    throw FormatError("vocab.txt and merges.txt disagree on vocabulary size");
  }
  for (std::size_t i = 0; i < vocab_lines.size(); ++i) {
    if (vocab_lines[i] != tok.tokens_[tok.specials_.size() + i]) throw FormatError("vocab.txt entry mismatch");
  }
  tok.build_tables();
  return tok;
}

CompressionStats compression_ratio(const SubwordTokenizer& a, const SubwordTokenizer& b,
                                   std::span<const std::string> corpus) {
  if (corpus.empty()) throw InvalidArgument("compression_ratio needs a non-empty corpus");
  CompressionStats stats;
  double total = 0.0;
  for (const auto& doc : corpus) {
    const auto la = a.encode_ordinary(doc).size();
    const auto lb = b.encode_ordinary(doc).size();
    if (lb == 0) throw InvalidArgument("document encodes to zero length");
    const double r = static_cast<double>(la) / static_cast<double>(lb);
    stats.per_document.push_back(r);
    total += r;
  }
  stats.mean = total / static_cast<double>(corpus.size());
  return stats;
}

}  // namespace idpt
