#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace idpt {

using TokenId = std::int32_t;

// Fixed special-token layout: [PAD]=0, [CLS]=1, [SEP]=2, [MASK0..99]=3..102,
// then any extra specials (language ids such as <java>, <en>), then the 256
// byte units, then learned merge units in merge order.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kClsId = 1;
inline constexpr TokenId kSepId = 2;
inline constexpr TokenId kMask0Id = 3;
inline constexpr int kNumSentinels = 100;

std::string sentinel_text(int index);  // "[MASK<index>]"
std::string language_tag(std::string_view language);  // "<java>"

// Language ids registered by default: English NL plus every bundled language.
std::vector<std::string> default_language_tags();

// True when `text` holds a codepoint of Unicode category C* other than
// newline and tab, or is not valid UTF-8. Category data covers Cc, Cs, Co and
// the assigned Cf ranges; unassigned (Cn) codepoints are not detected apart
// from noncharacters.
bool has_nonprintable(std::string_view text);

// Splits text into the chunks BPE merges operate within: an optional leading
// space plus a run of letters, of digits, or of other symbols; or a run of
// whitespace, leaving a final space to attach to the following word.
std::vector<std::string_view> pretokenize(std::string_view text);

struct BpeTrainOptions {
  std::size_t vocab_size = 8000;
  std::size_t min_freq = 3;
  std::vector<std::string> extra_specials = default_language_tags();
};

class SubwordTokenizer {
 public:
  // Trains from scratch. Throws InvalidArgument when the corpus is empty or
  // vocab_size leaves no room beyond the specials and byte units.
  static SubwordTokenizer train(std::span<const std::string> corpus, const BpeTrainOptions& options);

  static SubwordTokenizer load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  // Special literals such as "[MASK7]" or "<java>" map to their single id.
  std::vector<TokenId> encode(std::string_view text) const;
  // Treats special literals as ordinary bytes.
  std::vector<TokenId> encode_ordinary(std::string_view text) const;
  // Throws InvalidArgument on an out-of-range id.
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t vocab_size() const { return tokens_.size(); }
  std::size_t num_specials() const { return specials_.size(); }
  const std::vector<std::string>& specials() const { return specials_; }
  const std::string& token_bytes(TokenId id) const;
  TokenId byte_id(std::uint8_t b) const { return static_cast<TokenId>(specials_.size()) + b; }
  TokenId first_merge_id() const { return static_cast<TokenId>(specials_.size() + 256); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }

  bool is_special(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < specials_.size(); }
  static bool is_sentinel(TokenId id) { return id >= kMask0Id && id < kMask0Id + kNumSentinels; }
  static TokenId sentinel_id(int index);  // throws SentinelExhausted past 99
  static int sentinel_index(TokenId id) { return id - kMask0Id; }
  // Id of a special literal such as "<java>"; throws InvalidArgument if absent.
  TokenId special_id(std::string_view literal) const;
  bool has_special(std::string_view literal) const;

 private:
  SubwordTokenizer() = default;
  void build_tables();
  void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

  std::vector<std::string> specials_;
  std::vector<std::string> tokens_;  // raw bytes per id
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::vector<TokenId> merge_results_;
  std::unordered_map<std::uint64_t, std::pair<std::int32_t, TokenId>> merge_rank_;  // pair -> (rank, result)
  std::unordered_map<std::string, TokenId> special_lookup_;
  std::vector<std::string> specials_by_length_;
};

struct CompressionStats {
  double mean = 0.0;
  std::vector<double> per_document;  // len(encode_a) / len(encode_b)
};

// Throws InvalidArgument on an empty corpus or a document tokenizer_b
// encodes to zero length.
CompressionStats compression_ratio(const SubwordTokenizer& a, const SubwordTokenizer& b,
                                   std::span<const std::string> corpus);

}  // namespace idpt
