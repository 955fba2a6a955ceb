#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "idpt/bpe.hpp"
#include "idpt/corpus.hpp"
#include "idpt/rng.hpp"
#include "json.hpp"

namespace idpt {

enum class Objective : std::uint8_t { kMsp, kIt, kMip, kDualNl2Pl, kDualPl2Nl, kFinetune };

std::string_view to_string(Objective objective);
Objective objective_from_string(std::string_view name);  // throws FormatError

struct TrainingInstance {
  std::vector<TokenId> source_ids;
  std::vector<TokenId> target_ids;
  Objective objective = Objective::kMsp;
  // IT only: one label per subword of the PL segment.
  std::optional<std::vector<std::uint8_t>> tag_labels;
  // Set once a task control code has been prepended to the source.
  std::optional<std::string> control_code;

  friend bool operator==(const TrainingInstance&, const TrainingInstance&) = default;
};

nlohmann::json to_json(const TrainingInstance& inst);
TrainingInstance instance_from_json(const nlohmann::json& j);
std::vector<TrainingInstance> read_instances(const std::filesystem::path& path);
void write_instances(const std::filesystem::path& path, const std::vector<TrainingInstance>& instances);

// Half-open [begin, end) range of the PL segment in an encoder input laid out
// as [CLS] nl... [SEP] code... [SEP].
struct SegmentRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};
SegmentRange pl_segment(const std::vector<TokenId>& source_ids);

struct MaskSpan {
  std::size_t start = 0;   // whole-word position
  std::size_t length = 0;  // in whole words, 1..5
  friend bool operator==(const MaskSpan&, const MaskSpan&) = default;
};

struct SpanPlan {
  std::vector<MaskSpan> spans;  // disjoint, ordered by start
  double corruption_rate = 0.0;
  std::uint64_t seed = 0;

  std::size_t masked_words() const;
};

inline constexpr double kDefaultCorruptionRate = 0.15;
inline constexpr std::size_t kMinSpanLength = 1;
inline constexpr std::size_t kMaxSpanLength = 5;

// round-half-up(rate * num_words)
std::size_t mask_budget(std::size_t num_words, double rate);

// Samples whole-word spans covering exactly mask_budget(num_words, rate)
// words. The span count is round(budget / 3) (kept feasible for lengths in
// [1, 5]); lengths are iid uniform on {1..5} conditioned on summing to the
// budget, and spans sit at uniformly random positions with at least one
// unmasked word between neighbours whenever the sequence leaves room.
SpanPlan sample_spans(std::size_t num_words, double rate, Rng& rng);

struct BuildOptions {
  std::size_t max_source_len = 512;
  std::size_t max_target_len = 256;
};

// Subword ids of one whole word. Words are encoded with a leading space so
// decoded sequences read back as space-separated text.
std::vector<TokenId> encode_word(const SubwordTokenizer& tok, std::string_view word);

// Drops trailing whole words (code first, then NL) until the uncorrupted
// encoder input fits max_source_len.
CodeDocument fit_document(const CodeDocument& doc, const SubwordTokenizer& tok, const BuildOptions& options);

// [CLS] nl... [SEP] code... [SEP]
std::vector<TokenId> encode_document(const CodeDocument& doc, const SubwordTokenizer& tok);

// Replaces each planned span by [MASKi] (i = 0, 1, ...) and moves the span's
// subwords into the target after the same sentinel. A span straddling the
// NL/PL boundary carries the delimiting [SEP] into the target with it.
// Trailing spans are unmasked if the target would exceed max_target_len.
// Throws SentinelExhausted past 100 spans, InvalidArgument if the plan does
// not fit the document.
TrainingInstance build_msp(const CodeDocument& doc, const SubwordTokenizer& tok, const SpanPlan& plan,
                           const BuildOptions& options = {});

TrainingInstance build_it(const CodeDocument& doc, const SubwordTokenizer& tok);

// Masks every identifier in the PL segment, one sentinel per distinct name.
// Returns nullopt when the code has no identifiers. Throws SentinelExhausted
// above 100 distinct identifiers.
std::optional<TrainingInstance> build_mip(const CodeDocument& doc, const SubwordTokenizer& tok,
                                          const BuildOptions& options = {});

// NL->PL and PL->NL instances; throws InvalidArgument for unimodal documents.
std::pair<TrainingInstance, TrainingInstance> build_dual_pair(const CodeDocument& doc, const SubwordTokenizer& tok,
                                                              const BuildOptions& options = {});

inline constexpr Objective kDenoisingTasks[] = {Objective::kMsp, Objective::kIt, Objective::kMip};

Objective pick_denoising_task(Rng& rng);

// Per-document MSP, IT and (when identifiers exist) MIP instances, each
// document seeded by mix_seed(seed, index).
std::vector<TrainingInstance> build_denoise_instances(const std::vector<CodeDocument>& docs,
                                                      const SubwordTokenizer& tok, std::uint64_t seed,
                                                      double rate = kDefaultCorruptionRate,
                                                      const BuildOptions& options = {});

std::vector<TrainingInstance> build_dual_instances(const std::vector<CodeDocument>& docs,
                                                   const SubwordTokenizer& tok, const BuildOptions& options = {});

}  // namespace idpt
