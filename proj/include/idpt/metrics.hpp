#pragma once

#include <span>
#include <string>
#include <vector>

#include "idpt/bpe.hpp"
#include "idpt/objectives.hpp"
#include "json.hpp"

namespace idpt {

struct EvalReport {
  std::string metric;
  double value = 0.0;
  std::vector<double> per_example;
};

nlohmann::json to_json(const EvalReport& report);

// Sentence-level BLEU-4 on a 0..100 scale: add-one smoothing on every n-gram
// precision, (matches + 1) / (candidates + 1), times the brevity penalty.
// An empty hypothesis scores 0. Throws InvalidArgument on an empty reference.
double smoothed_bleu4(std::span<const std::string> hypothesis, std::span<const std::string> reference);

std::vector<std::string> whitespace_tokens(const std::string& text);

// Fraction of pairs whose whitespace-normalized token sequences are equal.
double exact_match(std::span<const std::string> hyps, std::span<const std::string> refs);
double accuracy(std::span<const int> preds, std::span<const int> golds);

struct BinaryScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
// Positive class is 1. Precision/recall with no denominator are reported as 0.
BinaryScores binary_scores(std::span<const int> preds, std::span<const int> golds);
inline double f1_binary(std::span<const int> preds, std::span<const int> golds) {
  return binary_scores(preds, golds).f1;
}

// Number of sentinel tokens in a sequence.
std::size_t sentinel_count(std::span<const TokenId> ids);

// Splits a sentinel-delimited sequence into (sentinel index, span) segments;
// tokens before the first sentinel are dropped.
std::vector<std::pair<int, std::vector<TokenId>>> sentinel_segments(std::span<const TokenId> ids);

// Fraction of outputs whose sentinel-delimited segment count equals the
// number of distinct sentinels in the paired instance's target.
double pred_count_match(std::span<const std::vector<TokenId>> outputs, std::span<const TrainingInstance> instances);

// Fraction of gold (sentinel, span) segments reproduced exactly under the
// same sentinel in the output.
double sentinel_accuracy(std::span<const std::vector<TokenId>> outputs, std::span<const TrainingInstance> instances);

}  // namespace idpt
