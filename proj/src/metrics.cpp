#include "idpt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "idpt/error.hpp"

namespace idpt {

namespace {

template <typename A, typename B>
void require_same_length(const A& a, const B& b, const char* what) {
  if (a.size() != b.size()) {
    throw InvalidArgument(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

nlohmann::json to_json(const EvalReport& report) {
  return {{"metric", report.metric}, {"value", report.value}, {"per_example", report.per_example}};
}

double smoothed_bleu4(std::span<const std::string> hyp, std::span<const std::string> ref) {
  if (ref.empty()) throw InvalidArgument("smoothed_bleu4: empty reference");
  if (hyp.empty()) return 0.0;
  double log_precision = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    std::size_t matches = 0;
    std::size_t candidates = 0;
    for (const auto& [gram, count] : h) {
      candidates += count;
      if (auto it = r.find(gram); it != r.end()) matches += std::min(count, it->second);
    }
    log_precision += std::log((static_cast<double>(matches) + 1.0) / (static_cast<double>(candidates) + 1.0));
  }
  const double c = static_cast<double>(hyp.size());
  const double rlen = static_cast<double>(ref.size());
  const double brevity = c >= rlen ? 1.0 : std::exp(1.0 - rlen / c);
  return 100.0 * brevity * std::exp(log_precision / 4.0);
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

double exact_match(std::span<const std::string> hyps, std::span<const std::string> refs) {
  require_same_length(hyps, refs, "exact_match");
  if (hyps.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) hits += whitespace_tokens(hyps[i]) == whitespace_tokens(refs[i]);
  return static_cast<double>(hits) / static_cast<double>(hyps.size());
}

double accuracy(std::span<const int> preds, std::span<const int> golds) {
  require_same_length(preds, golds, "accuracy");
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

BinaryScores binary_scores(std::span<const int> preds, std::span<const int> golds) {
  require_same_length(preds, golds, "f1_binary");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == 1, g = golds[i] == 1;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  BinaryScores s;
  s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

std::size_t sentinel_count(std::span<const TokenId> ids) {
  return static_cast<std::size_t>(std::count_if(ids.begin(), ids.end(), SubwordTokenizer::is_sentinel));
}

std::vector<std::pair<int, std::vector<TokenId>>> sentinel_segments(std::span<const TokenId> ids) {
  std::vector<std::pair<int, std::vector<TokenId>>> segments;
  for (auto id : ids) {
    if (SubwordTokenizer::is_sentinel(id)) {
      segments.emplace_back(SubwordTokenizer::sentinel_index(id), std::vector<TokenId>{});
    } else if (!segments.empty()) {
      segments.back().second.push_back(id);
    }
  }
  return segments;
}

double pred_count_match(std::span<const std::vector<TokenId>> outputs, std::span<const TrainingInstance> instances) {
  require_same_length(outputs, instances, "pred_count_match");
  if (outputs.empty()) return 0.0;
  std::size_t matches = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& tgt = instances[i].target_ids;
    std::set<TokenId> expected;
    for (auto id : tgt) {
      if (SubwordTokenizer::is_sentinel(id)) expected.insert(id);
    }
    matches += sentinel_count(outputs[i]) == expected.size();
  }
  return static_cast<double>(matches) / static_cast<double>(outputs.size());
}

double sentinel_accuracy(std::span<const std::vector<TokenId>> outputs, std::span<const TrainingInstance> instances) {
  require_same_length(outputs, instances, "sentinel_accuracy");
  std::size_t total = 0, hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    std::map<int, std::vector<TokenId>> predicted;
    for (auto& [s, span] : sentinel_segments(outputs[i])) predicted.emplace(s, std::move(span));
    for (const auto& [s, span] : sentinel_segments(instances[i].target_ids)) {
      ++total;
      auto it = predicted.find(s);
      hits += it != predicted.end() && it->second == span;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace idpt
