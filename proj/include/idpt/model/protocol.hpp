#pragma once

#include <vector>

#include "idpt/metrics.hpp"
#include "idpt/model/ops.hpp"

namespace idpt {

// Scores of a model on sentinel-target instances (MSP or MIP): the share of
// gold sentinel spans reproduced exactly and the share of outputs with the
// expected number of sentinel predictions.
struct SentinelTaskScores {
  double accuracy = 0.0;
  double pred_count_match = 0.0;
  std::size_t instances = 0;
};

template <typename Scalar>
SentinelTaskScores evaluate_sentinel_task(const Seq2SeqModel<Scalar>& model,
                                          const std::vector<TrainingInstance>& instances, std::size_t max_len) {
  std::vector<std::vector<TokenId>> outputs;
  outputs.reserve(instances.size());
  for (const auto& inst : instances) outputs.push_back(generate(model, inst.source_ids, max_len, 1));
  return {sentinel_accuracy(outputs, instances), pred_count_match(outputs, instances), instances.size()};
}

}  // namespace idpt
