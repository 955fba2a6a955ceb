#pragma once

#include <span>
#include <vector>

#include "idpt/model/seq2seq.hpp"
#include "idpt/objectives.hpp"
#include "idpt/rng.hpp"

namespace idpt {

// A summed loss plus the number of terms in the sum; `mean()` is the
// per-token (or per-position) reduction used for logging.
template <typename Scalar>
struct LossValue {
  Scalar sum = 0;
  std::size_t count = 0;
  Scalar mean() const { return count == 0 ? Scalar(0) : sum / static_cast<Scalar>(count); }
};

struct LossOptions {
  // Adds the end-of-sequence prediction after the last target token. The
  // objective losses as defined sum over target tokens only; training turns
  // this on so the decoder learns where to stop.
  bool include_eos = false;
  // Training-mode dropout; null evaluates deterministically.
  Rng* dropout_rng = nullptr;
};

// Encoder final states, one row per source position.
template <typename Scalar>
MatrixX<Scalar> encode(const Seq2SeqModel<Scalar>& model, std::span<const TokenId> source_ids);

// Teacher-forced next-token distributions. The decoder reads
// [start, target_0 .. target_{k-1}], so row t (0 <= t <= k) is the
// distribution over the token following target_{<t}. Rows sum to one.
template <typename Scalar>
MatrixX<Scalar> forward_lm(const Seq2SeqModel<Scalar>& model, std::span<const TokenId> source_ids,
                           std::span<const TokenId> target_ids);

// Batched form: sources and targets are right-padded with [PAD] to common
// lengths and padded positions are masked out of attention. Returns each
// example's unpadded rows.
template <typename Scalar>
std::vector<MatrixX<Scalar>> forward_lm_batch(const Seq2SeqModel<Scalar>& model,
                                              const std::vector<std::vector<TokenId>>& sources,
                                              const std::vector<std::vector<TokenId>>& targets);

// -sum_t log P(target_t | source, target_<t). Accumulates d(sum)/d(theta)
// into `grad` when given. Throws InvalidArgument on an empty target (without
// include_eos), out-of-range ids or over-long sequences.
template <typename Scalar>
LossValue<Scalar> sequence_loss(const Seq2SeqModel<Scalar>& model, std::span<const TokenId> source_ids,
                                std::span<const TokenId> target_ids, const LossOptions& options = {},
                                VectorX<Scalar>* grad = nullptr);

// Masked span prediction and masked identifier prediction losses; both check
// the instance objective and then reduce to sequence_loss.
template <typename Scalar>
LossValue<Scalar> loss_msp(const Seq2SeqModel<Scalar>& model, const TrainingInstance& instance,
                           const LossOptions& options = {}, VectorX<Scalar>* grad = nullptr);
template <typename Scalar>
LossValue<Scalar> loss_mip(const Seq2SeqModel<Scalar>& model, const TrainingInstance& instance,
                           const LossOptions& options = {}, VectorX<Scalar>* grad = nullptr);

// Identifier tagging: binary cross-entropy of the logistic tagging head over
// the encoder states of the PL segment. Touches only embedding, encoder and
// tagging-head parameters.
template <typename Scalar>
LossValue<Scalar> loss_it(const Seq2SeqModel<Scalar>& model, const TrainingInstance& instance,
                          const LossOptions& options = {}, VectorX<Scalar>* grad = nullptr);

// Cross-entropy of the class head over the last decoder state.
template <typename Scalar>
LossValue<Scalar> loss_class(const Seq2SeqModel<Scalar>& model, std::span<const TokenId> source_ids,
                             std::size_t label, const LossOptions& options = {}, VectorX<Scalar>* grad = nullptr);

// Dispatches on instance.objective (MSP, MIP, DUAL_*, FINETUNE -> sequence
// loss; IT -> tagging loss).
template <typename Scalar>
LossValue<Scalar> instance_loss(const Seq2SeqModel<Scalar>& model, const TrainingInstance& instance,
                                const LossOptions& options = {}, VectorX<Scalar>* grad = nullptr);

// Summed -[y log p + (1-y) log(1-p)] with p clamped to [1e-12, 1 - 1e-12].
double binary_cross_entropy(std::span<const double> probs, std::span<const std::uint8_t> labels);

// Tagging-head probabilities for every source position.
template <typename Scalar>
VectorX<Scalar> tag_probabilities(const Seq2SeqModel<Scalar>& model, std::span<const TokenId> source_ids);

// Last decoder hidden state when the decoder reads [start] + source.
template <typename Scalar>
VectorX<Scalar> embed_last_state(const Seq2SeqModel<Scalar>& model, std::span<const TokenId> source_ids);

template <typename Scalar>
std::size_t classify_last_state(const Seq2SeqModel<Scalar>& model, std::span<const TokenId> source_ids);

// Label generated as a one-token sequence: argmax over `label_ids` of the
// first decoding step.
template <typename Scalar>
TokenId classify_unigram(const Seq2SeqModel<Scalar>& model, std::span<const TokenId> source_ids,
                         std::span<const TokenId> label_ids);

template <typename Scalar>
double cosine_similarity(const VectorX<Scalar>& a, const VectorX<Scalar>& b);

// Greedy (beam == 1) or beam-search decoding. Stops at end-of-sequence or
// after max_len tokens; the returned ids exclude start and end symbols.
template <typename Scalar>
std::vector<TokenId> generate(const Seq2SeqModel<Scalar>& model, std::span<const TokenId> source_ids,
                              std::size_t max_len, std::size_t beam = 1);

}  // namespace idpt
