#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "idpt/bpe.hpp"
#include "idpt/model/config.hpp"

namespace idpt {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Which part of the network a parameter tensor belongs to. The encoder
// parameter set is {kEmbedding, kEncoder}; the identifier-tagging loss reads
// nothing else besides kTagHead.
enum class ParamGroup : std::uint8_t { kEmbedding, kEncoder, kDecoder, kLmHead, kTagHead, kClassHead };

std::string_view to_string(ParamGroup group);

struct TensorInfo {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  ParamGroup group = ParamGroup::kEncoder;

  Eigen::Index size() const { return rows * cols; }
};

struct NormSlots {
  std::size_t gamma = 0, beta = 0;
};
struct AttentionSlots {
  std::size_t q_w = 0, q_b = 0, k_w = 0, k_b = 0, v_w = 0, v_b = 0, o_w = 0, o_b = 0;
};
struct FeedForwardSlots {
  std::size_t in_w = 0, in_b = 0, out_w = 0, out_b = 0;
};
struct EncoderLayerSlots {
  NormSlots ln1;
  AttentionSlots attn;
  NormSlots ln2;
  FeedForwardSlots ffn;
};
struct DecoderLayerSlots {
  NormSlots ln1;
  AttentionSlots self_attn;
  NormSlots ln2;
  AttentionSlots cross_attn;
  NormSlots ln3;
  FeedForwardSlots ffn;
};

// Tensor indices of every parameter, resolved once at construction.
struct ModelLayout {
  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);

  std::size_t embedding = 0;
  std::size_t encoder_position = 0;
  std::size_t decoder_position = 0;
  std::vector<EncoderLayerSlots> encoder;
  NormSlots encoder_final;
  std::vector<DecoderLayerSlots> decoder;
  NormSlots decoder_final;
  std::size_t lm_w = 0, lm_b = 0;
  std::size_t tag_w = 0, tag_b = 0;
  std::size_t class_w = kAbsent, class_b = kAbsent;
};

// Pre-LN encoder-decoder transformer with learned absolute positions, a
// shared token embedding, an LM head over decoder states, a per-position
// logistic tagging head over encoder states and an optional classification
// head over the last decoder state.
//
// All parameters live in one flat vector; tensors are column-major views
// into it, so optimizers, checkpoints and gradient checks work on the flat
// vector directly. Gradients use the same layout.
template <typename Scalar>
class Seq2SeqModel {
 public:
  using Mat = MatrixX<Scalar>;
  using Vec = VectorX<Scalar>;
  using ConstTensor = Eigen::Map<const Mat>;
  using Tensor = Eigen::Map<Mat>;

  // Randomly initialized from `seed`.
  Seq2SeqModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const ModelLayout& layout() const { return layout_; }
  std::size_t tensor_index(std::string_view name) const;  // throws InvalidArgument
  const TensorInfo& tensor(std::string_view name) const { return tensors_[tensor_index(name)]; }

  Vec& parameters() { return params_; }
  const Vec& parameters() const { return params_; }
  Eigen::Index num_parameters() const { return params_.size(); }
  Vec zero_gradient() const { return Vec::Zero(params_.size()); }

  ConstTensor view(std::size_t tensor) const;
  Tensor view(std::size_t tensor);
  static Tensor view(Vec& flat, const TensorInfo& info);

  // Decoder start symbol and end-of-sequence symbol.
  static constexpr TokenId kDecoderStart = kPadId;
  static constexpr TokenId kEndOfSequence = kSepId;

 private:
  std::size_t add_tensor(std::string name, Eigen::Index rows, Eigen::Index cols, ParamGroup group);
  NormSlots add_norm(const std::string& prefix, ParamGroup group);
  AttentionSlots add_attention(const std::string& prefix, ParamGroup group);
  FeedForwardSlots add_feedforward(const std::string& prefix, ParamGroup group);
  void initialize(std::uint64_t seed);

  ModelConfig config_;
  ModelLayout layout_;
  std::vector<TensorInfo> tensors_;
  Vec params_;
};

// Converts between scalar types; used to evaluate a double-precision copy.
template <typename To, typename From>
Seq2SeqModel<To> cast_model(const Seq2SeqModel<From>& model) {
  Seq2SeqModel<To> out(model.config(), 0);
  out.parameters() = model.parameters().template cast<To>();
  return out;
}

extern template class Seq2SeqModel<float>;
extern template class Seq2SeqModel<double>;

}  // namespace idpt
