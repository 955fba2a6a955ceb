#include "idpt/model/seq2seq.hpp"

#include <cmath>

#include "idpt/error.hpp"
#include "idpt/rng.hpp"

namespace idpt {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw InvalidArgument("model config: " + msg); };
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (d_model == 0 || num_heads == 0) fail("d_model and num_heads must be positive");
  if (d_model % num_heads != 0) fail("d_model must be divisible by num_heads");
  if (feedforward_dim == 0) fail("feedforward_dim must be positive");
  if (max_src_len == 0 || max_src_len > kMaxSourceCap) fail("max_src_len must be in [1, 512]");
  if (max_tgt_len == 0 || max_tgt_len > kMaxTargetCap) fail("max_tgt_len must be in [1, 256]");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},         {"d_model", c.d_model},
          {"num_heads", c.num_heads},           {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers}, {"feedforward_dim", c.feedforward_dim},
          {"max_src_len", c.max_src_len},       {"max_tgt_len", c.max_tgt_len},
          {"dropout", c.dropout},               {"num_classes", c.num_classes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.feedforward_dim = j.value("feedforward_dim", c.feedforward_dim);
  c.max_src_len = j.value("max_src_len", c.max_src_len);
  c.max_tgt_len = j.value("max_tgt_len", c.max_tgt_len);
  c.dropout = j.value("dropout", c.dropout);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.validate();
  return c;
}

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEmbedding: return "embedding";
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kDecoder: return "decoder";
    case ParamGroup::kLmHead: return "lm_head";
    case ParamGroup::kTagHead: return "tag_head";
    case ParamGroup::kClassHead: return "class_head";
  }
  return "unknown";
}

template <typename Scalar>
std::size_t Seq2SeqModel<Scalar>::add_tensor(std::string name, Eigen::Index rows, Eigen::Index cols,
                                             ParamGroup group) {
  const Eigen::Index offset = tensors_.empty() ? 0 : tensors_.back().offset + tensors_.back().size();
  tensors_.push_back(TensorInfo{std::move(name), offset, rows, cols, group});
  return tensors_.size() - 1;
}

template <typename Scalar>
NormSlots Seq2SeqModel<Scalar>::add_norm(const std::string& prefix, ParamGroup group) {
  const auto d = static_cast<Eigen::Index>(config_.d_model);
  return {add_tensor(prefix + ".gamma", 1, d, group), add_tensor(prefix + ".beta", 1, d, group)};
}

template <typename Scalar>
AttentionSlots Seq2SeqModel<Scalar>::add_attention(const std::string& prefix, ParamGroup group) {
  const auto d = static_cast<Eigen::Index>(config_.d_model);
  AttentionSlots s;
  s.q_w = add_tensor(prefix + ".query.weight", d, d, group);
  s.q_b = add_tensor(prefix + ".query.bias", 1, d, group);
  s.k_w = add_tensor(prefix + ".key.weight", d, d, group);
  s.k_b = add_tensor(prefix + ".key.bias", 1, d, group);
  s.v_w = add_tensor(prefix + ".value.weight", d, d, group);
  s.v_b = add_tensor(prefix + ".value.bias", 1, d, group);
  s.o_w = add_tensor(prefix + ".output.weight", d, d, group);
  s.o_b = add_tensor(prefix + ".output.bias", 1, d, group);
  return s;
}

template <typename Scalar>
FeedForwardSlots Seq2SeqModel<Scalar>::add_feedforward(const std::string& prefix, ParamGroup group) {
  const auto d = static_cast<Eigen::Index>(config_.d_model);
  const auto ff = static_cast<Eigen::Index>(config_.feedforward_dim);
  return {add_tensor(prefix + ".in.weight", d, ff, group), add_tensor(prefix + ".in.bias", 1, ff, group),
          add_tensor(prefix + ".out.weight", ff, d, group), add_tensor(prefix + ".out.bias", 1, d, group)};
}

template <typename Scalar>
Seq2SeqModel<Scalar>::Seq2SeqModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto d = static_cast<Eigen::Index>(config_.d_model);
  const auto vocab = static_cast<Eigen::Index>(config_.vocab_size);

  layout_.embedding = add_tensor("shared.embedding", vocab, d, ParamGroup::kEmbedding);
  layout_.encoder_position =
      add_tensor("encoder.position", static_cast<Eigen::Index>(config_.max_src_len), d, ParamGroup::kEncoder);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    const std::string p = "encoder.layer" + std::to_string(i);
    EncoderLayerSlots l;
    l.ln1 = add_norm(p + ".ln1", ParamGroup::kEncoder);
    l.attn = add_attention(p + ".self_attn", ParamGroup::kEncoder);
    l.ln2 = add_norm(p + ".ln2", ParamGroup::kEncoder);
    l.ffn = add_feedforward(p + ".ffn", ParamGroup::kEncoder);
    layout_.encoder.push_back(l);
  }
  layout_.encoder_final = add_norm("encoder.final_ln", ParamGroup::kEncoder);

  // One extra slot: the decoder sees the start symbol plus up to max_tgt_len tokens.
  layout_.decoder_position =
      add_tensor("decoder.position", static_cast<Eigen::Index>(config_.max_tgt_len + 1), d, ParamGroup::kDecoder);
  for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    DecoderLayerSlots l;
    l.ln1 = add_norm(p + ".ln1", ParamGroup::kDecoder);
    l.self_attn = add_attention(p + ".self_attn", ParamGroup::kDecoder);
    l.ln2 = add_norm(p + ".ln2", ParamGroup::kDecoder);
    l.cross_attn = add_attention(p + ".cross_attn", ParamGroup::kDecoder);
    l.ln3 = add_norm(p + ".ln3", ParamGroup::kDecoder);
    l.ffn = add_feedforward(p + ".ffn", ParamGroup::kDecoder);
    layout_.decoder.push_back(l);
  }
  layout_.decoder_final = add_norm("decoder.final_ln", ParamGroup::kDecoder);

  layout_.lm_w = add_tensor("lm_head.weight", d, vocab, ParamGroup::kLmHead);
  layout_.lm_b = add_tensor("lm_head.bias", 1, vocab, ParamGroup::kLmHead);
  layout_.tag_w = add_tensor("tag_head.weight", d, 1, ParamGroup::kTagHead);
  layout_.tag_b = add_tensor("tag_head.bias", 1, 1, ParamGroup::kTagHead);
  if (config_.num_classes > 0) {
    const auto c = static_cast<Eigen::Index>(config_.num_classes);
    layout_.class_w = add_tensor("class_head.weight", d, c, ParamGroup::kClassHead);
    layout_.class_b = add_tensor("class_head.bias", 1, c, ParamGroup::kClassHead);
  }

  params_ = Vec::Zero(tensors_.back().offset + tensors_.back().size());
  initialize(seed);
}

template <typename Scalar>
void Seq2SeqModel<Scalar>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& t : tensors_) {
    auto w = view(params_, t);
    const std::string& n = t.name;
    if (n.ends_with(".gamma")) {
      w.setOnes();
    } else if (n.ends_with(".beta") || n.ends_with(".bias")) {
      w.setZero();
    } else {
      // Embedding-like tables use unit-scale rows; projections use 1/sqrt(fan_in).
      const bool table = n == "shared.embedding" || n.ends_with(".position");
      const double stddev = table ? 0.5 : 1.0 / std::sqrt(static_cast<double>(t.rows));
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<Scalar>(stddev * rng.normal());
      }
    }
  }
}

template <typename Scalar>
std::size_t Seq2SeqModel<Scalar>::tensor_index(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  throw InvalidArgument("no parameter tensor named '" + std::string(name) + "'");
}

template <typename Scalar>
typename Seq2SeqModel<Scalar>::ConstTensor Seq2SeqModel<Scalar>::view(std::size_t tensor) const {
  const auto& t = tensors_[tensor];
  return ConstTensor(params_.data() + t.offset, t.rows, t.cols);
}

template <typename Scalar>
typename Seq2SeqModel<Scalar>::Tensor Seq2SeqModel<Scalar>::view(std::size_t tensor) {
  return view(params_, tensors_[tensor]);
}

template <typename Scalar>
typename Seq2SeqModel<Scalar>::Tensor Seq2SeqModel<Scalar>::view(Vec& flat, const TensorInfo& info) {
  return Tensor(flat.data() + info.offset, info.rows, info.cols);
}

template class Seq2SeqModel<float>;
template class Seq2SeqModel<double>;

}  // namespace idpt
