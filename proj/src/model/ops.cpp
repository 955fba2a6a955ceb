#include "idpt/model/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "idpt/error.hpp"

namespace idpt {

namespace {

constexpr double kLayerNormEps = 1e-6;

template <typename S>
using Mat = MatrixX<S>;
template <typename S>
using Vec = VectorX<S>;

// Forward state shared by one pass. `grad` is only written during backward.
template <typename S>
struct Pass {
  const Seq2SeqModel<S>& model;
  Vec<S>* grad;
  Rng* dropout_rng;

  auto w(std::size_t slot) const { return model.view(slot); }
  auto g(std::size_t slot) const { return Seq2SeqModel<S>::view(*grad, model.tensors()[slot]); }
};

// ---------------------------------------------------------------- layer norm

template <typename S>
struct NormCache {
  Mat<S> xhat;
  Vec<S> inv_std;
};

template <typename S>
Mat<S> norm_forward(const Pass<S>& p, const NormSlots& s, const Mat<S>& x, NormCache<S>& c) {
  const Vec<S> mean = x.rowwise().mean();
  const Mat<S> centered = x.colwise() - mean;
  c.inv_std = (centered.array().square().rowwise().mean() + static_cast<S>(kLayerNormEps)).rsqrt();
  c.xhat = centered.array().colwise() * c.inv_std.array();
  const auto gamma = p.w(s.gamma);
  const auto beta = p.w(s.beta);
  return ((c.xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array()).matrix();
}

template <typename S>
Mat<S> norm_backward(const Pass<S>& p, const NormSlots& s, const Mat<S>& dy, const NormCache<S>& c) {
  p.g(s.gamma).row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  p.g(s.beta).row(0) += dy.colwise().sum();
  const Mat<S> dxhat = dy.array().rowwise() * p.w(s.gamma).row(0).array();
  const auto d = static_cast<S>(dy.cols());
  const Vec<S> sum_dxhat = dxhat.rowwise().sum();
  const Vec<S> sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum();
  Mat<S> dx = dxhat * d;
  dx.colwise() -= sum_dxhat;
  dx -= (c.xhat.array().colwise() * sum_dxhat_xhat.array()).matrix();
  return (dx.array().colwise() * (c.inv_std.array() / d)).matrix();
}

// ---------------------------------------------------------------- linear

template <typename S>
Mat<S> linear_forward(const Pass<S>& p, std::size_t w, std::size_t b, const Mat<S>& x) {
  return (x * p.w(w)).rowwise() + p.w(b).row(0);
}

template <typename S>
Mat<S> linear_backward(const Pass<S>& p, std::size_t w, std::size_t b, const Mat<S>& x, const Mat<S>& dy) {
  p.g(w).noalias() += x.transpose() * dy;
  p.g(b).row(0) += dy.colwise().sum();
  return dy * p.w(w).transpose();
}

// ---------------------------------------------------------------- attention

template <typename S>
struct AttentionCache {
  Mat<S> xq, xkv, q, k, v, concat;
  std::vector<Mat<S>> probs;
};

// Query row i attends to keys [0, limit(i)), limit = min(key_valid, i + 1)
// when causal.
template <typename S>
Mat<S> attention_forward(const Pass<S>& p, const AttentionSlots& s, const Mat<S>& xq, const Mat<S>& xkv,
                         Eigen::Index key_valid, bool causal, AttentionCache<S>& c) {
  const auto& cfg = p.model.config();
  const auto heads = static_cast<Eigen::Index>(cfg.num_heads);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  c.xq = xq;
  c.xkv = xkv;
  c.q = linear_forward(p, s.q_w, s.q_b, xq);
  c.k = linear_forward(p, s.k_w, s.k_b, xkv);
  c.v = linear_forward(p, s.v_w, s.v_b, xkv);
  const Eigen::Index lq = xq.rows();
  c.concat.resize(lq, cfg.d_model);
  c.probs.resize(static_cast<std::size_t>(heads));
  for (Eigen::Index h = 0; h < heads; ++h) {
    Mat<S> scores = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
    Mat<S>& probs = c.probs[static_cast<std::size_t>(h)];
    probs = Mat<S>::Zero(lq, xkv.rows());
    for (Eigen::Index i = 0; i < lq; ++i) {
      const Eigen::Index limit = causal ? std::min(key_valid, i + 1) : key_valid;
      const S peak = scores.row(i).head(limit).maxCoeff();
      S total = 0;
      for (Eigen::Index j = 0; j < limit; ++j) {
        probs(i, j) = std::exp(scores(i, j) - peak);
        total += probs(i, j);
      }
      probs.row(i).head(limit) /= total;
    }
    c.concat.middleCols(h * dh, dh).noalias() = probs * c.v.middleCols(h * dh, dh);
  }
  return linear_forward(p, s.o_w, s.o_b, c.concat);
}

template <typename S>
std::pair<Mat<S>, Mat<S>> attention_backward(const Pass<S>& p, const AttentionSlots& s, const Mat<S>& dy,
                                             const AttentionCache<S>& c) {
  const auto& cfg = p.model.config();
  const auto heads = static_cast<Eigen::Index>(cfg.num_heads);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  const Mat<S> dconcat = linear_backward(p, s.o_w, s.o_b, c.concat, dy);
  Mat<S> dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Mat<S>& probs = c.probs[static_cast<std::size_t>(h)];
    const auto dout = dconcat.middleCols(h * dh, dh);
    const Mat<S> dprobs = dout * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dout;
    const Vec<S> row_dot = (dprobs.array() * probs.array()).rowwise().sum();
    const Mat<S> dscores = ((dprobs.colwise() - row_dot).array() * probs.array() * scale).matrix();
    dq.middleCols(h * dh, dh).noalias() = dscores * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * c.q.middleCols(h * dh, dh);
  }
  Mat<S> dxq = linear_backward(p, s.q_w, s.q_b, c.xq, dq);
  Mat<S> dxkv = linear_backward(p, s.k_w, s.k_b, c.xkv, dk);
  dxkv += linear_backward(p, s.v_w, s.v_b, c.xkv, dv);
  return {std::move(dxq), std::move(dxkv)};
}

// ---------------------------------------------------------------- feed-forward

template <typename S>
struct FeedForwardCache {
  Mat<S> x, pre, act;
};

template <typename S>
Mat<S> ffn_forward(const Pass<S>& p, const FeedForwardSlots& s, const Mat<S>& x, FeedForwardCache<S>& c) {
  c.x = x;
  c.pre = linear_forward(p, s.in_w, s.in_b, x);
  c.act = c.pre.cwiseMax(S(0));
  return linear_forward(p, s.out_w, s.out_b, c.act);
}

template <typename S>
Mat<S> ffn_backward(const Pass<S>& p, const FeedForwardSlots& s, const Mat<S>& dy, const FeedForwardCache<S>& c) {
  Mat<S> dact = linear_backward(p, s.out_w, s.out_b, c.act, dy);
  dact = (c.pre.array() > S(0)).select(dact, S(0));
  return linear_backward(p, s.in_w, s.in_b, c.x, dact);
}

// ---------------------------------------------------------------- dropout

// Empty mask when dropout is off.
template <typename S>
Mat<S> dropout_mask(const Pass<S>& p, Eigen::Index rows, Eigen::Index cols) {
  const double rate = p.model.config().dropout;
  if (p.dropout_rng == nullptr || rate <= 0.0) return {};
  Mat<S> mask(rows, cols);
  const S keep = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = p.dropout_rng->uniform() < rate ? S(0) : keep;
  }
  return mask;
}

template <typename S>
void apply_mask(Mat<S>& x, const Mat<S>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

// ---------------------------------------------------------------- encoder

template <typename S>
struct EncoderLayerCache {
  NormCache<S> ln1;
  AttentionCache<S> attn;
  Mat<S> drop1;
  NormCache<S> ln2;
  FeedForwardCache<S> ffn;
  Mat<S> drop2;
};

template <typename S>
struct EncoderCache {
  std::vector<TokenId> ids;
  Mat<S> drop0;
  std::vector<EncoderLayerCache<S>> layers;
  NormCache<S> final;
};

template <typename S>
Mat<S> embed(const Pass<S>& p, std::size_t position_slot, std::span<const TokenId> ids) {
  const auto table = p.w(p.model.layout().embedding);
  const auto pos = p.w(position_slot);
  Mat<S> x(static_cast<Eigen::Index>(ids.size()), p.model.config().d_model);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) = table.row(ids[static_cast<std::size_t>(i)]) + pos.row(i);
  return x;
}

template <typename S>
void embed_backward(const Pass<S>& p, std::size_t position_slot, std::span<const TokenId> ids, const Mat<S>& dx) {
  auto table = p.g(p.model.layout().embedding);
  auto pos = p.g(position_slot);
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    table.row(ids[static_cast<std::size_t>(i)]) += dx.row(i);
    pos.row(i) += dx.row(i);
  }
}

template <typename S>
Mat<S> encoder_forward(const Pass<S>& p, std::span<const TokenId> ids, Eigen::Index valid, EncoderCache<S>& c) {
  const auto& layout = p.model.layout();
  c.ids.assign(ids.begin(), ids.end());
  Mat<S> x = embed(p, layout.encoder_position, ids);
  c.drop0 = dropout_mask(p, x.rows(), x.cols());
  apply_mask(x, c.drop0);
  c.layers.resize(layout.encoder.size());
  for (std::size_t l = 0; l < layout.encoder.size(); ++l) {
    const auto& s = layout.encoder[l];
    auto& lc = c.layers[l];
    const Mat<S> a = norm_forward(p, s.ln1, x, lc.ln1);
    Mat<S> branch = attention_forward(p, s.attn, a, a, valid, false, lc.attn);
    lc.drop1 = dropout_mask(p, branch.rows(), branch.cols());
    apply_mask(branch, lc.drop1);
    x += branch;
    const Mat<S> b = norm_forward(p, s.ln2, x, lc.ln2);
    branch = ffn_forward(p, s.ffn, b, lc.ffn);
    lc.drop2 = dropout_mask(p, branch.rows(), branch.cols());
    apply_mask(branch, lc.drop2);
    x += branch;
  }
  return norm_forward(p, layout.encoder_final, x, c.final);
}

template <typename S>
void encoder_backward(const Pass<S>& p, const Mat<S>& dout, const EncoderCache<S>& c) {
  const auto& layout = p.model.layout();
  Mat<S> dx = norm_backward(p, layout.encoder_final, dout, c.final);
  for (std::size_t l = layout.encoder.size(); l-- > 0;) {
    const auto& s = layout.encoder[l];
    const auto& lc = c.layers[l];
    Mat<S> dbranch = dx;
    apply_mask(dbranch, lc.drop2);
    dx += norm_backward(p, s.ln2, ffn_backward(p, s.ffn, dbranch, lc.ffn), lc.ln2);
    dbranch = dx;
    apply_mask(dbranch, lc.drop1);
    auto [dq, dkv] = attention_backward(p, s.attn, dbranch, lc.attn);
    dx += norm_backward(p, s.ln1, Mat<S>(dq + dkv), lc.ln1);
  }
  apply_mask(dx, c.drop0);
  embed_backward(p, layout.encoder_position, c.ids, dx);
}

// ---------------------------------------------------------------- decoder

template <typename S>
struct DecoderLayerCache {
  NormCache<S> ln1;
  AttentionCache<S> self_attn;
  Mat<S> drop1;
  NormCache<S> ln2;
  AttentionCache<S> cross_attn;
  Mat<S> drop2;
  NormCache<S> ln3;
  FeedForwardCache<S> ffn;
  Mat<S> drop3;
};

template <typename S>
struct DecoderCache {
  std::vector<TokenId> ids;
  Mat<S> drop0;
  std::vector<DecoderLayerCache<S>> layers;
  NormCache<S> final;
};

template <typename S>
Mat<S> decoder_forward(const Pass<S>& p, std::span<const TokenId> ids, Eigen::Index valid, const Mat<S>& memory,
                       Eigen::Index memory_valid, DecoderCache<S>& c) {
  const auto& layout = p.model.layout();
  c.ids.assign(ids.begin(), ids.end());
  Mat<S> x = embed(p, layout.decoder_position, ids);
  c.drop0 = dropout_mask(p, x.rows(), x.cols());
  apply_mask(x, c.drop0);
  c.layers.resize(layout.decoder.size());
  for (std::size_t l = 0; l < layout.decoder.size(); ++l) {
    const auto& s = layout.decoder[l];
    auto& lc = c.layers[l];
    const Mat<S> a = norm_forward(p, s.ln1, x, lc.ln1);
    Mat<S> branch = attention_forward(p, s.self_attn, a, a, valid, true, lc.self_attn);
    lc.drop1 = dropout_mask(p, branch.rows(), branch.cols());
    apply_mask(branch, lc.drop1);
    x += branch;
    const Mat<S> b = norm_forward(p, s.ln2, x, lc.ln2);
    branch = attention_forward(p, s.cross_attn, b, memory, memory_valid, false, lc.cross_attn);
    lc.drop2 = dropout_mask(p, branch.rows(), branch.cols());
    apply_mask(branch, lc.drop2);
    x += branch;
    const Mat<S> f = norm_forward(p, s.ln3, x, lc.ln3);
    branch = ffn_forward(p, s.ffn, f, lc.ffn);
    lc.drop3 = dropout_mask(p, branch.rows(), branch.cols());
    apply_mask(branch, lc.drop3);
    x += branch;
  }
  return norm_forward(p, layout.decoder_final, x, c.final);
}

// Returns the gradient with respect to the encoder memory.
template <typename S>
Mat<S> decoder_backward(const Pass<S>& p, const Mat<S>& dout, const DecoderCache<S>& c, Eigen::Index memory_rows) {
  const auto& layout = p.model.layout();
  Mat<S> dmemory = Mat<S>::Zero(memory_rows, p.model.config().d_model);
  Mat<S> dx = norm_backward(p, layout.decoder_final, dout, c.final);
  for (std::size_t l = layout.decoder.size(); l-- > 0;) {
    const auto& s = layout.decoder[l];
    const auto& lc = c.layers[l];
    Mat<S> dbranch = dx;
    apply_mask(dbranch, lc.drop3);
    dx += norm_backward(p, s.ln3, ffn_backward(p, s.ffn, dbranch, lc.ffn), lc.ln3);
    dbranch = dx;
    apply_mask(dbranch, lc.drop2);
    auto [dq_cross, dmem] = attention_backward(p, s.cross_attn, dbranch, lc.cross_attn);
    dmemory += dmem;
    dx += norm_backward(p, s.ln2, dq_cross, lc.ln2);
    dbranch = dx;
    apply_mask(dbranch, lc.drop1);
    auto [dq, dkv] = attention_backward(p, s.self_attn, dbranch, lc.self_attn);
    dx += norm_backward(p, s.ln1, Mat<S>(dq + dkv), lc.ln1);
  }
  apply_mask(dx, c.drop0);
  embed_backward(p, layout.decoder_position, c.ids, dx);
  return dmemory;
}

// ---------------------------------------------------------------- helpers

template <typename S>
void check_ids(const Seq2SeqModel<S>& model, std::span<const TokenId> ids, const char* what) {
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.config().vocab_size) {
      throw InvalidArgument(std::string(what) + " id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(model.config().vocab_size));
    }
  }
}

template <typename S>
void check_source(const Seq2SeqModel<S>& model, std::span<const TokenId> src) {
  if (src.empty()) throw InvalidArgument("empty source sequence");
  if (src.size() > model.config().max_src_len) {
    throw InvalidArgument("source length " + std::to_string(src.size()) + " exceeds max_src_len " +
                          std::to_string(model.config().max_src_len));
  }
  check_ids(model, src, "source");
}

template <typename S>
std::vector<TokenId> decoder_input(const Seq2SeqModel<S>& model, std::span<const TokenId> target) {
  if (target.size() > model.config().max_tgt_len) {
    throw InvalidArgument("target length " + std::to_string(target.size()) + " exceeds max_tgt_len " +
                          std::to_string(model.config().max_tgt_len));
  }
  check_ids(model, target, "target");
  std::vector<TokenId> in{Seq2SeqModel<S>::kDecoderStart};
  in.insert(in.end(), target.begin(), target.end());
  return in;
}

template <typename S>
Mat<S> log_softmax_rows(const Mat<S>& logits) {
  Mat<S> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S peak = logits.row(r).maxCoeff();
    const S lse = peak + std::log((logits.row(r).array() - peak).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

template <typename S>
S softplus(S z) {
  return std::max(z, S(0)) + std::log1p(std::exp(-std::abs(z)));
}

template <typename S>
S sigmoid(S z) {
  return z >= 0 ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
}

template <typename S>
Vec<S> decoder_last_state(const Pass<S>& p, std::span<const TokenId> source, EncoderCache<S>& ec,
                          DecoderCache<S>& dc, Mat<S>& memory, Mat<S>& states) {
  const auto& cfg = p.model.config();
  memory = encoder_forward(p, source, static_cast<Eigen::Index>(source.size()), ec);
  const auto keep = std::min(source.size(), cfg.max_tgt_len);
  const auto in = decoder_input(p.model, source.first(keep));
  states = decoder_forward(p, in, static_cast<Eigen::Index>(in.size()), memory,
                           static_cast<Eigen::Index>(source.size()), dc);
  return states.row(states.rows() - 1).transpose();
}

}  // namespace

template <typename S>
MatrixX<S> encode(const Seq2SeqModel<S>& model, std::span<const TokenId> source_ids) {
  check_source(model, source_ids);
  Pass<S> p{model, nullptr, nullptr};
  EncoderCache<S> c;
  return encoder_forward(p, source_ids, static_cast<Eigen::Index>(source_ids.size()), c);
}

template <typename S>
MatrixX<S> forward_lm(const Seq2SeqModel<S>& model, std::span<const TokenId> source_ids,
                      std::span<const TokenId> target_ids) {
  auto rows = forward_lm_batch(model, {std::vector<TokenId>(source_ids.begin(), source_ids.end())},
                               {std::vector<TokenId>(target_ids.begin(), target_ids.end())});
  return std::move(rows.front());
}

template <typename S>
std::vector<MatrixX<S>> forward_lm_batch(const Seq2SeqModel<S>& model, const std::vector<std::vector<TokenId>>& sources,
                                         const std::vector<std::vector<TokenId>>& targets) {
  if (sources.size() != targets.size()) throw InvalidArgument("forward_lm_batch: source/target count mismatch");
  std::size_t src_len = 0, tgt_len = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    check_source(model, sources[i]);
    decoder_input(model, targets[i]);
    src_len = std::max(src_len, sources[i].size());
    tgt_len = std::max(tgt_len, targets[i].size());
  }
  Pass<S> p{model, nullptr, nullptr};
  const auto lm_w = model.view(model.layout().lm_w);
  const auto lm_b = model.view(model.layout().lm_b);
  std::vector<MatrixX<S>> out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    std::vector<TokenId> src = sources[i];
    src.resize(src_len, kPadId);
    std::vector<TokenId> tgt = targets[i];
    tgt.resize(tgt_len, kPadId);
    auto in = decoder_input(model, tgt);
    EncoderCache<S> ec;
    DecoderCache<S> dc;
    const auto src_valid = static_cast<Eigen::Index>(sources[i].size());
    const Mat<S> memory = encoder_forward(p, src, src_valid, ec);
    const Mat<S> states = decoder_forward(p, in, static_cast<Eigen::Index>(targets[i].size() + 1), memory, src_valid, dc);
    const auto rows = static_cast<Eigen::Index>(targets[i].size() + 1);
    const Mat<S> logits = (states.topRows(rows) * lm_w).rowwise() + lm_b.row(0);
    out.push_back(log_softmax_rows(logits).array().exp().matrix());
  }
  return out;
}

template <typename S>
LossValue<S> sequence_loss(const Seq2SeqModel<S>& model, std::span<const TokenId> source_ids,
                           std::span<const TokenId> target_ids, const LossOptions& options, VectorX<S>* grad) {
  check_source(model, source_ids);
  if (target_ids.empty() && !options.include_eos) throw InvalidArgument("empty target sequence");
  const auto in = decoder_input(model, target_ids);
  Pass<S> p{model, grad, options.dropout_rng};
  EncoderCache<S> ec;
  DecoderCache<S> dc;
  const auto src_valid = static_cast<Eigen::Index>(source_ids.size());
  const Mat<S> memory = encoder_forward(p, source_ids, src_valid, ec);
  const Mat<S> states = decoder_forward(p, in, static_cast<Eigen::Index>(in.size()), memory, src_valid, dc);

  const auto& layout = model.layout();
  const auto rows = static_cast<Eigen::Index>(target_ids.size() + (options.include_eos ? 1 : 0));
  const Mat<S> used = states.topRows(rows);
  const Mat<S> logits = (used * p.w(layout.lm_w)).rowwise() + p.w(layout.lm_b).row(0);
  const Mat<S> logp = log_softmax_rows(logits);
  LossValue<S> loss;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const TokenId gold = static_cast<std::size_t>(r) < target_ids.size() ? target_ids[static_cast<std::size_t>(r)]
                                                                          : Seq2SeqModel<S>::kEndOfSequence;
    loss.sum -= logp(r, gold);
  }
  loss.count = static_cast<std::size_t>(rows);
  if (grad == nullptr) return loss;

  Mat<S> dlogits = logp.array().exp().matrix();
  for (Eigen::Index r = 0; r < rows; ++r) {
    const TokenId gold = static_cast<std::size_t>(r) < target_ids.size() ? target_ids[static_cast<std::size_t>(r)]
                                                                          : Seq2SeqModel<S>::kEndOfSequence;
    dlogits(r, gold) -= S(1);
  }
  Mat<S> dstates = Mat<S>::Zero(states.rows(), states.cols());
  dstates.topRows(rows) = linear_backward(p, layout.lm_w, layout.lm_b, used, dlogits);
  const Mat<S> dmemory = decoder_backward(p, dstates, dc, memory.rows());
  encoder_backward(p, dmemory, ec);
  return loss;
}

template <typename S>
LossValue<S> loss_msp(const Seq2SeqModel<S>& model, const TrainingInstance& instance, const LossOptions& options,
                      VectorX<S>* grad) {
  if (instance.objective != Objective::kMsp) throw InvalidArgument("loss_msp needs an MSP instance");
  return sequence_loss(model, instance.source_ids, instance.target_ids, options, grad);
}

template <typename S>
LossValue<S> loss_mip(const Seq2SeqModel<S>& model, const TrainingInstance& instance, const LossOptions& options,
                      VectorX<S>* grad) {
  if (instance.objective != Objective::kMip) throw InvalidArgument("loss_mip needs an MIP instance");
  return sequence_loss(model, instance.source_ids, instance.target_ids, options, grad);
}

template <typename S>
LossValue<S> loss_it(const Seq2SeqModel<S>& model, const TrainingInstance& instance, const LossOptions& options,
                     VectorX<S>* grad) {
  if (instance.objective != Objective::kIt) throw InvalidArgument("loss_it needs an IT instance");
  if (!instance.tag_labels) throw InvalidArgument("IT instance has no tag labels");
  check_source(model, instance.source_ids);
  const auto seg = pl_segment(instance.source_ids);
  const auto& labels = *instance.tag_labels;
  if (seg.end - seg.begin != labels.size()) {
    throw InvalidArgument("tag_labels length " + std::to_string(labels.size()) + " != PL segment length " +
                          std::to_string(seg.end - seg.begin));
  }
  Pass<S> p{model, grad, options.dropout_rng};
  EncoderCache<S> ec;
  const Mat<S> states =
      encoder_forward(p, instance.source_ids, static_cast<Eigen::Index>(instance.source_ids.size()), ec);
  const auto& layout = model.layout();
  const auto begin = static_cast<Eigen::Index>(seg.begin);
  const auto count = static_cast<Eigen::Index>(labels.size());
  const Mat<S> pl = states.middleRows(begin, count);
  const Mat<S> logits = linear_forward(p, layout.tag_w, layout.tag_b, pl);
  LossValue<S> loss;
  Mat<S> dlogits(count, 1);
  for (Eigen::Index i = 0; i < count; ++i) {
    const S z = logits(i, 0);
    const S y = static_cast<S>(labels[static_cast<std::size_t>(i)]);
    loss.sum += softplus(z) - y * z;
    dlogits(i, 0) = sigmoid(z) - y;
  }
  loss.count = labels.size();
  if (grad == nullptr || count == 0) return loss;
  Mat<S> dstates = Mat<S>::Zero(states.rows(), states.cols());
  dstates.middleRows(begin, count) = linear_backward(p, layout.tag_w, layout.tag_b, pl, dlogits);
  encoder_backward(p, dstates, ec);
  return loss;
}

template <typename S>
LossValue<S> loss_class(const Seq2SeqModel<S>& model, std::span<const TokenId> source_ids, std::size_t label,
                        const LossOptions& options, VectorX<S>* grad) {
  const auto& layout = model.layout();
  if (layout.class_w == ModelLayout::kAbsent) throw InvalidArgument("model has no classification head");
  if (label >= model.config().num_classes) throw InvalidArgument("class label out of range");
  check_source(model, source_ids);
  Pass<S> p{model, grad, options.dropout_rng};
  EncoderCache<S> ec;
  DecoderCache<S> dc;
  Mat<S> memory, states;
  const Vec<S> last = decoder_last_state(p, source_ids, ec, dc, memory, states);
  const Mat<S> h = last.transpose();
  const Mat<S> logp = log_softmax_rows(Mat<S>(linear_forward(p, layout.class_w, layout.class_b, h)));
  LossValue<S> loss{-logp(0, static_cast<Eigen::Index>(label)), 1};
  if (grad == nullptr) return loss;
  Mat<S> dlogits = logp.array().exp().matrix();
  dlogits(0, static_cast<Eigen::Index>(label)) -= S(1);
  Mat<S> dstates = Mat<S>::Zero(states.rows(), states.cols());
  dstates.bottomRows(1) = linear_backward(p, layout.class_w, layout.class_b, h, dlogits);
  const Mat<S> dmemory = decoder_backward(p, dstates, dc, memory.rows());
  encoder_backward(p, dmemory, ec);
  return loss;
}

template <typename S>
LossValue<S> instance_loss(const Seq2SeqModel<S>& model, const TrainingInstance& instance, const LossOptions& options,
                           VectorX<S>* grad) {
  if (instance.objective == Objective::kIt) return loss_it(model, instance, options, grad);
  return sequence_loss(model, instance.source_ids, instance.target_ids, options, grad);
}

double binary_cross_entropy(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  if (probs.size() != labels.size()) throw InvalidArgument("binary_cross_entropy: length mismatch");
  constexpr double kClamp = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kClamp, 1.0 - kClamp);
    total -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return total;
}

template <typename S>
VectorX<S> tag_probabilities(const Seq2SeqModel<S>& model, std::span<const TokenId> source_ids) {
  const Mat<S> states = encode(model, source_ids);
  Pass<S> p{model, nullptr, nullptr};
  const Mat<S> logits = linear_forward(p, model.layout().tag_w, model.layout().tag_b, states);
  return logits.col(0).unaryExpr([](S z) { return sigmoid(z); });
}

template <typename S>
VectorX<S> embed_last_state(const Seq2SeqModel<S>& model, std::span<const TokenId> source_ids) {
  check_source(model, source_ids);
  Pass<S> p{model, nullptr, nullptr};
  EncoderCache<S> ec;
  DecoderCache<S> dc;
  Mat<S> memory, states;
  return decoder_last_state(p, source_ids, ec, dc, memory, states);
}

template <typename S>
std::size_t classify_last_state(const Seq2SeqModel<S>& model, std::span<const TokenId> source_ids) {
  const auto& layout = model.layout();
  if (layout.class_w == ModelLayout::kAbsent) throw InvalidArgument("model has no classification head");
  const Vec<S> h = embed_last_state(model, source_ids);
  const RowVectorX<S> logits = h.transpose() * model.view(layout.class_w) + model.view(layout.class_b);
  Eigen::Index best;
  logits.maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

namespace {

template <typename S>
RowVectorX<S> next_token_logprobs(const Pass<S>& p, const Mat<S>& memory, std::span<const TokenId> prefix) {
  DecoderCache<S> dc;
  const Mat<S> states = decoder_forward(p, prefix, static_cast<Eigen::Index>(prefix.size()), memory, memory.rows(), dc);
  const auto& layout = p.model.layout();
  const Mat<S> logits = (states.bottomRows(1) * p.w(layout.lm_w)).rowwise() + p.w(layout.lm_b).row(0);
  return log_softmax_rows(logits).row(0);
}

}  // namespace

template <typename S>
TokenId classify_unigram(const Seq2SeqModel<S>& model, std::span<const TokenId> source_ids,
                         std::span<const TokenId> label_ids) {
  if (label_ids.empty()) throw InvalidArgument("classify_unigram needs at least one label");
  check_ids(model, label_ids, "label");
  const Mat<S> memory = encode(model, source_ids);
  Pass<S> p{model, nullptr, nullptr};
  const TokenId start = Seq2SeqModel<S>::kDecoderStart;
  const RowVectorX<S> logp = next_token_logprobs(p, memory, std::span<const TokenId>(&start, 1));
  TokenId best = label_ids.front();
  for (auto id : label_ids) {
    if (logp(id) > logp(best)) best = id;
  }
  return best;
}

template <typename S>
double cosine_similarity(const VectorX<S>& a, const VectorX<S>& b) {
  const double na = static_cast<double>(a.norm()), nb = static_cast<double>(b.norm());
  if (na == 0.0 || nb == 0.0) return 0.0;
  return static_cast<double>(a.dot(b)) / (na * nb);
}

template <typename S>
std::vector<TokenId> generate(const Seq2SeqModel<S>& model, std::span<const TokenId> source_ids, std::size_t max_len,
                              std::size_t beam) {
  max_len = std::min(max_len, model.config().max_tgt_len);
  if (max_len == 0) return {};
  beam = std::clamp<std::size_t>(beam, 1, model.config().vocab_size);
  const Mat<S> memory = encode(model, source_ids);
  Pass<S> p{model, nullptr, nullptr};
  const TokenId eos = Seq2SeqModel<S>::kEndOfSequence;

  struct Hypothesis {
    std::vector<TokenId> ids;  // includes the start symbol
    double score = 0.0;
  };
  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    return a.score != b.score ? a.score > b.score : a.ids < b.ids;
  };
  std::vector<Hypothesis> alive{{{Seq2SeqModel<S>::kDecoderStart}, 0.0}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const auto& h : alive) {
      const RowVectorX<S> logp = next_token_logprobs(p, memory, h.ids);
      std::vector<Eigen::Index> order(static_cast<std::size_t>(logp.size()));
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(beam), order.end(),
                        [&](Eigen::Index a, Eigen::Index b) { return logp(a) != logp(b) ? logp(a) > logp(b) : a < b; });
      for (std::size_t k = 0; k < beam; ++k) {
        Hypothesis next = h;
        next.ids.push_back(static_cast<TokenId>(order[k]));
        next.score += static_cast<double>(logp(order[k]));
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better);
    alive.clear();
    for (auto& c : candidates) {
      if (c.ids.back() == eos) {
        if (finished.size() < beam) finished.push_back(std::move(c));
      } else if (alive.size() < beam) {
        alive.push_back(std::move(c));
      }
      if (alive.size() == beam) break;
    }
    if (finished.size() >= beam) break;
    // Scores only fall as tokens are appended.
    if (!finished.empty() && !alive.empty()) {
      const auto best_done = std::min_element(finished.begin(), finished.end(), better);
      if (best_done->score >= alive.front().score) break;
    }
  }
  std::vector<Hypothesis> pool = finished.empty() ? alive : finished;
  if (pool.empty()) return {};
  std::sort(pool.begin(), pool.end(), better);
  std::vector<TokenId> out(pool.front().ids.begin() + 1, pool.front().ids.end());
  if (!out.empty() && out.back() == eos) out.pop_back();
  return out;
}

#define IDPT_INSTANTIATE_OPS(S)                                                                                     \
  template MatrixX<S> encode(const Seq2SeqModel<S>&, std::span<const TokenId>);                                     \
  template MatrixX<S> forward_lm(const Seq2SeqModel<S>&, std::span<const TokenId>, std::span<const TokenId>);       \
  template std::vector<MatrixX<S>> forward_lm_batch(const Seq2SeqModel<S>&, const std::vector<std::vector<TokenId>>&, \
                                                    const std::vector<std::vector<TokenId>>&);                      \
  template LossValue<S> sequence_loss(const Seq2SeqModel<S>&, std::span<const TokenId>, std::span<const TokenId>,   \
                                      const LossOptions&, VectorX<S>*);                                             \
  template LossValue<S> loss_msp(const Seq2SeqModel<S>&, const TrainingInstance&, const LossOptions&, VectorX<S>*); \
  template LossValue<S> loss_mip(const Seq2SeqModel<S>&, const TrainingInstance&, const LossOptions&, VectorX<S>*); \
  template LossValue<S> loss_it(const Seq2SeqModel<S>&, const TrainingInstance&, const LossOptions&, VectorX<S>*);  \
  template LossValue<S> loss_class(const Seq2SeqModel<S>&, std::span<const TokenId>, std::size_t,                   \
                                   const LossOptions&, VectorX<S>*);                                                \
  template LossValue<S> instance_loss(const Seq2SeqModel<S>&, const TrainingInstance&, const LossOptions&,          \
                                      VectorX<S>*);                                                                 \
  template VectorX<S> tag_probabilities(const Seq2SeqModel<S>&, std::span<const TokenId>);                          \
  template VectorX<S> embed_last_state(const Seq2SeqModel<S>&, std::span<const TokenId>);                           \
  template std::size_t classify_last_state(const Seq2SeqModel<S>&, std::span<const TokenId>);                       \
  template TokenId classify_unigram(const Seq2SeqModel<S>&, std::span<const TokenId>, std::span<const TokenId>);    \
  template double cosine_similarity(const VectorX<S>&, const VectorX<S>&);                                          \
  template std::vector<TokenId> generate(const Seq2SeqModel<S>&, std::span<const TokenId>, std::size_t, std::size_t);

IDPT_INSTANTIATE_OPS(float)
IDPT_INSTANTIATE_OPS(double)

#undef IDPT_INSTANTIATE_OPS

}  // namespace idpt
