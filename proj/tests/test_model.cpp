#include <cmath>
#include <fstream>

#include "doctest.h"
#include "idpt/error.hpp"
#include "idpt/model/checkpoint.hpp"
#include "idpt/model/grad_check.hpp"
#include "idpt/model/ops.hpp"
#include "model_oracle.hpp"
#include "test_util.hpp"

using namespace idpt;
using namespace idpt::testing;

namespace {

constexpr std::size_t kVocab = 64;

TrainingInstance msp_instance() {
  return {{kClsId, 110, 111, kSepId, 112, kMask0Id, 115, kSepId}, {kMask0Id, 113, 114}, Objective::kMsp, {}, {}};
}

TrainingInstance mip_instance() {
  return {{kClsId, 120, kSepId, kMask0Id, 60, kMask0Id, 61, kMask0Id + 1, kSepId},
          {kMask0Id, 116, kMask0Id + 1, 117},
          Objective::kMip,
          {},
          {}};
}

TrainingInstance it_instance() {
  TrainingInstance inst{{kClsId, 110, kSepId, 112, 113, 60, 114, kSepId}, {}, Objective::kIt, {}, {}};
  inst.tag_labels = std::vector<std::uint8_t>{1, 1, 0, 1};
  return inst;
}

// Ids above must fit the vocabulary; shift them into range.
TrainingInstance fit(TrainingInstance inst) {
  for (auto* seq : {&inst.source_ids, &inst.target_ids}) {
    for (auto& id : *seq) {
      if (id >= static_cast<TokenId>(kVocab)) id = 103 % static_cast<TokenId>(kVocab) + id % 17;
    }
  }
  return inst;
}

Seq2SeqModel<double> tiny_model(std::uint64_t seed = 1) { return Seq2SeqModel<double>(tiny_config(kVocab), seed); }

void zero_tensor(Seq2SeqModel<double>& m, const std::string& name) { m.view(m.tensor_index(name)).setZero(); }

}  // namespace

TEST_CASE("model config") {
  auto c = tiny_config();
  CHECK_NOTHROW(c.validate());
  CHECK(model_config_from_json(to_json(c)) == c);
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny_config();
  c.max_src_len = 513;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny_config();
  c.max_tgt_len = 257;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("parameter layout") {
  const auto m = tiny_model();
  Eigen::Index total = 0;
  for (const auto& t : m.tensors()) {
    CHECK(t.offset == total);
    total += t.size();
  }
  CHECK(total == m.num_parameters());
  CHECK(m.tensor("decoder.position").rows == static_cast<Eigen::Index>(tiny_config().max_tgt_len + 1));
  CHECK(m.tensor("encoder.layer1.self_attn.query.weight").group == ParamGroup::kEncoder);
  CHECK(m.tensor("tag_head.weight").group == ParamGroup::kTagHead);
  CHECK_THROWS_AS(m.tensor_index("nope"), InvalidArgument);
  CHECK(m.layout().class_w == ModelLayout::kAbsent);
  const Seq2SeqModel<double> same(tiny_config(kVocab), 1);
  CHECK(same.parameters() == m.parameters());
}

TEST_CASE("output rows are distributions") {
  const auto m = tiny_model();
  const auto inst = fit(msp_instance());
  const auto probs = forward_lm(m, inst.source_ids, inst.target_ids);
  CHECK(probs.rows() == static_cast<Eigen::Index>(inst.target_ids.size() + 1));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    CHECK(std::abs(probs.row(r).sum() - 1.0) < 1e-6);
    CHECK(probs.row(r).minCoeff() > 0.0);
  }
  const Seq2SeqModel<float> mf(tiny_config(kVocab), 1);
  const auto pf = forward_lm(mf, inst.source_ids, inst.target_ids);
  for (Eigen::Index r = 0; r < pf.rows(); ++r) CHECK(std::abs(pf.row(r).sum() - 1.0f) < 1e-5f);
}

TEST_CASE("decoder is causal") {
  const auto m = tiny_model(2);
  const std::vector<TokenId> src{kClsId, 20, 21, 22, kSepId};
  std::vector<TokenId> tgt{30, 31, 32, 33, 34};
  const auto base = forward_lm(m, src, tgt);
  for (std::size_t t = 0; t < tgt.size(); ++t) {
    auto changed = tgt;
    changed[t] = 40 + static_cast<TokenId>(t);
    const auto out = forward_lm(m, src, changed);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double diff = (out.row(r) - base.row(r)).cwiseAbs().maxCoeff();
      // Row r reads tokens < r, so only rows after position t may change.
      if (r <= static_cast<Eigen::Index>(t)) {
        CHECK(diff == 0.0);
      } else {
        CHECK(diff > 0.0);
      }
    }
  }
}

TEST_CASE("batching is padding independent") {
  const auto m = tiny_model(3);
  const std::vector<std::vector<TokenId>> srcs{{kClsId, 20, kSepId},
                                               {kClsId, 21, 22, 23, 24, 25, kSepId},
                                               {kClsId, kSepId, 26, kSepId},
                                               {kClsId, 27, 28, kSepId, 29}};
  const std::vector<std::vector<TokenId>> tgts{{30}, {31, 32, 33, 34}, {}, {35, 36}};
  const auto batch = forward_lm_batch(m, srcs, tgts);
  double batch_loss = 0.0, single_loss = 0.0;
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    const auto single = forward_lm(m, srcs[i], tgts[i]);
    REQUIRE(batch[i].rows() == single.rows());
    CHECK((batch[i] - single).cwiseAbs().maxCoeff() < 1e-12);
    std::vector<TokenId> gold = tgts[i];
    gold.push_back(kSepId);
    for (std::size_t t = 0; t < gold.size(); ++t) batch_loss -= std::log(batch[i](static_cast<Eigen::Index>(t), gold[t]));
    single_loss += sequence_loss(m, srcs[i], tgts[i], LossOptions{.include_eos = true}).sum;
  }
  CHECK(batch_loss == doctest::Approx(single_loss).epsilon(1e-12));
}

TEST_CASE("uniform model gives k ln V") {
  auto m = tiny_model();
  zero_tensor(m, "lm_head.weight");
  zero_tensor(m, "lm_head.bias");
  const auto msp = fit(msp_instance());
  const auto loss = loss_msp(m, msp);
  CHECK(loss.count == msp.target_ids.size());
  CHECK(loss.sum == doctest::Approx(static_cast<double>(msp.target_ids.size()) * std::log(double(kVocab))));
  CHECK(loss.mean() == doctest::Approx(std::log(double(kVocab))));
  const auto mip = fit(mip_instance());
  CHECK(loss_mip(m, mip).sum == doctest::Approx(static_cast<double>(mip.target_ids.size()) * std::log(double(kVocab))));
}

TEST_CASE("certain model gives zero loss") {
  auto m = tiny_model();
  zero_tensor(m, "lm_head.weight");
  zero_tensor(m, "lm_head.bias");
  m.view(m.tensor_index("lm_head.bias"))(0, 9) = 1000.0;
  const TrainingInstance msp{{kClsId, 20, kSepId}, {9, 9, 9}, Objective::kMsp, {}, {}};
  CHECK(loss_msp(m, msp).sum == 0.0);
  TrainingInstance mip = msp;
  mip.objective = Objective::kMip;
  CHECK(loss_mip(m, mip).sum == 0.0);
}

TEST_CASE("sequence losses match the scalar oracle") {
  for (std::uint64_t seed : {1u, 7u, 19u}) {
    const auto m = tiny_model(seed);
    const ScalarOracle oracle(m);
    for (const auto& inst : {fit(msp_instance()), fit(mip_instance())}) {
      const double ours = inst.objective == Objective::kMsp ? loss_msp(m, inst).sum : loss_mip(m, inst).sum;
      CHECK(std::abs(ours - oracle.sequence_loss(inst.source_ids, inst.target_ids, false)) < 1e-6);
      const double with_eos = sequence_loss(m, inst.source_ids, inst.target_ids, LossOptions{.include_eos = true}).sum;
      CHECK(std::abs(with_eos - oracle.sequence_loss(inst.source_ids, inst.target_ids, true)) < 1e-6);
    }
    const auto it = fit(it_instance());
    const auto seg = pl_segment(it.source_ids);
    CHECK(std::abs(loss_it(m, it).sum - oracle.tagging_loss(it.source_ids, seg.begin, *it.tag_labels)) < 1e-6);
  }
}

TEST_CASE("tagging loss at one half and at certainty") {
  auto m = tiny_model();
  zero_tensor(m, "tag_head.weight");
  zero_tensor(m, "tag_head.bias");
  const auto it = fit(it_instance());
  const auto loss = loss_it(m, it);
  CHECK(loss.sum == doctest::Approx(4.0 * std::log(2.0)));
  for (double p : tag_probabilities(m, it.source_ids)) CHECK(p == 0.5);
  const std::vector<double> probs{1.0, 0.0, 1.0};
  const std::vector<std::uint8_t> labels{1, 0, 1};
  CHECK(binary_cross_entropy(probs, labels) < 1e-9);
  CHECK(binary_cross_entropy(std::vector<double>{0.5}, std::vector<std::uint8_t>{1}) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("tagging probabilities lie in (0, 1)") {
  const auto m = tiny_model(4);
  for (double p : tag_probabilities(m, fit(it_instance()).source_ids)) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("tagging gradients never reach the decoder") {
  const auto m = tiny_model(5);
  auto grad = m.zero_gradient();
  loss_it(m, fit(it_instance()), {}, &grad);
  bool encoder_moved = false;
  for (const auto& t : m.tensors()) {
    const double norm = grad.segment(t.offset, t.size()).cwiseAbs().maxCoeff();
    if (t.group == ParamGroup::kDecoder || t.group == ParamGroup::kLmHead || t.group == ParamGroup::kClassHead) {
      CHECK_MESSAGE(norm == 0.0, t.name);
    }
    if (t.group == ParamGroup::kEncoder && norm > 0.0) encoder_moved = true;
  }
  CHECK(encoder_moved);
}

TEST_CASE("loss preconditions") {
  const auto m = tiny_model();
  auto msp = fit(msp_instance());
  CHECK_THROWS_AS(loss_mip(m, msp), InvalidArgument);
  CHECK_THROWS_AS(loss_it(m, msp), InvalidArgument);
  auto empty = msp;
  empty.target_ids.clear();
  CHECK_THROWS_AS(loss_msp(m, empty), InvalidArgument);
  auto mip = fit(mip_instance());
  mip.target_ids.clear();
  CHECK_THROWS_AS(loss_mip(m, mip), InvalidArgument);
  auto it = fit(it_instance());
  it.tag_labels.reset();
  CHECK_THROWS_AS(loss_it(m, it), InvalidArgument);
  it = fit(it_instance());
  it.tag_labels->push_back(0);
  CHECK_THROWS_AS(loss_it(m, it), InvalidArgument);
  auto bad = msp;
  bad.source_ids.push_back(static_cast<TokenId>(kVocab));
  CHECK_THROWS_AS(loss_msp(m, bad), InvalidArgument);
  bad = msp;
  bad.source_ids.resize(tiny_config().max_src_len + 1, 20);
  CHECK_THROWS_AS(loss_msp(m, bad), InvalidArgument);
  bad = msp;
  bad.target_ids.resize(tiny_config().max_tgt_len + 1, 20);
  CHECK_THROWS_AS(loss_msp(m, bad), InvalidArgument);
  CHECK_THROWS_AS(forward_lm(m, std::vector<TokenId>{}, std::vector<TokenId>{1}), InvalidArgument);
}

TEST_CASE("gradient check on all three losses") {
  auto m = tiny_model(6);
  const std::vector<std::pair<const char*, TrainingInstance>> cases{
      {"msp", fit(msp_instance())}, {"mip", fit(mip_instance())}, {"it", fit(it_instance())}};
  for (const auto& [name, inst] : cases) {
    CAPTURE(name);
    const auto res = grad_check(
        m,
        [&](const Seq2SeqModel<double>& model, VectorX<double>* g) { return instance_loss(model, inst, {}, g).sum; },
        GradCheckOptions{.samples = 150, .seed = 3});
    CHECK(res.max_relative_error < 1e-4);
  }
}

TEST_CASE("gradient check with end-of-sequence term and class head") {
  auto cfg = tiny_config(kVocab);
  cfg.num_classes = 3;
  Seq2SeqModel<double> m(cfg, 8);
  const auto inst = fit(msp_instance());
  auto res = grad_check(
      m,
      [&](const Seq2SeqModel<double>& model, VectorX<double>* g) {
        return sequence_loss(model, inst.source_ids, inst.target_ids, LossOptions{.include_eos = true}, g).sum;
      },
      GradCheckOptions{.samples = 100, .seed = 4});
  CHECK(res.max_relative_error < 1e-4);
  res = grad_check(
      m,
      [&](const Seq2SeqModel<double>& model, VectorX<double>* g) {
        return loss_class(model, inst.source_ids, 2, {}, g).sum;
      },
      GradCheckOptions{.samples = 100, .seed = 5});
  CHECK(res.max_relative_error < 1e-4);
}

TEST_CASE("gradient check rejects non-finite losses") {
  auto m = tiny_model();
  CHECK_THROWS_AS(grad_check(m, [](const Seq2SeqModel<double>&, VectorX<double>*) { return std::nan(""); }), Error);
}

TEST_CASE("unigram classification") {
  const auto m = tiny_model(9);
  const std::vector<TokenId> src{kClsId, 20, 21, kSepId};
  const std::vector<TokenId> one{42};
  CHECK(classify_unigram(m, src, one) == 42);
  const std::vector<TokenId> binary{48, 49};  // "0" and "1" byte units
  const auto label = classify_unigram(m, src, binary);
  CHECK((label == 48 || label == 49));
  CHECK_THROWS_AS(classify_unigram(m, src, std::vector<TokenId>{}), InvalidArgument);
}

TEST_CASE("last-state embedding and classification") {
  auto cfg = tiny_config(kVocab);
  cfg.num_classes = 4;
  const Seq2SeqModel<double> m(cfg, 10);
  const std::vector<TokenId> a{kClsId, 20, 21, 22, kSepId}, b{kClsId, 30, 31, kSepId};
  const auto ea = embed_last_state(m, a);
  CHECK(ea.size() == static_cast<Eigen::Index>(cfg.d_model));
  CHECK(cosine_similarity(ea, embed_last_state(m, a)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity(ea, embed_last_state(m, b)) < 1.0);
  CHECK(classify_last_state(m, a) < 4);
  CHECK_THROWS_AS(classify_last_state(tiny_model(), a), InvalidArgument);
}

TEST_CASE("generation") {
  const auto m = tiny_model(11);
  const std::vector<TokenId> src{kClsId, 20, 21, kSepId};
  CHECK(generate(m, src, 0).empty());
  const auto g1 = generate(m, src, 10);
  CHECK(g1 == generate(m, src, 10));
  CHECK(g1.size() <= 10);
  const auto beam = generate(m, src, 10, 4);
  CHECK(beam.size() <= 10);
  for (auto id : beam) CHECK(id < static_cast<TokenId>(kVocab));
  // Greedy decoding equals beam search of width one.
  CHECK(generate(m, src, 10, 1) == g1);
  CHECK(generate(m, src, 6, 1000).size() <= 6);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  auto cfg = tiny_config(kVocab);
  cfg.num_classes = 2;
  const Seq2SeqModel<double> m(cfg, 12);
  save_checkpoint(m, dir / "m.ckpt");
  const auto back = load_checkpoint<double>(dir / "m.ckpt");
  CHECK(back.config() == m.config());
  CHECK(back.parameters() == m.parameters());
  CHECK(read_checkpoint_config(dir / "m.ckpt") == cfg);
  const auto as_float = load_checkpoint<float>(dir / "m.ckpt");
  CHECK(as_float.parameters() == m.parameters().cast<float>());
  save_checkpoint(as_float, dir / "f.ckpt");
  CHECK(load_checkpoint<double>(dir / "f.ckpt").parameters() == as_float.parameters().cast<double>());

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint<double>(dir / "junk.ckpt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint<double>(dir / "missing.ckpt"), IoError);
  std::filesystem::resize_file(dir / "m.ckpt", std::filesystem::file_size(dir / "m.ckpt") - 8);
  CHECK_THROWS_AS(load_checkpoint<double>(dir / "m.ckpt"), FormatError);
}
