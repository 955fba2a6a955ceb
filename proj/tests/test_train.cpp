#include <cmath>

#include "doctest.h"
#include "idpt/error.hpp"
#include "idpt/model/train.hpp"
#include "pipeline_fixtures.hpp"

using namespace idpt;
using namespace idpt::testing;

namespace {

std::vector<TrainingInstance> denoise_instances(std::size_t docs, std::uint64_t seed) {
  const auto& tok = small_tokenizer();
  const auto cfg = small_config(tok.vocab_size());
  const BuildOptions fit{cfg.max_src_len, cfg.max_tgt_len};
  std::vector<CodeDocument> picked;
  for (std::size_t i = 0; i < docs; ++i) picked.push_back(fit_document(mini_documents()[i], tok, fit));
  return build_denoise_instances(picked, tok, seed, kDefaultCorruptionRate, fit);
}

PretrainSchedule quick_schedule(std::size_t steps, std::vector<Objective> objectives = {}) {
  PretrainSchedule s;
  s.steps = steps;
  s.batch_size = 4;
  s.seed = 5;
  s.objectives = std::move(objectives);
  s.optimizer.peak_lr = 3e-3;
  s.optimizer.warmup_steps = 5;
  return s;
}

Seq2SeqModel<float> small_model(std::uint64_t seed = 1) {
  return Seq2SeqModel<float>(small_config(small_tokenizer().vocab_size()), seed);
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  AdamOptimizer<double> opt(3, OptimizerOptions{.peak_lr = 1.0, .warmup_steps = 4, .total_steps = 12});
  CHECK(opt.learning_rate(0) == doctest::Approx(0.25));
  CHECK(opt.learning_rate(3) == doctest::Approx(1.0));
  CHECK(opt.learning_rate(4) == doctest::Approx(1.0));
  CHECK(opt.learning_rate(8) == doctest::Approx(0.5));
  CHECK(opt.learning_rate(12) == 0.0);
  CHECK(opt.learning_rate(50) == 0.0);
}

TEST_CASE("optimizer clips and descends") {
  AdamOptimizer<double> opt(2, OptimizerOptions{.peak_lr = 0.1, .total_steps = 100, .clip_norm = 1.0});
  VectorX<double> params(2), grad(2);
  params << 1.0, -1.0;
  grad << 30.0, -40.0;
  CHECK(opt.step(params, grad) == doctest::Approx(50.0));
  CHECK(grad.norm() == doctest::Approx(1.0));
  // The first update moves every coordinate by about the learning rate.
  CHECK(params(0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(params(1) == doctest::Approx(-0.9).epsilon(1e-6));
  CHECK(opt.steps_taken() == 1);
  grad << std::nan(""), 0.0;
  CHECK_THROWS_AS(opt.step(params, grad), Error);
}

TEST_CASE("metric records serialize") {
  const MetricRecord r{3, "msp", 1.5};
  CHECK(to_json(r).dump() == R"({"loss":1.5,"objective":"msp","step":3})");
  CHECK(pretrain_phase_from_string("dual") == PretrainPhase::kDual);
  CHECK(to_string(PretrainPhase::kDenoise) == "denoise");
  CHECK_THROWS_AS(pretrain_phase_from_string("other"), InvalidArgument);
}

TEST_CASE("zero steps leave the parameters unchanged") {
  auto model = small_model();
  const auto before = model.parameters();
  const auto log = pretrain(model, denoise_instances(5, 1), quick_schedule(0));
  CHECK(log.empty());
  CHECK(model.parameters() == before);
}

TEST_CASE("seeded pretraining is bit-identical") {
  const auto instances = denoise_instances(10, 2);
  auto a = small_model(), b = small_model();
  std::vector<MetricRecord> streamed;
  const auto log_a = pretrain(a, instances, quick_schedule(12), [&](const MetricRecord& r) { streamed.push_back(r); });
  const auto log_b = pretrain(b, instances, quick_schedule(12));
  CHECK(log_a == log_b);
  CHECK(streamed == log_a);
  CHECK(a.parameters() == b.parameters());
  CHECK(log_a.size() == 12);
  for (const auto& r : log_a) {
    CHECK((r.objective == to_string(Objective::kMsp) || r.objective == to_string(Objective::kIt) ||
           r.objective == to_string(Objective::kMip)));
    CHECK(std::isfinite(r.loss));
  }
  auto c = small_model();
  auto other = quick_schedule(12);
  other.seed = 6;
  CHECK(pretrain(c, instances, other) != log_a);
}

TEST_CASE("phase mismatches are rejected") {
  const auto instances = denoise_instances(5, 3);
  auto model = small_model();
  auto dual = quick_schedule(2);
  dual.phase = PretrainPhase::kDual;
  CHECK_THROWS_AS(pretrain(model, instances, dual), InvalidArgument);
  CHECK_THROWS_AS(pretrain(model, instances, quick_schedule(2, {Objective::kDualNl2Pl})), InvalidArgument);
  std::vector<TrainingInstance> only_msp;
  for (const auto& inst : instances) {
    if (inst.objective == Objective::kMsp) only_msp.push_back(inst);
  }
  CHECK_THROWS_AS(pretrain(model, only_msp, quick_schedule(2)), InvalidArgument);
  CHECK_NOTHROW(pretrain(model, only_msp, quick_schedule(2, {Objective::kMsp})));
}

TEST_CASE("dual phase trains on both directions") {
  const auto& tok = small_tokenizer();
  const auto cfg = small_config(tok.vocab_size());
  std::vector<CodeDocument> docs;
  for (std::size_t i = 0; i < 10; ++i) docs.push_back(fit_document(mini_documents()[i], tok, {cfg.max_src_len, cfg.max_tgt_len}));
  const auto instances = build_dual_instances(docs, tok, {cfg.max_src_len, cfg.max_tgt_len});
  REQUIRE_FALSE(instances.empty());
  auto model = small_model();
  auto s = quick_schedule(20);
  s.phase = PretrainPhase::kDual;
  const auto log = pretrain(model, instances, s);
  bool nl2pl = false, pl2nl = false;
  for (const auto& r : log) {
    nl2pl = nl2pl || r.objective == to_string(Objective::kDualNl2Pl);
    pl2nl = pl2nl || r.objective == to_string(Objective::kDualPl2Nl);
  }
  CHECK(nl2pl);
  CHECK(pl2nl);
}

TEST_CASE("generation reproduces memorized spans after overfitting") {
  auto all = denoise_instances(4, 4);
  std::vector<TrainingInstance> msp;
  for (const auto& inst : all) {
    if (inst.objective == Objective::kMsp) msp.push_back(inst);
  }
  auto model = small_model(4);
  pretrain(model, msp, quick_schedule(300, {Objective::kMsp}));
  for (const auto& inst : msp) CHECK(generate(model, inst.source_ids, small_config(1).max_tgt_len) == inst.target_ids);
}

TEST_CASE("unigram classification learns a separable set") {
  const auto& tok = small_tokenizer();
  const TokenId zero = tok.encode("0")[0], one = tok.encode("1")[0];
  const std::vector<TokenId> labels{zero, one};
  Rng rng(9);
  std::vector<TrainingInstance> train;
  for (int i = 0; i < 20; ++i) {
    const bool positive = i % 2 == 1;
    TrainingInstance inst;
    inst.objective = Objective::kFinetune;
    inst.source_ids = {kClsId, kSepId};
    for (int w = 0; w < 6; ++w) {
      const TokenId filler = tok.first_merge_id() + static_cast<TokenId>(rng.uniform_int(0, 50));
      inst.source_ids.push_back(filler);
    }
    inst.source_ids.insert(inst.source_ids.begin() + 2 + rng.uniform_int(0, 5), positive ? tok.encode(" free")[0] : tok.encode(" return")[0]);
    inst.source_ids.push_back(kSepId);
    inst.target_ids = {positive ? one : zero};
    train.push_back(std::move(inst));
  }
  auto model = small_model(9);
  const TaskMixture mixture({TaskSpec{"defect", train.size(), "", {}, {}}}, 0.7);
  FinetuneOptions opts;
  opts.steps = 150;
  opts.optimizer.peak_lr = 3e-3;
  const auto result = finetune(model, mixture, {{"defect", FinetuneData{train, {}}}}, opts);
  CHECK(result.best_validation.empty());
  std::size_t correct = 0;
  for (const auto& inst : train) {
    const auto label = classify_unigram(model, inst.source_ids, labels);
    CHECK((label == zero || label == one));
    correct += label == inst.target_ids[0];
  }
  CHECK(correct == train.size());
}

TEST_CASE("finetune tracks the best validation loss") {
  auto instances = denoise_instances(6, 10);
  std::vector<TrainingInstance> msp;
  for (auto& inst : instances) {
    if (inst.objective == Objective::kMsp) msp.push_back(inst);
  }
  auto model = small_model(10);
  const TaskMixture mixture({TaskSpec{"a", 3, "", {}, {}}, TaskSpec{"b", 3, "", {}, {}}}, 0.7);
  FinetuneOptions opts;
  opts.steps = 10;
  opts.eval_every = 4;
  const std::map<std::string, FinetuneData> data{{"a", {msp, msp}}, {"b", {msp, {}}}};
  const auto result = finetune(model, mixture, data, opts);
  REQUIRE(result.best_validation.count("a") == 1);
  CHECK(result.best_validation.count("b") == 0);
  std::size_t validations = 0;
  double best = 1e300;
  for (const auto& r : result.log) {
    if (r.objective == "a/validation") {
      ++validations;
      best = std::min(best, r.loss);
    }
  }
  CHECK(validations == 3);  // steps 4, 8 and the final 10
  CHECK(result.best_validation.at("a") == best);
  Seq2SeqModel<float> restored = model;
  restored.parameters() = result.best_parameters.at("a");
  CHECK(evaluate_loss(restored, msp) == doctest::Approx(best));
  CHECK_THROWS_AS(finetune(model, mixture, {{"a", {msp, {}}}}, opts), InvalidArgument);
}

TEST_CASE("class head training") {
  auto cfg = small_config(small_tokenizer().vocab_size());
  cfg.num_classes = 2;
  Seq2SeqModel<double> model(cfg, 11);
  AdamOptimizer<double> opt(model.num_parameters(), OptimizerOptions{.peak_lr = 3e-3, .total_steps = 60});
  const std::vector<std::pair<std::vector<TokenId>, std::size_t>> batch{
      {{kClsId, 400, 401, kSepId}, 0}, {{kClsId, 402, 403, kSepId}, 1}};
  const double first = train_class_step(model, opt, batch, {});
  double last = first;
  for (int i = 0; i < 59; ++i) last = train_class_step(model, opt, batch, {});
  CHECK(last < 0.5 * first);
  CHECK(classify_last_state(model, batch[0].first) == 0);
  CHECK(classify_last_state(model, batch[1].first) == 1);
}

TEST_CASE("rename-only clones embed closer than random pairs") {
  const auto& tok = small_tokenizer();
  auto model = small_model(12);
  pretrain(model, denoise_instances(mini_documents().size(), 12), quick_schedule(200));
  Rng rng(12);
  double clone = 0.0, random = 0.0;
  constexpr int kPairs = 40;
  for (int i = 0; i < kPairs; ++i) {
    const auto kind = static_cast<std::size_t>(rng.uniform_int(0, kMiniTemplates - 1));
    const auto other = (kind + static_cast<std::size_t>(rng.uniform_int(1, kMiniTemplates - 1))) % kMiniTemplates;
    const auto a = encode_document(synthetic_mini(rng, kind), tok);
    const auto b = encode_document(synthetic_mini(rng, kind), tok);
    const auto c = encode_document(synthetic_mini(rng, other), tok);
    const auto ea = embed_last_state(model, a);
    clone += cosine_similarity(ea, embed_last_state(model, b));
    random += cosine_similarity(ea, embed_last_state(model, c));
  }
  CHECK(clone / kPairs > random / kPairs);
}
