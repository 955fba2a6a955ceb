#include "idpt/model/train.hpp"

#include <algorithm>
#include <cmath>

#include "idpt/error.hpp"

namespace idpt {

template <typename S>
AdamOptimizer<S>::AdamOptimizer(Eigen::Index num_parameters, OptimizerOptions options)
    : options_(options), m_(VectorX<S>::Zero(num_parameters)), v_(VectorX<S>::Zero(num_parameters)) {
  if (options_.total_steps == 0) options_.total_steps = 1;
}

template <typename S>
double AdamOptimizer<S>::learning_rate(std::size_t step) const {
  const double t = static_cast<double>(step) + 1.0;
  if (options_.warmup_steps > 0 && step < options_.warmup_steps) {
    return options_.peak_lr * t / static_cast<double>(options_.warmup_steps);
  }
  const double decay_span = static_cast<double>(options_.total_steps - std::min(options_.warmup_steps, options_.total_steps));
  const double into = static_cast<double>(step - std::min(step, options_.warmup_steps));
  if (decay_span <= 0.0) return options_.peak_lr;
  return options_.peak_lr * std::max(0.0, 1.0 - into / decay_span);
}

template <typename S>
double AdamOptimizer<S>::step(VectorX<S>& params, VectorX<S>& grad) {
  const double norm = static_cast<double>(grad.norm());
  if (!std::isfinite(norm)) throw Error("non-finite gradient norm");
  if (options_.clip_norm > 0.0 && norm > options_.clip_norm) grad *= static_cast<S>(options_.clip_norm / norm);
  const double lr = learning_rate(steps_);
  ++steps_;
  const auto b1 = static_cast<S>(options_.beta1), b2 = static_cast<S>(options_.beta2);
  m_ = b1 * m_ + (S(1) - b1) * grad;
  v_ = b2 * v_ + (S(1) - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  const auto step_size = static_cast<S>(lr / c1);
  const auto eps = static_cast<S>(options_.epsilon);
  const auto root_c2 = static_cast<S>(std::sqrt(c2));
  params.array() -= step_size * m_.array() / (v_.array().sqrt() / root_c2 + eps);
  return norm;
}

nlohmann::json to_json(const MetricRecord& r) {
  return {{"step", r.step}, {"objective", r.objective}, {"loss", r.loss}};
}

template <typename S>
double train_step(Seq2SeqModel<S>& model, AdamOptimizer<S>& optimizer,
                  const std::vector<const TrainingInstance*>& batch, const LossOptions& options) {
  VectorX<S> grad = model.zero_gradient();
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto* inst : batch) {
    const auto loss = instance_loss(model, *inst, options, &grad);
    sum += static_cast<double>(loss.sum);
    count += loss.count;
  }
  if (count == 0) return 0.0;
  grad /= static_cast<S>(count);
  optimizer.step(model.parameters(), grad);
  return sum / static_cast<double>(count);
}

template <typename S>
double train_class_step(Seq2SeqModel<S>& model, AdamOptimizer<S>& optimizer,
                        const std::vector<std::pair<std::vector<TokenId>, std::size_t>>& batch,
                        const LossOptions& options) {
  VectorX<S> grad = model.zero_gradient();
  double sum = 0.0;
  for (const auto& [src, label] : batch) sum += static_cast<double>(loss_class(model, src, label, options, &grad).sum);
  if (batch.empty()) return 0.0;
  grad /= static_cast<S>(batch.size());
  optimizer.step(model.parameters(), grad);
  return sum / static_cast<double>(batch.size());
}

std::string_view to_string(PretrainPhase phase) { return phase == PretrainPhase::kDenoise ? "denoise" : "dual"; }

PretrainPhase pretrain_phase_from_string(std::string_view name) {
  if (name == "denoise") return PretrainPhase::kDenoise;
  if (name == "dual") return PretrainPhase::kDual;
  throw InvalidArgument("unknown phase '" + std::string(name) + "' (expected denoise or dual)");
}

namespace {

bool in_phase(Objective o, PretrainPhase phase) {
  if (phase == PretrainPhase::kDenoise) return o == Objective::kMsp || o == Objective::kIt || o == Objective::kMip;
  return o == Objective::kDualNl2Pl || o == Objective::kDualPl2Nl;
}

template <typename T>
std::vector<const T*> sample_batch(const std::vector<const T*>& pool, std::size_t batch_size, Rng& rng) {
  std::vector<const T*> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    batch.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
  }
  return batch;
}

}  // namespace

template <typename S>
std::vector<MetricRecord> pretrain(Seq2SeqModel<S>& model, const std::vector<TrainingInstance>& instances,
                                   const PretrainSchedule& schedule,
                                   const std::function<void(const MetricRecord&)>& on_record) {
  std::map<Objective, std::vector<const TrainingInstance*>> pools;
  for (const auto& inst : instances) {
    if (!in_phase(inst.objective, schedule.phase)) {
      throw InvalidArgument("instance objective " + std::string(to_string(inst.objective)) +
                            " does not belong to the " + std::string(to_string(schedule.phase)) + " phase");
    }
    pools[inst.objective].push_back(&inst);
  }

  std::vector<Objective> drawable;
  if (schedule.phase == PretrainPhase::kDual) {
    drawable = {Objective::kDualNl2Pl, Objective::kDualPl2Nl};
  } else if (schedule.objectives.empty()) {
    drawable.assign(std::begin(kDenoisingTasks), std::end(kDenoisingTasks));
  } else {
    drawable = schedule.objectives;
  }
  for (auto o : drawable) {
    if (!in_phase(o, schedule.phase)) {
      throw InvalidArgument("objective " + std::string(to_string(o)) + " cannot be scheduled in this phase");
    }
    if (schedule.steps > 0 && pools[o].empty()) {
      throw InvalidArgument("no " + std::string(to_string(o)) + " instances to train on");
    }
  }
  const bool all_denoising = schedule.phase == PretrainPhase::kDenoise && drawable.size() == 3 &&
                             std::is_permutation(drawable.begin(), drawable.end(), std::begin(kDenoisingTasks));

  OptimizerOptions opt = schedule.optimizer;
  opt.total_steps = std::max<std::size_t>(schedule.steps, 1);
  AdamOptimizer<S> optimizer(model.num_parameters(), opt);
  Rng rng(schedule.seed);
  Rng dropout_rng(mix_seed(schedule.seed, 0xd50));
  LossOptions loss_options{true, &dropout_rng};

  std::vector<MetricRecord> log;
  for (std::size_t step = 0; step < schedule.steps; ++step) {
    const Objective objective =
        all_denoising ? pick_denoising_task(rng)
                      : drawable[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(drawable.size()) - 1))];
    const auto batch = sample_batch(pools[objective], schedule.batch_size, rng);
    const double loss = train_step(model, optimizer, batch, loss_options);
    MetricRecord rec{step, std::string(to_string(objective)), loss};
    if (on_record) on_record(rec);
    log.push_back(std::move(rec));
  }
  return log;
}

template <typename S>
double evaluate_loss(const Seq2SeqModel<S>& model, const std::vector<TrainingInstance>& instances) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& inst : instances) {
    const auto loss = instance_loss(model, inst, LossOptions{true, nullptr});
    sum += static_cast<double>(loss.sum);
    count += loss.count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

template <typename S>
FinetuneResult<S> finetune(Seq2SeqModel<S>& model, const TaskMixture& mixture,
                           const std::map<std::string, FinetuneData>& data, const FinetuneOptions& options,
                           const std::function<void(const MetricRecord&)>& on_record) {
  std::vector<std::vector<const TrainingInstance*>> pools;
  for (const auto& task : mixture.tasks()) {
    auto it = data.find(task.name);
    if (it == data.end() || it->second.train.empty()) {
      throw InvalidArgument("no training data for task '" + task.name + "'");
    }
    std::vector<const TrainingInstance*> pool;
    for (const auto& inst : it->second.train) pool.push_back(&inst);
    pools.push_back(std::move(pool));
  }

  OptimizerOptions opt = options.optimizer;
  opt.total_steps = std::max<std::size_t>(options.steps, 1);
  AdamOptimizer<S> optimizer(model.num_parameters(), opt);
  Rng rng(options.seed);
  Rng dropout_rng(mix_seed(options.seed, 0xd50));
  LossOptions loss_options{true, &dropout_rng};

  FinetuneResult<S> result;
  auto validate = [&](std::size_t step) {
    for (const auto& task : mixture.tasks()) {
      const auto& val = data.at(task.name).validation;
      if (val.empty()) continue;
      const double loss = evaluate_loss(model, val);
      MetricRecord rec{step, task.name + "/validation", loss};
      if (on_record) on_record(rec);
      result.log.push_back(rec);
      auto best = result.best_validation.find(task.name);
      if (best == result.best_validation.end() || loss < best->second) {
        result.best_validation[task.name] = loss;
        result.best_parameters[task.name] = model.parameters();
      }
    }
  };

  for (std::size_t step = 0; step < options.steps; ++step) {
    const std::size_t t = mixture.sample_index(rng);
    const auto batch = sample_batch(pools[t], options.batch_size, rng);
    const double loss = train_step(model, optimizer, batch, loss_options);
    MetricRecord rec{step, mixture.tasks()[t].name, loss};
    if (on_record) on_record(rec);
    result.log.push_back(std::move(rec));
    if (options.eval_every > 0 && (step + 1) % options.eval_every == 0) validate(step + 1);
  }
  if (options.eval_every == 0 || options.steps % options.eval_every != 0) validate(options.steps);
  return result;
}

#define IDPT_INSTANTIATE_TRAIN(S)                                                                                  \
  template class AdamOptimizer<S>;                                                                                 \
  template double train_step(Seq2SeqModel<S>&, AdamOptimizer<S>&, const std::vector<const TrainingInstance*>&,     \
                             const LossOptions&);                                                                  \
  template double train_class_step(Seq2SeqModel<S>&, AdamOptimizer<S>&,                                            \
                                   const std::vector<std::pair<std::vector<TokenId>, std::size_t>>&,               \
                                   const LossOptions&);                                                            \
  template std::vector<MetricRecord> pretrain(Seq2SeqModel<S>&, const std::vector<TrainingInstance>&,              \
                                              const PretrainSchedule&, const std::function<void(const MetricRecord&)>&); \
  template double evaluate_loss(const Seq2SeqModel<S>&, const std::vector<TrainingInstance>&);                     \
  template FinetuneResult<S> finetune(Seq2SeqModel<S>&, const TaskMixture&, const std::map<std::string, FinetuneData>&, \
                                      const FinetuneOptions&, const std::function<void(const MetricRecord&)>&);

IDPT_INSTANTIATE_TRAIN(float)
IDPT_INSTANTIATE_TRAIN(double)

#undef IDPT_INSTANTIATE_TRAIN

}  // namespace idpt
