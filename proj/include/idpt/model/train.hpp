#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "idpt/model/ops.hpp"
#include "idpt/sampler.hpp"
#include "json.hpp"

namespace idpt {

struct OptimizerOptions {
  double peak_lr = 2e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;  // learning rate decays linearly to zero here
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Adaptive-moment gradient descent with linear warmup/decay and global
// gradient-norm clipping.
template <typename Scalar>
class AdamOptimizer {
 public:
  AdamOptimizer(Eigen::Index num_parameters, OptimizerOptions options);

  double learning_rate(std::size_t step) const;
  // Clips `grad` in place, updates `params`; returns the pre-clip norm.
  double step(VectorX<Scalar>& params, VectorX<Scalar>& grad);
  std::size_t steps_taken() const { return steps_; }
  const OptimizerOptions& options() const { return options_; }

 private:
  OptimizerOptions options_;
  VectorX<Scalar> m_;
  VectorX<Scalar> v_;
  std::size_t steps_ = 0;
};

struct MetricRecord {
  std::size_t step = 0;
  std::string objective;
  double loss = 0.0;  // per-token mean over the batch

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};
nlohmann::json to_json(const MetricRecord& record);

// Averages the summed losses of a batch over its token count and takes one
// optimizer step. Returns the per-token mean loss.
template <typename Scalar>
double train_step(Seq2SeqModel<Scalar>& model, AdamOptimizer<Scalar>& optimizer,
                  const std::vector<const TrainingInstance*>& batch, const LossOptions& options);

// Same, for (source, class label) pairs through the class head.
template <typename Scalar>
double train_class_step(Seq2SeqModel<Scalar>& model, AdamOptimizer<Scalar>& optimizer,
                        const std::vector<std::pair<std::vector<TokenId>, std::size_t>>& batch,
                        const LossOptions& options);

enum class PretrainPhase { kDenoise, kDual };
std::string_view to_string(PretrainPhase phase);
PretrainPhase pretrain_phase_from_string(std::string_view name);

struct PretrainSchedule {
  PretrainPhase phase = PretrainPhase::kDenoise;
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  OptimizerOptions optimizer;
  std::uint64_t seed = 0;
  // Denoising objectives to alternate between; empty means MSP, IT and MIP.
  std::vector<Objective> objectives;
};

// Each step draws an objective (denoise: MSP/IT/MIP with equal probability;
// dual: NL->PL or PL->NL with equal probability), samples a batch of that
// objective's instances and updates the model. Throws InvalidArgument when an
// instance does not belong to the phase, or when a drawable objective has no
// instances.
template <typename Scalar>
std::vector<MetricRecord> pretrain(Seq2SeqModel<Scalar>& model, const std::vector<TrainingInstance>& instances,
                                   const PretrainSchedule& schedule,
                                   const std::function<void(const MetricRecord&)>& on_record = {});

struct FinetuneData {
  std::vector<TrainingInstance> train;
  std::vector<TrainingInstance> validation;
};

struct FinetuneOptions {
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  std::size_t eval_every = 25;
  OptimizerOptions optimizer;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct FinetuneResult {
  std::vector<MetricRecord> log;
  // Best (lowest) per-token validation loss per task and the parameters that
  // achieved it; tasks without validation data are absent.
  std::map<std::string, double> best_validation;
  std::map<std::string, VectorX<Scalar>> best_parameters;
};

// Multi-task fine-tuning: each step samples a task from the mixture and a
// batch from that task's training data (control codes are expected to be
// applied already).
template <typename Scalar>
FinetuneResult<Scalar> finetune(Seq2SeqModel<Scalar>& model, const TaskMixture& mixture,
                                const std::map<std::string, FinetuneData>& data, const FinetuneOptions& options,
                                const std::function<void(const MetricRecord&)>& on_record = {});

// Mean per-token loss over a data set without updating the model.
template <typename Scalar>
double evaluate_loss(const Seq2SeqModel<Scalar>& model, const std::vector<TrainingInstance>& instances);

}  // namespace idpt
