#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "idpt/bpe.hpp"
#include "idpt/objectives.hpp"
#include "idpt/rng.hpp"

namespace idpt {

inline constexpr double kDefaultMixtureAlpha = 0.7;

// q_i = r_i^alpha / sum_j r_j^alpha with r_i = n_i / sum_k n_k.
// Throws InvalidArgument on an empty list, a zero size, or alpha < 0.
std::vector<double> mixture_probs(std::span<const std::size_t> sizes, double alpha);

struct TaskSpec {
  std::string name;
  std::size_t size = 0;
  std::string control_code;
  std::filesystem::path dataset;        // optional; used by the finetune CLI
  std::filesystem::path validation;     // optional
};

// Immutable once built: the probabilities are derived on construction.
class TaskMixture {
 public:
  TaskMixture(std::vector<TaskSpec> tasks, double alpha);

  // Mixture config: {"alpha": 0.7, "tasks": [{"name", "dataset", "control_code", "size"?, "validation"?}]}.
  // Relative paths resolve against the config's directory. A missing size is
  // filled by `size_of(dataset)` when given.
  static TaskMixture load(const std::filesystem::path& path, std::optional<double> alpha_override = std::nullopt,
                          const std::function<std::size_t(const std::filesystem::path&)>& size_of = {});

  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const std::vector<double>& probs() const { return probs_; }
  const std::vector<double>& rates() const { return rates_; }
  double alpha() const { return alpha_; }

  TaskMixture with_alpha(double alpha) const { return TaskMixture(tasks_, alpha); }
  TaskMixture with_sizes(std::span<const std::size_t> sizes) const;

  std::size_t sample_index(Rng& rng) const;
  const std::string& sample_task(Rng& rng) const { return tasks_[sample_index(rng)].name; }
  const TaskSpec& task(const std::string& name) const;

 private:
  std::vector<TaskSpec> tasks_;
  double alpha_;
  std::vector<double> rates_;
  std::vector<double> probs_;
};

// Prepends the control code's subword ids right after [CLS]. An empty code
// leaves the instance untouched. Throws InvalidArgument when the instance
// already carries a control code.
TrainingInstance apply_control_code(TrainingInstance instance, const std::string& control_code,
                                    const SubwordTokenizer& tok);

}  // namespace idpt
