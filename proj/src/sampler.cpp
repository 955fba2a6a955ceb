#include "idpt/sampler.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "idpt/error.hpp"
#include "json.hpp"

namespace idpt {

std::vector<double> mixture_probs(std::span<const std::size_t> sizes, double alpha) {
  if (sizes.empty()) throw InvalidArgument("mixture needs at least one task");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be a finite value >= 0");
  double total = 0.0;
  for (auto n : sizes) {
    if (n == 0) throw InvalidArgument("task sizes must be positive");
    total += static_cast<double>(n);
  }
  std::vector<double> q(sizes.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    q[i] = std::pow(static_cast<double>(sizes[i]) / total, alpha);
    norm += q[i];
  }
  for (auto& v : q) v /= norm;
  return q;
}

TaskMixture::TaskMixture(std::vector<TaskSpec> tasks, double alpha) : tasks_(std::move(tasks)), alpha_(alpha) {
  std::vector<std::size_t> sizes;
  sizes.reserve(tasks_.size());
  for (const auto& t : tasks_) sizes.push_back(t.size);
  probs_ = mixture_probs(sizes, alpha);
  const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0,
                                       [](double acc, std::size_t n) { return acc + static_cast<double>(n); });
  for (auto n : sizes) rates_.push_back(static_cast<double>(n) / total);
}

TaskMixture TaskMixture::with_sizes(std::span<const std::size_t> sizes) const {
  if (sizes.size() != tasks_.size()) throw InvalidArgument("size list does not match the task list");
  auto tasks = tasks_;
  for (std::size_t i = 0; i < tasks.size(); ++i) tasks[i].size = sizes[i];
  return TaskMixture(std::move(tasks), alpha_);
}

std::size_t TaskMixture::sample_index(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    acc += probs_[i];
    if (u < acc) return i;
  }
  return probs_.size() - 1;
}

const TaskSpec& TaskMixture::task(const std::string& name) const {
  for (const auto& t : tasks_) {
    if (t.name == name) return t;
  }
  throw InvalidArgument("no task named '" + name + "' in mixture");
}

TaskMixture TaskMixture::load(const std::filesystem::path& path, std::optional<double> alpha_override,
                              const std::function<std::size_t(const std::filesystem::path&)>& size_of) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mixture config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<TaskSpec> tasks;
  try {
    for (const auto& t : j.at("tasks")) {
      TaskSpec spec;
      spec.name = t.at("name").get<std::string>();
      spec.control_code = t.value("control_code", std::string{});
      spec.dataset = resolve(t.value("dataset", std::string{}));
      spec.validation = resolve(t.value("validation", std::string{}));
      if (t.contains("size")) {
        spec.size = t.at("size").get<std::size_t>();
      } else if (size_of && !spec.dataset.empty()) {
        spec.size = size_of(spec.dataset);
      } else {
        throw FormatError("task '" + spec.name + "' has neither a size nor a dataset to count");
      }
      tasks.push_back(std::move(spec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const double alpha = alpha_override.value_or(j.value("alpha", kDefaultMixtureAlpha));
  return TaskMixture(std::move(tasks), alpha);
}

TrainingInstance apply_control_code(TrainingInstance instance, const std::string& control_code,
                                    const SubwordTokenizer& tok) {
  if (instance.control_code) {
    throw InvalidArgument("instance already carries control code '" + *instance.control_code + "'");
  }
  if (control_code.empty()) return instance;
  if (instance.source_ids.empty() || instance.source_ids.front() != kClsId) {
    throw InvalidArgument("control codes are inserted after a leading [CLS]");
  }
  const auto prefix = tok.encode_ordinary(control_code);
  instance.source_ids.insert(instance.source_ids.begin() + 1, prefix.begin(), prefix.end());
  instance.control_code = control_code;
  return instance;
}

}  // namespace idpt
