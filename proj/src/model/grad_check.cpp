#include "idpt/model/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "idpt/error.hpp"
#include "idpt/rng.hpp"

namespace idpt {

GradCheckResult grad_check(Seq2SeqModel<double>& model, const GradCheckLoss& loss, const GradCheckOptions& options) {
  std::vector<Eigen::Index> candidates;
  for (const auto& t : model.tensors()) {
    if (options.group && t.group != *options.group) continue;
    for (Eigen::Index i = 0; i < t.size(); ++i) candidates.push_back(t.offset + i);
  }
  Rng rng(options.seed);
  const std::size_t n = std::min(options.samples, candidates.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(candidates.size()) - 1));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(n);

  VectorX<double> grad = model.zero_gradient();
  const double base = loss(model, &grad);
  if (!std::isfinite(base) || !grad.allFinite()) throw Error("grad_check: non-finite loss or gradient");

  GradCheckResult result;
  auto& params = model.parameters();
  for (auto idx : candidates) {
    const double saved = params[idx];
    params[idx] = saved + options.step;
    const double plus = loss(model, nullptr);
    params[idx] = saved - options.step;
    const double minus = loss(model, nullptr);
    params[idx] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) throw Error("grad_check: non-finite perturbed loss");
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double analytic = grad[idx];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
    result.max_abs_numeric = std::max(result.max_abs_numeric, std::abs(numeric));
    result.indices.push_back(idx);
    result.analytic.push_back(analytic);
    result.numeric.push_back(numeric);
  }
  return result;
}

}  // namespace idpt
