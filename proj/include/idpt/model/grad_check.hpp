#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "idpt/model/seq2seq.hpp"

namespace idpt {

// Loss evaluated on a double-precision model; accumulates the analytic
// gradient into `grad` when non-null.
using GradCheckLoss = std::function<double(const Seq2SeqModel<double>&, VectorX<double>* grad)>;

struct GradCheckOptions {
  std::size_t samples = 64;  // parameters compared, drawn without replacement
  double step = 1e-5;        // central-difference half width
  std::uint64_t seed = 0;
  std::optional<ParamGroup> group;  // restrict sampling to one group
  // Denominator floor in |a - n| / max(|a|, |n|, floor), so that gradients
  // near zero are compared absolutely.
  double floor = 1e-4;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_abs_numeric = 0.0;
  std::vector<Eigen::Index> indices;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Compares analytic gradients with central finite differences on a random
// subset of parameters. Throws Error when the loss or a gradient is
// non-finite. `model` is restored before returning.
GradCheckResult grad_check(Seq2SeqModel<double>& model, const GradCheckLoss& loss, const GradCheckOptions& options = {});

}  // namespace idpt
