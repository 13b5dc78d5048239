#pragma once

#include "co2net/autodiff.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace co2net {

struct ParameterGradError {
  std::string name;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double max_rel_error = 0.0;
  /// Elements whose nominal +-h step changed a branch and was refined.
  std::size_t branch_crossings = 0;
};

struct GradCheckReport {
  std::vector<ParameterGradError> per_parameter;
  double max_rel_error = 0.0;
  std::size_t elements_checked = 0;
  std::size_t branch_crossings = 0;
  /// Refined elements that never found a branch-stable step.
  std::size_t unresolved = 0;
  /// Max relative error over elements differenced at the nominal step.
  double max_nominal_rel_error = 0.0;
  /// Smallest step used by any refinement (the nominal step if none).
  double min_step = 0.0;
  bool passed = false;
};

/// Builds the scalar objective on a fresh tape.
using ScalarObjective = std::function<Var(Tape&)>;

/// |a - n| / max(|a|, |n|, floor). The floor keeps vanishing gradients from
/// turning round-off into huge ratios.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central-difference check of the tape gradient of `f` for every element of
/// every parameter. Stop-gradient outputs are held at their values from the
/// unperturbed evaluation, so the check targets the gradient the tape defines.
/// When the +-h evaluations take a different branch (ReLU sign, top-k set, ...)
/// than the base point, the step is halved up to `max_halvings` times until
/// both sides stay on the base branch. Throws DeterminismError when two
/// evaluations at the same point disagree.
GradCheckReport finite_diff_check(const ScalarObjective& f, std::span<Parameter* const> params,
                                  double h, double tol, double floor = 1e-6, int max_halvings = 30);

}  // namespace co2net
