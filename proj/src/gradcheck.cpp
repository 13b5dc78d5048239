#include "co2net/gradcheck.hpp"

#include "co2net/errors.hpp"

#include <algorithm>
#include <cmath>

namespace co2net {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Evaluation {
  double value = 0.0;
  std::uint64_t branches = 0;
};

Evaluation evaluate(const ScalarObjective& f, const std::vector<Matrix>& frozen) {
  Tape tape;
  tape.replay_detached(&frozen);
  const Var root = f(tape);
  if (root.rows() != 1 || root.cols() != 1) throw ContractError("gradcheck objective must be scalar");
  return {root.scalar(), tape.branch_signature()};
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarObjective& f, std::span<Parameter* const> params,
                                  double h, double tol, double floor, int max_halvings) {
  if (h <= 0.0) throw ConfigError("gradcheck step must be positive");
  for (Parameter* p : params) p->tensor.zero_grad();
  double base = 0.0;
  std::uint64_t base_branches = 0;
  std::vector<Matrix> frozen;
  {
    Tape tape;
    tape.capture_detached(&frozen);
    const Var root = f(tape);
    base = root.scalar();
    base_branches = tape.branch_signature();
    tape.backward(root);
  }
  if (evaluate(f, frozen).value != base) throw DeterminismError("gradcheck objective is not deterministic");

  GradCheckReport report;
  report.min_step = h;
  for (Parameter* p : params) {
    ParameterGradError err;
    err.name = p->name;
    Vector& values = p->tensor.values();
    for (Index i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double step = h;
      double numeric = 0.0;
      bool stable = false;
      for (int halvings = 0; halvings <= max_halvings; ++halvings, step *= 0.5) {
        values[i] = saved + step;
        const Evaluation up = evaluate(f, frozen);
        values[i] = saved - step;
        const Evaluation down = evaluate(f, frozen);
        numeric = (up.value - down.value) / (2.0 * step);
        stable = up.branches == base_branches && down.branches == base_branches;
        if (stable) break;
      }
      values[i] = saved;
      const double analytic = p->tensor.grad()[i];
      const double rel = relative_error(analytic, numeric, floor);
      if (step != h) {
        ++err.branch_crossings;
        report.min_step = std::min(report.min_step, step);
      } else {
        report.max_nominal_rel_error = std::max(report.max_nominal_rel_error, rel);
      }
      if (!stable) ++report.unresolved;
      if (i == 0 || rel > err.max_rel_error) {
        err.max_rel_error = rel;
        err.worst_index = i;
        err.analytic = analytic;
        err.numeric = numeric;
      }
      ++report.elements_checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.branch_crossings += err.branch_crossings;
    report.per_parameter.push_back(std::move(err));
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace co2net
