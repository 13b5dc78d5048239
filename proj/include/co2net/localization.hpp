#pragma once

#include "co2net/errors.hpp"
#include "co2net/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace co2net {

struct Proposal {
  double t_start = 0.0;
  double t_end = 0.0;
  int cls = 0;
  double confidence = 0.0;

  bool operator==(const Proposal&) const = default;
};

struct LocalizeConfig {
  double class_threshold = 0.2;
  std::vector<double> attn_thresholds = default_attention_thresholds();
  double oic_inflation = 0.25;
  double nms_sigma = 0.3;
  Index min_proposal_len = 2;

  /// 0.10, 0.15, ..., 0.90.
  static std::vector<double> default_attention_thresholds();
  void validate() const;
};

/// Soft-NMS drops proposals whose confidence falls below this.
inline constexpr double kMinConfidence = 1e-4;

/// Top-k mean per column of the suppressed T-CAM, softmax over C+1, background dropped.
Vector video_class_scores(const Matrix& tcam_supp, Index k_divisor);

/// Classes scoring at least `threshold`; the argmax alone when none does.
std::vector<int> select_classes(const Vector& scores, double threshold);

/// Maximal runs of a >= theta (length >= min_len) for every threshold, emitted
/// once per selected class, duplicates collapsed. Confidence is left at 0.
std::vector<Proposal> generate_proposals(const Eigen::Ref<const Vector>& attention,
                                         const std::vector<int>& classes, const LocalizeConfig& config);

/// Snippet index ranges (half-open) of the inner and inflated outer regions.
struct OicRegions {
  Index inner_begin = 0, inner_end = 0;
  Index left_begin = 0, left_end = 0;
  Index right_begin = 0, right_end = 0;
};

OicRegions oic_regions(Index T, double t_start, double t_end, double inflation);

/// Inner mean minus outer mean of one class column over a proposal. The outer
/// region extends inflation * length on both sides, clipped to [0, T); an empty
/// outer region counts as mean 0.
template <typename Derived>
double oic_score(const Eigen::MatrixBase<Derived>& column, const Proposal& p, double inflation) {
  const Index T = column.size();
  if (!(p.t_start >= 0.0 && p.t_start < p.t_end && p.t_end <= static_cast<double>(T)))
    throw ContractError("oic_score: proposal outside [0, T]");
  const OicRegions r = oic_regions(T, p.t_start, p.t_end, inflation);
  if (r.inner_end <= r.inner_begin) throw ContractError("oic_score: empty inner region");
  const double inner = column.segment(r.inner_begin, r.inner_end - r.inner_begin).mean();
  const Index n_left = r.left_end - r.left_begin;
  const Index n_right = r.right_end - r.right_begin;
  if (n_left + n_right == 0) return inner;
  const double outer_sum = (n_left ? column.segment(r.left_begin, n_left).sum() : 0.0) +
                           (n_right ? column.segment(r.right_begin, n_right).sum() : 0.0);
  return inner - outer_sum / static_cast<double>(n_left + n_right);
}

/// Per-class Gaussian soft-NMS: confidence *= exp(-tIoU^2 / sigma) against each
/// selected proposal. Proposals below kMinConfidence are dropped (including on
/// input). Output sorted by confidence descending.
std::vector<Proposal> soft_nms(std::vector<Proposal> proposals, double sigma);

/// Class scoring, proposal generation on the fused attention, OIC scoring
/// (confidence = OIC + class score) and soft-NMS.
std::vector<Proposal> localize_video(const ForwardOutput& out, const LocalizeConfig& config, Index k_divisor);

}  // namespace co2net
