#pragma once

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace co2net {

/// Temporal IoU of [a_start, a_end) and [b_start, b_end). Throws ContractError
/// for degenerate segments.
double tiou(double a_start, double a_end, double b_start, double b_end);

struct Detection {
  std::string video_id;
  double t_start = 0.0;
  double t_end = 0.0;
  int cls = 0;
  double confidence = 0.0;
};

struct GroundTruth {
  std::string video_id;
  double start = 0.0;
  double end = 0.0;
  int cls = 0;
};

/// Detections in the order they are matched: confidence descending, then
/// earlier start, then earlier end, then video id, then input position.
std::vector<std::size_t> ranking_order(const std::vector<Detection>& detections);

/// Greedy TP/FP flags in ranking order: each detection claims the unmatched
/// ground truth (same video) with highest tIoU >= threshold, ties to the lower index.
std::vector<bool> match_detections(const std::vector<Detection>& detections,
                                   const std::vector<GroundTruth>& ground_truth, double iou_threshold);

/// Area under the precision/recall steps for one class. Empty optional when the
/// class has neither ground truth nor detections; 0 when only one side is empty.
std::optional<double> average_precision(const std::vector<Detection>& detections,
                                        const std::vector<GroundTruth>& ground_truth, double iou_threshold);

struct EvalReport {
  std::vector<double> thresholds;
  /// class -> AP per threshold (nullopt where undefined).
  std::map<int, std::vector<std::optional<double>>> per_class_ap;
  std::vector<double> map_at;
  /// "0.1:0.5", "0.1:0.7", "0.1:0.9" -> mean of member mAPs.
  std::map<std::string, double> avg_map;

  double map_at_threshold(double thr) const;
  nlohmann::json to_json(const std::vector<std::string>& class_names) const;
  std::string to_csv() const;
};

std::vector<double> default_iou_thresholds();

/// Per-class AP at every threshold; mAP over classes with ground truth.
/// Throws ContractError when no class has ground truth.
EvalReport map_report(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth,
                      int num_classes, const std::vector<double>& thresholds = default_iou_thresholds());

}  // namespace co2net
