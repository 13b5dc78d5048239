#include "co2net/evaluation.hpp"

#include "co2net/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace co2net {

double tiou(double a_start, double a_end, double b_start, double b_end) {
  if (!(a_start < a_end) || !(b_start < b_end)) throw ContractError("tiou: degenerate segment");
  const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = (a_end - a_start) + (b_end - b_start) - inter;
  return inter / uni;
}

std::vector<std::size_t> ranking_order(const std::vector<Detection>& detections) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const Detection& a = detections[i];
    const Detection& b = detections[j];
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.t_start != b.t_start) return a.t_start < b.t_start;
    if (a.t_end != b.t_end) return a.t_end < b.t_end;
    return a.video_id < b.video_id;
  });
  return order;
}

std::vector<bool> match_detections(const std::vector<Detection>& detections,
                                   const std::vector<GroundTruth>& ground_truth, double iou_threshold) {
  const std::vector<std::size_t> order = ranking_order(detections);
  std::vector<bool> taken(ground_truth.size(), false);
  std::vector<bool> tp;
  tp.reserve(order.size());
  for (std::size_t i : order) {
    const Detection& d = detections[i];
    double best = -1.0;
    std::size_t best_g = ground_truth.size();
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (taken[g] || ground_truth[g].video_id != d.video_id) continue;
      const double iou = tiou(d.t_start, d.t_end, ground_truth[g].start, ground_truth[g].end);
      if (iou >= iou_threshold && iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best_g < ground_truth.size()) taken[best_g] = true;
    tp.push_back(best_g < ground_truth.size());
  }
  return tp;
}

std::optional<double> average_precision(const std::vector<Detection>& detections,
                                        const std::vector<GroundTruth>& ground_truth, double iou_threshold) {
  if (ground_truth.empty()) return detections.empty() ? std::nullopt : std::optional<double>(0.0);
  if (detections.empty()) return 0.0;
  const std::vector<bool> tp = match_detections(detections, ground_truth, iou_threshold);
  const double n_gt = static_cast<double>(ground_truth.size());
  double ap = 0.0;
  double hits = 0.0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (!tp[k]) continue;
    hits += 1.0;
    ap += (1.0 / n_gt) * (hits / static_cast<double>(k + 1));
  }
  return ap;
}

std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 9; ++i) t.push_back(i / 10.0);
  return t;
}

double EvalReport::map_at_threshold(double thr) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    if (std::abs(thresholds[i] - thr) < 1e-9) return map_at[i];
  throw ContractError("no mAP recorded at threshold " + std::to_string(thr));
}

nlohmann::json EvalReport::to_json(const std::vector<std::string>& class_names) const {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, aps] : per_class_ap) {
    const std::string name = cls < static_cast<int>(class_names.size()) ? class_names[cls] : std::to_string(cls);
    nlohmann::json row = nlohmann::json::array();
    for (const auto& ap : aps) row.push_back(ap ? nlohmann::json(*ap) : nlohmann::json(nullptr));
    per_class[name] = row;
  }
  nlohmann::json map_obj = nlohmann::json::object();
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::ostringstream key;
    key << thresholds[i];
    map_obj[key.str()] = map_at[i];
  }
  return {{"thresholds", thresholds}, {"per_class_ap", per_class}, {"map_at", map_obj}, {"avg_map", avg_map}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "iou_threshold,map\n";
  for (std::size_t i = 0; i < thresholds.size(); ++i) os << thresholds[i] << ',' << map_at[i] << '\n';
  for (const auto& [name, v] : avg_map) os << "avg " << name << ',' << v << '\n';
  return os.str();
}

EvalReport map_report(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth,
                      int num_classes, const std::vector<double>& thresholds) {
  if (ground_truth.empty()) throw ContractError("map_report: no ground truth for any class");
  for (const Detection& d : detections)
    if (d.cls < 0 || d.cls >= num_classes) throw ContractError("map_report: detection class out of range");
  for (const GroundTruth& g : ground_truth)
    if (g.cls < 0 || g.cls >= num_classes) throw ContractError("map_report: ground-truth class out of range");

  EvalReport report;
  report.thresholds = thresholds;
  std::vector<std::vector<Detection>> det_by_class(static_cast<std::size_t>(num_classes));
  std::vector<std::vector<GroundTruth>> gt_by_class(static_cast<std::size_t>(num_classes));
  for (const Detection& d : detections) det_by_class[static_cast<std::size_t>(d.cls)].push_back(d);
  for (const GroundTruth& g : ground_truth) gt_by_class[static_cast<std::size_t>(g.cls)].push_back(g);

  for (int c = 0; c < num_classes; ++c) {
    const auto& dets = det_by_class[static_cast<std::size_t>(c)];
    const auto& gts = gt_by_class[static_cast<std::size_t>(c)];
    if (dets.empty() && gts.empty()) continue;
    std::vector<std::optional<double>> row;
    for (double thr : thresholds) row.push_back(average_precision(dets, gts, thr));
    report.per_class_ap[c] = std::move(row);
  }
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    double total = 0.0;
    int n = 0;
    for (const auto& [c, row] : report.per_class_ap) {
      if (gt_by_class[static_cast<std::size_t>(c)].empty() || !row[i]) continue;
      total += *row[i];
      ++n;
    }
    report.map_at.push_back(n ? total / n : 0.0);
  }
  auto range_mean = [&](double hi) {
    double total = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (thresholds[i] >= 0.1 - 1e-9 && thresholds[i] <= hi + 1e-9) {
        total += report.map_at[i];
        ++n;
      }
    return n ? total / n : 0.0;
  };
  report.avg_map["0.1:0.5"] = range_mean(0.5);
  report.avg_map["0.1:0.7"] = range_mean(0.7);
  report.avg_map["0.1:0.9"] = range_mean(0.9);
  return report;
}

}  // namespace co2net
