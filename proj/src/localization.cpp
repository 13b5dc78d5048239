#include "co2net/localization.hpp"

#include "co2net/evaluation.hpp"
#include "co2net/losses.hpp"

#include <map>
#include <numeric>
#include <set>
#include <tuple>

namespace co2net {

std::vector<double> LocalizeConfig::default_attention_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 16; ++i) t.push_back((10 + 5 * i) / 100.0);
  return t;
}

void LocalizeConfig::validate() const {
  if (!(class_threshold >= 0.0 && class_threshold <= 1.0)) throw ConfigError("localize: class_threshold must lie in [0,1]");
  if (attn_thresholds.empty()) throw ConfigError("localize: need at least one attention threshold");
  for (double t : attn_thresholds)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("localize: attention thresholds must lie in (0,1)");
  if (!(oic_inflation > 0.0)) throw ConfigError("localize: oic_inflation must be positive");
  if (!(nms_sigma > 0.0)) throw ConfigError("localize: nms_sigma must be positive");
  if (min_proposal_len < 1) throw ConfigError("localize: min_proposal_len must be at least 1");
}

Vector video_class_scores(const Matrix& tcam_supp, Index k_divisor) {
  const Index T = tcam_supp.rows();
  if (T == 0) throw EmptySequenceError("video_class_scores: empty T-CAM");
  const Index k = topk_count(T, k_divisor);
  Vector pooled(tcam_supp.cols());
  for (Index c = 0; c < tcam_supp.cols(); ++c) {
    double s = 0.0;
    for (Index r : topk_indices(tcam_supp.col(c), k)) s += tcam_supp(r, c);
    pooled[c] = s / static_cast<double>(k);
  }
  const Vector e = (pooled.array() - pooled.maxCoeff()).exp();
  const Vector p = e / e.sum();
  return p.head(p.size() - 1);
}

std::vector<int> select_classes(const Vector& scores, double threshold) {
  std::vector<int> out;
  for (Index c = 0; c < scores.size(); ++c)
    if (scores[c] >= threshold) out.push_back(static_cast<int>(c));
  if (out.empty() && scores.size() > 0) {
    Index best = 0;
    scores.maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

std::vector<Proposal> generate_proposals(const Eigen::Ref<const Vector>& attention, const std::vector<int>& classes,
                                         const LocalizeConfig& config) {
  const Index T = attention.size();
  const std::set<double> thresholds(config.attn_thresholds.begin(), config.attn_thresholds.end());
  std::set<std::pair<Index, Index>> segments;
  for (double theta : thresholds) {
    Index t = 0;
    while (t < T) {
      if (attention[t] < theta) {
        ++t;
        continue;
      }
      const Index start = t;
      while (t < T && attention[t] >= theta) ++t;
      if (t - start >= config.min_proposal_len) segments.emplace(start, t);
    }
  }
  std::set<int> unique_classes(classes.begin(), classes.end());
  std::vector<Proposal> out;
  for (int c : unique_classes)
    for (const auto& [s, e] : segments) out.push_back({static_cast<double>(s), static_cast<double>(e), c, 0.0});
  return out;
}

OicRegions oic_regions(Index T, double t_start, double t_end, double inflation) {
  const double len = t_end - t_start;
  const auto clip = [T](double v) { return std::clamp<Index>(static_cast<Index>(v), 0, T); };
  OicRegions r;
  r.inner_begin = clip(std::ceil(t_start));
  r.inner_end = clip(std::ceil(t_end));
  r.left_begin = clip(std::floor(std::max(0.0, t_start - inflation * len)));
  r.left_end = r.inner_begin;
  r.right_begin = r.inner_end;
  r.right_end = clip(std::ceil(t_end + inflation * len));
  return r;
}

std::vector<Proposal> soft_nms(std::vector<Proposal> proposals, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("soft_nms: sigma must be positive");
  std::map<int, std::vector<Proposal>> by_class;
  for (const Proposal& p : proposals)
    if (p.confidence >= kMinConfidence) by_class[p.cls].push_back(p);

  std::vector<Proposal> kept;
  for (auto& [cls, pool] : by_class) {
    while (!pool.empty()) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < pool.size(); ++i) {
        const Proposal& a = pool[i];
        const Proposal& b = pool[best];
        if (a.confidence > b.confidence || (a.confidence == b.confidence && a.t_start < b.t_start)) best = i;
      }
      const Proposal top = pool[best];
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
      kept.push_back(top);
      std::vector<Proposal> rest;
      rest.reserve(pool.size());
      for (Proposal p : pool) {
        const double iou = tiou(top.t_start, top.t_end, p.t_start, p.t_end);
        p.confidence *= std::exp(-(iou * iou) / sigma);
        if (p.confidence >= kMinConfidence) rest.push_back(p);
      }
      pool = std::move(rest);
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Proposal& a, const Proposal& b) { return a.confidence > b.confidence; });
  return kept;
}

std::vector<Proposal> localize_video(const ForwardOutput& out, const LocalizeConfig& config, Index k_divisor) {
  config.validate();
  const Vector scores = video_class_scores(out.tcam_supp, k_divisor);
  const std::vector<int> classes = select_classes(scores, config.class_threshold);
  std::vector<Proposal> proposals = generate_proposals(out.a_fused, classes, config);
  for (Proposal& p : proposals)
    p.confidence = oic_score(out.tcam_supp.col(p.cls), p, config.oic_inflation) + scores[p.cls];
  return soft_nms(std::move(proposals), config.nms_sigma);
}

}  // namespace co2net
