#pragma once

// Independent reference computations used to freeze expected values and to
// cross-check the library. Nothing here calls into the code path it checks.

#include "co2net/data.hpp"
#include "co2net/evaluation.hpp"
#include "co2net/localization.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <tuple>
#include <vector>

namespace co2net::oracle {

/// Direct convolution sum with explicit zero padding.
inline Matrix conv(const Matrix& x, const std::vector<Matrix>& w /* K of Din x Dout */, const Vector& b) {
  const Index K = static_cast<Index>(w.size());
  const Index T = x.rows();
  const Index pad = (K - 1) / 2;
  Matrix out(T, b.size());
  for (Index t = 0; t < T; ++t)
    for (Index o = 0; o < b.size(); ++o) {
      double acc = b[o];
      for (Index k = 0; k < K; ++k) {
        const Index src = t + k - pad;
        if (src < 0 || src >= T) continue;
        for (Index d = 0; d < x.cols(); ++d) acc += w[static_cast<std::size_t>(k)](d, o) * x(src, d);
      }
      out(t, o) = acc;
    }
  return out;
}

/// Largest mean over all k-subsets of a column, by exhaustive enumeration.
inline double best_subset_mean(const Vector& col, Index k) {
  const Index T = col.size();
  double best = -std::numeric_limits<double>::infinity();
  std::vector<bool> pick(static_cast<std::size_t>(T), false);
  std::fill(pick.begin(), pick.begin() + k, true);
  std::sort(pick.begin(), pick.end());
  do {
    double s = 0.0;
    for (Index t = 0; t < T; ++t)
      if (pick[static_cast<std::size_t>(t)]) s += col[t];
    best = std::max(best, s / static_cast<double>(k));
  } while (std::next_permutation(pick.begin(), pick.end()));
  return best;
}

inline double topk_mil(const Matrix& tcam, const std::vector<int>& labels, int background, Index divisor) {
  const Index T = tcam.rows();
  const Index k = std::max<Index>(1, T / divisor);
  const Index C1 = tcam.cols();
  std::vector<double> v(static_cast<std::size_t>(C1));
  for (Index c = 0; c < C1; ++c) v[static_cast<std::size_t>(c)] = best_subset_mean(tcam.col(c), k);
  double z = 0.0;
  for (double x : v) z += std::exp(x);
  std::vector<double> y(labels.begin(), labels.end());
  y.push_back(background);
  const double total = std::accumulate(y.begin(), y.end(), 0.0);
  double loss = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) loss -= (y[c] / total) * std::log(std::exp(v[c]) / z);
  return loss;
}

/// Length of the intersection and union measured on the elementary intervals
/// between sorted endpoints.
inline double tiou(double a0, double a1, double b0, double b1) {
  std::vector<double> pts{a0, a1, b0, b1};
  std::sort(pts.begin(), pts.end());
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double mid = 0.5 * (pts[i] + pts[i + 1]);
    const double len = pts[i + 1] - pts[i];
    const bool in_a = mid > a0 && mid < a1;
    const bool in_b = mid > b0 && mid < b1;
    if (in_a && in_b) inter += len;
    if (in_a || in_b) uni += len;
  }
  return uni > 0.0 ? inter / uni : 0.0;
}

/// OIC by classifying every snippet index against the region bounds.
inline double oic(const Vector& col, double s, double e, double inflation) {
  const double len = e - s;
  const double left = std::floor(std::max(0.0, s - inflation * len));
  const double right = std::ceil(e + inflation * len);
  double in_sum = 0.0, out_sum = 0.0;
  int n_in = 0, n_out = 0;
  for (Index t = 0; t < col.size(); ++t) {
    const double x = static_cast<double>(t);
    if (x >= s && x < e) {
      in_sum += col[t];
      ++n_in;
    } else if ((x >= left && x < s) || (x >= e && x < right)) {
      out_sum += col[t];
      ++n_out;
    }
  }
  return in_sum / n_in - (n_out ? out_sum / n_out : 0.0);
}

/// Soft-NMS processed globally: always the highest surviving proposal of any
/// class, decaying only its own class. Output sorted by (confidence desc, class, start, end).
inline std::vector<Proposal> soft_nms(std::vector<Proposal> props, double sigma) {
  std::vector<bool> alive(props.size());
  for (std::size_t i = 0; i < props.size(); ++i) alive[i] = props[i].confidence >= 1e-4;
  std::vector<Proposal> out;
  while (true) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < props.size(); ++i) {
      if (!alive[i]) continue;
      if (!best) {
        best = i;
        continue;
      }
      const Proposal& a = props[i];
      const Proposal& b = props[*best];
      if (a.cls == b.cls ? (a.confidence > b.confidence || (a.confidence == b.confidence && a.t_start < b.t_start))
                         : a.confidence > b.confidence)
        best = i;
    }
    if (!best) break;
    alive[*best] = false;
    const Proposal top = props[*best];
    out.push_back(top);
    for (std::size_t i = 0; i < props.size(); ++i) {
      if (!alive[i] || props[i].cls != top.cls) continue;
      const double iou = tiou(top.t_start, top.t_end, props[i].t_start, props[i].t_end);
      props[i].confidence *= std::exp(-iou * iou / sigma);
      if (props[i].confidence < 1e-4) alive[i] = false;
    }
  }
  std::sort(out.begin(), out.end(), [](const Proposal& a, const Proposal& b) {
    return std::tie(b.confidence, a.cls, a.t_start, a.t_end) < std::tie(a.confidence, b.cls, b.t_start, b.t_end);
  });
  return out;
}

/// AP by enumerating every assignment of detections to ground truth (or to
/// nothing) and keeping the one that satisfies the greedy rule at every rank.
/// Detections must already be in ranking order; single video.
inline std::optional<double> average_precision(const std::vector<Detection>& ranked, const std::vector<GroundTruth>& gts,
                                               double thr) {
  if (gts.empty()) return ranked.empty() ? std::nullopt : std::optional<double>(0.0);
  if (ranked.empty()) return 0.0;
  const std::size_t n = ranked.size();
  const int none = -1;
  std::vector<int> assign(n, none);
  std::optional<std::vector<int>> found;
  int valid_count = 0;

  std::function<void(std::size_t, std::vector<bool>&)> rec = [&](std::size_t i, std::vector<bool>& used) {
    if (i == n) {
      ++valid_count;
      found = assign;
      return;
    }
    const Detection& d = ranked[i];
    double best = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (!used[g]) {
        const double iou = tiou(d.t_start, d.t_end, gts[g].start, gts[g].end);
        if (iou >= thr) best = std::max(best, iou);
      }
    for (int g = none; g < static_cast<int>(gts.size()); ++g) {
      bool ok;
      if (g == none) {
        ok = best < 0.0;
      } else {
        if (used[static_cast<std::size_t>(g)]) continue;
        const double iou = tiou(d.t_start, d.t_end, gts[static_cast<std::size_t>(g)].start, gts[static_cast<std::size_t>(g)].end);
        ok = iou >= thr && iou == best;
        for (int h = 0; ok && h < g; ++h)
          if (!used[static_cast<std::size_t>(h)] &&
              tiou(d.t_start, d.t_end, gts[static_cast<std::size_t>(h)].start, gts[static_cast<std::size_t>(h)].end) == best)
            ok = false;
      }
      if (!ok) continue;
      assign[i] = g;
      if (g != none) used[static_cast<std::size_t>(g)] = true;
      rec(i + 1, used);
      if (g != none) used[static_cast<std::size_t>(g)] = false;
      assign[i] = none;
    }
  };
  std::vector<bool> used(gts.size(), false);
  rec(0, used);
  if (valid_count != 1 || !found) return std::nullopt;

  // Precision and recall recomputed from prefix counts at every rank.
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    int tp = 0;
    for (std::size_t j = 0; j <= k; ++j) tp += (*found)[j] != none;
    const double recall = static_cast<double>(tp) / static_cast<double>(gts.size());
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

/// Every [s, e) that is a maximal run of a >= theta with e - s >= min_len.
inline std::vector<std::pair<Index, Index>> runs(const Vector& a, double theta, Index min_len) {
  std::vector<std::pair<Index, Index>> out;
  const Index T = a.size();
  for (Index s = 0; s < T; ++s)
    for (Index e = s + min_len; e <= T; ++e) {
      bool all = true;
      for (Index t = s; t < e; ++t) all = all && a[t] >= theta;
      const bool left_max = s == 0 || a[s - 1] < theta;
      const bool right_max = e == T || a[e] < theta;
      if (all && left_max && right_max) out.emplace_back(s, e);
    }
  return out;
}

}  // namespace co2net::oracle
