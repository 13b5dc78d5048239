#pragma once

#include "co2net/autodiff.hpp"
#include "co2net/model.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace co2net {

enum class DeltaMode { mse, mae, kl, js };
enum class LossTerm { mil, oppo, ml, cas, norm };

DeltaMode parse_delta_mode(const std::string& s);
std::string to_string(DeltaMode m);
LossTerm parse_loss_term(const std::string& s);
std::string to_string(LossTerm t);

inline constexpr double kBernoulliEps = 1e-7;

struct LossConfig {
  double alpha = 0.5;
  double lambda1 = 0.8;
  double lambda2 = 0.8;
  Index topk_divisor = 8;
  double cas_margin = 0.5;
  DeltaMode delta = DeltaMode::mse;
  std::set<LossTerm> enabled{LossTerm::mil, LossTerm::oppo, LossTerm::ml, LossTerm::cas, LossTerm::norm};

  bool on(LossTerm t) const { return enabled.count(t) != 0; }
  void validate() const;
};

/// Per-term values; a disengaged optional marks a disabled term.
struct LossBreakdown {
  std::optional<double> mil_org;
  std::optional<double> mil_supp;
  std::optional<double> cas;
  std::optional<double> ml;
  std::optional<double> oppo;
  std::optional<double> norm;
  double total = 0.0;

  /// {step, mil_org, mil_supp, cas, ml, oppo, norm, total}; disabled terms are null.
  nlohmann::json to_json(std::int64_t step) const;
};

/// k = max(1, floor(T / divisor)).
Index topk_count(Index T, Index divisor);

/// Cross-entropy between softmax of the per-class top-k means and the label
/// vector extended with `background_label`, normalized to a distribution.
Var topk_mil_loss(const Var& tcam, const std::vector<int>& labels, int background_label, Index k_divisor);

/// Two forward passes whose videos share foreground class `shared_class`.
struct CasPair {
  const ForwardGraph* first = nullptr;
  const ForwardGraph* second = nullptr;
  int shared_class = 0;
};

/// Mean over pairs of the two-sided hinge on cosine distances between
/// high-attention and low-attention feature aggregates. Returns 0 for no pairs.
Var coactivity_loss(Tape& tape, std::span<const CasPair> pairs, double margin, bool* degenerate = nullptr);

/// Per-snippet divergence between a prediction track and a fixed target track.
Var attention_divergence(const Var& pred, const Var& target, DeltaMode mode);

/// alpha * delta(a_rgb, stop(a_flow)) + (1 - alpha) * delta(a_flow, stop(a_rgb)).
Var mutual_learning_loss(const Var& a_rgb, const Var& a_flow, double alpha, DeltaMode mode);

/// Background probability (softmax over classes, last column) as a T x 1 track.
Var background_probability(const Var& tcam);

Var opposite_loss(const Var& a_rgb, const Var& a_flow, const Var& a_fused, const Var& tcam);
Var norm_loss(const Var& a_rgb, const Var& a_flow, const Var& a_fused);

struct TotalLoss {
  Var total;
  LossBreakdown breakdown;
  bool cas_degenerate = false;
};

/// Weighted sum of the enabled objectives over a batch. Per-video terms are
/// averaged across videos; the co-activity term is averaged across pairs.
TotalLoss total_loss(Tape& tape, std::span<const ForwardGraph> graphs, std::span<const VideoRecord* const> records,
                     std::span<const CasPair> pairs, const LossConfig& config);

}  // namespace co2net
