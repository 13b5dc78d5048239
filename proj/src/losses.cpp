#include "co2net/losses.hpp"

#include "co2net/errors.hpp"

#include <algorithm>

namespace co2net {

DeltaMode parse_delta_mode(const std::string& s) {
  if (s == "mse") return DeltaMode::mse;
  if (s == "mae") return DeltaMode::mae;
  if (s == "kl") return DeltaMode::kl;
  if (s == "js") return DeltaMode::js;
  throw ConfigError("unknown delta mode '" + s + "' (expected mse|mae|kl|js)");
}

std::string to_string(DeltaMode m) {
  switch (m) {
    case DeltaMode::mse: return "mse";
    case DeltaMode::mae: return "mae";
    case DeltaMode::kl: return "kl";
    case DeltaMode::js: return "js";
  }
  return "?";
}

LossTerm parse_loss_term(const std::string& s) {
  if (s == "mil") return LossTerm::mil;
  if (s == "oppo") return LossTerm::oppo;
  if (s == "ml") return LossTerm::ml;
  if (s == "cas") return LossTerm::cas;
  if (s == "norm") return LossTerm::norm;
  throw ConfigError("unknown loss term '" + s + "' (expected mil|oppo|ml|cas|norm)");
}

std::string to_string(LossTerm t) {
  switch (t) {
    case LossTerm::mil: return "mil";
    case LossTerm::oppo: return "oppo";
    case LossTerm::ml: return "ml";
    case LossTerm::cas: return "cas";
    case LossTerm::norm: return "norm";
  }
  return "?";
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("loss: alpha must lie in [0,1]");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("loss: lambdas must be non-negative");
  if (topk_divisor < 1) throw ConfigError("loss: topk_divisor must be at least 1");
  if (cas_margin < 0.0) throw ConfigError("loss: cas_margin must be non-negative");
  if (enabled.empty()) throw ConfigError("loss: at least one term must be enabled");
}

nlohmann::json LossBreakdown::to_json(std::int64_t step) const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j = nlohmann::json::object();
  j["step"] = step;
  j["mil_org"] = opt(mil_org);
  j["mil_supp"] = opt(mil_supp);
  j["cas"] = opt(cas);
  j["ml"] = opt(ml);
  j["oppo"] = opt(oppo);
  j["norm"] = opt(norm);
  j["total"] = total;
  return j;
}

Index topk_count(Index T, Index divisor) { return std::max<Index>(1, T / divisor); }

Var topk_mil_loss(const Var& tcam, const std::vector<int>& labels, int background_label, Index k_divisor) {
  const Index T = tcam.rows();
  if (T == 0) throw EmptySequenceError("topk_mil_loss: empty T-CAM");
  if (static_cast<Index>(labels.size()) + 1 != tcam.cols())
    throw DimensionError("topk_mil_loss: T-CAM has " + std::to_string(tcam.cols()) + " columns for " +
                             std::to_string(labels.size()) + " classes",
                         1);
  if (k_divisor < 1) throw ConfigError("topk_mil_loss: divisor must be at least 1");
  Matrix y(1, tcam.cols());
  for (std::size_t c = 0; c < labels.size(); ++c) y(0, static_cast<Index>(c)) = labels[c];
  y(0, tcam.cols() - 1) = background_label;
  const double total = y.sum();
  if (total <= 0.0) throw LabelError("topk_mil_loss: extended label vector is all zero");
  y /= total;
  const Var video_scores = topk_mean_cols(tcam, topk_count(T, k_divisor));
  const Var log_p = log_softmax_rows(video_scores);
  return scale(sum(mul(tcam.tape().constant(std::move(y)), log_p)), -1.0);
}

namespace {

struct Aggregates {
  Var high;
  Var low;
};

Aggregates aggregate(const ForwardGraph& g, int cls) {
  const Var scores = transpose(column(g.tcam_supp, cls));  // 1 x T
  const Var w_high = softmax_rows(scores);
  const Var w_low = softmax_rows(scale(scores, -1.0));
  return {matmul(w_high, g.fused_features), matmul(w_low, g.fused_features)};
}

}  // namespace

Var coactivity_loss(Tape& tape, std::span<const CasPair> pairs, double margin, bool* degenerate) {
  if (degenerate) *degenerate = false;
  if (pairs.empty()) return tape.constant(Matrix::Zero(1, 1));
  Var acc;
  for (const CasPair& p : pairs) {
    if (p.first == nullptr || p.second == nullptr) throw ContractError("coactivity_loss: null pair member");
    const Aggregates m = aggregate(*p.first, p.shared_class);
    const Aggregates n = aggregate(*p.second, p.shared_class);
    bool d1 = false, d2 = false, d3 = false;
    const Var hh = cosine_distance(m.high, n.high, &d1);
    const Var hl = cosine_distance(m.high, n.low, &d2);
    const Var lh = cosine_distance(m.low, n.high, &d3);
    if (degenerate && (d1 || d2 || d3)) *degenerate = true;
    const Var hinge_a = relu(add_scalar(sub(hh, hl), margin));
    const Var hinge_b = relu(add_scalar(sub(hh, lh), margin));
    const Var pair_loss = scale(add(hinge_a, hinge_b), 0.5);
    acc = acc.valid() ? add(acc, pair_loss) : pair_loss;
  }
  return scale(acc, 1.0 / static_cast<double>(pairs.size()));
}

namespace {

void require_unit_interval(const Var& a, const char* what) {
  const Matrix& v = a.value();
  if ((v.array() < 0.0).any() || (v.array() > 1.0).any())
    throw DomainError(std::string(what) + ": attention values outside [0,1]");
}

// Bernoulli KL(q || p) per snippet with both operands already clamped.
Var bernoulli_kl(const Var& q, const Var& p) {
  const Var one_minus_q = add_scalar(scale(q, -1.0), 1.0);
  const Var one_minus_p = add_scalar(scale(p, -1.0), 1.0);
  const Var pos = mul(q, sub(log(q), log(p)));
  const Var neg = mul(one_minus_q, sub(log(one_minus_q), log(one_minus_p)));
  return add(pos, neg);
}

}  // namespace

Var attention_divergence(const Var& pred, const Var& target, DeltaMode mode) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw DimensionError("attention tracks differ in length", 0);
  switch (mode) {
    case DeltaMode::mse: return mean(square(sub(pred, target)));
    case DeltaMode::mae: return mean(abs(sub(pred, target)));
    case DeltaMode::kl: {
      const Var p = clamp(pred, kBernoulliEps, 1.0 - kBernoulliEps);
      const Var q = clamp(target, kBernoulliEps, 1.0 - kBernoulliEps);
      return mean(bernoulli_kl(q, p));
    }
    case DeltaMode::js: {
      const Var p = clamp(pred, kBernoulliEps, 1.0 - kBernoulliEps);
      const Var q = clamp(target, kBernoulliEps, 1.0 - kBernoulliEps);
      const Var m = scale(add(p, q), 0.5);
      return mean(scale(add(bernoulli_kl(p, m), bernoulli_kl(q, m)), 0.5));
    }
  }
  throw ConfigError("unknown delta mode");
}

Var mutual_learning_loss(const Var& a_rgb, const Var& a_flow, double alpha, DeltaMode mode) {
  require_unit_interval(a_rgb, "mutual_learning_loss");
  require_unit_interval(a_flow, "mutual_learning_loss");
  const Var rgb_term = attention_divergence(a_rgb, stop_gradient(a_flow), mode);
  const Var flow_term = attention_divergence(a_flow, stop_gradient(a_rgb), mode);
  return add(scale(rgb_term, alpha), scale(flow_term, 1.0 - alpha));
}

Var background_probability(const Var& tcam) { return column(softmax_rows(tcam), tcam.cols() - 1); }

Var opposite_loss(const Var& a_rgb, const Var& a_flow, const Var& a_fused, const Var& tcam) {
  const Var s = background_probability(tcam);
  auto term = [&](const Var& a) { return mean(abs(add_scalar(add(a, s), -1.0))); };
  return scale(add(add(term(a_rgb), term(a_flow)), term(a_fused)), 1.0 / 3.0);
}

Var norm_loss(const Var& a_rgb, const Var& a_flow, const Var& a_fused) {
  return scale(add(add(mean(abs(a_rgb)), mean(abs(a_flow))), mean(abs(a_fused))), 1.0 / 3.0);
}

TotalLoss total_loss(Tape& tape, std::span<const ForwardGraph> graphs, std::span<const VideoRecord* const> records,
                     std::span<const CasPair> pairs, const LossConfig& config) {
  config.validate();
  if (graphs.size() != records.size()) throw ContractError("total_loss: one record per forward graph required");
  if (graphs.empty()) throw ContractError("total_loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(graphs.size());

  Var mil_org, mil_supp, ml, oppo, norm;
  auto accumulate = [](Var& acc, const Var& v) { acc = acc.valid() ? add(acc, v) : v; };
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const ForwardGraph& g = graphs[i];
    const VideoRecord& r = *records[i];
    if (config.on(LossTerm::mil)) {
      accumulate(mil_org, topk_mil_loss(g.tcam, r.labels, 1, config.topk_divisor));
      accumulate(mil_supp, topk_mil_loss(g.tcam_supp, r.labels, 0, config.topk_divisor));
    }
    if (config.on(LossTerm::ml)) accumulate(ml, mutual_learning_loss(g.a_rgb, g.a_flow, config.alpha, config.delta));
    if (config.on(LossTerm::oppo)) accumulate(oppo, opposite_loss(g.a_rgb, g.a_flow, g.a_fused, g.tcam));
    if (config.on(LossTerm::norm)) accumulate(norm, norm_loss(g.a_rgb, g.a_flow, g.a_fused));
  }

  TotalLoss out;
  Var total;
  auto add_term = [&](Var v, double weight, std::optional<double>& slot) {
    if (!v.valid()) return;
    v = scale(v, inv_n);
    slot = v.scalar();
    accumulate(total, weight == 1.0 ? v : scale(v, weight));
  };
  add_term(mil_org, 1.0, out.breakdown.mil_org);
  add_term(mil_supp, 1.0, out.breakdown.mil_supp);
  if (config.on(LossTerm::cas)) {
    const Var cas = coactivity_loss(tape, pairs, config.cas_margin, &out.cas_degenerate);
    out.breakdown.cas = cas.scalar();
    accumulate(total, cas);
  }
  add_term(ml, 1.0, out.breakdown.ml);
  add_term(oppo, config.lambda1, out.breakdown.oppo);
  add_term(norm, config.lambda2, out.breakdown.norm);
  out.total = total;
  out.breakdown.total = total.scalar();
  return out;
}

}  // namespace co2net
