#pragma once

#include "co2net/config.hpp"
#include "co2net/data.hpp"
#include "co2net/evaluation.hpp"
#include "co2net/gradcheck.hpp"
#include "co2net/localization.hpp"
#include "co2net/losses.hpp"
#include "co2net/model.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace co2net {

/// Model config with the dataset-derived extents filled in.
ModelConfig resolve_model_config(const RunConfig& config, Index feature_dim, int num_classes);

/// Model initialized from the config seed.
std::unique_ptr<Co2Net> make_model(const RunConfig& config, Index feature_dim, int num_classes);

struct PairIndex {
  std::size_t first = 0;
  std::size_t second = 0;
  int shared_class = 0;
};

struct Batch {
  std::vector<std::size_t> videos;
  std::vector<PairIndex> pairs;  // positions into `videos`
};

/// Lowest class both label vectors contain, or -1.
int shared_class(const std::vector<int>& a, const std::vector<int>& b);

/// Draws `batch_size` distinct videos and greedily pairs members that share a
/// label, redrawing until `pairs_needed` disjoint pairs exist.
Batch sample_batch(const std::vector<VideoRecord>& videos, int batch_size, int pairs_needed, Rng& rng);

/// Forward graphs plus the loss for one batch on a caller-owned tape.
struct BatchLoss {
  std::vector<VideoRecord> records;
  std::vector<ForwardGraph> graphs;
  TotalLoss loss;
};

BatchLoss batch_loss(Tape& tape, Co2Net& net, const std::vector<const VideoRecord*>& videos,
                     const std::vector<PairIndex>& pairs, const LossConfig& config, bool train, Rng* rng);

class Trainer {
 public:
  Trainer(const RunConfig& config, const std::vector<VideoRecord>& videos, Co2Net& net);

  /// One optimization step; throws NumericError naming the step on a non-finite loss.
  LossBreakdown step();
  std::int64_t steps_done() const { return step_; }

  /// Runs up to `train.max_steps`, handing every breakdown to `sink`.
  void run(const std::function<void(std::int64_t, const LossBreakdown&)>& sink);

 private:
  const RunConfig& config_;
  const std::vector<VideoRecord>& videos_;
  Co2Net& net_;
  Rng rng_;
  std::int64_t step_ = 0;
};

struct Evaluation {
  EvalReport report;
  std::vector<Detection> detections;
};

/// Eval-mode forward on every snippet of every video (sorted by id), localization
/// and mAP over the ground truth.
Evaluation evaluate(Co2Net& net, const std::vector<VideoRecord>& videos, const RunConfig& config);

/// Random-instance gradient check of the total loss over every model parameter.
struct ModelGradCheckSpec {
  Index feature_dim = 16;
  int num_classes = 3;
  Index length = 20;
  int batch = 4;
  int pairs = 1;
  Index hidden = 8;
  double h = 1e-3;
  double tol = 1e-4;
  std::uint64_t seed = 0;
};

/// Builds a model from `config` (hidden overridden by the spec) and random
/// videos, then compares tape and central-difference gradients of the total
/// loss in eval mode.
GradCheckReport gradcheck_model(const RunConfig& config, const ModelGradCheckSpec& spec);

std::vector<Detection> to_detections(const std::string& video_id, const std::vector<Proposal>& proposals);

}  // namespace co2net
