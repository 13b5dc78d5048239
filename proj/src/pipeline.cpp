#include "co2net/pipeline.hpp"

#include "co2net/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace co2net {

ModelConfig resolve_model_config(const RunConfig& config, Index feature_dim, int num_classes) {
  ModelConfig m = config.model;
  m.feature_dim = feature_dim;
  m.num_classes = num_classes;
  m.validate();
  return m;
}

std::unique_ptr<Co2Net> make_model(const RunConfig& config, Index feature_dim, int num_classes) {
  Rng init(config.train.seed);
  return std::make_unique<Co2Net>(resolve_model_config(config, feature_dim, num_classes), init);
}

int shared_class(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t c = 0; c < n; ++c)
    if (a[c] == 1 && b[c] == 1) return static_cast<int>(c);
  return -1;
}

Batch sample_batch(const std::vector<VideoRecord>& videos, int batch_size, int pairs_needed, Rng& rng) {
  const std::size_t n = videos.size();
  if (n == 0) throw ContractError("sample_batch: no videos");
  const std::size_t size = std::min<std::size_t>(static_cast<std::size_t>(batch_size), n);
  std::vector<std::size_t> pool(n);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Batch b;
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n - i));
      std::swap(pool[i], pool[j]);
      b.videos.push_back(pool[i]);
    }
    std::vector<bool> used(size, false);
    for (std::size_t i = 0; i < size && static_cast<int>(b.pairs.size()) < pairs_needed; ++i) {
      if (used[i]) continue;
      for (std::size_t j = i + 1; j < size; ++j) {
        if (used[j]) continue;
        const int c = shared_class(videos[b.videos[i]].labels, videos[b.videos[j]].labels);
        if (c < 0) continue;
        used[i] = used[j] = true;
        b.pairs.push_back({i, j, c});
        break;
      }
    }
    if (static_cast<int>(b.pairs.size()) >= pairs_needed) return b;
  }
  throw ConfigError("cannot draw a batch with " + std::to_string(pairs_needed) + " same-class pairs");
}

BatchLoss batch_loss(Tape& tape, Co2Net& net, const std::vector<const VideoRecord*>& videos,
                     const std::vector<PairIndex>& pairs, const LossConfig& config, bool train, Rng* rng) {
  BatchLoss out;
  ForwardContext ctx{tape, train, net.config().dropout_p, rng};
  out.graphs.reserve(videos.size());
  for (const VideoRecord* v : videos) out.graphs.push_back(model_forward(ctx, *v, net));
  std::vector<CasPair> cas;
  for (const PairIndex& p : pairs) cas.push_back({&out.graphs.at(p.first), &out.graphs.at(p.second), p.shared_class});
  out.loss = total_loss(tape, out.graphs, videos, cas, config);
  return out;
}

Trainer::Trainer(const RunConfig& config, const std::vector<VideoRecord>& videos, Co2Net& net)
    : config_(config), videos_(videos), net_(net), rng_(config.train.seed ^ 0x9e3779b97f4a7c15ULL) {
  config_.validate();
  if (videos_.empty()) throw ConfigError("training set is empty");
}

LossBreakdown Trainer::step() {
  const TrainConfig& tc = config_.train;
  const Batch batch = sample_batch(videos_, tc.batch_videos, tc.pairs_per_batch, rng_);
  std::vector<VideoRecord> sampled;
  sampled.reserve(batch.videos.size());
  for (std::size_t i : batch.videos) sampled.push_back(sample_training_snippets(videos_[i], tc.snippets_per_video, rng_));
  std::vector<const VideoRecord*> ptrs;
  for (const VideoRecord& r : sampled) ptrs.push_back(&r);

  Tape tape;
  BatchLoss bl;
  try {
    bl = batch_loss(tape, net_, ptrs, batch.pairs, config_.loss, true, &rng_);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step_ + 1) + ": " + e.what());
  }
  if (!std::isfinite(bl.loss.breakdown.total))
    throw NumericError("step " + std::to_string(step_ + 1) + ": non-finite loss " +
                       bl.loss.breakdown.to_json(step_ + 1).dump());
  tape.backward(bl.loss.total);
  const auto params = net_.parameters();
  adam_step(params, tc.adam());
  ++step_;
  return bl.loss.breakdown;
}

void Trainer::run(const std::function<void(std::int64_t, const LossBreakdown&)>& sink) {
  while (step_ < config_.train.max_steps) {
    const LossBreakdown b = step();
    if (sink) sink(step_, b);
  }
}

GradCheckReport gradcheck_model(const RunConfig& config, const ModelGradCheckSpec& spec) {
  if (spec.pairs * 2 > spec.batch) throw ConfigError("gradcheck: pairs must fit inside the batch");
  RunConfig cfg = config;
  cfg.model.hidden = spec.hidden;
  cfg.train.seed = spec.seed;
  auto net = make_model(cfg, spec.feature_dim, spec.num_classes);

  Rng rng(spec.seed + 1);
  std::vector<VideoRecord> videos(static_cast<std::size_t>(spec.batch));
  for (int i = 0; i < spec.batch; ++i) {
    VideoRecord& v = videos[static_cast<std::size_t>(i)];
    v.id = "gc_" + std::to_string(i);
    v.rgb.resize(spec.length, spec.feature_dim);
    v.flow.resize(spec.length, spec.feature_dim);
    for (Index k = 0; k < v.rgb.size(); ++k) v.rgb.data()[k] = 2.0 * uniform01(rng) - 1.0;
    for (Index k = 0; k < v.flow.size(); ++k) v.flow.data()[k] = 2.0 * uniform01(rng) - 1.0;
    v.labels.assign(static_cast<std::size_t>(spec.num_classes), 0);
    // Paired videos share class (pair index mod C); the rest draw one class.
    const int cls = i < 2 * spec.pairs ? (i / 2) % spec.num_classes
                                       : static_cast<int>(uniform01(rng) * spec.num_classes);
    v.labels[static_cast<std::size_t>(cls)] = 1;
  }
  std::vector<const VideoRecord*> ptrs;
  for (const VideoRecord& v : videos) ptrs.push_back(&v);
  std::vector<PairIndex> pairs;
  for (int p = 0; p < spec.pairs; ++p)
    pairs.push_back({static_cast<std::size_t>(2 * p), static_cast<std::size_t>(2 * p + 1), p % spec.num_classes});

  const auto params = net->parameters();
  return finite_diff_check(
      [&](Tape& tape) { return batch_loss(tape, *net, ptrs, pairs, cfg.loss, false, nullptr).loss.total; }, params,
      spec.h, spec.tol);
}

std::vector<Detection> to_detections(const std::string& video_id, const std::vector<Proposal>& proposals) {
  std::vector<Detection> out;
  out.reserve(proposals.size());
  for (const Proposal& p : proposals) out.push_back({video_id, p.t_start, p.t_end, p.cls, p.confidence});
  return out;
}

Evaluation evaluate(Co2Net& net, const std::vector<VideoRecord>& videos, const RunConfig& config) {
  std::vector<const VideoRecord*> order;
  for (const VideoRecord& v : videos) order.push_back(&v);
  std::sort(order.begin(), order.end(), [](const VideoRecord* a, const VideoRecord* b) { return a->id < b->id; });

  Evaluation ev;
  std::vector<GroundTruth> gts;
  for (const VideoRecord* v : order) {
    const ForwardOutput out = infer(*v, net);
    const auto proposals = localize_video(out, config.localize, config.loss.topk_divisor);
    const auto dets = to_detections(v->id, proposals);
    ev.detections.insert(ev.detections.end(), dets.begin(), dets.end());
    for (const Segment& s : v->gt_segments) gts.push_back({v->id, s.start, s.end, s.cls});
  }
  ev.report = map_report(ev.detections, gts, net.config().num_classes);
  return ev;
}

}  // namespace co2net
