#pragma once

#include "co2net/localization.hpp"
#include "co2net/losses.hpp"
#include "co2net/model.hpp"
#include "co2net/optim.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace co2net {

struct TrainConfig {
  double lr = 5e-5;
  double weight_decay = 1e-3;
  int batch_videos = 10;
  int pairs_per_batch = 3;
  Index snippets_per_video = 500;
  std::int64_t max_steps = 0;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::uint64_t seed = 0;

  AdamConfig adam() const { return {lr, weight_decay}; }
  void validate() const;
};

struct PathConfig {
  std::string train_manifest;
  std::string test_manifest;
  std::string checkpoint = "checkpoint.co2w";
  std::string report_dir = ".";
};

/// Everything a run needs. Feature width and class count come from the manifest.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  LocalizeConfig localize;
  TrainConfig train;
  PathConfig paths;
  std::optional<double> fps;

  void validate() const;
  /// Fingerprint of the sections that shape training (model, loss, train).
  std::string training_hash() const;
  /// Fingerprint of every section except paths.
  std::string config_hash() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Unknown keys are rejected; `train.seed` is mandatory.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Sets a dotted leaf ("model.fusion") in a config document. The value is
/// parsed as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& dotted_key, const std::string& value);

}  // namespace co2net
