#pragma once

#include "co2net/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace co2net {

/// T x D snippet features of one modality, upcast to f64.
using FeatureSequence = Matrix;

/// Video frames per feature snippet; seconds = snippets * kFramesPerSnippet / fps.
inline constexpr double kFramesPerSnippet = 16.0;

/// Ground-truth action instance in snippet units, [start, end).
struct Segment {
  double start = 0.0;
  double end = 0.0;
  int cls = 0;

  bool operator==(const Segment&) const = default;
};

struct VideoRecord {
  std::string id;
  FeatureSequence rgb;
  FeatureSequence flow;
  std::vector<int> labels;  // length C, entries 0/1
  std::vector<Segment> gt_segments;

  Index length() const { return rgb.rows(); }
  Index feature_dim() const { return rgb.cols(); }
  int num_classes() const { return static_cast<int>(labels.size()); }
  bool has_label(int c) const { return c >= 0 && c < num_classes() && labels[c] == 1; }

  /// Throws ContractError when modalities, labels or segments are inconsistent.
  void validate(bool training) const;
};

enum class Split { train, test };

struct ManifestVideo {
  std::string id;
  std::string rgb_path;
  std::string flow_path;
  std::vector<int> labels;  // class indices
  std::vector<Segment> gt_segments;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  Index feature_dim = 0;
  std::vector<ManifestVideo> videos;
  Split split = Split::train;
  /// Directory relative feature paths resolve against; not serialized.
  std::filesystem::path base_dir;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::filesystem::path resolve(const std::string& p) const;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
/// Parses and validates field types, label ranges and id uniqueness.
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// Parses, validates and checks every referenced feature file header.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// Feature file: "FSEQ", u32 version=1, u32 T, u32 D, T*D little-endian f32, row-major.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

std::string encode_features(const FeatureSequence& f);
FeatureSequence decode_features(const std::string& bytes);
FeatureSequence read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const FeatureSequence& f);
/// Reads only the header; returns {T, D}.
std::pair<Index, Index> read_feature_header(const std::filesystem::path& path);

VideoRecord load_video(const DatasetManifest& m, std::size_t index);
std::vector<VideoRecord> load_videos(const DatasetManifest& m);

struct SyntheticSpec {
  int num_videos = 40;
  int num_test_videos = 40;
  int num_classes = 4;
  Index feature_dim = 32;
  Index t_min = 60;
  Index t_max = 120;
  int actions_min = 1;
  int actions_max = 3;
  Index signal_channels = 8;
  Index redundant_channels = 8;
  double signal_amplitude = 0.4;
  double distractor_amplitude = 1.5;
  /// Class-agnostic activity both modalities show on redundant channels inside actions.
  double shared_activity = 1.0;
  int bursts_min = 1;
  int bursts_max = 3;
  /// Single-modality copies of the video's class pattern outside any action;
  /// only true actions are active in both modalities at once.
  int decoys_min = 1;
  int decoys_max = 2;
  double decoy_amplitude = 1.0;
  /// Appearance-only class context flanking each action: rgb carries the class
  /// pattern at `context_amplitude` for context_fraction * L snippets on each side.
  double context_fraction = 0.5;
  double context_amplitude = 2.0;
  double noise_sigma = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct SyntheticDataset {
  SyntheticSpec spec;
  std::vector<std::string> class_names;
  std::vector<VideoRecord> train;
  std::vector<VideoRecord> test;
  /// Per-class static offsets added to rgb signal channels inside segments (C x D).
  Matrix rgb_offsets;
  /// Per-class peak amplitudes of the flow ramps (C x D).
  Matrix flow_offsets;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

struct WrittenDataset {
  DatasetManifest train;
  DatasetManifest test;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::string hash;
};

/// Writes features/, train.json and test.json under `out_dir`.
WrittenDataset write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir);

/// Fingerprint over manifest JSON and the bytes of every referenced feature file.
std::string dataset_hash(const DatasetManifest& m);

/// Draws `t_fixed` snippet indices (without replacement when T >= t_fixed, with
/// replacement otherwise), sorts them and gathers both modalities with the same
/// indices. Ground-truth segments are dropped.
VideoRecord sample_training_snippets(const VideoRecord& record, Index t_fixed, Rng& rng,
                                     std::vector<Index>* indices = nullptr);

}  // namespace co2net
