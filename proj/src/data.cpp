#include "co2net/data.hpp"

#include "co2net/errors.hpp"
#include "co2net/hash.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace co2net {

namespace fs = std::filesystem;
using nlohmann::json;

void VideoRecord::validate(bool training) const {
  if (rgb.rows() != flow.rows()) throw ContractError(id + ": rgb and flow lengths differ");
  if (rgb.cols() != flow.cols()) throw ContractError(id + ": rgb and flow widths differ");
  if (rgb.rows() == 0) throw EmptySequenceError(id + ": empty feature sequence");
  bool any = false;
  for (int y : labels) {
    if (y != 0 && y != 1) throw LabelError(id + ": labels must be 0/1");
    any = any || y == 1;
  }
  if (training && !any) throw LabelError(id + ": training video without any positive label");
  for (const Segment& s : gt_segments) {
    if (!(s.start >= 0.0 && s.start < s.end && s.end <= static_cast<double>(length())))
      throw ContractError(id + ": segment outside [0, T]");
    if (s.cls < 0 || s.cls >= num_classes()) throw ContractError(id + ": segment class out of range");
  }
}

fs::path DatasetManifest::resolve(const std::string& p) const {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

// ---- manifest ---------------------------------------------------------------

json manifest_to_json(const DatasetManifest& m) {
  json videos = json::array();
  for (const ManifestVideo& v : m.videos) {
    json segs = json::array();
    for (const Segment& s : v.gt_segments) segs.push_back({{"start", s.start}, {"end", s.end}, {"class", s.cls}});
    videos.push_back({{"id", v.id},
                      {"rgb_path", v.rgb_path},
                      {"flow_path", v.flow_path},
                      {"labels", v.labels},
                      {"gt_segments", segs}});
  }
  return {{"class_names", m.class_names},
          {"feature_dim", m.feature_dim},
          {"split", m.split == Split::train ? "train" : "test"},
          {"videos", videos}};
}

namespace {

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw LoadError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw LoadError(where + ": malformed field '" + key + "'");
  }
}

}  // namespace

DatasetManifest manifest_from_json(const json& j, const fs::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  m.class_names = field<std::vector<std::string>>(j, "class_names", "manifest");
  if (m.class_names.empty()) throw LoadError("manifest: class_names is empty");
  m.feature_dim = field<Index>(j, "feature_dim", "manifest");
  if (m.feature_dim <= 0) throw LoadError("manifest: feature_dim must be positive");
  const auto split = field<std::string>(j, "split", "manifest");
  if (split == "train")
    m.split = Split::train;
  else if (split == "test")
    m.split = Split::test;
  else
    throw LoadError("manifest: split must be 'train' or 'test', got '" + split + "'");
  if (!j.contains("videos") || !j.at("videos").is_array()) throw LoadError("manifest: missing field 'videos'");

  const int C = m.num_classes();
  std::set<std::string> seen;
  std::size_t n = 0;
  for (const json& jv : j.at("videos")) {
    const std::string where = "manifest video #" + std::to_string(n++);
    ManifestVideo v;
    v.id = field<std::string>(jv, "id", where);
    const std::string rec = "video '" + v.id + "'";
    if (!seen.insert(v.id).second) throw LoadError("duplicate video id '" + v.id + "'");
    v.rgb_path = field<std::string>(jv, "rgb_path", rec);
    v.flow_path = field<std::string>(jv, "flow_path", rec);
    v.labels = field<std::vector<int>>(jv, "labels", rec);
    for (int c : v.labels)
      if (c < 0 || c >= C)
        throw LoadError(rec + ": label index " + std::to_string(c) + " outside [0, " + std::to_string(C) + ")");
    if (jv.contains("gt_segments")) {
      if (!jv.at("gt_segments").is_array()) throw LoadError(rec + ": malformed field 'gt_segments'");
      for (const json& js : jv.at("gt_segments")) {
        Segment s{field<double>(js, "start", rec), field<double>(js, "end", rec), field<int>(js, "class", rec)};
        if (!(s.start >= 0.0 && s.start < s.end)) throw LoadError(rec + ": segment with start >= end or start < 0");
        if (s.cls < 0 || s.cls >= C) throw LoadError(rec + ": segment class out of range");
        v.gt_segments.push_back(s);
      }
    }
    m.videos.push_back(std::move(v));
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  DatasetManifest m = manifest_from_json(j, path.parent_path());
  for (const ManifestVideo& v : m.videos) {
    const std::string rec = "video '" + v.id + "'";
    Index t_rgb = 0;
    for (const std::string* p : {&v.rgb_path, &v.flow_path}) {
      const fs::path full = m.resolve(*p);
      if (!fs::exists(full)) throw LoadError(rec + ": feature file not found: " + full.string());
      std::pair<Index, Index> td;
      try {
        td = read_feature_header(full);
      } catch (const DecodeError& e) {
        throw LoadError(rec + ": " + e.what());
      }
      if (td.second != m.feature_dim)
        throw LoadError(rec + ": feature width " + std::to_string(td.second) + " != feature_dim " +
                        std::to_string(m.feature_dim));
      if (p == &v.rgb_path)
        t_rgb = td.first;
      else if (td.first != t_rgb)
        throw LoadError(rec + ": rgb and flow lengths differ");
    }
    for (const Segment& s : v.gt_segments)
      if (s.end > static_cast<double>(t_rgb)) throw LoadError(rec + ": segment ends after T");
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write manifest " + path.string());
  out << manifest_to_json(m).dump(2) << '\n';
}

// ---- feature files ----------------------------------------------------------

namespace {

constexpr char kFeatureMagic[4] = {'F', 'S', 'E', 'Q'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

struct FeatureHeader {
  std::uint32_t t = 0;
  std::uint32_t d = 0;
};

FeatureHeader parse_header(const std::string& bytes) {
  if (bytes.size() < 4) throw DecodeError("truncated magic", bytes.size());
  if (std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) throw DecodeError("bad magic, expected FSEQ", 0);
  if (bytes.size() < kHeaderBytes) throw DecodeError("truncated header", bytes.size());
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFeatureFileVersion) throw DecodeError("unsupported version " + std::to_string(version), 4);
  FeatureHeader h{get_u32(bytes, 8), get_u32(bytes, 12)};
  if (h.t == 0) throw DecodeError("T must be positive", 8);
  if (h.d == 0) throw DecodeError("D must be positive", 12);
  return h;
}

std::string read_bytes(const fs::path& path, std::size_t limit = std::string::npos) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string bytes;
  if (limit == std::string::npos) {
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  } else {
    bytes.resize(limit);
    in.read(bytes.data(), static_cast<std::streamsize>(limit));
    bytes.resize(static_cast<std::size_t>(in.gcount()));
  }
  return bytes;
}

}  // namespace

std::string encode_features(const FeatureSequence& f) {
  std::string out;
  out.reserve(kHeaderBytes + 4 * static_cast<std::size_t>(f.size()));
  out.append(kFeatureMagic, 4);
  put_u32(out, kFeatureFileVersion);
  put_u32(out, static_cast<std::uint32_t>(f.rows()));
  put_u32(out, static_cast<std::uint32_t>(f.cols()));
  for (Index r = 0; r < f.rows(); ++r)
    for (Index c = 0; c < f.cols(); ++c) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(f(r, c))));
  return out;
}

FeatureSequence decode_features(const std::string& bytes) {
  const FeatureHeader h = parse_header(bytes);
  const std::size_t count = static_cast<std::size_t>(h.t) * h.d;
  const std::size_t need = kHeaderBytes + 4 * count;
  if (bytes.size() < need) throw DecodeError("truncated payload, expected " + std::to_string(need) + " bytes", bytes.size());
  if (bytes.size() > need) throw DecodeError("trailing bytes after payload", need);
  FeatureSequence f(h.t, h.d);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = kHeaderBytes + 4 * i;
    const float v = std::bit_cast<float>(get_u32(bytes, at));
    if (!std::isfinite(v)) throw DecodeError("non-finite feature value", at);
    f.data()[i] = static_cast<double>(v);
  }
  return f;
}

FeatureSequence read_feature_file(const fs::path& path) {
  try {
    return decode_features(read_bytes(path));
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what(), e.offset());
  }
}

std::pair<Index, Index> read_feature_header(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  const FeatureHeader h = parse_header(bytes);
  const std::size_t need = kHeaderBytes + 4 * static_cast<std::size_t>(h.t) * h.d;
  if (bytes.size() != need) throw DecodeError("payload length does not match header", bytes.size());
  return {h.t, h.d};
}

void write_feature_file(const fs::path& path, const FeatureSequence& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  const std::string bytes = encode_features(f);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("write failed: " + path.string());
}

VideoRecord load_video(const DatasetManifest& m, std::size_t index) {
  const ManifestVideo& v = m.videos.at(index);
  VideoRecord r;
  r.id = v.id;
  r.rgb = read_feature_file(m.resolve(v.rgb_path));
  r.flow = read_feature_file(m.resolve(v.flow_path));
  r.labels.assign(static_cast<std::size_t>(m.num_classes()), 0);
  for (int c : v.labels) r.labels[static_cast<std::size_t>(c)] = 1;
  r.gt_segments = v.gt_segments;
  if (r.rgb.cols() != m.feature_dim) throw LoadError("video '" + v.id + "': feature width mismatch");
  r.validate(m.split == Split::train);
  return r;
}

std::vector<VideoRecord> load_videos(const DatasetManifest& m) {
  std::vector<VideoRecord> out;
  out.reserve(m.videos.size());
  for (std::size_t i = 0; i < m.videos.size(); ++i) out.push_back(load_video(m, i));
  return out;
}

// ---- synthetic generator ----------------------------------------------------

void SyntheticSpec::validate() const {
  if (num_videos < 1 || num_test_videos < 0) throw ConfigError("synthetic: video counts must be positive");
  if (num_classes < 1) throw ConfigError("synthetic: need at least one class");
  if (feature_dim < 1) throw ConfigError("synthetic: feature_dim must be positive");
  if (signal_channels < 0 || redundant_channels < 0) throw ConfigError("synthetic: channel counts must be non-negative");
  if (signal_channels + redundant_channels > feature_dim)
    throw ConfigError("synthetic: signal_channels + redundant_channels = " +
                      std::to_string(signal_channels + redundant_channels) + " exceeds D = " +
                      std::to_string(feature_dim));
  if (t_min < 8 || t_max < t_min) throw ConfigError("synthetic: need 8 <= t_min <= t_max");
  if (actions_min < 1 || actions_max < actions_min) throw ConfigError("synthetic: bad actions_per_video range");
  if (bursts_min < 0 || bursts_max < bursts_min) throw ConfigError("synthetic: bad bursts range");
  if (decoys_min < 0 || decoys_max < decoys_min) throw ConfigError("synthetic: bad decoys range");
  if (context_fraction < 0.0) throw ConfigError("synthetic: context_fraction must be non-negative");
  const Index min_len = std::max<Index>(3, t_min / 12);
  if ((actions_max + decoys_max) * (min_len + 2) > t_min)
    throw ConfigError("synthetic: " + std::to_string(actions_max + decoys_max) +
                      " events per video cannot fit in t_min = " + std::to_string(t_min));
  if (noise_sigma < 0.0) throw ConfigError("synthetic: noise_sigma must be non-negative");
}

json synthetic_spec_to_json(const SyntheticSpec& s) {
  return {{"num_videos", s.num_videos},
          {"num_test_videos", s.num_test_videos},
          {"num_classes", s.num_classes},
          {"feature_dim", s.feature_dim},
          {"t_range", {s.t_min, s.t_max}},
          {"actions_per_video_range", {s.actions_min, s.actions_max}},
          {"signal_channels", s.signal_channels},
          {"redundant_channels", s.redundant_channels},
          {"signal_amplitude", s.signal_amplitude},
          {"distractor_amplitude", s.distractor_amplitude},
          {"shared_activity", s.shared_activity},
          {"bursts_per_video_range", {s.bursts_min, s.bursts_max}},
          {"decoys_per_video_range", {s.decoys_min, s.decoys_max}},
          {"decoy_amplitude", s.decoy_amplitude},
          {"context_fraction", s.context_fraction},
          {"context_amplitude", s.context_amplitude},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  const json def = synthetic_spec_to_json(s);
  for (const auto& [key, value] : j.items())
    if (!def.contains(key)) throw ConfigError("synthetic spec: unknown field '" + key + "'");
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const json::exception&) {
      throw ConfigError(std::string("synthetic spec: malformed field '") + key + "'");
    }
  };
  auto get_range = [&](const char* key, auto& lo, auto& hi) {
    if (!j.contains(key)) return;
    const json& r = j.at(key);
    if (!r.is_array() || r.size() != 2) throw ConfigError(std::string("synthetic spec: '") + key + "' must be [lo, hi]");
    r[0].get_to(lo);
    r[1].get_to(hi);
  };
  get("num_videos", s.num_videos);
  get("num_test_videos", s.num_test_videos);
  get("num_classes", s.num_classes);
  get("feature_dim", s.feature_dim);
  get_range("t_range", s.t_min, s.t_max);
  get_range("actions_per_video_range", s.actions_min, s.actions_max);
  get("signal_channels", s.signal_channels);
  get("redundant_channels", s.redundant_channels);
  get("signal_amplitude", s.signal_amplitude);
  get("distractor_amplitude", s.distractor_amplitude);
  get("shared_activity", s.shared_activity);
  get_range("bursts_per_video_range", s.bursts_min, s.bursts_max);
  get_range("decoys_per_video_range", s.decoys_min, s.decoys_max);
  get("decoy_amplitude", s.decoy_amplitude);
  get("context_fraction", s.context_fraction);
  get("context_amplitude", s.context_amplitude);
  get("noise_sigma", s.noise_sigma);
  get("seed", s.seed);
  return s;
}

namespace {

Index uniform_int(Rng& rng, Index lo, Index hi) {
  return lo + static_cast<Index>(uniform01(rng) * static_cast<double>(hi - lo + 1));
}

double gaussian(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Places up to `count` disjoint intervals of random length, separated by at least two snippets.
std::vector<std::pair<Index, Index>> place_intervals(Rng& rng, Index T, int count, Index len_lo, Index len_hi) {
  std::vector<std::pair<Index, Index>> out;
  for (int tries = 0; static_cast<int>(out.size()) < count && tries < 200; ++tries) {
    const Index len = uniform_int(rng, len_lo, len_hi);
    const Index start = uniform_int(rng, 0, T - len);
    const Index end = start + len;
    bool clash = false;
    for (const auto& [s, e] : out) clash = clash || (start < e + 2 && s < end + 2);
    if (!clash) out.emplace_back(start, end);
  }
  std::sort(out.begin(), out.end());
  return out;
}

VideoRecord synthesize_video(const SyntheticSpec& spec, const Matrix& rgb_offsets, const Matrix& flow_offsets,
                             const Vector& distractor_pattern, Rng& rng, const std::string& id) {
  const Index T = uniform_int(rng, spec.t_min, spec.t_max);
  const Index D = spec.feature_dim;
  const int cls = static_cast<int>(uniform_int(rng, 0, spec.num_classes - 1));
  const int n_actions = static_cast<int>(uniform_int(rng, spec.actions_min, spec.actions_max));
  const Index len_lo = std::max<Index>(3, T / 12);
  const Index len_hi = std::max<Index>(len_lo, T / 5);

  VideoRecord r;
  r.id = id;
  r.rgb = Matrix::Zero(T, D);
  r.flow = Matrix::Zero(T, D);
  r.labels.assign(static_cast<std::size_t>(spec.num_classes), 0);
  r.labels[static_cast<std::size_t>(cls)] = 1;

  const Index S = spec.signal_channels;
  const Index R = spec.redundant_channels;
  const int n_decoys = static_cast<int>(uniform_int(rng, spec.decoys_min, spec.decoys_max));
  const auto intervals = place_intervals(rng, T, n_actions + n_decoys, len_lo, len_hi);
  // Placement may fall short; decoys give way first.
  const int placed = static_cast<int>(intervals.size());
  const int decoys = std::max(0, placed - n_actions);
  std::vector<bool> is_decoy(intervals.size(), false);
  for (int k = 0; k < decoys; ++k) {
    std::size_t pick = static_cast<std::size_t>(uniform_int(rng, 0, placed - 1 - k));
    for (std::size_t i = 0;; ++i) {
      if (is_decoy[i]) continue;
      if (pick-- == 0) {
        is_decoy[i] = true;
        break;
      }
    }
  }

  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const auto [s, e] = intervals[i];
    const Index L = e - s;
    const double ramp = std::max<double>(1.0, static_cast<double>(L) / 4.0);
    const bool decoy = is_decoy[i];
    const bool decoy_rgb = decoy && uniform01(rng) < 0.5;
    const double amp = decoy ? spec.decoy_amplitude : 1.0;
    if (!decoy) {
      r.gt_segments.push_back({static_cast<double>(s), static_cast<double>(e), cls});
      const Index c = static_cast<Index>(std::lround(spec.context_fraction * static_cast<double>(L)));
      for (Index t = std::max<Index>(0, s - c); t < s; ++t)
        r.rgb.block(t, 0, 1, S) += spec.context_amplitude * rgb_offsets.block(cls, 0, 1, S);
      for (Index t = e; t < std::min(T, e + c); ++t)
        r.rgb.block(t, 0, 1, S) += spec.context_amplitude * rgb_offsets.block(cls, 0, 1, S);
    }
    for (Index t = s; t < e; ++t) {
      // Appearance: constant offset. Motion: trapezoid rising at onset, falling at offset.
      const double w = std::min({1.0, static_cast<double>(t - s + 1) / ramp, static_cast<double>(e - t) / ramp});
      const bool rgb_on = !decoy || decoy_rgb;
      const bool flow_on = !decoy || !decoy_rgb;
      if (rgb_on) r.rgb.block(t, 0, 1, S) += amp * rgb_offsets.block(cls, 0, 1, S);
      if (flow_on) r.flow.block(t, 0, 1, S) += amp * w * flow_offsets.block(cls, 0, 1, S);
      if (R > 0 && spec.shared_activity != 0.0) {
        if (rgb_on) r.rgb.block(t, S, 1, R) += spec.shared_activity * distractor_pattern.transpose();
        if (flow_on) r.flow.block(t, S, 1, R) += spec.shared_activity * distractor_pattern.transpose();
      }
    }
  }

  if (R > 0) {
    const int n_bursts = static_cast<int>(uniform_int(rng, spec.bursts_min, spec.bursts_max));
    bool to_rgb = uniform01(rng) < 0.5;
    for (int b = 0; b < n_bursts; ++b) {
      const Index len = uniform_int(rng, len_lo, len_hi);
      const Index start = uniform_int(rng, 0, T - len);
      Matrix& target = to_rgb ? r.rgb : r.flow;
      for (Index t = start; t < start + len; ++t)
        target.block(t, S, 1, R) += spec.distractor_amplitude * distractor_pattern.transpose();
      to_rgb = !to_rgb;
    }
  }

  if (spec.noise_sigma > 0.0) {
    for (Index i = 0; i < r.rgb.size(); ++i) r.rgb.data()[i] += spec.noise_sigma * gaussian(rng);
    for (Index i = 0; i < r.flow.size(); ++i) r.flow.data()[i] += spec.noise_sigma * gaussian(rng);
  }
  // Storage is f32; keep the in-memory copy identical to what a reader sees.
  r.rgb = decode_features(encode_features(r.rgb));
  r.flow = decode_features(encode_features(r.flow));
  return r;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int C = spec.num_classes;
  const Index D = spec.feature_dim;
  const Index S = spec.signal_channels;

  SyntheticDataset data;
  data.spec = spec;
  for (int c = 0; c < C; ++c) data.class_names.push_back("class_" + std::to_string(c));

  // Each class owns a disjoint slice of the signal channels; the two modalities
  // use different slices so their patterns differ.
  data.rgb_offsets = Matrix::Zero(C, D);
  data.flow_offsets = Matrix::Zero(C, D);
  for (int c = 0; c < C; ++c)
    for (Index d = 0; d < S; ++d) {
      if (d % C == c) data.rgb_offsets(c, d) = spec.signal_amplitude;
      if ((d + 1) % C == c) data.flow_offsets(c, d) = spec.signal_amplitude;
    }
  Vector distractor(spec.redundant_channels);
  for (Index i = 0; i < distractor.size(); ++i) distractor[i] = uniform01(rng) < 0.5 ? -1.0 : 1.0;

  for (int i = 0; i < spec.num_videos; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "train_%04d", i);
    data.train.push_back(synthesize_video(spec, data.rgb_offsets, data.flow_offsets, distractor, rng, id));
  }
  for (int i = 0; i < spec.num_test_videos; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "test_%04d", i);
    data.test.push_back(synthesize_video(spec, data.rgb_offsets, data.flow_offsets, distractor, rng, id));
  }
  return data;
}

namespace {

DatasetManifest write_split(const SyntheticDataset& data, const std::vector<VideoRecord>& videos, Split split,
                            const fs::path& out_dir) {
  DatasetManifest m;
  m.class_names = data.class_names;
  m.feature_dim = data.spec.feature_dim;
  m.split = split;
  m.base_dir = out_dir;
  for (const VideoRecord& r : videos) {
    ManifestVideo v;
    v.id = r.id;
    v.rgb_path = "features/" + r.id + ".rgb.fseq";
    v.flow_path = "features/" + r.id + ".flow.fseq";
    for (int c = 0; c < r.num_classes(); ++c)
      if (r.labels[static_cast<std::size_t>(c)]) v.labels.push_back(c);
    v.gt_segments = r.gt_segments;
    write_feature_file(out_dir / v.rgb_path, r.rgb);
    write_feature_file(out_dir / v.flow_path, r.flow);
    m.videos.push_back(std::move(v));
  }
  return m;
}

}  // namespace

WrittenDataset write_synthetic(const SyntheticDataset& data, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir / "features", ec);
  if (ec) throw LoadError("cannot create " + (out_dir / "features").string() + ": " + ec.message());
  WrittenDataset w;
  w.train = write_split(data, data.train, Split::train, out_dir);
  w.test = write_split(data, data.test, Split::test, out_dir);
  w.train_manifest = out_dir / "train.json";
  w.test_manifest = out_dir / "test.json";
  write_manifest(w.train, w.train_manifest);
  write_manifest(w.test, w.test_manifest);
  Fnv1a h;
  h.update(dataset_hash(w.train));
  h.update(dataset_hash(w.test));
  w.hash = h.hex();
  return w;
}

std::string dataset_hash(const DatasetManifest& m) {
  Fnv1a h;
  h.update(manifest_to_json(m).dump());
  for (const ManifestVideo& v : m.videos) {
    h.update(read_bytes(m.resolve(v.rgb_path)));
    h.update(read_bytes(m.resolve(v.flow_path)));
  }
  return h.hex();
}

// ---- snippet sampling -------------------------------------------------------

VideoRecord sample_training_snippets(const VideoRecord& record, Index t_fixed, Rng& rng, std::vector<Index>* indices) {
  if (t_fixed < 1) throw ConfigError("snippets_per_video must be at least 1");
  const Index T = record.length();
  if (T == 0) throw EmptySequenceError(record.id + ": cannot sample an empty video");
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(t_fixed));
  if (T >= t_fixed) {
    std::vector<Index> pool(static_cast<std::size_t>(T));
    for (Index i = 0; i < T; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (Index i = 0; i < t_fixed; ++i) {
      const Index j = i + static_cast<Index>(uniform01(rng) * static_cast<double>(T - i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      idx.push_back(pool[static_cast<std::size_t>(i)]);
    }
  } else {
    for (Index i = 0; i < t_fixed; ++i) idx.push_back(static_cast<Index>(uniform01(rng) * static_cast<double>(T)));
  }
  std::sort(idx.begin(), idx.end());

  VideoRecord out;
  out.id = record.id;
  out.labels = record.labels;
  out.rgb.resize(t_fixed, record.feature_dim());
  out.flow.resize(t_fixed, record.feature_dim());
  for (Index i = 0; i < t_fixed; ++i) {
    out.rgb.row(i) = record.rgb.row(idx[static_cast<std::size_t>(i)]);
    out.flow.row(i) = record.flow.row(idx[static_cast<std::size_t>(i)]);
  }
  if (indices) *indices = std::move(idx);
  return out;
}

}  // namespace co2net
