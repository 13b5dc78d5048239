#include "co2net/config.hpp"

#include "co2net/errors.hpp"
#include "co2net/hash.hpp"

#include <fstream>

namespace co2net {

using nlohmann::json;

void TrainConfig::validate() const {
  if (lr < 0.0) throw ConfigError("train: lr must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be non-negative");
  if (batch_videos < 1) throw ConfigError("train: batch_videos must be positive");
  if (pairs_per_batch < 0 || 2 * pairs_per_batch > batch_videos)
    throw ConfigError("train: pairs_per_batch must fit inside the batch");
  if (snippets_per_video < 1) throw ConfigError("train: snippets_per_video must be positive");
  if (max_steps < 0) throw ConfigError("train: max_steps must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be non-negative");
}

void RunConfig::validate() const {
  loss.validate();
  localize.validate();
  train.validate();
  if (!(model.dropout_p >= 0.0 && model.dropout_p < 1.0)) throw ConfigError("model: dropout_p must lie in [0,1)");
  if (model.hidden < 1) throw ConfigError("model: hidden must be positive");
  if (fps && !(*fps > 0.0)) throw ConfigError("fps must be positive");
}

json to_json(const RunConfig& c) {
  json enabled = json::array();
  for (LossTerm t : c.loss.enabled) enabled.push_back(to_string(t));
  json j = {
      {"model",
       {{"hidden", c.model.hidden},
        {"attn_kernels", c.model.attn_kernels},
        {"cls_kernels", c.model.cls_kernels},
        {"dropout_p", c.model.dropout_p},
        {"fusion", to_string(c.model.fusion)},
        {"role", to_string(c.model.role)}}},
      {"loss",
       {{"alpha", c.loss.alpha},
        {"lambda1", c.loss.lambda1},
        {"lambda2", c.loss.lambda2},
        {"topk_divisor", c.loss.topk_divisor},
        {"cas_margin", c.loss.cas_margin},
        {"delta", to_string(c.loss.delta)},
        {"enabled", enabled}}},
      {"localize",
       {{"class_threshold", c.localize.class_threshold},
        {"attn_thresholds", c.localize.attn_thresholds},
        {"oic_inflation", c.localize.oic_inflation},
        {"nms_sigma", c.localize.nms_sigma},
        {"min_proposal_len", c.localize.min_proposal_len}}},
      {"train",
       {{"lr", c.train.lr},
        {"weight_decay", c.train.weight_decay},
        {"batch_videos", c.train.batch_videos},
        {"pairs_per_batch", c.train.pairs_per_batch},
        {"snippets_per_video", c.train.snippets_per_video},
        {"max_steps", c.train.max_steps},
        {"checkpoint_every", c.train.checkpoint_every},
        {"seed", c.train.seed}}},
      {"paths",
       {{"train_manifest", c.paths.train_manifest},
        {"test_manifest", c.paths.test_manifest},
        {"checkpoint", c.paths.checkpoint},
        {"report_dir", c.paths.report_dir}}},
  };
  j["fps"] = c.fps ? json(*c.fps) : json(nullptr);
  return j;
}

namespace {

void reject_unknown(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config field '" + where + (where.empty() ? "" : ".") + key + "'");
    if (known.at(key).is_object() && key != "fps") reject_unknown(value, known.at(key), where.empty() ? key : where + "." + key);
  }
}

template <typename T>
void read(const json& j, const char* section, const char* key, T& dst) {
  if (!j.contains(section) || !j.at(section).contains(key)) return;
  try {
    j.at(section).at(key).get_to(dst);
  } catch (const json::exception&) {
    throw ConfigError(std::string("malformed config field '") + section + "." + key + "'");
  }
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  reject_unknown(j, to_json(c), "");
  if (!j.contains("train") || !j.at("train").contains("seed")) throw ConfigError("config: train.seed is mandatory");

  read(j, "model", "hidden", c.model.hidden);
  read(j, "model", "attn_kernels", c.model.attn_kernels);
  read(j, "model", "cls_kernels", c.model.cls_kernels);
  read(j, "model", "dropout_p", c.model.dropout_p);
  if (j.contains("model") && j["model"].contains("fusion")) c.model.fusion = parse_fusion_mode(j["model"]["fusion"].get<std::string>());
  if (j.contains("model") && j["model"].contains("role")) c.model.role = parse_role_mode(j["model"]["role"].get<std::string>());

  read(j, "loss", "alpha", c.loss.alpha);
  read(j, "loss", "lambda1", c.loss.lambda1);
  read(j, "loss", "lambda2", c.loss.lambda2);
  read(j, "loss", "topk_divisor", c.loss.topk_divisor);
  read(j, "loss", "cas_margin", c.loss.cas_margin);
  if (j.contains("loss") && j["loss"].contains("delta")) c.loss.delta = parse_delta_mode(j["loss"]["delta"].get<std::string>());
  if (j.contains("loss") && j["loss"].contains("enabled")) {
    c.loss.enabled.clear();
    for (const json& t : j["loss"]["enabled"]) c.loss.enabled.insert(parse_loss_term(t.get<std::string>()));
  }

  read(j, "localize", "class_threshold", c.localize.class_threshold);
  read(j, "localize", "attn_thresholds", c.localize.attn_thresholds);
  read(j, "localize", "oic_inflation", c.localize.oic_inflation);
  read(j, "localize", "nms_sigma", c.localize.nms_sigma);
  read(j, "localize", "min_proposal_len", c.localize.min_proposal_len);

  read(j, "train", "lr", c.train.lr);
  read(j, "train", "weight_decay", c.train.weight_decay);
  read(j, "train", "batch_videos", c.train.batch_videos);
  read(j, "train", "pairs_per_batch", c.train.pairs_per_batch);
  read(j, "train", "snippets_per_video", c.train.snippets_per_video);
  read(j, "train", "max_steps", c.train.max_steps);
  read(j, "train", "checkpoint_every", c.train.checkpoint_every);
  read(j, "train", "seed", c.train.seed);

  read(j, "paths", "train_manifest", c.paths.train_manifest);
  read(j, "paths", "test_manifest", c.paths.test_manifest);
  read(j, "paths", "checkpoint", c.paths.checkpoint);
  read(j, "paths", "report_dir", c.paths.report_dir);
  if (j.contains("fps") && !j.at("fps").is_null()) {
    if (!j.at("fps").is_number()) throw ConfigError("malformed config field 'fps'");
    c.fps = j.at("fps").get<double>();
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::string RunConfig::training_hash() const {
  const json j = to_json(*this);
  return fnv1a_hex(json{{"model", j["model"]}, {"loss", j["loss"]}, {"train", j["train"]}}.dump());
}

std::string RunConfig::config_hash() const {
  json j = to_json(*this);
  j.erase("paths");
  return fnv1a_hex(j.dump());
}

void apply_override(json& doc, const std::string& dotted_key, const std::string& value) {
  json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', pos);
    const std::string part = dotted_key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError("malformed override key '" + dotted_key + "'");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    if (!node->is_object() && !node->is_null()) throw ConfigError("override '" + dotted_key + "' descends into a leaf");
    pos = dot + 1;
  }
}

}  // namespace co2net
