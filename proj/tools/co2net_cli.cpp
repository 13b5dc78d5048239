#include "co2net/config.hpp"
#include "co2net/data.hpp"
#include "co2net/errors.hpp"
#include "co2net/gradcheck.hpp"
#include "co2net/hash.hpp"
#include "co2net/pipeline.hpp"

#include "CLI11.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace co2net;

namespace {

enum ExitCode {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kConfig = 3,
  kLoad = 4,
  kDecode = 5,
  kCompatibility = 6,
  kNumeric = 7,
  kDeterminism = 8,
  kGradcheckFailed = 9,
  kOtherError = 10,
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw LoadError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
  if (!out) throw LoadError("write failed for " + path.string());
}

/// Config file plus overrides shared by train, eval, localize and gradcheck.
struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
  std::string fusion;
  std::string delta;
  std::string roles;
  std::vector<std::string> loss_off;

  void attach(CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", path, "run config JSON");
    if (config_required) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override a leaf field, e.g. --set train.max_steps=100");
    cmd->add_option("--fusion", fusion, "fusion mode: ccm|add|concat|se");
    cmd->add_option("--delta", delta, "mutual-learning divergence: mse|mae|kl|js");
    cmd->add_option("--roles", roles, "CCM roles: global_local|local_global|local_local");
    cmd->add_option("--loss-off", loss_off, "disable a loss term: mil|cas|ml|oppo|norm");
  }

  /// Directory relative paths in the config resolve against.
  fs::path base_dir() const { return path.empty() ? fs::path(".") : fs::absolute(path).parent_path(); }

  RunConfig load() const {
    json doc = path.empty() ? json{{"train", {{"seed", 0}}}} : read_json_file(path);
    for (const std::string& kv : sets) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_override(doc, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!fusion.empty()) apply_override(doc, "model.fusion", json(fusion).dump());
    if (!delta.empty()) apply_override(doc, "loss.delta", json(delta).dump());
    if (!roles.empty()) apply_override(doc, "model.role", json(roles).dump());
    if (!loss_off.empty()) {
      json enabled = json::array();
      if (doc.contains("loss") && doc["loss"].contains("enabled")) {
        enabled = doc["loss"]["enabled"];
      } else {
        for (LossTerm t : LossConfig{}.enabled) enabled.push_back(to_string(t));
      }
      for (const std::string& off : loss_off) {
        const std::string name = to_string(parse_loss_term(off));
        json kept = json::array();
        for (const json& t : enabled)
          if (t != name) kept.push_back(t);
        enabled = kept;
      }
      doc["loss"]["enabled"] = enabled;
    }
    try {
      return run_config_from_json(doc);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("malformed config: ") + e.what());
    }
  }

  fs::path resolve(const std::string& p) const {
    if (p.empty()) throw ConfigError("required path missing from config");
    const fs::path q(p);
    return q.is_absolute() ? q : base_dir() / q;
  }
};

fs::path meta_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".meta.json"); }

json class_names_json(const std::vector<std::string>& names) { return json(names); }

// ---- synth -------------------------------------------------------------------

int run_synth(const std::string& spec_path, const std::string& out_dir, const std::optional<std::uint64_t>& seed) {
  SyntheticSpec spec;
  if (!spec_path.empty()) spec = synthetic_spec_from_json(read_json_file(spec_path));
  if (seed) spec.seed = *seed;
  const SyntheticDataset data = generate_synthetic(spec);
  const WrittenDataset written = write_synthetic(data, out_dir);
  write_text(fs::path(out_dir) / "spec.json", synthetic_spec_to_json(spec).dump(2) + "\n");

  std::size_t segments = 0;
  for (const auto* split : {&data.train, &data.test})
    for (const VideoRecord& v : *split) segments += v.gt_segments.size();
  const json summary = {{"train_videos", data.train.size()},
                        {"test_videos", data.test.size()},
                        {"classes", data.class_names.size()},
                        {"segments", segments},
                        {"hash", written.hash}};
  std::cout << summary.dump() << "\n";
  return kOk;
}

// ---- train -------------------------------------------------------------------

int run_train(const ConfigArgs& args) {
  const RunConfig cfg = args.load();
  const DatasetManifest manifest = load_manifest(args.resolve(cfg.paths.train_manifest));
  const std::vector<VideoRecord> videos = load_videos(manifest);
  auto net = make_model(cfg, manifest.feature_dim, manifest.num_classes());

  const fs::path checkpoint = args.resolve(cfg.paths.checkpoint);
  const fs::path report_dir = args.resolve(cfg.paths.report_dir);
  fs::create_directories(report_dir);
  if (checkpoint.has_parent_path()) fs::create_directories(checkpoint.parent_path());
  const fs::path log_path = report_dir / "loss_log.jsonl";
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw LoadError("cannot write " + log_path.string());

  const std::string config_hash = cfg.config_hash();
  Trainer trainer(cfg, videos, *net);
  trainer.run([&](std::int64_t step, const LossBreakdown& b) {
    json line = b.to_json(step);
    line["config_hash"] = config_hash;
    log << line.dump() << "\n";
    if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0 && step < cfg.train.max_steps)
      save_checkpoint(net->store(), fs::path(checkpoint.string() + ".step" + std::to_string(step)));
  });
  log.close();
  if (!log) throw LoadError("write failed for " + log_path.string());

  save_checkpoint(net->store(), checkpoint);
  const json meta = {{"config_hash", config_hash},
                     {"training_hash", cfg.training_hash()},
                     {"feature_dim", manifest.feature_dim},
                     {"num_classes", manifest.num_classes()},
                     {"class_names", class_names_json(manifest.class_names)},
                     {"steps", trainer.steps_done()},
                     {"seed", cfg.train.seed},
                     {"train_dataset_hash", dataset_hash(manifest)}};
  write_text(meta_path(checkpoint), meta.dump(2) + "\n");
  std::cout << checkpoint.string() << "\n";
  return kOk;
}

// ---- eval / localize -----------------------------------------------------------

struct LoadedModel {
  RunConfig cfg;
  DatasetManifest manifest;
  std::unique_ptr<Co2Net> net;
  std::string training_hash;
};

LoadedModel load_model_for(const ConfigArgs& args, const std::string& checkpoint_override, const std::string& split) {
  LoadedModel m;
  m.cfg = args.load();
  const std::string& manifest_path = split == "train" ? m.cfg.paths.train_manifest : m.cfg.paths.test_manifest;
  m.manifest = load_manifest(args.resolve(manifest_path));
  const fs::path checkpoint = checkpoint_override.empty() ? args.resolve(m.cfg.paths.checkpoint) : fs::path(checkpoint_override);

  const json meta = read_json_file(meta_path(checkpoint));
  const Index D = meta.at("feature_dim").get<Index>();
  const int C = meta.at("num_classes").get<int>();
  if (D != m.manifest.feature_dim || C != m.manifest.num_classes())
    throw CompatibilityError("checkpoint expects D=" + std::to_string(D) + ", C=" + std::to_string(C) +
                             " but manifest has D=" + std::to_string(m.manifest.feature_dim) +
                             ", C=" + std::to_string(m.manifest.num_classes()));
  m.training_hash = meta.at("training_hash").get<std::string>();
  if (m.training_hash != m.cfg.training_hash())
    throw CompatibilityError("checkpoint was trained under config " + m.training_hash + ", current config is " +
                             m.cfg.training_hash());
  m.net = make_model(m.cfg, D, C);
  load_checkpoint(checkpoint, m.net->store());
  return m;
}

json proposal_json(const Detection& d, const std::vector<std::string>& names, const std::optional<double>& fps) {
  json j = {{"video_id", d.video_id},
            {"t_start", d.t_start},
            {"t_end", d.t_end},
            {"class_name", names.at(static_cast<std::size_t>(d.cls))},
            {"confidence", d.confidence}};
  if (fps) {
    j["t_start_sec"] = d.t_start * kFramesPerSnippet / *fps;
    j["t_end_sec"] = d.t_end * kFramesPerSnippet / *fps;
  }
  return j;
}

int run_eval(const ConfigArgs& args, const std::string& checkpoint_override) {
  LoadedModel m = load_model_for(args, checkpoint_override, "test");
  const std::vector<VideoRecord> videos = load_videos(m.manifest);
  const Evaluation ev = evaluate(*m.net, videos, m.cfg);

  const fs::path report_dir = args.resolve(m.cfg.paths.report_dir);
  json report = {{"seed", m.cfg.train.seed},
                 {"config_hash", m.cfg.config_hash()},
                 {"training_hash", m.training_hash},
                 {"class_names", class_names_json(m.manifest.class_names)}};
  report.update(ev.report.to_json(m.manifest.class_names));
  write_text(report_dir / "report.json", report.dump(2) + "\n");
  write_text(report_dir / "map.csv", ev.report.to_csv());

  json dump = json::array();
  for (const Detection& d : ev.detections) dump.push_back(proposal_json(d, m.manifest.class_names, m.cfg.fps));
  write_text(report_dir / "proposals.json", dump.dump(2) + "\n");

  std::cout << json{{"avg_map", ev.report.avg_map}, {"report", (report_dir / "report.json").string()}}.dump() << "\n";
  return kOk;
}

int run_localize(const ConfigArgs& args, const std::string& checkpoint_override, const std::string& video_id,
                 const std::string& split, const std::string& out_path) {
  LoadedModel m = load_model_for(args, checkpoint_override, split);
  std::size_t index = m.manifest.videos.size();
  for (std::size_t i = 0; i < m.manifest.videos.size(); ++i)
    if (m.manifest.videos[i].id == video_id) index = i;
  if (index == m.manifest.videos.size()) throw ConfigError("no video '" + video_id + "' in the " + split + " split");

  const VideoRecord video = load_video(m.manifest, index);
  const ForwardOutput out = infer(video, *m.net);
  const Vector scores = video_class_scores(out.tcam_supp, m.cfg.loss.topk_divisor);
  const auto proposals = localize_video(out, m.cfg.localize, m.cfg.loss.topk_divisor);

  auto vec = [](const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); };
  json class_scores = json::object();
  for (int c = 0; c < m.manifest.num_classes(); ++c) class_scores[m.manifest.class_names[static_cast<std::size_t>(c)]] = scores[c];
  json props = json::array();
  for (const Detection& d : to_detections(video.id, proposals))
    props.push_back(proposal_json(d, m.manifest.class_names, m.cfg.fps));
  json gt = json::array();
  for (const Segment& s : video.gt_segments)
    gt.push_back({{"t_start", s.start}, {"t_end", s.end}, {"class_name", m.manifest.class_names.at(static_cast<std::size_t>(s.cls))}});

  const json dump = {{"video_id", video.id},
                     {"config_hash", m.cfg.config_hash()},
                     {"length", video.length()},
                     {"attention_rgb", vec(out.a_rgb)},
                     {"attention_flow", vec(out.a_flow)},
                     {"attention_fused", vec(out.a_fused)},
                     {"class_scores", class_scores},
                     {"proposals", props},
                     {"ground_truth", gt}};
  if (out_path.empty()) {
    std::cout << dump.dump(2) << "\n";
  } else {
    write_text(out_path, dump.dump(2) + "\n");
  }
  return kOk;
}

// ---- gradcheck -------------------------------------------------------------------

int run_gradcheck(const ConfigArgs& args, const ModelGradCheckSpec& spec) {
  const RunConfig cfg = args.load();
  const GradCheckReport r = gradcheck_model(cfg, spec);
  json params = json::array();
  for (const ParameterGradError& p : r.per_parameter)
    params.push_back({{"name", p.name},
                      {"max_rel_error", p.max_rel_error},
                      {"worst_index", p.worst_index},
                      {"analytic", p.analytic},
                      {"numeric", p.numeric},
                      {"branch_crossings", p.branch_crossings}});
  const json out = {{"h", spec.h},
                    {"tol", spec.tol},
                    {"elements_checked", r.elements_checked},
                    {"max_rel_error", r.max_rel_error},
                    {"max_nominal_rel_error", r.max_nominal_rel_error},
                    {"branch_crossings", r.branch_crossings},
                    {"unresolved", r.unresolved},
                    {"min_step", r.min_step},
                    {"passed", r.passed},
                    {"parameters", params}};
  std::cout << out.dump(2) << "\n";
  return r.passed ? kOk : kGradcheckFailed;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const DecodeError*>(&e)) return kDecode;
  if (dynamic_cast<const LoadError*>(&e)) return kLoad;
  if (dynamic_cast<const CompatibilityError*>(&e)) return kCompatibility;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  if (dynamic_cast<const DeterminismError*>(&e)) return kDeterminism;
  return kOtherError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised temporal action localization with cross-modal consensus"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 ok, 1 unexpected, 2 usage, 3 config, 4 load/IO, 5 decode, 6 compatibility,\n"
      "7 numeric, 8 determinism, 9 gradcheck tolerance exceeded, 10 other validation error.");

  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
  std::string spec_path, out_dir;
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("--spec", spec_path, "synthetic spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--seed", synth_seed, "override the spec seed");

  auto* train = app.add_subcommand("train", "train a model; writes checkpoint and loss_log.jsonl");
  ConfigArgs train_args;
  train_args.attach(train, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes report.json, map.csv, proposals.json");
  ConfigArgs eval_args;
  std::string eval_ckpt;
  eval_args.attach(eval, true);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path (default: paths.checkpoint)");

  auto* loc = app.add_subcommand("localize", "dump attention tracks, class scores and proposals for one video");
  ConfigArgs loc_args;
  std::string loc_ckpt, loc_video, loc_split = "test", loc_out;
  loc_args.attach(loc, true);
  loc->add_option("--checkpoint", loc_ckpt, "checkpoint path (default: paths.checkpoint)");
  loc->add_option("--video", loc_video, "video id")->required();
  loc->add_option("--split", loc_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  loc->add_option("--out", loc_out, "output JSON file (default: stdout)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the total loss on a random model");
  ConfigArgs gc_args;
  ModelGradCheckSpec gc_spec;
  gc_args.attach(gc, false);
  gc->add_option("--seed", gc_spec.seed, "instance seed");
  gc->add_option("--feature-dim", gc_spec.feature_dim, "D")->capture_default_str();
  gc->add_option("--classes", gc_spec.num_classes, "C")->capture_default_str();
  gc->add_option("--length", gc_spec.length, "T")->capture_default_str();
  gc->add_option("--batch", gc_spec.batch, "videos in the batch")->capture_default_str();
  gc->add_option("--pairs", gc_spec.pairs, "same-class pairs")->capture_default_str();
  gc->add_option("--hidden", gc_spec.hidden, "hidden width")->capture_default_str();
  gc->add_option("--step", gc_spec.h, "finite-difference step h")->capture_default_str();
  gc->add_option("--tol", gc_spec.tol, "max relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return run_synth(spec_path, out_dir, synth_seed);
    if (*train) return run_train(train_args);
    if (*eval) return run_eval(eval_args, eval_ckpt);
    if (*loc) return run_localize(loc_args, loc_ckpt, loc_video, loc_split, loc_out);
    if (*gc) return run_gradcheck(gc_args, gc_spec);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const json::exception& e) {
    std::cerr << "error: malformed JSON field: " << e.what() << "\n";
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kLoad;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUsage;
}
