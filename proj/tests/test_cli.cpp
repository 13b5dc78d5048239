#include "co2net/config.hpp"
#include "co2net/model.hpp"
#include "co2net/pipeline.hpp"
#include "doctest.h"
#include "test_util.hpp"

#include <sys/wait.h>

#include <cstdlib>

using namespace co2net;
using namespace co2net::testing;
using nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + CO2NET_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

/// Small synthetic dataset plus a run config, all inside one temp directory.
struct Workspace {
  TempDir dir{"cli"};

  Workspace() {
    const json spec = {{"num_videos", 8},     {"num_test_videos", 4}, {"t_range", {30, 40}},
                       {"actions_per_video_range", {1, 2}}, {"decoys_per_video_range", {0, 0}}, {"seed", 4}};
    spit(dir / "spec.json", spec.dump());
    REQUIRE(run_cli(dir, "synth --spec \"" + (dir / "spec.json").string() + "\" --out \"" + (dir / "data").string() + "\"").code == 0);
    write_config("run.json", "run");
  }

  void write_config(const std::string& name, const std::string& run_dir, const json& extra = json::object()) {
    json cfg = {{"model", {{"hidden", 8}}},
                {"train",
                 {{"seed", 2},
                  {"lr", 1e-3},
                  {"batch_videos", 4},
                  {"pairs_per_batch", 1},
                  {"snippets_per_video", 16},
                  {"max_steps", 4},
                  {"checkpoint_every", 2}}},
                {"paths",
                 {{"train_manifest", "data/train.json"},
                  {"test_manifest", "data/test.json"},
                  {"checkpoint", run_dir + "/model.co2w"},
                  {"report_dir", run_dir}}},
                {"fps", 25.0}};
    cfg.merge_patch(extra);
    spit(dir / name, cfg.dump(2));
  }

  std::string config(const std::string& name = "run.json") const { return "--config \"" + (dir / name).string() + "\""; }
};

}  // namespace

TEST_CASE("cli usage") {
  TempDir dir("cli_usage");
  CHECK(run_cli(dir, "").code == 2);
  CHECK(run_cli(dir, "bogus").code == 2);
  const RunResult help = run_cli(dir, "--help");
  CHECK(help.code == 0);
  for (const char* sub : {"synth", "train", "eval", "gradcheck", "localize"}) CHECK(help.out.find(sub) != std::string::npos);
  CHECK(run_cli(dir, "train --help").out.find("--loss-off") != std::string::npos);
  CHECK(run_cli(dir, "train").code == 2);
}

TEST_CASE("cli synth") {
  TempDir dir("cli_synth");
  const RunResult a = run_cli(dir, "synth --out \"" + (dir / "a").string() + "\" --seed 9");
  const RunResult b = run_cli(dir, "synth --out \"" + (dir / "b").string() + "\" --seed 9");
  REQUIRE(a.code == 0);
  const json summary = json::parse(a.out);
  CHECK(summary["train_videos"] == 40);
  CHECK(summary["classes"] == 4);
  CHECK(summary["segments"].get<int>() >= 80);
  CHECK(a.out == b.out);
  CHECK(std::filesystem::exists(dir / "a/train.json"));
  CHECK(std::filesystem::exists(dir / "a/spec.json"));
  CHECK(run_cli(dir, "synth --out \"" + (dir / "c").string() + "\" --seed 10").out != a.out);

  spit(dir / "bad.json", json{{"signal_channels", 30}, {"redundant_channels", 30}}.dump());
  CHECK(run_cli(dir, "synth --spec \"" + (dir / "bad.json").string() + "\" --out \"" + (dir / "d").string() + "\"").code == 3);
  spit(dir / "unknown.json", json{{"bogus", 1}}.dump());
  CHECK(run_cli(dir, "synth --spec \"" + (dir / "unknown.json").string() + "\" --out \"" + (dir / "d").string() + "\"").code == 3);
}

TEST_CASE("cli train, eval and localize") {
  Workspace ws;
  const RunResult train = run_cli(ws.dir, "train " + ws.config());
  REQUIRE_MESSAGE(train.code == 0, train.err);
  CHECK(train.out.find("model.co2w") != std::string::npos);

  SUBCASE("loss log format") {
    const auto lines = lines_of(slurp(ws.dir / "run/loss_log.jsonl"));
    REQUIRE(lines.size() == 4);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const json j = json::parse(lines[i]);
      CHECK(j["step"] == i + 1);
      for (const char* k : {"mil_org", "mil_supp", "cas", "ml", "oppo", "norm", "total"}) CHECK(j[k].is_number());
      CHECK(j["config_hash"].is_string());
    }
    CHECK(std::filesystem::exists(ws.dir / "run/model.co2w.step2"));
    CHECK(!std::filesystem::exists(ws.dir / "run/model.co2w.step4"));
    const json meta = json::parse(slurp(ws.dir / "run/model.co2w.meta.json"));
    CHECK(meta["feature_dim"] == 32);
    CHECK(meta["num_classes"] == 4);
    CHECK(meta["steps"] == 4);
  }
  SUBCASE("training is reproducible") {
    ws.write_config("again.json", "again");
    REQUIRE(run_cli(ws.dir, "train " + ws.config("again.json")).code == 0);
    CHECK(slurp(ws.dir / "run/loss_log.jsonl") == slurp(ws.dir / "again/loss_log.jsonl"));
    CHECK(slurp(ws.dir / "run/model.co2w") == slurp(ws.dir / "again/model.co2w"));
  }
  SUBCASE("loss toggles") {
    REQUIRE(run_cli(ws.dir, "train " + ws.config() + " --loss-off cas --loss-off norm --set paths.report_dir=\"off\"").code == 0);
    const json first = json::parse(lines_of(slurp(ws.dir / "off/loss_log.jsonl")).at(0));
    CHECK(first["cas"].is_null());
    CHECK(first["norm"].is_null());
    CHECK(first["ml"].is_number());
    CHECK(run_cli(ws.dir, "train " + ws.config() + " --loss-off everything").code == 3);
  }
  SUBCASE("eval outputs") {
    const RunResult ev = run_cli(ws.dir, "eval " + ws.config());
    REQUIRE_MESSAGE(ev.code == 0, ev.err);
    const std::string report_text = slurp(ws.dir / "run/report.json");
    const json report = json::parse(report_text);
    for (const char* k : {"seed", "config_hash", "training_hash", "class_names", "thresholds", "per_class_ap", "map_at", "avg_map"})
      CHECK(report.contains(k));
    CHECK(report["thresholds"].size() == 9);
    const auto csv = lines_of(slurp(ws.dir / "run/map.csv"));
    CHECK(csv.at(0) == "iou_threshold,map");
    CHECK(csv.size() == 13);
    const json props = json::parse(slurp(ws.dir / "run/proposals.json"));
    REQUIRE(props.is_array());
    REQUIRE(!props.empty());
    const json& p = props[0];
    for (const char* k : {"video_id", "t_start", "t_end", "class_name", "confidence", "t_start_sec", "t_end_sec"})
      CHECK(p.contains(k));
    CHECK(p["t_end_sec"].get<double>() == doctest::Approx(p["t_end"].get<double>() * 16.0 / 25.0));

    REQUIRE(run_cli(ws.dir, "eval " + ws.config()).code == 0);
    CHECK(slurp(ws.dir / "run/report.json") == report_text);
  }
  SUBCASE("eval refuses a mismatched config") {
    CHECK(run_cli(ws.dir, "eval " + ws.config() + " --fusion concat").code == 6);
    CHECK(run_cli(ws.dir, "eval " + ws.config() + " --set model.hidden=16").code == 6);
  }
  SUBCASE("eval refuses a manifest of another width") {
    const json spec = {{"num_videos", 4}, {"num_test_videos", 2}, {"feature_dim", 24}, {"t_range", {30, 40}},
                       {"signal_channels", 8}, {"redundant_channels", 8}, {"actions_per_video_range", {1, 2}},
                       {"decoys_per_video_range", {0, 0}}};
    spit(ws.dir / "spec24.json", spec.dump());
    REQUIRE(run_cli(ws.dir, "synth --spec \"" + (ws.dir / "spec24.json").string() + "\" --out \"" + (ws.dir / "d24").string() + "\"").code == 0);
    CHECK(run_cli(ws.dir, "eval " + ws.config() + " --set paths.test_manifest=\"d24/test.json\"").code == 6);
  }
  SUBCASE("damaged checkpoint") {
    std::string bytes = slurp(ws.dir / "run/model.co2w");
    spit(ws.dir / "run/model.co2w", bytes.substr(0, bytes.size() / 2));
    CHECK(run_cli(ws.dir, "eval " + ws.config()).code == 5);
    spit(ws.dir / "run/model.co2w", "XXXX" + bytes.substr(4));
    CHECK(run_cli(ws.dir, "eval " + ws.config()).code == 5);
  }
  SUBCASE("missing inputs") {
    CHECK(run_cli(ws.dir, "eval " + ws.config() + " --checkpoint \"" + (ws.dir / "nope.co2w").string() + "\"").code == 4);
    CHECK(run_cli(ws.dir, "train " + ws.config() + " --set paths.train_manifest=\"missing.json\"").code == 4);
  }
  SUBCASE("localize dump") {
    const RunResult r = run_cli(ws.dir, "localize " + ws.config() + " --video test_0001");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json j = json::parse(r.out);
    const std::size_t T = j["length"].get<std::size_t>();
    CHECK(j["attention_rgb"].size() == T);
    CHECK(j["attention_flow"].size() == T);
    CHECK(j["attention_fused"].size() == T);
    CHECK(j["class_scores"].size() == 4);
    CHECK(j["proposals"].is_array());
    CHECK(!j["ground_truth"].empty());
    CHECK(run_cli(ws.dir, "localize " + ws.config() + " --video nope").code == 3);
  }
}

TEST_CASE("cli zero-step training writes the initialization") {
  Workspace ws;
  REQUIRE(run_cli(ws.dir, "train " + ws.config() + " --set train.max_steps=0").code == 0);
  CHECK(slurp(ws.dir / "run/loss_log.jsonl").empty());
  RunConfig cfg = load_run_config(ws.dir / "run.json");
  cfg.train.max_steps = 0;
  auto net = make_model(cfg, 32, 4);
  CHECK(slurp(ws.dir / "run/model.co2w") == encode_checkpoint(net->store()));
}

TEST_CASE("cli gradcheck") {
  TempDir dir("cli_gc");
  const RunResult ok = run_cli(dir, "gradcheck --hidden 4 --length 12");
  REQUIRE_MESSAGE(ok.code == 0, ok.err);
  const json j = json::parse(ok.out);
  CHECK(j["passed"] == true);
  CHECK(j["max_rel_error"].get<double>() <= 1e-4);
  CHECK(run_cli(dir, "gradcheck --hidden 4 --length 12 --tol 1e-30").code == 9);
  CHECK(run_cli(dir, "gradcheck --pairs 5").code == 3);
}
