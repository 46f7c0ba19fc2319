#include "mtlstm/run.hpp"

#include "mtlstm/checkpoint.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mtlstm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mtlstm_test_run_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig tiny(const fs::path& out) {
  RunConfig c;
  apply_config_text(c, R"(
    period_ms = 1000
    input_len = 40
    step = 60
    horizon = 10
    hidden = 6
    periods = 1, 5
    predictor_epochs = 2
    mapper_epochs = 2
    mapper_hidden = 6
    n_teams = 2
    folds = 3
  )");
  c.out = out.string();
  return c;
}

}  // namespace

TEST_CASE("defaults are the paper settings") {
  const RunConfig c;
  CHECK(c.input_len == 1200);
  CHECK(c.step == 300);
  CHECK(c.horizon == 300);
  CHECK(c.periods == std::vector<std::int64_t>{1, 10, 100});
  CHECK(c.hidden == 64);
  CHECK(c.predictor_epochs == 50);
  CHECK(c.mapper_epochs == 20);
  CHECK(c.predictor_batch == 64);
  CHECK(c.mapper_batch == 32);
  CHECK(c.predictor_lr == 0.001);
  CHECK(c.mapper_lr == 0.001);
  CHECK(c.violations().empty());
  CHECK(RunConfig::desk_scale().violations().empty());
}

TEST_CASE("config text: parsing, comments, errors") {
  RunConfig c;
  apply_config_text(c, "# note\n\nhorizon = 7   # trailing\nperiods=1,2,4\nsplit = team\nliteral_refeed = true\n");
  CHECK(c.horizon == 7);
  CHECK(c.periods == std::vector<std::int64_t>{1, 2, 4});
  CHECK(c.split == SplitMode::Team);
  CHECK(c.literal_refeed);
  CHECK_THROWS_AS(apply_config_text(c, "nonsense"), RunConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "colour = blue"), RunConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "horizon = 3.5"), RunConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "connectivity = sparse"), RunConfigError);
  try {
    apply_config_text(c, "horizon = 1\nstep = x\n", "f.conf");
    FAIL("expected an error");
  } catch (const RunConfigError& e) {
    CHECK(std::string(e.what()).find("f.conf:2") != std::string::npos);
  }
}

TEST_CASE("every field round-trips through get/set") {
  const RunConfig desk = RunConfig::desk_scale();
  RunConfig c;
  for (const auto& f : RunConfig::fields()) c.set(f.key, desk.get(f.key));
  CHECK(c.canonical() == desk.canonical());
  CHECK(c.hash() == desk.hash());
}

TEST_CASE("validation lists every violated field") {
  RunConfig c;
  c.periods = {10, 1};
  c.horizon = 0;
  c.folds = 1;
  const auto v = c.violations();
  auto has = [&](const std::string& m) { return std::find(v.begin(), v.end(), m) != v.end(); };
  CHECK(has("periods must be non-decreasing"));
  CHECK(has("horizon must be positive"));
  CHECK(has("folds must be at least 2"));
  try {
    c.validate();
    FAIL("expected an error");
  } catch (const RunConfigError& e) {
    CHECK(std::string(e.what()).find("periods must be non-decreasing") != std::string::npos);
  }
  RunConfig s;
  s.sizes = {30, 30, 30};
  CHECK_FALSE(s.violations().empty());
  s.sizes = {32, 16, 16};
  CHECK(s.violations().empty());
  CHECK(s.schedule_for("mt-lstm").sizes == std::vector<Index>{32, 16, 16});
}

TEST_CASE("config hash ignores the output directory and thread count only") {
  RunConfig a, b;
  b.out = "elsewhere";
  b.threads = 4;
  CHECK(a.hash() == b.hash());
  b.base_seed = 1;
  CHECK(a.hash() != b.hash());
  CHECK(a.hash().size() == 16);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("help lists every field with its default") {
  const auto text = describe_fields();
  const RunConfig c;
  for (const auto& f : RunConfig::fields()) {
    CHECK(text.find(f.key) != std::string::npos);
    CHECK(text.find(f.get(c)) != std::string::npos);
  }
}

TEST_CASE("encoding file round trip") {
  std::vector<FeatureSeries> corpus = generate_corpus(1, 3);
  const auto spec = fit_encoding(corpus);
  CHECK(encoding_from_json(encoding_json(spec)) == spec);
  CHECK_THROWS_AS(encoding_from_json("{}"), EncodingError);
}

TEST_CASE("pipeline: commands, manifests, re-run from manifest is byte identical") {
  const auto dir = scratch("a");
  const RunConfig cfg = tiny(dir);
  CommandOptions opts;
  std::ostringstream sink;
  for (const auto& cmd : command_names()) {
    INFO(cmd);
    run_command(cmd, cfg, opts, sink);
    CHECK(fs::exists(dir / ("manifest-" + cmd + ".json")));
  }
  for (const char* f : {"stats.txt", "stats.csv", "encoding.json", "predictor.ckpt", "mapper.ckpt",
                        "forecasts.jsonl", "report.txt", "report.csv", "report.json"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK(slurp(dir / "report.csv").rfind("model,role,fold,accuracy\n", 0) == 0);
  CHECK(load_checkpoint(dir / "predictor.ckpt").network.schedule == cfg.schedule_for("mt-lstm"));

  // A second run configured only from the first run's manifest.
  const auto dir2 = scratch("b");
  RunConfig again;
  apply_config_file(again, dir / "manifest-eval.json");
  CHECK(again.hash() == cfg.hash());
  again.out = dir2.string();
  for (const auto& cmd : command_names()) run_command(cmd, again, opts, sink);
  for (const char* f : {"predictor.ckpt", "mapper.ckpt", "forecasts.jsonl", "report.json", "report.csv",
                        "report.txt", "traces/team1_mission1_medic.jsonl"}) {
    INFO(f);
    CHECK(slurp(dir / f) == slurp(dir2 / f));
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("commands report missing inputs and bad configs") {
  const auto dir = scratch("missing");
  RunConfig cfg = tiny(dir);
  std::ostringstream sink;
  CHECK_THROWS_AS(run_command("rollout", cfg, {}, sink), PathError);
  CHECK_THROWS_AS(run_command("train-predictor", cfg, {}, sink), PathError);
  CHECK_THROWS_AS(run_command("report", cfg, {}, sink), PathError);
  CHECK_THROWS_AS(run_command("fly", cfg, {}, sink), std::invalid_argument);
  cfg.periods = {10, 1};
  CHECK_THROWS_WITH_AS(run_command("gen", cfg, {}, sink), doctest::Contains("periods must be non-decreasing"),
                       RunConfigError);
  fs::remove_all(dir);
}
