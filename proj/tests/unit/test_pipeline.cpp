#include <doctest.h>

#include "config.hpp"
#include "helpers.hpp"
#include "io.hpp"
#include "pipeline.hpp"

using namespace soiguard;

namespace {

ExperimentConfig synthetic_config() {
  return load_config(std::filesystem::path(SOIGUARD_SOURCE_DIR) / "configs" / "synthetic_minimal.json");
}

}  // namespace

TEST_CASE("pipeline writes the run report and is byte-reproducible") {
  const auto cfg = synthetic_config();
  const auto a = testutil::temp_dir("pipe_a"), b = testutil::temp_dir("pipe_b");
  const auto rows = RunContext(cfg, 7, a).run_pipeline();
  RunContext(cfg, 7, b).run_pipeline();
  CHECK(rows.size() == cfg.eval.attacks.size() * cfg.eval.modes.size());
  for (const char* f : {"soi_clean.csv", "lut.json", "metrics.csv", "energy.json", "plotdata_lut.csv",
                        "report.json", "xbar_metrics.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(a / f), f);
  }
  const auto metrics = read_file_text(a / "metrics.csv");
  CHECK(metrics == read_file_text(b / "metrics.csv"));
  CHECK(metrics.rfind("# config_hash=" + config_hash(cfg), 0) == 0);
  CHECK(metrics.find("attack,eps,alpha,n,roc_auc,accuracy,error,mode\n") != std::string::npos);
  CHECK(read_file_text(a / "soi_clean.csv").find("sample_id,soi,is_adv") != std::string::npos);

  // Resuming in the same directory reuses checkpoints and reproduces the metrics.
  RunContext(cfg, 7, a).run_pipeline();
  CHECK(read_file_text(a / "metrics.csv") == metrics);
}

TEST_CASE("resume with a different stage configuration is rejected") {
  auto cfg = synthetic_config();
  const auto dir = testutil::temp_dir("pipe_resume");
  RunContext(cfg, 7, dir).model(Stage::phase1);
  cfg.phase1.train.epochs += 1;
  RunContext changed(cfg, 7, dir);
  CHECK(changed.model(Stage::pretrain).layers.size() > 0);
  try {
    changed.model(Stage::phase1);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "phase1");
    CHECK(std::string(e.what()).find("fresh output directory") != std::string::npos);
  }
}

TEST_CASE("pipeline failure names the stage and leaves a marker") {
  auto cfg = synthetic_config();
  cfg.dataset.name = "mnist";
  cfg.dataset.dir = "/nonexistent/soiguard";
  const auto dir = testutil::temp_dir("pipe_fail");
  try {
    RunContext(cfg, 7, dir).run_pipeline();
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(std::string(e.what()).rfind("stage ", 0) == 0);
  }
  CHECK(std::filesystem::exists(dir / "FAILED"));
}

TEST_CASE("sweep writes one row block per value") {
  auto cfg = synthetic_config();
  cfg.output_dir = testutil::temp_dir("sweep");
  const auto rows = run_sweep(cfg, "on_off_ratio", {10.0, 100.0});
  CHECK(rows.size() == 2 * cfg.eval.attacks.size() * cfg.eval.modes.size());
  CHECK(std::filesystem::exists(cfg.output_dir / "sweep_on_off_ratio.csv"));
  CHECK_THROWS_AS(run_sweep(cfg, "bogus", {1}), StageError);
}
