#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vtsm/harness.hpp"

using namespace vtsm;
namespace fs = std::filesystem;

namespace {

long count_of(const std::string& s, const std::string& needle) {
  long n = 0;
  for (size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}


std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("vtsm_harness_" + name);
  fs::remove_all(d);
  return d;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.name = "tiny";
  c.seed = 3;
  TerrainSpec t;
  t.kind = TerrainKind::Cfa2;
  t.texture_size = 1024;
  t.seed = 8;
  c.terrains = {t};
  c.lightings = {{"0h", sun_preset("am")}};
  c.trials = 2;
  c.viewpoints.count = 2;
  c.guess = {0.0, 0.0, 0.0, false};
  c.vtsm.n_iterations = 2;
  c.scene_cache = (fs::temp_directory_path() / "vtsm_harness_scenes").string();
  return c;
}

std::vector<std::string> trial_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir / "trials")) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(TrialSeed, DependsOnCellAndTrialOnly) {
  EXPECT_EQ(trial_seed(1, 2, 3), trial_seed(1, 2, 3));
  EXPECT_NE(trial_seed(1, 2, 3), trial_seed(1, 3, 2));
  EXPECT_NE(trial_seed(1, 2, 3), trial_seed(2, 2, 3));
}

TEST(Fold, BookkeepingIdentities) {
  std::vector<TrialRecord> recs;
  for (int i = 0; i < 7; ++i) {
    TrialRecord r;
    r.cell = i < 4 ? "a-0h" : "b-0h";
    r.terrain = i < 4 ? "a" : "b";
    r.lighting = "0h";
    r.cell_index = i < 4 ? 0 : 1;
    r.trial = i;
    r.success = i % 3 != 0;
    r.final_error_m = 0.001 * i;
    r.init_error_m = 0.15;
    recs.push_back(r);
  }
  const auto cells = fold_cells(recs);
  ASSERT_EQ(cells.size(), 2u);
  int successes = 0, trials = 0;
  for (const auto& c : cells) {
    successes += c.successes;
    trials += c.trials;
  }
  EXPECT_EQ(trials, 7);
  EXPECT_EQ(successes, 4);
  // Failed trials never contribute to error means: cell a has successes 1, 2.
  EXPECT_NEAR(cells[0].final_error_mm, 1.5, 1e-12);
  const std::string svg = scatter_svg(cells);
  EXPECT_EQ(count_of(svg, "<circle"),
            7);
}

TEST(Experiment, SelfLocalizationCellReportsAndReproduces) {
  const ExperimentConfig cfg = tiny_config();
  const fs::path a = fresh("a"), b = fresh("b");
  const auto ra = run_experiment(cfg, a);
  ASSERT_EQ(ra.cells.size(), 1u);
  EXPECT_EQ(ra.cells[0].trials, 2);
  EXPECT_DOUBLE_EQ(ra.cells[0].success_rate, 1.0);

  run_experiment(cfg, b);
  const auto files = trial_files(a);
  ASSERT_EQ(files, trial_files(b));
  for (const auto& f : files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;

  const auto cells = report_tables(a, a / "tables");
  const std::string csv = slurp(a / "tables" / "cells.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);  // header + one cell
  const std::string svg = slurp(a / "tables" / "scatter.svg");
  EXPECT_EQ(count_of(svg, "<circle"),
            2);

  // Resuming with every record present reruns nothing and folds the same report.
  const auto again = run_experiment(cfg, a);
  EXPECT_EQ(cells_csv(again.cells), cells_csv(cells));
}

TEST(Experiment, SingleStepSweepEqualsExperiment) {
  const ExperimentConfig cfg = tiny_config();
  const fs::path e = fresh("exp"), s = fresh("sweep");
  const auto report = run_experiment(cfg, e);
  const auto points = step_size_sweep(cfg, {cfg.mapping.step}, s);
  ASSERT_EQ(points.size(), 1u);
  EXPECT_EQ(cells_csv(points[0].cells), cells_csv(report.cells));
  const fs::path sd = s / ("step_" + format_fixed(cfg.mapping.step, 2));
  const auto files = trial_files(e);
  ASSERT_EQ(files, trial_files(sd));
  for (const auto& f : files) EXPECT_EQ(slurp(e / f), slurp(sd / f)) << f;
}

TEST(Experiment, ConfigValidation) {
  ExperimentConfig cfg = tiny_config();
  cfg.trials = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.guess.t_max = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  const ExperimentConfig back = experiment_config_from_json(to_json(tiny_config()));
  EXPECT_EQ(to_json(back), to_json(tiny_config()));
}

TEST(MappingTrajectory, StepSpacingAndRange) {
  MappingTrajectory m;
  m.step = 0.4;
  const auto fine = mapping_viewpoints(m, 8.0);
  m.step = 2.0;
  const auto coarse = mapping_viewpoints(m, 8.0);
  EXPECT_GT(fine.size(), 4 * coarse.size());
  const Pose q = ring_viewpoint(20.0);
  EXPECT_LE(mapping_offset(q, fine).first, mapping_offset(q, coarse).first);
}

TEST(SampleConfigs, AllParse) {
  const fs::path d = VTSM_CONFIG_DIR;
  for (const char* f : {"experiment_lighting.json", "experiment_multi_seed.json", "experiment_sweep.json",
                        "experiment_quick.json"}) {
    EXPECT_NO_THROW(experiment_config_from_json(read_json(d / f)).validate()) << f;
  }
  for (const char* f : {"scene_cfa2.json", "scene_cfa6.json", "scene_flagstone.json"}) {
    const auto j = read_json(d / f);
    EXPECT_NO_THROW(terrain_spec_from_json(j.at("terrain")).validate()) << f;
    EXPECT_NO_THROW(shading_from_value(j.at("mapping_shading"))) << f;
  }
  EXPECT_NO_THROW(pose_from_json(read_json(d / "pose.json")));
  EXPECT_NO_THROW(pose_from_json(read_json(d / "guess.json")));
  EXPECT_NO_THROW(vtsm_config_from_json(read_json(d / "vtsm.json")));
}
