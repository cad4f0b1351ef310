#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vtsm/harness.hpp"

namespace fs = std::filesystem;
using namespace vtsm;

namespace {

// Localization failures are reported through the exit code, not an exception.
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitLocalizationFailed = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_steps(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("invalid step size '" + item + "'");
    }
  }
  return out;
}

int generate_scene(const fs::path& spec_path, const fs::path& out) {
  const auto j = read_json(spec_path);
  const nlohmann::json terrain = j.contains("terrain") ? j.at("terrain") : j;
  const TerrainSpec spec = terrain_spec_from_json(terrain);
  const ShadingSpec light =
      j.contains("mapping_shading") ? shading_from_value(j.at("mapping_shading")) : sun_preset("am");
  const StereoRig rig = j.contains("rig") ? rig_from_json(j.at("rig")) : default_rig();
  save_scene(out, build_scene(spec, light, rig));
  return kExitOk;
}

int render(const fs::path& scene_dir, const fs::path& pose_path, const fs::path& shading_path,
           const fs::path& out) {
  const Scene scene = load_scene(scene_dir);
  const Pose pose = pose_from_json(read_json(pose_path));
  const ShadingSpec shading = shading_from_value(read_json(shading_path));
  const StereoFrames f = render_query_pair(scene.albedo_mesh, scene.rig, pose, shading);
  fs::create_directories(out);
  write_png_gray(out / "left.png", f.left.intensity);
  write_png_gray(out / "right.png", f.right.intensity);
  write_depth(out / "left_depth.f64", f.left.depth);
  write_depth(out / "right_depth.f64", f.right.depth);
  write_json(out / "pose.json", to_json(pose));
  write_json(out / "rig.json", to_json(scene.rig));
  return kExitOk;
}

int localize_cmd(const fs::path& scene_dir, const fs::path& query_dir, const fs::path& guess_path,
                 const fs::path& config_path, const fs::path& out, bool timing, double wide_bound,
                 int n_seeds, int seed_attempts) {
  const Scene scene = load_scene(scene_dir);
  const StereoQuery q{read_png_gray(query_dir / "left.png"), read_png_gray(query_dir / "right.png")};
  if (q.left.rows != scene.rig.rows || q.left.cols != scene.rig.cols ||
      q.right.rows != scene.rig.rows || q.right.cols != scene.rig.cols) {
    throw UsageError("query images do not match the scene rig resolution");
  }
  const Pose guess = pose_from_json(read_json(guess_path));
  const VtsmConfig cfg = config_path.empty() ? VtsmConfig{} : vtsm_config_from_json(read_json(config_path));
  const LocalizeOutcome o =
      n_seeds > 0 ? multi_seed_localize(q, scene.map_mesh, scene.mask, scene.rig, guess, wide_bound,
                                         n_seeds, cfg, seed_attempts)
                  : localize(q, scene.map_mesh, scene.mask, scene.rig, guess, cfg);
  write_json(out, to_json(o, timing));
  std::cout << (o.success ? "success" : "failure: " + o.failure) << '\n';
  return o.success ? kExitOk : kExitLocalizationFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual template synthesis and matching: terrain-relative stereo relocalization"};
  app.require_subcommand(1);
  app.fallthrough();
  bool timing = false;
  app.add_flag("--timing", timing, "Include wall-clock timings in JSON outputs");

  fs::path spec, out, scene, pose, shading, query, guess, config, in;
  auto* gen = app.add_subcommand("generate-scene", "Build a procedural depot scene");
  gen->add_option("--spec", spec, "Terrain spec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output scene directory")->required();

  auto* ren = app.add_subcommand("render", "Render a stereo query pair from a scene");
  ren->add_option("--scene", scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
  ren->add_option("--pose", pose, "Left-camera pose JSON (T_W->C)")->required()->check(CLI::ExistingFile);
  ren->add_option("--shading", shading, "Shading JSON (or a quoted preset name)")
      ->required()
      ->check(CLI::ExistingFile);
  ren->add_option("--out", out, "Output directory")->required();

  double wide_bound = 0.5;
  int n_seeds = 0, seed_attempts = -1;
  auto* loc = app.add_subcommand("localize", "Estimate the query pose against a scene map");
  loc->add_option("--scene", scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
  loc->add_option("--query", query, "Directory with left.png and right.png")
      ->required()
      ->check(CLI::ExistingDirectory);
  loc->add_option("--guess", guess, "Initial pose guess JSON")->required()->check(CLI::ExistingFile);
  loc->add_option("--config", config, "Algorithm config JSON")->check(CLI::ExistingFile);
  loc->add_option("--out", out, "Outcome JSON path")->required();
  loc->add_option("--seeds", n_seeds, "Use multi-seed search with this many seeds");
  loc->add_option("--wide-bound", wide_bound, "Seed translation bound in meters");
  loc->add_option("--seed-attempts", seed_attempts, "Template attempts per seed");

  int jobs = 0;
  auto* exp = app.add_subcommand("experiment", "Run a terrain x lighting experiment");
  exp->add_option("--config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", out, "Results directory")->required();
  exp->add_option("--jobs", jobs, "Concurrent trials (overrides the config)");

  auto* rep = app.add_subcommand("report", "Fold trial records into tables");
  rep->add_option("--in", in, "Results directory")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--out", out, "Output directory")->required();

  std::string steps = "0.4,0.8,1.5,2.0";
  auto* sweep = app.add_subcommand("sweep", "Mapping step-size sweep");
  sweep->add_option("--config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--steps", steps, "Comma-separated step sizes in meters");
  sweep->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (*gen) return generate_scene(spec, out);
    if (*ren) return render(scene, pose, shading, out);
    if (*loc) {
      return localize_cmd(scene, query, guess, config, out, timing, wide_bound, n_seeds, seed_attempts);
    }
    if (*exp) {
      ExperimentConfig cfg = experiment_config_from_json(read_json(config));
      if (jobs > 0) cfg.jobs = jobs;
      const auto report = run_experiment(cfg, out, timing, &std::cerr);
      std::cout << cells_csv(report.cells);
      return kExitOk;
    }
    if (*rep) {
      const auto cells = report_tables(in, out);
      std::cout << cells_csv(cells);
      return kExitOk;
    }
    if (*sweep) {
      const ExperimentConfig cfg = experiment_config_from_json(read_json(config));
      const auto points = step_size_sweep(cfg, parse_steps(steps), out, timing, &std::cerr);
      std::cout << "step_m,range_m,success_rate,mean_final_error_mm\n";
      for (const auto& p : points) {
        std::cout << format_fixed(p.step, 2) << ',' << format_fixed(p.range, 3) << ','
                  << format_fixed(p.success_rate, 4) << ',' << format_fixed(p.mean_final_mm, 2) << '\n';
      }
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
