#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vtsm/geometry.hpp"
#include "vtsm/scenegen.hpp"
#include "vtsm/vtsm.hpp"

namespace vtsm {

namespace fs = std::filesystem;

struct LightingCell {
  std::string label;  // e.g. "0h"
  ShadingSpec shading;
};

struct ViewpointSet {
  std::string type = "ring";
  int count = 4;
  double radius = 2.5;
  double height = 1.8;
  double start_deg = 0.0;
};

struct GuessPerturbation {
  double t_min = 0.10;
  double t_max = 0.20;
  double r_max_deg = 1.5;
  bool horizontal = false;  // translation direction restricted to the ground plane
};

struct MultiSeedOptions {
  bool enabled = false;
  double wide_bound = 0.50;
  int n_seeds = 100;
  int seed_attempts = -1;
};

struct MappingTrajectory {
  std::string pattern = "wave";  // wave | forward
  double step = 0.4;             // meters between mapping viewpoints
  double height = 1.5;
  double lane_spacing = 2.0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::vector<TerrainSpec> terrains;
  ShadingSpec mapping_shading = sun_preset("am");
  std::vector<LightingCell> lightings;
  ViewpointSet viewpoints;
  GuessPerturbation guess;
  MultiSeedOptions multi_seed;
  MappingTrajectory mapping;
  int trials = 10;
  double mutable_perturbation = 0.0;  // RMS meters applied to the query world
  VtsmConfig vtsm;
  StereoRig rig = default_rig();
  std::string scene_cache;  // optional directory shared between runs
  int jobs = 1;

  void validate() const {
    if (trials < 1) throw std::invalid_argument("experiment: trials must be >= 1");
    if (terrains.empty()) throw std::invalid_argument("experiment: no terrains");
    if (lightings.empty()) throw std::invalid_argument("experiment: no query lightings");
    if (guess.t_min < 0.0 || guess.t_max < guess.t_min || guess.r_max_deg < 0.0) {
      throw std::invalid_argument("experiment: invalid initial-guess perturbation range");
    }
    if (viewpoints.count < 1) throw std::invalid_argument("experiment: no query viewpoints");
    if (!(mapping.step > 0.0)) throw std::invalid_argument("experiment: mapping step must be > 0");
    if (mutable_perturbation < 0.0) throw std::invalid_argument("experiment: negative perturbation");
    vtsm.validate();
    rig.validate();
  }
};

inline ShadingSpec shading_from_value(const nlohmann::json& j) {
  if (j.is_string()) return sun_preset(j.get<std::string>());
  return shading_from_json(j);
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.name = j.value("name", c.name);
  c.seed = j.value("seed", c.seed);
  for (const auto& t : j.at("terrains")) c.terrains.push_back(terrain_spec_from_json(t));
  if (j.contains("mapping_shading")) c.mapping_shading = shading_from_value(j.at("mapping_shading"));
  for (const auto& l : j.at("lightings")) {
    c.lightings.push_back({l.at("label").get<std::string>(), shading_from_value(l.at("shading"))});
  }
  if (j.contains("viewpoints")) {
    const auto& v = j.at("viewpoints");
    c.viewpoints.type = v.value("type", c.viewpoints.type);
    c.viewpoints.count = v.value("count", c.viewpoints.count);
    c.viewpoints.radius = v.value("radius", c.viewpoints.radius);
    c.viewpoints.height = v.value("height", c.viewpoints.height);
    c.viewpoints.start_deg = v.value("start_deg", c.viewpoints.start_deg);
    if (c.viewpoints.type != "ring") throw std::invalid_argument("experiment: viewpoints must be a ring");
  }
  if (j.contains("initial_guess")) {
    const auto& g = j.at("initial_guess");
    c.guess.t_min = g.value("t_min", c.guess.t_min);
    c.guess.t_max = g.value("t_max", c.guess.t_max);
    c.guess.r_max_deg = g.value("r_max_deg", c.guess.r_max_deg);
    c.guess.horizontal = g.value("horizontal", c.guess.horizontal);
  }
  if (j.contains("multi_seed")) {
    const auto& m = j.at("multi_seed");
    c.multi_seed.enabled = m.value("enabled", true);
    c.multi_seed.wide_bound = m.value("wide_bound", c.multi_seed.wide_bound);
    c.multi_seed.n_seeds = m.value("n_seeds", c.multi_seed.n_seeds);
    c.multi_seed.seed_attempts = m.value("seed_attempts", c.multi_seed.seed_attempts);
  }
  if (j.contains("mapping")) {
    const auto& m = j.at("mapping");
    c.mapping.pattern = m.value("pattern", c.mapping.pattern);
    c.mapping.step = m.value("step", c.mapping.step);
    c.mapping.height = m.value("height", c.mapping.height);
    c.mapping.lane_spacing = m.value("lane_spacing", c.mapping.lane_spacing);
    if (c.mapping.pattern != "wave" && c.mapping.pattern != "forward") {
      throw std::invalid_argument("experiment: mapping pattern must be wave or forward");
    }
  }
  c.trials = j.value("trials", c.trials);
  c.mutable_perturbation = j.value("mutable_perturbation", c.mutable_perturbation);
  if (j.contains("vtsm")) c.vtsm = vtsm_config_from_json(j.at("vtsm"));
  if (j.contains("rig")) c.rig = rig_from_json(j.at("rig"));
  c.scene_cache = j.value("scene_cache", c.scene_cache);
  c.jobs = j.value("jobs", c.jobs);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json terrains = nlohmann::json::array();
  for (const auto& t : c.terrains) terrains.push_back(to_json(t));
  nlohmann::json lightings = nlohmann::json::array();
  for (const auto& l : c.lightings) lightings.push_back({{"label", l.label}, {"shading", to_json(l.shading)}});
  return {{"name", c.name},
          {"seed", c.seed},
          {"terrains", terrains},
          {"mapping_shading", to_json(c.mapping_shading)},
          {"lightings", lightings},
          {"viewpoints",
           {{"type", c.viewpoints.type},
            {"count", c.viewpoints.count},
            {"radius", c.viewpoints.radius},
            {"height", c.viewpoints.height},
            {"start_deg", c.viewpoints.start_deg}}},
          {"initial_guess",
           {{"t_min", c.guess.t_min},
            {"t_max", c.guess.t_max},
            {"r_max_deg", c.guess.r_max_deg},
            {"horizontal", c.guess.horizontal}}},
          {"multi_seed",
           {{"enabled", c.multi_seed.enabled},
            {"wide_bound", c.multi_seed.wide_bound},
            {"n_seeds", c.multi_seed.n_seeds},
            {"seed_attempts", c.multi_seed.seed_attempts}}},
          {"mapping",
           {{"pattern", c.mapping.pattern},
            {"step", c.mapping.step},
            {"height", c.mapping.height},
            {"lane_spacing", c.mapping.lane_spacing}}},
          {"trials", c.trials},
          {"mutable_perturbation", c.mutable_perturbation},
          {"vtsm", to_json(c.vtsm)},
          {"rig", to_json(c.rig)}};
}

// Helpers ---------------------------------------------------------------------------

/// Per-trial seed from (experiment seed, cell, trial), independent of schedule.
inline std::uint64_t trial_seed(std::uint64_t experiment_seed, int cell, int trial) {
  return detail::mix64(detail::mix64(experiment_seed) ^
                       detail::mix64(std::uint64_t(cell) * 0x100000001B3ULL + std::uint64_t(trial)));
}

inline Pose query_viewpoint(const ViewpointSet& v, int index) {
  const double az = v.start_deg + 360.0 * index / v.count;
  return ring_viewpoint(az, v.radius, v.height);
}

/// Initial guess: truth moved by a magnitude uniform in [t_min, t_max] along a
/// random direction and rotated by up to r_max about a random axis.
inline Pose perturb_guess(const Pose& truth, const GuessPerturbation& g, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double mag = g.t_min + (g.t_max - g.t_min) * unit(rng);
  Vec3 dir = random_unit_vector(rng);
  if (g.horizontal) {
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    dir = Vec3(std::cos(phi), std::sin(phi), 0.0);
  }
  const Vec3 axis = random_unit_vector(rng);
  const double angle = g.r_max_deg * unit(rng) * kDegToRad;
  const Mat3 r = detail::renormalized(axis_angle(axis, angle) * truth.rotation());
  return Pose(r, truth.translation() + mag * dir, truth.from(), truth.to());
}

/// Mapping-camera poses spaced `step` apart along the trajectory over the depot.
inline std::vector<Pose> mapping_viewpoints(const MappingTrajectory& m, double extent) {
  std::vector<Vec3> path;
  const double half = 0.5 * extent;
  if (m.pattern == "forward") {
    path = {Vec3(-half, 0.0, m.height), Vec3(half, 0.0, m.height)};
  } else {
    bool forward = true;
    for (double y = -half + 0.5 * m.lane_spacing; y <= half; y += m.lane_spacing) {
      const double x0 = forward ? -half : half;
      path.emplace_back(x0, y, m.height);
      path.emplace_back(-x0, y, m.height);
      forward = !forward;
    }
  }
  std::vector<Pose> out;
  double carry = 0.0;
  for (size_t k = 0; k + 1 < path.size(); ++k) {
    const Vec3 a = path[k], b = path[k + 1];
    const double len = (b - a).norm();
    const Vec3 dir = (b - a) / len;
    for (double s = carry; s <= len; s += m.step) {
      const Vec3 eye = a + s * dir;
      out.push_back(look_at(eye, eye + dir + Vec3(0.0, 0.0, -1.0)));
      carry = s + m.step - len;
    }
  }
  return out;
}

/// Distance to the nearest mapping viewpoint and angle between the optical axes.
inline std::pair<double, double> mapping_offset(const Pose& query, const std::vector<Pose>& mapping) {
  double best = kNoDepth, angle = 0.0;
  for (const Pose& m : mapping) {
    const double d = (m.origin() - query.origin()).norm();
    if (d < best) {
      best = d;
      const double c = std::clamp(m.rotation().col(2).dot(query.rotation().col(2)), -1.0, 1.0);
      angle = std::acos(c) * kRadToDeg;
    }
  }
  return {best, angle};
}

inline std::string format_fixed(double x, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

inline std::string scene_key(const TerrainSpec& t, const ShadingSpec& mapping) {
  const std::string blob = to_json(t).dump() + to_json(mapping).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : blob) h = (h ^ ch) * 1099511628211ULL;
  std::ostringstream s;
  s << to_string(t.kind) << '-' << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

/// Builds the scene or loads it from `cache_dir` when present.
inline Scene obtain_scene(const TerrainSpec& t, const ShadingSpec& mapping, const StereoRig& rig,
                          const fs::path& cache_dir) {
  const fs::path dir = cache_dir / scene_key(t, mapping);
  if (fs::exists(dir / "scene.json")) {
    Scene s = load_scene(dir);
    s.rig = rig;
    return s;
  }
  Scene s = build_scene(t, mapping, rig);
  // Concurrent builders each stage privately; the first rename wins.
  std::random_device entropy;
  const fs::path staging = cache_dir / (dir.filename().string() + ".tmp" + std::to_string(entropy()));
  save_scene(staging, s);
  std::error_code ec;
  fs::rename(staging, dir, ec);
  if (ec) fs::remove_all(staging);
  Scene loaded = load_scene(dir);
  loaded.rig = rig;
  return loaded;
}

// Trials -----------------------------------------------------------------------

struct TrialRecord {
  std::string cell;
  std::string terrain;
  std::string lighting;
  int cell_index = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  int viewpoint = 0;
  bool success = false;
  std::string failure;
  double init_error_m = 0.0;
  double init_error_deg = 0.0;
  double final_error_m = 0.0;
  double final_error_deg = 0.0;
  double map_distance = 0.0;
  double map_angle_deg = 0.0;
  int iterations = 0;
  long attempts = 0;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const TrialRecord& r, bool include_timing) {
  nlohmann::json j = {{"cell", r.cell},
                      {"terrain", r.terrain},
                      {"lighting", r.lighting},
                      {"cell_index", r.cell_index},
                      {"trial", r.trial},
                      {"seed", r.seed},
                      {"viewpoint", r.viewpoint},
                      {"success", r.success},
                      {"failure", r.failure},
                      {"init_error_m", r.init_error_m},
                      {"init_error_deg", r.init_error_deg},
                      {"final_error_m", r.final_error_m},
                      {"final_error_deg", r.final_error_deg},
                      {"map_distance", r.map_distance},
                      {"map_angle_deg", r.map_angle_deg},
                      {"iterations", r.iterations},
                      {"attempts", r.attempts}};
  if (include_timing) j["seconds"] = r.seconds;
  return j;
}

inline TrialRecord trial_from_json(const nlohmann::json& j) {
  TrialRecord r;
  r.cell = j.at("cell");
  r.terrain = j.at("terrain");
  r.lighting = j.at("lighting");
  r.cell_index = j.at("cell_index");
  r.trial = j.at("trial");
  r.seed = j.at("seed");
  r.viewpoint = j.at("viewpoint");
  r.success = j.at("success");
  r.failure = j.at("failure");
  r.init_error_m = j.at("init_error_m");
  r.init_error_deg = j.at("init_error_deg");
  r.final_error_m = j.at("final_error_m");
  r.final_error_deg = j.at("final_error_deg");
  r.map_distance = j.at("map_distance");
  r.map_angle_deg = j.at("map_angle_deg");
  r.iterations = j.at("iterations");
  r.attempts = j.at("attempts");
  r.seconds = j.value("seconds", 0.0);
  return r;
}

struct CellResult {
  std::string cell;
  std::string terrain;
  std::string lighting;
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;
  double init_error_mm = 0.0;    // mean over successful trials
  double final_error_mm = 0.0;   // mean over successful trials
  double median_final_mm = 0.0;  // median over successful trials
  double final_rotation_deg = 0.0;
  std::vector<TrialRecord> records;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Pure fold of trial records into per-cell statistics; cells ordered by index.
inline std::vector<CellResult> fold_cells(std::vector<TrialRecord> records) {
  std::sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    return std::tie(a.cell_index, a.cell, a.trial) < std::tie(b.cell_index, b.cell, b.trial);
  });
  std::vector<CellResult> cells;
  for (const auto& r : records) {
    if (cells.empty() || cells.back().cell != r.cell) {
      cells.push_back({});
      cells.back().cell = r.cell;
      cells.back().terrain = r.terrain;
      cells.back().lighting = r.lighting;
    }
    cells.back().records.push_back(r);
  }
  for (auto& c : cells) {
    std::vector<double> finals;
    double init = 0.0, fin = 0.0, rot = 0.0;
    for (const auto& r : c.records) {
      ++c.trials;
      if (!r.success) continue;
      ++c.successes;
      init += r.init_error_m;
      fin += r.final_error_m;
      rot += r.final_error_deg;
      finals.push_back(r.final_error_m * 1000.0);
    }
    c.success_rate = double(c.successes) / double(c.trials);
    if (c.successes > 0) {
      c.init_error_mm = 1000.0 * init / c.successes;
      c.final_error_mm = 1000.0 * fin / c.successes;
      c.final_rotation_deg = rot / c.successes;
      c.median_final_mm = median_of(finals);
    }
  }
  return cells;
}

struct ExperimentReport {
  std::vector<CellResult> cells;
};

inline std::vector<TrialRecord> load_trials(const fs::path& results_dir) {
  std::vector<TrialRecord> out;
  const fs::path trials = results_dir / "trials";
  if (!fs::exists(trials)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(trials)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back(trial_from_json(read_json(f)));
  return out;
}

namespace detail {

/// Trial loop shared by experiments and sweeps. `map_spec` maps each terrain to
/// the terrain spec of the map actually localized against; queries always come from the
/// full-resolution world of the original terrain.
template <class MapSpecFn>
void run_trials(const ExperimentConfig& cfg, const fs::path& out_dir, bool include_timing,
                std::ostream* log, MapSpecFn map_spec) {
  cfg.validate();
  fs::create_directories(out_dir);
  write_json(out_dir / "config.json", to_json(cfg));
  const fs::path cache = cfg.scene_cache.empty() ? out_dir / "scenes" : fs::path(cfg.scene_cache);

  struct Job {
    int lighting;
    int cell;
    int trial;
  };
  std::mutex log_mutex;
  int cell_index = 0;
  for (size_t ti = 0; ti < cfg.terrains.size(); ++ti) {
    const TerrainSpec& terrain = cfg.terrains[ti];
    const std::string kind = to_string(terrain.kind);
    std::vector<Job> jobs;
    for (size_t li = 0; li < cfg.lightings.size(); ++li) {
      const std::string cell = kind + "-" + cfg.lightings[li].label;
      for (int k = 0; k < cfg.trials; ++k) {
        const fs::path rec = out_dir / "trials" / cell / ("trial_" + std::to_string(k) + ".json");
        if (!fs::exists(rec)) jobs.push_back({int(li), cell_index + int(li), k});
      }
    }
    const int cells_here = int(cfg.lightings.size());
    if (jobs.empty()) {
      cell_index += cells_here;
      continue;
    }
    const Scene world = obtain_scene(terrain, cfg.mapping_shading, cfg.rig, cache);
    const TerrainSpec mspec = map_spec(terrain);
    const Scene map = to_json(mspec) == to_json(terrain)
                          ? world
                          : obtain_scene(mspec, cfg.mapping_shading, cfg.rig, cache);
    const auto mapping_views = mapping_viewpoints(cfg.mapping, terrain.extent);

    // Query renders are shared by all trials of a (lighting, viewpoint) pair.
    TexturedMesh query_world = world.albedo_mesh;
    if (cfg.mutable_perturbation > 0.0) {
      Rng prng(trial_seed(cfg.seed, -1 - int(ti), 0));
      query_world = perturb_mutable(world.albedo_mesh, cfg.mutable_perturbation, prng);
    }
    std::map<std::pair<int, int>, StereoQuery> queries;
    for (const Job& j : jobs) {
      const int vp = j.trial % cfg.viewpoints.count;
      const auto key = std::pair{j.lighting, vp};
      if (queries.count(key)) continue;
      const StereoFrames f = render_query_pair(query_world, cfg.rig, query_viewpoint(cfg.viewpoints, vp),
                                               cfg.lightings[size_t(j.lighting)].shading);
      queries[key] = {f.left.intensity, f.right.intensity};
    }

    std::atomic<size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const size_t idx = next.fetch_add(1);
        if (idx >= jobs.size()) return;
        const Job& j = jobs[idx];
        TrialRecord r;
        r.terrain = kind;
        r.lighting = cfg.lightings[size_t(j.lighting)].label;
        r.cell = r.terrain + "-" + r.lighting;
        r.cell_index = j.cell;
        r.trial = j.trial;
        r.seed = trial_seed(cfg.seed, j.cell, j.trial);
        r.viewpoint = j.trial % cfg.viewpoints.count;
        const Pose truth = query_viewpoint(cfg.viewpoints, r.viewpoint);
        Rng rng(r.seed);
        const Pose guess = perturb_guess(truth, cfg.guess, rng);
        const PoseError e0 = pose_error(truth, guess);
        r.init_error_m = e0.translation;
        r.init_error_deg = e0.rotation;
        VtsmConfig vc = cfg.vtsm;
        vc.seed = rng();
        const StereoQuery& q = queries.at({j.lighting, r.viewpoint});
        const LocalizeOutcome o =
            cfg.multi_seed.enabled
                ? multi_seed_localize(q, map.map_mesh, map.mask, cfg.rig, guess,
                                      cfg.multi_seed.wide_bound, cfg.multi_seed.n_seeds, vc,
                                      cfg.multi_seed.seed_attempts)
                : localize(q, map.map_mesh, map.mask, cfg.rig, guess, vc);
        const PoseError e1 = pose_error(truth, o.estimate);
        r.success = o.success;
        r.failure = o.failure;
        r.final_error_m = e1.translation;
        r.final_error_deg = e1.rotation;
        std::tie(r.map_distance, r.map_angle_deg) = mapping_offset(truth, mapping_views);
        r.iterations = int(o.trace.size());
        r.attempts = o.total_attempts;
        r.seconds = o.seconds;
        nlohmann::json rec = to_json(r, include_timing);
        rec["truth"] = to_json(truth);
        rec["guess"] = to_json(guess);
        rec["outcome"] = to_json(o, include_timing, false);
        write_json(out_dir / "trials" / r.cell / ("trial_" + std::to_string(r.trial) + ".json"), rec);
        if (log) {
          std::lock_guard lock(log_mutex);
          *log << r.cell << " trial " << r.trial << ": " << (r.success ? "success" : r.failure)
               << ", " << format_fixed(1000.0 * r.init_error_m, 1) << " mm -> "
               << format_fixed(1000.0 * r.final_error_m, 1) << " mm" << std::endl;
        }
      }
    };
    const int n_workers = std::max(1, std::min<int>(cfg.jobs, int(jobs.size())));
    if (n_workers == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    cell_index += cells_here;
  }
}

}  // namespace detail

/// Runs every (terrain x lighting x trial) job not already recorded under
/// `out_dir/trials`, then folds all records into the report.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                                       bool include_timing = false,
                                       std::ostream* log = nullptr) {
  detail::run_trials(cfg, out_dir, include_timing, log, [](const TerrainSpec& t) { return t; });
  return {fold_cells(load_trials(out_dir))};
}

// Reports ------------------------------------------------------------------------

inline std::string cells_csv(const std::vector<CellResult>& cells) {
  std::ostringstream s;
  s << "cell,terrain,lighting,trials,successes,success_rate,init_error_mm,final_error_mm,"
       "median_final_error_mm,final_rotation_deg\n";
  for (const auto& c : cells) {
    s << c.cell << ',' << c.terrain << ',' << c.lighting << ',' << c.trials << ',' << c.successes
      << ',' << format_fixed(c.success_rate, 4) << ',' << format_fixed(c.init_error_mm, 2) << ','
      << format_fixed(c.final_error_mm, 2) << ',' << format_fixed(c.median_final_mm, 2) << ','
      << format_fixed(c.final_rotation_deg, 4) << '\n';
  }
  return s.str();
}

inline std::string trials_csv(const std::vector<CellResult>& cells) {
  std::ostringstream s;
  s << "cell,trial,seed,viewpoint,success,failure,init_error_mm,final_error_mm,final_rotation_deg,"
       "map_distance_m,map_angle_deg,iterations,attempts\n";
  for (const auto& c : cells) {
    for (const auto& r : c.records) {
      s << r.cell << ',' << r.trial << ',' << r.seed << ',' << r.viewpoint << ','
        << (r.success ? 1 : 0) << ',' << r.failure << ',' << format_fixed(1000.0 * r.init_error_m, 2)
        << ',' << format_fixed(1000.0 * r.final_error_m, 2) << ','
        << format_fixed(r.final_error_deg, 4) << ',' << format_fixed(r.map_distance, 3) << ','
        << format_fixed(r.map_angle_deg, 2) << ',' << r.iterations << ',' << r.attempts << '\n';
    }
  }
  return s.str();
}

/// Scatter of (distance to nearest mapping viewpoint, angular difference), one
/// circle per trial, filled by final error; failures are hollow.
inline std::string scatter_svg(const std::vector<CellResult>& cells) {
  constexpr double W = 640, H = 480, M = 60;
  double xmax = 0.1, ymax = 1.0, emax = 1.0;
  for (const auto& c : cells) {
    for (const auto& r : c.records) {
      xmax = std::max(xmax, r.map_distance);
      ymax = std::max(ymax, r.map_angle_deg);
      if (r.success) emax = std::max(emax, 1000.0 * r.final_error_m);
    }
  }
  xmax *= 1.1;
  ymax *= 1.1;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << M << "\" y1=\"" << H - M << "\" x2=\"" << W - M << "\" y2=\"" << H - M
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << M << "\" y1=\"" << M << "\" x2=\"" << M << "\" y2=\"" << H - M
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 20
    << "\" text-anchor=\"middle\" font-size=\"14\">distance to nearest mapping viewpoint [m] (max "
    << format_fixed(xmax, 2) << ")</text>\n";
  s << "<text x=\"20\" y=\"" << H / 2 << "\" transform=\"rotate(-90 20 " << H / 2
    << ")\" text-anchor=\"middle\" font-size=\"14\">angular difference [deg] (max "
    << format_fixed(ymax, 1) << ")</text>\n";
  s << "<g id=\"trials\">\n";
  for (const auto& c : cells) {
    for (const auto& r : c.records) {
      const double x = M + (W - 2 * M) * r.map_distance / xmax;
      const double y = H - M - (H - 2 * M) * r.map_angle_deg / ymax;
      std::string fill = "none";
      if (r.success) {
        const double t = std::clamp(1000.0 * r.final_error_m / emax, 0.0, 1.0);
        const int red = int(std::lround(255 * t)), blue = int(std::lround(255 * (1.0 - t)));
        fill = "rgb(" + std::to_string(red) + ",0," + std::to_string(blue) + ")";
      }
      s << "<circle cx=\"" << format_fixed(x, 2) << "\" cy=\"" << format_fixed(y, 2)
        << "\" r=\"5\" fill=\"" << fill << "\" stroke=\"black\"><title>" << r.cell << " trial "
        << r.trial << "</title></circle>\n";
    }
  }
  s << "</g>\n</svg>\n";
  return s.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

/// Writes cells.csv, trials.csv and scatter.svg folded from persisted records.
inline std::vector<CellResult> report_tables(const fs::path& results_dir, const fs::path& out_dir) {
  const auto cells = fold_cells(load_trials(results_dir));
  if (cells.empty()) throw std::invalid_argument("report: no trial records under " + results_dir.string());
  write_text(out_dir / "cells.csv", cells_csv(cells));
  write_text(out_dir / "trials.csv", trials_csv(cells));
  write_text(out_dir / "scatter.svg", scatter_svg(cells));
  return cells;
}

// Step-size sweep -------------------------------------------------------------------

struct SweepPoint {
  double step = 0.0;
  double range = 0.0;  // largest query-to-mapping-viewpoint distance
  std::vector<CellResult> cells;
  double mean_final_mm = 0.0;
  double success_rate = 0.0;
};

/// Coarsens the map with the mapping step: grid spacing and texel size scale
/// with step / 0.4 m. Queries are rendered from the full-resolution world.
inline TerrainSpec degrade_for_step(TerrainSpec t, double step, double reference = 0.4) {
  const double factor = std::max(1.0, step / reference);
  t.grid *= factor;
  t.texture_size = std::max(64, int(std::lround(t.texture_size / factor)));
  return t;
}

inline std::vector<SweepPoint> step_size_sweep(const ExperimentConfig& base,
                                               const std::vector<double>& steps,
                                               const fs::path& out_dir, bool include_timing = false,
                                               std::ostream* log = nullptr) {
  base.validate();
  if (steps.empty()) throw std::invalid_argument("sweep: no step sizes");
  for (double step : steps) {
    if (!(step > 0.0)) throw std::invalid_argument("sweep: step sizes must be positive");
  }
  std::vector<SweepPoint> out;
  for (double step : steps) {
    ExperimentConfig cfg = base;
    cfg.mapping.step = step;
    if (cfg.scene_cache.empty()) cfg.scene_cache = (out_dir / "scenes").string();
    const fs::path dir = out_dir / ("step_" + format_fixed(step, 2));
    detail::run_trials(cfg, dir, include_timing, log,
                       [&](const TerrainSpec& t) { return degrade_for_step(t, step); });
    SweepPoint p;
    p.step = step;
    p.cells = fold_cells(load_trials(dir));
    int trials = 0, successes = 0;
    double sum = 0.0;
    for (const auto& c : p.cells) {
      for (const auto& r : c.records) {
        ++trials;
        p.range = std::max(p.range, r.map_distance);
        if (!r.success) continue;
        ++successes;
        sum += 1000.0 * r.final_error_m;
      }
    }
    p.success_rate = trials ? double(successes) / trials : 0.0;
    p.mean_final_mm = successes ? sum / successes : 0.0;
    write_text(dir / "tables" / "cells.csv", cells_csv(p.cells));
    out.push_back(std::move(p));
  }
  std::ostringstream s;
  s << "step_m,range_m,success_rate,mean_final_error_mm\n";
  for (const auto& p : out) {
    s << format_fixed(p.step, 2) << ',' << format_fixed(p.range, 3) << ','
      << format_fixed(p.success_rate, 4) << ',' << format_fixed(p.mean_final_mm, 2) << '\n';
  }
  write_text(out_dir / "sweep.csv", s.str());
  return out;
}

}  // namespace vtsm
