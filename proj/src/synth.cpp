#include "r2diff/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "r2diff/error.hpp"

namespace r2diff {

std::string to_string(FamilyId f) {
  switch (f) {
    case FamilyId::reach: return "reach";
    case FamilyId::reach_grasp: return "reach-grasp";
    case FamilyId::bimodal_avoid: return "bimodal-avoid";
  }
  return "reach";
}

FamilyId parse_family(const std::string& s) {
  if (s == "reach") return FamilyId::reach;
  if (s == "reach-grasp") return FamilyId::reach_grasp;
  if (s == "bimodal-avoid") return FamilyId::bimodal_avoid;
  throw InvalidConfig("unknown task family '" + s +
                      "' (expected reach, reach-grasp or bimodal-avoid)");
}

std::string to_string(DetourMode m) {
  switch (m) {
    case DetourMode::none: return "none";
    case DetourMode::left: return "left";
    case DetourMode::right: return "right";
  }
  return "none";
}

DetourMode parse_detour_mode(const std::string& s) {
  if (s == "none") return DetourMode::none;
  if (s == "left") return DetourMode::left;
  if (s == "right") return DetourMode::right;
  throw FormatError("unknown detour mode '" + s + "'");
}

TaskFamily TaskFamily::defaults(FamilyId id) {
  TaskFamily f;
  f.id = id;
  return f;
}

void TaskFamily::validate() const {
  if (!(tau_pos > 0.0)) throw InvalidConfig("tau_pos must be positive");
  if (!(blob_radius > 0.0) || !(wall_radius > 0.0)) {
    throw InvalidConfig("blob and wall radii must be positive");
  }
  if (!(arrival > 0.0 && arrival <= 1.0)) throw InvalidConfig("arrival must lie in (0, 1]");
  if (!(detour_clearance > 0.0)) throw InvalidConfig("detour clearance must be positive");
}

Point2 start_point(const GridShape& grid) {
  return {static_cast<double>(grid.width) / 2.0, static_cast<double>(grid.height) - 2.0};
}

Point2 wall_center(const GridShape& grid, double goal_u, double goal_v) {
  const Point2 s = start_point(grid);
  return {0.5 * (s.u + goal_u), 0.5 * (s.v + goal_v)};
}

namespace {

double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

double dist(double au, double av, double bu, double bv) { return std::hypot(au - bu, av - bv); }

void stamp_blob(SceneField& f, std::size_t channel, double cu, double cv, double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t y = 0; y < f.height(); ++y) {
    for (std::size_t x = 0; x < f.width(); ++x) {
      const double du = static_cast<double>(x) - cu;
      const double dv = static_cast<double>(y) - cv;
      double& cell = f.at(y, x, channel);
      cell = std::max(cell, std::exp(-(du * du + dv * dv) * inv));
    }
  }
}

struct Geometry {
  Point2 goal;
  std::vector<Point2> distractors;
};

Motion build_motion(const TaskFamily& fam, std::size_t T, const GridShape& grid, Point2 goal,
                    DetourMode mode, double yaw) {
  const Point2 s = start_point(grid);
  const double du = goal.u - s.u;
  const double dv = goal.v - s.v;
  const double len = std::hypot(du, dv);
  const double nu = len > 0.0 ? -dv / len : 0.0;
  const double nv = len > 0.0 ? du / len : 0.0;
  const double side = mode == DetourMode::left ? -1.0 : 1.0;
  const double amplitude =
      mode == DetourMode::none ? 0.0 : side * (fam.wall_radius + fam.detour_clearance);

  std::vector<HandState> states(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double phase = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 1.0;
    const double p = std::min(phase / fam.arrival, 1.0);
    const double e = p * p * (3.0 - 2.0 * p);
    const double bump = amplitude * std::sin(std::numbers::pi * e);
    HandState& h = states[t];
    h.position = {s.u + e * du + bump * nu, s.v + e * dv + bump * nv, 1.0 - 0.8 * e};
    const double a = yaw * e;
    h.rotation = {std::cos(a), std::sin(a), 0.0, -std::sin(a), std::cos(a), 0.0};
    h.grasp = (fam.grasping() && p >= 1.0) ? 1.0 : 0.0;
  }
  Motion m = Motion::from_states(states);
  for (double& x : m.flat()) x = round_f32(x);
  return m;
}

bool inside_grid(const Motion& m, const GridShape& grid) {
  const double max_u = static_cast<double>(grid.width - 1);
  const double max_v = static_cast<double>(grid.height - 1);
  for (std::size_t t = 0; t < m.timesteps(); ++t) {
    if (m.u(t) < 0.0 || m.u(t) > max_u || m.v(t) < 0.0 || m.v(t) > max_v) return false;
  }
  return true;
}

bool clear_of_wall(const Motion& m, Point2 wall, double radius) {
  for (std::size_t t = 0; t < m.timesteps(); ++t) {
    if (dist(m.u(t), m.v(t), wall.u, wall.v) < radius) return false;
  }
  return true;
}

constexpr int kMaxPlacementTries = 10000;

}  // namespace

Episode generate_episode(const TaskFamily& fam, std::size_t T, const GridShape& grid,
                         std::uint64_t seed, std::size_t index) {
  fam.validate();
  if (T == 0) throw InvalidConfig("episodes need T >= 1");
  if (grid.channels != kSceneChannels) {
    throw InvalidConfig("scenes use exactly " + std::to_string(kSceneChannels) + " channels");
  }
  const double margin = fam.blob_radius;
  const double max_u = static_cast<double>(grid.width) - 1.0 - margin;
  const double max_v = static_cast<double>(grid.height) - 1.0 - margin;
  const bool bimodal = fam.id == FamilyId::bimodal_avoid;
  const double max_goal_v = bimodal ? 0.5 * (static_cast<double>(grid.height) - 1.0) : max_v;
  if (grid.width < 8 || grid.height < 8 || max_u - margin < 2.0 || max_goal_v - margin < 1.0) {
    throw InvalidConfig("grid " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                        " is too small for blob margin " + std::to_string(margin));
  }

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fam.id), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> pick_u(margin, max_u);
  std::uniform_real_distribution<double> pick_v(margin, max_goal_v);
  std::uniform_real_distribution<double> pick_any_v(margin, max_v);
  std::uniform_real_distribution<double> pick_yaw(-fam.max_yaw, fam.max_yaw);
  std::bernoulli_distribution coin(0.5);

  Episode ep;
  ep.family = fam.id;
  ep.seed = seed;
  ep.index = index;
  ep.mode = bimodal ? (coin(rng) ? DetourMode::right : DetourMode::left) : DetourMode::none;
  const double yaw = pick_yaw(rng);
  const Point2 start = start_point(grid);
  const double min_travel = bimodal ? 2.0 * (fam.wall_radius + 1.0) : 4.0;

  for (int attempt = 0; attempt < kMaxPlacementTries; ++attempt) {
    Point2 goal{round_f32(pick_u(rng)), round_f32(pick_v(rng))};
    if (dist(goal.u, goal.v, start.u, start.v) < min_travel) continue;
    Motion m = build_motion(fam, T, grid, goal, ep.mode, yaw);
    if (!inside_grid(m, grid)) continue;
    const Point2 wall = wall_center(grid, goal.u, goal.v);
    if (bimodal && !clear_of_wall(m, wall, fam.wall_radius + 0.5)) continue;

    std::vector<Point2> distractors;
    for (int k = 0; k < kMaxPlacementTries && distractors.size() < fam.distractors; ++k) {
      const Point2 d{pick_u(rng), pick_any_v(rng)};
      if (dist(d.u, d.v, goal.u, goal.v) >= 3.0 * fam.blob_radius) distractors.push_back(d);
    }

    SceneField scene(grid.height, grid.width, grid.channels, 0.0);
    for (std::size_t y = 0; y < grid.height; ++y) {
      for (std::size_t x = 0; x < grid.width; ++x) scene.at(y, x, kBackgroundChannel) = 1.0;
    }
    stamp_blob(scene, kGoalChannel, goal.u, goal.v, fam.blob_radius);
    for (const Point2& d : distractors) stamp_blob(scene, kDistractorChannel, d.u, d.v, fam.blob_radius);
    if (bimodal) stamp_blob(scene, kWallChannel, wall.u, wall.v, fam.wall_radius);
    for (double& x : scene.values()) x = round_f32(x);

    ep.scene = std::move(scene);
    ep.gt_motion = std::move(m);
    ep.goal_u = round_f32(goal.u);  // the sidecar stores goals at float precision
    ep.goal_v = round_f32(goal.v);
    if (!evaluate_success(ep.gt_motion, ep, fam)) continue;
    return ep;
  }
  throw InvalidConfig("could not place objects for family " + to_string(fam.id) +
                      " on the given grid");
}

MotionDataset episodes_to_dataset(const std::vector<Episode>& eps, FamilyId family,
                                  std::size_t T, const GridShape& grid, std::uint64_t seed) {
  MotionDataset ds;
  ds.meta.seed = seed;
  ds.meta.family_id = static_cast<std::uint32_t>(family);
  ds.meta.timesteps = static_cast<std::uint32_t>(T);
  ds.meta.height = static_cast<std::uint32_t>(grid.height);
  ds.meta.width = static_cast<std::uint32_t>(grid.width);
  ds.meta.channels = static_cast<std::uint32_t>(grid.channels);
  ds.entries.reserve(eps.size());
  for (const Episode& e : eps) ds.entries.push_back({e.gt_motion, e.scene});
  return ds;
}

GeneratedData generate_dataset(const TaskFamily& family, std::size_t J, std::size_t T,
                               const GridShape& grid, std::uint64_t seed, std::size_t held_out) {
  if (J < 2) throw InvalidConfig("a dataset needs J >= 2 episodes");
  GeneratedData out;
  out.train_episodes.reserve(J);
  for (std::size_t i = 0; i < J; ++i) {
    out.train_episodes.push_back(generate_episode(family, T, grid, seed, i));
  }
  out.held_out.reserve(held_out);
  for (std::size_t i = 0; i < held_out; ++i) {
    out.held_out.push_back(generate_episode(family, T, grid, seed, J + i));
  }
  out.train = episodes_to_dataset(out.train_episodes, family.id, T, grid, seed);
  return out;
}

double final_position_error(const Motion& m, const Episode& ep) {
  if (m.timesteps() != ep.gt_motion.timesteps()) {
    throw InvalidInput("motion has T=" + std::to_string(m.timesteps()) + ", episode has T=" +
                       std::to_string(ep.gt_motion.timesteps()));
  }
  const std::size_t last = m.timesteps() - 1;
  return dist(m.u(last), m.v(last), ep.goal_u, ep.goal_v);
}

bool evaluate_success(const Motion& m, const Episode& ep, const TaskFamily& family) {
  const double err = final_position_error(m, ep);
  if (!(err <= family.tau_pos)) return false;
  const std::size_t last = m.timesteps() - 1;
  if (family.grasping() && !(m.grasp(last) >= family.tau_grasp)) return false;
  if (family.id == FamilyId::bimodal_avoid) {
    const GridShape grid{ep.scene.height(), ep.scene.width(), ep.scene.channels()};
    if (!clear_of_wall(m, wall_center(grid, ep.goal_u, ep.goal_v), family.wall_radius)) {
      return false;
    }
  }
  return true;
}

void write_sidecar(const std::filesystem::path& path, const std::vector<Episode>& eps) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw NotFound("cannot open '" + path.string() + "' for writing");
  out << "id,family,seed,goal_u,goal_v,mode\n";
  char buf[64];
  for (const Episode& e : eps) {
    out << e.index << ',' << to_string(e.family) << ',' << e.seed << ',';
    std::snprintf(buf, sizeof buf, "%.9g,%.9g", e.goal_u, e.goal_v);
    out << buf << ',' << to_string(e.mode) << '\n';
  }
}

std::vector<SidecarRow> read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("episode sidecar '" + path.string() + "' not found");
  std::string line;
  if (!std::getline(in, line) || line != "id,family,seed,goal_u,goal_v,mode") {
    throw FormatError("'" + path.string() + "' lacks the header id,family,seed,goal_u,goal_v,mode");
  }
  std::vector<SidecarRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) {
      throw FormatError("'" + path.string() + "' line " + std::to_string(lineno) +
                        ": expected 6 fields");
    }
    try {
      SidecarRow r;
      r.id = std::stoull(cells[0]);
      r.family = parse_family(cells[1]);
      r.seed = std::stoull(cells[2]);
      r.goal_u = round_f32(std::stod(cells[3]));
      r.goal_v = round_f32(std::stod(cells[4]));
      r.mode = parse_detour_mode(cells[5]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("'" + path.string() + "' line " + std::to_string(lineno) +
                        ": malformed number");
    } catch (const InvalidConfig& e) {
      throw FormatError("'" + path.string() + "' line " + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  return rows;
}

std::vector<Episode> episodes_from_files(const MotionDataset& ds,
                                         const std::vector<SidecarRow>& rows) {
  if (ds.size() != rows.size()) {
    throw FormatError("dataset has " + std::to_string(ds.size()) + " entries but the sidecar has " +
                      std::to_string(rows.size()) + " rows");
  }
  std::vector<Episode> eps;
  eps.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Episode e;
    e.scene = ds.entries[i].scene;
    e.gt_motion = ds.entries[i].motion;
    e.family = rows[i].family;
    e.seed = rows[i].seed;
    e.index = rows[i].id;
    e.goal_u = rows[i].goal_u;
    e.goal_v = rows[i].goal_v;
    e.mode = rows[i].mode;
    eps.push_back(std::move(e));
  }
  return eps;
}

GeneratedPaths generated_paths(const std::filesystem::path& dataset) {
  const std::filesystem::path dir = dataset.parent_path();
  const std::string stem = dataset.stem().string();
  return {dataset, dir / (stem + ".test.r2df"), dir / (stem + ".episodes.csv")};
}

void save_generated(const std::filesystem::path& dataset, const GeneratedData& data) {
  const GeneratedPaths p = generated_paths(dataset);
  write_dataset(p.train, data.train);
  const FamilyId fam = static_cast<FamilyId>(data.train.meta.family_id);
  const GridShape grid{data.train.meta.height, data.train.meta.width, data.train.meta.channels};
  write_dataset(p.held_out, episodes_to_dataset(data.held_out, fam, data.train.meta.timesteps,
                                                grid, data.train.meta.seed));
  std::vector<Episode> all = data.train_episodes;
  all.insert(all.end(), data.held_out.begin(), data.held_out.end());
  write_sidecar(p.sidecar, all);
}

LoadedBenchmark load_generated(const std::filesystem::path& dataset) {
  const GeneratedPaths p = generated_paths(dataset);
  LoadedBenchmark b;
  b.train = read_dataset(p.train);
  const MotionDataset test = read_dataset(p.held_out);
  const auto rows = read_sidecar(p.sidecar);
  if (rows.size() != b.train.size() + test.size()) {
    throw FormatError("sidecar '" + p.sidecar.string() + "' has " + std::to_string(rows.size()) +
                      " rows, expected " + std::to_string(b.train.size() + test.size()));
  }
  b.held_out = episodes_from_files(
      test, std::vector<SidecarRow>(rows.begin() + static_cast<std::ptrdiff_t>(b.train.size()),
                                    rows.end()));
  return b;
}

}  // namespace r2diff
