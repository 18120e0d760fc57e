#include "r2diff/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "r2diff/error.hpp"

namespace r2diff {

std::string to_string(ScheduleKind k) { return k == ScheduleKind::basic ? "basic" : "tuned"; }

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "tuned") return ScheduleKind::tuned;
  if (s == "basic") return ScheduleKind::basic;
  throw InvalidConfig("unknown schedule '" + s + "' (expected tuned or basic)");
}

std::string Condition::schedule_tag() const {
  if (schedule == ScheduleKind::basic) return "basic-N" + std::to_string(steps);
  return "tuned-r" + std::to_string(rank) + "-N" + std::to_string(steps);
}

void Condition::validate() const {
  if (id.empty()) throw InvalidConfig("condition without an id");
  if (steps == 0) throw InvalidConfig("condition '" + id + "': N must be positive");
  if (n_start > steps) {
    throw InvalidConfig("condition '" + id + "': n_start=" + std::to_string(n_start) +
                        " exceeds N=" + std::to_string(steps));
  }
  if (rank == 0) throw InvalidConfig("condition '" + id + "': rank must be >= 1");
}

void ExperimentConfig::validate() const {
  if (families.empty()) throw InvalidConfig("experiment names no [family ...] section");
  if (conditions.empty()) throw InvalidConfig("experiment names no [condition ...] section");
  weights.validate();
  std::set<std::string> ids;
  for (const auto& c : conditions) {
    c.validate();
    if (!ids.insert(c.id).second) throw InvalidConfig("duplicate condition id '" + c.id + "'");
  }
  std::set<std::string> names;
  for (const auto& f : families) {
    f.params.validate();
    if (!names.insert(f.name).second) throw InvalidConfig("duplicate family '" + f.name + "'");
    if (f.name == "all") throw InvalidConfig("'all' is reserved for aggregate rows");
  }
}

namespace {

namespace pt = boost::property_tree;

template <typename T>
T parse_value(const std::string& section, const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw InvalidConfig("[" + section + "] " + key + ": cannot parse '" + text + "'");
  }
  return v;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

void parse_experiment_section(const pt::ptree& sec, ExperimentConfig& cfg,
                              const std::filesystem::path& base) {
  for (const auto& [key, node] : sec) {
    const std::string v = node.get_value<std::string>();
    if (key == "seed") cfg.seed = parse_value<std::uint64_t>("experiment", key, v);
    else if (key == "output") cfg.output_dir = resolve(base, v);
    else if (key == "w_r") cfg.weights.rotation = parse_value<double>("experiment", key, v);
    else if (key == "w_g") cfg.weights.grasp = parse_value<double>("experiment", key, v);
    else if (key == "similarity_guard") cfg.similarity_guard = parse_value<double>("experiment", key, v);
    else if (key == "beta0") cfg.beta0 = parse_value<double>("experiment", key, v);
    else if (key == "delta_min") cfg.delta_min = parse_value<double>("experiment", key, v);
    else if (key == "variance") cfg.variance = parse_posterior_variance(v);
    else if (key == "max_episodes") cfg.max_episodes = parse_value<std::size_t>("experiment", key, v);
    else throw InvalidConfig("[experiment]: unknown key '" + key + "'");
  }
}

FamilyArtifacts parse_family_section(const std::string& name, const pt::ptree& sec,
                                     const std::filesystem::path& base) {
  FamilyArtifacts f;
  f.name = name;
  const std::string label = "family " + name;
  FamilyId id = FamilyId::reach;
  bool have_id = false;
  if (auto k = sec.get_optional<std::string>("kind")) {
    id = parse_family(*k);
    have_id = true;
  } else {
    try {
      id = parse_family(name);
      have_id = true;
    } catch (const InvalidConfig&) {
    }
  }
  if (!have_id) {
    throw InvalidConfig("[" + label + "]: name is not a task family; add kind = reach|reach-grasp|bimodal-avoid");
  }
  f.params = TaskFamily::defaults(id);
  for (const auto& [key, node] : sec) {
    const std::string v = node.get_value<std::string>();
    if (key == "kind") continue;
    if (key == "dataset") f.dataset = resolve(base, v);
    else if (key.rfind("model_", 0) == 0) f.models[key.substr(6)] = resolve(base, v);
    else if (key.rfind("schedule_", 0) == 0) f.schedules[key.substr(9)] = resolve(base, v);
    else if (key == "tau_pos") f.params.tau_pos = parse_value<double>(label, key, v);
    else if (key == "tau_grasp") f.params.tau_grasp = parse_value<double>(label, key, v);
    else if (key == "wall_radius") f.params.wall_radius = parse_value<double>(label, key, v);
    else throw InvalidConfig("[" + label + "]: unknown key '" + key + "'");
  }
  if (f.dataset.empty()) throw InvalidConfig("[" + label + "]: missing 'dataset'");
  return f;
}

Condition parse_condition_section(const std::string& id, const pt::ptree& sec) {
  Condition c;
  c.id = id;
  const std::string label = "condition " + id;
  for (const auto& [key, node] : sec) {
    const std::string v = node.get_value<std::string>();
    if (key == "mode") c.mode = parse_inference_mode(v);
    else if (key == "schedule") c.schedule = parse_schedule_kind(v);
    else if (key == "rank") c.rank = parse_value<std::size_t>(label, key, v);
    else if (key == "n_start") c.n_start = parse_value<std::size_t>(label, key, v);
    else if (key == "N") c.steps = parse_value<std::size_t>(label, key, v);
    else throw InvalidConfig("[" + label + "]: unknown key '" + key + "'");
  }
  if (c.mode == InferenceMode::rand) c.n_start = c.steps;
  return c;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw NotFound("experiment config '" + path.string() + "' not found");
  }
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw InvalidConfig("cannot parse '" + path.string() + "': " + e.message() + " (line " +
                        std::to_string(e.line()) + ")");
  }
  const std::filesystem::path base = path.parent_path();
  ExperimentConfig cfg;
  cfg.output_dir = base / "report";
  for (const auto& [section, node] : tree) {
    if (section == "experiment") {
      parse_experiment_section(node, cfg, base);
    } else if (section.rfind("family ", 0) == 0) {
      cfg.families.push_back(parse_family_section(section.substr(7), node, base));
    } else if (section.rfind("condition ", 0) == 0) {
      cfg.conditions.push_back(parse_condition_section(section.substr(10), node));
    } else {
      throw InvalidConfig("'" + path.string() + "': unknown section [" + section + "]");
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<EpisodeOutcome> evaluate_episodes(const NoisePredictor& model, const NoiseSchedule& s,
                                              const MotionDataset& train,
                                              std::span<const Episode> episodes,
                                              const TaskFamily& family,
                                              const InferenceConfig& cfg) {
  std::vector<InferenceQuery> queries;
  queries.reserve(episodes.size());
  for (const Episode& e : episodes) queries.push_back({&e.scene, &e.gt_motion, e.index});
  const auto results = infer_batch(model, s, queries, train, cfg);
  std::vector<EpisodeOutcome> out(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    out[i].episode_index = episodes[i].index;
    out[i].success = evaluate_success(results[i].motion, episodes[i], family);
    out[i].final_err = final_position_error(results[i].motion, episodes[i]);
    out[i].retrieval = results[i].retrieval;
  }
  return out;
}

Aggregate aggregate(std::span<const EpisodeOutcome> outcomes) {
  std::vector<const EpisodeOutcome*> sorted;
  sorted.reserve(outcomes.size());
  for (const auto& o : outcomes) sorted.push_back(&o);
  std::sort(sorted.begin(), sorted.end(), [](const EpisodeOutcome* a, const EpisodeOutcome* b) {
    return a->episode_index < b->episode_index;
  });
  Aggregate a;
  a.episodes = sorted.size();
  if (sorted.empty()) return a;
  std::size_t ok = 0;
  double err = 0.0;
  for (const auto* o : sorted) {
    ok += o->success ? 1 : 0;
    err += o->final_err;
  }
  a.success_rate = 100.0 * static_cast<double>(ok) / static_cast<double>(a.episodes);
  a.mean_final_err = err / static_cast<double>(a.episodes);
  return a;
}

namespace {

struct LoadedFamily {
  LoadedBenchmark bench;
  std::map<std::string, DenoiserModel> models;
  std::map<std::string, NoiseSchedule> schedules;
};

const NoiseSchedule& schedule_for(LoadedFamily& lf, const FamilyArtifacts& fa,
                                  const Condition& c, const ExperimentConfig& cfg) {
  const std::string tag = c.schedule_tag();
  if (auto it = lf.schedules.find(tag); it != lf.schedules.end()) return it->second;
  NoiseSchedule s;
  if (auto p = fa.schedules.find(tag); p != fa.schedules.end()) {
    s = read_schedule(p->second);
  } else if (c.schedule == ScheduleKind::basic) {
    s = basic_schedule(c.steps, 1e-4, 0.02, cfg.variance);
  } else {
    TuneOptions opts;
    opts.target.rank = c.rank;
    opts.target.weights = cfg.weights;
    opts.target.delta_min = cfg.delta_min;
    opts.beta0 = cfg.beta0;
    opts.steps = c.steps;
    opts.variance = cfg.variance;
    s = tune(lf.bench.train, opts).schedule;
  }
  if (s.steps() != c.steps) {
    throw InvalidConfig("family '" + fa.name + "': schedule for " + tag + " has N=" +
                        std::to_string(s.steps()));
  }
  return lf.schedules.emplace(tag, std::move(s)).first->second;
}

const DenoiserModel& model_for(LoadedFamily& lf, const FamilyArtifacts& fa, const Condition& c) {
  const std::string tag = c.schedule_tag();
  if (auto it = lf.models.find(tag); it != lf.models.end()) return it->second;
  const auto p = fa.models.find(tag);
  if (p == fa.models.end()) {
    throw NotFound("family '" + fa.name + "' has no model for condition '" + c.id +
                   "'; add 'model_" + tag + " = <checkpoint>' to [family " + fa.name + "]");
  }
  if (!std::filesystem::exists(p->second)) {
    throw NotFound("model checkpoint '" + p->second.string() + "' not found (family '" +
                   fa.name + "', " + tag + ")");
  }
  return lf.models.emplace(tag, read_checkpoint(p->second)).first->second;
}

ReportRow make_row(const Condition& c, const std::string& family, const Aggregate& a) {
  return {c.id,      to_string(c.mode), to_string(c.schedule), c.schedule == ScheduleKind::tuned ? c.rank : 0,
          c.effective_start(), c.steps,  family, a.success_rate, a.mean_final_err, a.episodes};
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<LoadedFamily> loaded(cfg.families.size());
  for (std::size_t f = 0; f < cfg.families.size(); ++f) {
    const auto paths = generated_paths(cfg.families[f].dataset);
    for (const auto& p : {paths.train, paths.held_out, paths.sidecar}) {
      if (!std::filesystem::exists(p)) {
        throw NotFound("family '" + cfg.families[f].name + "': missing '" + p.string() +
                       "' (run `r2diff gen --out " + paths.train.string() + "` first)");
      }
    }
    loaded[f].bench = load_generated(cfg.families[f].dataset);
    if (cfg.max_episodes > 0 && loaded[f].bench.held_out.size() > cfg.max_episodes) {
      loaded[f].bench.held_out.resize(cfg.max_episodes);
    }
  }

  ExperimentReport report;
  for (const Condition& c : cfg.conditions) {
    std::vector<EpisodeOutcome> all;
    for (std::size_t f = 0; f < cfg.families.size(); ++f) {
      const FamilyArtifacts& fa = cfg.families[f];
      LoadedFamily& lf = loaded[f];
      const NoiseSchedule& s = schedule_for(lf, fa, c, cfg);
      const DenoiserModel& model = model_for(lf, fa, c);
      InferenceConfig ic;
      ic.mode = c.mode;
      ic.steps = c.steps;
      ic.n_start = c.effective_start();
      ic.seed = cfg.seed;
      ic.weights = cfg.weights;
      ic.similarity_guard = cfg.similarity_guard;

      const auto t0 = std::chrono::steady_clock::now();
      auto outcomes = evaluate_episodes(model, s, lf.bench.train, lf.bench.held_out, fa.params, ic);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      report.timings.push_back({c.id, fa.name, secs});
      report.rows.push_back(make_row(c, fa.name, aggregate(outcomes)));
      for (const auto& o : outcomes) {
        if (o.retrieval) {
          report.traces.push_back({c.id, fa.name, o.episode_index, to_string(o.retrieval->method),
                                   o.retrieval->index, o.retrieval->score});
        }
        // Episode indices repeat across families; offset keeps the pooled
        // reduction order well defined.
        EpisodeOutcome pooled = o;
        pooled.episode_index = o.episode_index + f * (std::size_t{1} << 40);
        all.push_back(pooled);
      }
    }
    if (cfg.families.size() > 1) report.rows.push_back(make_row(c, "all", aggregate(all)));
  }
  return report;
}

ExperimentReport run_experiment(const std::filesystem::path& config_path) {
  const ExperimentConfig cfg = parse_experiment_config(config_path);
  ExperimentReport report = run_experiment(cfg);
  write_report_files(cfg.output_dir, report);
  return report;
}

void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw NotFound("cannot open '" + path.string() + "' for writing");
  out << "condition_id,mode,schedule,rank,n_start,N,family,success_rate,mean_final_err,episodes\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.condition_id << ',' << r.mode << ',' << r.schedule << ',' << r.rank << ','
        << r.n_start << ',' << r.steps << ',' << r.family << ',';
    std::snprintf(buf, sizeof buf, "%.4f,%.6f", r.success_rate, r.mean_final_err);
    out << buf << ',' << r.episodes << '\n';
  }
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> traces) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw NotFound("cannot open '" + path.string() + "' for writing");
  out << "query_id,method,retrieved_id,score\n";
  char buf[64];
  for (const auto& t : traces) {
    std::snprintf(buf, sizeof buf, "%.9g", t.score);
    out << t.query_id << ',' << t.method << ',' << t.retrieved_id << ',' << buf << '\n';
  }
}

std::string format_summary(const ExperimentReport& report) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-22s %-10s %-6s %4s %7s %6s %-14s %9s %10s %8s\n", "condition",
                "mode", "sched", "rank", "n_start", "N", "family", "success%", "final_err",
                "episodes");
  out << buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%-22s %-10s %-6s %4zu %7zu %6zu %-14s %9.2f %10.4f %8zu\n",
                  r.condition_id.c_str(), r.mode.c_str(), r.schedule.c_str(), r.rank, r.n_start,
                  r.steps, r.family.c_str(), r.success_rate, r.mean_final_err, r.episodes);
    out << buf;
  }
  double total = 0.0;
  out << "\nruntime (s)\n";
  for (const auto& t : report.timings) {
    std::snprintf(buf, sizeof buf, "  %-22s %-14s %9.2f\n", t.condition_id.c_str(),
                  t.family.c_str(), t.seconds);
    out << buf;
    total += t.seconds;
  }
  std::snprintf(buf, sizeof buf, "  %-37s %9.2f\n", "total", total);
  out << buf;
  return out.str();
}

std::string render_success_svg(std::span<const ReportRow> rows) {
  // One bar per condition, using the pooled row when there are several families.
  std::vector<const ReportRow*> bars;
  std::set<std::string> pooled;
  for (const auto& r : rows) {
    if (r.family == "all") pooled.insert(r.condition_id);
  }
  std::set<std::string> seen;
  for (const auto& r : rows) {
    const bool want = pooled.count(r.condition_id) ? r.family == "all" : true;
    if (want && seen.insert(r.condition_id).second) bars.push_back(&r);
  }
  const int bar_w = 48;
  const int gap = 24;
  const int left = 50;
  const int top = 30;
  const int plot_h = 200;
  const int width = left + static_cast<int>(bars.size()) * (bar_w + gap) + gap;
  const int height = top + plot_h + 90;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">success rate (%)</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width - gap / 2
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    const int y = top + plot_h - tick * plot_h / 100;
    svg << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << tick
        << "</text>\n";
  }
  char buf[32];
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const ReportRow& r = *bars[i];
    const int x = left + gap + static_cast<int>(i) * (bar_w + gap);
    const int h = static_cast<int>(r.success_rate / 100.0 * plot_h + 0.5);
    svg << "<rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar_w
        << "\" height=\"" << h << "\" fill=\"#4a7ab5\"/>\n";
    std::snprintf(buf, sizeof buf, "%.1f", r.success_rate);
    svg << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << top + plot_h - h - 4
        << "\" text-anchor=\"middle\">" << buf << "</text>\n";
    svg << "<text transform=\"translate(" << x + bar_w / 2 << "," << top + plot_h + 12
        << ") rotate(30)\">" << r.condition_id << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_report_files(const std::filesystem::path& dir, const ExperimentReport& report) {
  std::filesystem::create_directories(dir);
  write_report_csv(dir / "report.csv", report.rows);
  // One trace file per (condition, family) that retrieved anything.
  std::vector<TraceRow> group;
  for (std::size_t i = 0; i < report.traces.size(); ++i) {
    group.push_back(report.traces[i]);
    const bool last = i + 1 == report.traces.size() ||
                      report.traces[i + 1].condition_id != group.front().condition_id ||
                      report.traces[i + 1].family != group.front().family;
    if (last) {
      std::filesystem::create_directories(dir / "traces");
      write_trace_csv(dir / "traces" / (group.front().condition_id + "." + group.front().family + ".csv"),
                      group);
      group.clear();
    }
  }
  {
    std::ofstream out(dir / "summary.txt", std::ios::trunc);
    if (!out) throw NotFound("cannot write '" + (dir / "summary.txt").string() + "'");
    out << format_summary(report);
  }
  std::ofstream svg(dir / "success.svg", std::ios::trunc);
  if (!svg) throw NotFound("cannot write '" + (dir / "success.svg").string() + "'");
  svg << render_success_svg(report.rows);
}

}  // namespace r2diff
