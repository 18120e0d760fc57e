#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "r2diff/dataset.hpp"
#include "r2diff/denoiser.hpp"
#include "r2diff/error.hpp"
#include "r2diff/experiment.hpp"
#include "r2diff/pipeline.hpp"
#include "r2diff/schedule.hpp"
#include "r2diff/synth.hpp"

namespace r2diff {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct GenArgs {
  std::string family;
  std::size_t J = 512;
  std::size_t T = 100;
  std::size_t held_out = 128;
  std::uint64_t seed = 0;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t distractors = 2;
  double blob_radius = 2.0;
  std::string out;
};

struct TuneArgs {
  std::string dataset;
  std::size_t rank = 1;
  std::size_t steps = 1000;
  double beta0 = 1e-4;
  double w_r = 0.01;
  double w_g = 0.0;
  double delta_min = 1e-6;
  std::string variance = "ddpm";
  std::string out;
};

struct ArchArgs {
  std::size_t hidden = 64;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t time_embed = 64;
  std::size_t ffn = 2;
};

struct TrainArgs {
  std::string dataset;
  std::string schedule;
  bool basic = false;
  std::size_t steps_N = 1000;
  std::string variance = "ddpm";
  std::size_t train_steps = 2000;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::string optimizer = "adam";
  double clip = 1.0;
  bool no_cosine = false;
  ArchArgs arch;
  std::string out;
  std::string loss_csv;
  std::size_t log_every = 0;
};

struct EvalArgs {
  std::string dataset;
  std::string model;
  std::string schedule;
  bool basic = false;
  std::size_t steps_N = 1000;
  std::string variance = "ddpm";
  std::string mode = "ret-ste";
  std::size_t n_start = 500;
  std::uint64_t seed = 0;
  std::size_t max_episodes = 0;
  double w_r = 0.01;
  double w_g = 0.0;
  double tau_pos = 1.5;
  std::string csv;
};

struct SweepArgs {
  std::string config;
  std::string out;
};

NoiseSchedule load_or_basic(const std::string& file, bool basic, std::size_t N,
                            const std::string& variance) {
  if (basic == !file.empty()) throw InvalidConfig("give exactly one of --schedule FILE or --basic");
  if (basic) return basic_schedule(N, 1e-4, 0.02, parse_posterior_variance(variance));
  return read_schedule(file);
}

int run_gen(const GenArgs& a, std::ostream& out) {
  TaskFamily fam = TaskFamily::defaults(parse_family(a.family));
  fam.distractors = a.distractors;
  fam.blob_radius = a.blob_radius;
  const GridShape grid{a.height, a.width, kSceneChannels};
  const GeneratedData data = generate_dataset(fam, a.J, a.T, grid, a.seed, a.held_out);
  save_generated(a.out, data);
  const GeneratedPaths p = generated_paths(a.out);
  out << "family " << to_string(fam.id) << "\n"
      << "train " << p.train.string() << " (" << data.train.size() << " episodes)\n"
      << "held_out " << p.held_out.string() << " (" << data.held_out.size() << " episodes)\n"
      << "sidecar " << p.sidecar.string() << "\n";
  return 0;
}

int run_tune(const TuneArgs& a, std::ostream& out) {
  const MotionDataset ds = read_dataset(a.dataset);
  TuneOptions opts;
  opts.target.rank = a.rank;
  opts.target.weights = {a.w_r, a.w_g};
  opts.target.delta_min = a.delta_min;
  opts.beta0 = a.beta0;
  opts.steps = a.steps;
  opts.variance = parse_posterior_variance(a.variance);
  const TunedSchedule t = tune(ds, opts);
  out << "rank " << t.result.rank << "\n"
      << "max_nn_sq_distance " << fmt(t.result.max_nn_sq_distance) << "\n"
      << "raw_max_nn_sq_distance " << fmt(t.result.raw_max_nn_sq_distance) << "\n"
      << "alpha_bar_N " << fmt(t.result.target_alpha_bar) << "\n"
      << "achieved_alpha_bar_N " << fmt(t.schedule.alpha_bar_final()) << "\n"
      << "gamma " << fmt(t.result.gamma) << "\n"
      << "beta0 " << fmt(t.result.beta0) << "\n"
      << "N " << t.schedule.steps() << "\n";
  if (!a.out.empty()) {
    write_schedule(a.out, t.schedule);
    out << "schedule " << a.out << "\n";
  }
  return 0;
}

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const MotionDataset ds = read_dataset(a.dataset);
  const NoiseSchedule s = load_or_basic(a.schedule, a.basic, a.steps_N, a.variance);
  ArchConfig arch;
  arch.timesteps = ds.meta.timesteps;
  arch.feature_channels = ds.meta.channels;
  arch.hidden = a.arch.hidden;
  arch.blocks = a.arch.blocks;
  arch.heads = a.arch.heads;
  arch.time_embed = a.arch.time_embed;
  arch.ffn_multiplier = a.arch.ffn;
  fit_input_normalization(arch, ds);
  TrainConfig cfg;
  cfg.steps = a.train_steps;
  cfg.batch_size = a.batch;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  cfg.optimizer = parse_optimizer(a.optimizer);
  cfg.clip_norm = a.clip;
  cfg.cosine_decay = !a.no_cosine;
  TrainProgress progress;
  if (a.log_every > 0) {
    progress = [&err, every = a.log_every](std::size_t step, double loss) {
      if (step % every == 0) err << "step " << step << " loss " << loss << "\n";
    };
  }
  const TrainingRun run = train(ds, s, arch, cfg, progress);
  write_checkpoint(a.out, run.model);
  if (!a.loss_csv.empty()) write_loss_curve(a.loss_csv, run.loss_curve);
  out << "parameters " << run.model.parameter_count() << "\n"
      << "steps " << run.loss_curve.size() << "\n";
  if (!run.loss_curve.empty()) out << "final_loss " << fmt(run.loss_curve.back()) << "\n";
  out << "model " << a.out << "\n";
  return 0;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  LoadedBenchmark bench = load_generated(a.dataset);
  if (a.max_episodes > 0 && bench.held_out.size() > a.max_episodes) {
    bench.held_out.resize(a.max_episodes);
  }
  const NoiseSchedule s = load_or_basic(a.schedule, a.basic, a.steps_N, a.variance);
  if (!std::filesystem::exists(a.model)) throw NotFound("model checkpoint '" + a.model + "' not found");
  const DenoiserModel model = read_checkpoint(a.model);
  TaskFamily fam = TaskFamily::defaults(static_cast<FamilyId>(bench.train.meta.family_id));
  fam.tau_pos = a.tau_pos;
  InferenceConfig ic;
  ic.mode = parse_inference_mode(a.mode);
  ic.steps = s.steps();
  ic.n_start = ic.mode == InferenceMode::rand ? s.steps() : a.n_start;
  ic.seed = a.seed;
  ic.weights = {a.w_r, a.w_g};
  const auto outcomes = evaluate_episodes(model, s, bench.train, bench.held_out, fam, ic);
  const Aggregate agg = aggregate(outcomes);
  char buf[128];
  std::snprintf(buf, sizeof buf, "success_rate %.4f\nmean_final_err %.6f\nepisodes %zu\n",
                agg.success_rate, agg.mean_final_err, agg.episodes);
  out << buf;
  if (!a.csv.empty()) {
    Condition c;
    c.id = "eval";
    c.mode = ic.mode;
    c.schedule = a.basic ? ScheduleKind::basic : ScheduleKind::tuned;
    c.n_start = ic.n_start;
    c.steps = s.steps();
    const ReportRow row{c.id, to_string(c.mode), to_string(c.schedule), a.basic ? 0u : 1u,
                        c.n_start, c.steps, to_string(fam.id), agg.success_rate,
                        agg.mean_final_err, agg.episodes};
    write_report_csv(a.csv, std::span<const ReportRow>(&row, 1));
  }
  return 0;
}

int run_sweep(const SweepArgs& a, std::ostream& out) {
  ExperimentConfig cfg = parse_experiment_config(a.config);
  if (!a.out.empty()) cfg.output_dir = a.out;
  const ExperimentReport report = run_experiment(cfg);
  write_report_files(cfg.output_dir, report);
  out << format_summary(report) << "report " << (cfg.output_dir / "report.csv").string() << "\n";
  return 0;
}

int run_inspect(const std::string& file, std::ostream& out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw NotFound("cannot open '" + file + "'");
  char magic[4] = {};
  in.read(magic, 4);
  const std::string m(magic, static_cast<std::size_t>(in.gcount()));
  in.close();
  if (m == "R2DF") {
    const DatasetHeader h = read_dataset_header(file);
    out << "kind dataset\nversion " << h.version << "\nentries " << h.entries << "\ntimesteps "
        << h.meta.timesteps << "\nmotion_dim " << h.motion_dim << "\ngrid " << h.meta.height
        << "x" << h.meta.width << "x" << h.meta.channels << "\nseed " << h.meta.seed
        << "\nfamily " << to_string(static_cast<FamilyId>(h.meta.family_id)) << "\n";
    return 0;
  }
  if (m == "R2DM") {
    const ArchConfig a = read_checkpoint_arch(file);
    out << "kind checkpoint\ntimesteps " << a.timesteps << "\nfeature_channels "
        << a.feature_channels << "\nhidden " << a.hidden << "\nblocks " << a.blocks
        << "\nheads " << a.heads << "\ntime_embed " << a.time_embed << "\nffn_multiplier "
        << a.ffn_multiplier << "\nparameters " << parameter_count(a) << "\n";
    return 0;
  }
  const NoiseSchedule s = read_schedule(file);
  out << "kind schedule\nN " << s.steps() << "\nbeta0 " << fmt(s.beta0()) << "\ngamma "
      << fmt(s.gamma()) << "\nvariance " << to_string(s.variance()) << "\nbeta_1 "
      << fmt(s.beta(1)) << "\nbeta_N " << fmt(s.beta(s.steps())) << "\nalpha_bar_N "
      << fmt(s.alpha_bar_final()) << "\n";
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieval-initialized diffusion for motion prediction: benchmark tools", "r2diff"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic benchmark family");
  g->add_option("--family", gen.family, "reach | reach-grasp | bimodal-avoid")
      ->required()
      ->check(CLI::IsMember({"reach", "reach-grasp", "bimodal-avoid"}));
  g->add_option("--J", gen.J, "training episodes");
  g->add_option("--T", gen.T, "timesteps per motion");
  g->add_option("--held-out", gen.held_out, "evaluation episodes");
  g->add_option("--seed", gen.seed);
  g->add_option("--height", gen.height);
  g->add_option("--width", gen.width);
  g->add_option("--distractors", gen.distractors);
  g->add_option("--blob-radius", gen.blob_radius);
  g->add_option("--out", gen.out, "dataset path; held-out set and sidecar go next to it")
      ->required();

  TuneArgs tn;
  auto* t = app.add_subcommand("tune", "fit a noise schedule to a dataset");
  t->add_option("--dataset", tn.dataset)->required();
  t->add_option("--rank", tn.rank, "neighbor rank k");
  t->add_option("--N", tn.steps, "diffusion steps");
  t->add_option("--beta0", tn.beta0);
  t->add_option("--w-r", tn.w_r, "rotation weight");
  t->add_option("--w-g", tn.w_g, "grasp weight");
  t->add_option("--delta-min", tn.delta_min);
  t->add_option("--variance", tn.variance, "ddpm | paper")->check(CLI::IsMember({"ddpm", "paper"}));
  t->add_option("--out", tn.out, "write the schedule here");

  TrainArgs tr;
  auto* r = app.add_subcommand("train", "train a denoiser");
  r->add_option("--dataset", tr.dataset)->required();
  r->add_option("--schedule", tr.schedule, "schedule file from `tune`");
  r->add_flag("--basic", tr.basic, "use the conventional linear schedule");
  r->add_option("--N", tr.steps_N, "steps of the basic schedule");
  r->add_option("--variance", tr.variance, "basic schedule variance: ddpm | paper")
      ->check(CLI::IsMember({"ddpm", "paper"}));
  r->add_option("--steps", tr.train_steps, "training steps");
  r->add_option("--batch", tr.batch);
  r->add_option("--lr", tr.lr);
  r->add_option("--seed", tr.seed);
  r->add_option("--optimizer", tr.optimizer, "adam | sgd")->check(CLI::IsMember({"adam", "sgd"}));
  r->add_option("--clip", tr.clip, "global gradient-norm clip (0 = off)");
  r->add_flag("--no-cosine", tr.no_cosine, "constant learning rate");
  r->add_option("--hidden", tr.arch.hidden);
  r->add_option("--blocks", tr.arch.blocks);
  r->add_option("--heads", tr.arch.heads);
  r->add_option("--time-embed", tr.arch.time_embed);
  r->add_option("--ffn", tr.arch.ffn, "feed-forward width multiplier");
  r->add_option("--out", tr.out, "checkpoint path")->required();
  r->add_option("--loss-csv", tr.loss_csv);
  r->add_option("--log-every", tr.log_every, "print the loss to stderr every k steps");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate one condition on the held-out episodes");
  e->add_option("--dataset", ev.dataset)->required();
  e->add_option("--model", ev.model)->required();
  e->add_option("--schedule", ev.schedule);
  e->add_flag("--basic", ev.basic);
  e->add_option("--N", ev.steps_N);
  e->add_option("--variance", ev.variance)->check(CLI::IsMember({"ddpm", "paper"}));
  e->add_option("--mode", ev.mode, "rand | ret-ste | ret-mse | ret-cheat")
      ->check(CLI::IsMember({"rand", "ret-ste", "ret-mse", "ret-cheat"}));
  e->add_option("--n-start", ev.n_start);
  e->add_option("--seed", ev.seed);
  e->add_option("--max-episodes", ev.max_episodes);
  e->add_option("--w-r", ev.w_r);
  e->add_option("--w-g", ev.w_g);
  e->add_option("--tau-pos", ev.tau_pos);
  e->add_option("--csv", ev.csv);

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "run a condition grid from a config file");
  s->add_option("--config", sw.config)->required();
  s->add_option("--out", sw.out, "report directory (overrides the config)");

  std::string inspect_file;
  auto* in = app.add_subcommand("inspect", "print the header of a dataset, schedule or checkpoint");
  in->add_option("file", inspect_file)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*g) return run_gen(gen, out);
    if (*t) return run_tune(tn, out);
    if (*r) return run_train(tr, out, err);
    if (*e) return run_eval(ev, out);
    if (*s) return run_sweep(sw, out);
    if (*in) return run_inspect(inspect_file, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  }
  return 1;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace r2diff
