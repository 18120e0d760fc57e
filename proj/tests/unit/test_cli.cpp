#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "r2diff/dataset.hpp"
#include "r2diff/schedule.hpp"

using namespace r2diff;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli_main(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string value_of(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + " ", 0) == 0) return line.substr(key.size() + 1);
  }
  return {};
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct TempDir {
  fs::path dir;
  explicit TempDir(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"gen"}).code == 1);
  CHECK(cli({"gen", "--family", "reach", "--out", "x", "--J", "many"}).code == 1);
  const Run bad = cli({"gen", "--family", "cartwheel", "--out", "x"});
  CHECK(bad.code == 1);
  CHECK_FALSE(bad.err.empty());
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("runtime errors exit with 2") {
  TempDir t("r2diff_unit_cli_err");
  const Run r = cli({"tune", "--dataset", t / "absent.r2df"});
  CHECK(r.code == 2);
  CHECK(r.err.find("absent.r2df") != std::string::npos);
  CHECK(cli({"inspect", t / "absent.bin"}).code == 2);
}

TEST_CASE("gen is reproducible and tune matches the library") {
  TempDir t("r2diff_unit_cli_gen");
  const std::vector<std::string> a{"gen", "--family", "reach-grasp", "--J", "12", "--T", "10",
                                   "--held-out", "3", "--seed", "5", "--out", t / "a.r2df"};
  std::vector<std::string> b = a;
  b.back() = t / "b.r2df";
  REQUIRE(cli(a).code == 0);
  REQUIRE(cli(b).code == 0);
  CHECK(slurp(t / "a.r2df") == slurp(t / "b.r2df"));
  CHECK(slurp(t / "a.test.r2df") == slurp(t / "b.test.r2df"));

  const Run tuned = cli({"tune", "--dataset", t / "a.r2df", "--rank", "2", "--N", "200",
                         "--out", t / "a.sched"});
  REQUIRE(tuned.code == 0);
  TuneOptions opts;
  opts.target.rank = 2;
  opts.steps = 200;
  const TunedSchedule lib = tune(read_dataset(t / "a.r2df"), opts);
  CHECK(value_of(tuned.out, "alpha_bar_N") == g17(lib.result.target_alpha_bar));
  CHECK(value_of(tuned.out, "gamma") == g17(lib.result.gamma));
  CHECK(value_of(tuned.out, "N") == "200");
  const NoiseSchedule written = read_schedule(t / "a.sched");
  CHECK(written.gamma() == lib.schedule.gamma());
  CHECK(written.alpha_bar_final() == lib.schedule.alpha_bar_final());

  const Run info = cli({"inspect", t / "a.r2df"});
  CHECK(value_of(info.out, "entries") == "12");
  CHECK(value_of(info.out, "family") == "reach-grasp");
}

TEST_CASE("train then sweep writes one row per condition") {
  TempDir t("r2diff_unit_cli_sweep");
  REQUIRE(cli({"gen", "--family", "reach", "--J", "8", "--T", "10", "--held-out", "4", "--seed", "2",
               "--out", t / "reach.r2df"}).code == 0);
  REQUIRE(cli({"tune", "--dataset", t / "reach.r2df", "--N", "40", "--out", t / "tuned.sched"}).code == 0);
  const Run tr = cli({"train", "--dataset", t / "reach.r2df", "--schedule", t / "tuned.sched", "--steps", "5",
                      "--batch", "4", "--hidden", "8", "--blocks", "1", "--heads", "2", "--time-embed", "4",
                      "--out", t / "tuned.r2dm", "--loss-csv", t / "loss.csv"});
  REQUIRE(tr.code == 0);
  CHECK(value_of(tr.out, "steps") == "5");
  CHECK(fs::exists(t / "tuned.r2dm"));
  CHECK(slurp(t / "loss.csv").rfind("step,loss\n", 0) == 0);
  CHECK(cli({"train", "--dataset", t / "reach.r2df", "--steps", "1", "--out", t / "x.r2dm"}).code != 0);

  std::ofstream(t / "grid.ini") << "[experiment]\nseed = 1\n\n[family reach]\ndataset = reach.r2df\n"
                                   "model_tuned-r1-N40 = tuned.r2dm\nschedule_tuned-r1-N40 = tuned.sched\n\n"
                                   "[condition ret]\nmode = ret-ste\nN = 40\nn_start = 20\n\n"
                                   "[condition rnd]\nmode = rand\nN = 40\n";
  const Run sw = cli({"sweep", "--config", t / "grid.ini", "--out", t / "rep"});
  REQUIRE(sw.code == 0);
  const std::string csv = slurp(t / "rep/report.csv");
  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[1].rfind("ret,ret-ste,tuned,1,20,40,reach,", 0) == 0);
  CHECK(lines[2].rfind("rnd,rand,tuned,1,40,40,reach,", 0) == 0);

  const Run ev = cli({"eval", "--dataset", t / "reach.r2df", "--model", t / "tuned.r2dm", "--schedule",
                      t / "tuned.sched", "--mode", "ret-mse", "--n-start", "0"});
  REQUIRE(ev.code == 0);
  CHECK(value_of(ev.out, "episodes") == "4");
}
