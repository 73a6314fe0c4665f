#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "gtep/model_io.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace gtep;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run gtep_run(std::vector<std::string> args) {
  args.insert(args.begin(), "gtep");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Splits a printed command line, honouring single quotes.
std::vector<std::string> split_command(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false, any = false;
  for (char c : line) {
    if (c == '\'') {
      quoted = !quoted;
      any = true;
    } else if (c == ' ' && !quoted) {
      if (any || !cur.empty()) out.push_back(cur);
      cur.clear();
      any = false;
    } else {
      cur += c;
    }
  }
  if (any || !cur.empty()) out.push_back(cur);
  return out;
}

std::string effective_line(const std::string& err) {
  const std::string key = "effective config: ";
  const auto at = err.find(key);
  REQUIRE(at != std::string::npos);
  return err.substr(at + key.size(), err.find('\n', at) - at - key.size());
}

// A small dataset plus a briefly trained model shared by several cases.
struct Workspace {
  test::TempDir dir;
  fs::path data = dir / "data";
  fs::path model = dir / "model.gtep";
  Workspace() {
    REQUIRE(gtep_run({"gen", "--out", data.string(), "--samples-per-trial", "400"}).code == 0);
    REQUIRE(gtep_run({"train", "--data", data.string(), "--out", model.string(), "--max-epochs", "2"}).code == 0);
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("gen writes six trials and oracle params") {
  test::TempDir dir;
  const auto r = gtep_run({"gen", "--out", (dir / "d").string()});
  REQUIRE(r.code == 0);
  std::size_t rows = 0, files = 0;
  for (const auto& e : fs::directory_iterator(dir / "d")) {
    if (e.path().extension() != ".csv") continue;
    ++files;
    rows += count_lines(test::slurp(e.path())) - 1;
  }
  CHECK(files == 6);
  CHECK(rows == 48000);
  const auto meta = nlohmann::json::parse(test::slurp(dir / "d" / "oracle_params.json"));
  CHECK(meta["schema"] == 1);
  CHECK(meta["oracle"]["rho"] == 0.95);
  CHECK(meta["oracle"]["noise_std"].get<double>() > 0.0);
  CHECK(meta["total_samples"] == 48000);
}

TEST_CASE("gen sample count and determinism") {
  test::TempDir dir;
  REQUIRE(gtep_run({"gen", "--out", (dir / "a").string(), "--samples-per-trial", "100", "--seed", "3"}).code == 0);
  REQUIRE(gtep_run({"gen", "--out", (dir / "b").string(), "--samples-per-trial", "100", "--seed", "3"}).code == 0);
  REQUIRE(gtep_run({"gen", "--out", (dir / "c").string(), "--samples-per-trial", "100", "--seed", "4"}).code == 0);
  std::size_t rows = 0;
  for (int id = 1; id <= 6; ++id) {
    const auto name = trial_filename(id, default_protocol_for_trial(id));
    const auto a = test::slurp(dir / "a" / name);
    rows += count_lines(a) - 1;
    CHECK(a == test::slurp(dir / "b" / name));
    CHECK(a != test::slurp(dir / "c" / name));
  }
  CHECK(rows == 600);
  CHECK(test::slurp(dir / "a" / "oracle_params.json") == test::slurp(dir / "b" / "oracle_params.json"));
}

TEST_CASE("gen options reach the oracle") {
  test::TempDir dir;
  REQUIRE(gtep_run({"gen", "--out", dir.path().string(), "--samples-per-trial", "50", "--noise-std", "0", "--k-v",
                    "0", "--k-w", "0", "--k-a", "0", "--base-power", "3000", "--format", "json"})
              .code == 0);
  const Trial t = load_csv(dir / "trial_3_accelvar.csv");
  for (const auto& s : t.samples) CHECK(s.power == 3000.0);
  REQUIRE(gtep_run({"gen", "--out", (dir / "h").string(), "--samples-per-trial", "30", "--hold-power", "3"}).code == 0);
  const Trial h = load_csv(dir / "h" / "trial_1_structured.csv");
  CHECK(h.samples[1].power == h.samples[0].power);
  CHECK(h.samples[2].power == h.samples[0].power);
}

TEST_CASE("train writes model, history and metadata") {
  auto& w = ws();
  const auto model = load_model(w.model);
  CHECK(model.mlp.param_count() == 7041);
  CHECK(fs::exists(w.dir / "model.history.csv"));
  const auto meta = nlohmann::json::parse(test::slurp(w.dir / "model.json"));
  CHECK(meta["param_count"] == 7041);
  CHECK(meta["metrics"].contains("test_r2_teacher"));
  CHECK(count_lines(test::slurp(w.dir / "model.history.csv")) == 4);  // header + epochs 0..2
}

TEST_CASE("train on default data") {
  test::TempDir dir;
  REQUIRE(gtep_run({"gen", "--out", (dir / "d").string()}).code == 0);
  const auto r = gtep_run({"train", "--data", (dir / "d").string(), "--out", (dir / "m.gtep").string(),
                           "--max-epochs", "1"});
  CHECK(r.code == 0);
  CHECK(load_model(dir / "m.gtep").mlp.param_count() == 7041);
}

TEST_CASE("train is deterministic and honours the feature mode") {
  auto& w = ws();
  const auto again = w.dir / "again.gtep";
  REQUIRE(gtep_run({"train", "--data", w.data.string(), "--out", again.string(), "--max-epochs", "2"}).code == 0);
  CHECK(test::slurp(again) == test::slurp(w.model));

  const auto vel = w.dir / "vel.gtep";
  REQUIRE(gtep_run({"train", "--data", w.data.string(), "--out", vel.string(), "--max-epochs", "1", "--feature-mode",
                    "vel"})
              .code == 0);
  CHECK(load_model(vel).mlp.input_dim() == 6);
}

TEST_CASE("train with a missing trial file is a usage error naming it") {
  auto& w = ws();
  test::TempDir dir;
  for (int id = 1; id <= 5; ++id) {
    const auto name = trial_filename(id, default_protocol_for_trial(id));
    fs::copy_file(w.data / name, dir / name);
  }
  const auto r = gtep_run({"train", "--data", dir.path().string(), "--out", (dir / "m.gtep").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("trial_6_steadystate.csv") != std::string::npos);
}

TEST_CASE("eval reports and plot series") {
  auto& w = ws();
  const auto r = gtep_run({"eval", "--model", w.model.string(), "--data", w.data.string(), "--format", "json",
                           "--trials", "5,6", "--pairs-csv", (w.dir / "pairs.csv").string(), "--hist-csv",
                           (w.dir / "hist.csv").string(), "--bins", "20"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["schema"] == 1);
  REQUIRE(j["trials"].size() == 2);
  CHECK(j["trials"][1]["trial"] == 6);
  CHECK(j["trials"][1]["n"] == 395);
  CHECK(j["trials"][1].contains("oracle_ceiling"));
  CHECK(count_lines(test::slurp(w.dir / "pairs.csv")) == 1 + 2 * 395);
  CHECK(count_lines(test::slurp(w.dir / "hist.csv")) == 21);

  for (const char* mode : {"teacher", "rollout", "corrected"}) {
    const auto t = gtep_run({"eval", "--model", w.model.string(), "--data", w.data.string(), "--mode", mode});
    CHECK(t.code == 0);
    CHECK(t.out.find("R2") != std::string::npos);
  }
  CHECK(gtep_run({"eval", "--model", w.model.string(), "--data", w.data.string(), "--mode", "open"}).code == 2);
  CHECK(gtep_run({"eval", "--model", w.model.string(), "--data", w.data.string(), "--trials", "x"}).code == 2);
}

TEST_CASE("analyze reports autocorrelation and ceilings") {
  auto& w = ws();
  const auto r = gtep_run({"analyze", "--data", w.data.string(), "--max-lag", "20", "--format", "json", "--acf-csv",
                           (w.dir / "acf.csv").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["schema"] == 1);
  CHECK(j["trials"].size() == 6);
  CHECK(j["mean_rho1"].get<double>() > 0.8);
  CHECK(j.contains("oracle_ceiling"));
  CHECK(j.contains("ar1_ceiling"));
  CHECK(count_lines(test::slurp(w.dir / "acf.csv")) == 22);
}

TEST_CASE("ablate, transfer, bench and predict") {
  auto& w = ws();
  SUBCASE("ablate") {
    const auto r = gtep_run({"ablate", "--data", w.data.string(), "--max-epochs", "1", "--format", "json"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    REQUIRE(j["results"].size() == 3);
    CHECK(j["results"][1]["input_dim"] == 6);
  }
  SUBCASE("transfer") {
    const auto r = gtep_run({"transfer", "--model", w.model.string(), "--data", w.data.string(), "--robots", "7",
                             "--samples", "300"});
    REQUIRE(r.code == 0);
    CHECK(count_lines(r.out) == 2 + 7 + 1);
    CHECK(r.out.find("+-") != std::string::npos);
    CHECK(r.out.find("MAE") != std::string::npos);
  }
  SUBCASE("bench") {
    const auto r = gtep_run({"bench", "--model", w.model.string(), "--steps", "2000"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("mean") != std::string::npos);
    CHECK(r.out.find("p99") != std::string::npos);
    CHECK(r.out.find("steps/s") != std::string::npos);
    CHECK(gtep_run({"bench", "--model", w.model.string(), "--steps", "10"}).code == 2);
  }
  SUBCASE("predict") {
    const auto commands = w.dir / "cmds.csv";
    std::string text = "t,v,w\n";
    for (int k = 0; k < 90; ++k) text += format_double(k / 30.0) + ",0.1,0.5\n";
    test::spit(commands, text);
    const auto out = w.dir / "power.csv";
    REQUIRE(gtep_run({"predict", "--model", w.model.string(), "--commands", commands.string(), "--out",
                      out.string()})
                .code == 0);
    const auto power = test::slurp(out);
    CHECK(power.rfind("t,power_mw,energy_mwh\n", 0) == 0);
    CHECK(count_lines(power) == 91);
    // Corrected mode needs measurements.
    CHECK(gtep_run({"predict", "--model", w.model.string(), "--commands", commands.string(), "--mode",
                    "corrected"})
              .code == 2);
    const auto trial = w.data / "trial_5_randomwalk.csv";
    const auto c = gtep_run({"predict", "--model", w.model.string(), "--commands", trial.string(), "--mode",
                             "corrected"});
    CHECK(c.code == 0);
    CHECK(count_lines(c.out) == 401);
  }
}

TEST_CASE("every subcommand rejects unknown flags with exit 2") {
  for (const char* sub : {"gen", "train", "eval", "analyze", "ablate", "transfer", "bench", "predict"}) {
    CAPTURE(sub);
    CHECK(gtep_run({sub, "--no-such-flag", "1"}).code == 2);
    CHECK(gtep_run({sub}).code == 2);  // each has a required option
  }
  CHECK(gtep_run({}).code == 2);
  CHECK(gtep_run({"frobnicate"}).code == 2);
  CHECK(gtep_run({"--help"}).code == 0);
  CHECK(gtep_run({"train", "--help"}).code == 0);
}

TEST_CASE("every subcommand reports runtime failures with exit 1") {
  auto& w = ws();
  test::TempDir dir;
  const auto junk_model = dir / "junk.gtep";
  test::spit(junk_model, "not a model");
  const auto bad_data = dir / "bad";
  fs::create_directories(bad_data);
  for (int id = 1; id <= 6; ++id) {
    const auto name = trial_filename(id, default_protocol_for_trial(id));
    test::spit(bad_data / name, "t,v,w,power_mw\n0,0,0,oops\n");
  }
  const auto blocker = dir / "file";
  test::spit(blocker, "x");

  CHECK(gtep_run({"gen", "--out", (blocker / "sub").string(), "--samples-per-trial", "10"}).code == 1);
  CHECK(gtep_run({"train", "--data", bad_data.string(), "--out", (dir / "m.gtep").string()}).code == 1);
  CHECK(gtep_run({"eval", "--model", junk_model.string(), "--data", w.data.string()}).code == 1);
  CHECK(gtep_run({"analyze", "--data", bad_data.string()}).code == 1);
  CHECK(gtep_run({"ablate", "--data", bad_data.string()}).code == 1);
  CHECK(gtep_run({"transfer", "--model", junk_model.string(), "--data", w.data.string()}).code == 1);
  CHECK(gtep_run({"bench", "--model", junk_model.string()}).code == 1);
  CHECK(gtep_run({"predict", "--model", junk_model.string(), "--commands", (bad_data / "x.csv").string()}).code == 1);
}

TEST_CASE("config precedence: flags over config over env over defaults") {
  test::TempDir dir;
  const auto cfg = dir / "gtep.ini";
  test::spit(cfg, "[gen]\nseed = 7\n");
  auto seed_of = [](const Run& r) {
    const auto line = effective_line(r.err);
    const auto at = line.find("--seed ");
    return line.substr(at + 7, line.find(' ', at + 7) - at - 7);
  };
  const std::string out = (dir / "d").string();
  CHECK(seed_of(gtep_run({"gen", "--out", out, "--samples-per-trial", "10"})) == "0");
  setenv("GTEP_SEED", "5", 1);
  CHECK(seed_of(gtep_run({"gen", "--out", out, "--samples-per-trial", "10"})) == "5");
  CHECK(seed_of(gtep_run({"gen", "--out", out, "--samples-per-trial", "10", "--config", cfg.string()})) == "7");
  CHECK(seed_of(gtep_run({"gen", "--out", out, "--samples-per-trial", "10", "--config", cfg.string(), "--seed",
                          "9"})) == "9");
  unsetenv("GTEP_SEED");

  test::spit(dir / "bad.ini", "[gen]\nbogus = 1\n");
  CHECK(gtep_run({"gen", "--out", out, "--config", (dir / "bad.ini").string()}).code == 2);
}

TEST_CASE("the effective config line reproduces the run") {
  test::TempDir dir;
  test::spit(dir / "gtep.ini", "[gen]\nrho = 0.9\n");
  setenv("GTEP_SAMPLES_PER_TRIAL", "60", 1);
  const auto first = gtep_run({"gen", "--out", (dir / "a").string(), "--config", (dir / "gtep.ini").string(),
                               "--seed", "12"});
  unsetenv("GTEP_SAMPLES_PER_TRIAL");
  REQUIRE(first.code == 0);
  auto args = split_command(effective_line(first.err));
  REQUIRE(args.size() > 2);
  CHECK(args[0] == "gtep");
  args.erase(args.begin());
  for (auto& a : args)
    if (a == (dir / "a").string()) a = (dir / "b").string();
  REQUIRE(gtep_run(args).code == 0);
  for (int id = 1; id <= 6; ++id) {
    const auto name = trial_filename(id, default_protocol_for_trial(id));
    CHECK(test::slurp(dir / "a" / name) == test::slurp(dir / "b" / name));
  }
  CHECK(count_lines(test::slurp(dir / "b" / "trial_1_structured.csv")) == 61);
}

TEST_CASE("the installed binary returns the same exit codes") {
  const char* bin = std::getenv("GTEP_BINARY");
  if (bin == nullptr) {
    MESSAGE("GTEP_BINARY not set; skipping process-level check");
    return;
  }
  test::TempDir dir;
  auto status = [&](const std::string& args) {
    const int raw = std::system((std::string(bin) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("gen --out " + (dir / "d").string() + " --samples-per-trial 20") == 0);
  CHECK(status("gen --bogus") == 2);
  test::spit(dir / "junk.gtep", "junk");
  CHECK(status("bench --model " + (dir / "junk.gtep").string()) == 1);
}
