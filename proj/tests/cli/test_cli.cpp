#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kecae/config.hpp"

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI inside `dir`, capturing stdout and stderr together.
Run run(const fs::path &dir, const std::string &args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" KECAE_BIN "' " + args + " 2>&1";
  Run r;
  FILE *p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0)
    r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path &p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string &name) {
  const fs::path d = fs::temp_directory_path() / ("kecae_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Small dataset and short training so a full pipeline runs in seconds.
constexpr const char *kSmallCfg = "data.kl0_count = 60\n"
                                  "data.kl2_count = 50\n"
                                  "epochs = 2\n"
                                  "batch_size = 4\n"
                                  "pairs = 12\n";

fs::path prepared(const std::string &name) {
  const fs::path d = fresh_dir(name);
  std::ofstream(d / "small.cfg") << kSmallCfg;
  REQUIRE(run(d, "gen-data --config small.cfg").code == 0);
  REQUIRE(run(d, "split --config small.cfg").code == 0);
  return d;
}

const char *const kCommands[] = {"gen-data", "split", "pairs",    "train", "generate",
                                  "probe",    "grid",  "sizes",    "augeval", "gradcheck"};

} // namespace

TEST_CASE("every subcommand documents each flag with its default") {
  const fs::path d = fresh_dir("help");
  for (const char *cmd : kCommands) {
    CAPTURE(cmd);
    const Run r = run(d, std::string(cmd) + " --help");
    CHECK(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    std::size_t flags = 0;
    while (std::getline(lines, line)) {
      const auto pos = line.find("--");
      if (pos == std::string::npos || line.find("--help") != std::string::npos)
        continue;
      ++flags;
      CAPTURE(line);
      CHECK(line.find('[') != std::string::npos);
      CHECK(line.find(']') != std::string::npos);
    }
    CHECK(flags >= 4); // --config, --seed, --preset, --out
  }
  const Run top = run(d, "--help");
  CHECK(top.code == 0);
  for (const char *cmd : kCommands)
    CHECK(top.out.find(cmd) != std::string::npos);
}

TEST_CASE("help defaults agree with the config table") {
  const fs::path d = fresh_dir("help_defaults");
  const Run r = run(d, "train --help");
  for (const char *key : {"epochs", "lambda1", "lambda2"}) {
    CAPTURE(key);
    std::string def;
    for (const auto &k : kecae::config_keys())
      if (k.name == key)
        def = k.default_value;
    REQUIRE(!def.empty());
    CHECK(r.out.find("[" + def + " (config key: " + key + ")]") != std::string::npos);
  }
}

TEST_CASE("pairs --n 1000 writes 1000 distinct rows") {
  const fs::path d = prepared("pairs");
  const Run r = run(d, "pairs --config small.cfg --n 1000 --out p.csv");
  REQUIRE(r.code == 0);
  std::ifstream f(d / "p.csv");
  std::string header, line;
  std::getline(f, header);
  CHECK(header == "kl0_id,kl2_id");
  std::set<std::string> rows;
  std::size_t count = 0;
  while (std::getline(f, line)) {
    ++count;
    rows.insert(line);
  }
  CHECK(count == 1000);
  CHECK(rows.size() == 1000);
}

TEST_CASE("train is deterministic for a fixed seed") {
  const fs::path d = prepared("train");
  REQUIRE(run(d, "pairs --config small.cfg").code == 0);
  const Run a = run(d, "train --config small.cfg --out a");
  REQUIRE(a.code == 0);
  REQUIRE(run(d, "train --config small.cfg --out b").code == 0);
  REQUIRE(run(d, "train --config small.cfg --out c --seed 2").code == 0);
  const std::string ma = slurp(d / "a" / "metrics.csv");
  CHECK(ma.find("epoch,j_mse") == 0);
  CHECK(ma == slurp(d / "b" / "metrics.csv"));
  CHECK(slurp(d / "a" / "checkpoint" / "weights.bin") ==
        slurp(d / "b" / "checkpoint" / "weights.bin"));
  CHECK(ma != slurp(d / "c" / "metrics.csv"));

  // The effective configuration is echoed and reloads to the same run.
  const kecae::RunConfig echoed = kecae::load_run_config(d / "a" / "config.cfg");
  CHECK(echoed.train.epochs == 2);
  CHECK(echoed.train.batch_size == 4);

  // Flags override the config file.
  REQUIRE(run(d, "train --config small.cfg --out e --epochs 1 --lambda1 0.5").code == 0);
  const kecae::RunConfig e = kecae::load_run_config(d / "e" / "config.cfg");
  CHECK(e.train.epochs == 1);
  CHECK(e.train.weights.lambda1 == 0.5);
}

TEST_CASE("generate and probe read a trained checkpoint") {
  const fs::path d = prepared("generate");
  REQUIRE(run(d, "train --config small.cfg --out t --n 8").code == 0);
  const Run g = run(d, "generate --config small.cfg --checkpoint t/checkpoint --n 2 --out g");
  REQUIRE(g.code == 0);
  std::size_t pgm = 0;
  for (const auto &e : fs::directory_iterator(d / "g"))
    pgm += e.path().extension() == ".pgm";
  CHECK(pgm == 8);
  CHECK(slurp(d / "g" / "labels.csv").find("000000_exchanged1.pgm,exchanged1,kl2") !=
        std::string::npos);
  const Run p = run(d, "probe --config small.cfg --checkpoint t/checkpoint --out pr");
  CHECK(p.code == 0);
  CHECK(p.out.find("hK") != std::string::npos);
  CHECK(fs::exists(d / "pr" / "probe.csv"));
}

TEST_CASE("exit codes") {
  const fs::path d = fresh_dir("exit");
  CHECK(run(d, "").code == 1);
  CHECK(run(d, "train --epochs notanumber").code == 1);
  CHECK(run(d, "train --preset huge").code == 1);
  std::ofstream(d / "bad.cfg") << "no_such_key = 3\n";
  const Run bad = run(d, "split --config bad.cfg");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("bad.cfg:1") != std::string::npos);
  std::ofstream(d / "zero.cfg") << "batch_size = 1\n";
  CHECK(run(d, "train --config zero.cfg").code == 1);
  CHECK(run(d, "split").code == 2); // no dataset yet
  CHECK(run(d, "probe --checkpoint missing").code == 2);
}

TEST_CASE("pairs beyond the product is a data error") {
  const fs::path d = prepared("too_many");
  // 42 x 42 training items after oversampling 60/50 originals.
  CHECK(run(d, "pairs --config small.cfg --n 100000").code == 2);
}

TEST_CASE("shipped desk config matches the built-in defaults") {
  const kecae::RunConfig shipped = kecae::load_run_config(KECAE_SOURCE_DIR "/configs/desk.cfg");
  const kecae::RunConfig defaults;
  for (const auto &k : kecae::config_keys()) {
    CAPTURE(k.name);
    CHECK(kecae::get_config_key(shipped, k.name) == kecae::get_config_key(defaults, k.name));
  }
}
