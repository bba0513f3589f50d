#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ono/serialize.hpp"

// exercises the built binary end to end
#ifndef ONO_CLI_PATH
#define ONO_CLI_PATH "./ono"
#endif

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ono_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(ONO_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// strips the wall-clock column, the one legitimately nondeterministic field
std::string strip_wall(const std::string& csv) {
  std::string out;
  std::size_t start = 0;
  while (start < csv.size()) {
    std::size_t end = csv.find('\n', start);
    if (end == std::string::npos) end = csv.size();
    std::string line = csv.substr(start, end - start);
    const std::size_t cut = line.rfind(',');
    out += line.substr(0, cut);
    out += '\n';
    start = end + 1;
  }
  return out;
}

}  // namespace

TEST_CASE("generate-data is byte-deterministic in the seed") {
  TempDir tmp;
  REQUIRE(run("generate-data --problem poisson1d --n 10 --resolution 64 --seed 7 --out " +
              tmp.file("a.onod")) == 0);
  REQUIRE(run("generate-data --problem poisson1d --n 10 --resolution 64 --seed 7 --out " +
              tmp.file("b.onod")) == 0);
  CHECK(ono::io::read_file(tmp.file("a.onod")) == ono::io::read_file(tmp.file("b.onod")));
  CHECK(fs::exists(tmp.file("a.onod.manifest.json")));
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("--definitely-not-a-flag") == 2);
  CHECK(run("generate-data --bogus") == 2);
  CHECK(run("nonexistent-subcommand") == 2);
}

TEST_CASE("runtime failures exit with code 1") {
  TempDir tmp;
  CHECK(run("eval --checkpoint " + tmp.file("missing.onoc") + " --data " +
            tmp.file("missing.onod")) == 1);
}

TEST_CASE("grad-check model scope passes its gate") {
  CHECK(run("grad-check --scope model --trials 1") == 0);
}

TEST_CASE("train, eval, and manifest replay work end to end") {
  TempDir tmp;
  REQUIRE(run("generate-data --problem poisson1d --n 16 --resolution 32 --seed 3 --out " +
              tmp.file("d.onod")) == 0);
  REQUIRE(run("train --data " + tmp.file("d.onod") +
              " --epochs 2 --batch-size 4 --seed 0 --stages 1 --width 8 --bottom-width 8 "
              "--eigenmaps 4 --out-dir " +
              tmp.file("run")) == 0);
  CHECK(fs::exists(tmp.file("run/metrics.csv")));
  CHECK(fs::exists(tmp.file("run/best.onoc")));
  CHECK(fs::exists(tmp.file("run/manifest.json")));

  const std::string metrics = read_text(tmp.file("run/metrics.csv"));
  CHECK(metrics.rfind("epoch,step,lr,train_rel_l2,val_rel_l2,wall_ms\n", 0) == 0);

  REQUIRE(run("eval --checkpoint " + tmp.file("run/best.onoc") + " --data " + tmp.file("d.onod") +
              " --superres-mode direct --report " + tmp.file("report.csv")) == 0);
  CHECK(read_text(tmp.file("report.csv")).rfind("index,rel_l2\n", 0) == 0);

  // replaying the manifest reproduces the metrics (wall time aside)
  REQUIRE(run("--manifest " + tmp.file("run/manifest.json")) == 0);
  CHECK(strip_wall(read_text(tmp.file("run/metrics.csv"))) == strip_wall(metrics));
}

TEST_CASE("config file values are applied and flags override them") {
  TempDir tmp;
  REQUIRE(run("generate-data --problem poisson1d --n 12 --resolution 16 --seed 5 --out " +
              tmp.file("d.onod")) == 0);
  {
    std::ofstream cfg(tmp.file("cfg.json"));
    cfg << R"({"stages": 1, "width": 8, "bottom_width": 8, "eigenmaps": 4, "epochs": 1,)"
        << R"( "batch_size": 4, "max_lr": 2e-3})";
  }
  REQUIRE(run("train --data " + tmp.file("d.onod") + " --config " + tmp.file("cfg.json") +
              " --out-dir " + tmp.file("runA")) == 0);
  const std::string m1 = read_text(tmp.file("runA/manifest.json"));
  CHECK(m1.find("\"stages\": 1") != std::string::npos);
  CHECK(m1.find("\"epochs\": 1") != std::string::npos);

  REQUIRE(run("train --data " + tmp.file("d.onod") + " --config " + tmp.file("cfg.json") +
              " --epochs 2 --out-dir " + tmp.file("runB")) == 0);
  CHECK(read_text(tmp.file("runB/manifest.json")).find("\"epochs\": 2") != std::string::npos);
}

TEST_CASE("bench-linear writes the timing CSV") {
  TempDir tmp;
  REQUIRE(run("bench-linear --m-list 64,128 --report " + tmp.file("bench.csv")) == 0);
  CHECK(read_text(tmp.file("bench.csv")).rfind("m,seconds\n", 0) == 0);
}

TEST_CASE("verify-eigen emits the report schema (short run)") {
  TempDir tmp;
  // deliberately too short to converge; just the interface contract
  const int code = run("verify-eigen --kernel min --k 1 --grid 64 --steps 40 --out " +
                       tmp.file("eig.csv"));
  CHECK((code == 0 || code == 1));
  CHECK(read_text(tmp.file("eig.csv"))
            .rfind("kernel,k,i,eigenvalue_true,eigenvalue_learned,alignment\n", 0) == 0);
}
