#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "tody_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(TODY_CLI) + " --workdir " + kDir.string() + " " + args + " >" +
                          (kDir / "stdout.txt").string() + " 2>" + (kDir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::string& name, const std::string& text) { std::ofstream(kDir / name) << text; }

struct Fresh {
  Fresh() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
};

const char* kConfig = R"({"dataset": "p.csv", "task": "flp", "window": 64, "num_patches": 4, "blocks": 1,
  "mpnn_layers": 1, "attn_layers": 1, "hidden": 8, "time_dim": 4, "fanouts": [4, 1, 0],
  "batch_size": 50, "epochs": 1, "seed": 1, "output": "out"})";

}  // namespace

TEST_CASE("synth is byte-deterministic") {
  Fresh f;
  REQUIRE(run("synth --nodes 20 --edges 2000 --seed 7 --out a.csv") == 0);
  REQUIRE(run("synth --nodes 20 --edges 2000 --seed 7 --out b.csv") == 0);
  CHECK(slurp(kDir / "a.csv") == slurp(kDir / "b.csv"));
  REQUIRE(run("synth --nodes 20 --edges 2000 --seed 8 --out c.csv") == 0);
  CHECK(slurp(kDir / "a.csv") != slurp(kDir / "c.csv"));
}

TEST_CASE("usage and config errors exit with 2") {
  Fresh f;
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("train") == 2);
  write("bad.json", R"({"task": "flp"})");
  CHECK(run("train --config bad.json") == 2);
  CHECK(slurp(kDir / "stderr.txt").find("dataset") != std::string::npos);
  write("unknown.json", R"({"dataset": "p.csv", "task": "flp", "colour": 1})");
  CHECK(run("train --config unknown.json") == 2);
  CHECK(slurp(kDir / "stderr.txt").find("colour") != std::string::npos);
}

TEST_CASE("data errors exit with 3") {
  Fresh f;
  REQUIRE(run("synth --edges 400 --out p.csv") == 0);
  write("c.json", kConfig);
  CHECK(run("train --config c.json --task dnc") == 3);
  write("broken.csv", "src,dst,t\n1,2,x\n");
  CHECK(run("prepare broken.csv") == 3);
  CHECK(run("prepare missing.csv") == 3);
}

TEST_CASE("prepare writes canonical edges and stats") {
  Fresh f;
  write("raw.csv", "src,dst,t\n5,9,2\n9,5,1\n5,9,3\n");
  REQUIRE(run("prepare raw.csv --out prep") == 0);
  CHECK(slurp(kDir / "prep" / "edges.csv") == "src,dst,timestamp\n1,0,1\n0,1,2\n0,1,3\n");
  const std::string stats = slurp(kDir / "prep" / "stats.json");
  CHECK(stats.find("\"edges\": 3") != std::string::npos);
}

TEST_CASE("train and evaluate with identical settings give identical metrics") {
  Fresh f;
  REQUIRE(run("synth --edges 400 --out p.csv") == 0);
  write("c.json", kConfig);
  REQUIRE(run("train --config c.json") == 0);
  const std::string first = slurp(kDir / "out" / "metrics.csv");
  REQUIRE(run("train --config c.json") == 0);
  CHECK(slurp(kDir / "out" / "metrics.csv") == first);
  REQUIRE(run("train --config c.json --seed 2 --output out2") == 0);
  CHECK(slurp(kDir / "out2" / "metrics.csv") != first);
  REQUIRE(run("evaluate --config c.json --split test") == 0);
  const std::string eval = slurp(kDir / "out" / "eval_test.csv");
  REQUIRE(run("evaluate --config c.json --split test") == 0);
  CHECK(slurp(kDir / "out" / "eval_test.csv") == eval);
  CHECK(eval.rfind("epoch,split,task,metric,value,seed\n", 0) == 0);
  CHECK(run("evaluate --config c.json --checkpoint nope.ckpt") == 3);
}

TEST_CASE("ablate and bench emit their tables") {
  Fresh f;
  REQUIRE(run("synth --edges 400 --out p.csv") == 0);
  write("c.json", kConfig);
  REQUIRE(run("ablate --config c.json --axis num_patches --values 2,4 --out abl.csv") == 0);
  const std::string abl = slurp(kDir / "abl.csv");
  CHECK(abl.rfind("axis,setting,split,metric,value,seed\n", 0) == 0);
  CHECK(std::count(abl.begin(), abl.end(), '\n') == 3);
  CHECK(run("ablate --config c.json --axis colour") == 2);
  REQUIRE(run("bench --scale 256 512 --hidden 8 --repeats 1 --out b.csv") == 0);
  const std::string b = slurp(kDir / "b.csv");
  CHECK(b.rfind("E,M,L,ms\n256,8,3,", 0) == 0);
}
