#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "layoutgen/dataset.hpp"
#include "layoutgen/graph.hpp"
#include "layoutgen/json_util.hpp"

using namespace layoutgen;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "layoutgen_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

// Runs the CLI with stdout captured to `stdout_file` and stderr discarded; returns the exit status.
int run(const std::string& args, const std::string& stdout_file = "/dev/null") {
  const std::string cmd = std::string(LAYOUTGEN_CLI) + " " + args + " > " + stdout_file + " 2>/dev/null";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run("") == 1);
  CHECK(run("teleport") == 1);
  CHECK(run("synth --room kitchen") == 1);                           // --out missing
  CHECK(run("synth --room garage --out " + at("x.json")) == 1);     // not a room type
  CHECK(run("eval") == 1);                                           // nothing to evaluate
  CHECK(run("--help") == 0);
}

TEST_CASE("pipeline end to end") {
  REQUIRE(run("synth --room kitchen --per-label 8 --seed 4 --out " + at("scenes.json")) == 0);
  const Dataset d = load_dataset(at("scenes.json"));
  CHECK(d.scenes.size() == 16);
  CHECK(d.room_type == RoomType::kitchen);

  REQUIRE(run("extract --dataset " + at("scenes.json") + " --out " + at("graphs.json")) == 0);
  CHECK(load_graph_dataset(at("graphs.json")).graphs.size() == 16);

  REQUIRE(run("train-graph --graphs " + at("graphs.json") + " --epochs 4 --out " + at("condgen.json")) == 0);
  REQUIRE(run("train-inst --dataset " + at("scenes.json") + " --epochs 3 --out " + at("placement.json")) == 0);
  REQUIRE(run("train-labeler --graphs " + at("graphs.json") + " --epochs 10 --out " + at("labeler.json")) == 0);

  SUBCASE("generate is seed-deterministic") {
    const std::string base = "generate --checkpoint " + at("condgen.json") + " --label multi --count 3 --seed 21";
    REQUIRE(run(base + " --out " + at("gen_a.json")) == 0);
    REQUIRE(run(base + " --out " + at("gen_b.json")) == 0);
    CHECK(slurp(at("gen_a.json")) == slurp(at("gen_b.json")));
    const GraphDataset g = load_graph_dataset(at("gen_a.json"));
    REQUIRE(g.graphs.size() == 3);
    for (const auto& graph : g.graphs) CHECK(graph.condition.label_index == 1);

    const std::string scenes = base + " --placement " + at("placement.json");
    REQUIRE(run(scenes + " --out " + at("scenes_a.json")) == 0);
    REQUIRE(run(scenes + " --out " + at("scenes_b.json")) == 0);
    CHECK(slurp(at("scenes_a.json")) == slurp(at("scenes_b.json")));
    CHECK(load_dataset(at("scenes_a.json")).scenes.size() == 3);
  }
  SUBCASE("eval prints a JSON report") {
    REQUIRE(run("generate --checkpoint " + at("condgen.json") + " --count 2 --out " + at("gen_all.json")) == 0);
    REQUIRE(run("eval --labeler " + at("labeler.json") + " --generated " + at("gen_all.json") + " --scenes " +
                    at("scenes.json"),
                at("eval.json")) == 0);
    const auto report = jsonu::read_file(at("eval.json"));
    CHECK(report["accuracy"]["per_label"].size() == 2);
    CHECK(report["validity"]["scenes"] == 16);
    CHECK(report["validity"]["overlap_rate"] == 0.0);
  }
  SUBCASE("runtime errors exit with 2") {
    CHECK(run("generate --checkpoint " + at("condgen.json") + " --label flying --out " + at("bad.json")) == 2);
    CHECK(run("generate --checkpoint " + at("condgen.json") + " --room tatami --out " + at("bad.json")) == 2);
    CHECK(run("train-graph --graphs " + at("scenes.json") + " --out " + at("bad.json")) == 2);  // wrong file kind
    std::ofstream(at("truncated.json")) << "{\"format_version\": 1, \"scenes\": [";
    CHECK(run("extract --dataset " + at("truncated.json") + " --out " + at("bad.json")) == 2);
  }
  SUBCASE("2AFC export") {
    REQUIRE(run("generate --checkpoint " + at("condgen.json") + " --count 2 --placement " + at("placement.json") +
                " --out " + at("gen_scenes.json")) == 0);
    REQUIRE(run("export-pairs --real " + at("scenes.json") + " --generated " + at("gen_scenes.json") + " --out " +
                at("pairs")) == 0);
    CHECK(fs::exists(workdir() / "pairs" / "key.json"));
    CHECK(jsonu::read_file(at("pairs/manifest.json"))["pairs"].size() == 4);
  }
}
