#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "layoutgen/dataset.hpp"
#include "layoutgen/errors.hpp"
#include "layoutgen/eval.hpp"
#include "test_support.hpp"

using namespace layoutgen;
namespace lt = layoutgen::testing;

namespace {

std::vector<SceneGraph> graphs_of(const Dataset& d) {
  std::vector<SceneGraph> out;
  for (const Scene& s : d.scenes) out.push_back(scene_to_graph(s));
  return out;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("layoutgen_test_eval_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("table aggregation arithmetic") {
  // Exact decimal means: the sums are exact multiples of 0.01 up to rounding.
  const std::vector<double> t1{0.82, 0.83, 0.79, 0.78}, t2{0.83, 0.85, 0.84}, t3{0.88, 0.84};
  CHECK(std::abs(average_accuracy(t1) - 0.805) <= 1e-12);
  CHECK(std::abs(average_accuracy(t2) - 0.84) <= 1e-12);
  CHECK(std::abs(average_accuracy(t3) - 0.86) <= 1e-12);
  CHECK_THROWS_AS(average_accuracy(std::vector<double>{}), ArgumentError);
}

TEST_CASE("accuracy_from_counts") {
  const ConditionSchema schema = default_schema(RoomType::tatami);
  SUBCASE("all correct") {
    const std::vector<std::size_t> totals{5, 5, 5, 5};
    const AccuracyReport r = accuracy_from_counts(schema, totals, totals);
    for (double v : r.per_label) CHECK(v == 1.0);
    CHECK(r.averaged == 1.0);
    CHECK(r.n_c == 4);
    CHECK(r.warnings.empty());
  }
  SUBCASE("a label without graphs is excluded with a warning") {
    const std::vector<std::size_t> matches{9, 0, 3, 10}, totals{10, 0, 4, 10};
    const AccuracyReport r = accuracy_from_counts(schema, matches, totals);
    CHECK(r.n_c == 3);
    CHECK_FALSE(r.included[1]);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("tea") != std::string::npos);
    CHECK(std::abs(r.averaged - (0.9 + 0.75 + 1.0) / 3.0) <= 1e-12);
    const auto j = to_json(r);
    CHECK(j.contains("averaged"));
  }
  SUBCASE("bad counts") {
    const std::vector<std::size_t> matches{2, 0, 0, 0}, totals{1, 0, 0, 0};
    CHECK_THROWS_AS(accuracy_from_counts(schema, matches, totals), ArgumentError);
    CHECK_THROWS_AS(accuracy_from_counts(schema, std::vector<std::size_t>{1}, std::vector<std::size_t>{1}),
                    ArgumentError);
  }
}

TEST_CASE("labeler gradients and permutation invariance") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    CAPTURE(seed);
    CHECK(lt::labeler_grad_check(4 + seed % 5, seed).max_rel_error < 1e-4);
  }
}

TEST_CASE("labeler training contract") {
  const Dataset d = synth_dataset(RoomType::tatami, 40, 6);
  const std::vector<SceneGraph> graphs = graphs_of(d);

  SUBCASE("lr = 0 leaves parameters unchanged") {
    LabelerConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 0.0;
    GraphLabeler trained = train_labeler(graphs, d.schema, d.registry, cfg);
    GraphLabeler fresh = init_labeler(cfg, d.schema, d.registry);
    CHECK(flatten(trained.params.params()) == flatten(fresh.params.params()));
  }
  SUBCASE("separable templates are learned, deterministically") {
    LabelerConfig cfg;
    cfg.epochs = 60;
    const GraphLabeler a = train_labeler(graphs, d.schema, d.registry, cfg);
    const GraphLabeler b = train_labeler(graphs, d.schema, d.registry, cfg);
    CHECK(labeler_to_json(a).dump() == labeler_to_json(b).dump());
    CHECK(a.heldout_count == graphs.size() / 5);
    CHECK(a.heldout_accuracy >= 0.95);

    // Every generated pair labeled by intent: ACC_G is a per-label hit rate.
    std::vector<std::pair<SceneGraph, std::size_t>> gen;
    std::vector<std::size_t> hits(4, 0), totals(4, 0);
    for (const auto& g : graphs) {
      gen.emplace_back(g, g.condition.label_index);
      ++totals[g.condition.label_index];
      hits[g.condition.label_index] += predict_label(a, g) == g.condition.label_index;
      const auto p = labeler_probabilities(a, g);
      double total = 0;
      for (double v : p) total += v;
      CHECK(total == doctest::Approx(1.0));
    }
    const AccuracyReport r = acc_g(a, gen);
    for (std::size_t l = 0; l < 4; ++l)
      CHECK(r.per_label[l] == doctest::Approx(static_cast<double>(hits[l]) / static_cast<double>(totals[l])));
    gen.emplace_back(graphs[0], 9);
    CHECK_THROWS_AS(acc_g(a, gen), ArgumentError);

    Rng rng(2);
    const CondGenModel model = init_condgen({}, d.schema, d.registry);
    for (const SceneGraph& g : lt::generic_graphs(RoomType::tatami, 5, 6, 10, a.config.spectral_dim, 4)) {
      const auto rep = lt::permutation_check(model, a, g, 20, rng);
      CHECK(rep.labeler <= 1e-8);
      CHECK_FALSE(rep.prediction_changed);
    }

    const auto path = std::filesystem::temp_directory_path() / "layoutgen_test_labeler.json";
    save_labeler(a, path.string());
    CHECK(labeler_to_json(load_labeler(path.string())).dump() == labeler_to_json(a).dump());
  }
  SUBCASE("a single label is rejected") {
    std::vector<SceneGraph> one;
    for (const auto& g : graphs)
      if (g.condition.label_index == 2) one.push_back(g);
    CHECK_THROWS_AS(train_labeler(one, d.schema, d.registry, LabelerConfig{}), ArgumentError);
  }
}

TEST_CASE("scene validity report") {
  const Dataset d = synth_dataset(RoomType::balcony, 4, 1);
  std::vector<Scene> scenes(d.scenes.begin(), d.scenes.begin() + 10);
  const ValidityReport clean = scene_validity_report(scenes);
  CHECK(clean.scenes == 10);
  CHECK(clean.overlap_rate == 0.0);
  CHECK(clean.outside_rate == 0.0);

  REQUIRE(scenes[3].items.size() >= 2);
  scenes[3].items[1] = scenes[3].items[0];
  const ValidityReport one = scene_validity_report(scenes);
  CHECK(one.overlap_scenes == 1);
  CHECK(one.overlap_pairs == 1);
  CHECK(one.overlap_rate == doctest::Approx(0.1));

  std::vector<Scene> reversed(scenes.rbegin(), scenes.rend());
  CHECK(to_json(scene_validity_report(reversed)) == to_json(one));

  std::vector<std::size_t> preds(10, 0);
  preds[0] = 2;
  preds[7] = 1;
  const ValidityReport p = scene_validity_report(scenes, preds);
  CHECK(p.predicate_violations == 3);
  CHECK(p.predicate_rate == doctest::Approx(0.2));
  CHECK_THROWS_AS(scene_validity_report(scenes, std::vector<std::size_t>(3, 0)), ArgumentError);
}

TEST_CASE("2AFC pair export") {
  const Dataset d = synth_dataset(RoomType::kitchen, 3, 2);
  const std::vector<Scene> real(d.scenes.begin(), d.scenes.begin() + 3);
  const std::vector<Scene> gen(d.scenes.begin() + 3, d.scenes.begin() + 6);

  const auto dir = fresh_dir("pairs");
  const auto manifest = export_comparison_pairs(real, gen, dir.string(), 11);
  REQUIRE(manifest["pairs"].size() == 3);
  const auto key = jsonu::read_file((dir / "key.json").string());
  REQUIRE(key["key"].size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& entry = manifest["pairs"][i];
    CHECK_FALSE(entry.contains("real_is_left"));
    for (const char* side : {"left", "right"}) CHECK(std::filesystem::exists(dir / entry[side].get<std::string>()));
    // The key names the true source: the real side's drawing is the real scene's drawing.
    const bool real_left = key["key"][i]["real_is_left"].get<bool>();
    std::ifstream f(dir / entry[real_left ? "left" : "right"].get<std::string>());
    const std::string svg((std::istreambuf_iterator<char>(f)), {});
    CHECK(svg == render_svg(real[i], d.registry));
    CHECK(key["key"][i][real_left ? "left" : "right"] == "real");
  }

  const auto again = fresh_dir("pairs_again");
  export_comparison_pairs(real, gen, again.string(), 11);
  CHECK(jsonu::read_file((again / "key.json").string()) == key);

  CHECK_THROWS_AS(export_comparison_pairs(real, {gen[0]}, fresh_dir("bad").string(), 1), ArgumentError);

  const std::string svg = render_svg(real[0], d.registry);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
}
