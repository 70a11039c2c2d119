// layoutgen: command-line driver for the whole pipeline.
//
//   synth -> extract -> train-graph / train-inst / train-labeler -> generate -> eval
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "layoutgen/condgen.hpp"
#include "layoutgen/dataset.hpp"
#include "layoutgen/eval.hpp"
#include "layoutgen/instantiate.hpp"
#include "layoutgen/json_util.hpp"
#include "layoutgen/rng.hpp"
#include "layoutgen/service.hpp"

using namespace layoutgen;
using nlohmann::json;

namespace {

struct Options {
  std::uint64_t seed = 1;
  std::string room;
  std::string out;
  std::string dataset;
  std::string graphs;
  std::string checkpoint;
  std::string placement;
  std::string labeler;
  std::string generated;
  std::string real;
  std::string scenes;
  std::string shell;
  std::string config;
  std::string label;
  std::size_t per_label = 200;
  std::size_t count = 1;
  std::size_t epochs = 0;  // 0 keeps the command's default
  double learning_rate = 0.0;
  bool no_relations = false;
  int port = -1;
};

void check_room(RoomType expected, const ConditionSchema& schema, const std::string& what) {
  if (schema.room_type != expected)
    throw ArgumentError(what + " is for room type " + std::string(to_string(schema.room_type)) + ", not " +
                        std::string(to_string(expected)));
}

int cmd_synth(const Options& o) {
  const Dataset d = synth_dataset(room_type_from_string(o.room), o.per_label, o.seed);
  save_dataset(d, o.out);
  std::cerr << "wrote " << d.scenes.size() << " scenes to " << o.out << "\n";
  return 0;
}

int cmd_extract(const Options& o) {
  const Dataset d = load_dataset(o.dataset);
  GraphDataset g{d.room_type, d.schema, d.registry, {}, {}};
  for (const auto& s : d.scenes) {
    g.graphs.push_back(scene_to_graph(s));
    if (!o.no_relations) g.relations.push_back(extract_graph(s).edges);
  }
  save_graph_dataset(g, o.out);
  std::cerr << "wrote " << g.graphs.size() << " graphs to " << o.out << "\n";
  return 0;
}

int cmd_train_graph(const Options& o) {
  const GraphDataset g = load_graph_dataset(o.graphs);
  CondGenConfig c;
  c.seed = o.seed;
  if (o.epochs > 0) c.epochs = o.epochs;
  if (o.learning_rate > 0.0) c.learning_rate = o.learning_rate;
  const auto relations = o.no_relations ? std::vector<std::vector<GraphEdge>>{} : g.relations;
  const CondGenModel m = train_condgen(g.graphs, g.schema, g.registry, c, relations);
  save_condgen(m, o.out);
  if (!m.loss_curve.empty()) {
    const auto& last = m.loss_curve.back();
    std::cerr << "final epoch: recon " << last.recon << " edge_bce " << last.edge_bce << " prior "
              << last.prior << " disc " << last.disc << " gen " << last.gen << "\n";
  }
  return 0;
}

int cmd_train_inst(const Options& o) {
  const Dataset d = load_dataset(o.dataset);
  PlacementConfig c;
  c.seed = o.seed;
  c.epochs = 100;
  if (o.epochs > 0) c.epochs = o.epochs;
  if (o.learning_rate > 0.0) c.learning_rate = o.learning_rate;
  const PlacementModel m = train_instantiator(d.scenes, c);
  save_placement(m, o.out);
  if (!m.loss_curve.empty())
    std::cerr << "loss per object: " << m.loss_curve.front() << " -> " << m.loss_curve.back() << "\n";
  return 0;
}

int cmd_train_labeler(const Options& o) {
  const GraphDataset g = load_graph_dataset(o.graphs);
  LabelerConfig c;
  c.seed = o.seed;
  if (o.epochs > 0) c.epochs = o.epochs;
  if (o.learning_rate > 0.0) c.learning_rate = o.learning_rate;
  const GraphLabeler l = train_labeler(g.graphs, g.schema, g.registry, c);
  save_labeler(l, o.out);
  std::cerr << "held-out accuracy " << l.heldout_accuracy << " on " << l.heldout_count << " graphs\n";
  return 0;
}

// Graphs (or, with --placement, instantiated scenes) for one label or for all.
int cmd_generate(const Options& o) {
  const CondGenModel m = load_condgen(o.checkpoint);
  if (!o.room.empty()) check_room(room_type_from_string(o.room), m.schema, "checkpoint " + o.checkpoint);
  const RoomType room = m.schema.room_type;
  std::vector<std::size_t> labels;
  if (o.label.empty()) {
    for (std::size_t l = 0; l < m.schema.labels.size(); ++l) labels.push_back(l);
  } else {
    labels.push_back(m.schema.index_of(o.label));
  }
  std::optional<PlacementModel> placement;
  if (!o.placement.empty()) {
    placement = load_placement(o.placement);
    check_room(room, placement->schema, "placement checkpoint " + o.placement);
  }
  const RoomShell shell = o.shell.empty() ? default_shell(room)
                                          : shell_from_json(jsonu::read_file(o.shell), o.shell);

  Rng seeds(o.seed);
  GraphDataset graphs{room, m.schema, m.registry, {}, {}};
  Dataset scenes{room, m.schema, m.registry, {}};
  std::size_t violating = 0;
  for (const std::size_t l : labels) {
    for (std::size_t i = 0; i < o.count; ++i) {
      const ConditionCode cond{room, l};
      const std::uint64_t graph_seed = seeds.next_seed();
      const std::uint64_t place_seed = seeds.next_seed();
      SceneGraph g = generate(m, cond, graph_seed);
      if (placement) {
        SampledScene s = sample_scene(*placement, g, cond, shell, place_seed);
        violating += !s.violations.empty();
        scenes.scenes.push_back(std::move(s.scene));
      }
      graphs.graphs.push_back(std::move(g));
    }
  }
  if (placement) {
    save_dataset(scenes, o.out);
    std::cerr << "wrote " << scenes.scenes.size() << " scenes (" << violating << " with violations) to "
              << o.out << "\n";
  } else {
    save_graph_dataset(graphs, o.out);
    std::cerr << "wrote " << graphs.graphs.size() << " graphs to " << o.out << "\n";
  }
  return 0;
}

int cmd_eval(const Options& o) {
  json out;
  if (!o.generated.empty()) {
    if (o.labeler.empty()) throw CLI::RequiredError("--labeler (needed with --generated)");
    const GraphLabeler l = load_labeler(o.labeler);
    const GraphDataset g = load_graph_dataset(o.generated);
    check_room(l.schema.room_type, g.schema, "generated graphs " + o.generated);
    std::vector<std::pair<SceneGraph, std::size_t>> pairs;
    for (const auto& graph : g.graphs) pairs.emplace_back(graph, graph.condition.label_index);
    out = to_json(acc_g(l, pairs));
  }
  if (!o.scenes.empty()) {
    const json validity = to_json(scene_validity_report(load_dataset(o.scenes).scenes));
    out = out.is_null() ? validity : json{{"accuracy", out}, {"validity", validity}};
  }
  if (out.is_null()) throw CLI::RequiredError("--generated or --scenes");
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_serve(const Options& o) {
  ServiceConfig c = load_service_config(o.config);
  if (o.port >= 0) c.port = o.port;
  const LayoutService service = LayoutService::load(c);
  std::cerr << "listening on " << c.host << ":" << c.port << "\n";
  if (!serve(service, c)) throw Error("cannot listen on " + c.host + ":" + std::to_string(c.port));
  return 0;
}

int cmd_export_pairs(const Options& o) {
  const Dataset real = load_dataset(o.real);
  const Dataset gen = load_dataset(o.generated);
  check_room(real.room_type, gen.schema, "generated scenes " + o.generated);
  // Each generated scene is paired with the next unused real scene of its label.
  std::vector<std::vector<const Scene*>> by_label(real.schema.labels.size());
  for (const auto& s : real.scenes) by_label.at(s.condition.label_index).push_back(&s);
  std::vector<std::size_t> next(by_label.size(), 0);
  std::vector<Scene> left, right;
  for (const auto& s : gen.scenes) {
    const std::size_t l = s.condition.label_index;
    if (l >= by_label.size() || next[l] >= by_label[l].size()) continue;
    left.push_back(*by_label[l][next[l]++]);
    right.push_back(s);
  }
  if (right.size() < gen.scenes.size())
    std::cerr << "note: " << gen.scenes.size() - right.size() << " generated scenes had no real partner\n";
  const json manifest = export_comparison_pairs(left, right, o.out, o.seed);
  std::cerr << "wrote " << manifest.at("pairs").size() << " pairs to " << o.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-conditioned indoor layout synthesis"};
  app.require_subcommand(1);
  Options o;

  auto seed = [&o](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed")->capture_default_str(); };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic furnished-scene dataset");
  const auto rooms = CLI::IsMember({"tatami", "balcony", "kitchen"});
  synth->add_option("--room", o.room, "tatami, balcony or kitchen")->required()->check(rooms);
  synth->add_option("--per-label", o.per_label, "Scenes per condition label")->capture_default_str();
  synth->add_option("--out", o.out, "Dataset file to write")->required();
  seed(synth);

  auto* extract = app.add_subcommand("extract", "Extract relation graphs from a scene dataset");
  extract->add_option("--dataset", o.dataset)->required()->check(CLI::ExistingFile);
  extract->add_option("--out", o.out, "Graph dataset file to write")->required();
  extract->add_flag("--no-relations", o.no_relations, "Skip the dense pre-pruning relations");
  seed(extract);

  auto* train_graph = app.add_subcommand("train-graph", "Train the conditional graph generator");
  train_graph->add_option("--graphs", o.graphs)->required()->check(CLI::ExistingFile);
  train_graph->add_option("--out", o.out, "Checkpoint to write")->required();
  train_graph->add_option("--epochs", o.epochs, "Default 200");
  train_graph->add_option("--lr", o.learning_rate, "Default 0.05");
  train_graph->add_flag("--no-relations", o.no_relations, "Supervise edge types on pruned edges only");
  seed(train_graph);

  auto* train_inst = app.add_subcommand("train-inst", "Train the placement model");
  train_inst->add_option("--dataset", o.dataset)->required()->check(CLI::ExistingFile);
  train_inst->add_option("--out", o.out, "Checkpoint to write")->required();
  train_inst->add_option("--epochs", o.epochs, "Default 100");
  train_inst->add_option("--lr", o.learning_rate, "Default 0.02");
  seed(train_inst);

  auto* train_labeler = app.add_subcommand("train-labeler", "Train the graph labeler");
  train_labeler->add_option("--graphs", o.graphs)->required()->check(CLI::ExistingFile);
  train_labeler->add_option("--out", o.out, "Checkpoint to write")->required();
  train_labeler->add_option("--epochs", o.epochs, "Default 100");
  train_labeler->add_option("--lr", o.learning_rate, "Default 0.05");
  seed(train_labeler);

  auto* gen = app.add_subcommand("generate", "Sample graphs, or scenes with --placement");
  gen->add_option("--checkpoint", o.checkpoint, "Graph generator checkpoint")->required()->check(CLI::ExistingFile);
  gen->add_option("--room", o.room, "Must match the checkpoint when given")->check(rooms);
  gen->add_option("--label", o.label, "Condition label (default: every label)");
  gen->add_option("--count", o.count, "Samples per label")->capture_default_str();
  gen->add_option("--placement", o.placement, "Placement checkpoint")->check(CLI::ExistingFile);
  gen->add_option("--shell", o.shell, "Room shell JSON (default shell otherwise)")->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "Output file")->required();
  seed(gen);

  auto* eval = app.add_subcommand("eval", "Report generation accuracy and/or scene validity");
  eval->add_option("--labeler", o.labeler)->check(CLI::ExistingFile);
  eval->add_option("--generated", o.generated, "Generated graph dataset")->check(CLI::ExistingFile);
  eval->add_option("--scenes", o.scenes, "Scene dataset to validate")->check(CLI::ExistingFile);
  seed(eval);

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--config", o.config, "Service config JSON")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", o.port, "Overrides config and PORT");
  seed(serve_cmd);

  auto* pairs = app.add_subcommand("export-pairs", "Write real/generated image pairs for a 2AFC study");
  pairs->add_option("--real", o.real, "Real scene dataset")->required()->check(CLI::ExistingFile);
  pairs->add_option("--generated", o.generated, "Generated scene dataset")->required()->check(CLI::ExistingFile);
  pairs->add_option("--out", o.out, "Output directory")->required();
  seed(pairs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*extract) return cmd_extract(o);
    if (*train_graph) return cmd_train_graph(o);
    if (*train_inst) return cmd_train_inst(o);
    if (*train_labeler) return cmd_train_labeler(o);
    if (*gen) return cmd_generate(o);
    if (*eval) return cmd_eval(o);
    if (*serve_cmd) return cmd_serve(o);
    if (*pairs) return cmd_export_pairs(o);
  } catch (const CLI::RequiredError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
