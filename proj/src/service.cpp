#include "layoutgen/service.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <httplib.h>

#include "layoutgen/dataset.hpp"
#include "layoutgen/json_util.hpp"
#include "layoutgen/rng.hpp"

namespace layoutgen {

using json = nlohmann::json;

namespace {

constexpr int kResponseFormatVersion = 1;

Reply error_reply(int status, const std::string& field, const std::string& message) {
  return {status, {{"error", {{"status", status}, {"field", field}, {"message", message}}}}, 0.0};
}

// The parse error's location minus the leading "request." so the UI can key
// messages on plain field names.
std::string field_of(const ParseError& e) {
  std::string where = e.where();
  const std::string prefix = "request.";
  if (where.rfind(prefix, 0) == 0) where.erase(0, prefix.size());
  return where.rfind("request", 0) == 0 ? "" : where;  // the body as a whole
}

std::optional<std::string> shell_problem(const RoomShell& shell, RoomType type) {
  Scene probe;
  probe.room_type = type;
  probe.condition.room_type = type;
  probe.shell = shell;
  for (const auto& v : validate_scene(probe).violations)
    if (v.kind == ViolationKind::invalid_shell || v.kind == ViolationKind::opening_off_wall)
      return std::string(to_string(v.kind)) + ": " + v.detail;
  return std::nullopt;
}

}  // namespace

ServiceConfig service_config_from_json(const json& j) {
  using namespace jsonu;
  ServiceConfig c;
  if (!j.is_object()) throw ParseError("config", "expected an object");
  if (j.contains("host")) c.host = string_at(j, "host", "config");
  if (j.contains("port")) {
    const long long port = integer_at(j, "port", "config");
    if (port < 0 || port > 65535) throw ParseError("config.port", "out of range");
    c.port = static_cast<int>(port);
  }
  if (j.contains("cors_origin")) c.cors_origin = string_at(j, "cors_origin", "config");
  const json& models = array_at(j, "models", "config");
  if (models.empty()) throw ParseError("config.models", "must name at least one model");
  for (std::size_t i = 0; i < models.size(); ++i) {
    const std::string p = "config.models[" + std::to_string(i) + "]";
    c.models.push_back({string_at(models[i], "condgen", p), string_at(models[i], "placement", p)});
  }
  return c;
}

ServiceConfig load_service_config(const std::string& path) {
  ServiceConfig c = service_config_from_json(jsonu::read_file(path));
  if (const char* env = std::getenv("PORT"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long port = std::strtol(env, &end, 10);
    if (*end != '\0' || port < 0 || port > 65535)
      throw ArgumentError("PORT environment variable is not a port number: '" + std::string(env) + "'");
    c.port = static_cast<int>(port);
  }
  return c;
}

GenerateRequest generate_request_from_json(const json& j) {
  using namespace jsonu;
  const std::string path = "request";
  if (!j.is_object()) throw ParseError(path, "expected an object");
  GenerateRequest r;
  const std::string room = string_at(j, "room_type", path);
  try {
    r.room_type = room_type_from_string(room);
  } catch (const ArgumentError& e) {
    // Well-formed but unknown: the handler maps SchemaMismatchError to 422.
    throw SchemaMismatchError("room_type: " + std::string(e.what()));
  }
  r.label = string_at(j, "label", path);
  if (j.contains("shell") && !j.at("shell").is_null()) r.shell = shell_from_json(j.at("shell"), path + ".shell");
  if (j.contains("seed") && !j.at("seed").is_null()) {
    const json& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
      throw ParseError(path + ".seed", "expected a non-negative integer");
    r.seed = s.get<std::uint64_t>();
  }
  if (j.contains("timing")) {
    if (!j.at("timing").is_boolean()) throw ParseError(path + ".timing", "expected a boolean");
    r.timing = j.at("timing").get<bool>();
  }
  return r;
}

LayoutService::LayoutService(std::vector<RoomModels> models) : models_(std::move(models)) {
  for (std::size_t i = 0; i < models_.size(); ++i) {
    const RoomType t = models_[i].condgen.schema.room_type;
    if (models_[i].placement.schema.room_type != t)
      throw ArgumentError("graph and placement checkpoints disagree on the room type (" +
                          std::string(to_string(t)) + " vs " +
                          std::string(to_string(models_[i].placement.schema.room_type)) + ")");
    for (std::size_t k = 0; k < i; ++k)
      if (models_[k].condgen.schema.room_type == t)
        throw ArgumentError("two models serve room type " + std::string(to_string(t)));
  }
}

LayoutService LayoutService::load(const ServiceConfig& config) {
  for (const auto& m : config.models)
    for (const std::string* p : {&m.condgen, &m.placement})
      if (!std::filesystem::is_regular_file(*p)) throw ArgumentError("checkpoint not found: " + *p);
  std::vector<RoomModels> models;
  for (const auto& m : config.models) models.push_back({load_condgen(m.condgen), load_placement(m.placement)});
  return LayoutService(std::move(models));
}

const RoomModels* LayoutService::models_for(RoomType type) const {
  for (const auto& m : models_)
    if (m.condgen.schema.room_type == type) return &m;
  return nullptr;
}

json LayoutService::schema() const {
  json rooms = json::array();
  for (const auto& m : models_) {
    const RoomType t = m.condgen.schema.room_type;
    rooms.push_back({{"room_type", to_string(t)},
                     {"condition_schema", to_json(m.condgen.schema)},
                     {"category_registry", to_json(m.condgen.registry)},
                     {"default_shell", to_json(default_shell(t))}});
  }
  return {{"format_version", kResponseFormatVersion}, {"room_types", rooms}};
}

Reply LayoutService::generate(const std::string& body) const {
  const auto start = std::chrono::steady_clock::now();
  GenerateRequest request;
  try {
    request = generate_request_from_json(jsonu::parse_text(body, "request"));
  } catch (const ParseError& e) {
    return error_reply(400, field_of(e), e.what());
  } catch (const SchemaMismatchError& e) {
    return error_reply(422, "room_type", e.what());
  }
  Reply r = generate(request);
  // Count the parsing too so the reported time covers the whole request.
  r.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (request.timing && r.status == 200) r.body["timing_ms"] = r.elapsed_ms;
  return r;
}

Reply LayoutService::generate(const GenerateRequest& request) const {
  const auto start = std::chrono::steady_clock::now();
  const RoomModels* models = models_for(request.room_type);
  if (models == nullptr)
    return error_reply(422, "room_type",
                       "no model loaded for room type " + std::string(to_string(request.room_type)));
  ConditionCode cond{request.room_type, 0};
  try {
    cond.label_index = models->condgen.schema.index_of(request.label);
  } catch (const SchemaMismatchError& e) {
    return error_reply(422, "label", e.what());
  }
  const RoomShell shell = request.shell.value_or(default_shell(request.room_type));
  if (auto problem = shell_problem(shell, request.room_type)) return error_reply(422, "shell", *problem);

  Rng seeds(request.seed);
  const std::uint64_t graph_seed = seeds.next_seed();
  const std::uint64_t placement_seed = seeds.next_seed();
  SceneGraph graph;
  SampledScene sampled;
  try {
    graph = layoutgen::generate(models->condgen, cond, graph_seed);
    sampled = sample_scene(models->placement, graph, cond, shell, placement_seed);
  } catch (const NoSpaceError& e) {
    return error_reply(422, "shell", std::string("room too small for the generated layout: ") + e.what());
  } catch (const InstantiationError& e) {
    return error_reply(422, "shell", e.what());
  }

  json violations = json::array();
  for (const auto& v : validate_scene(sampled.scene).violations)
    violations.push_back({{"kind", to_string(v.kind)}, {"detail", v.detail}});
  for (const auto& v : sampled.violations) violations.push_back({{"kind", "placement"}, {"detail", v}});

  Reply r;
  r.body = {{"format_version", kResponseFormatVersion},
            {"seed", request.seed},
            {"label", request.label},
            {"scene", to_json(sampled.scene)},
            {"graph", to_json(graph)},
            {"item_nodes", sampled.item_nodes},
            {"predicate_satisfaction", sampled.satisfaction_rate()},
            {"violations", violations}};
  r.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (request.timing) r.body["timing_ms"] = r.elapsed_ms;
  return r;
}

Reply LayoutService::extract(const std::string& body) const {
  Scene scene;
  try {
    scene = scene_from_json(jsonu::parse_text(body, "request"), "scene");
  } catch (const ParseError& e) {
    return error_reply(400, e.where(), e.what());
  }
  try {
    return {200, to_json(scene_to_graph(scene)), 0.0};
  } catch (const ExtractionError& e) {
    return error_reply(422, "scene", e.what());
  } catch (const ArgumentError& e) {
    return error_reply(422, "scene", e.what());
  }
}

void install_routes(httplib::Server& server, const LayoutService& service, const std::string& cors_origin) {
  server.set_default_headers({{"Access-Control-Allow-Origin", cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.set_payload_max_length(4 << 20);

  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_header("X-Elapsed-Ms", std::to_string(r.elapsed_ms));
    res.set_content(r.body.dump(), "application/json");
  };

  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });
  server.Get("/api/v1/schema", [&service](const httplib::Request&, httplib::Response& res) {
    res.set_content(service.schema().dump(), "application/json");
  });
  server.Post("/api/v1/generate", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.generate(req.body));
  });
  server.Post("/api/v1/extract", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.extract(req.body));
  });
  // Preflight for browsers posting JSON from another origin.
  server.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(json{{"error", {{"status", 500}, {"field", ""}, {"message", message}}}}.dump(),
                    "application/json");
  });
}

bool serve(const LayoutService& service, const ServiceConfig& config) {
  httplib::Server server;
  install_routes(server, service, config.cors_origin);
  return server.listen(config.host, config.port);
}

}  // namespace layoutgen
