#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "layoutgen/condgen.hpp"
#include "layoutgen/instantiate.hpp"

namespace httplib {
class Server;
}

namespace layoutgen {

/// Checkpoint pair serving one room type.
struct ModelPaths {
  std::string condgen;
  std::string placement;
};

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::string cors_origin = "*";
  std::vector<ModelPaths> models;
};

/// Parses {host?, port?, cors_origin?, models: [{condgen, placement}]}.
ServiceConfig service_config_from_json(const nlohmann::json& j);
/// Reads the config file, then lets a valid PORT environment variable override the port.
ServiceConfig load_service_config(const std::string& path);

struct RoomModels {
  CondGenModel condgen;
  PlacementModel placement;
};

struct GenerateRequest {
  RoomType room_type = RoomType::tatami;
  std::string label;
  std::optional<RoomShell> shell;
  std::uint64_t seed = 0;
  bool timing = false;  // include timing_ms in the body
};

/// Throws ParseError naming the offending field.
GenerateRequest generate_request_from_json(const nlohmann::json& j);

/// Status code plus JSON body. Error bodies look like
/// {"error": {"status": 422, "field": "label", "message": "..."}}.
struct Reply {
  int status = 200;
  nlohmann::json body;
  double elapsed_ms = 0.0;
};

/// The immutable model snapshot behind the HTTP endpoints. Every handler is
/// const and keeps its state on the stack, so one instance serves concurrent
/// requests without locking.
class LayoutService {
 public:
  /// Throws ArgumentError if two bundles serve the same room type or a
  /// bundle's checkpoints disagree on the room type.
  explicit LayoutService(std::vector<RoomModels> models);

  /// Loads every checkpoint named in the config. A missing file is reported
  /// by path before anything else is parsed.
  static LayoutService load(const ServiceConfig& config);

  nlohmann::json schema() const;
  Reply generate(const std::string& body) const;
  Reply generate(const GenerateRequest& request) const;
  Reply extract(const std::string& body) const;

  const RoomModels* models_for(RoomType type) const;

 private:
  std::vector<RoomModels> models_;
};

/// Registers /healthz and the /api/v1 routes plus CORS headers.
void install_routes(httplib::Server& server, const LayoutService& service,
                    const std::string& cors_origin);

/// Blocks until the server stops. Returns false if the port could not be bound.
bool serve(const LayoutService& service, const ServiceConfig& config);

}  // namespace layoutgen
