#pragma once

#include "ldf/control.hpp"
#include "ldf/model.hpp"

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace ldf::service {

/// A request the client got wrong; maps to HTTP 400.
class BadRequest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RenderRequest {
  std::vector<double> expression;
  std::array<double, 6> pose{};
  std::vector<FieldOverride> overrides;
  int resolution = 128;
};

constexpr int kMinResolution = 16;
constexpr int kMaxResolution = 512;
constexpr double kMaxExpression = 3.0;
constexpr double kMaxAngle = 3.14159265358979;

/// Parses and validates a JSON body. Missing fields take defaults (zero
/// expression and pose, no overrides, resolution 128).
RenderRequest parse_render_request(const std::string& body, int num_expressions, int num_fields);

/// Canonical JSON text of a request (one session-file line).
std::string to_json(const RenderRequest& request);

/// Session files: a header line {"format": "ldf-session", "version": 1}
/// followed by one render request per line. Blank and '#' lines are skipped.
constexpr int kSessionVersion = 1;
std::string session_header();
std::vector<RenderRequest> parse_session(const std::string& text, int num_expressions, int num_fields);
std::string to_session(const std::vector<RenderRequest>& requests);

struct Reply {
  int status = 200;
  std::string content_type;
  std::string body;
};

/// Renders requests against one immutable model snapshot.
class RenderService {
 public:
  RenderService(std::shared_ptr<const AvatarModel> model, RenderOptions options);

  /// Per-coefficient standard deviation over the training frames, reported
  /// by /meta when known.
  void set_expression_std(std::vector<double> std_dev) { expression_std_ = std::move(std_dev); }

  std::string meta() const;
  Image8 render(const RenderRequest& request) const;
  Image8 depth(const RenderRequest& request) const;

  Reply handle_meta() const;
  Reply handle_render(const std::string& body) const;
  Reply handle_depth(const std::string& body) const;

  const AvatarModel& model() const { return *model_; }
  int num_fields() const;

 private:
  RenderedImage render_raw(const RenderRequest& request, Camera& camera) const;

  std::shared_ptr<const AvatarModel> model_;
  RenderOptions options_;
  std::vector<double> expression_std_;
};

/// GET /meta, POST /render, GET /depth (JSON in the `request` query
/// parameter) and POST /depth (JSON body).
void install_routes(httplib::Server& server, const RenderService& service);

}  // namespace ldf::service
