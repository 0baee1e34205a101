#include "service.hpp"

#include "ldf/image.hpp"
#include "ldf/trainer.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cmath>

namespace ldf::service {

using nlohmann::json;

namespace {

std::vector<double> numbers(const json& j, const char* what, std::size_t expected, double limit) {
  if (!j.is_array()) throw BadRequest(std::string(what) + " must be an array");
  if (j.size() != expected)
    throw BadRequest(std::string(what) + " must have " + std::to_string(expected) + " entries, got " +
                     std::to_string(j.size()));
  std::vector<double> out;
  for (const json& v : j) {
    if (!v.is_number()) throw BadRequest(std::string(what) + " entries must be numbers");
    const double x = v.get<double>();
    if (!std::isfinite(x) || std::abs(x) > limit)
      throw BadRequest(std::string(what) + " entry out of range [-" + std::to_string(limit) + ", " +
                       std::to_string(limit) + "]");
    out.push_back(x);
  }
  return out;
}

Reply png_reply(const Image8& image) {
  const std::vector<std::uint8_t> png = encode_png(image);
  return {200, "image/png", std::string(png.begin(), png.end())};
}

Reply error_reply(int status, const std::string& message) { return {status, "text/plain", message + "\n"}; }

}  // namespace

RenderRequest parse_render_request(const std::string& body, int num_expressions, int num_fields) {
  json j;
  try {
    j = json::parse(body.empty() ? std::string("{}") : body);
  } catch (const json::parse_error& e) {
    throw BadRequest(std::string("body is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw BadRequest("body must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (key != "expression" && key != "pose" && key != "overrides" && key != "resolution")
      throw BadRequest("unknown field '" + key + "'");
  RenderRequest r;
  r.expression.assign(static_cast<std::size_t>(num_expressions), 0.0);
  if (j.contains("expression"))
    r.expression = numbers(j["expression"], "expression", static_cast<std::size_t>(num_expressions), kMaxExpression);
  if (j.contains("pose")) {
    const std::vector<double> p = numbers(j["pose"], "pose", 6, kMaxAngle);
    std::copy(p.begin(), p.end(), r.pose.begin());
  }
  if (j.contains("resolution")) {
    if (!j["resolution"].is_number_integer()) throw BadRequest("resolution must be an integer");
    r.resolution = j["resolution"].get<int>();
    if (r.resolution < kMinResolution || r.resolution > kMaxResolution)
      throw BadRequest("resolution must be in [" + std::to_string(kMinResolution) + ", " +
                       std::to_string(kMaxResolution) + "]");
  }
  if (j.contains("overrides")) {
    const json& ov = j["overrides"];
    if (!ov.is_array()) throw BadRequest("overrides must be an array");
    for (const json& o : ov) {
      if (!o.is_object() || !o.contains("field_ids") || !o.contains("expression"))
        throw BadRequest("each override needs field_ids and expression");
      FieldOverride f;
      if (!o["field_ids"].is_array()) throw BadRequest("field_ids must be an array");
      for (const json& id : o["field_ids"]) {
        if (!id.is_number_integer()) throw BadRequest("field ids must be integers");
        const int v = id.get<int>();
        if (v < 0 || v >= num_fields) throw BadRequest("field id " + std::to_string(v) + " out of range");
        f.field_ids.push_back(v);
      }
      f.expression = numbers(o["expression"], "override expression", static_cast<std::size_t>(num_expressions),
                             kMaxExpression);
      r.overrides.push_back(std::move(f));
    }
  }
  return r;
}

std::string to_json(const RenderRequest& r) {
  json j;
  j["expression"] = r.expression;
  j["pose"] = std::vector<double>(r.pose.begin(), r.pose.end());
  json ov = json::array();
  for (const FieldOverride& o : r.overrides) ov.push_back({{"field_ids", o.field_ids}, {"expression", o.expression}});
  j["overrides"] = ov;
  j["resolution"] = r.resolution;
  return j.dump();
}

std::string session_header() {
  return json{{"format", "ldf-session"}, {"version", kSessionVersion}}.dump();
}

std::vector<RenderRequest> parse_session(const std::string& text, int num_expressions, int num_fields) {
  std::vector<RenderRequest> out;
  bool header = false;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    const std::string where = "session line " + std::to_string(line_no) + ": ";
    if (!header) {
      json h;
      try {
        h = json::parse(line);
      } catch (const json::parse_error&) {
        throw BadRequest(where + "expected the session header");
      }
      if (!h.is_object() || h.value("format", std::string()) != "ldf-session")
        throw BadRequest(where + "expected the session header");
      if (!h.contains("version") || !h["version"].is_number_integer() || h["version"].get<int>() != kSessionVersion)
        throw BadRequest(where + "unsupported session version");
      header = true;
      continue;
    }
    try {
      out.push_back(parse_render_request(line, num_expressions, num_fields));
    } catch (const BadRequest& e) {
      throw BadRequest(where + e.what());
    }
  }
  if (!header) throw BadRequest("session has no header");
  return out;
}

std::string to_session(const std::vector<RenderRequest>& requests) {
  std::string s = session_header() + "\n";
  for (const RenderRequest& r : requests) s += to_json(r) + "\n";
  return s;
}

RenderService::RenderService(std::shared_ptr<const AvatarModel> model, RenderOptions options)
    : model_(std::move(model)), options_(options) {}

int RenderService::num_fields() const { return model_->ensemble() ? model_->ensemble()->size() : 0; }

std::string RenderService::meta() const {
  const AvatarModel& m = *model_;
  const BlendshapeRig& rig = m.rig();
  json j;
  j["variant"] = to_string(m.variant());
  j["rig_seed"] = rig.seed;
  j["num_vertices"] = rig.num_vertices();
  j["num_expressions"] = rig.num_expressions;
  json ex = json::array();
  for (int k = 0; k < rig.num_expressions; ++k) {
    json e = {{"index", k}, {"name", rig.expression_names[k]}, {"side", rig.expression_sides[k]}};
    if (static_cast<int>(expression_std_.size()) == rig.num_expressions) e["std"] = expression_std_[k];
    ex.push_back(e);
  }
  j["expressions"] = ex;
  j["pose_layout"] = {"head_rx", "head_ry", "head_rz", "jaw_rx", "jaw_ry", "jaw_rz"};
  json lm = json::array();
  const auto canon = rig.canonical_landmarks();
  for (int l = 0; l < rig.num_landmarks(); ++l)
    lm.push_back({{"id", l}, {"tag", rig.landmark_tags[l]}, {"position", {canon[l].x(), canon[l].y(), canon[l].z()}}});
  j["landmarks"] = lm;
  json fields = json::array();
  if (const FieldEnsemble* ens = m.ensemble()) {
    const BlendshapeRig& fr = m.field_rig();
    for (int l = 0; l < ens->size(); ++l) {
      json mask = json::array();
      for (int k = 0; k < m.mask().num_expressions; ++k) mask.push_back(m.mask().at(l, k) ? 1 : 0);
      fields.push_back({{"id", l}, {"tag", fr.landmark_tags[l]}, {"mask", mask}});
    }
    j["cutoff_radius"] = ens->law().cutoff_radius();
  }
  j["fields"] = fields;
  j["resolution"] = {{"default", 128}, {"min", kMinResolution}, {"max", kMaxResolution}};
  j["limits"] = {{"expression", kMaxExpression}, {"angle", kMaxAngle}};
  return j.dump(2);
}

RenderedImage RenderService::render_raw(const RenderRequest& r, Camera& camera) const {
  FrameCondition cond = with_overrides(*model_, default_condition(*model_, r.expression, r.pose), r.overrides);
  camera = posed_camera(default_camera(r.resolution, r.resolution), Vec3(r.pose[0], r.pose[1], r.pose[2]));
  const AvatarView view(*model_, std::move(cond));
  return render_image(view, camera, model_->bounds(), options_);
}

Image8 RenderService::render(const RenderRequest& r) const {
  Camera cam;
  const RenderedImage img = render_raw(r, cam);
  return to_image8(img.rgb, img.width, img.height, 3);
}

Image8 RenderService::depth(const RenderRequest& r) const {
  Camera cam;
  const RenderedImage img = render_raw(r, cam);
  const auto [near, far] = depth_range(cam, model_->bounds());
  return depth_image(img.depth, img.alpha, img.width, img.height, near, far);
}

Reply RenderService::handle_meta() const { return {200, "application/json", meta()}; }

Reply RenderService::handle_render(const std::string& body) const {
  try {
    return png_reply(render(parse_render_request(body, model_->rig().num_expressions, num_fields())));
  } catch (const BadRequest& e) {
    return error_reply(400, e.what());
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

Reply RenderService::handle_depth(const std::string& body) const {
  try {
    return png_reply(depth(parse_render_request(body, model_->rig().num_expressions, num_fields())));
  } catch (const BadRequest& e) {
    return error_reply(400, e.what());
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

void install_routes(httplib::Server& server, const RenderService& service) {
  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get("/meta", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.handle_meta());
  });
  server.Post("/render", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.handle_render(req.body));
  });
  server.Get("/depth", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.handle_depth(req.has_param("request") ? req.get_param_value("request") : req.body));
  });
  server.Post("/depth", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.handle_depth(req.body));
  });
}

}  // namespace ldf::service
