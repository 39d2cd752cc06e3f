#include "wxstereo/datagen/http.hpp"

#include <cmath>

#include <httplib.h>

#include "wxstereo/core/errors.hpp"

namespace wxs::datagen::http {
namespace {

httplib::Client make_client(const std::string& endpoint, double timeout_s) {
  httplib::Client cli(endpoint);
  if (!cli.is_valid()) throw BackendError("invalid backend endpoint '" + endpoint + "'");
  const auto sec = static_cast<time_t>(timeout_s);
  const auto usec = static_cast<time_t>((timeout_s - static_cast<double>(sec)) * 1e6);
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  return cli;
}

nlohmann::json parse_reply(const httplib::Result& res, const std::string& where) {
  if (!res) throw BackendError(where + ": " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw BackendError(where + ": HTTP " + std::to_string(res->status) + " " + res->body.substr(0, 200));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(where + ": malformed reply: " + e.what());
  }
}

}  // namespace

nlohmann::json encode_tensor(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.storage()}}; }

Tensor decode_tensor(const nlohmann::json& j) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw BackendError("tensor payload has " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
    return Tensor(std::move(shape), std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed tensor payload: ") + e.what());
  }
}

nlohmann::json post_json(const std::string& endpoint, const std::string& path, const nlohmann::json& body,
                         double timeout_s) {
  auto cli = make_client(endpoint, timeout_s);
  return parse_reply(cli.Post(path, body.dump(), "application/json"), "POST " + endpoint + path);
}

nlohmann::json get_json(const std::string& endpoint, const std::string& path, double timeout_s) {
  auto cli = make_client(endpoint, timeout_s);
  return parse_reply(cli.Get(path), "GET " + endpoint + path);
}

PromptClient::PromptClient(std::string endpoint, double timeout_s)
    : endpoint_(std::move(endpoint)), timeout_s_(timeout_s) {}

std::vector<std::string> PromptClient::keywords(const StereoSample& sample, Condition condition, uint64_t seed) {
  const auto reply =
      post_json(endpoint_, "/keywords", {{"condition", condition_name(condition)}, {"seed", seed}, {"id", sample.id}},
                timeout_s_);
  try {
    return reply.at("keywords").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("prompt backend: ") + e.what());
  }
}

DepthClient::DepthClient(std::string endpoint, double timeout_s)
    : endpoint_(std::move(endpoint)), timeout_s_(timeout_s) {}

Tensor DepthClient::predict(const Tensor& image, uint64_t seed) {
  const auto reply = post_json(endpoint_, "/depth", {{"image", encode_tensor(image)}, {"seed", seed}}, timeout_s_);
  if (!reply.contains("depth")) throw BackendError("depth backend reply lacks 'depth'");
  return decode_tensor(reply.at("depth"));
}

DiffusionClient::DiffusionClient(std::string endpoint, double timeout_s)
    : endpoint_(std::move(endpoint)), timeout_s_(timeout_s) {}

std::vector<dfm::AttentionSite> DiffusionClient::attention_sites() const {
  const auto reply = get_json(endpoint_, "/sites", timeout_s_);
  std::vector<dfm::AttentionSite> sites;
  try {
    for (const auto& s : reply.at("sites"))
      sites.push_back({s.at("name").get<std::string>(), s.at("downsample").get<int64_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("diffusion backend /sites: ") + e.what());
  }
  return sites;
}

GeneratedPair DiffusionClient::generate(const GenerationRequest& req) {
  const GenerationConfig& cfg = *req.config;
  const DfmSettings& d = cfg.dfm;
  nlohmann::json body{{"left", encode_tensor(*req.left)},
                      {"right", encode_tensor(*req.right)},
                      {"depth_left", encode_tensor(req.depth->left)},
                      {"depth_right", encode_tensor(req.depth->right)},
                      {"prompt", req.prompt->text()},
                      {"steps", cfg.steps},
                      {"scheduler", cfg.scheduler},
                      {"guidance_scale", cfg.guidance_scale},
                      {"conditioning_scale", cfg.conditioning_scale},
                      {"seed", req.seed},
                      {"dfm",
                       {{"enabled", hooked_},
                        {"n", d.n},
                        {"alpha", d.alpha},
                        {"d_max", d.d_max},
                        {"layer_selector", d.layer_selector},
                        {"timestep_begin", d.timestep_begin},
                        {"timestep_end", d.timestep_end}}}};
  const auto reply = post_json(endpoint_, "/generate", body, timeout_s_);
  GeneratedPair pair;
  try {
    pair.left = decode_tensor(reply.at("left"));
    pair.right = decode_tensor(reply.at("right"));
    remote_invocations_ = reply.value("dfm_invocations", int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("diffusion backend /generate: ") + e.what());
  }
  if (pair.left.shape() != req.left->shape() || pair.right.shape() != req.right->shape())
    throw BackendError("diffusion backend changed the image resolution");
  return pair;
}

}  // namespace wxs::datagen::http
