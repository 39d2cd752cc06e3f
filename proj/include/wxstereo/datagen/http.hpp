#pragma once

#include <string>

#include "wxstereo/datagen/datagen.hpp"

// Thin adapters for out-of-process model servers. Wire format is JSON; images
// and maps travel as {"shape": [...], "data": [...]} with float values.
//
//   POST /keywords {condition, seed, id}              -> {keywords: [...]}
//   POST /depth    {image, seed}                      -> {depth}
//   GET  /sites                                       -> {sites: [{name, downsample}]}
//   POST /generate {left, right, depth_left, depth_right, prompt, steps,
//                   scheduler, guidance_scale, conditioning_scale, seed,
//                   dfm: {enabled, n, alpha, d_max, layer_selector,
//                         timestep_begin, timestep_end}} -> {left, right, dfm_invocations}
//
// The consistency module cannot reach into a remote process, so the diffusion
// adapter forwards the dfm settings and the server applies the fusion.

namespace wxs::datagen::http {

nlohmann::json encode_tensor(const Tensor& t);
/// Throws BackendError on malformed payloads.
Tensor decode_tensor(const nlohmann::json& j);

class PromptClient final : public PromptBackend {
 public:
  PromptClient(std::string endpoint, double timeout_s);
  std::vector<std::string> keywords(const StereoSample& sample, Condition condition, uint64_t seed) override;

 private:
  std::string endpoint_;
  double timeout_s_;
};

class DepthClient final : public DepthBackend {
 public:
  DepthClient(std::string endpoint, double timeout_s);
  Tensor predict(const Tensor& image, uint64_t seed) override;

 private:
  std::string endpoint_;
  double timeout_s_;
};

class DiffusionClient final : public DiffusionBackend {
 public:
  DiffusionClient(std::string endpoint, double timeout_s);
  std::vector<dfm::AttentionSite> attention_sites() const override;
  void set_interceptor(dfm::SiteInterceptor* interceptor) override { hooked_ = interceptor != nullptr; }
  GeneratedPair generate(const GenerationRequest& request) override;

  std::optional<int64_t> remote_invocations() const override { return remote_invocations_; }

 private:
  std::string endpoint_;
  double timeout_s_;
  bool hooked_ = false;
  int64_t remote_invocations_ = 0;
};

/// POSTs JSON, returns the parsed reply; BackendError on transport or status
/// failure.
nlohmann::json post_json(const std::string& endpoint, const std::string& path, const nlohmann::json& body,
                         double timeout_s);
nlohmann::json get_json(const std::string& endpoint, const std::string& path, double timeout_s);

}  // namespace wxs::datagen::http
