#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wxstereo/core/dataset.hpp"
#include "wxstereo/dfm/hook.hpp"

namespace wxs::datagen {

enum class Condition { rainy, foggy, snowy, cloudy, sunny };

const std::vector<Condition>& all_conditions();
/// Throws ArgumentError naming the accepted conditions.
Condition parse_condition(const std::string& name);
std::string condition_name(Condition c);
/// Comma-separated list, e.g. "rainy,foggy".
std::vector<Condition> parse_conditions(const std::string& csv);

enum class PromptSource { llm, template_table };

struct WeatherPrompt {
  Condition condition = Condition::rainy;
  std::vector<std::string> keywords;
  PromptSource source = PromptSource::template_table;

  /// Keywords joined as "a, b, and c".
  std::string text() const;
};

/// Built-in keyword table used whenever the prompt backend fails.
const std::vector<std::string>& template_keywords(Condition c);

/// Per-view normalised inverse depth [H, W] in [0, 1], near = 1.
struct DepthCondition {
  Tensor left;
  Tensor right;
  void validate() const;
};

/// Min-max normalisation to [0, 1]; a constant map becomes 0.5. Throws
/// BackendError on non-finite input.
Tensor normalize_depth(const Tensor& raw);

struct DfmSettings {
  bool enabled = true;  // false: no hook installed at all
  int64_t n = 32;
  double alpha = 0.5;
  double d_max = 192.0;
  std::string layer_selector = "auto";
  int64_t timestep_begin = 0;
  int64_t timestep_end = -1;

  dfm::HookConfig hook_config() const;
};

struct BackendIds {
  std::string diffusion = "mock";
  std::string depth = "mock";
  std::string prompt = "mock";
};

struct Endpoints {
  std::string diffusion = "http://127.0.0.1:8701";
  std::string depth = "http://127.0.0.1:8702";
  std::string prompt = "http://127.0.0.1:8703";
  double timeout_s = 30.0;
};

struct GenerationConfig {
  int64_t steps = 50;
  std::string scheduler = "ddim";
  double guidance_scale = 7.5;
  uint64_t seed = 0;
  double conditioning_scale = 1.0;
  DfmSettings dfm;
  BackendIds backends;
  Endpoints endpoints;
  int64_t workers = 1;
  double latent_mix = 0.25;  // mock diffusion: weight of the latent residual

  void validate() const;
};

/// Strict: unknown keys raise ConfigError.
void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);

// ---------------------------------------------------------------- backends

class PromptBackend {
 public:
  virtual ~PromptBackend() = default;
  virtual std::vector<std::string> keywords(const StereoSample& sample, Condition condition, uint64_t seed) = 0;
};

class DepthBackend {
 public:
  virtual ~DepthBackend() = default;
  /// Raw relative inverse depth [H, W] for an image [3, H, W]; any range.
  virtual Tensor predict(const Tensor& image, uint64_t seed) = 0;
};

struct GenerationRequest {
  const Tensor* left = nullptr;
  const Tensor* right = nullptr;
  const DepthCondition* depth = nullptr;
  const WeatherPrompt* prompt = nullptr;
  const GenerationConfig* config = nullptr;
  uint64_t seed = 0;
};

struct GeneratedPair {
  Tensor left;
  Tensor right;
};

/// Text- and depth-conditioned generator producing both views in one stacked
/// batch, so an installed interceptor sees [2, N, C] tokens at every site.
class DiffusionBackend : public dfm::HookableBackend {
 public:
  virtual GeneratedPair generate(const GenerationRequest& request) = 0;
  /// Set by backends that apply the fusion out of process: the invocation
  /// count they reported for the last call.
  virtual std::optional<int64_t> remote_invocations() const { return std::nullopt; }
};

/// Creates per-worker backend instances; the hook binds to one diffusion
/// instance at a time, so workers never share them.
struct BackendFactory {
  std::function<std::unique_ptr<DiffusionBackend>()> diffusion;
  std::function<std::unique_ptr<DepthBackend>()> depth;
  std::function<std::unique_ptr<PromptBackend>()> prompt;
};

/// Mocks for ids "mock" and HTTP adapters for "http"; throws ConfigError for
/// anything else.
BackendFactory make_backends(const GenerationConfig& cfg);

// ---------------------------------------------------------------- operations

/// Never throws for backend failures: falls back to the template table.
WeatherPrompt build_weather_prompt(const StereoSample& sample, Condition condition, PromptBackend* backend,
                                   uint64_t seed = 0);

/// Throws BackendError when the backend fails or returns a mismatched map.
DepthCondition predict_depth(const StereoSample& sample, DepthBackend& backend, uint64_t seed = 0);

struct GenerationOutput {
  GeneratedPair images;
  int64_t hook_invocations = 0;
  std::vector<std::string> hooked_sites;
};

/// Installs a fresh consistency hook (unless disabled), generates both views
/// jointly, and uninstalls it. Throws BackendError on failure.
GenerationOutput generate_pair(const StereoSample& sample, const WeatherPrompt& prompt, const DepthCondition& depth,
                               const GenerationConfig& cfg, DiffusionBackend& diffusion, uint64_t seed);

/// Stable FNV-1a over (seed, id, condition).
uint64_t sample_seed(uint64_t global_seed, const std::string& id, Condition condition);

struct SampleResult {
  std::string output_id;  // <id>_<condition>
  std::string source_id;
  Condition condition = Condition::rainy;
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  PromptSource prompt_source = PromptSource::template_table;
  int64_t hook_invocations = 0;
};

struct GenerationReport {
  std::vector<SampleResult> samples;  // sorted by output id
  int64_t emitted() const;
  int64_t skipped() const;
  nlohmann::json to_json(const GenerationConfig& cfg) const;
};

/// Emits <out_root>/<split>/{left,right,disp,mask} plus subsets.json and
/// report.json. Source disparity and mask files are copied byte for byte.
/// Throws ConfigError when out_root cannot be written; per-sample failures are
/// recorded and skipped. An empty manifest writes nothing.
GenerationReport run_pipeline(const DatasetManifest& manifest, const std::vector<Condition>& conditions,
                              const GenerationConfig& cfg, const BackendFactory& backends,
                              const std::filesystem::path& out_root);

}  // namespace wxs::datagen
