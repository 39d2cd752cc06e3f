#include "wxstereo/datagen/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"
#include "wxstereo/datagen/http.hpp"
#include "wxstereo/datagen/mock.hpp"

namespace wxs::datagen {
namespace fs = std::filesystem;
namespace {

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------- conditions

const std::vector<Condition>& all_conditions() {
  static const std::vector<Condition> all{Condition::rainy, Condition::foggy, Condition::snowy, Condition::cloudy,
                                          Condition::sunny};
  return all;
}

std::string condition_name(Condition c) {
  switch (c) {
    case Condition::rainy: return "rainy";
    case Condition::foggy: return "foggy";
    case Condition::snowy: return "snowy";
    case Condition::cloudy: return "cloudy";
    case Condition::sunny: return "sunny";
  }
  return "?";
}

Condition parse_condition(const std::string& name) {
  for (Condition c : all_conditions())
    if (condition_name(c) == name) return c;
  throw ArgumentError("unknown weather condition '" + name + "' (expected rainy, foggy, snowy, cloudy or sunny)");
}

std::vector<Condition> parse_conditions(const std::string& csv) {
  std::vector<Condition> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const Condition c = parse_condition(item);
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  if (out.empty()) throw ArgumentError("no weather conditions given");
  return out;
}

// ---------------------------------------------------------------- prompts

std::string WeatherPrompt::text() const {
  std::string out;
  for (size_t i = 0; i < keywords.size(); ++i) {
    if (i > 0) out += ", ";
    if (i > 0 && i + 1 == keywords.size()) out += "and ";
    out += keywords[i];
  }
  return out;
}

const std::vector<std::string>& template_keywords(Condition c) {
  static const std::vector<std::string> rainy{"rainy", "dark clouds", "wet pavement", "raindrops", "reflections",
                                              "misty air"};
  static const std::vector<std::string> foggy{"foggy", "dense fog", "low visibility", "diffuse light",
                                              "muted colors", "hazy horizon"};
  static const std::vector<std::string> snowy{"snowy", "snow-covered road", "falling snowflakes", "overcast sky",
                                              "cold white light"};
  static const std::vector<std::string> cloudy{"cloudy", "overcast sky", "soft shadows", "grey light",
                                               "flat contrast"};
  static const std::vector<std::string> sunny{"sunny", "clear blue sky", "hard shadows", "bright sunlight",
                                              "warm tones"};
  switch (c) {
    case Condition::rainy: return rainy;
    case Condition::foggy: return foggy;
    case Condition::snowy: return snowy;
    case Condition::cloudy: return cloudy;
    case Condition::sunny: return sunny;
  }
  return rainy;
}

WeatherPrompt build_weather_prompt(const StereoSample& sample, Condition condition, PromptBackend* backend,
                                   uint64_t seed) {
  if (backend) {
    try {
      auto words = backend->keywords(sample, condition, seed);
      words.erase(std::remove(words.begin(), words.end(), std::string()), words.end());
      if (!words.empty()) return {condition, std::move(words), PromptSource::llm};
    } catch (const std::exception&) {
      // Fall through to the template table.
    }
  }
  return {condition, template_keywords(condition), PromptSource::template_table};
}

// ---------------------------------------------------------------- depth

void DepthCondition::validate() const {
  if (left.rank() != 2 || left.shape() != right.shape()) throw ValidationError("depth maps must be matching [H, W]");
  for (const Tensor* m : {&left, &right})
    for (double v : m->values())
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw ValidationError("depth values must lie in [0, 1]");
}

Tensor normalize_depth(const Tensor& raw) {
  if (raw.empty()) throw BackendError("depth map is empty");
  if (!raw.all_finite()) throw BackendError("depth map has non-finite values");
  const auto [lo, hi] = std::minmax_element(raw.values().begin(), raw.values().end());
  const double mn = *lo, span = *hi - *lo;
  Tensor out(raw.shape());
  for (int64_t i = 0; i < raw.numel(); ++i) out[i] = span > 0.0 ? (raw[i] - mn) / span : 0.5;
  return out;
}

DepthCondition predict_depth(const StereoSample& sample, DepthBackend& backend, uint64_t seed) {
  sample.validate();
  const Shape hw{sample.height(), sample.width()};
  DepthCondition d;
  Tensor* outs[2] = {&d.left, &d.right};
  const Tensor* views[2] = {&sample.left, &sample.right};
  for (int v = 0; v < 2; ++v) {
    Tensor raw = backend.predict(*views[v], seed);
    if (raw.shape() != hw)
      throw BackendError("depth backend returned " + shape_str(raw.shape()) + " for an image of " + shape_str(hw));
    *outs[v] = normalize_depth(raw);
  }
  return d;
}

// ---------------------------------------------------------------- config

dfm::HookConfig DfmSettings::hook_config() const {
  dfm::HookConfig h;
  h.n = n;
  h.alpha = alpha;
  h.d_max = d_max;
  h.selector.pattern = layer_selector;
  h.timestep_begin = timestep_begin;
  h.timestep_end = timestep_end;
  return h;
}

void GenerationConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (scheduler != "ddim") throw ConfigError("unsupported scheduler '" + scheduler + "' (only ddim)");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (dfm.n < 0) throw ConfigError("dfm.n must be non-negative");
  if (!(dfm.alpha >= 0.0 && dfm.alpha <= 1.0)) throw ConfigError("dfm.alpha must lie in [0, 1]");
  if (!(dfm.d_max > 0.0)) throw ConfigError("dfm.d_max must be positive");
  if (!(endpoints.timeout_s > 0.0)) throw ConfigError("endpoints.timeout_s must be positive");
  if (!std::isfinite(latent_mix) || !std::isfinite(guidance_scale) || !std::isfinite(conditioning_scale))
    throw ConfigError("generation scalars must be finite");
}

void to_json(nlohmann::json& j, const GenerationConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"scheduler", c.scheduler},
                     {"guidance_scale", c.guidance_scale},
                     {"seed", c.seed},
                     {"conditioning_scale", c.conditioning_scale},
                     {"dfm",
                      {{"enabled", c.dfm.enabled},
                       {"n", c.dfm.n},
                       {"alpha", c.dfm.alpha},
                       {"d_max", c.dfm.d_max},
                       {"layer_selector", c.dfm.layer_selector},
                       {"timestep_begin", c.dfm.timestep_begin},
                       {"timestep_end", c.dfm.timestep_end}}},
                     {"backends",
                      {{"diffusion", c.backends.diffusion}, {"depth", c.backends.depth}, {"prompt", c.backends.prompt}}},
                     {"endpoints",
                      {{"diffusion", c.endpoints.diffusion},
                       {"depth", c.endpoints.depth},
                       {"prompt", c.endpoints.prompt},
                       {"timeout_s", c.endpoints.timeout_s}}},
                     {"workers", c.workers},
                     {"latent_mix", c.latent_mix}};
}

void from_json(const nlohmann::json& j, GenerationConfig& c) {
  reject_unknown_keys(j,
                      {"steps", "scheduler", "guidance_scale", "seed", "conditioning_scale", "dfm", "backends",
                       "endpoints", "workers", "latent_mix"},
                      "generation config");
  const std::string w = "generation config";
  read_key(j, "steps", c.steps, w);
  read_key(j, "scheduler", c.scheduler, w);
  read_key(j, "guidance_scale", c.guidance_scale, w);
  read_key(j, "seed", c.seed, w);
  read_key(j, "conditioning_scale", c.conditioning_scale, w);
  read_key(j, "workers", c.workers, w);
  read_key(j, "latent_mix", c.latent_mix, w);
  if (j.contains("dfm")) {
    const auto& d = j.at("dfm");
    reject_unknown_keys(d, {"enabled", "n", "alpha", "d_max", "layer_selector", "timestep_begin", "timestep_end"},
                        "dfm");
    read_key(d, "enabled", c.dfm.enabled, "dfm");
    read_key(d, "n", c.dfm.n, "dfm");
    read_key(d, "alpha", c.dfm.alpha, "dfm");
    read_key(d, "d_max", c.dfm.d_max, "dfm");
    read_key(d, "layer_selector", c.dfm.layer_selector, "dfm");
    read_key(d, "timestep_begin", c.dfm.timestep_begin, "dfm");
    read_key(d, "timestep_end", c.dfm.timestep_end, "dfm");
  }
  if (j.contains("backends")) {
    const auto& b = j.at("backends");
    reject_unknown_keys(b, {"diffusion", "depth", "prompt"}, "backends");
    read_key(b, "diffusion", c.backends.diffusion, "backends");
    read_key(b, "depth", c.backends.depth, "backends");
    read_key(b, "prompt", c.backends.prompt, "backends");
  }
  if (j.contains("endpoints")) {
    const auto& e = j.at("endpoints");
    reject_unknown_keys(e, {"diffusion", "depth", "prompt", "timeout_s"}, "endpoints");
    read_key(e, "diffusion", c.endpoints.diffusion, "endpoints");
    read_key(e, "depth", c.endpoints.depth, "endpoints");
    read_key(e, "prompt", c.endpoints.prompt, "endpoints");
    read_key(e, "timeout_s", c.endpoints.timeout_s, "endpoints");
  }
}

BackendFactory make_backends(const GenerationConfig& cfg) {
  auto unknown = [](const std::string& kind, const std::string& id) {
    return ConfigError("unknown " + kind + " backend '" + id + "' (expected mock or http)");
  };
  BackendFactory f;
  const Endpoints ep = cfg.endpoints;
  if (cfg.backends.diffusion == "mock")
    f.diffusion = [] { return std::make_unique<mock::DiffusionMock>(); };
  else if (cfg.backends.diffusion == "http")
    f.diffusion = [ep] { return std::make_unique<http::DiffusionClient>(ep.diffusion, ep.timeout_s); };
  else
    throw unknown("diffusion", cfg.backends.diffusion);
  if (cfg.backends.depth == "mock")
    f.depth = [] { return std::make_unique<mock::LuminanceDepthBackend>(); };
  else if (cfg.backends.depth == "http")
    f.depth = [ep] { return std::make_unique<http::DepthClient>(ep.depth, ep.timeout_s); };
  else
    throw unknown("depth", cfg.backends.depth);
  if (cfg.backends.prompt == "mock")
    f.prompt = [] { return std::make_unique<mock::EchoPromptBackend>(); };
  else if (cfg.backends.prompt == "http")
    f.prompt = [ep] { return std::make_unique<http::PromptClient>(ep.prompt, ep.timeout_s); };
  else if (cfg.backends.prompt == "template")
    f.prompt = [] { return std::unique_ptr<PromptBackend>(); };
  else
    throw unknown("prompt", cfg.backends.prompt);
  return f;
}

// ---------------------------------------------------------------- generation

GenerationOutput generate_pair(const StereoSample& sample, const WeatherPrompt& prompt, const DepthCondition& depth,
                               const GenerationConfig& cfg, DiffusionBackend& diffusion, uint64_t seed) {
  sample.validate();
  depth.validate();
  if (depth.left.shape() != Shape{sample.height(), sample.width()})
    throw ArgumentError("depth condition does not match the sample resolution");

  GenerationRequest req{&sample.left, &sample.right, &depth, &prompt, &cfg, seed};
  GenerationOutput out;
  if (cfg.dfm.enabled) {
    dfm::AttentionHook hook(cfg.dfm.hook_config());
    hook.set_depth(depth.left, depth.right);
    hook.install(diffusion);
    out.images = diffusion.generate(req);
    hook.uninstall();
    out.hook_invocations = diffusion.remote_invocations().value_or(hook.invocations());
    out.hooked_sites = hook.selected_sites();
  } else {
    out.images = diffusion.generate(req);
  }
  if (out.images.left.shape() != sample.left.shape() || out.images.right.shape() != sample.right.shape())
    throw BackendError("generated images do not match the source resolution");
  if (!out.images.left.all_finite() || !out.images.right.all_finite())
    throw BackendError("generated images contain non-finite values");
  return out;
}

uint64_t sample_seed(uint64_t global_seed, const std::string& id, Condition condition) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](unsigned char b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (int i = 0; i < 8; ++i) feed(static_cast<unsigned char>(global_seed >> (8 * i)));
  for (char ch : id) feed(static_cast<unsigned char>(ch));
  feed(0);
  for (char ch : condition_name(condition)) feed(static_cast<unsigned char>(ch));
  return h;
}

int64_t GenerationReport::emitted() const {
  return std::count_if(samples.begin(), samples.end(), [](const SampleResult& s) { return s.ok; });
}

int64_t GenerationReport::skipped() const { return static_cast<int64_t>(samples.size()) - emitted(); }

nlohmann::json GenerationReport::to_json(const GenerationConfig& cfg) const {
  nlohmann::json j;
  j["counts"] = {{"requested", samples.size()}, {"emitted", emitted()}, {"skipped", skipped()}};
  j["samples"] = nlohmann::json::array();
  j["skipped"] = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json e{{"id", s.output_id},
                     {"source_id", s.source_id},
                     {"condition", condition_name(s.condition)},
                     {"seed", s.seed},
                     {"status", s.ok ? "ok" : "skipped"}};
    if (s.ok) {
      e["prompt_source"] = s.prompt_source == PromptSource::llm ? "llm" : "template";
      e["dfm_invocations"] = s.hook_invocations;
    } else {
      e["error"] = s.error;
      j["skipped"].push_back({{"id", s.output_id}, {"error", s.error}});
    }
    j["samples"].push_back(std::move(e));
  }
  j["config"] = cfg;
  return j;
}

GenerationReport run_pipeline(const DatasetManifest& manifest, const std::vector<Condition>& conditions,
                              const GenerationConfig& cfg, const BackendFactory& backends,
                              const fs::path& out_root) {
  cfg.validate();
  GenerationReport report;
  if (manifest.entries.empty() || conditions.empty()) return report;

  const std::string split = manifest.split.empty() ? "train" : manifest.split;
  {
    std::error_code ec;
    fs::create_directories(out_root / split, ec);
    const fs::path probe = out_root / ".write_probe";
    if (!ec) {
      try {
        write_file(probe, "");
        fs::remove(probe, ec);
      } catch (const Error& e) {
        throw ConfigError("output root " + out_root.string() + " is not writable: " + e.what());
      }
    }
    if (ec) throw ConfigError("output root " + out_root.string() + " is not writable: " + ec.message());
  }
  DatasetWriter writer(out_root, split);

  struct Item {
    const ManifestEntry* entry;
    Condition condition;
  };
  std::vector<Item> items;
  for (const auto& e : manifest.entries)
    for (Condition c : conditions) items.push_back({&e, c});
  report.samples.resize(items.size());

  std::atomic<size_t> next{0};
  auto worker = [&] {
    const auto diffusion = backends.diffusion();
    const auto depth_backend = backends.depth();
    const auto prompt_backend = backends.prompt ? backends.prompt() : nullptr;
    for (size_t i = next++; i < items.size(); i = next++) {
      const Item& it = items[i];
      SampleResult& r = report.samples[i];
      r.source_id = it.entry->id;
      r.condition = it.condition;
      r.output_id = it.entry->id + "_" + condition_name(it.condition);
      r.seed = sample_seed(cfg.seed, it.entry->id, it.condition);
      try {
        const StereoSample sample = load_sample(*it.entry);
        const WeatherPrompt prompt = build_weather_prompt(sample, it.condition, prompt_backend.get(), r.seed);
        const DepthCondition depth = predict_depth(sample, *depth_backend, r.seed);
        const GenerationOutput gen = generate_pair(sample, prompt, depth, cfg, *diffusion, r.seed);
        const std::string disp = read_file(it.entry->disparity_path);
        std::optional<std::string> mask;
        if (it.entry->mask_path) mask = read_file(*it.entry->mask_path);
        writer.write(r.output_id, gen.images.left, gen.images.right, disp, mask, condition_name(it.condition));
        r.ok = true;
        r.prompt_source = prompt.source;
        r.hook_invocations = gen.hook_invocations;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
    }
  };
  const auto n_workers = static_cast<size_t>(std::min<int64_t>(cfg.workers, static_cast<int64_t>(items.size())));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::sort(report.samples.begin(), report.samples.end(),
            [](const SampleResult& a, const SampleResult& b) { return a.output_id < b.output_id; });
  writer.finish();
  write_file_atomic(out_root / "report.json", report.to_json(cfg).dump(2) + "\n");
  return report;
}

}  // namespace wxs::datagen
