#include <spdlog/spdlog.h>

#include "../cli.hpp"
#include "wxstereo/core/errors.hpp"
#include "wxstereo/datagen/datagen.hpp"

namespace wxs::cli {
namespace {

class Generate final : public Command {
 public:
  CLI::App* attach(CLI::App& app) override {
    auto* sub = app.add_subcommand("generate", "Restyle a stereo dataset under weather conditions, keeping disparity");
    sub->add_option("--config", config_path_, "JSON config file; flags override its keys");
    flags_.add<std::string>(*sub, "--src-root", "src_root", "Source dataset root");
    flags_.add<std::string>(*sub, "--split", "split", "Split to read and write");
    flags_.add<std::string>(*sub, "--out-root", "out_root", "Output dataset root");
    flags_.add<std::string>(*sub, "--conditions", "conditions", "Comma-separated: rainy,foggy,snowy,cloudy,sunny");
    flags_.add<uint64_t>(*sub, "--seed", "seed", "Global seed");
    flags_.add<int64_t>(*sub, "--steps", "steps", "Denoising steps");
    flags_.add<int64_t>(*sub, "--workers", "workers", "Parallel samples");
    flags_.add<int64_t>(*sub, "--dfm-n", "dfm/n", "Cross-view token pairs fused per site");
    flags_.add<std::string>(*sub, "--layer-selector", "dfm/layer_selector", "auto, all, or a site-name regex");
    flags_.add<std::string>(*sub, "--log-level", "log_level", "trace, debug, info, warn, error");
    sub->add_option("--backend", backend_, "mock or real (HTTP model servers)")
        ->check(CLI::IsMember({"mock", "real"}));
    return sub;
  }

  int run() override {
    nlohmann::json defaults = datagen::GenerationConfig{};
    defaults["src_root"] = "";
    defaults["split"] = "train";
    defaults["out_root"] = "";
    defaults["conditions"] = "rainy,foggy,snowy,cloudy,sunny";
    defaults["log_level"] = "info";
    nlohmann::json flags = flags_.collect();
    if (!backend_.empty()) {
      const std::string id = backend_ == "real" ? "http" : "mock";
      flags["backends"] = {{"diffusion", id}, {"depth", id}, {"prompt", id}};
    }
    nlohmann::json doc = resolve_config(defaults, config_path_, flags);
    configure_logging(get<std::string>(doc, "log_level"));

    const auto src_root = get<std::string>(doc, "src_root");
    const auto out_root = get<std::string>(doc, "out_root");
    if (src_root.empty() || out_root.empty()) throw ConfigError("src_root and out_root are required");
    const auto split = get<std::string>(doc, "split");
    const auto conditions = datagen::parse_conditions(get<std::string>(doc, "conditions"));

    nlohmann::json gen_doc = doc;
    for (const char* k : {"src_root", "split", "out_root", "conditions", "log_level"}) gen_doc.erase(k);
    const auto cfg = gen_doc.get<datagen::GenerationConfig>();
    cfg.validate();

    const auto manifest = load_manifest(src_root, split);
    spdlog::info("generating {} samples x {} conditions with {} steps", manifest.entries.size(), conditions.size(),
                 cfg.steps);
    const auto report = datagen::run_pipeline(manifest, conditions, cfg, datagen::make_backends(cfg), out_root);
    echo_config(doc, std::filesystem::path(out_root) / "config.json");
    for (const auto& s : report.samples)
      if (!s.ok) spdlog::warn("skipped {}: {}", s.output_id, s.error);
    spdlog::info("emitted {} pairs, skipped {}", report.emitted(), report.skipped());
    return report.samples.empty() || report.emitted() > 0 ? 0 : 1;
  }

 private:
  std::string config_path_;
  std::string backend_;
  FlagDoc flags_;
};

}  // namespace

std::unique_ptr<Command> make_generate_command() { return std::make_unique<Generate>(); }

}  // namespace wxs::cli
