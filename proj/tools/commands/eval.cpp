#include <cstdio>

#include <spdlog/spdlog.h>

#include "../cli.hpp"
#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"
#include "wxstereo/evalharness/evalharness.hpp"
#include "wxstereo/stereonet/stereonet.hpp"

namespace wxs::cli {
namespace {

class Eval final : public Command {
 public:
  CLI::App* attach(CLI::App& app) override {
    auto* sub = app.add_subcommand("eval", "EPE and D1 per frame, aggregated per weather subset");
    sub->add_option("--config", config_path_, "JSON config file; flags override its keys");
    flags_.add<std::string>(*sub, "--pred-dir", "pred_dir", "Directory of <id>.pfm predictions");
    flags_.add<std::string>(*sub, "--checkpoint", "checkpoint", "Stereo checkpoint to predict with instead");
    flags_.add<std::string>(*sub, "--gt-root", "gt_root", "Ground-truth dataset root");
    flags_.add<std::string>(*sub, "--split", "split", "Split to evaluate");
    flags_.add<std::string>(*sub, "--d1-mode", "d1_mode", "and (benchmark) or or")->check(CLI::IsMember({"and", "or"}));
    flags_.add_flag(*sub, "--frame-weighted", "frame_weighted", "Average frames equally instead of pooling pixels");
    flags_.add<std::string>(*sub, "--out", "out", "Report JSON path");
    flags_.add<std::string>(*sub, "--log-level", "log_level", "trace, debug, info, warn, error");
    return sub;
  }

  int run() override {
    const nlohmann::json defaults{{"pred_dir", ""},   {"checkpoint", ""},       {"gt_root", ""},
                                  {"split", "test"},  {"d1_mode", "and"},       {"frame_weighted", false},
                                  {"out", ""},        {"log_level", "info"}};
    const nlohmann::json doc = resolve_config(defaults, config_path_, flags_.collect());
    configure_logging(get<std::string>(doc, "log_level"));
    const auto pred_dir = get<std::string>(doc, "pred_dir");
    const auto checkpoint = get<std::string>(doc, "checkpoint");
    const auto gt_root = get<std::string>(doc, "gt_root");
    const auto out = get<std::string>(doc, "out");
    if (pred_dir.empty() == checkpoint.empty()) throw ConfigError("give exactly one of pred_dir and checkpoint");
    if (gt_root.empty() || out.empty()) throw ConfigError("gt_root and out are required");
    const auto mode = eval::parse_d1_mode(get<std::string>(doc, "d1_mode"));
    const auto weighting = get<bool>(doc, "frame_weighted") ? eval::Weighting::frame : eval::Weighting::pixel;

    const auto manifest = load_manifest(gt_root, get<std::string>(doc, "split"));
    eval::Evaluation ev;
    if (!pred_dir.empty()) {
      ev = eval::evaluate(std::filesystem::path(pred_dir), manifest, mode);
    } else {
      const auto model = stereonet::StereoModel::load(checkpoint);
      ev = eval::evaluate(model, manifest, mode);
    }
    for (const auto& f : ev.failures) spdlog::warn("failed {}: {}", f.id, f.reason);
    for (const auto& f : ev.excluded) spdlog::warn("excluded {}: {}", f.id, f.reason);
    const auto report = eval::aggregate(ev.records, weighting, mode);

    const std::filesystem::path out_path(out);
    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    write_file_atomic(out_path, eval::to_json(report, ev).dump(2) + "\n");
    auto echo = out_path;
    echo.replace_extension(".config.json");
    echo_config(doc, echo);
    std::fputs(eval::format_table(report).c_str(), stdout);
    spdlog::info("{} frames evaluated, {} failed, {} excluded", ev.records.size(), ev.failures.size(),
                 ev.excluded.size());
    return 0;
  }

 private:
  std::string config_path_;
  FlagDoc flags_;
};

}  // namespace

std::unique_ptr<Command> make_eval_command() { return std::make_unique<Eval>(); }

}  // namespace wxs::cli
