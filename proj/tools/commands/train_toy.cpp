#include <spdlog/spdlog.h>

#include "../cli.hpp"
#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"
#include "wxstereo/stereonet/stereonet.hpp"

namespace wxs::cli {
namespace {

class TrainToy final : public Command {
 public:
  CLI::App* attach(CLI::App& app) override {
    auto* sub = app.add_subcommand("train-toy", "Train a small stereo model on a dataset split");
    sub->add_option("--config", config_path_, "JSON config file; flags override its keys");
    flags_.add<std::string>(*sub, "--data-root", "data_root", "Dataset root");
    flags_.add<std::string>(*sub, "--split", "split", "Split to train on");
    flags_.add<std::string>(*sub, "--out-dir", "out_dir", "Where model.ckpt and train_log.json go");
    flags_.add<int64_t>(*sub, "--steps", "steps", "Optimizer steps");
    flags_.add<double>(*sub, "--lr", "lr", "Adam learning rate");
    flags_.add<int64_t>(*sub, "--batch-size", "batch_size", "Samples per step");
    flags_.add<int64_t>(*sub, "--iterations", "K", "Refinement iterations K");
    flags_.add<int64_t>(*sub, "--disparities", "D", "Quarter-resolution disparity candidates D");
    flags_.add<double>(*sub, "--gamma", "gamma", "Iteration loss decay in (0, 1]");
    flags_.add<uint64_t>(*sub, "--seed", "seed", "Initialisation and shuffling seed");
    flags_.add<double>(*sub, "--target-epe", "target_epe", "Stop once training EPE drops below this (0: never)");
    flags_.add<int64_t>(*sub, "--eval-every", "eval_every", "Steps between EPE evaluations (0: off)");
    flags_.add<std::string>(*sub, "--log-level", "log_level", "trace, debug, info, warn, error");
    return sub;
  }

  int run() override {
    const nlohmann::json defaults{{"data_root", ""},
                                  {"split", "train"},
                                  {"out_dir", ""},
                                  {"steps", 2000},
                                  {"lr", 2e-3},
                                  {"batch_size", 1},
                                  {"K", 4},
                                  {"D", 8},
                                  {"gamma", 0.9},
                                  {"seed", 0},
                                  {"channel_plan", {16, 24, 32, 32}},
                                  {"stem_channels", 8},
                                  {"hidden_channels", 16},
                                  {"context_channels", 16},
                                  {"fit_artifact_map", true},
                                  {"queue_capacity", 4},
                                  {"eval_every", 50},
                                  {"target_epe", 0.0},
                                  {"log_level", "info"}};
    const nlohmann::json doc = resolve_config(defaults, config_path_, flags_.collect());
    configure_logging(get<std::string>(doc, "log_level"));
    const auto data_root = get<std::string>(doc, "data_root");
    const auto out_dir = std::filesystem::path(get<std::string>(doc, "out_dir"));
    if (data_root.empty() || out_dir.empty()) throw ConfigError("data_root and out_dir are required");

    const auto plan = get<std::vector<int64_t>>(doc, "channel_plan");
    if (plan.size() != 4) throw ConfigError("channel_plan needs four widths (strides 4, 8, 16, 32)");
    stereonet::StereoConfig cfg;
    cfg.encoder.plan = {plan[0], plan[1], plan[2], plan[3]};
    cfg.encoder.stem_channels = get<int64_t>(doc, "stem_channels");
    cfg.encoder.seed = get<uint64_t>(doc, "seed");
    cfg.d_range = get<int64_t>(doc, "D");
    cfg.iterations = get<int64_t>(doc, "K");
    cfg.hidden_channels = get<int64_t>(doc, "hidden_channels");
    cfg.context_channels = get<int64_t>(doc, "context_channels");

    stereonet::TrainOptions opt;
    opt.steps = get<int64_t>(doc, "steps");
    opt.lr = get<double>(doc, "lr");
    opt.batch_size = get<int64_t>(doc, "batch_size");
    opt.gamma = get<double>(doc, "gamma");
    opt.seed = cfg.encoder.seed;
    opt.queue_capacity = get<size_t>(doc, "queue_capacity");
    opt.eval_every = get<int64_t>(doc, "eval_every");
    opt.target_epe = get<double>(doc, "target_epe");

    const auto manifest = load_manifest(data_root, get<std::string>(doc, "split"));
    std::vector<StereoSample> samples;
    samples.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) samples.push_back(load_sample(e));
    if (samples.empty()) throw InsufficientDataError("no training samples in " + data_root);

    std::filesystem::create_directories(out_dir);
    echo_config(doc, out_dir / "config.json");

    stereonet::StereoModel model(cfg);
    if (get<bool>(doc, "fit_artifact_map") && samples.size() >= 2) {
      std::vector<Tensor> lefts;
      for (const auto& s : samples) {
        if (s.left.shape() != samples.front().left.shape()) break;
        lefts.push_back(s.left);
      }
      if (lefts.size() == samples.size()) model.encoder().denoiser().fit(lefts);
      else spdlog::warn("images differ in size; skipping artifact map fit");
    }
    spdlog::info("training {} parameters on {} samples for up to {} steps", model.parameters().total_size(),
                 samples.size(), opt.steps);
    const auto log = stereonet::train(model, samples, opt, [](int64_t step, double loss) {
      if (step % 50 == 0) spdlog::info("step {:>5}  loss {:.4f}", step, loss);
    });
    model.save(out_dir / "model.ckpt");

    nlohmann::json out{{"steps_run", log.steps_run},
                       {"final_epe", log.final_epe},
                       {"reached_target", log.reached_target},
                       {"losses", log.losses},
                       {"evals", nlohmann::json::array()}};
    for (const auto& [step, epe] : log.evals) out["evals"].push_back({{"step", step}, {"epe", epe}});
    write_file_atomic(out_dir / "train_log.json", out.dump(2) + "\n");
    spdlog::info("{} steps, final EPE {:.4f}", log.steps_run, log.final_epe);
    return 0;
  }

 private:
  std::string config_path_;
  FlagDoc flags_;
};

}  // namespace

std::unique_ptr<Command> make_train_toy_command() { return std::make_unique<TrainToy>(); }

}  // namespace wxs::cli
