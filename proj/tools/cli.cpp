#include "cli.hpp"

#include <cstdio>
#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"

namespace wxs::cli {
namespace {

void check_known(const nlohmann::json& given, const nlohmann::json& defaults, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError("config " + (prefix.empty() ? "document" : prefix) + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (defaults.at(key).is_object()) check_known(value, defaults.at(key), path);
  }
}

int fail(const std::string& cls, const std::string& message, int code) {
  std::string line = message;
  for (char& c : line)
    if (c == '\n') c = ' ';
  std::fprintf(stderr, "error[%s]: %s\n", cls.c_str(), line.c_str());
  return code;
}

}  // namespace

void throw_config_error(const std::string& message) { throw ConfigError(message); }

CLI::Option* FlagDoc::add_flag(CLI::App& app, const std::string& flag, const std::string& key,
                               const std::string& help) {
  CLI::Option* opt = app.add_flag(flag, help);
  const auto ptr = nlohmann::json::json_pointer("/" + key);
  appliers_.push_back([opt, ptr](nlohmann::json& doc) {
    if (opt->count() > 0) doc[ptr] = true;
  });
  return opt;
}

nlohmann::json FlagDoc::collect() const {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& apply : appliers_) apply(doc);
  return doc;
}

nlohmann::json resolve_config(const nlohmann::json& defaults, const std::string& config_path,
                              const nlohmann::json& flags) {
  nlohmann::json doc = defaults;
  if (!config_path.empty()) {
    if (!std::filesystem::is_regular_file(config_path)) throw ConfigError("config file " + config_path + " not found");
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(read_file(config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse " + config_path + ": " + e.what());
    }
    check_known(file, defaults, "");
    doc.merge_patch(file);
  }
  check_known(flags, defaults, "");
  doc.merge_patch(flags);
  return doc;
}

void echo_config(const nlohmann::json& doc, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  write_file_atomic(path, doc.dump(2) + "\n");
  spdlog::debug("resolved config written to {}", path.string());
}

void configure_logging(const std::string& level) {
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off")
    throw ConfigError("unknown log level '" + level + "' (trace, debug, info, warn, error, off)");
  static bool initialised = false;
  if (!initialised) {
    auto logger = spdlog::stderr_color_mt("wxstereo");
    logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    spdlog::set_default_logger(logger);
    initialised = true;
  }
  spdlog::set_level(lvl);
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Adverse-weather stereo data generation, training and evaluation toolkit", "wxstereo"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::vector<std::unique_ptr<Command>> commands;
  commands.push_back(make_generate_command());
  commands.push_back(make_eval_command());
  commands.push_back(make_train_toy_command());
  commands.push_back(make_inspect_features_command());
  commands.push_back(make_synthetic_command());
  std::vector<std::pair<CLI::App*, Command*>> subs;
  for (auto& c : commands) subs.emplace_back(c->attach(app), c.get());

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    for (auto& [sub, cmd] : subs)
      if (sub->parsed()) return cmd->run();
    return fail("usage", "no subcommand given", 2);
  } catch (const ConfigError& e) {
    return fail(e.error_class(), e.what(), 2);
  } catch (const ArgumentError& e) {
    return fail(e.error_class(), e.what(), 2);
  } catch (const Error& e) {
    return fail(e.error_class(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}

}  // namespace wxs::cli
