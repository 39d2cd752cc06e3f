#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace wxs::cli {

/// Parses argv, runs one subcommand and maps failures to exit codes:
/// 0 success, 1 runtime failure, 2 usage or configuration error. Errors print
/// one line "error[<class>]: <message>" on stderr.
int dispatch(int argc, const char* const* argv);

/// Collects the flags a user actually passed as a JSON document, so file
/// config can be overridden key by key.
class FlagDoc {
 public:
  template <typename T>
  CLI::Option* add(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app.add_option(flag, *value, help);
    const auto ptr = nlohmann::json::json_pointer("/" + key);
    appliers_.push_back([opt, value, ptr](nlohmann::json& doc) {
      if (opt->count() > 0) doc[ptr] = *value;
    });
    return opt;
  }

  CLI::Option* add_flag(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help);

  nlohmann::json collect() const;

 private:
  std::vector<std::function<void(nlohmann::json&)>> appliers_;
};

/// defaults ⊕ file ⊕ flags (later wins, objects merge recursively). Keys
/// missing from `defaults` raise ConfigError.
nlohmann::json resolve_config(const nlohmann::json& defaults, const std::string& config_path,
                              const nlohmann::json& flags);

/// Writes the resolved document (2-space indent, trailing newline).
void echo_config(const nlohmann::json& doc, const std::filesystem::path& path);

void configure_logging(const std::string& level);

[[noreturn]] void throw_config_error(const std::string& message);

/// Typed read with a ConfigError naming the key on mismatch.
template <typename T>
T get(const nlohmann::json& doc, const std::string& key) {
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw_config_error("config key '" + key + "': " + e.what());
  }
}
/// A subcommand: registers its flags, then runs once parsed.
class Command {
 public:
  virtual ~Command() = default;
  virtual CLI::App* attach(CLI::App& app) = 0;
  virtual int run() = 0;
};

std::unique_ptr<Command> make_synthetic_command();
std::unique_ptr<Command> make_generate_command();
std::unique_ptr<Command> make_eval_command();
std::unique_ptr<Command> make_train_toy_command();
std::unique_ptr<Command> make_inspect_features_command();

}  // namespace wxs::cli
