#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wxstereo/autograd/autograd.hpp"

namespace wxs::nn {

struct NamedParameter {
  std::string name;
  ag::Var var;
};

/// Ordered list of trainable tensors; order defines checkpoint layout.
class ParameterList {
 public:
  ag::Var& add(std::string name, Tensor init);
  /// Appends `other`'s entries sharing the same nodes (no copy of values).
  void extend(const ParameterList& other);
  std::vector<NamedParameter>& items() { return items_; }
  const std::vector<NamedParameter>& items() const { return items_; }
  void zero_grad();
  int64_t total_size() const;
  /// Copy of every parameter value, in order.
  std::vector<Tensor> snapshot() const;

 private:
  std::vector<NamedParameter> items_;
};

struct Conv2d {
  ag::Var weight;  // [out, in, k, k]
  ag::Var bias;    // [out] or undefined
  int64_t stride = 1;
  int64_t pad = 1;
  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

struct Linear {
  ag::Var weight;  // [in, out]
  ag::Var bias;    // [out] or undefined
  ag::Var operator()(const ag::Var& x) const;
};

enum class Init { he, zero };

Conv2d make_conv(ParameterList& params, const std::string& name, int64_t in, int64_t out, int64_t kernel,
                 int64_t stride, bool bias, Init init, std::mt19937_64& rng, double gain = 1.0);
Linear make_linear(ParameterList& params, const std::string& name, int64_t in, int64_t out, bool bias, Init init,
                   std::mt19937_64& rng, double gain = 1.0);

/// Checkpoint layout: "WXSCKPT\n", a decimal header length line, a JSON header
/// {format_version, kind, config, tensors:[{name, shape}]}, then float64
/// little-endian payload in header order.
void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                     const ParameterList& params);

struct CheckpointHeader {
  std::string kind;
  nlohmann::json config;
};

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads values into an already-constructed list; names and shapes must match.
void load_checkpoint(const std::filesystem::path& path, const std::string& kind, ParameterList& params);

inline constexpr int kCheckpointVersion = 1;

}  // namespace wxs::nn
