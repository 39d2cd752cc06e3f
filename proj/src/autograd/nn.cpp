#include "wxstereo/autograd/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"

namespace wxs::nn {
namespace {

constexpr const char* kMagic = "WXSCKPT\n";

Tensor init_tensor(Shape shape, int64_t fan_in, Init init, std::mt19937_64& rng, double gain) {
  Tensor t(std::move(shape), 0.0);
  if (init == Init::zero) return t;
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

struct ParsedCheckpoint {
  nlohmann::json header;
  size_t payload_offset = 0;
  std::string bytes;
};

ParsedCheckpoint parse(const std::filesystem::path& path) {
  ParsedCheckpoint p;
  p.bytes = read_file(path);
  const size_t magic_len = std::strlen(kMagic);
  if (p.bytes.compare(0, magic_len, kMagic) != 0) throw FormatError(path.string() + ": not a checkpoint");
  const size_t nl = p.bytes.find('\n', magic_len);
  if (nl == std::string::npos) throw FormatError(path.string() + ": truncated checkpoint header");
  const size_t len = std::stoul(p.bytes.substr(magic_len, nl - magic_len));
  if (nl + 1 + len > p.bytes.size()) throw TruncationError(path.string() + ": truncated checkpoint header");
  try {
    p.header = nlohmann::json::parse(p.bytes.substr(nl + 1, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (p.header.value("format_version", 0) != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version");
  p.payload_offset = nl + 1 + len;
  return p;
}

}  // namespace

ag::Var& ParameterList::add(std::string name, Tensor init) {
  items_.push_back({std::move(name), ag::parameter(std::move(init))});
  return items_.back().var;
}

void ParameterList::extend(const ParameterList& other) {
  items_.insert(items_.end(), other.items_.begin(), other.items_.end());
}

void ParameterList::zero_grad() {
  for (auto& p : items_) p.var.zero_grad();
}

int64_t ParameterList::total_size() const {
  int64_t n = 0;
  for (const auto& p : items_) n += p.var.value().numel();
  return n;
}

std::vector<Tensor> ParameterList::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.var.value());
  return out;
}

ag::Var Linear::operator()(const ag::Var& x) const {
  ag::Var y = ag::matmul(x, weight);
  return bias.defined() ? ag::add_bias(y, bias) : y;
}

Conv2d make_conv(ParameterList& params, const std::string& name, int64_t in, int64_t out, int64_t kernel,
                 int64_t stride, bool bias, Init init, std::mt19937_64& rng, double gain) {
  Conv2d c;
  c.weight = params.add(name + ".weight", init_tensor({out, in, kernel, kernel}, in * kernel * kernel, init, rng, gain));
  if (bias) c.bias = params.add(name + ".bias", Tensor({out}, 0.0));
  c.stride = stride;
  c.pad = kernel / 2;
  return c;
}

Linear make_linear(ParameterList& params, const std::string& name, int64_t in, int64_t out, bool bias, Init init,
                   std::mt19937_64& rng, double gain) {
  Linear l;
  l.weight = params.add(name + ".weight", init_tensor({in, out}, in, init, rng, gain));
  if (bias) l.bias = params.add(name + ".bias", Tensor({out}, 0.0));
  return l;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                     const ParameterList& params) {
  nlohmann::json header{{"format_version", kCheckpointVersion}, {"kind", kind}, {"config", config}};
  header["tensors"] = nlohmann::json::array();
  for (const auto& p : params.items()) header["tensors"].push_back({{"name", p.name}, {"shape", p.var.shape()}});
  const std::string h = header.dump();
  std::string out = kMagic + std::to_string(h.size()) + "\n" + h;
  for (const auto& p : params.items())
    for (double v : p.var.value().values()) {
      uint64_t raw = std::bit_cast<uint64_t>(v);
      if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap64(raw);
      out.append(reinterpret_cast<const char*>(&raw), 8);
    }
  write_file_atomic(path, out);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  const auto p = parse(path);
  return {p.header.value("kind", ""), p.header.value("config", nlohmann::json::object())};
}

void load_checkpoint(const std::filesystem::path& path, const std::string& kind, ParameterList& params) {
  const auto p = parse(path);
  if (p.header.value("kind", "") != kind)
    throw ModelError(path.string() + ": checkpoint kind '" + p.header.value("kind", "") + "', expected '" + kind + "'");
  const auto& tensors = p.header.at("tensors");
  if (tensors.size() != params.items().size()) throw ModelError(path.string() + ": parameter count mismatch");
  size_t offset = p.payload_offset;
  for (size_t i = 0; i < tensors.size(); ++i) {
    auto& dst = params.items()[i];
    if (tensors[i].at("name").get<std::string>() != dst.name ||
        tensors[i].at("shape").get<Shape>() != dst.var.shape())
      throw ModelError(path.string() + ": parameter '" + dst.name + "' does not match checkpoint");
    Tensor& v = dst.var.mutable_value();
    if (offset + static_cast<size_t>(v.numel()) * 8 > p.bytes.size())
      throw TruncationError(path.string() + ": checkpoint payload truncated");
    for (int64_t k = 0; k < v.numel(); ++k) {
      uint64_t raw;
      std::memcpy(&raw, p.bytes.data() + offset, 8);
      if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap64(raw);
      v[k] = std::bit_cast<double>(raw);
      offset += 8;
    }
  }
  if (offset != p.bytes.size()) throw FormatError(path.string() + ": trailing bytes in checkpoint");
}

}  // namespace wxs::nn
