#include "wxstereo/core/pfm.hpp"

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"

namespace wxs {
namespace {

constexpr bool kHostLittle = std::endian::native == std::endian::little;

uint32_t byteswap32(uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0x0000ff00u) | ((v << 8) & 0x00ff0000u) | (v << 24);
}

// Reads one whitespace-delimited header token starting at `pos`.
std::string next_token(const std::string& bytes, size_t& pos) {
  while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

int64_t parse_dim(const std::string& tok) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || v <= 0)
    throw FormatError("PFM: bad dimension token '" + tok + "'");
  return v;
}

}  // namespace

Tensor PfmImage::to_tensor() const {
  Tensor t({height, width});
  for (size_t i = 0; i < data.size(); ++i) t[static_cast<int64_t>(i)] = data[i];
  return t;
}

PfmImage PfmImage::from_tensor(const Tensor& t, bool little_endian) {
  if (t.rank() != 2) throw ArgumentError("PFM tensors must be [H, W], got " + shape_str(t.shape()));
  PfmImage img;
  img.height = t.dim(0);
  img.width = t.dim(1);
  img.little_endian = little_endian;
  img.data.resize(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) img.data[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  return img;
}

PfmImage decode_pfm(const std::string& bytes) {
  size_t pos = 0;
  const std::string magic = next_token(bytes, pos);
  if (magic == "PF") throw FormatError("PFM: colour ('PF') files are not supported, expected 'Pf'");
  if (magic != "Pf") throw FormatError("PFM: missing 'Pf' magic");

  PfmImage img;
  img.width = parse_dim(next_token(bytes, pos));
  img.height = parse_dim(next_token(bytes, pos));

  const std::string scale_tok = next_token(bytes, pos);
  char* end = nullptr;
  const double scale = std::strtod(scale_tok.c_str(), &end);
  if (scale_tok.empty() || end != scale_tok.c_str() + scale_tok.size() || !std::isfinite(scale) || scale == 0.0)
    throw FormatError("PFM: scale must be a nonzero number, got '" + scale_tok + "'");
  img.little_endian = scale < 0.0;
  img.scale = static_cast<float>(std::fabs(scale));

  // Exactly one whitespace byte separates the header from the payload.
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw TruncationError("PFM: header not terminated");
  ++pos;

  const size_t count = static_cast<size_t>(img.width * img.height);
  const size_t expected = count * sizeof(float);
  if (bytes.size() - pos != expected)
    throw TruncationError("PFM: payload is " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(expected));

  img.data.resize(count);
  const bool swap = img.little_endian != kHostLittle;
  const char* payload = bytes.data() + pos;
  for (int64_t row = 0; row < img.height; ++row) {
    // On disk the first stored row is the bottom of the image.
    const int64_t dst_row = img.height - 1 - row;
    for (int64_t x = 0; x < img.width; ++x) {
      uint32_t raw;
      std::memcpy(&raw, payload + (row * img.width + x) * 4, 4);
      if (swap) raw = byteswap32(raw);
      img.data[static_cast<size_t>(dst_row * img.width + x)] = std::bit_cast<float>(raw);
    }
  }
  return img;
}

std::string encode_pfm(const PfmImage& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.data.size() != static_cast<size_t>(image.width * image.height))
    throw ArgumentError("PFM: inconsistent image dimensions");
  for (float v : image.data)
    if (!std::isfinite(v)) throw ValidationError("PFM: refusing to write non-finite value");

  std::ostringstream header;
  header << "Pf\n" << image.width << ' ' << image.height << '\n' << (image.little_endian ? "-1.0" : "1.0") << '\n';
  std::string out = header.str();
  const size_t header_len = out.size();
  out.resize(header_len + image.data.size() * 4);
  const bool swap = image.little_endian != kHostLittle;
  char* payload = out.data() + header_len;
  for (int64_t row = 0; row < image.height; ++row) {
    const int64_t src_row = image.height - 1 - row;
    for (int64_t x = 0; x < image.width; ++x) {
      uint32_t raw = std::bit_cast<uint32_t>(image.data[static_cast<size_t>(src_row * image.width + x)]);
      if (swap) raw = byteswap32(raw);
      std::memcpy(payload + (row * image.width + x) * 4, &raw, 4);
    }
  }
  return out;
}

PfmImage read_pfm(const std::filesystem::path& path) { return decode_pfm(read_file(path)); }

void write_pfm(const PfmImage& image, const std::filesystem::path& path) { write_file(path, encode_pfm(image)); }

void write_pfm(const Tensor& t, const std::filesystem::path& path, bool little_endian) {
  if (!t.all_finite()) throw ValidationError("PFM: refusing to write non-finite value");
  write_pfm(PfmImage::from_tensor(t, little_endian), path);
}

}  // namespace wxs
