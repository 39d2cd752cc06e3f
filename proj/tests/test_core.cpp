#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <thread>

#include "wxstereo/core/bounded_queue.hpp"
#include "wxstereo/core/dataset.hpp"
#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"
#include "wxstereo/core/image_io.hpp"
#include "wxstereo/core/pfm.hpp"
#include "support.hpp"

using namespace wxs;

namespace {

// Minimal writer following the published PFM layout: "Pf", dims, negative
// scale for little-endian, then rows bottom to top.
std::string oracle_pfm_le(int64_t w, int64_t h, const std::vector<float>& top_down) {
  std::string out = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
  for (int64_t y = h - 1; y >= 0; --y)
    for (int64_t x = 0; x < w; ++x) {
      const auto bits = std::bit_cast<uint32_t>(top_down[static_cast<size_t>(y * w + x)]);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  return out;
}

Tensor random_float_tensor(Shape shape, std::mt19937_64& rng) {
  // Arbitrary finite float bit patterns, so every exponent range is exercised.
  std::uniform_int_distribution<uint32_t> bits;
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    float f;
    do f = std::bit_cast<float>(bits(rng));
    while (!std::isfinite(f));
    t[i] = f;
  }
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<uint64_t>(a[i]) != std::bit_cast<uint64_t>(b[i])) return false;
  return true;
}

void write_pair(const std::filesystem::path& split_dir, const std::string& id, bool right = true, bool disp = true) {
  const Tensor img({3, 4, 4}, 0.5);
  write_png_rgb(img, split_dir / "left" / (id + ".png"));
  if (right) write_png_rgb(img, split_dir / "right" / (id + ".png"));
  if (disp) write_pfm(Tensor({4, 4}, 1.0), split_dir / "disp" / (id + ".pfm"));
}

void make_layout(const std::filesystem::path& split_dir) {
  for (const char* d : {"left", "right", "disp"}) std::filesystem::create_directories(split_dir / d);
}

}  // namespace

TEST_CASE("pfm: single pixel little-endian file") {
  const auto img = decode_pfm(oracle_pfm_le(1, 1, {5.0f}));
  CHECK(img.little_endian);
  CHECK(img.to_tensor() == Tensor({1, 1}, 5.0));
}

TEST_CASE("pfm: 3x2 fixture from an independent writer") {
  const auto img = decode_pfm(oracle_pfm_le(3, 2, {0, 1, 2, 3, 4, 5}));
  CHECK(img.to_tensor() == Tensor({2, 3}, {0, 1, 2, 3, 4, 5}));
  // And the library writes the same bytes.
  CHECK(encode_pfm(img) == oracle_pfm_le(3, 2, {0, 1, 2, 3, 4, 5}));
}

TEST_CASE("pfm: big-endian files decode to the same values") {
  PfmImage img = PfmImage::from_tensor(Tensor({2, 2}, {1.5, -2, 3, 4.25}), false);
  const std::string bytes = encode_pfm(img);
  CHECK(bytes.substr(0, 11) == "Pf\n2 2\n1.0\n");
  CHECK(decode_pfm(bytes).to_tensor() == Tensor({2, 2}, {1.5, -2, 3, 4.25}));
}

TEST_CASE("pfm: zeros payload is all zero bytes") {
  test::TempDir dir("pfm");
  write_pfm(Tensor({2, 2}, 0.0), dir / "z.pfm");
  const std::string bytes = read_file(dir / "z.pfm");
  REQUIRE(bytes.size() >= 16);
  const std::string payload = bytes.substr(bytes.size() - 16);
  CHECK(payload == std::string(16, '\0'));
  CHECK(bytes.substr(0, bytes.size() - 16) == "Pf\n2 2\n-1.0\n");
}

TEST_CASE("pfm: roundtrip is bit-exact on seeded tensors") {
  std::mt19937_64 rng(11);
  test::TempDir dir("pfm");
  for (int i = 0; i < 50; ++i) {
    std::uniform_int_distribution<int64_t> dim(1, 9);
    const Tensor t = random_float_tensor({dim(rng), dim(rng)}, rng);
    const bool le = (i % 2) == 0;
    write_pfm(t, dir / "r.pfm", le);
    CHECK(bit_equal(read_pfm(dir / "r.pfm").to_tensor(), t));
  }
}

TEST_CASE("pfm: malformed and truncated files") {
  CHECK_THROWS_AS(decode_pfm("P6\n1 1\n255\n"), FormatError);
  CHECK_THROWS_AS(decode_pfm("PF\n1 1\n-1.0\n"), FormatError);
  CHECK_THROWS_AS(decode_pfm("Pf\n0 1\n-1.0\n"), FormatError);
  CHECK_THROWS_AS(decode_pfm("Pf\n1 1\nabc\n"), FormatError);
  std::string ok = oracle_pfm_le(2, 2, {1, 2, 3, 4});
  CHECK_THROWS_AS(decode_pfm(ok.substr(0, ok.size() - 1)), TruncationError);
  CHECK_THROWS_AS(decode_pfm(ok + "x"), TruncationError);
}

TEST_CASE("pfm: non-finite values are refused") {
  test::TempDir dir("pfm");
  Tensor t({1, 2}, 0.0);
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(write_pfm(t, dir / "n.pfm"), ValidationError);
  t[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(write_pfm(t, dir / "n.pfm"), ValidationError);
  CHECK_FALSE(std::filesystem::exists(dir / "n.pfm"));
}

TEST_CASE("png: rgb roundtrip at 8-bit precision and mask roundtrip") {
  std::mt19937_64 rng(3);
  test::TempDir dir("png");
  Tensor img({3, 5, 7});
  std::uniform_int_distribution<int> byte(0, 255);
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = byte(rng) / 255.0;
  write_png_rgb(img, dir / "a.png");
  CHECK(test::max_abs_diff(read_png_rgb(dir / "a.png"), img) < 1e-12);

  Tensor mask({5, 7}, 0.0);
  for (int64_t i = 0; i < mask.numel(); i += 3) mask[i] = 1.0;
  write_file(dir / "m.png", encode_png_mask(mask));
  CHECK(read_png_mask(dir / "m.png") == mask);
}

TEST_CASE("manifest: empty directories give no entries") {
  test::TempDir dir("man");
  make_layout(dir / "train");
  CHECK(load_manifest(dir.path(), "train").entries.empty());
}

TEST_CASE("manifest: incomplete ids are named") {
  test::TempDir dir("man");
  const auto split = dir / "train";
  make_layout(split);
  write_pair(split, "a");
  write_pair(split, "b");
  write_pair(split, "c");
  write_pair(split, "d_broken", true, false);
  try {
    load_manifest(dir.path(), "train");
    FAIL("expected ManifestError");
  } catch (const ManifestError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("d_broken") != std::string::npos);
    CHECK(msg.find("'a'") == std::string::npos);
  }
}

TEST_CASE("manifest: subset labels and deterministic order") {
  test::TempDir dir("man");
  const auto split = dir / "test";
  make_layout(split);
  write_pair(split, "x2");
  write_pair(split, "x1");
  write_file(split / "subsets.json", R"({"x1": "rainy", "x2": "foggy"})");
  const auto m = load_manifest(dir.path(), "test");
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].id == "x1");
  CHECK(m.entries[0].subset_label == "rainy");
  CHECK(m.entries[1].subset_label == "foggy");
  const auto again = load_manifest(dir.path(), "test");
  CHECK(again.entries[0].id == m.entries[0].id);
  CHECK(again.entries[1].id == m.entries[1].id);

  const auto s = load_sample(m.entries[0]);
  CHECK(s.valid_count() == 16);
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("sample: invariant violations are rejected") {
  StereoSample s{"s", Tensor({3, 4, 4}, 0.5), Tensor({3, 4, 4}, 0.5), Tensor({4, 4}, 1.0), Tensor({4, 4}, 1.0)};
  CHECK_NOTHROW(s.validate());
  auto bad = s;
  bad.right = Tensor({3, 4, 5}, 0.5);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = s;
  bad.disparity[0] = -1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = s;
  bad.left[0] = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = s;
  bad.valid_mask[0] = 0.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("bounded queue: producer/consumer handoff and close") {
  BoundedQueue<int> q(2);
  std::thread producer([&] {
    for (int i = 0; i < 100; ++i) REQUIRE(q.push(i));
    q.close();
  });
  int expected = 0;
  while (auto v = q.pop()) {
    CHECK(*v == expected++);
    CHECK(q.size() <= 2);
  }
  producer.join();
  CHECK(expected == 100);
  CHECK_FALSE(q.push(1));
}
