#include <doctest.h>
#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"
#include "wxstereo/datagen/datagen.hpp"
#include "wxstereo/datagen/http.hpp"
#include "wxstereo/datagen/mock.hpp"
#include "wxstereo/synthetic/synthetic.hpp"
#include "support.hpp"

using namespace wxs;
using namespace wxs::datagen;
namespace fs = std::filesystem;

namespace {

StereoSample source_pair(int64_t index = 0, int64_t h = 32, int64_t w = 64) {
  synthetic::SyntheticConfig cfg;
  cfg.height = h;
  cfg.width = w;
  cfg.max_disparity = 8.0;
  cfg.seed = 11;
  return synthetic::render_pair(cfg, index);
}

DatasetManifest source_dataset(const fs::path& root, int64_t count) {
  synthetic::SyntheticConfig cfg;
  cfg.count = count;
  cfg.height = 32;
  cfg.width = 64;
  cfg.max_disparity = 8.0;
  cfg.seed = 5;
  return synthetic::make_synthetic(root, "train", cfg);
}

GenerationConfig small_config() {
  GenerationConfig cfg;
  cfg.steps = 4;
  cfg.dfm.n = 4;
  cfg.dfm.d_max = 16.0;
  return cfg;
}

// Every regular file under `root`, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  return files;
}

class ThrowingPrompt final : public PromptBackend {
 public:
  std::vector<std::string> keywords(const StereoSample&, Condition, uint64_t) override {
    throw BackendError("prompt server down");
  }
};

class EmptyPrompt final : public PromptBackend {
 public:
  std::vector<std::string> keywords(const StereoSample&, Condition, uint64_t) override { return {"", ""}; }
};

class WrongSizeDepth final : public DepthBackend {
 public:
  Tensor predict(const Tensor& image, uint64_t) override { return Tensor({image.dim(1) + 1, image.dim(2)}); }
};

// Independent of mock::closed_form: grades each channel, then blends in haze.
double expected_pixel(const mock::ConditionLook& lk, int c, double src, double depth, double scale) {
  double hz = 1.0 - std::min(1.0, std::max(0.0, scale * depth));
  hz *= lk.haze_strength;
  double graded = lk.gain[c] * std::pow(std::min(1.0, std::max(0.0, src)), lk.gamma[c]);
  graded = std::min(1.0, std::max(0.0, graded));
  return graded + hz * (lk.haze[c] - graded);
}

GenerationOutput mock_generate(const StereoSample& s, Condition c, const GenerationConfig& cfg, uint64_t seed = 9) {
  mock::LuminanceDepthBackend depth_backend;
  mock::DiffusionMock diffusion;
  const WeatherPrompt prompt = build_weather_prompt(s, c, nullptr);
  const DepthCondition depth = predict_depth(s, depth_backend);
  return generate_pair(s, prompt, depth, cfg, diffusion, seed);
}

}  // namespace

TEST_CASE("weather prompts join keywords and fall back to the template table") {
  const StereoSample s = source_pair();
  const WeatherPrompt rainy = build_weather_prompt(s, Condition::rainy, nullptr);
  CHECK(rainy.source == PromptSource::template_table);
  CHECK(rainy.text() == "rainy, dark clouds, wet pavement, raindrops, reflections, and misty air");

  ThrowingPrompt throwing;
  const WeatherPrompt fallback = build_weather_prompt(s, Condition::foggy, &throwing);
  CHECK(fallback.source == PromptSource::template_table);
  CHECK(fallback.keywords == template_keywords(Condition::foggy));

  EmptyPrompt empty;
  CHECK(build_weather_prompt(s, Condition::snowy, &empty).source == PromptSource::template_table);

  mock::EchoPromptBackend echo;
  const WeatherPrompt echoed = build_weather_prompt(s, Condition::sunny, &echo);
  CHECK(echoed.source == PromptSource::llm);
  CHECK(echoed.keywords == std::vector<std::string>{"sunny"});
  CHECK(echoed.text() == "sunny");

  CHECK(WeatherPrompt{Condition::rainy, {"a", "b"}, PromptSource::llm}.text() == "a, and b");
  for (Condition c : all_conditions()) {
    CHECK_FALSE(template_keywords(c).empty());
    CHECK(parse_condition(condition_name(c)) == c);
  }
  CHECK_THROWS_AS(parse_condition("hail"), ArgumentError);
  CHECK(parse_conditions("rainy,foggy") == std::vector<Condition>{Condition::rainy, Condition::foggy});
}

TEST_CASE("depth conditioning normalises to [0, 1]") {
  const StereoSample s = source_pair();
  mock::LuminanceDepthBackend backend;
  const DepthCondition d = predict_depth(s, backend);
  CHECK_NOTHROW(d.validate());

  const Tensor raw = backend.predict(s.left, 0);
  const auto [lo, hi] = std::minmax_element(raw.values().begin(), raw.values().end());
  for (int64_t y = 0; y < s.height(); y += 7)
    for (int64_t x = 0; x < s.width(); x += 5) {
      const double lum = 0.299 * s.left.at(0, y, x) + 0.587 * s.left.at(1, y, x) + 0.114 * s.left.at(2, y, x);
      CHECK(raw.at(y, x) == doctest::Approx(lum).epsilon(1e-15));
      CHECK(d.left.at(y, x) == doctest::Approx((lum - *lo) / (*hi - *lo)).epsilon(1e-12));
    }
  CHECK(*std::min_element(d.left.values().begin(), d.left.values().end()) == 0.0);
  CHECK(*std::max_element(d.left.values().begin(), d.left.values().end()) == 1.0);

  const Tensor flat = normalize_depth(Tensor({3, 4}, 7.0));
  for (double v : flat.values()) CHECK(v == 0.5);
  Tensor bad = Tensor({2, 2}, 1.0);
  bad[1] = NAN;
  CHECK_THROWS_AS(normalize_depth(bad), BackendError);

  WrongSizeDepth wrong;
  CHECK_THROWS_AS(predict_depth(s, wrong), BackendError);
}

TEST_CASE("mock generation without latent residual equals the closed form") {
  const StereoSample s = source_pair(1);
  GenerationConfig cfg = small_config();
  cfg.latent_mix = 0.0;
  cfg.conditioning_scale = 0.8;
  mock::LuminanceDepthBackend depth_backend;
  const DepthCondition depth = predict_depth(s, depth_backend);
  for (Condition c : all_conditions()) {
    const GenerationOutput out = mock_generate(s, c, cfg);
    const mock::ConditionLook& lk = mock::look(c);
    double worst = 0.0;
    for (int ch = 0; ch < 3; ++ch)
      for (int64_t y = 0; y < s.height(); ++y)
        for (int64_t x = 0; x < s.width(); ++x) {
          worst = std::max(worst, std::fabs(out.images.left.at(ch, y, x) -
                                            expected_pixel(lk, ch, s.left.at(ch, y, x), depth.left.at(y, x), 0.8)));
          worst = std::max(worst, std::fabs(out.images.right.at(ch, y, x) -
                                            expected_pixel(lk, ch, s.right.at(ch, y, x), depth.right.at(y, x), 0.8)));
        }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("mock generation stays in range and is a pure function of its seed") {
  const StereoSample s = source_pair();
  const GenerationConfig cfg = small_config();
  const GenerationOutput a = mock_generate(s, Condition::rainy, cfg, 3);
  const GenerationOutput b = mock_generate(s, Condition::rainy, cfg, 3);
  const GenerationOutput c = mock_generate(s, Condition::rainy, cfg, 4);
  CHECK(a.images.left.storage() == b.images.left.storage());
  CHECK(a.images.right.storage() == b.images.right.storage());
  CHECK(test::max_abs_diff(a.images.left, c.images.left) > 0.0);
  for (const Tensor* t : {&a.images.left, &a.images.right})
    for (double v : t->values()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("the consistency hook counts steps times selected sites") {
  const StereoSample s = source_pair();
  GenerationConfig cfg = small_config();
  const GenerationOutput autosel = mock_generate(s, Condition::foggy, cfg);
  CHECK(autosel.hooked_sites == std::vector<std::string>{"mid.attn1", "mid.attn2"});
  CHECK(autosel.hook_invocations == cfg.steps * 2);

  cfg.dfm.layer_selector = "all";
  CHECK(mock_generate(s, Condition::foggy, cfg).hook_invocations == cfg.steps * 4);

  cfg.dfm.layer_selector = "up\\..*";
  CHECK(mock_generate(s, Condition::foggy, cfg).hook_invocations == cfg.steps);

  cfg.dfm.layer_selector = "all";
  cfg.dfm.timestep_begin = 1;
  cfg.dfm.timestep_end = 3;
  CHECK(mock_generate(s, Condition::foggy, cfg).hook_invocations == 2 * 4);

  cfg.dfm.layer_selector = "decoder.*";
  CHECK_THROWS_AS(mock_generate(s, Condition::foggy, cfg), ConfigError);
}

TEST_CASE("n = 0 reproduces hookless generation; n > 0 changes it") {
  const StereoSample s = source_pair(1);
  GenerationConfig hooked = small_config();
  hooked.dfm.layer_selector = "all";
  hooked.dfm.n = 0;
  GenerationConfig plain = hooked;
  plain.dfm.enabled = false;

  const GenerationOutput zero = mock_generate(s, Condition::cloudy, hooked);
  const GenerationOutput none = mock_generate(s, Condition::cloudy, plain);
  CHECK(zero.hook_invocations == hooked.steps * 4);
  CHECK(none.hook_invocations == 0);
  CHECK(zero.images.left.storage() == none.images.left.storage());
  CHECK(zero.images.right.storage() == none.images.right.storage());

  hooked.dfm.n = 8;
  const GenerationOutput fused = mock_generate(s, Condition::cloudy, hooked);
  CHECK(test::max_abs_diff(fused.images.left, none.images.left) > 0.0);
}

TEST_CASE("generation config parsing is strict") {
  GenerationConfig cfg = small_config();
  cfg.dfm.layer_selector = "mid.*";
  cfg.workers = 3;
  const nlohmann::json j = cfg;
  const auto back = j.get<GenerationConfig>();
  CHECK(nlohmann::json(back) == j);

  nlohmann::json extra = j;
  extra["guidance"] = 3.0;
  CHECK_THROWS_AS(extra.get<GenerationConfig>(), ConfigError);
  nlohmann::json nested = j;
  nested["dfm"]["beta"] = 1.0;
  CHECK_THROWS_AS(nested.get<GenerationConfig>(), ConfigError);

  GenerationConfig bad = small_config();
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.dfm.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.scheduler = "euler";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.backends.diffusion = "sdxl";
  CHECK_THROWS_AS(make_backends(bad), ConfigError);
}

TEST_CASE("sample seeds are stable and distinct") {
  const uint64_t a = sample_seed(0, "000001", Condition::rainy);
  CHECK(a == sample_seed(0, "000001", Condition::rainy));
  CHECK(a != sample_seed(1, "000001", Condition::rainy));
  CHECK(a != sample_seed(0, "000002", Condition::rainy));
  CHECK(a != sample_seed(0, "000001", Condition::foggy));
  // The id/condition separator keeps these apart.
  CHECK(sample_seed(0, "ab", Condition::rainy) != sample_seed(0, "a", Condition::rainy));
}

TEST_CASE("pipeline emits one pair per source and condition with copied ground truth") {
  test::TempDir tmp;
  const DatasetManifest src = source_dataset(tmp / "src", 2);
  const std::vector<Condition> conds{Condition::rainy, Condition::foggy, Condition::snowy};
  const GenerationConfig cfg = small_config();
  const GenerationReport rep = run_pipeline(src, conds, cfg, make_backends(cfg), tmp / "out");

  REQUIRE(rep.emitted() == 6);
  CHECK(rep.skipped() == 0);
  const DatasetManifest out = load_manifest(tmp / "out", "train");
  REQUIRE(out.entries.size() == 6);
  for (const auto& e : out.entries) {
    const std::string source_id = e.id.substr(0, e.id.rfind('_'));
    const std::string condition = e.id.substr(e.id.rfind('_') + 1);
    const auto it = std::find_if(src.entries.begin(), src.entries.end(),
                                 [&](const ManifestEntry& s) { return s.id == source_id; });
    REQUIRE(it != src.entries.end());
    CHECK(read_file(e.disparity_path) == read_file(it->disparity_path));
    REQUIRE(e.mask_path.has_value());
    CHECK(read_file(*e.mask_path) == read_file(*it->mask_path));
    CHECK(e.subset_label == condition);
    CHECK_NOTHROW(load_sample(e));
  }
  for (const auto& s : rep.samples) {
    CHECK(s.ok);
    CHECK(s.hook_invocations == cfg.steps * 2);
    CHECK(s.prompt_source == PromptSource::llm);
  }

  const auto report = nlohmann::json::parse(read_file(tmp / "out" / "report.json"));
  CHECK(report["counts"]["emitted"] == 6);
  CHECK(report["config"] == nlohmann::json(cfg));
}

TEST_CASE("pipeline output is byte-identical across reruns and worker counts") {
  test::TempDir tmp;
  const DatasetManifest src = source_dataset(tmp / "src", 2);
  const std::vector<Condition> conds{Condition::rainy, Condition::foggy, Condition::sunny};
  GenerationConfig cfg = small_config();
  run_pipeline(src, conds, cfg, make_backends(cfg), tmp / "a");
  run_pipeline(src, conds, cfg, make_backends(cfg), tmp / "b");
  const auto a = snapshot(tmp / "a");
  CHECK(a.size() == 6 * 4 + 2);  // four files per pair, subsets.json, report.json
  CHECK(a == snapshot(tmp / "b"));

  // report.json echoes the worker count, so compare everything else.
  cfg.workers = 3;
  run_pipeline(src, conds, cfg, make_backends(cfg), tmp / "c");
  auto c = snapshot(tmp / "c");
  auto a_data = a;
  a_data.erase("report.json");
  c.erase("report.json");
  CHECK(a_data == c);
}

TEST_CASE("pipeline edge cases") {
  test::TempDir tmp;
  const GenerationConfig cfg = small_config();

  SUBCASE("an empty manifest writes nothing") {
    const GenerationReport rep = run_pipeline(DatasetManifest{}, all_conditions(), cfg, make_backends(cfg), tmp / "o");
    CHECK(rep.samples.empty());
    CHECK_FALSE(fs::exists(tmp / "o"));
  }
  SUBCASE("an unwritable output root is a configuration error") {
    const DatasetManifest src = source_dataset(tmp / "src", 1);
    write_file(tmp / "blocker", "x");
    CHECK_THROWS_AS(run_pipeline(src, {Condition::rainy}, cfg, make_backends(cfg), tmp / "blocker" / "out"),
                    ConfigError);
  }
  SUBCASE("a failing sample is skipped without partial files") {
    const DatasetManifest src = source_dataset(tmp / "src", 2);
    BackendFactory f = make_backends(cfg);
    f.depth = [] { return std::make_unique<WrongSizeDepth>(); };
    const GenerationReport rep = run_pipeline(src, {Condition::rainy}, cfg, f, tmp / "o");
    CHECK(rep.emitted() == 0);
    CHECK(rep.skipped() == 2);
    for (const auto& s : rep.samples) CHECK(s.error.find("depth backend") != std::string::npos);
    const auto files = snapshot(tmp / "o");
    CHECK(files.size() == 2);  // subsets.json and report.json only
    CHECK(files.count("report.json") == 1);
  }
  SUBCASE("the template prompt backend records its source") {
    GenerationConfig tcfg = cfg;
    tcfg.backends.prompt = "template";
    const DatasetManifest src = source_dataset(tmp / "src", 1);
    const GenerationReport rep = run_pipeline(src, {Condition::snowy}, tcfg, make_backends(tcfg), tmp / "o");
    REQUIRE(rep.samples.size() == 1);
    CHECK(rep.samples[0].prompt_source == PromptSource::template_table);
  }
}

TEST_CASE("tensor payloads roundtrip and malformed ones are rejected") {
  std::mt19937_64 rng(2);
  const Tensor t = test::random_tensor({2, 3, 4}, rng, -1.0, 1.0);
  CHECK(http::decode_tensor(http::encode_tensor(t)).storage() == t.storage());
  CHECK_THROWS_AS(http::decode_tensor({{"shape", {2, 2}}, {"data", {1.0}}}), BackendError);
  CHECK_THROWS_AS(http::decode_tensor({{"data", {1.0}}}), BackendError);
}

TEST_CASE("HTTP adapters talk to a model server") {
  httplib::Server server;
  int generate_calls = 0;
  server.Post("/keywords", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    res.set_content(nlohmann::json{{"keywords", {body["condition"].get<std::string>(), "sleet"}}}.dump(),
                    "application/json");
  });
  server.Post("/depth", [](const httplib::Request& req, httplib::Response& res) {
    const Tensor image = http::decode_tensor(nlohmann::json::parse(req.body)["image"]);
    Tensor d({image.dim(1), image.dim(2)});
    for (int64_t y = 0; y < d.dim(0); ++y)
      for (int64_t x = 0; x < d.dim(1); ++x) d.at(y, x) = static_cast<double>(y);
    res.set_content(nlohmann::json{{"depth", http::encode_tensor(d)}}.dump(), "application/json");
  });
  server.Get("/sites", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"sites": [{"name": "mid.attn", "downsample": 16}, {"name": "up.attn", "downsample": 8}]})",
                    "application/json");
  });
  server.Post("/generate", [&generate_calls](const httplib::Request& req, httplib::Response& res) {
    ++generate_calls;
    const auto body = nlohmann::json::parse(req.body);
    const int64_t inv = body["dfm"]["enabled"].get<bool>() ? body["steps"].get<int64_t>() : 0;
    res.set_content(nlohmann::json{{"left", body["left"]}, {"right", body["right"]}, {"dfm_invocations", inv}}.dump(),
                    "application/json");
  });
  server.Post("/fail", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread loop([&server] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string url = "http://127.0.0.1:" + std::to_string(port);

  SUBCASE("clients") {
    const StereoSample s = source_pair();
    http::PromptClient prompt(url, 5.0);
    const WeatherPrompt p = build_weather_prompt(s, Condition::snowy, &prompt);
    CHECK(p.source == PromptSource::llm);
    CHECK(p.text() == "snowy, and sleet");

    http::DepthClient depth(url, 5.0);
    const DepthCondition d = predict_depth(s, depth);
    CHECK(d.left.at(0, 0) == 0.0);
    CHECK(d.left.at(s.height() - 1, 0) == 1.0);

    http::DiffusionClient diffusion(url, 5.0);
    CHECK(diffusion.attention_sites().size() == 2);
    GenerationConfig cfg = small_config();
    const GenerationOutput out = generate_pair(s, p, d, cfg, diffusion, 1);
    CHECK(out.hook_invocations == cfg.steps);
    CHECK(out.hooked_sites == std::vector<std::string>{"mid.attn"});
    CHECK(test::max_abs_diff(out.images.left, s.left) < 1e-6);

    CHECK_THROWS_AS(http::post_json(url, "/fail", {}, 5.0), BackendError);
  }
  SUBCASE("pipeline with HTTP backends") {
    test::TempDir tmp;
    const DatasetManifest src = source_dataset(tmp / "src", 1);
    GenerationConfig cfg = small_config();
    cfg.backends = {"http", "http", "http"};
    cfg.endpoints = {url, url, url, 5.0};
    const GenerationReport rep = run_pipeline(src, {Condition::rainy, Condition::cloudy}, cfg, make_backends(cfg),
                                              tmp / "o");
    CHECK(rep.emitted() == 2);
    CHECK(generate_calls == 2);
    for (const auto& r : rep.samples) CHECK(r.hook_invocations == cfg.steps);
  }

  server.stop();
  loop.join();
}

TEST_CASE("an unreachable prompt server falls back; unreachable depth or diffusion servers fail") {
  // Bind and release a port so nothing listens on it.
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  REQUIRE(port > 0);
  const std::string url = "http://127.0.0.1:" + std::to_string(port);
  const StereoSample s = source_pair();

  http::PromptClient prompt(url, 1.0);
  CHECK(build_weather_prompt(s, Condition::rainy, &prompt).source == PromptSource::template_table);
  http::DepthClient depth(url, 1.0);
  CHECK_THROWS_AS(predict_depth(s, depth), BackendError);
  http::DiffusionClient diffusion(url, 1.0);
  CHECK_THROWS_AS(diffusion.attention_sites(), BackendError);
}
