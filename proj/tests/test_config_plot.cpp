#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>

#include "birq/config.hpp"
#include "birq/plot.hpp"
#include "birq/rng.hpp"

using namespace birq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("birq_cfg_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string error_of(const std::string& text) {
  try {
    (void)config::parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::vector<trainer::MetricsRecord> fixture_rows() {
  std::vector<trainer::MetricsRecord> rows;
  for (std::uint64_t s = 1; s <= 12; ++s) {
    trainer::MetricsRecord r;
    r.step = s;
    r.epoch = (s - 1) / 4 + 1;
    r.loss_F = 3.0 / static_cast<double>(s);
    r.loss_G = 2.0 - 0.1 * static_cast<double>(s);
    r.loss_total = 0.1 * r.loss_F + 2.4 * r.loss_G;
    r.codebook_util_anchor = 0.9;
    r.codebook_util_enh = 0.5 + 0.01 * static_cast<double>(s);
    r.lr = 1e-3;
    rows.push_back(r);
  }
  return rows;
}

void write_csv(const fs::path& p, std::span<const trainer::MetricsRecord> rows) {
  std::string text = std::string(trainer::kMetricsHeader) + "\n";
  for (const auto& r : rows) text += trainer::format_metrics_row(r) + "\n";
  write(p, text);
}

}  // namespace

TEST_SUITE("config_plot") {
  TEST_CASE("defaults carry the published hyperparameters") {
    const auto c = config::default_config();
    CHECK(c.train.tau == 0.5);
    CHECK(c.train.weights.w1 == 0.1);
    CHECK(c.train.weights.w2 == 2.4);
    CHECK(c.train.mask.noise_std == 0.1);
    CHECK(c.train.mask.start_prob == 0.02);
    CHECK(c.train.mask.span == 20);
    CHECK(c.train.tap_layer == 3);
    CHECK(c.train.layers == 5);
    const auto text = config::render_resolved(c);
    CHECK(text.find("# derived: gamma = w2 / w1 = 24\n") != std::string::npos);
    CHECK(text.find("tap_layer = 3\n") != std::string::npos);
    CHECK(text.find("# derived: effective mask span = 10 stacked frames\n") != std::string::npos);
  }

  TEST_CASE("tap layer follows the layer count") {
    CHECK(config::parse_config("layers = 10\n").train.tap_layer == 7);
    CHECK(config::parse_config("layers = 10\ntap_layer = 2\n").train.tap_layer == 2);
  }

  TEST_CASE("unknown and repeated keys name the key and the line") {
    const auto unknown = error_of("tau = 0.5\n\nlearning_rate = 3\n");
    CHECK(unknown.find("learning_rate") != std::string::npos);
    CHECK(unknown.find("line 3") != std::string::npos);
    const auto twice = error_of("tau = 0.5\ntau = 0.7\n");
    CHECK(twice.find("tau") != std::string::npos);
    CHECK(twice.find("line 2") != std::string::npos);
    CHECK(!error_of("tau\n").empty());
  }

  TEST_CASE("bad values are config errors") {
    CHECK(!error_of("tau = fast\n").empty());
    CHECK(!error_of("tau = 0\n").empty());
    CHECK(!error_of("epochs = 0\n").empty());
    CHECK(!error_of("w1 = -1\n").empty());
    CHECK(!error_of("w1 = 0\nw2 = 0\n").empty());
    CHECK(!error_of("heads = 3\n").empty());
    CHECK(!error_of("tap_layer = 9\n").empty());
    CHECK(!error_of("optimizer = lion\n").empty());
    CHECK(!error_of("layers = -2\n").empty());
    CHECK(!error_of("mask.start_prob = 1.5\n").empty());
    CHECK(!error_of("synth.clusters = 0\n").empty());
    CHECK(error_of("# only a comment\n  \n").empty());
  }

  TEST_CASE("resolved text parses back to the same config") {
    for (const char* text : {"", "w1 = 0\nlayers = 3\nseed = 9\n", "optimizer = sgd\nmask.exact_count = true\n",
                             "seed.mask = 77\nnum_codebooks = 2\n"}) {
      const auto c = config::parse_config(text);
      const auto again = config::parse_config(config::render_resolved(c));
      CHECK(again == c);
      CHECK(config::render_resolved(again) == config::render_resolved(c));
    }
  }

  TEST_CASE("role seeds derive from the base seed unless given") {
    const auto c = config::parse_config("seed = 5\nseed.mask = 123\n");
    CHECK(c.base_seed == 5);
    CHECK(c.train.seeds.mask == 123);
    CHECK(c.train.seeds.init == rng::derive(5, rng::Role::init));
    CHECK(c.train.seeds.gumbel == rng::derive(5, rng::Role::gumbel));
    CHECK(c.train.seeds.data != c.train.seeds.init);
  }

  TEST_CASE("a base seed override replaces explicit role seeds") {
    const auto c = config::parse_config("seed = 5\nseed.mask = 123\n", config::SeedOverride{8});
    CHECK(c.base_seed == 8);
    CHECK(c.train.seeds.mask == rng::derive(8, rng::Role::mask));
    CHECK(c == config::parse_config("seed = 8\n"));

    ::setenv("BIRQ_BASE_SEED", "42", 1);
    const auto env = config::seed_override_from_env();
    REQUIRE(env.has_value());
    CHECK(env->base_seed == 42);
    ::setenv("BIRQ_BASE_SEED", "forty", 1);
    CHECK_THROWS_AS((void)config::seed_override_from_env(), ConfigError);
    ::unsetenv("BIRQ_BASE_SEED");
    CHECK(!config::seed_override_from_env().has_value());
  }

  TEST_CASE("every key is documented and accepted") {
    const auto& docs = config::documented_keys();
    CHECK(docs.size() >= 40);
    std::string text;
    for (const auto& d : docs) {
      CHECK(!d.description.empty());
      CHECK(!d.default_value.empty());
      text += d.key + " = " + (d.default_value == "derived from seed" ? "1" : d.default_value) + "\n";
    }
    CHECK_NOTHROW((void)config::parse_config(text));
  }

  TEST_CASE("config files load from disk") {
    const auto dir = scratch("load");
    write(dir / "a.cfg", "tau = 0.25\n");
    CHECK(config::load_config(dir / "a.cfg").train.tau == 0.25);
    CHECK_THROWS_AS((void)config::load_config(dir / "missing.cfg"), ConfigError);
  }

  TEST_CASE("svg has one path per series and fixed bytes") {
    const auto rows = fixture_rows();
    const auto svg = plot::render_svg(rows);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("viewBox=\"0 0 800 520\"") != std::string::npos);
    const std::regex path_re("<path ");
    const auto count = std::distance(std::sregex_iterator(svg.begin(), svg.end(), path_re), std::sregex_iterator());
    CHECK(count == 5);
    for (const char* s : {"loss_F", "loss_G", "loss_total", "codebook_util_anchor", "codebook_util_enh"}) {
      CHECK(svg.find(std::string("data-series=\"") + s + "\"") != std::string::npos);
    }
    CHECK(plot::render_svg(rows) == svg);
    CHECK(svg.find("nan") == std::string::npos);
  }

  TEST_CASE("single-row and flat series render") {
    auto rows = fixture_rows();
    rows.resize(1);
    const auto svg = plot::render_svg(rows);
    CHECK(svg.find("nan") == std::string::npos);
    CHECK(svg.find("inf") == std::string::npos);
  }

  TEST_CASE("metrics CSV reader") {
    const auto dir = scratch("csv");
    const auto rows = fixture_rows();
    write_csv(dir / "m.csv", rows);
    const auto back = plot::read_metrics_csv(dir / "m.csv");
    REQUIRE(back.size() == rows.size());
    CHECK(back[3].loss_F == rows[3].loss_F);

    write(dir / "empty.csv", std::string(trainer::kMetricsHeader) + "\n");
    CHECK_THROWS_AS((void)plot::read_metrics_csv(dir / "empty.csv"), FormatError);
    write(dir / "hdr.csv", "step,epoch\n1,1\n");
    CHECK_THROWS_AS((void)plot::read_metrics_csv(dir / "hdr.csv"), FormatError);
    auto swapped = rows;
    std::swap(swapped[0], swapped[1]);
    write_csv(dir / "order.csv", swapped);
    CHECK_THROWS_AS((void)plot::read_metrics_csv(dir / "order.csv"), FormatError);
    CHECK_THROWS_AS((void)plot::read_metrics_csv(dir / "none.csv"), IoError);
  }
}
