#include "birq/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "birq/encoder.hpp"
#include "birq/rng.hpp"

namespace birq::config {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("invalid value for " + std::string(key) + ": '" + std::string(v) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) throw ConfigError("non-finite value for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("invalid value for " + std::string(key) + ": expected true or false");
}

std::string show(bool b) { return b ? "true" : "false"; }
std::string show(double d) { return fmt::format("{}", d); }
std::string show(std::size_t n) { return std::to_string(n); }

struct Key {
  std::string name;
  std::string description;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
  bool derived_seed = false;
};

template <typename Field>
Key make_key(std::string name, std::string description, Field field) {
  using T = std::remove_cvref_t<decltype(field(std::declval<RunConfig&>()))>;
  Key k;
  k.name = name;
  k.description = std::move(description);
  k.set = [field, name](RunConfig& c, std::string_view v) {
    if constexpr (std::is_same_v<T, bool>) {
      field(c) = parse_bool(name, v);
    } else {
      field(c) = parse_number<T>(name, v);
    }
  };
  k.get = [field](const RunConfig& c) { return show(field(const_cast<RunConfig&>(c))); };
  return k;
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    auto add = [&](std::string name, std::string doc, auto field) {
      k.push_back(make_key(std::move(name), std::move(doc), field));
    };
    add("layers", "encoder blocks K", [](RunConfig& c) -> auto& { return c.train.layers; });
    add("hidden_dim", "model width d_h", [](RunConfig& c) -> auto& { return c.train.hidden_dim; });
    add("heads", "attention heads (must divide hidden_dim)", [](RunConfig& c) -> auto& { return c.train.heads; });
    add("ff_dim", "feed-forward width", [](RunConfig& c) -> auto& { return c.train.ff_dim; });
    add("position_encoding", "add sinusoidal positions to the input projection",
        [](RunConfig& c) -> auto& { return c.train.position_encoding; });
    add("tap_layer", "label tap layer k; 0 selects 0.7 K rounded, ties down",
        [](RunConfig& c) -> auto& { return c.train.tap_layer; });
    add("codebook_size", "codebook entries N", [](RunConfig& c) -> auto& { return c.train.codebook_size; });
    add("code_dim", "codebook dimension d_c", [](RunConfig& c) -> auto& { return c.train.code_dim; });
    add("num_codebooks", "independent codebooks, losses averaged",
        [](RunConfig& c) -> auto& { return c.train.num_codebooks; });
    add("codebook_l2_normalize", "unit-norm codebook rows",
        [](RunConfig& c) -> auto& { return c.train.codebook_l2_normalize; });
    add("stack_factor", "consecutive frames stacked before normalization",
        [](RunConfig& c) -> auto& { return c.train.stack_factor; });
    add("mask.start_prob", "per-frame span start probability",
        [](RunConfig& c) -> auto& { return c.train.mask.start_prob; });
    add("mask.span", "span length in raw frames (divided by stack_factor)",
        [](RunConfig& c) -> auto& { return c.train.mask.span; });
    add("mask.noise_mean", "mean of the masked-frame fill", [](RunConfig& c) -> auto& { return c.train.mask.noise_mean; });
    add("mask.noise_std", "std of the masked-frame fill", [](RunConfig& c) -> auto& { return c.train.mask.noise_std; });
    add("mask.exact_count", "draw exactly round(p T) starts instead of Bernoulli starts",
        [](RunConfig& c) -> auto& { return c.train.mask.exact_count; });
    add("w1", "weight of the enhanced-label loss F", [](RunConfig& c) -> auto& { return c.train.weights.w1; });
    add("w2", "weight of the anchoring-label loss G", [](RunConfig& c) -> auto& { return c.train.weights.w2; });
    add("tau", "Gumbel-softmax temperature", [](RunConfig& c) -> auto& { return c.train.tau; });
    add("gumbel_noise", "perturb enhanced-label distances with Gumbel noise",
        [](RunConfig& c) -> auto& { return c.train.gumbel_noise; });
    add("stop_label_grad", "ablation: no gradient through the enhanced labels",
        [](RunConfig& c) -> auto& { return c.train.stop_label_grad; });

    Key opt;
    opt.name = "optimizer";
    opt.description = "adamw or sgd";
    opt.set = [](RunConfig& c, std::string_view v) {
      if (v == "adamw") {
        c.train.optimizer = trainer::OptimizerKind::adamw;
      } else if (v == "sgd") {
        c.train.optimizer = trainer::OptimizerKind::sgd;
      } else {
        throw ConfigError("invalid value for optimizer: expected adamw or sgd");
      }
    };
    opt.get = [](const RunConfig& c) -> std::string {
      return c.train.optimizer == trainer::OptimizerKind::adamw ? "adamw" : "sgd";
    };
    k.push_back(std::move(opt));

    add("lr", "peak learning rate", [](RunConfig& c) -> auto& { return c.train.lr; });
    add("beta1", "adamw first-moment decay", [](RunConfig& c) -> auto& { return c.train.beta1; });
    add("beta2", "adamw second-moment decay", [](RunConfig& c) -> auto& { return c.train.beta2; });
    add("adam_eps", "adamw denominator epsilon", [](RunConfig& c) -> auto& { return c.train.adam_eps; });
    add("weight_decay", "decoupled weight decay (adamw only)", [](RunConfig& c) -> auto& { return c.train.weight_decay; });
    add("warmup_steps", "linear learning-rate warmup", [](RunConfig& c) -> auto& { return c.train.warmup_steps; });
    add("clip_norm", "global gradient norm clip; 0 disables", [](RunConfig& c) -> auto& { return c.train.clip_norm; });
    add("epochs", "passes over the dataset", [](RunConfig& c) -> auto& { return c.train.epochs; });
    add("batch_size", "sequences per step", [](RunConfig& c) -> auto& { return c.train.batch_size; });
    add("master_fp32", "round parameters and moments to binary32 after each update",
        [](RunConfig& c) -> auto& { return c.train.master_fp32; });

    add("seed", "base seed; role seeds below derive from it unless given",
        [](RunConfig& c) -> auto& { return c.base_seed; });
    auto seed_key = [&](std::string name, std::string doc, auto field) {
      add(std::move(name), std::move(doc), field);
      k.back().derived_seed = true;
    };
    seed_key("seed.data", "epoch shuffles", [](RunConfig& c) -> auto& { return c.train.seeds.data; });
    seed_key("seed.mask", "mask spans and noise fill", [](RunConfig& c) -> auto& { return c.train.seeds.mask; });
    seed_key("seed.gumbel", "enhanced-label noise", [](RunConfig& c) -> auto& { return c.train.seeds.gumbel; });
    seed_key("seed.init", "encoder weights, codebooks, projections",
             [](RunConfig& c) -> auto& { return c.train.seeds.init; });

    add("synth.num_sequences", "synthetic corpus size (--synth)", [](RunConfig& c) -> auto& { return c.synth.num_sequences; });
    add("synth.frames", "frames per synthetic sequence", [](RunConfig& c) -> auto& { return c.synth.frames; });
    add("synth.dim", "synthetic feature dimension", [](RunConfig& c) -> auto& { return c.synth.dim; });
    add("synth.clusters", "planted clusters", [](RunConfig& c) -> auto& { return c.synth.num_clusters; });
    add("synth.spread", "within-cluster standard deviation", [](RunConfig& c) -> auto& { return c.synth.cluster_spread; });
    seed_key("synth.seed", "synthetic corpus seed", [](RunConfig& c) -> auto& { return c.synth.seed; });
    return k;
  }();
  return table;
}

void derive_seeds(RunConfig& c) {
  c.train.seeds.data = rng::derive(c.base_seed, rng::Role::shuffle);
  c.train.seeds.mask = rng::derive(c.base_seed, rng::Role::mask);
  c.train.seeds.gumbel = rng::derive(c.base_seed, rng::Role::gumbel);
  c.train.seeds.init = rng::derive(c.base_seed, rng::Role::init);
  c.synth.seed = rng::derive(c.base_seed, rng::Role::data);
}

void freeze(RunConfig& c) {
  c.train.mask.stack_factor = c.train.stack_factor;
  try {
    trainer::validate(c.train);
    encoder::EncoderConfig e = trainer::encoder_config(c.train, 1);
    encoder::validate(e);
    if (c.synth.num_sequences < 1 || c.synth.frames < 1 || c.synth.dim < 1 || c.synth.num_clusters < 1) {
      throw ConfigError("synth sizes must be >= 1");
    }
    if (!(c.synth.cluster_spread >= 0.0)) throw ConfigError("synth.spread must be >= 0");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (c.train.tap_layer == 0) c.train.tap_layer = c.train.resolved_tap_layer();
}

}  // namespace

const std::vector<KeyDoc>& documented_keys() {
  static const std::vector<KeyDoc> docs = [] {
    const RunConfig d = default_config();
    std::vector<KeyDoc> out;
    for (const auto& k : keys()) {
      out.push_back({k.name, k.derived_seed ? "derived from seed" : k.get(d), k.description});
    }
    // The frozen default materializes tap_layer; document the sentinel instead.
    for (auto& doc : out) {
      if (doc.key == "tap_layer") doc.default_value = "0";
    }
    return out;
  }();
  return docs;
}

RunConfig default_config() { return parse_config(""); }

RunConfig parse_config(std::string_view text, std::optional<SeedOverride> override) {
  std::map<std::string, std::pair<std::string, std::size_t>, std::less<>> given;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("line {}: expected key = value", line_no));
    }
    const std::string key{trim(line.substr(0, eq))};
    const std::string value{trim(line.substr(eq + 1))};
    const auto& table = keys();
    if (std::none_of(table.begin(), table.end(), [&](const Key& k) { return k.name == key; })) {
      throw ConfigError(fmt::format("line {}: unknown key '{}'", line_no, key));
    }
    if (!given.emplace(key, std::make_pair(value, line_no)).second) {
      throw ConfigError(fmt::format("line {}: key '{}' given twice", line_no, key));
    }
  }

  RunConfig c;
  const auto& table = keys();
  auto apply = [&](const Key& k) {
    auto it = given.find(k.name);
    if (it == given.end()) return;
    try {
      k.set(c, it->second.first);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", it->second.second, e.what()));
    }
  };
  // Base seed first so derived seeds exist before explicit ones land.
  for (const auto& k : table) {
    if (k.name == "seed") apply(k);
  }
  if (override) c.base_seed = override->base_seed;
  derive_seeds(c);
  for (const auto& k : table) {
    if (k.name == "seed" || (override && k.derived_seed)) continue;
    apply(k);
  }
  freeze(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, std::optional<SeedOverride> override) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), override);
}

std::optional<SeedOverride> seed_override_from_env() {
  const char* env = std::getenv("BIRQ_BASE_SEED");
  if (env == nullptr) return std::nullopt;
  return SeedOverride{parse_number<std::uint64_t>("BIRQ_BASE_SEED", trim(env))};
}

std::string render_resolved(const RunConfig& cfg) {
  std::string out = "# resolved configuration; every key is explicit\n";
  for (const auto& k : keys()) out += fmt::format("{} = {}\n", k.name, k.get(cfg));
  const auto& w = cfg.train.weights;
  out += fmt::format("# derived: gamma = w2 / w1 = {}\n", w.w1 > 0.0 ? fmt::format("{:.12g}", w.gamma()) : "inf");
  out += fmt::format("# derived: effective mask span = {} stacked frames\n", masking::effective_span(cfg.train.mask));
  return out;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return render_resolved(a) == render_resolved(b); }

}  // namespace birq::config
