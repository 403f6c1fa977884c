// birq command-line driver. Tables go to stdout, diagnostics to stderr.
//
// Exit codes: 0 ok, 2 usage or config error, 3 data error, 4 numeric abort,
// 5 check threshold violated.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "birq/config.hpp"
#include "birq/features.hpp"
#include "birq/labels.hpp"
#include "birq/plot.hpp"
#include "birq/quantizer.hpp"
#include "birq/trainer.hpp"
#include "birq/verify.hpp"

namespace {

using namespace birq;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitThreshold = 5;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

config::RunConfig load_run_config(const std::string& path) {
  const auto override = config::seed_override_from_env();
  if (override) fmt::print(stderr, "BIRQ_BASE_SEED={} overrides the configured seed\n", override->base_seed);
  return path.empty() ? config::parse_config("", override) : config::load_config(path, override);
}

// Sorted *.feats and *.wav files of a directory, as raw (unstacked) frames.
std::vector<Matrix> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".feats" || ext == ".wav")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no .feats or .wav files in " + dir.string());
  std::vector<Matrix> out;
  for (const auto& f : files) {
    auto seq = f.extension() == ".wav" ? features::compute_logmel(features::read_wav(f)) : features::load_features(f);
    if (!out.empty() && seq.dim() != out.front().cols()) {
      throw InputError("feature dimension differs in " + f.string());
    }
    out.push_back(std::move(seq.data));
  }
  return out;
}

int cmd_pretrain(const std::string& config_path, const std::string& data_dir, bool synth, const std::string& out_dir,
                 const std::string& resume) {
  const auto cfg = load_run_config(config_path);
  if (synth == !data_dir.empty()) throw ConfigError("give exactly one of --data DIR or --synth");
  std::vector<Matrix> raw;
  if (synth) {
    for (auto& s : features::synth_dataset(cfg.synth)) raw.push_back(std::move(s.data));
  } else {
    raw = load_corpus(data_dir);
  }
  std::filesystem::create_directories(out_dir);
  write_text(std::filesystem::path(out_dir) / "config.resolved", config::render_resolved(cfg));

  trainer::Trainer tr(cfg.train, trainer::prepare_dataset(raw, cfg.train.stack_factor));
  fmt::print(stderr, "pretrain: {} sequences, {} steps, {} parameters\n", tr.dataset().size(), tr.total_steps(),
             tr.params().scalar_count());
  trainer::RunOptions opts;
  opts.out_dir = out_dir;
  if (!resume.empty()) opts.resume_from = resume;
  trainer::MetricsRecord last;
  opts.on_step = [&](const trainer::MetricsRecord& m) { last = m; };
  trainer::run_pretrain(tr, opts);
  fmt::print("{:>6} {:>6} {:>12} {:>12} {:>12} {:>10} {:>10}\n", "step", "epoch", "loss_total", "loss_F", "loss_G",
             "acc_anc", "util_enh");
  fmt::print("{:>6} {:>6} {:>12.6f} {:>12.6f} {:>12.6f} {:>10.4f} {:>10.4f}\n", last.step, last.epoch,
             last.loss_total, last.loss_F, last.loss_G, last.mask_acc_anchor, last.codebook_util_enh);
  return kExitOk;
}

int cmd_gradcheck(const std::string& config_path, int precision_bits, const std::string& sabotage,
                  const std::string& csv_path) {
  verify::GradCheckConfig gc;
  if (!config_path.empty()) {
    // Only the objective settings carry over; the network stays tiny.
    const auto cfg = load_run_config(config_path);
    gc.weights = cfg.train.weights;
    gc.tau = cfg.train.tau;
    gc.stop_label_grad = cfg.train.stop_label_grad;
  }
  if (precision_bits != 64 && precision_bits != 32) throw ConfigError("--precision must be 64 or 32");
  gc.precision = precision_bits == 32 ? ad::Precision::f32 : ad::Precision::f64;
  if (!sabotage.empty()) gc.sabotage = sabotage;

  const auto report = verify::gradcheck_birq(gc);
  const double threshold = verify::gradcheck_threshold(gc.precision);
  fmt::print("gradcheck: {} parameters, step {:g}, {}-bit analytic gradients, threshold {:g}\n",
             report.parameter_count, report.step, precision_bits, threshold);
  fmt::print("{:<10} {:<32} {:>14}\n", "objective", "tensor", "max_rel_err");
  std::string csv = "objective,tensor,max_rel_error\n";
  for (const auto& obj : report.objectives) {
    for (const auto& t : obj.tensors) {
      fmt::print("{:<10} {:<32} {:>14.3e}\n", obj.objective, t.tensor, t.max_rel_error);
      csv += fmt::format("{},{},{:.17g}\n", obj.objective, t.tensor, t.max_rel_error);
    }
  }
  fmt::print("global max {:.3e} at {}\n", report.global_max, report.worst);
  if (!csv_path.empty()) write_text(csv_path, csv);
  if (!(report.global_max <= threshold)) {
    fmt::print(stderr, "gradcheck FAILED: worst tensor {} ({:.3e} > {:g})\n", report.worst, report.global_max,
               threshold);
    return kExitThreshold;
  }
  return kExitOk;
}

std::vector<double> parse_gammas(const std::string& list) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto comma = list.find(',', pos);
    std::string item = list.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item == "inf") {
      out.push_back(verify::kInfiniteGamma);
    } else {
      std::size_t used = 0;
      double g = 0.0;
      try {
        g = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != item.size() || !(g >= 0.0)) throw ConfigError("bad gamma '" + item + "'");
      out.push_back(g);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

int cmd_bilevel_demo(const std::string& gammas, double step_size, std::size_t steps, const std::string& csv_path) {
  const auto problem = verify::hand_kkt_fixture();
  const auto list = parse_gammas(gammas);
  const auto report = verify::run_penalty_demo(problem, list, step_size, steps);
  fmt::print("{:>10} {:>8} {:>8} {:>14} {:>14} {:>12}\n", "gamma", "w1", "w2", "delta", "upper", "distance");
  std::string csv = "gamma,w1,w2,delta,theta_pen,theta_oracle,distance\n";
  auto vec = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += fmt::format("{}{:.17g}", i ? " " : "", v[i]);
    return s;
  };
  int code = kExitOk;
  for (const auto& p : report.points) {
    fmt::print("{:>10g} {:>8.5f} {:>8.5f} {:>14.6e} {:>14.6e} {:>12.3e}\n", p.gamma, p.w1, p.w2, p.delta_measured,
               p.upper_value, p.distance);
    csv += fmt::format("{:g},{:.17g},{:.17g},{:.17g},{},{},{:.17g}\n", p.gamma, p.w1, p.w2, p.delta_measured,
                       vec(p.theta_penalty), vec(p.theta_oracle), p.distance);
    if (p.gamma == 100.0 && !(p.distance <= 1e-2)) {
      fmt::print(stderr, "bilevel-demo FAILED: distance {:.3e} at gamma = 100\n", p.distance);
      code = kExitThreshold;
    }
  }
  if (!csv_path.empty()) write_text(csv_path, csv);
  return code;
}

int cmd_quantize(const std::string& feats, const std::string& mode, const std::string& out, std::uint64_t seed,
                 std::size_t n, std::size_t code_dim, double tau, bool l2) {
  const auto f = features::load_features(feats);
  quantizer::QuantizerShape shape;
  shape.input_dim = f.dim();
  shape.hidden_dim = f.dim();
  shape.codebook_size = n;
  shape.code_dim = code_dim;
  shape.l2_normalize = l2;
  const auto q = quantizer::make_quantizer(seed, shape);
  const Matrix u = quantizer::project(q.sets[0].anchor, f.data);
  if (mode == "hard") {
    labels::save_labels(quantizer::assign_hard(u, q.sets[0].codebook), n, out);
  } else if (mode == "soft") {
    labels::save_labels(quantizer::assign_soft(u, q.sets[0].codebook, tau), n, out);
  } else {
    throw ConfigError("--mode must be hard or soft");
  }
  fmt::print("quantize: {} frames -> {} ({} labels, N = {})\n", f.frames(), out, mode, n);
  return kExitOk;
}

int cmd_synth_data(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = load_run_config(config_path);
  std::filesystem::create_directories(out_dir);
  const auto seqs = features::synth_dataset(cfg.synth);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    features::save_features(seqs[i], std::filesystem::path(out_dir) / fmt::format("seq_{:04d}.feats", i));
  }
  fmt::print("synth-data: wrote {} sequences of {} x {} to {}\n", seqs.size(), cfg.synth.frames, cfg.synth.dim,
             out_dir);
  return kExitOk;
}

int cmd_plot(const std::string& metrics, const std::string& out) {
  const auto rows = plot::read_metrics_csv(metrics);
  write_text(out, plot::render_svg(rows));
  fmt::print("plot: {} rows -> {}\n", rows.size(), out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BiRQ self-supervised speech pretraining toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, resume;
  bool synth = false;
  auto* pretrain = app.add_subcommand("pretrain", "train the encoder, writing metrics.csv and checkpoints");
  pretrain->add_option("--config", config_path, "key = value configuration file");
  pretrain->add_option("--data", data_dir, "directory of .feats / .wav files");
  pretrain->add_flag("--synth", synth, "use the synthetic corpus described by the synth.* keys");
  pretrain->add_option("--out", out_dir, "output directory")->required();
  pretrain->add_option("--resume", resume, "checkpoint to resume from");

  std::string gc_config, sabotage, gc_csv;
  int precision = 64;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of F, G and the combined loss");
  gradcheck->add_option("--config", gc_config, "take w1, w2, tau and stop_label_grad from this config");
  gradcheck->add_option("--precision", precision, "64 (threshold 1e-4) or 32 (threshold 1e-2)");
  gradcheck->add_option("--sabotage", sabotage, "test hook: corrupt this tensor's analytic gradient");
  gradcheck->add_option("--csv", gc_csv, "write per-tensor errors as CSV");

  std::string gammas = "1,10,100,1000", demo_csv;
  double demo_step = 0.1;
  std::size_t demo_steps = 2000;
  auto* demo = app.add_subcommand("bilevel-demo", "penalty vs constrained solution on the quadratic fixture");
  demo->add_option("--gammas", gammas, "comma-separated penalty constants; inf means w1 = 0");
  demo->add_option("--step", demo_step, "gradient-descent step size");
  demo->add_option("--steps", demo_steps, "gradient-descent iterations");
  demo->add_option("--csv", demo_csv, "write the sweep as CSV");

  std::string feats, mode = "hard", labels_out;
  std::uint64_t q_seed = 0;
  std::size_t q_n = 8, q_dc = 16;
  double q_tau = quantizer::kDefaultTemperature;
  bool q_l2 = false;
  auto* quantize = app.add_subcommand("quantize", "label a FEATS file with the anchoring quantizer");
  quantize->add_option("--feats", feats, "input FEATS file")->required();
  quantize->add_option("--mode", mode, "hard or soft");
  quantize->add_option("--out", labels_out, "output LABELS file")->required();
  quantize->add_option("--seed", q_seed, "quantizer seed");
  quantize->add_option("--codebook-size", q_n, "codebook entries N");
  quantize->add_option("--code-dim", q_dc, "codebook dimension");
  quantize->add_option("--tau", q_tau, "temperature for soft labels");
  quantize->add_flag("--l2-normalize", q_l2, "unit-norm codebook rows");

  std::string synth_config, synth_out;
  auto* synth_data = app.add_subcommand("synth-data", "write the synthetic corpus as FEATS files");
  synth_data->add_option("--config", synth_config, "configuration (synth.* and seed keys)");
  synth_data->add_option("--out", synth_out, "output directory")->required();

  std::string metrics, svg;
  auto* plot_cmd = app.add_subcommand("plot", "render a metrics CSV to SVG");
  plot_cmd->add_option("--metrics", metrics, "metrics.csv")->required();
  plot_cmd->add_option("--out", svg, "output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*pretrain) return cmd_pretrain(config_path, data_dir, synth, out_dir, resume);
    if (*gradcheck) return cmd_gradcheck(gc_config, precision, sabotage, gc_csv);
    if (*demo) return cmd_bilevel_demo(gammas, demo_step, demo_steps, demo_csv);
    if (*quantize) return cmd_quantize(feats, mode, labels_out, q_seed, q_n, q_dc, q_tau, q_l2);
    if (*synth_data) return cmd_synth_data(synth_config, synth_out);
    if (*plot_cmd) return cmd_plot(metrics, svg);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const NumericError& e) {
    fmt::print(stderr, "numeric error: {}\n", e.what());
    return kExitNumeric;
  } catch (const ParameterError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    // Format, I/O, shape and input problems all trace back to the data.
    fmt::print(stderr, "data error: {}\n", e.what());
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kExitData;
  }
  return 1;
}
