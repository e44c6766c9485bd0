// psi_codec: data generation, training, evaluation and experiment sweeps for
// the prompt-conditioned PSI codec.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "psic/complexity.hpp"
#include "psic/config.hpp"
#include "psic/errors.hpp"
#include "psic/gradcheck_suite.hpp"
#include "psic/harness.hpp"
#include "psic/io_util.hpp"
#include "psic/training.hpp"

namespace fs = std::filesystem;
using namespace psic;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string precision;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.precision.empty()) cfg.precision = parse_precision(g.precision);
  cfg.sync();
  cfg.validate();
  return cfg;
}

void ensure_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string train_log_csv(const std::vector<TrainLogRow>& log, const RunConfig& cfg) {
  std::string out;
  for (const auto& c : results_comments(cfg)) out += "# " + c + "\n";
  out += "epoch,step,lr,train_nmse,val_nmse\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + ',' + std::to_string(r.step) + ',' + num(r.lr) + ',' + num(r.train_nmse) + ',' +
           (std::isnan(r.val_nmse) ? std::string() : num(r.val_nmse)) + '\n';
  }
  return out;
}

int cmd_gen_data(const Globals& g) {
  const auto cfg = resolve_config(g);
  ensure_out(g.out);
  const auto data = generate_dataset(cfg.data);
  std::vector<PsiMap> maps;
  std::size_t rician = 0;
  for (const auto& s : data) {
    maps.push_back(s.map);
    rician += s.type == ChannelType::kRician;
  }
  const fs::path path = fs::path(g.out) / "dataset.psi";
  write_dataset(path, maps);
  std::cout << "wrote " << maps.size() << " maps (" << rician << " rician) to " << path.string() << '\n';
  return kOk;
}

template <typename T>
int train_typed(const RunConfig& cfg, const fs::path& out, const std::string& resume) {
  const auto data = generate_dataset(cfg.data);
  const std::string text = to_config_text(cfg);
  TrainState<T> state;
  if (!resume.empty()) {
    const auto ckpt = read_checkpoint(resume);
    if (ckpt.config_text != text) throw ConfigError("checkpoint " + resume + " was written with a different config");
    state = from_checkpoint<T>(ckpt, cfg.model);
    std::cerr << "resuming at epoch " << state.epoch << '\n';
  } else {
    state = initial_state<T>(cfg.model, cfg.train);
  }
  TrainHooks hooks;
  const auto t0 = std::chrono::steady_clock::now();
  hooks.on_epoch = [&](const TrainLogRow& r) {
    if (!std::isnan(r.val_nmse)) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "epoch " << r.epoch + 1 << "/" << cfg.train.epochs << "  train " << num(10 * std::log10(r.train_nmse))
                << " dB  val " << num(10 * std::log10(r.val_nmse)) << " dB  (" << num(s) << " s)\n";
    }
  };
  auto result = train<T>(data, cfg.train, cfg.link, std::move(state), hooks);
  write_text_file(out / "train_log.csv", train_log_csv(result.log, cfg));
  if (result.diverged) {
    write_checkpoint(out / "model.psck", to_checkpoint(result.state, text));
    std::cerr << "training diverged: " << result.divergence << " (last finite state saved)\n";
    return kNumeric;
  }
  write_checkpoint(out / "model.psck", to_checkpoint(result.state, text));
  std::cout << "wrote " << (out / "model.psck").string() << " and " << (out / "train_log.csv").string() << '\n';
  return kOk;
}

int cmd_train(const Globals& g, const std::string& resume) {
  const auto cfg = resolve_config(g);
  ensure_out(g.out);
  return cfg.precision == Precision::kF64 ? train_typed<double>(cfg, g.out, resume)
                                          : train_typed<float>(cfg, g.out, resume);
}

int cmd_eval(const Globals& g, std::string checkpoint) {
  const auto cfg = resolve_config(g);
  ensure_out(g.out);
  if (checkpoint.empty()) checkpoint = (fs::path(g.out) / "model.psck").string();
  const auto rows = evaluate_checkpoint(read_checkpoint(checkpoint), cfg);
  const fs::path path = fs::path(g.out) / "eval.csv";
  emit_results(rows, path, results_comments(cfg));
  for (const auto& r : rows) {
    if (r.rate == cfg.eval.rate) {
      std::cout << r.chan_type << "  snr " << num(r.snr_db) << " dB  rate " << num(r.rate) << "  nmse "
                << num(r.nmse_db) << " dB\n";
    }
  }
  std::cout << "wrote " << path.string() << '\n';
  return kOk;
}

int cmd_experiment(const Globals& g, const std::string& id) {
  const auto cfg = resolve_config(g);
  ensure_out(g.out);
  auto spec = make_experiment(parse_experiment_id(id), cfg, g.out);
  spec.progress = &std::cerr;
  const auto rows = run_experiment(spec, cfg);
  for (const auto& f : write_experiment_outputs(spec, rows, cfg)) std::cout << "wrote " << f.string() << '\n';
  return kOk;
}

int cmd_complexity(const Globals& g, std::size_t runs, bool layers) {
  const auto cfg = resolve_config(g);
  ensure_out(g.out);
  const auto r = count_params_macs(cfg.model, runs);
  std::string csv = "component,layer,params,macs\n";
  std::ostringstream timing;
  std::cout << "component              params          MACs   time (ms)\n";
  for (const auto* c : {&r.encoder_baseline, &r.encoder_soft, &r.encoder_soft_film, &r.decoder_attention,
                        &r.decoder_dwcg}) {
    char line[160];
    std::snprintf(line, sizeof line, "%-18s %10llu %13llu %11.4f\n", c->name.c_str(),
                  static_cast<unsigned long long>(c->params()), static_cast<unsigned long long>(c->macs()),
                  c->time_ms);
    std::cout << line;
    timing << c->name << ' ' << num(c->time_ms) << '\n';
    for (const auto& l : c->layers) {
      csv += c->name + ',' + l.name + ',' + std::to_string(l.params) + ',' + std::to_string(l.macs) + '\n';
      if (layers) std::cout << "    " << l.name << "  " << l.params << "  " << l.macs << '\n';
    }
    csv += c->name + ",total," + std::to_string(c->params()) + ',' + std::to_string(c->macs()) + '\n';
  }
  std::cout << "prompt overhead      " << num(100 * r.prompt_overhead()) << " % of baseline encoder params\n"
            << "dwcg / attention     params " << num(100 * r.decoder_param_ratio()) << " %, MACs "
            << num(100 * r.decoder_mac_ratio()) << " % (decoder tokens " << cfg.model.decoder.tokens() << ")\n";
  // Counts are exact and go to the CSV; wall times vary run to run and are
  // kept out of it.
  write_text_file(fs::path(g.out) / "complexity.csv", csv);
  write_text_file(fs::path(g.out) / "complexity_timing.txt", timing.str());
  return kOk;
}

int cmd_grad_check(const Globals& g, std::size_t coords) {
  auto cfg = resolve_config(g);
  bool ok = true;
  auto report = [&](const GradCheckEntry& e) {
    const bool pass = e.result.passed && e.result.max_rel_error < 1e-4;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << e.name << "  checked " << e.checked << "  max rel "
              << num(e.result.max_rel_error) << "  max abs " << num(e.result.max_abs_error) << (e.worst.empty() ? "" : "  worst " + e.worst) << '\n';
  };
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& e : op_gradchecks(cfg.seed)) report(e);
  for (const auto& e : pipeline_gradchecks(cfg.model, cfg.seed, coords)) report(e);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << (ok ? "all gradient checks passed" : "gradient check FAILED") << " in " << num(s) << " s\n";
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-conditioned variable-rate PSI codec"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "config file (key = value under [section] headers)");
  app.add_option("--seed", g.seed, "run seed (overrides [run] seed)");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--precision", g.precision, "arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));

  auto* gen = app.add_subcommand("gen-data", "generate a PSI dataset file");
  auto* tr = app.add_subcommand("train", "train a codec from the configured dataset");
  std::string resume;
  tr->add_option("--resume", resume, "checkpoint to continue from");
  auto* ev = app.add_subcommand("eval", "score a checkpoint over the SNR × rate grid");
  std::string checkpoint;
  ev->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/model.psck)");
  auto* ex = app.add_subcommand("experiment", "run an experiment sweep");
  std::string exp_id;
  ex->add_option("id", exp_id, "cross_snr | variable_rate | scalability | ablation_prompt | ablation_decoder")
      ->required();
  auto* cx = app.add_subcommand("complexity", "exact parameter and MAC counts");
  std::size_t runs = 100;
  bool layers = false;
  cx->add_option("--runs", runs, "timed forward passes per component")->capture_default_str();
  cx->add_flag("--layers", layers, "print the per-layer breakdown");
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks");
  std::size_t coords = 4;
  gc->add_option("--coords", coords, "coordinates probed per parameter tensor")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(g);
    if (*tr) return cmd_train(g, resume);
    if (*ev) return cmd_eval(g, checkpoint);
    if (*ex) return cmd_experiment(g, exp_id);
    if (*cx) return cmd_complexity(g, runs, layers);
    if (*gc) return cmd_grad_check(g, coords);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
