// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
// fails. Usage: acceptance [work_dir]. The work directory is cleared first,
// apart from the trend model cache.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "psic/complexity.hpp"
#include "psic/config.hpp"
#include "psic/gradcheck_suite.hpp"
#include "psic/harness.hpp"
#include "psic/log.hpp"
#include "psic/ops.hpp"
#include "psic/training.hpp"

namespace fs = std::filesystem;
using namespace psic;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double db(double linear) { return 10.0 * std::log10(linear); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RunConfig desk_config() {
  RunConfig c = load_config(fs::path(PSIC_SOURCE_DIR) / "configs" / "desk.ini");
  c.sync();
  c.validate();
  return c;
}

// 1 ------------------------------------------------------------------------
Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0, worst_abs = 0.0;
  std::string worst_name;
  bool ok = true;
  std::size_t checked = 0;
  auto take = [&](const GradCheckEntry& e) {
    ok = ok && e.result.passed && e.result.max_rel_error < 1e-4;
    checked += e.checked;
    worst_abs = std::max(worst_abs, e.result.max_abs_error);
    if (e.result.max_rel_error >= worst) worst = e.result.max_rel_error, worst_name = e.name;
  };
  for (const auto& e : op_gradchecks(23)) take(e);
  for (const auto& e : pipeline_gradchecks(ModelConfig{}, 5, 4)) take(e);
  const double s = seconds_since(t0);
  return {ok && s < 120.0, std::to_string(checked) + " coordinates, max rel error " + num(worst) + " (" + worst_name + "), max abs error " +
                               num(worst_abs) + " (rel below a 1e-7 abs floor counts as 0), " + num(s, 3) + " s"};
}

// 2 ------------------------------------------------------------------------
Outcome rate_mask_exactness() {
  const std::vector<double> rates{0.001, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
  bool ok = true;
  double worst = 0.0;
  for (std::size_t D : {8u, 16u, 64u}) {
    for (double r : rates) {
      const auto m = prefix_mask(r, D);
      const auto k = std::max<std::size_t>(static_cast<std::size_t>(std::floor(r * double(D))), 1);
      ok = ok && m.k == k;
      worst = std::max(worst, std::abs(m.alpha * m.alpha * double(m.k) - double(D)));
      for (std::size_t i = 0; i < D; ++i) ok = ok && (m.mask[i] != 0) == (i < k);
    }
    for (double a : rates)
      for (double b : rates) {
        if (a > b) continue;
        const auto ma = prefix_mask(a, D), mb = prefix_mask(b, D);
        for (std::size_t i = 0; i < D; ++i) ok = ok && (!ma.mask[i] || mb.mask[i]);
      }
  }
  ok = ok && worst <= 1e-12;
  return {ok, "21 (D, r) points, max |alpha^2 k - D| = " + num(worst) + ", prefix nesting over all rate pairs"};
}

// 3 ------------------------------------------------------------------------
Outcome film_neutrality() {
  RngStream rng(31, "accept/film");
  auto rnd = [&](Shape s) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(-2.0, 2.0);
    return t;
  };
  Graph<double> g;
  const std::size_t B = 3, C = 8, HW = 64;
  auto h = g.constant(rnd({B, C, 8, 8}));
  auto closed = film(h, g.constant(rnd({B, C})), g.constant(rnd({B, C})), g.constant(Tensor<double>({B, 1})));
  const bool identity = closed.value().to_vector() == h.value().to_vector();
  auto doubled = film(h, g.constant(Tensor<double>({B, C}, 1.0)), g.constant(Tensor<double>({B, C})),
                      g.constant(Tensor<double>({B, 1}, 1.0)));
  double worst = 0.0;
  for (std::size_t c = 0; c < B * C; ++c) {
    auto var = [&](const double* p) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < HW; ++i) m += p[i];
      m /= HW;
      for (std::size_t i = 0; i < HW; ++i) v += (p[i] - m) * (p[i] - m);
      return v / (HW - 1);
    };
    worst = std::max(worst, std::abs(var(doubled.value().ptr() + c * HW) / var(h.value().ptr() + c * HW) - 4.0));
  }
  return {identity && worst <= 1e-10, std::string("gate 0 identity ") + (identity ? "bit-exact" : "BROKEN") +
                                          ", max |variance ratio - 4| = " + num(worst)};
}

// 4 ------------------------------------------------------------------------
Outcome dwcg_identity() {
  DecoderConfig cfg;
  ParamStore<double> store;
  init_decoder_params(store, cfg, 1);
  for (auto& e : store.entries())
    if (e.name.rfind("dec.block0.", 0) == 0 && e.name.find("ln.") == std::string::npos) e.value.fill(0.0);
  RngStream rng(41, "accept/dwcg");
  Tensor<double> x({2, cfg.tokens(), cfg.channels});
  for (auto& v : x.data()) v = rng.uniform(-2.0, 2.0);
  Graph<double> g;
  Binder<double> b(g, store, false);
  const auto y = dwcg_block(b, "dec.block0.", g.constant(x)).value();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(y[i] - x[i]));
  bool linear = true;
  auto macs = [](std::size_t T) {
    std::uint64_t n = 0;
    for (const auto& l : dwcg_block_count(T, 32, 7, 2)) n += l.macs;
    return n;
  };
  for (std::size_t T : {1u, 4u, 16u, 64u, 256u, 1024u}) linear = linear && macs(2 * T) == 2 * macs(T);
  return {worst <= 1e-12 && linear, "zero block max |y - x| = " + num(worst) +
                                        ", block MACs double with T for T = 1..1024: " + (linear ? "yes" : "NO")};
}

// 5 ------------------------------------------------------------------------
Outcome link_calibration() {
  bool ok = true;
  std::string detail;
  for (double snr : {0.0, 10.0, 20.0}) {
    LinkConfig cfg;
    cfg.snr_db = snr;
    RngStream rng(53, "accept/link/" + num(snr));
    const auto m = prefix_mask(0.5, 16);
    double sig = 0, noise = 0;
    std::size_t draws = 0;
    bool zero_tail = true;
    while (draws < 1000000) {
      Tensor<double> z({16});
      for (auto& v : z.data()) v = rng.uniform(-1.0, 1.0);
      z = apply_mask(z, m);
      const auto y = transmit(z, m.k, cfg, rng);
      for (std::size_t i = 0; i < m.k; ++i) {
        sig += z[i] * z[i];
        noise += (y[i] - z[i]) * (y[i] - z[i]);
      }
      for (std::size_t i = m.k; i < 16; ++i) zero_tail = zero_tail && y[i] == 0.0;
      draws += m.k;
    }
    const double measured = db(sig / noise);
    ok = ok && zero_tail && std::abs(measured - snr) <= 0.2;
    detail += (detail.empty() ? "" : ", ") + num(snr) + " dB -> " + num(measured, 5);
  }
  return {ok, detail + " over 1e6 draws each; masked tail exactly zero"};
}

// 6 ------------------------------------------------------------------------
Outcome overfit_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig model;
  model.sync();
  DatasetConfig d;
  d.samples = 1;
  d.seed = 3;
  const auto data = generate_dataset(d);
  TrainConfig t;
  t.epochs = 500;
  t.batch_size = 1;
  t.lr = 1e-3;
  t.val_fraction = 0.0;
  t.val_every = 0;
  t.noiseless = true;
  t.fixed_rate = 0.5;
  t.seed = 1;
  auto r = train<float>(data, model, t, LinkConfig{});
  const auto per = evaluate_trials(r.state.codec, {&data[0].map}, SideInfo{20.0, data[0].type, 0.5}, LinkConfig{}, 1,
                                   1, "overfit", true);
  const double s = seconds_since(t0);
  const double final_db = db(per[0]);
  return {!r.diverged && final_db < -30.0 && s < 60.0,
          "noiseless NMSE after 500 steps " + num(final_db) + " dB, " + num(s, 3) + " s"};
}

// 7 ------------------------------------------------------------------------
Outcome desk_learning(const RunConfig& desk) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = desk;
  cfg.train.rate_mode = RateMode::kFixed;
  cfg.train.fixed_rate = 0.5;
  cfg.sync();
  const auto data = generate_dataset(cfg.data);
  auto r = train<float>(data, cfg.model, cfg.train, cfg.link);
  const double train_s = seconds_since(t0);
  if (r.diverged) return {false, "training diverged: " + r.divergence};
  // Held-out maps, SNR spread over the training range.
  double sum = 0.0, zero_sum = 0.0;
  std::size_t n = 0;
  for (auto ch : {ChannelType::kRayleigh, ChannelType::kRician}) {
    const auto test = test_set(cfg, ch);
    std::vector<const PsiMap*> maps;
    for (const auto& s : test) {
      maps.push_back(&s.map);
      const auto t = normalize_psi<double>(s.map);
      double e = 0;
      for (auto v : t.data()) e += v * v;
      zero_sum += e > 0 ? 1.0 : 0.0;  // ‖t − 0‖² / ‖t‖²
    }
    for (double snr = 5.0; snr <= 20.0; snr += 2.5) {
      for (double v : evaluate_trials(r.state.codec, maps, SideInfo{snr, ch, 0.5}, cfg.link, cfg.eval.test_samples,
                                      cfg.seed, "accept/desk/" + num(snr))) {
        sum += v;
        ++n;
      }
    }
  }
  const double held_out = db(sum / double(n));
  const double zero_db = db(zero_sum / double(2 * cfg.eval.test_samples));
  return {held_out <= -10.0 && held_out < zero_db,
          "held-out NMSE " + num(held_out) + " dB over " + std::to_string(n) + " trials (zero predictor " +
              num(zero_db) + " dB), training " + num(train_s, 3) + " s"};
}

// 8, 9 ---------------------------------------------------------------------
struct TrendRuns {
  std::vector<ResultRow> rows;
  double seconds = 0.0;
  std::size_t seeds = 0;
};

TrendRuns run_trend_models(const RunConfig& desk, const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = desk;
  cfg.eval.snr_list = {5.0, 10.0, 15.0, 20.0};
  auto spec = make_experiment(ExperimentId::kVariableRate, cfg, work / "trend");
  auto extra = make_experiment(ExperimentId::kAblationPrompt, cfg, work / "trend");
  for (auto& a : extra.arms)
    if (a.name == "soft_only") spec.arms.push_back(a);
  spec.plots = false;
  spec.progress = &std::cerr;
  TrendRuns t;
  t.rows = run_experiment(spec, cfg);
  write_experiment_outputs(spec, t.rows, cfg);
  t.seconds = seconds_since(t0);
  t.seeds = spec.seeds.size();
  return t;
}

// Mean linear NMSE over channels and SNRs per (variant, seed, rate).
std::map<std::string, std::map<std::uint64_t, std::map<double, double>>> per_seed_rate(const std::vector<ResultRow>& rows) {
  std::map<std::string, std::map<std::uint64_t, std::map<double, std::pair<double, int>>>> acc;
  for (const auto& r : rows) {
    auto& c = acc[r.variant][r.seed][r.rate];
    c.first += r.nmse_linear;
    ++c.second;
  }
  std::map<std::string, std::map<std::uint64_t, std::map<double, double>>> out;
  for (const auto& [v, seeds] : acc)
    for (const auto& [s, rates] : seeds)
      for (const auto& [r, c] : rates) out[v][s][r] = c.first / c.second;
  return out;
}

Outcome variable_rate_trend(const TrendRuns& t) {
  if (t.seeds < 5) return {false, "needs at least 5 seeds"};
  auto m = per_seed_rate(t.rows);
  bool ok = true;
  std::string detail = "gap mixed - fixed (dB):";
  std::vector<double> medians;
  for (double r : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    double mixed = 0, fixed = 0;
    std::vector<double> per_seed;
    for (const auto& [s, rates] : m["prompt_mixed"]) {
      mixed += rates.at(r);
      per_seed.push_back(db(rates.at(r)));
    }
    for (const auto& [s, rates] : m["fixed"]) fixed += rates.at(r);
    const double gap = db(mixed / double(t.seeds)) - db(fixed / double(t.seeds));
    ok = ok && gap <= 1.0;
    std::sort(per_seed.begin(), per_seed.end());
    medians.push_back(per_seed[per_seed.size() / 2]);
    detail += " r=" + num(r) + ":" + num(gap, 3);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < medians.size(); ++i) monotone = monotone && medians[i] <= medians[i - 1];
  detail += "; median over " + std::to_string(t.seeds) + " seeds (dB):";
  for (double v : medians) detail += " " + num(v);
  detail += monotone ? " nonincreasing" : " NOT nonincreasing";
  return {ok && monotone, detail};
}

Outcome prompt_benefit_trend(const TrendRuns& t) {
  if (t.seeds < 5) return {false, "needs at least 5 seeds"};
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : t.rows) {
    auto& c = acc[r.variant];
    c.first += r.nmse_linear;
    ++c.second;
  }
  auto mean_db = [&](const std::string& v) { return db(acc.at(v).first / acc.at(v).second); };
  const double film = mean_db("prompt_mixed"), soft = mean_db("soft_only"), none = mean_db("noprompt_mixed");
  return {film <= soft && soft <= none, "soft+FiLM " + num(film) + " dB, soft-only " + num(soft) + " dB, no-prompt " +
                                            num(none) + " dB (mean over " + std::to_string(t.seeds) +
                                            " seeds, both channels, SNR 5-20 dB, all rates)"};
}

// 10 -----------------------------------------------------------------------
Outcome complexity_ratios() {
  RunConfig table = load_config(fs::path(PSIC_SOURCE_DIR) / "configs" / "table_scale.ini");
  table.sync();
  const auto r = count_params_macs(table.model);
  auto narrow = table.model;
  narrow.encoder.latent = 16;
  narrow.sync();
  const auto rn = count_params_macs(narrow);
  const auto ref = count_params_macs(ModelConfig{});
  const bool ok = r.prompt_overhead() <= 0.06 && r.decoder_param_ratio() <= 0.25 && r.decoder_mac_ratio() <= 0.25;
  return {ok, "table scale (T_dec=256, D=256): prompt overhead " + num(100 * r.prompt_overhead(), 3) +
                  " %, DWCG/attention params " + num(100 * r.decoder_param_ratio(), 3) + " %, MACs " +
                  num(100 * r.decoder_mac_ratio(), 3) + " %; with D=16: params " +
                  num(100 * rn.decoder_param_ratio(), 3) + " %, MACs " + num(100 * rn.decoder_mac_ratio(), 3) +
                  " %; reference 4x4: overhead " + num(100 * ref.prompt_overhead(), 3) + " %, params " +
                  num(100 * ref.decoder_param_ratio(), 3) + " %"};
}

// 11 -----------------------------------------------------------------------
std::string strip_timestamp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind("# generated", 0) != 0) out += line + "\n";
  return out;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome cli_determinism(const fs::path& work) {
  const std::string cli = PSIC_CLI_PATH;
  const std::string config = (fs::path(PSIC_SOURCE_DIR) / "configs" / "smoke.ini").string();
  const std::vector<std::string> steps{"gen-data", "train", "eval", "experiment variable_rate", "experiment scalability",
                                       "complexity --runs 3"};
  std::vector<fs::path> dirs;
  for (const char* threads : {"1", "3"}) {
    const fs::path out = work / (std::string("cli_threads") + threads);
    dirs.push_back(out);
    for (const auto& step : steps) {
      const std::string cmd = "PSI_CODEC_THREADS=" + std::string(threads) + " \"" + cli + "\" --config \"" + config +
                              "\" --seed 11 --out \"" + out.string() + "\" " + step + " >/dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) return {false, "command failed: " + cmd};
    }
  }
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(dirs[0])) {
    const auto name = e.path().filename();
    if (e.path().extension() != ".csv" && e.path().extension() != ".psi") continue;
    const auto other = dirs[1] / name;
    if (!fs::exists(other)) return {false, name.string() + " missing from the second run"};
    const bool same = e.path().extension() == ".csv" ? strip_timestamp(e.path()) == strip_timestamp(other)
                                                     : read_bytes(e.path()) == read_bytes(other);
    if (!same) return {false, name.string() + " differs between runs"};
    ++compared;
  }
  return {compared >= 6, std::to_string(compared) + " result files byte-identical across two runs (1 vs 3 threads), " +
                             std::to_string(steps.size()) + " subcommands"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
  // Trained trend models are cached by config hash and checked against their
  // embedded config on load, so they survive; everything else is rebuilt.
  fs::create_directories(work);
  for (const auto& e : fs::directory_iterator(work))
    if (e.path().filename() != "trend") fs::remove_all(e.path());
  if (fs::exists(work / "trend"))
    for (const auto& e : fs::directory_iterator(work / "trend"))
      if (e.path().filename() != "checkpoints") fs::remove_all(e.path());
  set_warnings_silenced(true);
  const RunConfig desk = desk_config();

  int failed = 0;
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << title << ": " << o.detail << "  ["
              << num(seconds_since(t0), 3) << " s]" << std::endl;
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "rate mask exactness", rate_mask_exactness);
  report(3, "FiLM neutrality and variance", film_neutrality);
  report(4, "DWCG residual identity and MAC linearity", dwcg_identity);
  report(5, "link calibration", link_calibration);
  report(6, "overfit oracle", overfit_oracle);
  report(7, "desk-scale learning", [&] { return desk_learning(desk); });
  TrendRuns trend;
  bool trend_ok = true;
  std::string trend_error;
  try {
    trend = run_trend_models(desk, work);
  } catch (const std::exception& e) {
    trend_ok = false;
    trend_error = e.what();
  }
  report(8, "variable-rate trend", [&] {
    return trend_ok ? variable_rate_trend(trend) : Outcome{false, "trend runs failed: " + trend_error};
  });
  report(9, "prompt benefit trend", [&] {
    return trend_ok ? prompt_benefit_trend(trend) : Outcome{false, "trend runs failed: " + trend_error};
  });
  if (trend_ok) std::cout << "      (criteria 8-9 models trained in " << num(trend.seconds, 4) << " s)" << std::endl;
  report(10, "complexity ratios", complexity_ratios);
  report(11, "CLI determinism", [&] { return cli_determinism(work); });

  std::cout << (failed ? std::to_string(failed) + " of 11 criteria failed" : "all 11 criteria passed") << std::endl;
  return failed ? 1 : 0;
}
