#include "psic/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "psic/errors.hpp"
#include "psic/io_util.hpp"
#include "psic/parallel.hpp"
#include "psic/training.hpp"

namespace psic {

namespace {

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw LoadError(LoadErrorKind::kMalformed,
                    "results line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t parse_u64(std::string_view s, std::size_t line) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw LoadError(LoadErrorKind::kMalformed,
                    "results line " + std::to_string(line) + ": bad integer '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto p = s.find(sep, start);
    out.push_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) return out;
    start = p + 1;
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string format_results_csv(const std::vector<ResultRow>& rows, const std::vector<std::string>& comments) {
  std::string out;
  for (const auto& c : comments) out += "# " + c + "\n";
  out += kResultsHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += r.experiment + ',' + r.variant + ',' + std::to_string(r.seed) + ',' + num(r.snr_db) + ',' + r.chan_type +
           ',' + num(r.rate) + ',' + std::to_string(r.n_elements) + ',' + num(r.nmse_linear) + ',' +
           num(r.nmse_db) + ',' + std::to_string(r.trials) + '\n';
  }
  return out;
}

std::vector<ResultRow> parse_results_csv(std::string_view text) {
  std::vector<ResultRow> rows;
  bool header = false;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != kResultsHeader) {
        throw LoadError(LoadErrorKind::kMalformed, "results header mismatch on line " + std::to_string(line_no));
      }
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 10) {
      throw LoadError(LoadErrorKind::kMalformed, "results line " + std::to_string(line_no) + " has " +
                                                     std::to_string(f.size()) + " fields, expected 10");
    }
    ResultRow r;
    r.experiment = f[0];
    r.variant = f[1];
    r.seed = parse_u64(f[2], line_no);
    r.snr_db = parse_double(f[3], line_no);
    r.chan_type = f[4];
    r.rate = parse_double(f[5], line_no);
    r.n_elements = parse_u64(f[6], line_no);
    r.nmse_linear = parse_double(f[7], line_no);
    r.nmse_db = parse_double(f[8], line_no);
    r.trials = parse_u64(f[9], line_no);
    rows.push_back(std::move(r));
  }
  if (!header) throw LoadError(LoadErrorKind::kMalformed, "results text has no header line");
  return rows;
}

std::vector<std::string> results_comments(const RunConfig& cfg) {
  return {
      "config_hash " + hex16(config_hash(cfg)),
      "rate r keeps k = max(floor(r*D), 1) of the D latent coordinates; CR = k/D, D = " +
          std::to_string(cfg.model.latent()) + " for the base model",
      "rician_k_factor " + num(cfg.data.k_factor),
      "nmse_db = 10*log10(nmse_linear), nmse_linear the mean over trials",
      "generated " + utc_timestamp(),
  };
}

void emit_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path,
                  const std::vector<std::string>& comments) {
  if (rows.empty()) throw UsageError("no result rows to write to " + path.string());
  for (const auto& r : rows) {
    if (!(r.nmse_linear >= 0.0)) throw DomainError("result row with negative or NaN nmse_linear");
  }
  write_text_file(path, format_results_csv(rows, comments));
}

// ---------------------------------------------------------------------------
// SVG line plots

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string tick_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string render_svg(const Plot& plot) {
  constexpr double W = 680, H = 420, L = 70, R = 180, T = 40, B = 55;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : plot.series) {
    if (s.x.size() != s.y.size()) throw DimensionError("plot series '" + s.label + "' has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 1, x1 += 1;
  if (y1 - y0 < 1e-12) y0 -= 1, y1 += 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << fixed((L + W - R) / 2, 1) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(plot.title) << "</text>\n";
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<line x1=\"" << fixed(px(xv), 1) << "\" y1=\"" << H - B << "\" x2=\"" << fixed(px(xv), 1) << "\" y2=\""
      << H - B + 5 << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << fixed(px(xv), 1) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
      << tick_label(xv) << "</text>\n";
    o << "<line x1=\"" << L - 5 << "\" y1=\"" << fixed(py(yv), 1) << "\" x2=\"" << L << "\" y2=\""
      << fixed(py(yv), 1) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << L - 8 << "\" y=\"" << fixed(py(yv) + 4, 1) << "\" text-anchor=\"end\">" << tick_label(yv)
      << "</text>\n";
  }
  o << "<text x=\"" << fixed((L + W - R) / 2, 1) << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << xml_escape(plot.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << fixed((T + H - B) / 2, 1) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << fixed((T + H - B) / 2, 1) << ")\">" << xml_escape(plot.y_label) << "</text>\n";
  for (std::size_t s = 0; s < plot.series.size(); ++s) {
    const auto& ser = plot.series[s];
    const char* color = kPalette[s % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) continue;
      if (!pts.empty()) pts += ' ';
      pts += fixed(px(ser.x[i]), 1) + ',' + fixed(py(ser.y[i]), 1);
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) continue;
      o << "<circle cx=\"" << fixed(px(ser.x[i]), 1) << "\" cy=\"" << fixed(py(ser.y[i]), 1) << "\" r=\"3\" fill=\""
        << color << "\"/>\n";
    }
    const double ly = T + 14 + 18.0 * double(s);
    o << "<line x1=\"" << W - R + 12 << "\" y1=\"" << fixed(ly, 1) << "\" x2=\"" << W - R + 32 << "\" y2=\""
      << fixed(ly, 1) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - R + 38 << "\" y=\"" << fixed(ly + 4, 1) << "\">" << xml_escape(ser.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Experiments

std::string_view to_string(ExperimentId id) {
  switch (id) {
    case ExperimentId::kCrossSnr: return "cross_snr";
    case ExperimentId::kVariableRate: return "variable_rate";
    case ExperimentId::kScalability: return "scalability";
    case ExperimentId::kAblationPrompt: return "ablation_prompt";
    case ExperimentId::kAblationDecoder: return "ablation_decoder";
  }
  return "?";
}

ExperimentId parse_experiment_id(std::string_view s) {
  for (auto id : {ExperimentId::kCrossSnr, ExperimentId::kVariableRate, ExperimentId::kScalability,
                  ExperimentId::kAblationPrompt, ExperimentId::kAblationDecoder}) {
    if (s == to_string(id)) return id;
  }
  throw ConfigError("unknown experiment '" + std::string(s) +
                    "' (expected cross_snr, variable_rate, scalability, ablation_prompt or ablation_decoder)");
}

void ExperimentSpec::validate() const {
  if (arms.empty()) throw ConfigError("experiment has no model arms");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (trials < 1) throw ConfigError("experiment needs at least one trial");
  for (const auto& a : arms) {
    if (a.chans.empty() || a.snrs.empty() || a.rates.empty()) {
      throw ConfigError("arm '" + a.name + "' has an empty sweep axis");
    }
    for (double r : a.rates) {
      if (!(r > 0.0 && r <= 1.0)) throw ConfigError("arm '" + a.name + "' has a rate outside (0, 1]");
    }
    for (const auto& b : arms) {
      if (&a != &b && a.name == b.name) throw ConfigError("duplicate arm name '" + a.name + "'");
    }
  }
}

namespace {

const std::vector<ChannelType> kBothChannels{ChannelType::kRayleigh, ChannelType::kRician};

Arm make_arm(const std::string& name, const std::string& variant, const RunConfig& base, const std::string& model_variant) {
  Arm a;
  a.name = name;
  a.variant = variant;
  a.cfg = base;
  a.cfg.variant = model_variant;
  a.chans = kBothChannels;
  a.snrs = base.eval.snr_list;
  a.rates = base.eval.rate_list;
  return a;
}

void mixed_rate(Arm& a, const RunConfig& base) {
  a.cfg.train.rate_mode = RateMode::kUniform;
  a.cfg.train.rates = base.eval.rate_list;
}

void fixed_rate(Arm& a, double r) {
  a.cfg.train.rate_mode = RateMode::kFixed;
  a.cfg.train.fixed_rate = r;
  a.rates = {r};
}

// Patch size keeping a side×side map at 4×4 tokens when the side allows it.
std::size_t scaled_patch(std::size_t side) {
  for (std::size_t p = side / 4; p > 1; --p) {
    if (side % p == 0 && side / p >= 4) return p;
  }
  return 1;
}

}  // namespace

ExperimentSpec make_experiment(ExperimentId id, const RunConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  ExperimentSpec s;
  s.id = id;
  s.out = out;
  s.trials = cfg.eval.trials;
  s.train_if_missing = cfg.experiment.train_if_missing;
  s.plots = cfg.experiment.plots;
  for (std::size_t i = 0; i < cfg.experiment.seeds; ++i) s.seeds.push_back(cfg.seed + i);

  switch (id) {
    case ExperimentId::kCrossSnr: {
      for (auto [name, variant] : {std::pair{"prompt_varying", "soft_film"}, std::pair{"noprompt_varying", "no_prompt"},
                                   std::pair{"noprompt_fixed", "no_prompt"}}) {
        Arm a = make_arm(name, name, cfg, variant);
        fixed_rate(a, cfg.eval.rate);
        if (a.name == "noprompt_fixed") {
          // Trained on Rayleigh maps only.
          a.cfg.data.rician_fraction = 0.0;
          a.cfg.train.rician_fraction = 0.0;
        }
        s.arms.push_back(std::move(a));
      }
      break;
    }
    case ExperimentId::kVariableRate: {
      for (auto [name, variant] : {std::pair{"prompt_mixed", "soft_film"}, std::pair{"noprompt_mixed", "no_prompt"}}) {
        Arm a = make_arm(name, name, cfg, variant);
        mixed_rate(a, cfg);
        s.arms.push_back(std::move(a));
      }
      for (double r : cfg.eval.rate_list) {
        Arm a = make_arm("fixed_r" + num(r), "fixed", cfg, "soft_film");
        fixed_rate(a, r);
        s.arms.push_back(std::move(a));
      }
      break;
    }
    case ExperimentId::kScalability: {
      for (std::size_t n : cfg.experiment.n_list) {
        const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(n))));
        if (side * side != n) throw ConfigError("scalability needs square N, got " + std::to_string(n));
        Arm a = make_arm("soft_film_n" + std::to_string(n), "soft_film", cfg, "soft_film");
        auto& enc = a.cfg.model.encoder;
        enc.height = enc.width = side;
        enc.patch = scaled_patch(side);
        enc.latent = n;  // D = M
        a.cfg.model.sync();
        mixed_rate(a, cfg);
        a.cfg.sync();
        s.arms.push_back(std::move(a));
      }
      break;
    }
    case ExperimentId::kAblationPrompt: {
      for (const char* v : {"soft_film", "joint", "soft_only"}) {
        Arm a = make_arm(v, v, cfg, v);
        mixed_rate(a, cfg);
        s.arms.push_back(std::move(a));
      }
      break;
    }
    case ExperimentId::kAblationDecoder: {
      for (auto [name, kind] : {std::pair{"dwcg", DecoderKind::kDwcg}, std::pair{"attention", DecoderKind::kAttention}}) {
        Arm a = make_arm(name, name, cfg, "soft_film");
        a.cfg.model.decoder.kind = kind;
        mixed_rate(a, cfg);
        s.arms.push_back(std::move(a));
      }
      break;
    }
  }
  for (auto& a : s.arms) {
    a.cfg.sync();
    a.cfg.validate();
  }
  s.validate();
  return s;
}

std::filesystem::path arm_checkpoint_path(const std::filesystem::path& dir, const Arm& arm, std::uint64_t seed) {
  RunConfig c = arm.cfg;
  c.seed = seed;
  c.sync();
  return dir / (arm.name + "_s" + std::to_string(seed) + "_" + hex16(config_hash(c)).substr(0, 12) + ".psck");
}

std::vector<Sample> test_set(const RunConfig& cfg, ChannelType type) {
  DatasetConfig d = cfg.data;
  d.samples = cfg.eval.test_samples;
  d.seed = RngStream(cfg.seed, "test").next_u64();
  return generate_dataset(d, type);
}

namespace {

template <typename T>
Codec<T> obtain_codec(const ExperimentSpec& spec, const Arm& arm, std::uint64_t seed) {
  RunConfig c = arm.cfg;
  c.seed = seed;
  c.sync();
  const std::string text = to_config_text(c);
  const auto path = arm_checkpoint_path(spec.out / "checkpoints" / std::string(to_string(spec.id)), arm, seed);
  if (std::filesystem::exists(path)) {
    auto data = read_checkpoint(path);
    if (data.config_text != text) {
      throw ConfigError("checkpoint " + path.string() + " was trained with a different configuration; delete it");
    }
    if (spec.progress) *spec.progress << "loaded " << path.filename().string() << '\n';
    return from_checkpoint<T>(data, c.model).codec;
  }
  if (!spec.train_if_missing) {
    throw UsageError("missing checkpoint " + path.string() +
                     "; set train_if_missing = true under [experiment] to train it");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto dataset = generate_dataset(c.data);
  auto result = train<T>(dataset, c.model, c.train, c.link);
  if (result.diverged) {
    throw NumericError("training of '" + arm.name + "' seed " + std::to_string(seed) +
                       " diverged: " + result.divergence);
  }
  // Continue from the stored float32 image so a cached rerun scores the same
  // weights as this one.
  auto data = to_checkpoint(result.state, text);
  write_checkpoint(path, data);
  if (spec.progress) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    *spec.progress << "trained " << path.filename().string() << " in " << fixed(s, 1) << " s\n";
  }
  return from_checkpoint<T>(data, c.model).codec;
}

struct Cell {
  std::size_t arm, seed;
  ChannelType chan;
  double snr, rate;
};

template <typename T>
ResultRow score_cell(const Codec<T>& trained, const std::vector<Sample>& test, const Cell& c, const LinkConfig& link,
                     std::size_t trials, std::uint64_t seed) {
  std::vector<const PsiMap*> maps;
  for (const auto& s : test) maps.push_back(&s.map);
  // Private copy: cells share the trained codec across threads.
  Codec<T> codec = trained;
  const std::string label = "eval/" + std::string(to_string(c.chan)) + "/" + num(c.snr) + "/" + num(c.rate);
  const auto per = evaluate_trials(codec, maps, SideInfo{c.snr, c.chan, c.rate}, link, trials, seed, label);
  double mean = 0.0;
  for (double v : per) mean += v;
  mean /= double(per.size());
  ResultRow r;
  r.seed = seed;
  r.snr_db = c.snr;
  r.chan_type = to_string(c.chan);
  r.rate = c.rate;
  r.n_elements = codec.config.elements();
  r.nmse_linear = mean;
  r.nmse_db = 10.0 * std::log10(mean);
  r.trials = trials;
  return r;
}

template <typename T>
std::vector<ResultRow> evaluate_typed(const CheckpointData& ckpt, const RunConfig& cfg, const std::string& experiment) {
  RunConfig m = parse_config(ckpt.config_text);
  m.sync();
  m.validate();
  const auto codec = from_checkpoint<T>(ckpt, m.model).codec;
  RunConfig t = m;
  t.seed = cfg.seed;
  t.eval = cfg.eval;
  std::vector<Cell> cells;
  std::map<ChannelType, std::vector<Sample>> tests;
  for (auto ch : kBothChannels) {
    tests[ch] = test_set(t, ch);
    for (double snr : cfg.eval.snr_list)
      for (double r : cfg.eval.rate_list) cells.push_back({0, 0, ch, snr, r});
  }
  std::vector<ResultRow> rows(cells.size());
  parallel_for(cells.size(), [&](std::size_t i) {
    rows[i] = score_cell(codec, tests.at(cells[i].chan), cells[i], m.link, cfg.eval.trials, cfg.seed);
    rows[i].experiment = experiment;
    rows[i].variant = m.variant;
  });
  return rows;
}

template <typename T>
std::vector<ResultRow> run_typed(const ExperimentSpec& spec, const RunConfig& base) {
  spec.validate();
  ensure_dir(spec.out / "checkpoints" / std::string(to_string(spec.id)));

  const std::size_t n_models = spec.arms.size() * spec.seeds.size();
  std::vector<std::optional<Codec<T>>> codecs(n_models);
  parallel_for(n_models, [&](std::size_t i) {
    codecs[i] = obtain_codec<T>(spec, spec.arms[i / spec.seeds.size()], spec.seeds[i % spec.seeds.size()]);
  });

  // Held-out maps per (arm geometry, channel), drawn from the base seed so
  // every replicate is scored on the same maps.
  std::map<std::pair<std::size_t, ChannelType>, std::vector<Sample>> tests;
  for (std::size_t a = 0; a < spec.arms.size(); ++a) {
    RunConfig t = spec.arms[a].cfg;
    t.seed = base.seed;
    t.eval = base.eval;
    for (auto ch : spec.arms[a].chans) tests[{a, ch}] = test_set(t, ch);
  }

  std::vector<Cell> cells;
  for (std::size_t a = 0; a < spec.arms.size(); ++a)
    for (std::size_t s = 0; s < spec.seeds.size(); ++s)
      for (auto ch : spec.arms[a].chans)
        for (double snr : spec.arms[a].snrs)
          for (double r : spec.arms[a].rates) cells.push_back({a, s, ch, snr, r});

  std::vector<ResultRow> rows(cells.size());
  parallel_for(cells.size(), [&](std::size_t i) {
    const auto& c = cells[i];
    const auto& arm = spec.arms[c.arm];
    rows[i] = score_cell(*codecs[c.arm * spec.seeds.size() + c.seed], tests.at({c.arm, c.chan}), c, arm.cfg.link,
                         spec.trials, spec.seeds[c.seed]);
    rows[i].experiment = to_string(spec.id);
    rows[i].variant = arm.variant;
  });
  return rows;
}

// Mean linear NMSE per (series, x), reported in dB.
Plot aggregate_plot(const std::vector<ResultRow>& rows, const std::string& title, const std::string& x_label,
                    const std::function<bool(const ResultRow&)>& keep,
                    const std::function<double(const ResultRow&)>& x_of,
                    const std::function<std::string(const ResultRow&)>& series_of) {
  std::vector<std::string> order;
  std::map<std::string, std::map<double, std::pair<double, std::size_t>>> acc;
  for (const auto& r : rows) {
    if (!keep(r)) continue;
    const auto key = series_of(r);
    if (!acc.count(key)) order.push_back(key);
    auto& cell = acc[key][x_of(r)];
    cell.first += r.nmse_linear;
    ++cell.second;
  }
  Plot p{title, x_label, "NMSE (dB)", {}};
  for (const auto& key : order) {
    PlotSeries s{key, {}, {}};
    for (const auto& [x, v] : acc[key]) {
      s.x.push_back(x);
      s.y.push_back(10.0 * std::log10(v.first / double(v.second)));
    }
    p.series.push_back(std::move(s));
  }
  return p;
}

}  // namespace

std::vector<ResultRow> evaluate_checkpoint(const CheckpointData& ckpt, const RunConfig& cfg,
                                           const std::string& experiment) {
  return cfg.precision == Precision::kF64 ? evaluate_typed<double>(ckpt, cfg, experiment)
                                          : evaluate_typed<float>(ckpt, cfg, experiment);
}

std::vector<ResultRow> run_experiment(const ExperimentSpec& spec, const RunConfig& base) {
  return base.precision == Precision::kF64 ? run_typed<double>(spec, base) : run_typed<float>(spec, base);
}

std::vector<std::filesystem::path> write_experiment_outputs(const ExperimentSpec& spec,
                                                            const std::vector<ResultRow>& rows,
                                                            const RunConfig& base) {
  ensure_dir(spec.out);
  const std::string id(to_string(spec.id));
  std::vector<std::filesystem::path> files{spec.out / (id + ".csv")};
  emit_results(rows, files[0], results_comments(base));
  if (!spec.plots) return files;

  // The 300 dB column is a noiseless sanity check and stays off the curves.
  auto noisy = [](const ResultRow& r) { return r.snr_db < 100.0; };
  for (auto ch : kBothChannels) {
    const std::string chan(to_string(ch));
    auto on_chan = [&](const ResultRow& r) { return r.chan_type == chan; };
    Plot p;
    switch (spec.id) {
      case ExperimentId::kCrossSnr:
        p = aggregate_plot(
            rows, id + " (" + chan + ")", "SNR (dB)", [&](const ResultRow& r) { return on_chan(r) && noisy(r); },
            [](const ResultRow& r) { return r.snr_db; }, [](const ResultRow& r) { return r.variant; });
        break;
      case ExperimentId::kScalability:
        p = aggregate_plot(
            rows, id + " (" + chan + ")", "IRS elements N", [&](const ResultRow& r) { return on_chan(r) && noisy(r); },
            [](const ResultRow& r) { return double(r.n_elements); },
            [](const ResultRow& r) { return "r=" + num(r.rate); });
        break;
      default:
        p = aggregate_plot(
            rows, id + " (" + chan + ")", "rate r", [&](const ResultRow& r) { return on_chan(r) && noisy(r); },
            [](const ResultRow& r) { return r.rate; }, [](const ResultRow& r) { return r.variant; });
    }
    if (p.series.empty()) continue;
    files.push_back(spec.out / (id + "_" + chan + ".svg"));
    write_text_file(files.back(), render_svg(p));
  }
  return files;
}

}  // namespace psic
