#include "psic/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "psic/errors.hpp"
#include "psic/io_util.hpp"

namespace psic {

std::string_view to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + std::string(s) + "' (expected f32 or f64)");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

double parse_double(const std::string& key, std::string_view s) {
  const std::string t = trim(s);
  double v = 0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError(key + ": expected a number, got '" + t + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, std::string_view s) {
  const std::string t = trim(s);
  std::uint64_t v = 0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + t + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, std::string_view s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + t + "'");
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    auto item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& v, Fmt f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + f(v[i]);
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Member>
Field size_field(std::string sec, std::string key, Member m) {
  const std::string full = sec + "." + key;
  return {sec, key, [m](const RunConfig& c) { return fmt(std::uint64_t(std::invoke(m, c))); },
          [m, full](RunConfig& c, const std::string& v) { std::invoke(m, c) = parse_u64(full, v); }};
}

template <typename Member>
Field double_field(std::string sec, std::string key, Member m) {
  const std::string full = sec + "." + key;
  return {sec, key, [m](const RunConfig& c) { return fmt(double(std::invoke(m, c))); },
          [m, full](RunConfig& c, const std::string& v) { std::invoke(m, c) = parse_double(full, v); }};
}

template <typename Member>
Field bool_field(std::string sec, std::string key, Member m) {
  const std::string full = sec + "." + key;
  return {sec, key, [m](const RunConfig& c) { return std::string(std::invoke(m, c) ? "true" : "false"); },
          [m, full](RunConfig& c, const std::string& v) { std::invoke(m, c) = parse_bool(full, v); }};
}

template <typename Member, typename Parse>
Field enum_field(std::string sec, std::string key, Member m, Parse parse) {
  return {sec, key, [m](const RunConfig& c) { return std::string(to_string(std::invoke(m, c))); },
          [m, parse](RunConfig& c, const std::string& v) { std::invoke(m, c) = parse(trim(v)); }};
}

template <typename Member>
Field double_list_field(std::string sec, std::string key, Member m) {
  const std::string full = sec + "." + key;
  return {sec, key, [m](const RunConfig& c) { return join(std::invoke(m, c), [](double v) { return fmt(v); }); },
          [m, full](RunConfig& c, const std::string& v) {
            std::vector<double> out;
            for (const auto& item : split_list(v)) out.push_back(parse_double(full, item));
            std::invoke(m, c) = std::move(out);
          }};
}

template <typename Member>
Field size_list_field(std::string sec, std::string key, Member m) {
  const std::string full = sec + "." + key;
  return {sec, key,
          [m](const RunConfig& c) { return join(std::invoke(m, c), [](std::size_t v) { return fmt(std::uint64_t(v)); }); },
          [m, full](RunConfig& c, const std::string& v) {
            std::vector<std::size_t> out;
            for (const auto& item : split_list(v)) out.push_back(parse_u64(full, item));
            std::invoke(m, c) = std::move(out);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(size_field("run", "seed", [](auto& c) -> auto& { return c.seed; }));
    v.push_back(enum_field("run", "precision", [](auto& c) -> auto& { return c.precision; }, parse_precision));

    v.push_back(size_field("data", "samples", [](auto& c) -> auto& { return c.data.samples; }));
    v.push_back(double_field("data", "rician_fraction", [](auto& c) -> auto& { return c.data.rician_fraction; }));
    v.push_back(double_field("data", "k_factor", [](auto& c) -> auto& { return c.data.k_factor; }));
    v.push_back(enum_field("data", "mode", [](auto& c) -> auto& { return c.data.mode; }, parse_generator_mode));

    v.push_back({"model", "variant", [](const RunConfig& c) { return c.variant; },
                 [](RunConfig& c, const std::string& s) { c.variant = trim(s); }});
    v.push_back(size_field("model", "bits", [](auto& c) -> auto& { return c.model.bits; }));
    v.push_back(size_field("model", "height", [](auto& c) -> auto& { return c.model.encoder.height; }));
    v.push_back(size_field("model", "width", [](auto& c) -> auto& { return c.model.encoder.width; }));
    v.push_back(size_field("model", "latent", [](auto& c) -> auto& { return c.model.encoder.latent; }));
    v.push_back(double_field("model", "snr_min_db", [](auto& c) -> auto& { return c.model.snr.min_db; }));
    v.push_back(double_field("model", "snr_max_db", [](auto& c) -> auto& { return c.model.snr.max_db; }));

    v.push_back(size_field("encoder", "patch", [](auto& c) -> auto& { return c.model.encoder.patch; }));
    v.push_back(size_field("encoder", "stem_channels", [](auto& c) -> auto& { return c.model.encoder.stem_channels; }));
    v.push_back(size_field("encoder", "dim", [](auto& c) -> auto& { return c.model.encoder.dim; }));
    v.push_back(size_field("encoder", "depth", [](auto& c) -> auto& { return c.model.encoder.depth; }));
    v.push_back(size_field("encoder", "heads", [](auto& c) -> auto& { return c.model.encoder.heads; }));
    v.push_back(size_field("encoder", "prompt_tokens", [](auto& c) -> auto& { return c.model.encoder.prompt_tokens; }));
    v.push_back(size_field("encoder", "prompt_dim", [](auto& c) -> auto& { return c.model.encoder.prompt_dim; }));

    v.push_back(enum_field("decoder", "kind", [](auto& c) -> auto& { return c.model.decoder.kind; }, parse_decoder_kind));
    v.push_back(size_field("decoder", "channels", [](auto& c) -> auto& { return c.model.decoder.channels; }));
    v.push_back(size_field("decoder", "kernel", [](auto& c) -> auto& { return c.model.decoder.kernel; }));
    v.push_back(size_field("decoder", "expansion", [](auto& c) -> auto& { return c.model.decoder.expansion; }));
    v.push_back(size_field("decoder", "blocks", [](auto& c) -> auto& { return c.model.decoder.blocks; }));
    v.push_back(size_field("decoder", "heads", [](auto& c) -> auto& { return c.model.decoder.heads; }));

    v.push_back(size_field("train", "epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    v.push_back(enum_field("train", "epoch_mode", [](auto& c) -> auto& { return c.train.epoch_mode; }, parse_epoch_mode));
    v.push_back(size_field("train", "batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    v.push_back(double_field("train", "lr", [](auto& c) -> auto& { return c.train.lr; }));
    v.push_back(double_field("train", "lr_floor", [](auto& c) -> auto& { return c.train.lr_floor; }));
    v.push_back(double_list_field("train", "rates", [](auto& c) -> auto& { return c.train.rates; }));
    v.push_back(enum_field("train", "rate_mode", [](auto& c) -> auto& { return c.train.rate_mode; }, parse_rate_mode));
    v.push_back(double_field("train", "fixed_rate", [](auto& c) -> auto& { return c.train.fixed_rate; }));
    v.push_back(double_field("train", "snr_min_db", [](auto& c) -> auto& { return c.train.snr_min_db; }));
    v.push_back(double_field("train", "snr_max_db", [](auto& c) -> auto& { return c.train.snr_max_db; }));
    v.push_back(double_field("train", "rician_fraction", [](auto& c) -> auto& { return c.train.rician_fraction; }));
    v.push_back(double_field("train", "val_fraction", [](auto& c) -> auto& { return c.train.val_fraction; }));
    v.push_back(size_field("train", "val_every", [](auto& c) -> auto& { return c.train.val_every; }));
    v.push_back(bool_field("train", "noiseless", [](auto& c) -> auto& { return c.train.noiseless; }));

    v.push_back(enum_field("link", "mode", [](auto& c) -> auto& { return c.link.mode; }, parse_channel_mode));
    v.push_back(double_field("link", "gain", [](auto& c) -> auto& { return c.link.gain; }));
    v.push_back(double_field("link", "k_factor", [](auto& c) -> auto& { return c.link.k_factor; }));

    v.push_back(size_field("eval", "trials", [](auto& c) -> auto& { return c.eval.trials; }));
    v.push_back(size_field("eval", "test_samples", [](auto& c) -> auto& { return c.eval.test_samples; }));
    v.push_back(double_list_field("eval", "snr_list", [](auto& c) -> auto& { return c.eval.snr_list; }));
    v.push_back(double_list_field("eval", "rate_list", [](auto& c) -> auto& { return c.eval.rate_list; }));
    v.push_back(double_field("eval", "rate", [](auto& c) -> auto& { return c.eval.rate; }));

    v.push_back(size_field("experiment", "seeds", [](auto& c) -> auto& { return c.experiment.seeds; }));
    v.push_back(size_list_field("experiment", "n_list", [](auto& c) -> auto& { return c.experiment.n_list; }));
    v.push_back(bool_field("experiment", "train_if_missing", [](auto& c) -> auto& { return c.experiment.train_if_missing; }));
    v.push_back(bool_field("experiment", "plots", [](auto& c) -> auto& { return c.experiment.plots; }));
    return v;
  }();
  return f;
}

}  // namespace

void RunConfig::sync() {
  data.height = model.encoder.height;
  data.width = model.encoder.width;
  data.bits = model.bits;
  data.seed = seed;
  train.seed = seed;
  model = apply_variant(model, variant);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  link.validate();
  data.validate();
  if (eval.trials < 1) throw ConfigError("eval.trials must be at least 1");
  if (eval.test_samples < 1) throw ConfigError("eval.test_samples must be at least 1");
  if (eval.snr_list.empty() || eval.rate_list.empty()) throw ConfigError("eval sweep lists must not be empty");
  for (double r : eval.rate_list)
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("eval.rate_list entries must lie in (0, 1]");
  if (!(eval.rate > 0.0 && eval.rate <= 1.0)) throw ConfigError("eval.rate must lie in (0, 1]");
  if (experiment.seeds < 1) throw ConfigError("experiment.seeds must be at least 1");
  if (experiment.n_list.empty()) throw ConfigError("experiment.n_list must not be empty");
  for (auto n : experiment.n_list) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(n))));
    if (n == 0 || side * side != n) {
      throw ConfigError("experiment.n_list entry " + std::to_string(n) + " is not a square element count");
    }
  }
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' is outside any [section]");
    }
    bool known = false;
    for (const auto& f : fields()) known = known || f.section == section;
    if (!known) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      const Field* match = nullptr;
      for (const auto& f : fields())
        if (f.section == section && f.key == key) match = &f;
      if (!match) throw ConfigError("unknown config key '" + section + "." + key + "'");
      match->set(base, value.get_value<std::string>());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  const auto bytes = read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), std::move(base));
}

std::string to_config_text(const RunConfig& c) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(to_config_text(c)); }

}  // namespace psic
