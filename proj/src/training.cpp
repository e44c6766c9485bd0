#include "psic/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "psic/errors.hpp"
#include "psic/log.hpp"
#include "psic/ops.hpp"
#include "psic/parallel.hpp"

namespace psic {

std::string_view to_string(RateMode m) { return m == RateMode::kFixed ? "fixed" : "uniform"; }

RateMode parse_rate_mode(std::string_view s) {
  if (s == "fixed") return RateMode::kFixed;
  if (s == "uniform") return RateMode::kUniform;
  throw ConfigError("unknown rate mode '" + std::string(s) + "' (expected fixed or uniform)");
}

std::string_view to_string(EpochMode m) { return m == EpochMode::kStep ? "step" : "pass"; }

EpochMode parse_epoch_mode(std::string_view s) {
  if (s == "step") return EpochMode::kStep;
  if (s == "pass") return EpochMode::kPass;
  throw ConfigError("unknown epoch mode '" + std::string(s) + "' (expected step or pass)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(lr >= 0.0) || !(lr_floor >= 0.0) || !std::isfinite(lr) || !std::isfinite(lr_floor)) {
    throw ConfigError("train.lr and train.lr_floor must be finite and nonnegative");
  }
  if (rates.empty()) throw ConfigError("train.rates must not be empty");
  for (double r : rates)
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("train.rates entries must lie in (0, 1]");
  if (!(fixed_rate > 0.0 && fixed_rate <= 1.0)) throw ConfigError("train.fixed_rate must lie in (0, 1]");
  if (!(snr_max_db >= snr_min_db) || !std::isfinite(snr_min_db) || !std::isfinite(snr_max_db)) {
    throw ConfigError("train snr range must be finite with max >= min");
  }
  if (!(rician_fraction >= 0.0 && rician_fraction <= 1.0)) {
    throw ConfigError("train.rician_fraction must lie in [0, 1]");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must lie in [0, 1)");
}

double nmse_db(const std::vector<double>& linear) {
  if (linear.empty()) throw UsageError("nmse_db needs at least one trial");
  double sum = 0.0;
  for (double v : linear) {
    if (!(v >= 0.0)) throw DomainError("nmse_db: NMSE values must be nonnegative");
    sum += v;
  }
  return 10.0 * std::log10(sum / double(linear.size()));
}

double cosine_lr(double epoch, const TrainConfig& cfg) {
  const double frac = std::clamp(epoch / double(cfg.epochs), 0.0, 1.0);
  return cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
AdamState<T> make_adam_state(const ParamStore<T>& params) {
  AdamState<T> s;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.value.shape());
    s.v.emplace_back(e.value.shape());
  }
  return s;
}

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& s, double lr) {
  auto& entries = params.entries();
  if (s.m.size() != entries.size() || s.v.size() != entries.size()) {
    throw DimensionError("adam_step: optimizer state holds " + std::to_string(s.m.size()) +
                         " tensors for " + std::to_string(entries.size()) + " parameters");
  }
  ++s.step;
  const double b1 = AdamState<T>::kBeta1, b2 = AdamState<T>::kBeta2, eps = AdamState<T>::kEps;
  const double c1 = 1.0 - std::pow(b1, double(s.step)), c2 = 1.0 - std::pow(b2, double(s.step));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    auto& m = s.m[i];
    auto& v = s.v[i];
    if (m.shape() != e.value.shape() || v.shape() != e.value.shape() || e.grad.shape() != e.value.shape()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + e.name);
    }
    for (std::size_t j = 0; j < e.value.numel(); ++j) {
      const double g = e.grad[j];
      const double mj = b1 * double(m[j]) + (1.0 - b1) * g;
      const double vj = b2 * double(v[j]) + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + eps);
      e.value[j] = static_cast<T>(double(e.value[j]) - update);
    }
  }
}

SideInfo sample_context(const TrainConfig& cfg, RngStream& rng) {
  SideInfo s;
  s.snr_db = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
  s.chan_type = rng.uniform() < cfg.rician_fraction ? ChannelType::kRician : ChannelType::kRayleigh;
  s.rate = cfg.rate_mode == RateMode::kFixed ? cfg.fixed_rate : cfg.rates[rng.uniform_index(cfg.rates.size())];
  return s;
}

DataSplit split_dataset(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng(seed, "split");
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * double(n)));
  DataSplit s;
  s.val.assign(perm.begin(), perm.begin() + n_val);
  s.train.assign(perm.begin() + n_val, perm.end());
  if (s.train.empty()) throw ConfigError("validation split leaves no training samples");
  std::sort(s.val.begin(), s.val.end());
  return s;
}

template <typename T>
TrainState<T> initial_state(const ModelConfig& model, const TrainConfig& cfg) {
  TrainState<T> s{init_codec<T>(model, cfg.seed), {}, RngStream(cfg.seed, "train").state()};
  s.opt = make_adam_state(s.codec.params);
  return s;
}

namespace {

int type_index(ChannelType t) { return t == ChannelType::kRayleigh ? 0 : 1; }

template <typename T>
void silence_link(Batch<T>& batch) {
  for (auto& d : batch.links) std::fill(d.noise.begin(), d.noise.end(), 0.0);
}

template <typename T>
bool grads_finite(const ParamStore<T>& params) {
  for (const auto& e : params.entries())
    if (!e.grad.all_finite()) return false;
  return true;
}

}  // namespace

template <typename T>
TrainResult<T> train(const std::vector<Sample>& dataset, const TrainConfig& cfg, const LinkConfig& link,
                     TrainState<T> state, const TrainHooks& hooks) {
  cfg.validate();
  link.validate();
  if (dataset.empty()) throw UsageError("training needs a nonempty dataset");
  const ModelConfig& model = state.codec.config;
  const DataSplit split = split_dataset(dataset.size(), cfg.val_fraction, cfg.seed);
  std::vector<std::size_t> pools[2];
  for (auto i : split.train) pools[type_index(dataset[i].type)].push_back(i);

  RngStream rng(cfg.seed, "train");
  rng.set_state(state.rng);
  auto& params = state.codec.params;

  TrainResult<T> result;
  TrainState<T> good = state;
  const std::size_t last = hooks.stop_epoch ? std::min(hooks.stop_epoch, cfg.epochs) : cfg.epochs;
  for (std::size_t epoch = state.epoch; epoch < last; ++epoch) {
    const double lr = cosine_lr(double(epoch), cfg);

    // Sample indices and contexts for every batch of this epoch.
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::vector<SideInfo>> sides;
    if (cfg.epoch_mode == EpochMode::kStep) {
      std::vector<std::size_t> idx;
      std::vector<SideInfo> side;
      for (std::size_t j = 0; j < cfg.batch_size; ++j) {
        side.push_back(sample_context(cfg, rng));
        const auto& pool = pools[type_index(side.back().chan_type)];
        const auto& from = pool.empty() ? split.train : pool;
        idx.push_back(from[rng.uniform_index(from.size())]);
      }
      batches.push_back(std::move(idx));
      sides.push_back(std::move(side));
    } else {
      auto order = split.train;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
        std::vector<SideInfo> side;
        for (auto i : idx) {
          side.push_back(sample_context(cfg, rng));
          side.back().chan_type = dataset[i].type;
        }
        batches.push_back(std::move(idx));
        sides.push_back(std::move(side));
      }
    }

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      std::vector<const PsiMap*> maps;
      for (auto i : batches[bi]) maps.push_back(&dataset[i].map);
      auto batch = make_batch<T>(maps, sides[bi], model, link, rng);
      if (cfg.noiseless) silence_link(batch);

      Graph<T> g;
      Binder<T> b(g, params, true);
      params.zero_grad();
      std::size_t excluded = 0;
      double value = 0.0;
      try {
        auto loss = nmse_loss(forward(b, model, batch).prediction, batch.target, &excluded);
        value = loss.value().item();
        if (!std::isfinite(value)) {
          result.diverged = true;
          result.divergence = "non-finite loss at epoch " + std::to_string(epoch);
        } else {
          g.backward(loss);
          if (!grads_finite(params)) {
            result.diverged = true;
            result.divergence = "non-finite gradient at epoch " + std::to_string(epoch);
          }
        }
      } catch (const NumericError& e) {
        result.diverged = true;
        result.divergence = "epoch " + std::to_string(epoch) + ": " + e.what();
      }
      if (excluded) warn(std::to_string(excluded) + " zero-norm target(s) excluded from a training batch");
      if (result.diverged) {
        result.state = std::move(good);
        return result;
      }
      adam_step(params, state.opt, lr);
      loss_sum += value;
    }

    state.epoch = epoch + 1;
    state.rng = rng.state();
    TrainLogRow row;
    row.epoch = epoch;
    row.step = state.opt.step;
    row.lr = lr;
    row.train_nmse = loss_sum / double(batches.size());
    const bool validate_now = state.epoch == cfg.epochs || (cfg.val_every > 0 && state.epoch % cfg.val_every == 0);
    if (validate_now && !split.val.empty()) {
      try {
        row.val_nmse = validation_nmse(state.codec, dataset, split.val, cfg, link);
      } catch (const NumericError&) {
        row.val_nmse = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(row.val_nmse)) {
        result.diverged = true;
        result.divergence = "non-finite validation NMSE at epoch " + std::to_string(epoch);
        result.state = std::move(good);
        return result;
      }
      state.best_val = std::min(state.best_val, row.val_nmse);
    }
    result.log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
    good = state;
  }
  result.state = std::move(state);
  return result;
}

template <typename T>
TrainResult<T> train(const std::vector<Sample>& dataset, const ModelConfig& model, const TrainConfig& cfg,
                     const LinkConfig& link, const TrainHooks& hooks) {
  return train<T>(dataset, cfg, link, initial_state<T>(model, cfg), hooks);
}

template <typename T>
double validation_nmse(Codec<T>& codec, const std::vector<Sample>& dataset,
                       const std::vector<std::size_t>& indices, const TrainConfig& cfg, const LinkConfig& link) {
  if (indices.empty()) throw UsageError("validation_nmse needs at least one sample");
  const std::size_t chunk = std::max<std::size_t>(cfg.batch_size, 1);
  const std::size_t n_chunks = (indices.size() + chunk - 1) / chunk;
  std::vector<double> nmse(indices.size());
  parallel_for(n_chunks, [&](std::size_t c) {
    const std::size_t start = c * chunk, end = std::min(indices.size(), start + chunk);
    std::vector<const PsiMap*> maps;
    std::vector<SideInfo> side;
    std::vector<LinkDraw> draws;
    for (std::size_t j = start; j < end; ++j) {
      const std::size_t i = indices[j];
      RngStream rng(cfg.seed, "val/" + std::to_string(i));
      SideInfo s = sample_context(cfg, rng);
      s.chan_type = dataset[i].type;
      if (cfg.rate_mode == RateMode::kUniform) s.rate = cfg.rates[j % cfg.rates.size()];
      maps.push_back(&dataset[i].map);
      side.push_back(s);
      LinkConfig lc = link;
      lc.snr_db = s.snr_db;
      draws.push_back(draw_link(prefix_mask(s.rate, codec.config.latent()).k, lc, rng));
    }
    RngStream unused(cfg.seed, "val/batch");
    auto batch = make_batch<T>(maps, side, codec.config, link, unused);
    batch.links = std::move(draws);
    if (cfg.noiseless) silence_link(batch);
    Graph<T> g;
    Binder<T> b(g, codec.params, false);
    auto pred = forward(b, codec.config, batch).prediction.value();
    auto per = per_sample_nmse(pred, batch.target);
    std::copy(per.begin(), per.end(), nmse.begin() + start);
  });
  double sum = 0.0;
  std::size_t valid = 0;
  for (double v : nmse)
    if (!std::isnan(v)) {
      sum += v;
      ++valid;
    }
  return valid ? sum / double(valid) : std::numeric_limits<double>::quiet_NaN();
}

template <typename T>
Tensor<T> infer(const PsiMap& map, const SideInfo& side, Codec<T>& codec, const LinkConfig& link,
                RngStream& rng) {
  auto batch = make_batch<T>({&map}, {side}, codec.config, link, rng);
  Graph<T> g;
  Binder<T> b(g, codec.params, false);
  auto pred = forward(b, codec.config, batch).prediction.value();
  return pred.reshaped({codec.config.height(), codec.config.width()});
}

template <typename T>
std::vector<double> evaluate_trials(Codec<T>& codec, const std::vector<const PsiMap*>& maps,
                                    const SideInfo& side, const LinkConfig& link, std::size_t trials,
                                    std::uint64_t seed, std::string_view label, bool noiseless) {
  if (maps.empty()) throw UsageError("evaluation needs at least one test map");
  if (trials < 1) throw ConfigError("evaluation needs at least one trial");
  const std::size_t chunk = 50;
  const std::size_t n_chunks = (trials + chunk - 1) / chunk;
  const std::size_t k = prefix_mask(side.rate, codec.config.latent()).k;
  std::vector<double> out(trials);
  parallel_for(n_chunks, [&](std::size_t c) {
    const std::size_t start = c * chunk, end = std::min(trials, start + chunk);
    std::vector<const PsiMap*> batch_maps;
    std::vector<LinkDraw> draws;
    LinkConfig lc = link;
    lc.snr_db = side.snr_db;
    for (std::size_t t = start; t < end; ++t) {
      batch_maps.push_back(maps[t % maps.size()]);
      RngStream rng(seed, std::string(label) + "/trial/" + std::to_string(t));
      draws.push_back(draw_link(k, lc, rng));
    }
    RngStream unused(seed, "eval/batch");
    auto batch = make_batch<T>(batch_maps, std::vector<SideInfo>(end - start, side), codec.config, link, unused);
    batch.links = std::move(draws);
    if (noiseless) silence_link(batch);
    Graph<T> g;
    Binder<T> b(g, codec.params, false);
    auto per = per_sample_nmse(forward(b, codec.config, batch).prediction.value(), batch.target);
    std::copy(per.begin(), per.end(), out.begin() + start);
  });
  return out;
}

template <typename T>
CheckpointData to_checkpoint(const TrainState<T>& s, const std::string& config_text) {
  CheckpointData c;
  c.config_text = config_text;
  const auto& entries = s.codec.params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    c.params.push_back({entries[i].name, entries[i].value.template cast<float>()});
    c.optimizer.push_back({"adam.m/" + entries[i].name, s.opt.m[i].template cast<float>()});
    c.optimizer.push_back({"adam.v/" + entries[i].name, s.opt.v[i].template cast<float>()});
  }
  c.rng = s.rng;
  c.step = s.opt.step;
  c.epoch = s.epoch;
  c.best_val = s.best_val;
  return c;
}

template <typename T>
TrainState<T> from_checkpoint(const CheckpointData& data, const ModelConfig& model) {
  TrainState<T> s{init_codec<T>(model, 0), {}, data.rng, std::size_t(data.epoch), data.best_val};
  auto& entries = s.codec.params.entries();
  if (data.params.size() != entries.size() || data.optimizer.size() != 2 * entries.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(data.params.size()) + " tensors, model expects " +
                      std::to_string(entries.size()));
  }
  auto check = [](const NamedTensor& t, const std::string& name, const Shape& shape) {
    if (t.name != name || t.value.shape() != shape) {
      throw ConfigError("checkpoint tensor '" + t.name + "' " + shape_str(t.value.shape()) +
                        " does not match model parameter '" + name + "' " + shape_str(shape));
    }
  };
  s.opt.step = data.step;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    check(data.params[i], e.name, e.value.shape());
    check(data.optimizer[2 * i], "adam.m/" + e.name, e.value.shape());
    check(data.optimizer[2 * i + 1], "adam.v/" + e.name, e.value.shape());
    e.value = data.params[i].value.template cast<T>();
    s.opt.m.push_back(data.optimizer[2 * i].value.template cast<T>());
    s.opt.v.push_back(data.optimizer[2 * i + 1].value.template cast<T>());
  }
  return s;
}

#define PSIC_INSTANTIATE_TRAINING(T)                                                             \
  template AdamState<T> make_adam_state(const ParamStore<T>&);                                   \
  template void adam_step(ParamStore<T>&, AdamState<T>&, double);                                \
  template TrainState<T> initial_state<T>(const ModelConfig&, const TrainConfig&);               \
  template TrainResult<T> train(const std::vector<Sample>&, const TrainConfig&, const LinkConfig&, \
                                TrainState<T>, const TrainHooks&);                               \
  template TrainResult<T> train<T>(const std::vector<Sample>&, const ModelConfig&,               \
                                   const TrainConfig&, const LinkConfig&, const TrainHooks&);    \
  template double validation_nmse(Codec<T>&, const std::vector<Sample>&,                         \
                                  const std::vector<std::size_t>&, const TrainConfig&,           \
                                  const LinkConfig&);                                            \
  template Tensor<T> infer(const PsiMap&, const SideInfo&, Codec<T>&, const LinkConfig&, RngStream&); \
  template std::vector<double> evaluate_trials(Codec<T>&, const std::vector<const PsiMap*>&,     \
                                               const SideInfo&, const LinkConfig&, std::size_t,  \
                                               std::uint64_t, std::string_view, bool);           \
  template CheckpointData to_checkpoint(const TrainState<T>&, const std::string&);               \
  template TrainState<T> from_checkpoint<T>(const CheckpointData&, const ModelConfig&);

PSIC_INSTANTIATE_TRAINING(float)
PSIC_INSTANTIATE_TRAINING(double)

}  // namespace psic
