#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "psic/encoder.hpp"
#include "psic/gradcheck.hpp"
#include "psic/log.hpp"
#include "psic/model.hpp"
#include "psic/ops.hpp"
#include "test_util.hpp"

using namespace psic;
using psic::testing::random_tensor;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.stem_channels = 4;
  c.dim = 8;
  c.depth = 2;
  c.heads = 2;
  c.prompt_tokens = 2;
  c.prompt_dim = 6;
  c.latent = 5;
  return c;
}

void randomize(ParamStore<double>& store, std::uint64_t seed, double scale = 0.5) {
  RngStream rng(seed, "randomize");
  for (auto& e : store.entries())
    for (auto& v : e.value.data()) v = rng.uniform(-scale, scale);
}

Tensor<double> input_batch(const EncoderConfig& c, std::size_t B, std::uint64_t seed) {
  RngStream rng(seed, "inputs");
  return random_tensor({B, 1, c.height, c.width}, rng, 0.0, 1.0);
}

Tensor<double> run_encode(ParamStore<double>& store, const EncoderConfig& cfg,
                          const Tensor<double>& x, const std::vector<SideInfo>& side,
                          EncodeOptions<double> opts = {}) {
  Graph<double> g;
  Binder<double> b(g, store, false);
  auto ctx = g.constant(context_batch<double>(side, SnrRange{}));
  return encode(b, cfg, g.constant(x), ctx, opts).value();
}

double sample_variance(const double* p, std::size_t n) {
  double m = 0, v = 0;
  for (std::size_t i = 0; i < n; ++i) m += p[i];
  m /= double(n);
  for (std::size_t i = 0; i < n; ++i) v += (p[i] - m) * (p[i] - m);
  return v / double(n - 1);
}

}  // namespace

TEST_CASE("encode_side_info examples") {
  SnrRange range{5.0, 20.0};
  auto c = encode_side_info({5.0, ChannelType::kRayleigh, 1.0}, range);
  CHECK(c == std::array<double, 4>{0.0, 1.0, 1.0, 0.0});
  c = encode_side_info({12.5, ChannelType::kRician, 0.3}, range);
  CHECK(c[0] == doctest::Approx(0.5));
  CHECK(c[1] == 0.3);
  CHECK(c[2] + c[3] == 1.0);
  CHECK(c[3] == 1.0);

  set_warnings_silenced(true);
  const auto before = warning_count();
  c = encode_side_info({35.0, ChannelType::kRayleigh, 0.5}, range);
  CHECK(c[0] == 1.0);
  CHECK(warning_count() == before + 1);
  c = encode_side_info({-3.0, ChannelType::kRayleigh, 0.5}, range);
  CHECK(c[0] == 0.0);
  set_warnings_silenced(false);
  CHECK_THROWS_AS(encode_side_info({10.0, ChannelType::kRayleigh, 0.0}, range), DomainError);
}

TEST_CASE("prompt descriptors") {
  auto cfg = tiny_encoder();
  ParamStore<double> store;
  init_encoder_params(store, cfg, 1);
  for (auto& e : store.entries())
    if (e.name.rfind("prompt.", 0) == 0) e.value.fill(0.0);
  Graph<double> g;
  Binder<double> b(g, store, false);
  auto ctx = g.constant(context_batch<double>({{7.0, ChannelType::kRician, 0.5}}, SnrRange{}));
  auto pd = prompt_descriptors(b, ctx);
  for (auto v : pd.p_f.value().data()) CHECK(v == 0.0);
  for (auto v : pd.p_s.value().data()) CHECK(v == 0.0);

  randomize(store, 3);
  auto a = prompt_descriptors(b, ctx);
  auto a2 = prompt_descriptors(b, ctx);
  CHECK(a.p_f.value() == a2.p_f.value());
  CHECK(a.p_s.value() == a2.p_s.value());
}

TEST_CASE("prompt descriptor hand calculation") {
  // d_p = 2, second layer identity: p_f = relu(c W1 + b1).
  ParamStore<double> store;
  store.add("prompt.f.l1.w", Tensor<double>({4, 2}, {1.0, -1.0, 2.0, 0.5, 0.0, 0.0, 0.0, 0.0}));
  store.add("prompt.f.l1.b", Tensor<double>({2}, {0.1, -0.2}));
  store.add("prompt.f.l2.w", Tensor<double>({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  store.add("prompt.f.l2.b", Tensor<double>({2}, {0.0, 0.0}));
  Graph<double> g;
  Binder<double> b(g, store, false);
  auto ctx = g.constant(Tensor<double>({1, 4}, {0.4, 0.5, 1.0, 0.0}));
  auto pd = prompt_descriptors(b, ctx);
  // [0.4·1 + 0.5·2 + 0.1, 0.4·(−1) + 0.5·0.5 − 0.2] = [1.5, −0.35] → relu
  CHECK(pd.p_f.value()[0] == doctest::Approx(1.5));
  CHECK(pd.p_f.value()[1] == 0.0);
}

TEST_CASE("FiLM modulation examples") {
  RngStream rng(4, "film");
  Graph<double> g;
  auto h = g.constant(random_tensor({2, 3, 4, 4}, rng, -2, 2));
  auto gamma = g.constant(random_tensor({2, 3}, rng));
  auto beta = g.constant(random_tensor({2, 3}, rng));
  auto closed = film(h, gamma, beta, g.constant(Tensor<double>({2, 1}, 0.0)));
  CHECK(closed.value() == h.value());
  auto zeros = g.constant(Tensor<double>({2, 3}));
  auto neutral = film(h, zeros, zeros, g.constant(random_tensor({2, 1}, rng, 0, 1)));
  CHECK(neutral.value() == h.value());

  auto ones = g.constant(Tensor<double>({2, 3}, 1.0));
  auto doubled = film(h, ones, zeros, g.constant(Tensor<double>({2, 1}, 1.0)));
  for (std::size_t c = 0; c < 6; ++c) {
    const double vin = sample_variance(h.value().ptr() + c * 16, 16);
    const double vout = sample_variance(doubled.value().ptr() + c * 16, 16);
    CHECK(std::abs(vout / vin - 4.0) < 1e-10);
  }
  CHECK_THROWS_AS(film(h, g.constant(Tensor<double>({2, 2})), zeros, closed), DimensionError);
}

TEST_CASE("soft prompt tokens") {
  for (std::size_t P = 1; P <= 8; ++P)
    for (std::size_t d : {16u, 32u, 64u}) {
      ParamStore<double> store;
      store.add_zeros("prompt.soft.w", {5, P * d});
      store.add_zeros("prompt.soft.b", {P * d});
      Graph<double> g;
      Binder<double> b(g, store, false);
      auto s = soft_prompt_tokens(b, g.constant(Tensor<double>({3, 5}, 1.0)), P, d);
      CHECK(s.shape() == Shape{3, P, d});
      for (auto v : s.value().data()) CHECK(v == 0.0);
    }
  // P = 1 with an identity projection reproduces p_s.
  ParamStore<double> store;
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  store.add("prompt.soft.w", eye);
  store.add_zeros("prompt.soft.b", {4});
  Graph<double> g;
  Binder<double> b(g, store, false);
  Tensor<double> ps({1, 4}, {0.3, -1.0, 2.0, 0.5});
  auto s = soft_prompt_tokens(b, g.constant(ps), 1, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(s.value()[i] == ps[i]);
}

TEST_CASE("stem token counts and gate-closed equivalence") {
  for (auto [hw, patch] : {std::pair<std::size_t, std::size_t>{4, 1}, {8, 2}}) {
    auto cfg = tiny_encoder();
    cfg.height = cfg.width = hw;
    cfg.patch = patch;
    ParamStore<double> store;
    init_encoder_params(store, cfg, 2);
    randomize(store, 9);
    Graph<double> g;
    Binder<double> b(g, store, false);
    auto x = g.constant(input_batch(cfg, 2, 5));
    auto ctx = g.constant(context_batch<double>(
        {{8.0, ChannelType::kRayleigh, 0.5}, {15.0, ChannelType::kRician, 0.9}}, SnrRange{}));
    auto pd = prompt_descriptors(b, ctx);
    auto fi = film_inputs(b, pd.p_f, 0.0);
    auto with_gate = embed_stem(b, cfg, x, &fi);
    auto plain = embed_stem(b, cfg, x, static_cast<const FilmInputs<double>*>(nullptr));
    CHECK(with_gate.shape() == Shape{2, 16, cfg.dim});
    CHECK(with_gate.value() == plain.value());
  }
  auto cfg = tiny_encoder();
  cfg.height = 6;
  cfg.patch = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("mha block examples") {
  // All-zero weights: both residual branches vanish.
  ParamStore<double> store;
  init_mha_block_params(store, "b.", 4, 1);
  for (auto& e : store.entries()) e.value.fill(0.0);
  RngStream rng(6, "mha");
  auto x0 = random_tensor({2, 3, 4}, rng);
  {
    Graph<double> g;
    Binder<double> b(g, store, false);
    CHECK(mha_block(b, "b.", g.constant(x0), 2).value() == x0);
  }
  // A single token attends to itself with weight exactly 1.
  auto q = random_tensor({1, 1, 4}, rng), k = random_tensor({1, 1, 4}, rng);
  auto p = attention_probabilities(q, k, 1);
  CHECK(p.numel() == 1);
  CHECK(p[0] == 1.0);
}

TEST_CASE("two-token attention hand calculation") {
  // d = 2, one head, q = k = v = x.
  Tensor<double> x({1, 2, 2}, {1.0, 0.0, 0.0, 2.0});
  Graph<double> g;
  auto v = g.constant(x);
  auto out = attention(v, v, v, 1).value();
  const double s = 1.0 / std::sqrt(2.0);
  // Row 0 logits: [1·s, 0]; row 1 logits: [0, 4·s].
  const double a0 = std::exp(s) / (std::exp(s) + 1.0);
  const double a1 = 1.0 / (1.0 + std::exp(4 * s));
  CHECK(std::abs(out[0] - a0 * 1.0) < 1e-6);
  CHECK(std::abs(out[1] - (1 - a0) * 2.0) < 1e-6);
  CHECK(std::abs(out[2] - a1 * 1.0) < 1e-6);
  CHECK(std::abs(out[3] - (1 - a1) * 2.0) < 1e-6);
}

TEST_CASE("encode shape contract over a smoke grid") {
  for (std::size_t hw : {4u, 8u})
    for (std::size_t patch : {1u, 2u})
      for (std::size_t d : {8u, 16u})
        for (std::size_t L : {1u, 2u})
          for (std::size_t P : {1u, 4u, 8u}) {
            auto cfg = tiny_encoder();
            cfg.height = cfg.width = hw;
            cfg.patch = patch;
            cfg.dim = d;
            cfg.depth = L;
            cfg.prompt_tokens = P;
            ParamStore<double> store;
            init_encoder_params(store, cfg, 3);
            auto z = run_encode(store, cfg, input_batch(cfg, 2, 1),
                                {{10.0, ChannelType::kRayleigh, 0.5}, {6.0, ChannelType::kRician, 1.0}});
            CHECK(z.shape() == Shape{2, cfg.latent});
          }
}

TEST_CASE("prompt path is live") {
  auto cfg = tiny_encoder();
  ParamStore<double> store;
  init_encoder_params(store, cfg, 4);
  randomize(store, 5);
  auto x = input_batch(cfg, 1, 2);
  auto za = run_encode(store, cfg, x, {{6.0, ChannelType::kRayleigh, 0.3}});
  auto zb = run_encode(store, cfg, x, {{18.0, ChannelType::kRician, 0.9}});
  double diff = 0;
  for (std::size_t i = 0; i < za.numel(); ++i) diff += (za[i] - zb[i]) * (za[i] - zb[i]);
  CHECK(std::sqrt(diff) > 0.0);
}

TEST_CASE("closed gate without prompt tokens equals the unconditioned encoder") {
  auto cfg = tiny_encoder();
  cfg.soft_prompt = false;  // P = 0
  ParamStore<double> store;
  init_encoder_params(store, cfg, 6);
  randomize(store, 7);
  auto plain_cfg = cfg;
  plain_cfg.film = false;
  auto x = input_batch(cfg, 3, 3);
  std::vector<SideInfo> side{{5.0, ChannelType::kRayleigh, 0.1},
                             {12.0, ChannelType::kRician, 0.5},
                             {20.0, ChannelType::kRician, 1.0}};
  EncodeOptions<double> closed;
  closed.gate_override = 0.0;
  auto conditioned = run_encode(store, cfg, x, side, closed);
  auto plain = run_encode(store, plain_cfg, x, side);
  for (std::size_t i = 0; i < plain.numel(); ++i) CHECK(std::abs(conditioned[i] - plain[i]) < 1e-12);
}

TEST_CASE("prompt tokens extend the first block sequence and attention rows normalize") {
  auto cfg = tiny_encoder();
  cfg.prompt_tokens = 3;
  ParamStore<double> store;
  init_encoder_params(store, cfg, 8);
  randomize(store, 8, 1.0);
  EncoderTrace<double> trace;
  EncodeOptions<double> opts;
  opts.trace = &trace;
  run_encode(store, cfg, input_batch(cfg, 2, 4),
             {{9.0, ChannelType::kRayleigh, 0.7}, {11.0, ChannelType::kRician, 0.3}}, opts);
  REQUIRE(trace.block_input_shapes.size() == cfg.depth);
  CHECK(trace.block_input_shapes[0] == Shape{2, cfg.tokens() + 3, cfg.dim});
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    auto p = attention_probabilities(trace.block_queries[l], trace.block_keys[l], cfg.heads);
    const std::size_t Tn = cfg.tokens() + 3;
    for (std::size_t r = 0; r < p.numel() / Tn; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < Tn; ++j) s += p[r * Tn + j];
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  for (auto v : trace.gate.data()) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("encoder gradients for every parameter group") {
  auto cfg = tiny_encoder();
  ParamStore<double> store;
  init_encoder_params(store, cfg, 10);
  randomize(store, 11);
  const auto x = input_batch(cfg, 2, 6);
  const std::vector<SideInfo> side{{7.0, ChannelType::kRayleigh, 0.5},
                                   {14.0, ChannelType::kRician, 0.9}};
  RngStream rng(12, "proj");
  const auto w = random_tensor({2, cfg.latent}, rng);
  auto reports = check_param_gradients(
      store,
      [&](Binder<double>& b) {
        auto& g = b.graph();
        auto ctx = g.constant(context_batch<double>(side, SnrRange{}));
        auto z = encode(b, cfg, g.constant(x), ctx);
        return sum(mul_const(z, w));
      },
      12, 13);
  for (const auto& r : reports) {
    INFO(r.name << " rel " << r.result.max_rel_error);
    CHECK(r.result.passed);
  }
}

TEST_CASE("encoder rejects inconsistent inputs") {
  auto cfg = tiny_encoder();
  ParamStore<double> store;
  init_encoder_params(store, cfg, 1);
  auto other = cfg;
  other.height = other.width = 8;
  CHECK_THROWS_AS(run_encode(store, other, input_batch(other, 1, 1), {{}}), ConfigError);
  auto bad = cfg;
  bad.prompt_tokens = 9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
