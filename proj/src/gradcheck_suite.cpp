#include "psic/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "psic/ops.hpp"

namespace psic {

namespace {

Tensor<double> random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double project_loss(const OpBuilder& op, const std::vector<Tensor<double>>& inputs, const Tensor<double>& weights,
                    std::vector<Tensor<double>>* grads) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(g.leaf(t, true));
  auto y = op(g, vars);
  auto loss = sum(mul_const(y, weights.reshaped(y.shape())));
  if (grads) {
    g.backward(loss);
    grads->clear();
    for (const auto& v : vars) {
      const auto& gr = g.grad(v);
      grads->push_back(gr.empty() ? Tensor<double>(v.shape()) : gr);
    }
  }
  return loss.value().item();
}

}  // namespace

GradCheckResult check_op_gradient(const OpBuilder& op, const std::vector<Tensor<double>>& inputs,
                                  std::uint64_t seed, double h) {
  Graph<double> probe;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(probe.leaf(t, false));
  const auto out_shape = op(probe, vars).shape();
  RngStream rng(seed, "gradcheck/weights");
  const auto weights = random_tensor(out_shape, rng);

  std::vector<Tensor<double>> analytic;
  project_loss(op, inputs, weights, &analytic);

  GradCheckResult worst;
  bool all_passed = true;
  double max_abs = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const Tensor<double>& theta) {
      auto perturbed = inputs;
      perturbed[i] = theta;
      return project_loss(op, perturbed, weights, nullptr);
    };
    const auto numeric = finite_difference_gradient(f, inputs[i], h);
    const auto r = compare_gradients(analytic[i], numeric);
    if (r.max_rel_error >= worst.max_rel_error) worst = r;
    all_passed = all_passed && r.passed;
    max_abs = std::max(max_abs, r.max_abs_error);
  }
  worst.passed = all_passed;
  worst.max_abs_error = max_abs;
  return worst;
}

std::vector<GradCheckEntry> op_gradchecks(std::uint64_t seed) {
  RngStream rng(seed, "gradcheck/ops");
  std::vector<GradCheckEntry> out;
  auto check = [&](const std::string& name, const OpBuilder& op, const std::vector<Tensor<double>>& in) {
    std::size_t n = 0;
    for (const auto& t : in) n += t.numel();
    out.push_back({name, n, check_op_gradient(op, in, seed), {}});
  };
  using V = std::vector<Var<double>>;
  check("dense", [](Graph<double>&, const V& v) { return dense(v[0], v[1], v[2]); },
        {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)});
  check("softmax_rows", [](Graph<double>&, const V& v) { return softmax_rows(v[0]); },
        {random_tensor({3, 5}, rng, -3, 3)});
  check("layer_norm", [](Graph<double>&, const V& v) { return layer_norm(v[0], v[1], v[2]); },
        {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
  for (auto [kind, kname] : {std::pair{ActivationKind::kGelu, "gelu"}, std::pair{ActivationKind::kSigmoid, "sigmoid"},
                             std::pair{ActivationKind::kRelu, "relu"}}) {
    auto x = random_tensor({10}, rng, -2, 2);
    for (auto& v : x.data())
      if (std::abs(v) < 0.05) v = 0.3;  // keep relu away from its kink
    check(std::string("activation/") + kname,
          [kind](Graph<double>&, const V& v) { return activation(v[0], kind); }, {x});
  }
  check("conv2d", [](Graph<double>&, const V& v) { return conv2d(v[0], v[1], v[2], 2, 1); },
        {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
  check("depthwise_conv1d", [](Graph<double>&, const V& v) { return depthwise_conv1d(v[0], v[1], v[2]); },
        {random_tensor({2, 6, 3}, rng), random_tensor({3, 5}, rng), random_tensor({3}, rng)});
  check("film", [](Graph<double>&, const V& v) { return film(v[0], v[1], v[2], v[3]); },
        {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng),
         random_tensor({2, 1}, rng, 0.1, 0.9)});
  check("film_tokens", [](Graph<double>&, const V& v) { return film_tokens(v[0], v[1], v[2], v[3]); },
        {random_tensor({2, 4, 3}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng),
         random_tensor({2, 1}, rng, 0.1, 0.9)});
  check("attention", [](Graph<double>&, const V& v) { return attention(v[0], v[1], v[2], 2); },
        {random_tensor({2, 5, 4}, rng), random_tensor({2, 5, 4}, rng), random_tensor({2, 5, 4}, rng)});
  check("gated_activation", [](Graph<double>&, const V& v) { return gated_activation(v[0]); },
        {random_tensor({3, 8}, rng, -2, 2)});
  check("tokens/concat/slice",
        [](Graph<double>&, const V& v) {
          auto tok = channels_to_tokens(v[0]);
          auto cat = concat_tokens(v[1], tok);
          return slice_tokens(cat, 1, 4);
        },
        {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 2, 3}, rng)});
  check("add_broadcast", [](Graph<double>&, const V& v) { return add_broadcast(v[0], v[1]); },
        {random_tensor({2, 3, 4}, rng), random_tensor({3, 4}, rng)});
  check("reshape/mul", [](Graph<double>&, const V& v) { return reshape(mul(v[0], v[1]), Shape{6}); },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  const auto target = random_tensor({3, 4}, rng, 0.1, 1.0);
  check("nmse_loss", [target](Graph<double>&, const V& v) { return nmse_loss(v[0], target); },
        {random_tensor({3, 4}, rng)});
  return out;
}

std::vector<GradCheckEntry> pipeline_gradchecks(const ModelConfig& model, std::uint64_t seed,
                                                std::size_t coords_per_tensor) {
  std::vector<GradCheckEntry> out;
  for (auto kind : {DecoderKind::kDwcg, DecoderKind::kAttention}) {
    ModelConfig cfg = apply_variant(model, "joint");
    cfg.decoder.kind = kind;
    auto codec = init_codec<double>(cfg, seed);
    RngStream jitter(seed, "gradcheck/jitter");
    for (auto& e : codec.params.entries())
      for (auto& v : e.value.data()) v += jitter.uniform(-0.05, 0.05);

    DatasetConfig d;
    d.height = cfg.height();
    d.width = cfg.width();
    d.bits = cfg.bits;
    d.samples = 2;
    d.seed = seed;
    const auto data = generate_dataset(d);
    const std::vector<const PsiMap*> maps{&data[0].map, &data[1].map};
    const std::vector<SideInfo> side{{8.0, ChannelType::kRayleigh, 0.5}, {17.0, ChannelType::kRician, 0.7}};
    LinkConfig link;
    link.mode = ChannelMode::kDiagRician;
    RngStream rng(seed, "gradcheck/batch");
    const auto batch = make_batch<double>(maps, side, cfg, link, rng);

    auto reports = check_param_gradients(
        codec.params, [&](Binder<double>& b) { return batch_loss(b, cfg, batch); }, coords_per_tensor, seed);
    GradCheckEntry e{"pipeline/" + std::string(to_string(kind)), 0, {}, {}};
    e.result.passed = true;
    for (const auto& r : reports) {
      e.checked += r.checked;
      if (r.result.max_rel_error >= e.result.max_rel_error) {
        e.result.max_rel_error = r.result.max_rel_error;
        e.result.worst_index = r.result.worst_index;
        e.worst = r.name;
      }
      e.result.max_abs_error = std::max(e.result.max_abs_error, r.result.max_abs_error);
      e.result.passed = e.result.passed && r.result.passed;
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace psic
