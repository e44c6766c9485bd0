#pragma once

#include <cstddef>
#include <string_view>

#include "psic/graph.hpp"

namespace psic {

enum class ActivationKind { kRelu, kGelu, kSigmoid };

ActivationKind parse_activation(std::string_view name);

// Scalar reference functions shared by ops and tests.
double gelu_exact(double x);
double sigmoid(double x);

// Y = X W + b over all leading axes of X. X: [...×m], W: [m×n], b: [n].
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b);
template <typename T>
Var<T> dense(Var<T> x, Var<T> w);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

// x + y where y's shape equals the trailing axes of x.
template <typename T>
Var<T> add_broadcast(Var<T> x, Var<T> y);

// Elementwise product / sum with a non-differentiated tensor of x's shape.
template <typename T>
Var<T> mul_const(Var<T> x, const Tensor<T>& c);
template <typename T>
Var<T> add_const(Var<T> x, const Tensor<T>& c);

template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

template <typename T>
Var<T> softmax_rows(Var<T> x);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5);

template <typename T>
Var<T> activation(Var<T> x, ActivationKind kind);

// Cross-correlation. x: [C_in×H×W] or [B×C_in×H×W]; k: [C_out×C_in×kh×kw].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> k, Var<T> b, std::size_t stride, std::size_t padding);

// Per-channel 1D convolution along the token axis with symmetric zero
// padding. x: [...×T×E], k: [E×taps] (taps odd), b: [E].
template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> k, Var<T> b);

// H ⊙ (1 + g γ) + g β with channel-wise broadcast.
// h: [B×C×H×W] (or [C×H×W] with B=1), gamma/beta: [B×C], gate: [B×1].
template <typename T>
Var<T> film(Var<T> h, Var<T> gamma, Var<T> beta, Var<T> gate);

// Same transform for channel-last tokens. x: [B×T×C], gamma/beta: [B×C].
template <typename T>
Var<T> film_tokens(Var<T> x, Var<T> gamma, Var<T> beta, Var<T> gate);

// [B×C×H×W] → [B×(H·W)×C], tokens in row-major spatial order.
template <typename T>
Var<T> channels_to_tokens(Var<T> x);

// Concatenate / slice along the token axis of [B×T×d] tensors.
template <typename T>
Var<T> concat_tokens(Var<T> a, Var<T> b);
template <typename T>
Var<T> slice_tokens(Var<T> x, std::size_t start, std::size_t count);

// Multi-head scaled dot-product attention. q,k,v: [B×T×d] with heads
// packed along d. Returns [B×T×d] of concatenated head outputs.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads);

// Softmax attention weights of the op above, [B×heads×T×T]; not recorded.
template <typename T>
Tensor<T> attention_probabilities(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads);

// [...×2c] → [...×c]: GELU(first half) ⊙ sigmoid(second half).
template <typename T>
Var<T> gated_activation(Var<T> x);

// Batch mean over samples of ‖pred − target‖² / ‖target‖². Samples whose
// target norm is zero are excluded; *excluded receives their count.
template <typename T>
Var<T> nmse_loss(Var<T> pred, const Tensor<T>& target, std::size_t* excluded = nullptr);

}  // namespace psic
