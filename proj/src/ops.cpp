#include "psic/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <string>

namespace psic {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
using Stride = Eigen::OuterStride<>;

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename T>
const Tensor<T>& gout(Graph<T>& g, std::size_t self) {
  return g.node(self).grad;
}

template <typename T>
Tensor<T>* gin(Graph<T>& g, std::size_t id) {
  return g.requires_grad(id) ? &g.grad_buffer(id) : nullptr;
}

}  // namespace

ActivationKind parse_activation(std::string_view name) {
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "gelu") return ActivationKind::kGelu;
  if (name == "sigmoid") return ActivationKind::kSigmoid;
  throw ConfigError("unknown activation kind '" + std::string(name) + "'");
}

double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Precision-native forms used inside ops; float evaluates erf/exp in float.
template <typename T>
T gelu_t(T v) {
  return T(0.5) * v * (T{1} + std::erf(v * T(1.0 / std::numbers::sqrt2)));
}

template <typename T>
T gelu_grad_t(T v) {
  const T cdf = T(0.5) * (T{1} + std::erf(v * T(1.0 / std::numbers::sqrt2)));
  const T pdf = std::exp(T(-0.5) * v * v) * T(1.0 / std::sqrt(2.0 * std::numbers::pi));
  return cdf + v * pdf;
}

template <typename T>
T sigmoid_t(T x) {
  if (x >= 0) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Var<T> dense_impl(Var<T> x, Var<T> w, const Var<T>* b) {
  const auto& X = x.value();
  const auto& W = w.value();
  require(W.rank() == 2 && X.rank() >= 1 && X.shape().back() == W.dim(0),
          "dense: input " + shape_str(X.shape()) + " incompatible with weight " +
              shape_str(W.shape()));
  const std::size_t m = W.dim(0), n = W.dim(1), rows = X.numel() / m;
  if (b) {
    require(b->value().numel() == n, "dense: bias " + shape_str(b->value().shape()) +
                                         " does not match weight " + shape_str(W.shape()));
  }
  Shape out_shape = X.shape();
  out_shape.back() = n;
  Tensor<T> Y(out_shape);
  Eigen::Map<const MatR<T>> Xm(X.ptr(), rows, m);
  Eigen::Map<const MatR<T>> Wm(W.ptr(), m, n);
  Eigen::Map<MatR<T>> Ym(Y.ptr(), rows, n);
  Ym.noalias() = Xm * Wm;
  if (b) Ym.rowwise() += Eigen::Map<const RowVec<T>>(b->value().ptr(), n);

  std::vector<Var<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  const std::size_t xi = x.id, wi = w.id, bi = b ? b->id : 0;
  const bool has_b = b != nullptr;
  return x.graph->record("dense", inputs, std::move(Y),
                         [=](Graph<T>& g, std::size_t self) {
                           Eigen::Map<const MatR<T>> dY(gout(g, self).ptr(), rows, n);
                           if (auto* gx = gin(g, xi)) {
                             Eigen::Map<const MatR<T>> Wm(g.value(wi).ptr(), m, n);
                             Eigen::Map<MatR<T>>(gx->ptr(), rows, m).noalias() += dY * Wm.transpose();
                           }
                           if (auto* gw = gin(g, wi)) {
                             Eigen::Map<const MatR<T>> Xm(g.value(xi).ptr(), rows, m);
                             Eigen::Map<MatR<T>>(gw->ptr(), m, n).noalias() += Xm.transpose() * dY;
                           }
                           if (has_b) {
                             if (auto* gb = gin(g, bi)) {
                               Eigen::Map<RowVec<T>>(gb->ptr(), n) += dY.colwise().sum();
                             }
                           }
                         });
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  return dense_impl(x, w, &b);
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> w) {
  return dense_impl<T>(x, w, nullptr);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += B[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record("add", {a, b}, std::move(y), [=](Graph<T>& g, std::size_t self) {
    const auto& dy = gout(g, self);
    for (std::size_t id : {ai, bi}) {
      if (auto* gx = gin(g, id)) {
        for (std::size_t i = 0; i < dy.numel(); ++i) (*gx)[i] += dy[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= B[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record("mul", {a, b}, std::move(y), [=](Graph<T>& g, std::size_t self) {
    const auto& dy = gout(g, self);
    const auto& A = g.value(ai);
    const auto& B = g.value(bi);
    if (auto* ga = gin(g, ai)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*ga)[i] += dy[i] * B[i];
    }
    if (auto* gb = gin(g, bi)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*gb)[i] += dy[i] * A[i];
    }
  });
}

template <typename T>
Var<T> add_broadcast(Var<T> x, Var<T> y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  bool ok = ys.size() <= xs.size();
  for (std::size_t i = 0; ok && i < ys.size(); ++i) ok = xs[xs.size() - ys.size() + i] == ys[i];
  require(ok, "add_broadcast: " + shape_str(ys) + " is not a trailing shape of " + shape_str(xs));
  const std::size_t inner = y.value().numel();
  const std::size_t outer = x.value().numel() / inner;
  Tensor<T> out = x.value();
  const auto& Y = y.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += Y[i];
  const std::size_t xi = x.id, yi = y.id;
  return x.graph->record("add_broadcast", {x, y}, std::move(out),
                         [=](Graph<T>& g, std::size_t self) {
                           const auto& dy = gout(g, self);
                           if (auto* gx = gin(g, xi)) {
                             for (std::size_t i = 0; i < dy.numel(); ++i) (*gx)[i] += dy[i];
                           }
                           if (auto* gy = gin(g, yi)) {
                             for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t i = 0; i < inner; ++i) (*gy)[i] += dy[o * inner + i];
                           }
                         });
}

template <typename T>
Var<T> mul_const(Var<T> x, const Tensor<T>& c) {
  require(c.numel() == x.value().numel(),
          "mul_const: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(c.shape()));
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= c[i];
  const std::size_t xi = x.id;
  return x.graph->record("mul_const", {x}, std::move(y), [=](Graph<T>& g, std::size_t self) {
    const auto& dy = gout(g, self);
    if (auto* gx = gin(g, xi)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*gx)[i] += dy[i] * c[i];
    }
  });
}

template <typename T>
Var<T> add_const(Var<T> x, const Tensor<T>& c) {
  require(c.numel() == x.value().numel(),
          "add_const: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(c.shape()));
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += c[i];
  const std::size_t xi = x.id;
  return x.graph->record("add_const", {x}, std::move(y), [=](Graph<T>& g, std::size_t self) {
    const auto& dy = gout(g, self);
    if (auto* gx = gin(g, xi)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*gx)[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T s{0};
  for (T v : x.value().data()) s += v;
  const std::size_t xi = x.id;
  return x.graph->record("sum", {x}, Tensor<T>::scalar(s), [=](Graph<T>& g, std::size_t self) {
    const T d = gout(g, self)[0];
    if (auto* gx = gin(g, xi)) {
      for (auto& v : gx->data()) v += d;
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id;
  return x.graph->record("reshape", {x}, std::move(y), [=](Graph<T>& g, std::size_t self) {
    const auto& dy = gout(g, self);
    if (auto* gx = gin(g, xi)) {
      for (std::size_t i = 0; i < dy.numel(); ++i) (*gx)[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  const auto& X = x.value();
  require(X.rank() >= 1 && X.shape().back() >= 1, "softmax_rows: empty row axis");
  const std::size_t n = X.shape().back(), rows = X.numel() / n;
  Tensor<T> Y(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.ptr() + r * n;
    T* yr = Y.ptr() + r * n;
    T mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    T z{0};
    for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  const std::size_t xi = x.id;
  return x.graph->record("softmax_rows", {x}, std::move(Y), [=](Graph<T>& g, std::size_t self) {
    auto* gx = gin(g, xi);
    if (!gx) return;
    const auto& dy = gout(g, self);
    const auto& y = g.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += dy[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += y[r * n + j] * (dy[r * n + j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps) {
  const auto& X = x.value();
  if (X.rank() < 1 || X.shape().back() < 2) {
    throw ConfigError("layer_norm needs at least 2 features per row, got " + shape_str(X.shape()));
  }
  const std::size_t n = X.shape().back(), rows = X.numel() / n;
  require(gain.value().numel() == n && bias.value().numel() == n,
          "layer_norm: affine parameters must have " + std::to_string(n) + " entries");
  Tensor<T> Y(X.shape());
  AlignedVector<T> mean(rows), rstd(rows);
  const auto& G = gain.value();
  const auto& Bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.ptr() + r * n;
    T mu{0};
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    const T rs = T{1} / std::sqrt(var + static_cast<T>(eps));
    mean[r] = mu;
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) Y[r * n + j] = (xr[j] - mu) * rs * G[j] + Bv[j];
  }
  const std::size_t xi = x.id, gi = gain.id, bi = bias.id;
  return x.graph->record(
      "layer_norm", {x, gain, bias}, std::move(Y),
      [=, mean = std::move(mean), rstd = std::move(rstd)](Graph<T>& g, std::size_t self) {
        const auto& dy = gout(g, self);
        const auto& X = g.value(xi);
        const auto& G = g.value(gi);
        auto* gx = gin(g, xi);
        auto* gg = gin(g, gi);
        auto* gb = gin(g, bi);
        AlignedVector<T> xhat(n), dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          T s1{0}, s2{0};
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = r * n + j;
            xhat[j] = (X[idx] - mean[r]) * rstd[r];
            dxhat[j] = dy[idx] * G[j];
            s1 += dxhat[j];
            s2 += dxhat[j] * xhat[j];
            if (gg) (*gg)[j] += dy[idx] * xhat[j];
            if (gb) (*gb)[j] += dy[idx];
          }
          if (gx) {
            const T inv_n = T{1} / static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              (*gx)[r * n + j] += rstd[r] * (dxhat[j] - s1 * inv_n - xhat[j] * s2 * inv_n);
            }
          }
        }
      });
}

template <typename T>
Var<T> activation(Var<T> x, ActivationKind kind) {
  const auto& X = x.value();
  Tensor<T> Y(X.shape());
  switch (kind) {
    case ActivationKind::kRelu:
      for (std::size_t i = 0; i < X.numel(); ++i) Y[i] = X[i] > 0 ? X[i] : T{0};
      break;
    case ActivationKind::kGelu:
      for (std::size_t i = 0; i < X.numel(); ++i) Y[i] = gelu_t(X[i]);
      break;
    case ActivationKind::kSigmoid:
      for (std::size_t i = 0; i < X.numel(); ++i) Y[i] = sigmoid_t(X[i]);
      break;
    default: throw ConfigError("unknown activation kind");
  }
  const char* name = kind == ActivationKind::kRelu   ? "relu"
                     : kind == ActivationKind::kGelu ? "gelu"
                                                     : "sigmoid";
  const std::size_t xi = x.id;
  return x.graph->record(name, {x}, std::move(Y), [=](Graph<T>& g, std::size_t self) {
    auto* gx = gin(g, xi);
    if (!gx) return;
    const auto& dy = gout(g, self);
    const auto& X = g.value(xi);
    const auto& Y = g.value(self);
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      T d;
      switch (kind) {
        case ActivationKind::kRelu: d = X[i] > 0 ? T{1} : T{0}; break;
        case ActivationKind::kGelu: d = gelu_grad_t(X[i]); break;
        default: d = Y[i] * (T{1} - Y[i]); break;
      }
      (*gx)[i] += dy[i] * d;
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> k, Var<T> b, std::size_t stride, std::size_t padding) {
  const auto& X = x.value();
  const auto& K = k.value();
  require(X.rank() == 3 || X.rank() == 4, "conv2d: input must be [C×H×W] or [B×C×H×W], got " +
                                              shape_str(X.shape()));
  require(K.rank() == 4, "conv2d: kernel must be [C_out×C_in×kh×kw], got " + shape_str(K.shape()));
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const bool batched = X.rank() == 4;
  const std::size_t B = batched ? X.dim(0) : 1;
  const std::size_t C = X.dim(batched ? 1 : 0), H = X.dim(batched ? 2 : 1),
                    W = X.dim(batched ? 3 : 2);
  const std::size_t CO = K.dim(0), kh = K.dim(2), kw = K.dim(3);
  require(K.dim(1) == C, "conv2d: input " + shape_str(X.shape()) + " has " + std::to_string(C) +
                             " channels, kernel " + shape_str(K.shape()) + " expects " +
                             std::to_string(K.dim(1)));
  require(b.value().numel() == CO, "conv2d: bias must have " + std::to_string(CO) + " entries");
  if (H + 2 * padding < kh || W + 2 * padding < kw) {
    throw ConfigError("conv2d: kernel larger than padded input");
  }
  if ((H + 2 * padding - kh) % stride != 0 || (W + 2 * padding - kw) % stride != 0) {
    throw ConfigError("conv2d: output size is not integral for input " + shape_str(X.shape()) +
                      ", kernel " + std::to_string(kh) + "x" + std::to_string(kw) + ", stride " +
                      std::to_string(stride) + ", padding " + std::to_string(padding));
  }
  const std::size_t OH = (H + 2 * padding - kh) / stride + 1;
  const std::size_t OW = (W + 2 * padding - kw) / stride + 1;
  Shape out_shape = batched ? Shape{B, CO, OH, OW} : Shape{CO, OH, OW};
  Tensor<T> Y(out_shape);
  const long pad = static_cast<long>(padding);
  const std::size_t KK = C * kh * kw, S = OH * OW;

  // Column matrix [C·kh·kw × OH·OW] of one sample; zero where the tap falls
  // in the padding.
  auto im2col = [=](const T* x, T* col) {
    for (std::size_t ci = 0; ci < C; ++ci)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          T* row = col + ((ci * kh + ky) * kw + kx) * S;
          for (std::size_t oy = 0; oy < OH; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - pad;
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - pad;
              const bool inside = iy >= 0 && iy < static_cast<long>(H) && ix >= 0 &&
                                  ix < static_cast<long>(W);
              row[oy * OW + ox] = inside ? x[(ci * H + iy) * W + ix] : T{0};
            }
          }
        }
  };
  auto col2im = [=](const T* col, T* gx) {
    for (std::size_t ci = 0; ci < C; ++ci)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const T* row = col + ((ci * kh + ky) * kw + kx) * S;
          for (std::size_t oy = 0; oy < OH; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              gx[(ci * H + iy) * W + ix] += row[oy * OW + ox];
            }
          }
        }
  };

  Eigen::Map<const MatR<T>> Km(K.ptr(), CO, KK);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(b.value().ptr(), CO);
  MatR<T> col(KK, S);
  for (std::size_t n = 0; n < B; ++n) {
    im2col(X.ptr() + n * C * H * W, col.data());
    Eigen::Map<MatR<T>> Yn(Y.ptr() + n * CO * S, CO, S);
    Yn.noalias() = Km * col;
    Yn.colwise() += bv;
  }

  const std::size_t xid = x.id, kid = k.id, bid = b.id;
  return x.graph->record("conv2d", {x, k, b}, std::move(Y), [=](Graph<T>& g, std::size_t self) {
    const auto& dy = gout(g, self);
    const auto& X = g.value(xid);
    const auto& K = g.value(kid);
    auto* gx = gin(g, xid);
    auto* gk = gin(g, kid);
    Eigen::Map<const MatR<T>> Km(K.ptr(), CO, KK);
    MatR<T> col(KK, S);
    for (std::size_t n = 0; n < B; ++n) {
      Eigen::Map<const MatR<T>> dYn(dy.ptr() + n * CO * S, CO, S);
      if (gk) {
        im2col(X.ptr() + n * C * H * W, col.data());
        Eigen::Map<MatR<T>>(gk->ptr(), CO, KK).noalias() += dYn * col.transpose();
      }
      if (gx) {
        col.noalias() = Km.transpose() * dYn;
        col2im(col.data(), gx->ptr() + n * C * H * W);
      }
    }
    if (auto* gb = gin(g, bid)) {
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t co = 0; co < CO; ++co)
          for (std::size_t i = 0; i < S; ++i) (*gb)[co] += dy[(n * CO + co) * S + i];
    }
  });
}

template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> k, Var<T> b) {
  const auto& X = x.value();
  const auto& K = k.value();
  require(X.rank() >= 2, "depthwise_conv1d: input must be [...×T×E], got " + shape_str(X.shape()));
  const std::size_t E = X.shape().back(), T_len = X.shape()[X.rank() - 2];
  const std::size_t seqs = X.numel() / (E * T_len);
  require(K.rank() == 2 && K.dim(0) == E,
          "depthwise_conv1d: kernel " + shape_str(K.shape()) + " does not match " +
              std::to_string(E) + " channels");
  const std::size_t taps = K.dim(1);
  if (taps % 2 == 0) {
    throw ConfigError("depthwise_conv1d: kernel size must be odd, got " + std::to_string(taps));
  }
  require(b.value().numel() == E, "depthwise_conv1d: bias must have " + std::to_string(E) +
                                      " entries");
  const long half = static_cast<long>(taps / 2);
  Tensor<T> Y(X.shape());
  const auto& bias = b.value();
  // Tap-major copy of the kernel so the channel loop is contiguous.
  AlignedVector<T> Kt(taps * E);
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t j = 0; j < taps; ++j) Kt[j * E + e] = K[e * taps + j];
  for (std::size_t s = 0; s < seqs; ++s) {
    const T* xs = X.ptr() + s * T_len * E;
    T* ys = Y.ptr() + s * T_len * E;
    for (std::size_t t = 0; t < T_len; ++t) {
      T* yrow = ys + t * E;
      for (std::size_t e = 0; e < E; ++e) yrow[e] = bias[e];
      for (std::size_t j = 0; j < taps; ++j) {
        const long src = static_cast<long>(t) + static_cast<long>(j) - half;
        if (src < 0 || src >= static_cast<long>(T_len)) continue;
        const T* xrow = xs + src * E;
        for (std::size_t e = 0; e < E; ++e) yrow[e] += Kt[j * E + e] * xrow[e];
      }
    }
  }
  const std::size_t xid = x.id, kid = k.id, bid = b.id;
  return x.graph->record(
      "depthwise_conv1d", {x, k, b}, std::move(Y), [=](Graph<T>& g, std::size_t self) {
        const auto& dy = gout(g, self);
        const auto& X = g.value(xid);
        const auto& K = g.value(kid);
        auto* gx = gin(g, xid);
        auto* gk = gin(g, kid);
        auto* gb = gin(g, bid);
        AlignedVector<T> gKt(gk ? taps * E : 0, T{0});
        for (std::size_t s = 0; s < seqs; ++s) {
          const std::size_t base = s * T_len * E;
          for (std::size_t t = 0; t < T_len; ++t) {
            const T* drow = dy.ptr() + base + t * E;
            if (gb)
              for (std::size_t e = 0; e < E; ++e) (*gb)[e] += drow[e];
            for (std::size_t j = 0; j < taps; ++j) {
              const long src = static_cast<long>(t) + static_cast<long>(j) - half;
              if (src < 0 || src >= static_cast<long>(T_len)) continue;
              const std::size_t xoff = base + src * E;
              if (gx)
                for (std::size_t e = 0; e < E; ++e) (*gx)[xoff + e] += drow[e] * K[e * taps + j];
              if (gk)
                for (std::size_t e = 0; e < E; ++e) gKt[j * E + e] += drow[e] * X[xoff + e];
            }
          }
        }
        if (gk)
          for (std::size_t e = 0; e < E; ++e)
            for (std::size_t j = 0; j < taps; ++j) (*gk)[e * taps + j] += gKt[j * E + e];
      });
}

template <typename T>
Var<T> film(Var<T> h, Var<T> gamma, Var<T> beta, Var<T> gate) {
  const auto& Hv = h.value();
  require(Hv.rank() == 3 || Hv.rank() == 4,
          "film: features must be [C×H×W] or [B×C×H×W], got " + shape_str(Hv.shape()));
  const bool batched = Hv.rank() == 4;
  const std::size_t B = batched ? Hv.dim(0) : 1;
  const std::size_t C = Hv.dim(batched ? 1 : 0);
  const std::size_t S = Hv.numel() / (B * C);
  require(gamma.value().numel() == B * C && beta.value().numel() == B * C,
          "film: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
              " do not match features " + shape_str(Hv.shape()));
  require(gate.value().numel() == B, "film: gate must have one entry per sample");
  const auto& G = gamma.value();
  const auto& Bt = beta.value();
  const auto& Gf = gate.value();
  Tensor<T> Y(Hv.shape());
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T scale = T{1} + Gf[n] * G[n * C + c];
      const T shift = Gf[n] * Bt[n * C + c];
      const std::size_t off = (n * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) Y[off + s] = Hv[off + s] * scale + shift;
    }
  const std::size_t hi = h.id, gi = gamma.id, bi = beta.id, fi = gate.id;
  return h.graph->record("film", {h, gamma, beta, gate}, std::move(Y),
                         [=](Graph<T>& g, std::size_t self) {
                           const auto& dy = gout(g, self);
                           const auto& Hv = g.value(hi);
                           const auto& G = g.value(gi);
                           const auto& Bt = g.value(bi);
                           const auto& Gf = g.value(fi);
                           auto* gh = gin(g, hi);
                           auto* gg = gin(g, gi);
                           auto* gb = gin(g, bi);
                           auto* gf = gin(g, fi);
                           for (std::size_t n = 0; n < B; ++n)
                             for (std::size_t c = 0; c < C; ++c) {
                               const std::size_t off = (n * C + c) * S;
                               const T scale = T{1} + Gf[n] * G[n * C + c];
                               T sdh{0}, sd{0};
                               for (std::size_t s = 0; s < S; ++s) {
                                 sdh += dy[off + s] * Hv[off + s];
                                 sd += dy[off + s];
                                 if (gh) (*gh)[off + s] += dy[off + s] * scale;
                               }
                               if (gg) (*gg)[n * C + c] += Gf[n] * sdh;
                               if (gb) (*gb)[n * C + c] += Gf[n] * sd;
                               if (gf) (*gf)[n] += G[n * C + c] * sdh + Bt[n * C + c] * sd;
                             }
                         });
}

template <typename T>
Var<T> film_tokens(Var<T> x, Var<T> gamma, Var<T> beta, Var<T> gate) {
  const auto& X = x.value();
  require(X.rank() == 3, "film_tokens: expected [B×T×C], got " + shape_str(X.shape()));
  const std::size_t B = X.dim(0), Tn = X.dim(1), C = X.dim(2);
  require(gamma.value().numel() == B * C && beta.value().numel() == B * C,
          "film_tokens: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
              " do not match tokens " + shape_str(X.shape()));
  require(gate.value().numel() == B, "film_tokens: gate must have one entry per sample");
  const auto& G = gamma.value();
  const auto& Bt = beta.value();
  const auto& Gf = gate.value();
  Tensor<T> Y(X.shape());
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t t = 0; t < Tn; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (n * Tn + t) * C + c;
        Y[i] = X[i] * (T{1} + Gf[n] * G[n * C + c]) + Gf[n] * Bt[n * C + c];
      }
  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id, fi = gate.id;
  return x.graph->record("film_tokens", {x, gamma, beta, gate}, std::move(Y),
                         [=](Graph<T>& g, std::size_t self) {
                           const auto& dy = gout(g, self);
                           const auto& X = g.value(xi);
                           const auto& G = g.value(gi);
                           const auto& Bt = g.value(bi);
                           const auto& Gf = g.value(fi);
                           auto* gx = gin(g, xi);
                           auto* gg = gin(g, gi);
                           auto* gb = gin(g, bi);
                           auto* gf = gin(g, fi);
                           for (std::size_t n = 0; n < B; ++n)
                             for (std::size_t t = 0; t < Tn; ++t)
                               for (std::size_t c = 0; c < C; ++c) {
                                 const std::size_t i = (n * Tn + t) * C + c;
                                 const T d = dy[i];
                                 if (gx) (*gx)[i] += d * (T{1} + Gf[n] * G[n * C + c]);
                                 if (gg) (*gg)[n * C + c] += d * Gf[n] * X[i];
                                 if (gb) (*gb)[n * C + c] += d * Gf[n];
                                 if (gf) (*gf)[n] += d * (G[n * C + c] * X[i] + Bt[n * C + c]);
                               }
                         });
}

template <typename T>
Var<T> channels_to_tokens(Var<T> x) {
  const auto& X = x.value();
  require(X.rank() == 4, "channels_to_tokens: expected [B×C×H×W], got " + shape_str(X.shape()));
  const std::size_t B = X.dim(0), C = X.dim(1), S = X.dim(2) * X.dim(3);
  Tensor<T> Y({B, S, C});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) Y[(n * S + s) * C + c] = X[(n * C + c) * S + s];
  const std::size_t xi = x.id;
  return x.graph->record("channels_to_tokens", {x}, std::move(Y),
                         [=](Graph<T>& g, std::size_t self) {
                           auto* gx = gin(g, xi);
                           if (!gx) return;
                           const auto& dy = gout(g, self);
                           for (std::size_t n = 0; n < B; ++n)
                             for (std::size_t c = 0; c < C; ++c)
                               for (std::size_t s = 0; s < S; ++s)
                                 (*gx)[(n * C + c) * S + s] += dy[(n * S + s) * C + c];
                         });
}

template <typename T>
Var<T> concat_tokens(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& Bv = b.value();
  require(A.rank() == 3 && Bv.rank() == 3 && A.dim(0) == Bv.dim(0) && A.dim(2) == Bv.dim(2),
          "concat_tokens: incompatible shapes " + shape_str(A.shape()) + " and " +
              shape_str(Bv.shape()));
  const std::size_t B = A.dim(0), P = A.dim(1), N = Bv.dim(1), d = A.dim(2);
  Tensor<T> Y({B, P + N, d});
  for (std::size_t n = 0; n < B; ++n) {
    std::copy_n(A.ptr() + n * P * d, P * d, Y.ptr() + n * (P + N) * d);
    std::copy_n(Bv.ptr() + n * N * d, N * d, Y.ptr() + n * (P + N) * d + P * d);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record("concat_tokens", {a, b}, std::move(Y),
                         [=](Graph<T>& g, std::size_t self) {
                           const auto& dy = gout(g, self);
                           auto* ga = gin(g, ai);
                           auto* gb = gin(g, bi);
                           for (std::size_t n = 0; n < B; ++n) {
                             const T* src = dy.ptr() + n * (P + N) * d;
                             if (ga)
                               for (std::size_t i = 0; i < P * d; ++i) (*ga)[n * P * d + i] += src[i];
                             if (gb)
                               for (std::size_t i = 0; i < N * d; ++i)
                                 (*gb)[n * N * d + i] += src[P * d + i];
                           }
                         });
}

template <typename T>
Var<T> slice_tokens(Var<T> x, std::size_t start, std::size_t count) {
  const auto& X = x.value();
  require(X.rank() == 3 && start + count <= X.dim(1),
          "slice_tokens: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
              ") outside " + shape_str(X.shape()));
  const std::size_t B = X.dim(0), Tn = X.dim(1), d = X.dim(2);
  Tensor<T> Y({B, count, d});
  for (std::size_t n = 0; n < B; ++n)
    std::copy_n(X.ptr() + (n * Tn + start) * d, count * d, Y.ptr() + n * count * d);
  const std::size_t xi = x.id;
  return x.graph->record("slice_tokens", {x}, std::move(Y), [=](Graph<T>& g, std::size_t self) {
    auto* gx = gin(g, xi);
    if (!gx) return;
    const auto& dy = gout(g, self);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t i = 0; i < count * d; ++i) (*gx)[(n * Tn + start) * d + i] += dy[n * count * d + i];
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  require(Q.rank() == 3 && Q.shape() == K.shape() && Q.shape() == V.shape(),
          "attention: q/k/v shapes " + shape_str(Q.shape()) + ", " + shape_str(K.shape()) + ", " +
              shape_str(V.shape()) + " must agree");
  const std::size_t B = Q.dim(0), Tn = Q.dim(1), d = Q.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  Tensor<T> O(Q.shape());
  // Attention probabilities per (sample, head), kept for backward.
  AlignedVector<T> probs(B * heads * Tn * Tn);
  using CMap = Eigen::Map<const MatR<T>, 0, Stride>;
  using Map = Eigen::Map<MatR<T>, 0, Stride>;
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = n * Tn * d + h * dh;
      CMap Qh(Q.ptr() + off, Tn, dh, Stride(d));
      CMap Kh(K.ptr() + off, Tn, dh, Stride(d));
      CMap Vh(V.ptr() + off, Tn, dh, Stride(d));
      Eigen::Map<MatR<T>> Pm(probs.data() + (n * heads + h) * Tn * Tn, Tn, Tn);
      Pm.noalias() = (Qh * Kh.transpose()) * scale;
      for (std::size_t r = 0; r < Tn; ++r) {
        auto row = Pm.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
      }
      Map Oh(O.ptr() + off, Tn, dh, Stride(d));
      Oh.noalias() = Pm * Vh;
    }
  const std::size_t qi = q.id, ki = k.id, vi = v.id;
  return q.graph->record(
      "attention", {q, k, v}, std::move(O),
      [=, probs = std::move(probs)](Graph<T>& g, std::size_t self) {
        const auto& dO = gout(g, self);
        const auto& Q = g.value(qi);
        const auto& K = g.value(ki);
        const auto& V = g.value(vi);
        auto* gq = gin(g, qi);
        auto* gk = gin(g, ki);
        auto* gv = gin(g, vi);
        MatR<T> dP(Tn, Tn);
        for (std::size_t n = 0; n < B; ++n)
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = n * Tn * d + h * dh;
            Eigen::Map<const MatR<T>> Pm(probs.data() + (n * heads + h) * Tn * Tn, Tn, Tn);
            CMap dOh(dO.ptr() + off, Tn, dh, Stride(d));
            CMap Qh(Q.ptr() + off, Tn, dh, Stride(d));
            CMap Kh(K.ptr() + off, Tn, dh, Stride(d));
            CMap Vh(V.ptr() + off, Tn, dh, Stride(d));
            if (gv) Map(gv->ptr() + off, Tn, dh, Stride(d)).noalias() += Pm.transpose() * dOh;
            if (!gq && !gk) continue;
            dP.noalias() = dOh * Vh.transpose();
            for (std::size_t r = 0; r < Tn; ++r) {
              const T dot = dP.row(r).dot(Pm.row(r));
              dP.row(r) = (Pm.row(r).array() * (dP.row(r).array() - dot)).matrix() * scale;
            }
            if (gq) Map(gq->ptr() + off, Tn, dh, Stride(d)).noalias() += dP * Kh;
            if (gk) Map(gk->ptr() + off, Tn, dh, Stride(d)).noalias() += dP.transpose() * Qh;
          }
      });
}

template <typename T>
Tensor<T> attention_probabilities(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads) {
  require(q.rank() == 3 && q.shape() == k.shape(), "attention_probabilities: q/k shapes " +
                                                       shape_str(q.shape()) + ", " +
                                                       shape_str(k.shape()) + " must agree");
  const std::size_t B = q.dim(0), Tn = q.dim(1), d = q.dim(2);
  if (heads == 0 || d % heads != 0) throw ConfigError("attention_probabilities: bad head count");
  const std::size_t dh = d / heads;
  Graph<T> g;
  Tensor<T> logits({B, heads, Tn, Tn});
  const double scale = 1.0 / std::sqrt(double(dh));
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < Tn; ++i)
        for (std::size_t j = 0; j < Tn; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c)
            acc += double(q[(n * Tn + i) * d + h * dh + c]) * double(k[(n * Tn + j) * d + h * dh + c]);
          logits[((n * heads + h) * Tn + i) * Tn + j] = static_cast<T>(acc * scale);
        }
  return softmax_rows(g.constant(std::move(logits))).value();
}

template <typename T>
Var<T> gated_activation(Var<T> x) {
  const auto& X = x.value();
  require(X.rank() >= 1 && X.shape().back() % 2 == 0,
          "gated_activation: last axis must be even, got " + shape_str(X.shape()));
  const std::size_t two_c = X.shape().back(), c = two_c / 2, rows = X.numel() / two_c;
  Shape out_shape = X.shape();
  out_shape.back() = c;
  Tensor<T> Y(out_shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      Y[r * c + j] = gelu_t(X[r * two_c + j]) * sigmoid_t(X[r * two_c + c + j]);
    }
  const std::size_t xi = x.id;
  return x.graph->record("gated_activation", {x}, std::move(Y), [=](Graph<T>& g, std::size_t self) {
    auto* gx = gin(g, xi);
    if (!gx) return;
    const auto& dy = gout(g, self);
    const auto& X = g.value(xi);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const T v = X[r * two_c + j];
        const T s = sigmoid_t(X[r * two_c + c + j]);
        const T d = dy[r * c + j];
        (*gx)[r * two_c + j] += d * gelu_grad_t(v) * s;
        (*gx)[r * two_c + c + j] += d * gelu_t(v) * s * (T{1} - s);
      }
  });
}

template <typename T>
Var<T> nmse_loss(Var<T> pred, const Tensor<T>& target, std::size_t* excluded) {
  const auto& P = pred.value();
  require(P.numel() == target.numel() && target.rank() >= 1,
          "nmse_loss: prediction " + shape_str(P.shape()) + " vs target " +
              shape_str(target.shape()));
  const std::size_t B = target.dim(0), per = target.numel() / B;
  AlignedVector<T> inv_norm(B, T{0});
  std::size_t valid = 0;
  double total = 0.0;
  for (std::size_t n = 0; n < B; ++n) {
    double tn = 0.0, err = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double t = target[n * per + i];
      const double e = double(P[n * per + i]) - t;
      tn += t * t;
      err += e * e;
    }
    if (tn > 0.0) {
      ++valid;
      inv_norm[n] = static_cast<T>(1.0 / tn);
      total += err / tn;
    }
  }
  if (excluded) *excluded = B - valid;
  if (valid == 0) throw NumericError("nmse_loss: every target in the batch has zero norm");
  const T mean = static_cast<T>(total / static_cast<double>(valid));
  const std::size_t pi = pred.id;
  return pred.graph->record(
      "nmse_loss", {pred}, Tensor<T>::scalar(mean),
      [=, inv_norm = std::move(inv_norm)](Graph<T>& g, std::size_t self) {
        auto* gp = gin(g, pi);
        if (!gp) return;
        const T d = gout(g, self)[0] / static_cast<T>(valid);
        const auto& P = g.value(pi);
        for (std::size_t n = 0; n < B; ++n)
          for (std::size_t i = 0; i < per; ++i) {
            const std::size_t idx = n * per + i;
            (*gp)[idx] += d * T{2} * (P[idx] - target[idx]) * inv_norm[n];
          }
      });
}

#define PSIC_INSTANTIATE_OPS(T)                                                              \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                             \
  template Var<T> dense(Var<T>, Var<T>);                                                     \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                       \
  template Var<T> add_broadcast(Var<T>, Var<T>);                                             \
  template Var<T> mul_const(Var<T>, const Tensor<T>&);                                       \
  template Var<T> add_const(Var<T>, const Tensor<T>&);                                       \
  template Var<T> sum(Var<T>);                                                               \
  template Var<T> reshape(Var<T>, Shape);                                                    \
  template Var<T> softmax_rows(Var<T>);                                                      \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                                \
  template Var<T> activation(Var<T>, ActivationKind);                                        \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);                  \
  template Var<T> depthwise_conv1d(Var<T>, Var<T>, Var<T>);                                  \
  template Var<T> film(Var<T>, Var<T>, Var<T>, Var<T>);                                      \
  template Var<T> film_tokens(Var<T>, Var<T>, Var<T>, Var<T>);                               \
  template Var<T> channels_to_tokens(Var<T>);                                                \
  template Var<T> concat_tokens(Var<T>, Var<T>);                                             \
  template Var<T> slice_tokens(Var<T>, std::size_t, std::size_t);                            \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t);                            \
  template Tensor<T> attention_probabilities(const Tensor<T>&, const Tensor<T>&, std::size_t); \
  template Var<T> gated_activation(Var<T>);                                                  \
  template Var<T> nmse_loss(Var<T>, const Tensor<T>&, std::size_t*);

PSIC_INSTANTIATE_OPS(float)
PSIC_INSTANTIATE_OPS(double)

}  // namespace psic
