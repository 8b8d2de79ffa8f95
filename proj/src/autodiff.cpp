#include "gfrnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace gfrnet {

namespace {

template <typename T>
std::string shape_pair(const TensorT<T>& a, const TensorT<T>& b) {
  return a.shape().str() + " vs " + b.shape().str();
}

// Interpolation source for one output coordinate of a 2x upsampling axis.
struct Lin {
  int64_t i0, i1;
  double t;
};

std::vector<Lin> up2x_axis(int64_t in_dim) {
  std::vector<Lin> out(static_cast<size_t>(2 * in_dim));
  for (int64_t o = 0; o < 2 * in_dim; ++o) {
    double s = (static_cast<double>(o) + 0.5) * 0.5 - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in_dim - 1));
    int64_t i0 = static_cast<int64_t>(s);
    out[o] = Lin{i0, std::min<int64_t>(i0 + 1, in_dim - 1), s - static_cast<double>(i0)};
  }
  return out;
}

template <typename T>
void conv3x3_forward(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>& bias,
                     TensorT<T>& out) {
  const auto [N, Ci, H, W] = in.shape();
  const int64_t Co = w.shape().n;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Co; ++co) {
      T* op = &out.at(n, co, 0, 0);
      const T bv = bias[co];
      for (int64_t i = 0; i < H * W; ++i) op[i] = bv;
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const T* ip = &in.at(n, ci, 0, 0);
        const T* wp = &w.at(co, ci, 0, 0);
        for (int64_t ky = 0; ky < 3; ++ky) {
          for (int64_t y = 0; y < H; ++y) {
            const int64_t iy = y + ky - 1;
            if (iy < 0 || iy >= H) continue;
            const T* irow = ip + iy * W;
            T* orow = op + y * W;
            for (int64_t kx = 0; kx < 3; ++kx) {
              const T wv = wp[ky * 3 + kx];
              const int64_t x0 = std::max<int64_t>(0, 1 - kx);
              const int64_t x1 = std::min<int64_t>(W, W + 1 - kx);
              const int64_t off = kx - 1;
              for (int64_t x = x0; x < x1; ++x) orow[x] += wv * irow[x + off];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BatchNormState<T> BatchNormState<T>::make(int64_t channels) {
  BatchNormState<T> s;
  s.running_mean = TensorT<T>(Shape{1, channels, 1, 1}, T(0));
  s.running_var = TensorT<T>(Shape{1, channels, 1, 1}, T(1));
  return s;
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::conv3x3: return "conv3x3";
    case OpKind::maxpool2x2: return "maxpool2x2";
    case OpKind::relu: return "relu";
    case OpKind::batchnorm: return "batchnorm";
    case OpKind::bilinear_up2x: return "bilinear_up2x";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::gate_combine: return "gate_combine";
    case OpKind::softmax_xent: return "softmax_xent";
    case OpKind::weighted_sum: return "weighted_sum";
  }
  return "?";
}

template <typename T>
int Graph<T>::check(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("graph node id " + std::to_string(id) + " out of range");
  }
  return id;
}

template <typename T>
int Graph<T>::add(OpKind op, std::vector<int> parents, TensorT<T> value,
                  std::function<void(Graph&)> backprop) {
  for (int p : parents) check(p);
  value.check_finite(op_name(op));
  nodes_.push_back(Node{op, std::move(parents), std::move(value), {}, std::move(backprop)});
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
int Graph<T>::leaf(TensorT<T> value) {
  return add(OpKind::leaf, {}, std::move(value), nullptr);
}

template <typename T>
int Graph<T>::conv3x3(int x, int w, int b) {
  const TensorT<T>& X = value(x);
  const TensorT<T>& W = value(w);
  const TensorT<T>& B = value(b);
  const auto [N, Ci, H, Wd] = X.shape();
  const int64_t Co = W.shape().n;
  if (W.shape().h != 3 || W.shape().w != 3) {
    throw ShapeError("conv3x3: kernel must be 3x3, got " + W.shape().str());
  }
  if (W.shape().c != Ci) {
    throw ShapeError("conv3x3: input has " + std::to_string(Ci) + " channels but kernel expects " +
                     std::to_string(W.shape().c));
  }
  if (!(B.shape() == Shape{1, Co, 1, 1})) {
    throw ShapeError("conv3x3: bias shape " + B.shape().str() + " must be (1," +
                     std::to_string(Co) + ",1,1)");
  }
  TensorT<T> out(Shape{N, Co, H, Wd});
  conv3x3_forward(X, W, B, out);

  const int out_id = static_cast<int>(nodes_.size());
  auto back = [x, w, b, out_id, N, Ci, H, Wd, Co](Graph& g) {
    const TensorT<T>& G = g.grad(out_id);
    const TensorT<T>& X2 = g.value(x);
    const TensorT<T>& W2 = g.value(w);
    TensorT<T>& dX = g.grad_mut(x);
    TensorT<T>& dW = g.grad_mut(w);
    TensorT<T>& dB = g.grad_mut(b);
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t co = 0; co < Co; ++co) {
        const T* go = &G.at(n, co, 0, 0);
        T dbacc = T(0);
        for (int64_t i = 0; i < H * Wd; ++i) dbacc += go[i];
        dB[co] += dbacc;
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const T* ip = &X2.at(n, ci, 0, 0);
          const T* wp = &W2.at(co, ci, 0, 0);
          T* gip = &dX.at(n, ci, 0, 0);
          T* gwp = &dW.at(co, ci, 0, 0);
          for (int64_t ky = 0; ky < 3; ++ky) {
            for (int64_t kx = 0; kx < 3; ++kx) {
              const T wv = wp[ky * 3 + kx];
              const int64_t x0 = std::max<int64_t>(0, 1 - kx);
              const int64_t x1 = std::min<int64_t>(Wd, Wd + 1 - kx);
              const int64_t off = kx - 1;
              T wacc = T(0);
              for (int64_t y = 0; y < H; ++y) {
                const int64_t iy = y + ky - 1;
                if (iy < 0 || iy >= H) continue;
                const T* gorow = go + y * Wd;
                const T* irow = ip + iy * Wd;
                T* girow = gip + iy * Wd;
                for (int64_t xx = x0; xx < x1; ++xx) {
                  girow[xx + off] += wv * gorow[xx];
                  wacc += gorow[xx] * irow[xx + off];
                }
              }
              gwp[ky * 3 + kx] += wacc;
            }
          }
        }
      }
    }
  };
  return add(OpKind::conv3x3, {x, w, b}, std::move(out), std::move(back));
}

template <typename T>
int Graph<T>::maxpool2x2(int x) {
  const TensorT<T>& X = value(x);
  const auto [N, C, H, W] = X.shape();
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("maxpool2x2: spatial dims " + X.shape().str() +
                     " must be even; pad or crop the input");
  }
  TensorT<T> out(Shape{N, C, H / 2, W / 2});
  std::vector<int64_t> argmax(static_cast<size_t>(out.size()));
  int64_t oi = 0;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t oy = 0; oy < H / 2; ++oy) {
        for (int64_t ox = 0; ox < W / 2; ++ox) {
          int64_t best = X.index(n, c, 2 * oy, 2 * ox);
          T bv = X[best];
          for (int64_t dy = 0; dy < 2; ++dy) {
            for (int64_t dx = 0; dx < 2; ++dx) {
              const int64_t idx = X.index(n, c, 2 * oy + dy, 2 * ox + dx);
              if (X[idx] > bv) {
                bv = X[idx];
                best = idx;
              }
            }
          }
          out[oi] = bv;
          argmax[oi] = best;
          ++oi;
        }
      }
    }
  }
  const int out_id = static_cast<int>(nodes_.size());
  auto back = [x, out_id, argmax = std::move(argmax)](Graph& g) {
    const TensorT<T>& G = g.grad(out_id);
    TensorT<T>& dX = g.grad_mut(x);
    for (int64_t i = 0; i < G.size(); ++i) dX[argmax[i]] += G[i];
  };
  return add(OpKind::maxpool2x2, {x}, std::move(out), std::move(back));
}

template <typename T>
int Graph<T>::relu(int x) {
  const TensorT<T>& X = value(x);
  TensorT<T> out(X.shape());
  for (int64_t i = 0; i < X.size(); ++i) out[i] = X[i] > T(0) ? X[i] : T(0);
  const int out_id = static_cast<int>(nodes_.size());
  auto back = [x, out_id](Graph& g) {
    const TensorT<T>& G = g.grad(out_id);
    const TensorT<T>& X2 = g.value(x);
    TensorT<T>& dX = g.grad_mut(x);
    for (int64_t i = 0; i < G.size(); ++i) {
      if (X2[i] > T(0)) dX[i] += G[i];
    }
  };
  return add(OpKind::relu, {x}, std::move(out), std::move(back));
}

template <typename T>
int Graph<T>::batchnorm(int x, int gamma, int beta, BatchNormState<T>& state) {
  const TensorT<T>& X = value(x);
  const auto [N, C, H, W] = X.shape();
  const Shape per_channel{1, C, 1, 1};
  if (!(value(gamma).shape() == per_channel) || !(value(beta).shape() == per_channel)) {
    throw ShapeError("batchnorm: gamma/beta must be (1," + std::to_string(C) + ",1,1), got " +
                     value(gamma).shape().str() + " and " + value(beta).shape().str());
  }
  if (!(state.running_mean.shape() == per_channel) || !(state.running_var.shape() == per_channel)) {
    throw ShapeError("batchnorm: running stats channel mismatch for input " + X.shape().str());
  }
  const int64_t m = N * H * W;
  const TensorT<T>& GA = value(gamma);
  const TensorT<T>& BE = value(beta);

  std::vector<T> inv(static_cast<size_t>(C));
  TensorT<T> xhat(X.shape());
  TensorT<T> out(X.shape());

  std::vector<T> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
  if (state.mode == BnMode::train) {
    for (int64_t c = 0; c < C; ++c) {
      // Mean over the first element's offset, so a constant channel
      // normalizes to exactly zero.
      const double x0 = X.at(0, c, 0, 0);
      double acc = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = &X.at(n, c, 0, 0);
        for (int64_t i = 0; i < H * W; ++i) acc += static_cast<double>(p[i]) - x0;
      }
      const double mu = x0 + acc / static_cast<double>(m);
      double v = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = &X.at(n, c, 0, 0);
        for (int64_t i = 0; i < H * W; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
      }
      v /= static_cast<double>(m);  // biased, also used for the running update
      mean[c] = static_cast<T>(mu);
      var[c] = static_cast<T>(v);
    }
    for (int64_t c = 0; c < C; ++c) {
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * var[c];
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
  }
  for (int64_t c = 0; c < C; ++c) {
    inv[c] = T(1) / std::sqrt(var[c] + state.epsilon);
  }
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* p = &X.at(n, c, 0, 0);
      T* xh = &xhat.at(n, c, 0, 0);
      T* o = &out.at(n, c, 0, 0);
      const T mu = mean[c], iv = inv[c], ga = GA[c], be = BE[c];
      for (int64_t i = 0; i < H * W; ++i) {
        xh[i] = (p[i] - mu) * iv;
        o[i] = ga * xh[i] + be;
      }
    }
  }

  const bool train = state.mode == BnMode::train;
  const int out_id = static_cast<int>(nodes_.size());
  auto back = [x, gamma, beta, out_id, N, C, H, W, m, train, inv = std::move(inv),
               xhat = std::move(xhat)](Graph& g) {
    const TensorT<T>& G = g.grad(out_id);
    const TensorT<T>& GA2 = g.value(gamma);
    TensorT<T>& dX = g.grad_mut(x);
    TensorT<T>& dGA = g.grad_mut(gamma);
    TensorT<T>& dBE = g.grad_mut(beta);
    for (int64_t c = 0; c < C; ++c) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* gp = &G.at(n, c, 0, 0);
        const T* xh = &xhat.at(n, c, 0, 0);
        for (int64_t i = 0; i < H * W; ++i) {
          sum_dy += gp[i];
          sum_dy_xhat += gp[i] * xh[i];
        }
      }
      dBE[c] += static_cast<T>(sum_dy);
      dGA[c] += static_cast<T>(sum_dy_xhat);
      const T scale = GA2[c] * inv[c];
      if (train) {
        const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(m));
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(m));
        for (int64_t n = 0; n < N; ++n) {
          const T* gp = &G.at(n, c, 0, 0);
          const T* xh = &xhat.at(n, c, 0, 0);
          T* dxp = &dX.at(n, c, 0, 0);
          for (int64_t i = 0; i < H * W; ++i) {
            dxp[i] += scale * (gp[i] - mean_dy - xh[i] * mean_dy_xhat);
          }
        }
      } else {
        for (int64_t n = 0; n < N; ++n) {
          const T* gp = &G.at(n, c, 0, 0);
          T* dxp = &dX.at(n, c, 0, 0);
          for (int64_t i = 0; i < H * W; ++i) dxp[i] += scale * gp[i];
        }
      }
    }
  };
  return add(OpKind::batchnorm, {x, gamma, beta}, std::move(out), std::move(back));
}

template <typename T>
TensorT<T> bilinear_up2x_tensor(const TensorT<T>& x) {
  const auto [N, C, H, W] = x.shape();
  if (H < 1 || W < 1) throw ShapeError("bilinear_up2x: empty spatial dims " + x.shape().str());
  const auto ay = up2x_axis(H);
  const auto ax = up2x_axis(W);
  TensorT<T> out(Shape{N, C, 2 * H, 2 * W});
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* p = &x.at(n, c, 0, 0);
      T* o = &out.at(n, c, 0, 0);
      for (int64_t oy = 0; oy < 2 * H; ++oy) {
        const Lin& ly = ay[oy];
        const T* r0 = p + ly.i0 * W;
        const T* r1 = p + ly.i1 * W;
        const T ty = static_cast<T>(ly.t);
        T* orow = o + oy * 2 * W;
        for (int64_t ox = 0; ox < 2 * W; ++ox) {
          const Lin& lx = ax[ox];
          const T tx = static_cast<T>(lx.t);
          const T top = r0[lx.i0] + tx * (r0[lx.i1] - r0[lx.i0]);
          const T bot = r1[lx.i0] + tx * (r1[lx.i1] - r1[lx.i0]);
          orow[ox] = top + ty * (bot - top);
        }
      }
    }
  }
  return out;
}

template <typename T>
int Graph<T>::bilinear_up2x(int x) {
  const TensorT<T>& X = value(x);
  TensorT<T> out = bilinear_up2x_tensor(X);
  const auto [N, C, H, W] = X.shape();
  const int out_id = static_cast<int>(nodes_.size());
  auto back = [x, out_id, N, C, H, W](Graph& g) {
    const TensorT<T>& G = g.grad(out_id);
    TensorT<T>& dX = g.grad_mut(x);
    const auto ay = up2x_axis(H);
    const auto ax = up2x_axis(W);
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        T* d = &dX.at(n, c, 0, 0);
        const T* go = &G.at(n, c, 0, 0);
        for (int64_t oy = 0; oy < 2 * H; ++oy) {
          const Lin& ly = ay[oy];
          const T ty = static_cast<T>(ly.t);
          const T* grow = go + oy * 2 * W;
          for (int64_t ox = 0; ox < 2 * W; ++ox) {
            const Lin& lx = ax[ox];
            const T tx = static_cast<T>(lx.t);
            const T gv = grow[ox];
            d[ly.i0 * W + lx.i0] += (T(1) - ty) * (T(1) - tx) * gv;
            d[ly.i0 * W + lx.i1] += (T(1) - ty) * tx * gv;
            d[ly.i1 * W + lx.i0] += ty * (T(1) - tx) * gv;
            d[ly.i1 * W + lx.i1] += ty * tx * gv;
          }
        }
      }
    }
  };
  return add(OpKind::bilinear_up2x, {x}, std::move(out), std::move(back));
}

template <typename T>
int Graph<T>::concat_channels(int a, int b) {
  const TensorT<T>& A = value(a);
  const TensorT<T>& B = value(b);
  if (A.shape().n != B.shape().n || A.shape().h != B.shape().h || A.shape().w != B.shape().w) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + shape_pair(A, B));
  }
  const auto [N, Ca, H, W] = A.shape();
  const int64_t Cb = B.shape().c;
  TensorT<T> out(Shape{N, Ca + Cb, H, W});
  const int64_t plane = H * W;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < Ca; ++c) {
      std::copy_n(&A.at(n, c, 0, 0), plane, &out.at(n, c, 0, 0));
    }
    for (int64_t c = 0; c < Cb; ++c) {
      std::copy_n(&B.at(n, c, 0, 0), plane, &out.at(n, Ca + c, 0, 0));
    }
  }
  const int out_id = static_cast<int>(nodes_.size());
  auto back = [a, b, out_id, N, Ca, Cb, plane](Graph& g) {
    const TensorT<T>& G = g.grad(out_id);
    TensorT<T>& dA = g.grad_mut(a);
    TensorT<T>& dB = g.grad_mut(b);
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < Ca; ++c) {
        const T* gp = &G.at(n, c, 0, 0);
        T* d = &dA.at(n, c, 0, 0);
        for (int64_t i = 0; i < plane; ++i) d[i] += gp[i];
      }
      for (int64_t c = 0; c < Cb; ++c) {
        const T* gp = &G.at(n, Ca + c, 0, 0);
        T* d = &dB.at(n, c, 0, 0);
        for (int64_t i = 0; i < plane; ++i) d[i] += gp[i];
      }
    }
  };
  return add(OpKind::concat_channels, {a, b}, std::move(out), std::move(back));
}

template <typename T>
int Graph<T>::gate_combine(int u, int v, GateMode mode) {
  const TensorT<T>& U = value(u);
  const TensorT<T>& V = value(v);
  if (!(U.shape() == V.shape())) {
    throw ShapeError("gate_combine: shape mismatch " + shape_pair(U, V));
  }
  TensorT<T> out(U.shape());
  if (mode == GateMode::mul) {
    for (int64_t i = 0; i < U.size(); ++i) out[i] = U[i] * V[i];
  } else {
    for (int64_t i = 0; i < U.size(); ++i) out[i] = U[i] + V[i];
  }
  const int out_id = static_cast<int>(nodes_.size());
  auto back = [u, v, out_id, mode](Graph& g) {
    const TensorT<T>& G = g.grad(out_id);
    TensorT<T>& dU = g.grad_mut(u);
    TensorT<T>& dV = g.grad_mut(v);
    if (mode == GateMode::mul) {
      const TensorT<T>& U2 = g.value(u);
      const TensorT<T>& V2 = g.value(v);
      for (int64_t i = 0; i < G.size(); ++i) {
        dU[i] += G[i] * V2[i];
        dV[i] += G[i] * U2[i];
      }
    } else {
      for (int64_t i = 0; i < G.size(); ++i) {
        dU[i] += G[i];
        dV[i] += G[i];
      }
    }
  };
  return add(OpKind::gate_combine, {u, v}, std::move(out), std::move(back));
}

template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& scores) {
  const auto [N, C, H, W] = scores.shape();
  TensorT<T> probs(scores.shape());
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        T mx = scores.at(n, 0, y, x);
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, scores.at(n, c, y, x));
        double sum = 0;
        for (int64_t c = 0; c < C; ++c) {
          const double e = std::exp(static_cast<double>(scores.at(n, c, y, x) - mx));
          probs.at(n, c, y, x) = static_cast<T>(e);
          sum += e;
        }
        for (int64_t c = 0; c < C; ++c) {
          probs.at(n, c, y, x) = static_cast<T>(probs.at(n, c, y, x) / sum);
        }
      }
    }
  }
  return probs;
}

template <typename T>
LabelMap argmax_channels(const TensorT<T>& scores) {
  const auto [N, C, H, W] = scores.shape();
  LabelMap out(N, H, W);
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        int32_t best = 0;
        T bv = scores.at(n, 0, y, x);
        for (int64_t c = 1; c < C; ++c) {
          if (scores.at(n, c, y, x) > bv) {
            bv = scores.at(n, c, y, x);
            best = static_cast<int32_t>(c);
          }
        }
        out.at(n, y, x) = best;
      }
    }
  }
  return out;
}

template <typename T>
int Graph<T>::softmax_xent(int scores, const LabelMap& target, std::vector<T> class_weights,
                           int ignore_index) {
  const TensorT<T>& S = value(scores);
  const auto [N, C, H, W] = S.shape();
  if (target.n != N || target.h != H || target.w != W) {
    throw ShapeError("softmax_xent: target dims (" + std::to_string(target.n) + "," +
                     std::to_string(target.h) + "," + std::to_string(target.w) +
                     ") do not match scores " + S.shape().str());
  }
  if (static_cast<int64_t>(class_weights.size()) != C) {
    throw ShapeError("softmax_xent: " + std::to_string(class_weights.size()) +
                     " class weights for " + std::to_string(C) + " classes");
  }
  for (const T& wt : class_weights) {
    if (!(wt >= T(0))) throw ShapeError("softmax_xent: negative class weight");
  }
  TensorT<T> probs = softmax_channels(S);
  double loss_sum = 0;
  int64_t valid = 0;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        const int32_t t = target.at(n, y, x);
        if (t == ignore_index) continue;
        if (t < 0 || t >= C) {
          throw DataError("softmax_xent: label " + std::to_string(t) + " out of range [0," +
                          std::to_string(C) + ") at pixel (n=" + std::to_string(n) + ",y=" +
                          std::to_string(y) + ",x=" + std::to_string(x) + ")");
        }
        loss_sum += class_weights[t] * -std::log(static_cast<double>(probs.at(n, t, y, x)));
        ++valid;
      }
    }
  }
  const double loss = valid > 0 ? loss_sum / static_cast<double>(valid) : 0.0;
  TensorT<T> out(Shape{1, 1, 1, 1});
  out[0] = static_cast<T>(loss);

  const int out_id = static_cast<int>(nodes_.size());
  LabelMap tgt = target;
  auto back = [scores, out_id, N, C, H, W, valid, ignore_index, tgt = std::move(tgt),
               wts = std::move(class_weights), probs = std::move(probs)](Graph& g) {
    if (valid == 0) return;
    const T go = g.grad(out_id)[0];
    TensorT<T>& dS = g.grad_mut(scores);
    const T norm = go / static_cast<T>(valid);
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
          const int32_t t = tgt.at(n, y, x);
          if (t == ignore_index) continue;
          const T coef = norm * wts[t];
          for (int64_t c = 0; c < C; ++c) {
            const T p = probs.at(n, c, y, x);
            dS.at(n, c, y, x) += coef * (p - (c == t ? T(1) : T(0)));
          }
        }
      }
    }
  };
  return add(OpKind::softmax_xent, {scores}, std::move(out), std::move(back));
}

template <typename T>
int Graph<T>::weighted_sum(std::vector<int> xs, std::vector<T> weights) {
  if (xs.empty() || xs.size() != weights.size()) {
    throw ShapeError("weighted_sum: need equal nonzero counts of inputs and weights");
  }
  const Shape s = value(xs[0]).shape();
  for (int id : xs) {
    if (!(value(id).shape() == s)) {
      throw ShapeError("weighted_sum: shape mismatch " + shape_pair(value(xs[0]), value(id)));
    }
  }
  TensorT<T> out(s);
  for (size_t k = 0; k < xs.size(); ++k) {
    const TensorT<T>& X = value(xs[k]);
    const T wv = weights[k];
    for (int64_t i = 0; i < out.size(); ++i) out[i] += wv * X[i];
  }
  const int out_id = static_cast<int>(nodes_.size());
  auto back = [xs, out_id, weights](Graph& g) {
    const TensorT<T>& G = g.grad(out_id);
    for (size_t k = 0; k < xs.size(); ++k) {
      TensorT<T>& dX = g.grad_mut(xs[k]);
      const T wv = weights[k];
      for (int64_t i = 0; i < G.size(); ++i) dX[i] += wv * G[i];
    }
  };
  return add(OpKind::weighted_sum, xs, std::move(out), std::move(back));
}

template <typename T>
void Graph<T>::backward(int root, const TensorT<T>* seed) {
  check(root);
  if (seed == nullptr && value(root).size() != 1) {
    throw ShapeError("backward: root must be scalar unless a seed gradient is given");
  }
  if (seed != nullptr && !(seed->shape() == value(root).shape())) {
    throw ShapeError("backward: seed shape " + seed->shape().str() + " does not match root " +
                     value(root).shape().str());
  }
  std::vector<char> reach(nodes_.size(), 0);
  std::vector<int> stack{root};
  reach[root] = 1;
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    for (int p : nodes_[id].parents) {
      if (!reach[p]) {
        reach[p] = 1;
        stack.push_back(p);
      }
    }
  }
  for (auto& node : nodes_) {
    node.grad = TensorT<T>(node.value.shape());
  }
  if (seed != nullptr) {
    nodes_[root].grad = *seed;
  } else {
    nodes_[root].grad[0] = T(1);
  }
  for (int i = root; i >= 0; --i) {
    if (reach[i] && nodes_[i].backprop) nodes_[i].backprop(*this);
  }
}

template struct BatchNormState<float>;
template struct BatchNormState<double>;
template class Graph<float>;
template class Graph<double>;
template TensorT<float> bilinear_up2x_tensor(const TensorT<float>&);
template TensorT<double> bilinear_up2x_tensor(const TensorT<double>&);
template TensorT<float> softmax_channels(const TensorT<float>&);
template TensorT<double> softmax_channels(const TensorT<double>&);
template LabelMap argmax_channels(const TensorT<float>&);
template LabelMap argmax_channels(const TensorT<double>&);

}  // namespace gfrnet
