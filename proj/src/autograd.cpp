#include "sergan/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace sergan {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

int conv_out(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

int deconv_out(int in, int k, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + k;
}

// Expands one [C,H,W] image into a [C*kh*kw, Ho*Wo] column matrix.
void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride,
            int pad, int Ho, int Wo, double* col) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        double* crow = col + (static_cast<std::size_t>((c * kh + i) * kw + j)) *
                                 (static_cast<std::size_t>(Ho) * Wo);
        for (int oh = 0; oh < Ho; ++oh) {
          int ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) {
            std::fill(crow + static_cast<std::size_t>(oh) * Wo,
                      crow + static_cast<std::size_t>(oh + 1) * Wo, 0.0);
            continue;
          }
          const double* xr = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            int iw = ow * stride - pad + j;
            crow[static_cast<std::size_t>(oh) * Wo + ow] =
                (iw < 0 || iw >= W) ? 0.0 : xr[iw];
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
void col2im_add(const double* col, int C, int H, int W, int kh, int kw,
                int stride, int pad, int Ho, int Wo, double* x) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const double* crow = col + (static_cast<std::size_t>((c * kh + i) * kw + j)) *
                                       (static_cast<std::size_t>(Ho) * Wo);
        for (int oh = 0; oh < Ho; ++oh) {
          int ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) continue;
          double* xr = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            int iw = ow * stride - pad + j;
            if (iw >= 0 && iw < W) xr[iw] += crow[static_cast<std::size_t>(oh) * Wo + ow];
          }
        }
      }
    }
  }
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::push(Tensor value, bool requires_grad) {
  Node nd;
  nd.owned = std::move(value);
  nd.requires_grad = requires_grad;
  nodes_.push_back(std::move(nd));
  return static_cast<Var>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(Var v) {
  Node& nd = node(v);
  if (!nd.grad_live) {
    const Tensor& val = value(v);
    if (!nd.grad.same_shape(val)) nd.grad = Tensor(val.shape());
    else nd.grad.zero();
    nd.grad_live = true;
  }
  return nd.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& nd = node(v);
  if (!nd.grad_live) throw std::runtime_error("Tape::grad: no gradient recorded");
  return nd.grad;
}

double Tape::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.numel() != 1) throw std::runtime_error("Tape::scalar: not a scalar node");
  return t[0];
}

void Tape::accum(Var v, const Tensor& g) {
  if (!node(v).requires_grad) return;
  Tensor& buf = grad_buf(v);
  const std::size_t n = buf.numel();
  double* d = buf.data();
  const double* s = g.data();
  for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

void Tape::backward(Var loss) {
  if (value(loss).numel() != 1)
    throw std::invalid_argument("Tape::backward: loss must be a single element");
  if (!node(loss).requires_grad)
    throw std::runtime_error("Tape::backward: loss has no trainable dependencies");
  grad_buf(loss)[0] = 1.0;
  for (Var v = static_cast<Var>(nodes_.size()) - 1; v >= 0; --v) {
    Node& nd = node(v);
    if (!nd.requires_grad || !nd.grad_live || !nd.backprop) continue;
    nd.backprop(*this);
  }
}

// --------------------------------------------------------------------------
// leaves
// --------------------------------------------------------------------------

Var Tape::constant(Tensor v) { return push(std::move(v), false); }

Var Tape::param(Parameter& p, bool trainable) {
  Node nd;
  nd.pval = &p.value;
  nd.pparam = &p;
  nd.requires_grad = trainable;
  nodes_.push_back(std::move(nd));
  Var v = static_cast<Var>(nodes_.size() - 1);
  if (trainable) {
    node(v).backprop = [v](Tape& t) {
      Node& n = t.node(v);
      const std::size_t m = n.grad.numel();
      double* dst = n.pparam->grad.data();
      const double* src = n.grad.data();
      for (std::size_t i = 0; i < m; ++i) dst[i] += src[i];
    };
  }
  return v;
}

// --------------------------------------------------------------------------
// structure
// --------------------------------------------------------------------------

Var Tape::reshape(Var x, std::vector<int> shape) {
  Tensor out = value(x).reshaped(std::move(shape));
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x](Tape& t) {
      const Tensor& g = t.node(v).grad;
      if (!t.node(x).requires_grad) return;
      Tensor& gx = t.grad_buf(x);
      double* d = gx.data();
      const double* s = g.data();
      for (std::size_t i = 0; i < gx.numel(); ++i) d[i] += s[i];
    };
  }
  return v;
}

Var Tape::time_slice(Var x, int t_idx) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4) throw std::invalid_argument("time_slice: expected [N,C,T,B]");
  const int N = xv.dim(0), C = xv.dim(1), T = xv.dim(2), B = xv.dim(3);
  if (t_idx < 0 || t_idx >= T) throw std::invalid_argument("time_slice: t out of range");
  Tensor out({N, C * B});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int b = 0; b < B; ++b)
        out[static_cast<std::size_t>(n) * C * B + c * B + b] =
            xv[((static_cast<std::size_t>(n) * C + c) * T + t_idx) * B + b];
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, N, C, T, B, t_idx](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      Tensor& gx = t.grad_buf(x);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int b = 0; b < B; ++b)
            gx[((static_cast<std::size_t>(n) * C + c) * T + t_idx) * B + b] +=
                g[static_cast<std::size_t>(n) * C * B + c * B + b];
    };
  }
  return v;
}

Var Tape::cols(Var x, int from, int len) {
  const Tensor& xv = value(x);
  if (xv.rank() != 2) throw std::invalid_argument("cols: expected [N,M]");
  const int N = xv.dim(0), M = xv.dim(1);
  if (from < 0 || len <= 0 || from + len > M) throw std::invalid_argument("cols: range");
  Tensor out({N, len});
  for (int n = 0; n < N; ++n)
    std::memcpy(out.data() + static_cast<std::size_t>(n) * len,
                xv.data() + static_cast<std::size_t>(n) * M + from,
                static_cast<std::size_t>(len) * sizeof(double));
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, N, M, from, len](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      Tensor& gx = t.grad_buf(x);
      for (int n = 0; n < N; ++n)
        for (int j = 0; j < len; ++j)
          gx[static_cast<std::size_t>(n) * M + from + j] +=
              g[static_cast<std::size_t>(n) * len + j];
    };
  }
  return v;
}

Var Tape::stack_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_cols: empty input");
  const int N = value(xs[0]).dim(0);
  const int K = static_cast<int>(xs.size());
  bool rg = false;
  for (Var x : xs) {
    const Tensor& xv = value(x);
    if (xv.rank() != 1 || xv.dim(0) != N)
      throw std::invalid_argument("stack_cols: inputs must all be [N]");
    rg = rg || node(x).requires_grad;
  }
  Tensor out({N, K});
  for (int j = 0; j < K; ++j) {
    const Tensor& xv = value(xs[static_cast<std::size_t>(j)]);
    for (int n = 0; n < N; ++n) out[static_cast<std::size_t>(n) * K + j] = xv[static_cast<std::size_t>(n)];
  }
  Var v = push(std::move(out), rg);
  if (rg) {
    std::vector<Var> ins = xs;
    node(v).backprop = [v, ins, N, K](Tape& t) {
      const Tensor& g = t.node(v).grad;
      for (int j = 0; j < K; ++j) {
        Var x = ins[static_cast<std::size_t>(j)];
        if (!t.node(x).requires_grad) continue;
        Tensor& gx = t.grad_buf(x);
        for (int n = 0; n < N; ++n) gx[static_cast<std::size_t>(n)] += g[static_cast<std::size_t>(n) * K + j];
      }
    };
  }
  return v;
}

Var Tape::col(Var x, int t_idx) {
  const Tensor& xv = value(x);
  if (xv.rank() != 2) throw std::invalid_argument("col: expected [N,T]");
  const int N = xv.dim(0), T = xv.dim(1);
  if (t_idx < 0 || t_idx >= T) throw std::invalid_argument("col: index out of range");
  Tensor out({N});
  for (int n = 0; n < N; ++n) out[static_cast<std::size_t>(n)] = xv[static_cast<std::size_t>(n) * T + t_idx];
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, N, T, t_idx](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      Tensor& gx = t.grad_buf(x);
      for (int n = 0; n < N; ++n) gx[static_cast<std::size_t>(n) * T + t_idx] += g[static_cast<std::size_t>(n)];
    };
  }
  return v;
}

// --------------------------------------------------------------------------
// arithmetic
// --------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, a, b](Tape& t) {
      const Tensor& g = t.node(v).grad;
      t.accum(a, g);
      t.accum(b, g);
    };
  }
  return v;
}

Var Tape::sub(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, a, b](Tape& t) {
      const Tensor& g = t.node(v).grad;
      t.accum(a, g);
      if (t.node(b).requires_grad) {
        Tensor& gb = t.grad_buf(b);
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
      }
    };
  }
  return v;
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, a, b](Tape& t) {
      const Tensor& g = t.node(v).grad;
      const Tensor& av2 = t.value(a);
      const Tensor& bv2 = t.value(b);
      if (t.node(a).requires_grad) {
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (t.node(b).requires_grad) {
        Tensor& gb = t.grad_buf(b);
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[i] * av2[i];
      }
    };
  }
  return v;
}

Var Tape::scale(Var a, double c) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * c;
  bool rg = node(a).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, a, c](Tape& t) {
      if (!t.node(a).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * c;
    };
  }
  return v;
}

Var Tape::row_scale(Var x, Var s) {
  const Tensor& xv = value(x);
  const Tensor& sv = value(s);
  if (xv.rank() != 2 || sv.rank() != 1 || sv.dim(0) != xv.dim(0))
    throw std::invalid_argument("row_scale: expected x[N,H], s[N]");
  const int N = xv.dim(0), H = xv.dim(1);
  Tensor out({N, H});
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      out[static_cast<std::size_t>(n) * H + h] = xv[static_cast<std::size_t>(n) * H + h] * sv[static_cast<std::size_t>(n)];
  bool rg = node(x).requires_grad || node(s).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, s, N, H](Tape& t) {
      const Tensor& g = t.node(v).grad;
      const Tensor& xv2 = t.value(x);
      const Tensor& sv2 = t.value(s);
      if (t.node(x).requires_grad) {
        Tensor& gx = t.grad_buf(x);
        for (int n = 0; n < N; ++n)
          for (int h = 0; h < H; ++h)
            gx[static_cast<std::size_t>(n) * H + h] += g[static_cast<std::size_t>(n) * H + h] * sv2[static_cast<std::size_t>(n)];
      }
      if (t.node(s).requires_grad) {
        Tensor& gs = t.grad_buf(s);
        for (int n = 0; n < N; ++n) {
          double acc = 0.0;
          for (int h = 0; h < H; ++h)
            acc += g[static_cast<std::size_t>(n) * H + h] * xv2[static_cast<std::size_t>(n) * H + h];
          gs[static_cast<std::size_t>(n)] += acc;
        }
      }
    };
  }
  return v;
}

// --------------------------------------------------------------------------
// neural net ops
// --------------------------------------------------------------------------

Var Tape::linear(Var x, Var w, Var b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("linear: expected x[N,F], w[O,F], F matching, got x" +
                                Tensor::shape_str(xv.shape()) + " w" + Tensor::shape_str(wv.shape()));
  const int N = xv.dim(0), F = xv.dim(1), O = wv.dim(0);
  Tensor out({N, O});
  {
    CMatMap X(xv.data(), N, F);
    CMatMap W(wv.data(), O, F);
    MatMap Y(out.data(), N, O);
    Y.noalias() = X * W.transpose();
    if (b >= 0) {
      const Tensor& bv = value(b);
      if (bv.rank() != 1 || bv.dim(0) != O) throw std::invalid_argument("linear: bad bias shape");
      CVecMap bm(bv.data(), O);
      Y.rowwise() += bm.transpose();
    }
  }
  bool rg = node(x).requires_grad || node(w).requires_grad ||
            (b >= 0 && node(b).requires_grad);
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, w, b, N, F, O](Tape& t) {
      const Tensor& g = t.node(v).grad;
      CMatMap G(g.data(), N, O);
      if (t.node(x).requires_grad) {
        CMatMap W(t.value(w).data(), O, F);
        MatMap GX(t.grad_buf(x).data(), N, F);
        GX.noalias() += G * W;
      }
      if (t.node(w).requires_grad) {
        CMatMap X(t.value(x).data(), N, F);
        MatMap GW(t.grad_buf(w).data(), O, F);
        GW.noalias() += G.transpose() * X;
      }
      if (b >= 0 && t.node(b).requires_grad) {
        VecMap GB(t.grad_buf(b).data(), O);
        GB.noalias() += G.colwise().sum().transpose();
      }
    };
  }
  return v;
}

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("conv2d: expected x[N,Ci,H,W], w[Co,Ci,kh,kw], got x" +
                                Tensor::shape_str(xv.shape()) + " w" + Tensor::shape_str(wv.shape()));
  const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int Ho = conv_out(H, kh, stride, pad), Wo = conv_out(W, kw, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output would be empty");
  const int K = Ci * kh * kw, P = Ho * Wo;

  Tensor out({N, Co, Ho, Wo});
  DVec colbuf(static_cast<std::size_t>(K) * P);
  {
    CMatMap Wm(wv.data(), Co, K);
    for (int n = 0; n < N; ++n) {
      im2col(xv.data() + static_cast<std::size_t>(n) * Ci * H * W, Ci, H, W, kh, kw,
             stride, pad, Ho, Wo, colbuf.data());
      CMatMap Col(colbuf.data(), K, P);
      MatMap Y(out.data() + static_cast<std::size_t>(n) * Co * P, Co, P);
      Y.noalias() = Wm * Col;
      if (b >= 0) {
        const Tensor& bv = value(b);
        CVecMap bm(bv.data(), Co);
        Y.colwise() += bm;
      }
    }
  }
  bool rg = node(x).requires_grad || node(w).requires_grad ||
            (b >= 0 && node(b).requires_grad);
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, w, b, N, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo, K,
                        P](Tape& t) {
      const Tensor& g = t.node(v).grad;
      const Tensor& xv2 = t.value(x);
      const Tensor& wv2 = t.value(w);
      const bool need_x = t.node(x).requires_grad;
      const bool need_w = t.node(w).requires_grad;
      const bool need_b = b >= 0 && t.node(b).requires_grad;
      DVec colbuf2(static_cast<std::size_t>(K) * P);
      DVec dcol(need_x ? static_cast<std::size_t>(K) * P : 0);
      for (int n = 0; n < N; ++n) {
        CMatMap G(g.data() + static_cast<std::size_t>(n) * Co * P, Co, P);
        if (need_w || need_x) {
          if (need_w) {
            im2col(xv2.data() + static_cast<std::size_t>(n) * Ci * H * W, Ci, H, W, kh,
                   kw, stride, pad, Ho, Wo, colbuf2.data());
            CMatMap Col(colbuf2.data(), K, P);
            MatMap GW(t.grad_buf(w).data(), Co, K);
            GW.noalias() += G * Col.transpose();
          }
          if (need_x) {
            CMatMap Wm(wv2.data(), Co, K);
            MatMap DCol(dcol.data(), K, P);
            DCol.noalias() = Wm.transpose() * G;
            col2im_add(dcol.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                       t.grad_buf(x).data() + static_cast<std::size_t>(n) * Ci * H * W);
          }
        }
        if (need_b) {
          VecMap GB(t.grad_buf(b).data(), Co);
          GB.noalias() += G.rowwise().sum();
        }
      }
    };
  }
  return v;
}

Var Tape::deconv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(0))
    throw std::invalid_argument("deconv2d: expected x[N,Ci,H,W], w[Ci,Co,kh,kw], got x" +
                                Tensor::shape_str(xv.shape()) + " w" + Tensor::shape_str(wv.shape()));
  const int N = xv.dim(0), Ci = xv.dim(1), Hi = xv.dim(2), Wi = xv.dim(3);
  const int Co = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  const int Ho = deconv_out(Hi, kh, stride, pad), Wo = deconv_out(Wi, kw, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("deconv2d: output would be empty");
  const int K = Co * kh * kw, P = Hi * Wi;

  Tensor out({N, Co, Ho, Wo});
  DVec colbuf(static_cast<std::size_t>(K) * P);
  {
    // weight viewed as [Ci, Co*kh*kw]
    CMatMap Wm(wv.data(), Ci, K);
    for (int n = 0; n < N; ++n) {
      CMatMap X(xv.data() + static_cast<std::size_t>(n) * Ci * P, Ci, P);
      MatMap Col(colbuf.data(), K, P);
      Col.noalias() = Wm.transpose() * X;
      double* y = out.data() + static_cast<std::size_t>(n) * Co * Ho * Wo;
      col2im_add(colbuf.data(), Co, Ho, Wo, kh, kw, stride, pad, Hi, Wi, y);
      if (b >= 0) {
        const Tensor& bv = value(b);
        for (int c = 0; c < Co; ++c) {
          double bc = bv[static_cast<std::size_t>(c)];
          double* yc = y + static_cast<std::size_t>(c) * Ho * Wo;
          for (int i = 0; i < Ho * Wo; ++i) yc[i] += bc;
        }
      }
    }
  }
  bool rg = node(x).requires_grad || node(w).requires_grad ||
            (b >= 0 && node(b).requires_grad);
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, w, b, N, Ci, Hi, Wi, Co, kh, kw, stride, pad, Ho, Wo, K,
                        P](Tape& t) {
      const Tensor& g = t.node(v).grad;
      const bool need_x = t.node(x).requires_grad;
      const bool need_w = t.node(w).requires_grad;
      const bool need_b = b >= 0 && t.node(b).requires_grad;
      DVec dcol(static_cast<std::size_t>(K) * P);
      for (int n = 0; n < N; ++n) {
        const double* gn = g.data() + static_cast<std::size_t>(n) * Co * Ho * Wo;
        if (need_x || need_w) {
          im2col(gn, Co, Ho, Wo, kh, kw, stride, pad, Hi, Wi, dcol.data());
          CMatMap DCol(dcol.data(), K, P);
          if (need_x) {
            CMatMap Wm(t.value(w).data(), Ci, K);
            MatMap GX(t.grad_buf(x).data() + static_cast<std::size_t>(n) * Ci * P, Ci, P);
            GX.noalias() += Wm * DCol;
          }
          if (need_w) {
            CMatMap X(t.value(x).data() + static_cast<std::size_t>(n) * Ci * P, Ci, P);
            MatMap GW(t.grad_buf(w).data(), Ci, K);
            GW.noalias() += X * DCol.transpose();
          }
        }
        if (need_b) {
          Tensor& gb = t.grad_buf(b);
          for (int c = 0; c < Co; ++c) {
            const double* gc = gn + static_cast<std::size_t>(c) * Ho * Wo;
            double acc = 0.0;
            for (int i = 0; i < Ho * Wo; ++i) acc += gc[i];
            gb[static_cast<std::size_t>(c)] += acc;
          }
        }
      }
    };
  }
  return v;
}

Var Tape::maxpool2(Var x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4) throw std::invalid_argument("maxpool2: expected [N,C,H,W]");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  if (Ho == 0 || Wo == 0) throw std::invalid_argument("maxpool2: input too small");
  Tensor out({N, C, Ho, Wo});
  std::vector<std::int32_t> arg(out.numel());
  std::size_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* xp = xv.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow, ++o) {
          int base = (oh * 2) * W + ow * 2;
          int best = base;
          double bv = xp[base];
          const int cand[3] = {base + 1, base + W, base + W + 1};
          for (int idx : cand)
            if (xp[idx] > bv) { bv = xp[idx]; best = idx; }
          out[o] = bv;
          arg[o] = best;
        }
    }
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, N, C, H, W, Ho, Wo, arg = std::move(arg)](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      Tensor& gx = t.grad_buf(x);
      std::size_t o = 0;
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          double* gp = gx.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int i = 0; i < Ho * Wo; ++i, ++o) gp[arg[o]] += g[o];
        }
    };
  }
  return v;
}

Var Tape::relu(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  // NaN inputs stay NaN so that divergence cannot hide behind the cutoff
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double v = xv[i];
    out[i] = std::isnan(v) ? v : (v > 0.0 ? v : 0.0);
  }
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      const Tensor& xv2 = t.value(x);
      Tensor& gx = t.grad_buf(x);
      for (std::size_t i = 0; i < gx.numel(); ++i)
        if (xv2[i] > 0.0) gx[i] += g[i];
    };
  }
  return v;
}

Var Tape::leaky_relu(Var x, double alpha) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = xv[i] > 0.0 ? xv[i] : alpha * xv[i];
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, alpha](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      const Tensor& xv2 = t.value(x);
      Tensor& gx = t.grad_buf(x);
      for (std::size_t i = 0; i < gx.numel(); ++i)
        gx[i] += g[i] * (xv2[i] > 0.0 ? 1.0 : alpha);
    };
  }
  return v;
}

Var Tape::sigmoid(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(xv[i]);
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      const Tensor& yv = t.value(v);
      Tensor& gx = t.grad_buf(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
    };
  }
  return v;
}

Var Tape::tanh_op(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(xv[i]);
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      const Tensor& yv = t.value(v);
      Tensor& gx = t.grad_buf(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
    };
  }
  return v;
}

Var Tape::softplus(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_softplus(xv[i]);
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      const Tensor& xv2 = t.value(x);
      Tensor& gx = t.grad_buf(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[i] * stable_sigmoid(xv2[i]);
    };
  }
  return v;
}

Var Tape::clamp01(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(xv[i], 0.0, 1.0);
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      const Tensor& xv2 = t.value(x);
      Tensor& gx = t.grad_buf(x);
      for (std::size_t i = 0; i < gx.numel(); ++i)
        if (xv2[i] > 0.0 && xv2[i] < 1.0) gx[i] += g[i];
    };
  }
  return v;
}

Var Tape::softmax_rows(Var x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 2) throw std::invalid_argument("softmax_rows: expected [N,K]");
  const int N = xv.dim(0), K = xv.dim(1);
  Tensor out({N, K});
  for (int n = 0; n < N; ++n) {
    const double* r = xv.data() + static_cast<std::size_t>(n) * K;
    double* o = out.data() + static_cast<std::size_t>(n) * K;
    double m = r[0];
    for (int k = 1; k < K; ++k) m = std::max(m, r[k]);
    double s = 0.0;
    for (int k = 0; k < K; ++k) { o[k] = std::exp(r[k] - m); s += o[k]; }
    for (int k = 0; k < K; ++k) o[k] /= s;
  }
  bool rg = node(x).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, x, N, K](Tape& t) {
      if (!t.node(x).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      const Tensor& yv = t.value(v);
      Tensor& gx = t.grad_buf(x);
      for (int n = 0; n < N; ++n) {
        const double* gr = g.data() + static_cast<std::size_t>(n) * K;
        const double* yr = yv.data() + static_cast<std::size_t>(n) * K;
        double dotgy = 0.0;
        for (int k = 0; k < K; ++k) dotgy += gr[k] * yr[k];
        double* gxr = gx.data() + static_cast<std::size_t>(n) * K;
        for (int k = 0; k < K; ++k) gxr[k] += yr[k] * (gr[k] - dotgy);
      }
    };
  }
  return v;
}

// --------------------------------------------------------------------------
// reductions / losses
// --------------------------------------------------------------------------

Var Tape::mean_all(Var x) {
  const Tensor& xv = value(x);
  const std::size_t M = xv.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < M; ++i) s += xv[i];
  bool rg = node(x).requires_grad;
  Var v = push(Tensor::scalar(s / static_cast<double>(M)), rg);
  if (rg) {
    node(v).backprop = [v, x, M](Tape& t) {
      if (!t.node(x).requires_grad) return;
      double g = t.node(v).grad[0] / static_cast<double>(M);
      Tensor& gx = t.grad_buf(x);
      for (std::size_t i = 0; i < M; ++i) gx[i] += g;
    };
  }
  return v;
}

Var Tape::l1_dist_rows(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || !av.same_shape(bv))
    throw std::invalid_argument("l1_dist_rows: expected matching [N,D]");
  const int N = av.dim(0), D = av.dim(1);
  Tensor out({N});
  for (int n = 0; n < N; ++n) {
    double s = 0.0;
    const double* ar = av.data() + static_cast<std::size_t>(n) * D;
    const double* br = bv.data() + static_cast<std::size_t>(n) * D;
    for (int d = 0; d < D; ++d) s += std::abs(ar[d] - br[d]);
    out[static_cast<std::size_t>(n)] = s;
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, a, b, N, D](Tape& t) {
      const Tensor& g = t.node(v).grad;
      const Tensor& av2 = t.value(a);
      const Tensor& bv2 = t.value(b);
      const bool na = t.node(a).requires_grad, nb = t.node(b).requires_grad;
      Tensor* ga = na ? &t.grad_buf(a) : nullptr;
      Tensor* gb = nb ? &t.grad_buf(b) : nullptr;
      for (int n = 0; n < N; ++n) {
        double gn = g[static_cast<std::size_t>(n)];
        for (int d = 0; d < D; ++d) {
          std::size_t i = static_cast<std::size_t>(n) * D + d;
          double diff = av2[i] - bv2[i];
          double sg = (diff > 0.0) ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          if (na) (*ga)[i] += gn * sg;
          if (nb) (*gb)[i] -= gn * sg;
        }
      }
    };
  }
  return v;
}

Var Tape::dot_rows(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || !av.same_shape(bv))
    throw std::invalid_argument("dot_rows: expected matching [N,D]");
  const int N = av.dim(0), D = av.dim(1);
  Tensor out({N});
  for (int n = 0; n < N; ++n) {
    CVecMap ar(av.data() + static_cast<std::size_t>(n) * D, D);
    CVecMap br(bv.data() + static_cast<std::size_t>(n) * D, D);
    out[static_cast<std::size_t>(n)] = ar.dot(br);
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, a, b, N, D](Tape& t) {
      const Tensor& g = t.node(v).grad;
      const Tensor& av2 = t.value(a);
      const Tensor& bv2 = t.value(b);
      for (int n = 0; n < N; ++n) {
        double gn = g[static_cast<std::size_t>(n)];
        if (t.node(a).requires_grad) {
          Tensor& ga = t.grad_buf(a);
          for (int d = 0; d < D; ++d)
            ga[static_cast<std::size_t>(n) * D + d] += gn * bv2[static_cast<std::size_t>(n) * D + d];
        }
        if (t.node(b).requires_grad) {
          Tensor& gb = t.grad_buf(b);
          for (int d = 0; d < D; ++d)
            gb[static_cast<std::size_t>(n) * D + d] += gn * av2[static_cast<std::size_t>(n) * D + d];
        }
      }
    };
  }
  return v;
}

Var Tape::cosine_rows(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || !av.same_shape(bv))
    throw std::invalid_argument("cosine_rows: expected matching [N,D]");
  const int N = av.dim(0), D = av.dim(1);
  Tensor out({N});
  std::vector<double> na(static_cast<std::size_t>(N)), nb(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    CVecMap ar(av.data() + static_cast<std::size_t>(n) * D, D);
    CVecMap br(bv.data() + static_cast<std::size_t>(n) * D, D);
    na[static_cast<std::size_t>(n)] = ar.norm();
    nb[static_cast<std::size_t>(n)] = br.norm();
    if (na[static_cast<std::size_t>(n)] == 0.0 || nb[static_cast<std::size_t>(n)] == 0.0)
      throw std::invalid_argument("cosine_rows: zero vector");
    out[static_cast<std::size_t>(n)] = ar.dot(br) / (na[static_cast<std::size_t>(n)] * nb[static_cast<std::size_t>(n)]);
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, a, b, N, D, na = std::move(na), nb = std::move(nb)](Tape& t) {
      const Tensor& g = t.node(v).grad;
      const Tensor& yv = t.value(v);
      const Tensor& av2 = t.value(a);
      const Tensor& bv2 = t.value(b);
      for (int n = 0; n < N; ++n) {
        double gn = g[static_cast<std::size_t>(n)];
        double c = yv[static_cast<std::size_t>(n)];
        double inv_ab = 1.0 / (na[static_cast<std::size_t>(n)] * nb[static_cast<std::size_t>(n)]);
        double inv_a2 = 1.0 / (na[static_cast<std::size_t>(n)] * na[static_cast<std::size_t>(n)]);
        double inv_b2 = 1.0 / (nb[static_cast<std::size_t>(n)] * nb[static_cast<std::size_t>(n)]);
        for (int d = 0; d < D; ++d) {
          std::size_t i = static_cast<std::size_t>(n) * D + d;
          if (t.node(a).requires_grad)
            t.grad_buf(a)[i] += gn * (bv2[i] * inv_ab - c * av2[i] * inv_a2);
          if (t.node(b).requires_grad)
            t.grad_buf(b)[i] += gn * (av2[i] * inv_ab - c * bv2[i] * inv_b2);
        }
      }
    };
  }
  return v;
}

Var Tape::cross_entropy_rows(Var logits, const std::vector<int>& targets) {
  const Tensor& lv = value(logits);
  if (lv.rank() != 2) throw std::invalid_argument("cross_entropy_rows: expected [N,K]");
  const int N = lv.dim(0), K = lv.dim(1);
  if (static_cast<int>(targets.size()) != N)
    throw std::invalid_argument("cross_entropy_rows: target count mismatch");
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    int tgt = targets[static_cast<std::size_t>(n)];
    if (tgt < 0 || tgt >= K) throw std::invalid_argument("cross_entropy_rows: bad target");
    const double* r = lv.data() + static_cast<std::size_t>(n) * K;
    double m = r[0];
    for (int k = 1; k < K; ++k) m = std::max(m, r[k]);
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += std::exp(r[k] - m);
    total += m + std::log(s) - r[tgt];
  }
  bool rg = node(logits).requires_grad;
  Var v = push(Tensor::scalar(total / N), rg);
  if (rg) {
    node(v).backprop = [v, logits, targets, N, K](Tape& t) {
      if (!t.node(logits).requires_grad) return;
      double g = t.node(v).grad[0] / N;
      const Tensor& lv2 = t.value(logits);
      Tensor& gx = t.grad_buf(logits);
      for (int n = 0; n < N; ++n) {
        const double* r = lv2.data() + static_cast<std::size_t>(n) * K;
        double* gr = gx.data() + static_cast<std::size_t>(n) * K;
        double m = r[0];
        for (int k = 1; k < K; ++k) m = std::max(m, r[k]);
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += std::exp(r[k] - m);
        for (int k = 0; k < K; ++k) {
          double p = std::exp(r[k] - m) / s;
          gr[k] += g * (p - (k == targets[static_cast<std::size_t>(n)] ? 1.0 : 0.0));
        }
      }
    };
  }
  return v;
}

Var Tape::project_l1_rows(Var p, const std::vector<double>& eps) {
  const Tensor& pv = value(p);
  if (pv.rank() < 2) throw std::invalid_argument("project_l1_rows: expected batched input");
  const int N = pv.dim(0);
  if (static_cast<int>(eps.size()) != N)
    throw std::invalid_argument("project_l1_rows: eps count mismatch");
  const std::size_t M = pv.numel() / static_cast<std::size_t>(N);
  Tensor out(pv.shape());
  std::vector<double> norms(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    const double* r = pv.data() + static_cast<std::size_t>(n) * M;
    double s = 0.0;
    for (std::size_t i = 0; i < M; ++i) s += std::abs(r[i]);
    norms[static_cast<std::size_t>(n)] = s;
    double* o = out.data() + static_cast<std::size_t>(n) * M;
    if (s == 0.0) {
      std::fill(o, o + M, 0.0);
    } else {
      double c = eps[static_cast<std::size_t>(n)] * static_cast<double>(M) / s;
      for (std::size_t i = 0; i < M; ++i) o[i] = c * r[i];
    }
  }
  bool rg = node(p).requires_grad;
  Var v = push(std::move(out), rg);
  if (rg) {
    node(v).backprop = [v, p, eps, N, M, norms = std::move(norms)](Tape& t) {
      if (!t.node(p).requires_grad) return;
      const Tensor& g = t.node(v).grad;
      const Tensor& pv2 = t.value(p);
      Tensor& gp = t.grad_buf(p);
      for (int n = 0; n < N; ++n) {
        double s = norms[static_cast<std::size_t>(n)];
        if (s == 0.0) continue;
        double c = eps[static_cast<std::size_t>(n)] * static_cast<double>(M);
        const double* gr = g.data() + static_cast<std::size_t>(n) * M;
        const double* pr = pv2.data() + static_cast<std::size_t>(n) * M;
        double* gpr = gp.data() + static_cast<std::size_t>(n) * M;
        double gdotp = 0.0;
        for (std::size_t i = 0; i < M; ++i) gdotp += gr[i] * pr[i];
        double cs = c / s;
        double cs2 = c / (s * s) * gdotp;
        for (std::size_t i = 0; i < M; ++i) {
          double sg = (pr[i] > 0.0) ? 1.0 : (pr[i] < 0.0 ? -1.0 : 0.0);
          gpr[i] += cs * gr[i] - cs2 * sg;
        }
      }
    };
  }
  return v;
}

}  // namespace sergan
