#include "uspg/tape.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace uspg {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// (Ci,H,W) -> (Ci*9, H*W) patch matrix for a 3x3 stencil with zero padding.
void im2col3x3(const Tensor& x, std::vector<double>& out) {
  const int ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  out.assign(static_cast<size_t>(ci * 9 * h * w), 0.0);
  const double* src = x.data();
  for (int c = 0; c < ci; ++c) {
    for (int k = 0; k < 9; ++k) {
      const int dy = k / 3 - 1, dx = k % 3 - 1;
      double* row = out.data() + static_cast<size_t>((c * 9 + k) * h * w);
      const double* plane = src + static_cast<size_t>(c * h * w);
      for (int y = 0; y < h; ++y) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        const double* s = plane + static_cast<size_t>(sy * w);
        double* d = row + static_cast<size_t>(y * w);
        for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx + dx];
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w) {
  if (x.shape().rank != 3 || w.shape().rank != 4)
    throw std::invalid_argument("conv2d: x must be (Ci,H,W), w (Co,Ci,3,3)");
  const int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int co = w.shape()[0];
  if (w.shape()[1] != ci || w.shape()[2] != 3 || w.shape()[3] != 3)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  std::vector<double> cols;
  im2col3x3(x, cols);
  Tensor y{Shape{co, h, wd}};
  const int k = ci * 9, n = h * wd;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, co, n, k, 1.0,
              w.data(), k, cols.data(), n, 0.0, y.data(), n);
  return y;
}

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw std::logic_error("tape: invalid var");
  return nodes_[static_cast<size_t>(v.id)];
}
const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw std::logic_error("tape: invalid var");
  return nodes_[static_cast<size_t>(v.id)];
}

Var Tape::push(Tensor value, std::function<void(Tape&, Var)> bw, bool is_param) {
  Node n;
  n.grad = Tensor{value.shape()};
  n.value = std::move(value);
  n.backward = std::move(bw);
  n.is_param = is_param;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor t) { return push(std::move(t), nullptr); }
Var Tape::param(Tensor t) { return push(std::move(t), nullptr, true); }

const Tensor& Tape::value(Var v) const { return node(v).value; }
const Tensor& Tape::grad(Var v) const { return node(v).grad; }
bool Tape::is_param(Var v) const { return node(v).is_param; }

void Tape::accumulate_grad(Var v, const Tensor& g) {
  Tensor& dst = node(v).grad;
  check_same_shape(dst, g, "accumulate_grad");
  for (int i = 0; i < dst.size(); ++i) dst[i] += g[i];
}
void Tape::accumulate_grad(Var v, int index, double g) {
  node(v).grad[index] += g;
}

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] += value(b)[i];
  return push(std::move(out), [a, b](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    t.accumulate_grad(a, g);
    t.accumulate_grad(b, g);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] -= value(b)[i];
  return push(std::move(out), [a, b](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    Tensor& ga = t.node(a).grad;
    Tensor& gb = t.node(b).grad;
    for (int i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] *= value(b)[i];
  return push(std::move(out), [a, b](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    Tensor& ga = t.node(a).grad;
    Tensor& gb = t.node(b).grad;
    for (int i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb[i];
      gb[i] += g[i] * va[i];
    }
  });
}

Var Tape::divide(Var a, Var b) {
  check_same_shape(value(a), value(b), "divide");
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] /= value(b)[i];
  return push(std::move(out), [a, b](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    Tensor& ga = t.node(a).grad;
    Tensor& gb = t.node(b).grad;
    for (int i = 0; i < g.size(); ++i) {
      const double inv = 1.0 / vb[i];
      ga[i] += g[i] * inv;
      gb[i] -= g[i] * va[i] * inv * inv;
    }
  });
}

Var Tape::scale(Var a, double s) {
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] *= s;
  return push(std::move(out), [a, s](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    Tensor& ga = t.node(a).grad;
    for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var Tape::add_scalar(Var a, double s) {
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] += s;
  return push(std::move(out), [a](Tape& t, Var o) {
    t.accumulate_grad(a, t.grad(o));
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return push(std::move(out), [a](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    const Tensor& va = t.value(a);
    Tensor& ga = t.node(a).grad;
    for (int i = 0; i < g.size(); ++i)
      if (va[i] > 0.0) ga[i] += g[i];
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return push(std::move(out), [a](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    const Tensor& vo = t.value(o);
    Tensor& ga = t.node(a).grad;
    for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * vo[i] * (1.0 - vo[i]);
  });
}

Var Tape::abs(Var a) {
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
  return push(std::move(out), [a](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    const Tensor& va = t.value(a);
    Tensor& ga = t.node(a).grad;
    for (int i = 0; i < g.size(); ++i)
      ga[i] += va[i] >= 0.0 ? g[i] : -g[i];
  });
}

Var Tape::square(Var a) {
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] *= out[i];
  return push(std::move(out), [a](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    const Tensor& va = t.value(a);
    Tensor& ga = t.node(a).grad;
    for (int i = 0; i < g.size(); ++i) ga[i] += 2.0 * va[i] * g[i];
  });
}

Var Tape::mean(Var a) {
  const Tensor& va = value(a);
  double s = 0.0;
  for (int i = 0; i < va.size(); ++i) s += va[i];
  const int n = va.size();
  return push(Tensor::scalar(s / n), [a, n](Tape& t, Var o) {
    const double g = t.grad(o)[0] / n;
    Tensor& ga = t.node(a).grad;
    for (int i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var Tape::conv2d(Var x, Var w) {
  Tensor y = conv2d_forward(value(x), value(w));
  return push(std::move(y), [x, w](Tape& t, Var o) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    const Tensor& gy = t.grad(o);
    const int ci = vx.shape()[0], h = vx.shape()[1], wd = vx.shape()[2];
    const int co = vw.shape()[0];
    const int k = ci * 9, n = h * wd;
    std::vector<double> cols;
    im2col3x3(vx, cols);
    // dW = dY * cols^T
    Tensor& gw = t.node(w).grad;
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, co, k, n, 1.0,
                gy.data(), n, cols.data(), n, 1.0, gw.data(), k);
    // dX via col2im of W^T * dY
    std::vector<double> gcols(static_cast<size_t>(k * n));
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, n, co, 1.0,
                vw.data(), k, gy.data(), n, 0.0, gcols.data(), n);
    Tensor& gx = t.node(x).grad;
    for (int c = 0; c < ci; ++c) {
      for (int kk = 0; kk < 9; ++kk) {
        const int dy = kk / 3 - 1, dx = kk % 3 - 1;
        const double* row = gcols.data() + static_cast<size_t>((c * 9 + kk) * n);
        double* plane = gx.data() + static_cast<size_t>(c * h * wd);
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          const double* s = row + static_cast<size_t>(y * wd);
          double* d = plane + static_cast<size_t>(sy * wd);
          for (int xx = x0; xx < x1; ++xx) d[xx + dx] += s[xx];
        }
      }
    }
  });
}

Var Tape::bias_add(Var x, Var b) {
  const Tensor& vx = value(x);
  const Tensor& vb = value(b);
  if (vx.shape().rank != 3 || vb.shape().rank != 1 ||
      vb.shape()[0] != vx.shape()[0])
    throw std::invalid_argument("bias_add: expects (C,H,W) and (C)");
  const int c = vx.shape()[0], hw = vx.shape()[1] * vx.shape()[2];
  Tensor out = vx;
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i) out[ch * hw + i] += vb[ch];
  return push(std::move(out), [x, b, c, hw](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    t.accumulate_grad(x, g);
    Tensor& gb = t.node(b).grad;
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int i = 0; i < hw; ++i) s += g[ch * hw + i];
      gb[ch] += s;
    }
  });
}

Var Tape::concat_channels(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.shape().rank != 3 || vb.shape().rank != 3 ||
      va.shape()[1] != vb.shape()[1] || va.shape()[2] != vb.shape()[2])
    throw std::invalid_argument("concat_channels: spatial dims must match");
  const int ca = va.shape()[0], cb = vb.shape()[0];
  const int h = va.shape()[1], w = va.shape()[2];
  Tensor out{Shape{ca + cb, h, w}};
  std::memcpy(out.data(), va.data(), sizeof(double) * static_cast<size_t>(va.size()));
  std::memcpy(out.data() + va.size(), vb.data(),
              sizeof(double) * static_cast<size_t>(vb.size()));
  const int na = va.size();
  return push(std::move(out), [a, b, na](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    Tensor& ga = t.node(a).grad;
    Tensor& gb = t.node(b).grad;
    for (int i = 0; i < na; ++i) ga[i] += g[i];
    for (int i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
  });
}

namespace {

// Separable zero-padded blur of one (H,W) plane.
void blur_plane(const double* src, double* dst, int h, int w,
                const std::vector<double>& k, std::vector<double>& tmp) {
  const int r = static_cast<int>(k.size()) / 2;
  tmp.assign(static_cast<size_t>(h * w), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < w) s += k[static_cast<size_t>(i + r)] * src[y * w + xx];
      }
      tmp[static_cast<size_t>(y * w + x)] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < h) s += k[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>(yy * w + x)];
      }
      dst[y * w + x] = s;
    }
}

}  // namespace

Var Tape::blur2d(Var x, const std::vector<double>& kernel1d) {
  const Tensor& vx = value(x);
  if (kernel1d.size() % 2 == 0) throw std::invalid_argument("blur2d: kernel must be odd");
  const int rank = vx.shape().rank;
  if (rank != 2 && rank != 3) throw std::invalid_argument("blur2d: expects (H,W) or (C,H,W)");
  const int c = rank == 3 ? vx.shape()[0] : 1;
  const int h = vx.shape()[rank - 2], w = vx.shape()[rank - 1];
  Tensor out{vx.shape()};
  std::vector<double> tmp;
  for (int ch = 0; ch < c; ++ch)
    blur_plane(vx.data() + ch * h * w, out.data() + ch * h * w, h, w, kernel1d, tmp);
  auto k = kernel1d;  // symmetric kernel: the adjoint is the same blur
  return push(std::move(out), [x, k, c, h, w](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    Tensor gx{g.shape()};
    std::vector<double> tmp;
    for (int ch = 0; ch < c; ++ch)
      blur_plane(g.data() + ch * h * w, gx.data() + ch * h * w, h, w, k, tmp);
    t.accumulate_grad(x, gx);
  });
}

Var Tape::crop(Var x, int m) {
  const Tensor& vx = value(x);
  const int rank = vx.shape().rank;
  if (rank != 2 && rank != 3) throw std::invalid_argument("crop: expects (H,W) or (C,H,W)");
  const int c = rank == 3 ? vx.shape()[0] : 1;
  const int h = vx.shape()[rank - 2], w = vx.shape()[rank - 1];
  if (2 * m >= h || 2 * m >= w) throw std::invalid_argument("crop: margin too large");
  const int hh = h - 2 * m, ww = w - 2 * m;
  Tensor out{rank == 3 ? Shape{c, hh, ww} : Shape{hh, ww}};
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < hh; ++y)
      for (int xx = 0; xx < ww; ++xx)
        out[(ch * hh + y) * ww + xx] = vx[(ch * h + y + m) * w + xx + m];
  return push(std::move(out), [x, m, c, h, w, hh, ww](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    Tensor& gx = t.node(x).grad;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < hh; ++y)
        for (int xx = 0; xx < ww; ++xx)
          gx[(ch * h + y + m) * w + xx + m] += g[(ch * hh + y) * ww + xx];
  });
}

Var Tape::reshape(Var x, Shape s) {
  const Tensor& vx = value(x);
  if (s.count() != vx.size()) throw std::invalid_argument("reshape: element count mismatch");
  Tensor out{s};
  std::memcpy(out.data(), vx.data(), sizeof(double) * static_cast<size_t>(vx.size()));
  return push(std::move(out), [x](Tape& t, Var o) {
    const Tensor& g = t.grad(o);
    Tensor& gx = t.node(x).grad;
    for (int i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var Tape::mean_of(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_of: empty input");
  Var acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return scale(acc, 1.0 / static_cast<double>(xs.size()));
}

Var Tape::add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty input");
  Var acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

Var Tape::custom(Tensor value, std::function<void(Tape&, Var)> backward) {
  return push(std::move(value), std::move(backward));
}

void Tape::backward(Var loss) {
  if (backward_done_)
    throw std::logic_error("tape: backward already ran; re-record first");
  if (value(loss).size() != 1)
    throw std::invalid_argument("tape: backward requires a scalar loss");
  backward_done_ = true;
  node(loss).grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<size_t>(i)];
    if (n.backward) n.backward(*this, Var{i});
  }
}

}  // namespace uspg
