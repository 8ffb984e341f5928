#include "lgcnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>

#include "lgcnet/error.hpp"

namespace lgc::ops {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

using ImplPtr = std::shared_ptr<TensorImpl>;

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Builds the message only on failure.
template <std::invocable Msg>
void require(bool cond, Msg msg) {
  if (!cond) throw ShapeError(msg());
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Records `fn` with the given inputs if any of them requires a gradient.
template <typename Fn>
void record(Tensor& out, std::vector<Tensor> inputs, Fn fn) {
  std::vector<ImplPtr> impls;
  bool any = false;
  for (auto& t : inputs) {
    if (!t.defined()) continue;
    any = any || t.requires_grad();
    impls.push_back(t.shared());
  }
  if (!any || !grad_enabled()) return;
  out.set_requires_grad(true);
  active_tape().record(std::move(impls), out.shared(), std::move(fn));
}

struct Dims4 {
  int64_t n, c, h, w;
};

Dims4 dims4(const Tensor& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected (N,C,H,W), got " + to_string(x.shape()));
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

int64_t conv_out(int64_t in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// Output positions o in [lo, hi) whose input o * stride + offset lies in [0, in).
std::pair<int64_t, int64_t> valid_range(int64_t in, int64_t out, int stride, int64_t offset) {
  int64_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  int64_t hi = in - 1 - offset < 0 ? 0 : (in - 1 - offset) / stride + 1;
  return {std::min(lo, out), std::clamp(hi, std::min(lo, out), out)};
}

void im2col(const double* x, int64_t c, int64_t h, int64_t w, int k, int stride, int pad, int dilation, int64_t ho,
            int64_t wo, double* col) {
  for (int64_t ci = 0; ci < c; ++ci) {
    const double* xc = x + ci * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = col + ((ci * k + ki) * k + kj) * ho * wo;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki * dilation;
          double* dst = row + oh * wo;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = xc + ih * w;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj * dilation;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int64_t c, int64_t h, int64_t w, int k, int stride, int pad, int dilation, int64_t ho,
            int64_t wo, double* x) {
  for (int64_t ci = 0; ci < c; ++ci) {
    double* xc = x + ci * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = col + ((ci * k + ki) * k + kj) * ho * wo;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki * dilation;
          if (ih < 0 || ih >= h) continue;
          const double* src = row + oh * wo;
          double* dst = xc + ih * w;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj * dilation;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename F, typename G>
Tensor unary(const Tensor& x, F f, G df, const char* name) {
  Tensor out = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (size_t i = 0; i < xd.size(); ++i) od[i] = f(xd[i]);
  check_finite(out, name);
  Tensor xin = x;
  record(out, {x}, [xin, out, df]() mutable {
    if (!xin.requires_grad()) return;
    auto g = out.grad();
    auto gx = xin.grad();
    auto xd = xin.data();
    auto od = out.data();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xd[i], od[i]);
  });
  return out;
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  check_finite(out, "add");
  Tensor ta = a, tb = b;
  record(out, {a, b}, [ta, tb, out]() mutable {
    auto g = out.grad();
    if (ta.requires_grad()) {
      auto ga = ta.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tb.requires_grad()) {
      auto gb = tb.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  check_finite(out, "mul");
  Tensor ta = a, tb = b;
  record(out, {a, b}, [ta, tb, out]() mutable {
    auto g = out.grad();
    if (ta.requires_grad()) {
      auto ga = ta.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * tb[static_cast<int64_t>(i)];
    }
    if (tb.requires_grad()) {
      auto gb = tb.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ta[static_cast<int64_t>(i)];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; }, "scale");
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double v) { return v + value; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor add_n(const std::vector<Tensor>& terms) {
  std::vector<Tensor> defined;
  for (const auto& t : terms)
    if (t.defined()) defined.push_back(t);
  require(!defined.empty(), "add_n: no terms");
  for (const auto& t : defined) require_same(defined.front(), t, "add_n");
  Tensor out = Tensor::zeros(defined.front().shape());
  auto od = out.data();
  for (const auto& t : defined) {
    auto td = t.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] += td[i];
  }
  check_finite(out, "add_n");
  record(out, defined, [defined, out]() mutable {
    auto g = out.grad();
    for (auto& t : defined) {
      if (!t.requires_grad()) continue;
      auto gt = t.grad();
      for (size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
  return out;
}

Tensor add_const(const Tensor& a, std::span<const double> c) {
  require(static_cast<int64_t>(c.size()) == a.numel(), "add_const: size mismatch");
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + c[static_cast<size_t>(i)];
  check_finite(out, "add_const");
  Tensor ta = a;
  record(out, {a}, [ta, out]() mutable {
    auto g = out.grad();
    auto ga = ta.grad();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; },
               "relu");
}

Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; }, "log");
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double o) { return o; }, "exp");
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  Tensor tx = x;
  record(out, {x}, [tx, out]() mutable {
    const double g = out.grad()[0];
    for (double& gx : tx.grad()) gx += g;
  });
  return out;
}

Tensor dot_const(const Tensor& x, std::span<const double> w) {
  require(static_cast<int64_t>(w.size()) == x.numel(), "dot_const: size mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x[i] * w[static_cast<size_t>(i)];
  Tensor out = Tensor::scalar(s);
  check_finite(out, "dot_const");
  Tensor tx = x;
  std::vector<double> wc(w.begin(), w.end());
  record(out, {x}, [tx, out, wc]() mutable {
    const double g = out.grad()[0];
    auto gx = tx.grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g * wc[i];
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel_of(shape) == x.numel(), "reshape: element count mismatch");
  Tensor out = x.detach();
  out.impl()->shape = std::move(shape);
  Tensor tx = x;
  record(out, {x}, [tx, out]() mutable {
    auto g = out.grad();
    auto gx = tx.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

// ---- matrices --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          [&] { return "matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()); });
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  MapR(out.data().data(), m, n).noalias() = CMapR(a.data().data(), m, k) * CMapR(b.data().data(), k, n);
  check_finite(out, "matmul");
  Tensor ta = a, tb = b;
  record(out, {a, b}, [ta, tb, out, m, k, n]() mutable {
    CMapR g(out.grad().data(), m, n);
    if (ta.requires_grad()) MapR(ta.grad().data(), m, k).noalias() += g * CMapR(tb.data().data(), k, n).transpose();
    if (tb.requires_grad()) MapR(tb.grad().data(), k, n).noalias() += CMapR(ta.data().data(), m, k).transpose() * g;
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: expected a matrix");
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  MapR(out.data().data(), n, m) = CMapR(a.data().data(), m, n).transpose();
  Tensor ta = a;
  record(out, {a}, [ta, out, m, n]() mutable {
    MapR(ta.grad().data(), m, n) += CMapR(out.grad().data(), n, m).transpose();
  });
  return out;
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  require(a.rank() == 2 && bias.numel() == a.dim(1), "add_row_bias: bias length must equal column count");
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t r = 0; r < m; ++r)
    for (int64_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + bias[c];
  check_finite(out, "add_row_bias");
  Tensor ta = a, tb = bias;
  record(out, {a, bias}, [ta, tb, out, m, n]() mutable {
    auto g = out.grad();
    if (ta.requires_grad()) {
      auto ga = ta.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tb.requires_grad()) {
      auto gb = tb.grad();
      for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c) gb[static_cast<size_t>(c)] += g[static_cast<size_t>(r * n + c)];
    }
  });
  return out;
}

Tensor softmax_rows(const Tensor& x, std::span<const int> widths) {
  require(x.rank() == 2, "softmax_rows: expected a matrix");
  const int64_t m = x.dim(0), n = x.dim(1);
  require(widths.empty() || static_cast<int64_t>(widths.size()) == m, "softmax_rows: one width per row");
  std::vector<int> w(static_cast<size_t>(m), static_cast<int>(n));
  if (!widths.empty()) {
    for (int64_t r = 0; r < m; ++r) {
      require(widths[static_cast<size_t>(r)] >= 1 && widths[static_cast<size_t>(r)] <= n,
              "softmax_rows: width out of range");
      w[static_cast<size_t>(r)] = widths[static_cast<size_t>(r)];
    }
  }
  for (double v : x.data())
    if (!std::isfinite(v)) throw NumericError("softmax of non-finite input");
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t r = 0; r < m; ++r) {
    const int wr = w[static_cast<size_t>(r)];
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < wr; ++c) mx = std::max(mx, x[r * n + c]);
    double s = 0.0;
    for (int c = 0; c < wr; ++c) {
      const double e = std::exp(x[r * n + c] - mx);
      out[r * n + c] = e;
      s += e;
    }
    for (int c = 0; c < wr; ++c) out[r * n + c] /= s;
  }
  Tensor tx = x;
  record(out, {x}, [tx, out, m, n, w]() mutable {
    auto g = out.grad();
    auto gx = tx.grad();
    for (int64_t r = 0; r < m; ++r) {
      const int wr = w[static_cast<size_t>(r)];
      double dot = 0.0;
      for (int c = 0; c < wr; ++c) dot += g[static_cast<size_t>(r * n + c)] * out[r * n + c];
      for (int c = 0; c < wr; ++c) {
        const auto i = static_cast<size_t>(r * n + c);
        gx[i] += out[r * n + c] * (g[i] - dot);
      }
    }
  });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  require(x.rank() == 2, "softmax: expected a matrix");
  if (axis == 1 || axis == -1) return softmax_rows(x);
  if (axis == 0) return transpose(softmax_rows(transpose(x)));
  throw ShapeError("softmax: axis must be 0 or 1");
}

// ---- feature maps ----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, int stride, int pad, int dilation) {
  const auto [n, ci, h, w] = dims4(x, "conv2d");
  require(weight.rank() == 4 && weight.dim(1) == ci && weight.dim(2) == weight.dim(3),
          [&] { return "conv2d: weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()); });
  const int64_t co = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  const int64_t ho = conv_out(h, k, stride, pad, dilation), wo = conv_out(w, k, stride, pad, dilation);
  require(ho > 0 && wo > 0, "conv2d: empty output");
  const int64_t kk = ci * k * k, hw = ho * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  Tensor out = Tensor::zeros({n, co, ho, wo});
  Buffer col(direct ? 0 : static_cast<size_t>(kk * hw));
  CMapR wm(weight.data().data(), co, kk);
  for (int64_t b = 0; b < n; ++b) {
    const double* xb = x.data().data() + b * ci * h * w;
    const double* cp = xb;
    if (!direct) {
      im2col(xb, ci, h, w, k, stride, pad, dilation, ho, wo, col.data());
      cp = col.data();
    }
    MapR(out.data().data() + b * co * hw, co, hw).noalias() = wm * CMapR(cp, kk, hw);
  }
  check_finite(out, "conv2d");

  Tensor tx = x, tw = weight;
  record(out, {x, weight}, [=]() mutable {
    Buffer col(direct ? 0 : static_cast<size_t>(kk * hw));
    Buffer dcol(static_cast<size_t>(kk * hw));
    CMapR wm(tw.data().data(), co, kk);
    for (int64_t b = 0; b < n; ++b) {
      CMapR g(out.grad().data() + b * co * hw, co, hw);
      const double* xb = tx.data().data() + b * ci * h * w;
      if (tw.requires_grad()) {
        const double* cp = xb;
        if (!direct) {
          im2col(xb, ci, h, w, k, stride, pad, dilation, ho, wo, col.data());
          cp = col.data();
        }
        MapR(tw.grad().data(), co, kk).noalias() += g * CMapR(cp, kk, hw).transpose();
      }
      if (tx.requires_grad()) {
        double* gx = tx.grad().data() + b * ci * h * w;
        if (direct) {
          MapR(gx, ci, hw).noalias() += wm.transpose() * g;
        } else {
          MapR(dcol.data(), kk, hw).noalias() = wm.transpose() * g;
          col2im(dcol.data(), ci, h, w, k, stride, pad, dilation, ho, wo, gx);
        }
      }
    }
  });
  return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, int stride, int pad, int dilation) {
  const auto [n, c, h, w] = dims4(x, "depthwise_conv2d");
  require(weight.rank() == 4 && weight.dim(0) == c && weight.dim(1) == 1 && weight.dim(2) == weight.dim(3),
          [&] { return "depthwise_conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
              to_string(x.shape()); });
  const int k = static_cast<int>(weight.dim(2));
  const int64_t ho = conv_out(h, k, stride, pad, dilation), wo = conv_out(w, k, stride, pad, dilation);
  require(ho > 0 && wo > 0, "depthwise_conv2d: empty output");

  Tensor out = Tensor::zeros({n, c, ho, wo});
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  double* od = out.data().data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* xc = xd + (b * c + ch) * h * w;
      const double* wc = wd + ch * k * k;
      double* oc = od + (b * c + ch) * ho * wo;
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const double wv = wc[ki * k + kj];
          const int64_t off_h = ki * dilation - pad, off_w = kj * dilation - pad;
          const auto [oh0, oh1] = valid_range(h, ho, stride, off_h);
          const auto [ow0, ow1] = valid_range(w, wo, stride, off_w);
          for (int64_t oh = oh0; oh < oh1; ++oh) {
            const double* src = xc + (oh * stride + off_h) * w + off_w;
            double* dst = oc + oh * wo;
            for (int64_t ow = ow0; ow < ow1; ++ow) dst[ow] += wv * src[ow * stride];
          }
        }
      }
    }
  }
  check_finite(out, "depthwise_conv2d");

  Tensor tx = x, tw = weight;
  record(out, {x, weight}, [=]() mutable {
    const double* xd = tx.data().data();
    const double* wd = tw.data().data();
    const double* gd = out.grad().data();
    double* gx = tx.requires_grad() ? tx.grad().data() : nullptr;
    double* gw = tw.requires_grad() ? tw.grad().data() : nullptr;
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* xc = xd + (b * c + ch) * h * w;
        const double* gc = gd + (b * c + ch) * ho * wo;
        for (int ki = 0; ki < k; ++ki) {
          for (int kj = 0; kj < k; ++kj) {
            const double wv = wd[ch * k * k + ki * k + kj];
            double acc = 0.0;
            const int64_t off_h = ki * dilation - pad, off_w = kj * dilation - pad;
            const auto [oh0, oh1] = valid_range(h, ho, stride, off_h);
            const auto [ow0, ow1] = valid_range(w, wo, stride, off_w);
            for (int64_t oh = oh0; oh < oh1; ++oh) {
              const int64_t row = (oh * stride + off_h) * w + off_w;
              const double* g = gc + oh * wo;
              const double* src = xc + row;
              for (int64_t ow = ow0; ow < ow1; ++ow) acc += g[ow] * src[ow * stride];
              if (gx) {
                double* dst = gx + (b * c + ch) * h * w + row;
                for (int64_t ow = ow0; ow < ow1; ++ow) dst[ow * stride] += g[ow] * wv;
              }
            }
            if (gw) gw[ch * k * k + ki * k + kj] += acc;
          }
        }
      }
    }
  });
  return out;
}

Tensor conv_transpose2x2(const Tensor& x, const Tensor& weight) {
  const auto [n, ci, h, w] = dims4(x, "conv_transpose2x2");
  require(weight.rank() == 4 && weight.dim(0) == ci && weight.dim(2) == 2 && weight.dim(3) == 2,
          [&] { return "conv_transpose2x2: weight " + to_string(weight.shape()) + " incompatible with input " +
              to_string(x.shape()); });
  const int64_t co = weight.dim(1), hw = h * w, ho = 2 * h, wo = 2 * w;
  Tensor out = Tensor::zeros({n, co, ho, wo});
  Buffer tmp(static_cast<size_t>(co * 4 * hw));
  CMapR wm(weight.data().data(), ci, co * 4);
  for (int64_t b = 0; b < n; ++b) {
    MapR(tmp.data(), co * 4, hw).noalias() = wm.transpose() * CMapR(x.data().data() + b * ci * hw, ci, hw);
    double* ob = out.data().data() + b * co * ho * wo;
    for (int64_t c = 0; c < co; ++c)
      for (int a = 0; a < 2; ++a)
        for (int e = 0; e < 2; ++e) {
          const double* src = tmp.data() + ((c * 4) + a * 2 + e) * hw;
          for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) ob[(c * ho + 2 * i + a) * wo + 2 * j + e] = src[i * w + j];
        }
  }
  check_finite(out, "conv_transpose2x2");

  Tensor tx = x, tw = weight;
  record(out, {x, weight}, [=]() mutable {
    Buffer dtmp(static_cast<size_t>(co * 4 * hw));
    CMapR wm(tw.data().data(), ci, co * 4);
    for (int64_t b = 0; b < n; ++b) {
      const double* gb = out.grad().data() + b * co * ho * wo;
      for (int64_t c = 0; c < co; ++c)
        for (int a = 0; a < 2; ++a)
          for (int e = 0; e < 2; ++e) {
            double* dst = dtmp.data() + ((c * 4) + a * 2 + e) * hw;
            for (int64_t i = 0; i < h; ++i)
              for (int64_t j = 0; j < w; ++j) dst[i * w + j] = gb[(c * ho + 2 * i + a) * wo + 2 * j + e];
          }
      CMapR dt(dtmp.data(), co * 4, hw);
      if (tw.requires_grad())
        MapR(tw.grad().data(), ci, co * 4).noalias() +=
            CMapR(tx.data().data() + b * ci * hw, ci, hw) * dt.transpose();
      if (tx.requires_grad()) MapR(tx.grad().data() + b * ci * hw, ci, hw).noalias() += wm * dt;
    }
  });
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  const auto [n, c, h, w] = dims4(x, "add_channel_bias");
  require(bias.numel() == c, "add_channel_bias: bias length must equal channel count");
  Tensor out = Tensor::zeros(x.shape());
  const int64_t hw = h * w;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < hw; ++i) out[(b * c + ch) * hw + i] = x[(b * c + ch) * hw + i] + bias[ch];
  check_finite(out, "add_channel_bias");
  Tensor tx = x, tb = bias;
  record(out, {x, bias}, [=]() mutable {
    auto g = out.grad();
    if (tx.requires_grad()) {
      auto gx = tx.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tb.requires_grad()) {
      auto gb = tb.grad();
      for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t i = 0; i < hw; ++i) gb[static_cast<size_t>(ch)] += g[static_cast<size_t>((b * c + ch) * hw + i)];
    }
  });
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training) {
  const auto [n, c, h, w] = dims4(x, "batch_norm");
  require(gamma.numel() == c && beta.numel() == c, "batch_norm: affine parameters must have one entry per channel");
  require(state.running_mean.defined() && state.running_mean.numel() == c && state.running_var.numel() == c,
          [&] { return "batch_norm: running statistics not initialised for " + std::to_string(c) + " channels"; });
  const int64_t hw = h * w, count = n * hw;
  std::vector<double> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  if (training) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < hw; ++i) s += x[(b * c + ch) * hw + i];
      const double mu = s / static_cast<double>(count);
      double v = 0.0;
      for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < hw; ++i) {
          const double d = x[(b * c + ch) * hw + i] - mu;
          v += d * d;
        }
      const double var = v / static_cast<double>(count);
      mean[static_cast<size_t>(ch)] = mu;
      inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + kBnEps);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
      state.running_mean[ch] = (1.0 - kBnMomentum) * state.running_mean[ch] + kBnMomentum * mu;
      state.running_var[ch] = (1.0 - kBnMomentum) * state.running_var[ch] + kBnMomentum * unbiased;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = state.running_mean[ch];
      inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(state.running_var[ch] + kBnEps);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double mu = mean[static_cast<size_t>(ch)], is = inv_std[static_cast<size_t>(ch)];
      const double gm = gamma[ch], bt = beta[ch];
      for (int64_t i = 0; i < hw; ++i) {
        const int64_t idx = (b * c + ch) * hw + i;
        out[idx] = gm * (x[idx] - mu) * is + bt;
      }
    }
  check_finite(out, "batch_norm");

  Tensor tx = x, tg = gamma, tb = beta;
  record(out, {x, gamma, beta}, [=]() mutable {
    auto g = out.grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      const double mu = mean[static_cast<size_t>(ch)], is = inv_std[static_cast<size_t>(ch)];
      double sum_g = 0.0, sum_gx = 0.0;
      for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t idx = (b * c + ch) * hw + i;
          const double xhat = (tx[idx] - mu) * is;
          sum_g += g[static_cast<size_t>(idx)];
          sum_gx += g[static_cast<size_t>(idx)] * xhat;
        }
      if (tg.requires_grad()) tg.grad()[static_cast<size_t>(ch)] += sum_gx;
      if (tb.requires_grad()) tb.grad()[static_cast<size_t>(ch)] += sum_g;
      if (!tx.requires_grad()) continue;
      auto gx = tx.grad();
      const double gm = tg[ch];
      const double m = static_cast<double>(count);
      for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t idx = (b * c + ch) * hw + i;
          const auto ui = static_cast<size_t>(idx);
          if (training) {
            const double xhat = (tx[idx] - mu) * is;
            gx[ui] += gm * is * (g[ui] - sum_g / m - xhat * sum_gx / m);
          } else {
            gx[ui] += gm * is * g[ui];
          }
        }
    }
  });
  return out;
}

Tensor max_pool3x3(const Tensor& x, int stride) {
  const auto [n, c, h, w] = dims4(x, "max_pool3x3");
  const int64_t ho = conv_out(h, 3, stride, 1, 1), wo = conv_out(w, 3, stride, 1, 1);
  Tensor out = Tensor::zeros({n, c, ho, wo});
  std::vector<int64_t> arg(static_cast<size_t>(out.numel()));
  for (int64_t bc = 0; bc < n * c; ++bc) {
    const double* xc = x.data().data() + bc * h * w;
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        int64_t bi = -1;
        for (int ki = 0; ki < 3; ++ki) {
          const int64_t ih = oh * stride - 1 + ki;
          if (ih < 0 || ih >= h) continue;
          for (int kj = 0; kj < 3; ++kj) {
            const int64_t iw = ow * stride - 1 + kj;
            if (iw < 0 || iw >= w) continue;
            if (xc[ih * w + iw] > best) {
              best = xc[ih * w + iw];
              bi = ih * w + iw;
            }
          }
        }
        const int64_t o = (bc * ho + oh) * wo + ow;
        out[o] = best;
        arg[static_cast<size_t>(o)] = bc * h * w + bi;
      }
  }
  check_finite(out, "max_pool3x3");
  Tensor tx = x;
  record(out, {x}, [tx, out, arg]() mutable {
    auto g = out.grad();
    auto gx = tx.grad();
    for (size_t o = 0; o < g.size(); ++o) gx[static_cast<size_t>(arg[o])] += g[o];
  });
  return out;
}

Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w) {
  const auto [n, c, h, w] = dims4(x, "adaptive_avg_pool");
  require(out_h > 0 && out_w > 0, "adaptive_avg_pool: output size must be positive");
  auto bins = [](int64_t in, int out) {
    std::vector<std::pair<int64_t, int64_t>> b(static_cast<size_t>(out));
    for (int i = 0; i < out; ++i)
      b[static_cast<size_t>(i)] = {(i * in) / out, ((i + 1) * in + out - 1) / out};
    return b;
  };
  const auto bh = bins(h, out_h), bw = bins(w, out_w);
  Tensor out = Tensor::zeros({n, c, out_h, out_w});
  for (int64_t bc = 0; bc < n * c; ++bc)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) {
        const auto [h0, h1] = bh[static_cast<size_t>(i)];
        const auto [w0, w1] = bw[static_cast<size_t>(j)];
        double s = 0.0;
        for (int64_t a = h0; a < h1; ++a)
          for (int64_t e = w0; e < w1; ++e) s += x[bc * h * w + a * w + e];
        out[(bc * out_h + i) * out_w + j] = s / static_cast<double>((h1 - h0) * (w1 - w0));
      }
  check_finite(out, "adaptive_avg_pool");
  Tensor tx = x;
  record(out, {x}, [=]() mutable {
    auto g = out.grad();
    auto gx = tx.grad();
    for (int64_t bc = 0; bc < n * c; ++bc)
      for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j) {
          const auto [h0, h1] = bh[static_cast<size_t>(i)];
          const auto [w0, w1] = bw[static_cast<size_t>(j)];
          const double v =
              g[static_cast<size_t>((bc * out_h + i) * out_w + j)] / static_cast<double>((h1 - h0) * (w1 - w0));
          for (int64_t a = h0; a < h1; ++a)
            for (int64_t e = w0; e < w1; ++e) gx[static_cast<size_t>(bc * h * w + a * w + e)] += v;
        }
  });
  return out;
}

namespace {
struct Lerp {
  int64_t i0, i1;
  double w1;
};

std::vector<Lerp> lerp_table(int64_t in, int64_t out) {
  std::vector<Lerp> t(static_cast<size_t>(out));
  const double sc = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * sc - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = std::min(i0 + 1, in - 1);
    t[static_cast<size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return t;
}
}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  const auto [n, c, h, w] = dims4(x, "resize_bilinear");
  require(out_h > 0 && out_w > 0, "resize_bilinear: output size must be positive");
  const auto th = lerp_table(h, out_h), tw = lerp_table(w, out_w);
  Tensor out = Tensor::zeros({n, c, out_h, out_w});
  for (int64_t bc = 0; bc < n * c; ++bc) {
    const double* xc = x.data().data() + bc * h * w;
    double* oc = out.data().data() + bc * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const auto& a = th[static_cast<size_t>(i)];
      for (int j = 0; j < out_w; ++j) {
        const auto& b = tw[static_cast<size_t>(j)];
        const double top = xc[a.i0 * w + b.i0] * (1.0 - b.w1) + xc[a.i0 * w + b.i1] * b.w1;
        const double bot = xc[a.i1 * w + b.i0] * (1.0 - b.w1) + xc[a.i1 * w + b.i1] * b.w1;
        oc[i * out_w + j] = top * (1.0 - a.w1) + bot * a.w1;
      }
    }
  }
  check_finite(out, "resize_bilinear");
  Tensor tx = x;
  record(out, {x}, [=]() mutable {
    const double* gd = out.grad().data();
    double* gx = tx.grad().data();
    for (int64_t bc = 0; bc < n * c; ++bc) {
      const double* gc = gd + bc * out_h * out_w;
      double* xc = gx + bc * h * w;
      for (int i = 0; i < out_h; ++i) {
        const auto& a = th[static_cast<size_t>(i)];
        for (int j = 0; j < out_w; ++j) {
          const auto& b = tw[static_cast<size_t>(j)];
          const double g = gc[i * out_w + j];
          xc[a.i0 * w + b.i0] += g * (1.0 - a.w1) * (1.0 - b.w1);
          xc[a.i0 * w + b.i1] += g * (1.0 - a.w1) * b.w1;
          xc[a.i1 * w + b.i0] += g * a.w1 * (1.0 - b.w1);
          xc[a.i1 * w + b.i1] += g * a.w1 * b.w1;
        }
      }
    }
  });
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const auto [n, c0, h, w] = dims4(parts.front(), "concat_channels");
  int64_t total = 0;
  for (const auto& p : parts) {
    const auto d = dims4(p, "concat_channels");
    require(d.n == n && d.h == h && d.w == w, [&] { return "concat_channels: mismatched shapes " + to_string(parts.front().shape()) +
                                                  " and " + to_string(p.shape()); });
    total += d.c;
  }
  (void)c0;
  const int64_t hw = h * w;
  Tensor out = Tensor::zeros({n, total, h, w});
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t c = p.dim(1);
    for (int64_t b = 0; b < n; ++b)
      std::copy_n(p.data().data() + b * c * hw, c * hw, out.data().data() + (b * total + off) * hw);
    off += c;
  }
  std::vector<Tensor> ps = parts;
  record(out, parts, [ps, out, n, total, hw]() mutable {
    int64_t off = 0;
    for (auto& p : ps) {
      const int64_t c = p.dim(1);
      if (p.requires_grad()) {
        double* gp = p.grad().data();
        const double* g = out.grad().data();
        for (int64_t b = 0; b < n; ++b)
          for (int64_t i = 0; i < c * hw; ++i) gp[b * c * hw + i] += g[(b * total + off) * hw + i];
      }
      off += c;
    }
  });
  return out;
}

Tensor mixture(const Tensor& mask, int row, const std::vector<Tensor>& terms) {
  require(mask.rank() == 2 && row >= 0 && row < mask.dim(0) && static_cast<int64_t>(terms.size()) <= mask.dim(1),
          [&] { return "mixture: mask " + to_string(mask.shape()) + " incompatible with row " + std::to_string(row) + " and " +
              std::to_string(terms.size()) + " terms"; });
  const int64_t q = mask.dim(1);
  const Tensor* first = nullptr;
  for (const auto& t : terms)
    if (t.defined()) {
      if (first) require_same(*first, t, "mixture");
      first = &t;
    }
  require(first != nullptr, "mixture: every term is undefined");
  Tensor out = Tensor::zeros(first->shape());
  auto od = out.data();
  for (size_t m = 0; m < terms.size(); ++m) {
    if (!terms[m].defined()) continue;
    const double z = mask[row * q + static_cast<int64_t>(m)];
    auto td = terms[m].data();
    for (size_t i = 0; i < od.size(); ++i) od[i] += z * td[i];
  }
  check_finite(out, "mixture");
  std::vector<Tensor> inputs = terms;
  inputs.push_back(mask);
  Tensor tm = mask;
  std::vector<Tensor> ts = terms;
  record(out, inputs, [ts, tm, out, row, q]() mutable {
    auto g = out.grad();
    for (size_t m = 0; m < ts.size(); ++m) {
      auto& t = ts[m];
      if (!t.defined()) continue;
      const double z = tm[row * q + static_cast<int64_t>(m)];
      auto td = t.data();
      if (tm.requires_grad()) {
        double dz = 0.0;
        for (size_t i = 0; i < g.size(); ++i) dz += g[i] * td[i];
        tm.grad()[static_cast<size_t>(row * q + static_cast<int64_t>(m))] += dz;
      }
      if (t.requires_grad()) {
        auto gt = t.grad();
        for (size_t i = 0; i < g.size(); ++i) gt[i] += z * g[i];
      }
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, int ignore_index) {
  const auto [n, k, h, w] = dims4(logits, "cross_entropy");
  const int64_t hw = h * w;
  require(static_cast<int64_t>(labels.size()) == n * hw, "cross_entropy: label count does not match logits");
  for (int l : labels)
    if (l != ignore_index && (l < 0 || l >= k))
      throw ShapeError("cross_entropy: label " + std::to_string(l) + " out of range [0," + std::to_string(k) + ")");

  std::vector<double> prob(static_cast<size_t>(logits.numel()));
  double total = 0.0;
  int64_t counted = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < k; ++c) mx = std::max(mx, logits[(b * k + c) * hw + i]);
      double s = 0.0;
      for (int64_t c = 0; c < k; ++c) {
        const double e = std::exp(logits[(b * k + c) * hw + i] - mx);
        prob[static_cast<size_t>((b * k + c) * hw + i)] = e;
        s += e;
      }
      for (int64_t c = 0; c < k; ++c) prob[static_cast<size_t>((b * k + c) * hw + i)] /= s;
      const int l = labels[static_cast<size_t>(b * hw + i)];
      if (l == ignore_index) continue;
      total += -(logits[(b * k + l) * hw + i] - mx - std::log(s));
      ++counted;
    }
  Tensor out = Tensor::scalar(counted ? total / static_cast<double>(counted) : 0.0);
  check_finite(out, "cross_entropy");
  Tensor tl = logits;
  std::vector<int> lab(labels.begin(), labels.end());
  record(out, {logits}, [=]() mutable {
    if (counted == 0) return;
    const double g = out.grad()[0] / static_cast<double>(counted);
    auto gl = tl.grad();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t i = 0; i < hw; ++i) {
        const int l = lab[static_cast<size_t>(b * hw + i)];
        if (l == ignore_index) continue;
        for (int64_t c = 0; c < k; ++c) {
          const auto idx = static_cast<size_t>((b * k + c) * hw + i);
          gl[idx] += g * (prob[idx] - (c == l ? 1.0 : 0.0));
        }
      }
  });
  return out;
}

}  // namespace lgc::ops
