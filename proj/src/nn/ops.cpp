#include "vt/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <Eigen/Core>

namespace vt::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
}

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                                shape_string(t.shape()));
}

template <typename F, typename G>
Tensor unary(const Tensor& x, F forward, G derivative) {
  std::vector<float> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, derivative](detail::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    auto xv = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * derivative(xv[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) mutable {
    for (const Tensor* t : {&a, &b})
      if (t->requires_grad()) {
        auto g = t->grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) mutable {
    if (a.requires_grad()) {
      auto g = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) mutable {
    if (a.requires_grad()) {
      auto g = a.grad();
      auto bv = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      auto av = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, float s) {
  return unary(a, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor add_scalar(const Tensor& a, float s) {
  return unary(a, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor add_channel(const Tensor& x, const Tensor& v) {
  require_rank(x, 4, "add_channel");
  require_rank(v, 2, "add_channel");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (v.dim(0) != n || v.dim(1) != c)
    throw std::invalid_argument("add_channel: vector " + shape_string(v.shape()) + " vs " + shape_string(x.shape()));
  std::vector<float> out(x.data().begin(), x.data().end());
  auto vv = v.data();
  for (int i = 0; i < n * c; ++i)
    for (int p = 0; p < hw; ++p) out[static_cast<std::size_t>(i) * hw + p] += vv[i];
  return Tensor::make_result(x.shape(), std::move(out), {x, v}, [x, v, n, c, hw](detail::Node& self) mutable {
    if (x.requires_grad()) {
      auto g = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (v.requires_grad()) {
      auto g = v.grad();
      for (int i = 0; i < n * c; ++i) {
        float acc = 0;
        for (int p = 0; p < hw; ++p) acc += self.grad[static_cast<std::size_t>(i) * hw + p];
        g[i] += acc;
      }
    }
  });
}

Tensor mul_channel(const Tensor& x, const Tensor& v) {
  require_rank(x, 4, "mul_channel");
  require_rank(v, 2, "mul_channel");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (v.dim(0) != n || v.dim(1) != c)
    throw std::invalid_argument("mul_channel: vector " + shape_string(v.shape()) + " vs " + shape_string(x.shape()));
  std::vector<float> out(x.numel());
  auto xv = x.data();
  auto vv = v.data();
  for (int i = 0; i < n * c; ++i)
    for (int p = 0; p < hw; ++p) {
      const auto idx = static_cast<std::size_t>(i) * hw + p;
      out[idx] = xv[idx] * vv[i];
    }
  return Tensor::make_result(x.shape(), std::move(out), {x, v}, [x, v, n, c, hw](detail::Node& self) mutable {
    auto xv = x.data();
    auto vv = v.data();
    if (x.requires_grad()) {
      auto g = x.grad();
      for (int i = 0; i < n * c; ++i)
        for (int p = 0; p < hw; ++p) {
          const auto idx = static_cast<std::size_t>(i) * hw + p;
          g[idx] += self.grad[idx] * vv[i];
        }
    }
    if (v.requires_grad()) {
      auto g = v.grad();
      for (int i = 0; i < n * c; ++i) {
        float acc = 0;
        for (int p = 0; p < hw; ++p) {
          const auto idx = static_cast<std::size_t>(i) * hw + p;
          acc += self.grad[idx] * xv[idx];
        }
        g[i] += acc;
      }
    }
  });
}

int conv_output_size(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

namespace {

struct ConvGeometry {
  int n, cin, h, w, cout, k, stride, pad, ho, wo;
  int patch() const { return cin * k * k; }
  int positions() const { return ho * wo; }
};

// col is [cin*k*k, n*ho*wo] row-major; column index = sample * ho*wo + position.
void im2col(const float* x, const ConvGeometry& g, float* col) {
  const int P = g.positions();
  const std::size_t ld = static_cast<std::size_t>(g.n) * P;
  for (int s = 0; s < g.n; ++s)
    for (int c = 0; c < g.cin; ++c) {
      const float* plane = x + (static_cast<std::size_t>(s) * g.cin + c) * g.h * g.w;
      for (int ki = 0; ki < g.k; ++ki)
        for (int kj = 0; kj < g.k; ++kj) {
          float* row = col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * ld + static_cast<std::size_t>(s) * P;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ki;
            float* dst = row + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(dst, dst + g.wo, 0.0f);
              continue;
            }
            const float* src = plane + iy * g.w;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
            }
          }
        }
    }
}

void col2im(const float* col, const ConvGeometry& g, float* dx) {
  const int P = g.positions();
  const std::size_t ld = static_cast<std::size_t>(g.n) * P;
  for (int s = 0; s < g.n; ++s)
    for (int c = 0; c < g.cin; ++c) {
      float* plane = dx + (static_cast<std::size_t>(s) * g.cin + c) * g.h * g.w;
      for (int ki = 0; ki < g.k; ++ki)
        for (int kj = 0; kj < g.k; ++kj) {
          const float* row =
              col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * ld + static_cast<std::size_t>(s) * P;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.h) continue;
            const float* src = row + oy * g.wo;
            float* dst = plane + iy * g.w;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
            }
          }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.dim(2) != w.dim(3)) throw std::invalid_argument("conv2d: only square kernels are supported");
  if (x.dim(1) != w.dim(1))
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                                std::to_string(w.dim(1)));
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
  g.ho = conv_output_size(g.h, g.k, stride, pad);
  g.wo = conv_output_size(g.w, g.k, stride, pad);
  if (g.ho < 1 || g.wo < 1)
    throw std::invalid_argument("conv2d: input " + shape_string(x.shape()) + " too small for kernel " +
                                std::to_string(g.k));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != g.cout)) throw std::invalid_argument("conv2d: bad bias shape");

  const int K = g.patch(), P = g.positions();
  const std::size_t NP = static_cast<std::size_t>(g.n) * P;
  auto col = std::make_shared<std::vector<float>>(static_cast<std::size_t>(K) * NP);
  im2col(x.data().data(), g, col->data());

  RowMat y(g.cout, NP);
  y.noalias() = ConstMapMat(w.data().data(), g.cout, K) * ConstMapMat(col->data(), K, NP);

  std::vector<float> out(static_cast<std::size_t>(g.n) * g.cout * P);
  for (int s = 0; s < g.n; ++s)
    for (int co = 0; co < g.cout; ++co) {
      float* dst = out.data() + (static_cast<std::size_t>(s) * g.cout + co) * P;
      std::memcpy(dst, y.data() + static_cast<std::size_t>(co) * NP + static_cast<std::size_t>(s) * P, sizeof(float) * P);
      if (b.defined()) {
        const float bias = b.data()[co];
        for (int p = 0; p < P; ++p) dst[p] += bias;
      }
    }

  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor::make_result({g.n, g.cout, g.ho, g.wo}, std::move(out), parents,
                             [x, w, b, g, col](detail::Node& self) mutable {
    const int K = g.patch(), P = g.positions();
    const std::size_t NP = static_cast<std::size_t>(g.n) * P;
    RowMat dy(g.cout, NP);
    for (int s = 0; s < g.n; ++s)
      for (int co = 0; co < g.cout; ++co)
        std::memcpy(dy.data() + static_cast<std::size_t>(co) * NP + static_cast<std::size_t>(s) * P,
                    self.grad.data() + (static_cast<std::size_t>(s) * g.cout + co) * P, sizeof(float) * P);
    if (b.defined() && b.requires_grad()) {
      auto gb = b.grad();
      for (int co = 0; co < g.cout; ++co) gb[co] += dy.row(co).sum();
    }
    if (w.requires_grad()) {
      MapMat gw(w.grad().data(), g.cout, K);
      gw.noalias() += dy * ConstMapMat(col->data(), K, NP).transpose();
    }
    if (x.requires_grad()) {
      RowMat dcol(K, NP);
      dcol.noalias() = ConstMapMat(w.data().data(), g.cout, K).transpose() * dy;
      col2im(dcol.data(), g, x.grad().data());
    }
  });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<float> out(static_cast<std::size_t>(n) * c * 4 * h * w);
  auto xv = x.data();
  for (int p = 0; p < n * c; ++p)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j)
        out[(static_cast<std::size_t>(p) * 2 * h + i) * 2 * w + j] = xv[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2];
  return Tensor::make_result({n, c, 2 * h, 2 * w}, std::move(out), {x}, [x, n, c, h, w](detail::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (int p = 0; p < n * c; ++p)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j)
          g[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2] += self.grad[(static_cast<std::size_t>(p) * 2 * h + i) * 2 * w + j];
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<float> out(static_cast<std::size_t>(n) * (ca + cb) * hw);
  for (int s = 0; s < n; ++s) {
    std::copy_n(a.data().data() + static_cast<std::size_t>(s) * ca * hw, ca * hw,
                out.data() + static_cast<std::size_t>(s) * (ca + cb) * hw);
    std::copy_n(b.data().data() + static_cast<std::size_t>(s) * cb * hw, cb * hw,
                out.data() + (static_cast<std::size_t>(s) * (ca + cb) + ca) * hw);
  }
  return Tensor::make_result({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                             [a, b, n, ca, cb, hw](detail::Node& self) mutable {
    for (int s = 0; s < n; ++s) {
      const float* src = self.grad.data() + static_cast<std::size_t>(s) * (ca + cb) * hw;
      if (a.requires_grad()) {
        float* g = a.grad().data() + static_cast<std::size_t>(s) * ca * hw;
        for (int i = 0; i < ca * hw; ++i) g[i] += src[i];
      }
      if (b.requires_grad()) {
        float* g = b.grad().data() + static_cast<std::size_t>(s) * cb * hw;
        for (int i = 0; i < cb * hw; ++i) g[i] += src[ca * hw + i];
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](float v) { return v > 0 ? v : 0.0f; }, [](float v, float) { return v > 0 ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float slope) {
  return unary(x, [slope](float v) { return v > 0 ? v : slope * v; },
               [slope](float v, float) { return v > 0 ? 1.0f : slope; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](float v) { return v / (1.0f + std::exp(-v)); },
      [](float v, float) {
        const float s = 1.0f / (1.0f + std::exp(-v));
        return s * (1.0f + v * (1.0f - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); }, [](float, float y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(x, 4, "group_norm");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups < 1 || c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c))
    throw std::invalid_argument("group_norm: affine parameters must have C elements");
  const int cpg = c / groups;
  const std::size_t m = static_cast<std::size_t>(cpg) * hw;

  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * groups);
  std::vector<float> out(x.numel());
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (int s = 0; s < n; ++s)
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(s) * c + static_cast<std::size_t>(gi) * cpg) * hw;
      double mu = 0, var = 0;
      for (std::size_t i = 0; i < m; ++i) mu += xv[base + i];
      mu /= static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) var += (xv[base + i] - mu) * (xv[base + i] - mu);
      var /= static_cast<double>(m);
      const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
      (*inv_std)[static_cast<std::size_t>(s) * groups + gi] = is;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = gi * cpg + cc;
        for (int p = 0; p < hw; ++p) {
          const std::size_t idx = base + static_cast<std::size_t>(cc) * hw + p;
          const float xh = static_cast<float>((xv[idx] - mu) * is);
          (*xhat)[idx] = xh;
          out[idx] = xh * gv[ch] + bv[ch];
        }
      }
    }
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [x, gamma, beta, n, c, hw, groups, cpg, m, xhat, inv_std](detail::Node& self) mutable {
    auto gv = gamma.data();
    if (gamma.requires_grad() || beta.requires_grad()) {
      auto gg = gamma.requires_grad() ? gamma.grad() : std::span<float>{};
      auto gb = beta.requires_grad() ? beta.grad() : std::span<float>{};
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
          double ag = 0, ab = 0;
          for (int p = 0; p < hw; ++p) {
            const std::size_t idx = (static_cast<std::size_t>(s) * c + ch) * hw + p;
            ag += self.grad[idx] * (*xhat)[idx];
            ab += self.grad[idx];
          }
          if (!gg.empty()) gg[ch] += static_cast<float>(ag);
          if (!gb.empty()) gb[ch] += static_cast<float>(ab);
        }
    }
    if (!x.requires_grad()) return;
    auto gx = x.grad();
    for (int s = 0; s < n; ++s)
      for (int gi = 0; gi < groups; ++gi) {
        const std::size_t base = (static_cast<std::size_t>(s) * c + static_cast<std::size_t>(gi) * cpg) * hw;
        double mean_d = 0, mean_dx = 0;
        for (int cc = 0; cc < cpg; ++cc)
          for (int p = 0; p < hw; ++p) {
            const std::size_t idx = base + static_cast<std::size_t>(cc) * hw + p;
            const double d = self.grad[idx] * gv[gi * cpg + cc];
            mean_d += d;
            mean_dx += d * (*xhat)[idx];
          }
        mean_d /= static_cast<double>(m);
        mean_dx /= static_cast<double>(m);
        const float is = (*inv_std)[static_cast<std::size_t>(s) * groups + gi];
        for (int cc = 0; cc < cpg; ++cc)
          for (int p = 0; p < hw; ++p) {
            const std::size_t idx = base + static_cast<std::size_t>(cc) * hw + p;
            const double d = self.grad[idx] * gv[gi * cpg + cc];
            gx[idx] += static_cast<float>(is * (d - mean_d - (*xhat)[idx] * mean_dx));
          }
      }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const int n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in)
    throw std::invalid_argument("linear: input has " + std::to_string(in) + " features, weight expects " +
                                std::to_string(w.dim(1)));
  RowMat y = ConstMapMat(x.data().data(), n, in) * ConstMapMat(w.data().data(), out_f, in).transpose();
  if (b.defined())
    for (int s = 0; s < n; ++s)
      for (int o = 0; o < out_f; ++o) y(s, o) += b.data()[o];
  std::vector<float> out(y.data(), y.data() + y.size());
  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor::make_result({n, out_f}, std::move(out), parents, [x, w, b, n, in, out_f](detail::Node& self) mutable {
    ConstMapMat dy(self.grad.data(), n, out_f);
    if (x.requires_grad()) MapMat(x.grad().data(), n, in).noalias() += dy * ConstMapMat(w.data().data(), out_f, in);
    if (w.requires_grad())
      MapMat(w.grad().data(), out_f, in).noalias() += dy.transpose() * ConstMapMat(x.data().data(), n, in);
    if (b.defined() && b.requires_grad()) {
      auto gb = b.grad();
      for (int o = 0; o < out_f; ++o) gb[o] += dy.col(o).sum();
    }
  });
}

Tensor columns(const Tensor& x, int begin, int count) {
  require_rank(x, 2, "columns");
  const int n = x.dim(0), k = x.dim(1);
  if (begin < 0 || count < 0 || begin + count > k) throw std::invalid_argument("columns: range out of bounds");
  std::vector<float> out(static_cast<std::size_t>(n) * count);
  for (int s = 0; s < n; ++s)
    for (int j = 0; j < count; ++j) out[static_cast<std::size_t>(s) * count + j] = x.data()[static_cast<std::size_t>(s) * k + begin + j];
  return Tensor::make_result({n, count}, std::move(out), {x}, [x, n, k, begin, count](detail::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (int s = 0; s < n; ++s)
      for (int j = 0; j < count; ++j) g[static_cast<std::size_t>(s) * k + begin + j] += self.grad[static_cast<std::size_t>(s) * count + j];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw std::invalid_argument("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  std::vector<float> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [x](detail::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0;
  for (float v : x.data()) acc += v;
  return Tensor::make_result({1}, {static_cast<float>(acc)}, {x}, [x](detail::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  const auto n = pred.numel();
  double acc = 0;
  auto pv = pred.data();
  auto tv = target.data();
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(pv[i]) - tv[i]);
  return Tensor::make_result({1}, {static_cast<float>(acc / static_cast<double>(n))}, {pred, target},
                             [pred, target, n](detail::Node& self) mutable {
    auto pv = pred.data();
    auto tv = target.data();
    const float g0 = self.grad[0] / static_cast<float>(n);
    auto sign = [&](std::size_t i) { return pv[i] > tv[i] ? 1.0f : (pv[i] < tv[i] ? -1.0f : 0.0f); };
    if (pred.requires_grad()) {
      auto g = pred.grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += g0 * sign(i);
    }
    if (target.requires_grad()) {
      auto g = target.grad();
      for (std::size_t i = 0; i < n; ++i) g[i] -= g0 * sign(i);
    }
  });
}

Tensor masked_l1_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "masked_l1_loss");
  require_same_shape(pred, mask, "masked_l1_loss");
  const int batch = pred.dim(0);
  const std::size_t per = pred.numel() / static_cast<std::size_t>(batch);
  auto pv = pred.data();
  auto tv = target.data();
  auto mv = mask.data();
  auto counts = std::make_shared<std::vector<double>>(batch, 0.0);
  double total = 0;
  for (int s = 0; s < batch; ++s) {
    double acc = 0, cnt = 0;
    for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
      cnt += mv[i];
      acc += std::abs(static_cast<double>(pv[i]) - tv[i]) * mv[i];
    }
    if (cnt <= 0) throw std::domain_error("masked_l1_loss: sample " + std::to_string(s) + " has an empty mask");
    (*counts)[s] = cnt;
    total += acc / cnt;
  }
  return Tensor::make_result({1}, {static_cast<float>(total / batch)}, {pred, target},
                             [pred, target, mask, batch, per, counts](detail::Node& self) mutable {
    auto pv = pred.data();
    auto tv = target.data();
    auto mv = mask.data();
    for (int s = 0; s < batch; ++s) {
      const float w = static_cast<float>(self.grad[0] / (batch * (*counts)[s]));
      for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
        if (mv[i] == 0.0f) continue;
        const float d = pv[i] > tv[i] ? 1.0f : (pv[i] < tv[i] ? -1.0f : 0.0f);
        if (pred.requires_grad()) pred.grad()[i] += w * d * mv[i];
        if (target.requires_grad()) target.grad()[i] -= w * d * mv[i];
      }
    }
  });
}

Tensor mse_to_constant(const Tensor& x, float c) {
  const auto n = x.numel();
  double acc = 0;
  for (float v : x.data()) acc += (static_cast<double>(v) - c) * (v - c);
  return Tensor::make_result({1}, {static_cast<float>(acc / static_cast<double>(n))}, {x}, [x, c, n](detail::Node& self) mutable {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    auto xv = x.data();
    const float g0 = 2.0f * self.grad[0] / static_cast<float>(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += g0 * (xv[i] - c);
  });
}

}  // namespace vt::nn
