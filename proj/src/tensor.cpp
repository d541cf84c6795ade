#include "dc/tensor.hpp"

#include <cblas-openblas.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

extern "C" void openblas_set_num_threads(int);

namespace dc {

namespace {
// Pin BLAS to one thread: reductions keep a fixed summation order, so
// forward evaluation stays bit-identical run to run.
struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit blas_init;
}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    shape_error("Tensor", "shape " + shape_str(shape) + " does not match data length " +
                              std::to_string(data.size()));
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::abs(v));
  return m;
}

namespace {
void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    shape_error(op, "shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) + " differ");
}
}  // namespace

Tensor t_add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor t_sub(const Tensor& a, const Tensor& b) {
  require_same_shape("subtract", a, b);
  Tensor out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor t_mul(const Tensor& a, const Tensor& b) {
  require_same_shape("multiply", a, b);
  Tensor out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor t_scalar_mul(const Tensor& a, double c) {
  Tensor out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * c;
  return out;
}

Tensor t_relu(const Tensor& a) {
  Tensor out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return out;
}

Tensor t_relu_mask(const Tensor& a) {
  Tensor out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

Tensor t_tanh(const Tensor& a) {
  Tensor out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::tanh(a[i]);
  return out;
}

Tensor t_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    shape_error("matmul", "expects rank-2 operands, got " + shape_str(a.shape) + " and " +
                              shape_str(b.shape));
  if (a.dim(1) != b.dim(0))
    shape_error("matmul", "inner dimensions differ: " + shape_str(a.shape) + " x " +
                              shape_str(b.shape));
  int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out({n, m});
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(n),
              static_cast<int>(m), static_cast<int>(k), 1.0, a.data.data(), static_cast<int>(k),
              b.data.data(), static_cast<int>(m), 0.0, out.data.data(), static_cast<int>(m));
  return out;
}

Tensor t_transpose(const Tensor& a) {
  if (a.rank() != 2) shape_error("transpose", "expects rank 2, got " + shape_str(a.shape));
  int64_t n = a.dim(0), m = a.dim(1);
  Tensor out({m, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[j * n + i] = a[i * m + j];
  return out;
}

namespace {

enum class ConvMode { Fwd, AdjInput, AdjWeight };

void check_conv_shapes(const char* op, const ConvGeom& g, const Tensor* x, const Tensor* w,
                       const Tensor* y) {
  if (!g.consistent()) shape_error(op, "inconsistent convolution geometry");
  if (x && (x->rank() != 4 || x->dim(1) != g.in_c || x->dim(2) != g.h || x->dim(3) != g.w))
    shape_error(op, "input " + shape_str(x->shape) + " does not match geometry");
  if (w && (w->rank() != 4 || w->dim(0) != g.out_c || w->dim(1) != g.in_c || w->dim(2) != g.kh ||
            w->dim(3) != g.kw))
    shape_error(op, "kernel " + shape_str(w->shape) + " does not match geometry");
  if (y && (y->rank() != 4 || y->dim(1) != g.out_c || y->dim(2) != g.oh || y->dim(3) != g.ow))
    shape_error(op, "output " + shape_str(y->shape) + " does not match geometry");
}

// One loop nest serves all three positions of the trilinear form
//   <y, conv(x, w)> = sum over valid (n,co,oh,ow,ci,i,j) of
//   y[n,co,oh,ow] * x[n,ci,oh*s-p+i,ow*s-p+j] * w[co,ci,i,j]
// which makes each adjoint exact by construction.
template <ConvMode M>
Tensor conv_nest(const Tensor& xt, const Tensor& wt, const Tensor& yt, const ConvGeom& g,
                 int64_t batch) {
  Shape out_shape;
  if constexpr (M == ConvMode::Fwd) out_shape = {batch, g.out_c, g.oh, g.ow};
  if constexpr (M == ConvMode::AdjInput) out_shape = {batch, g.in_c, g.h, g.w};
  if constexpr (M == ConvMode::AdjWeight) out_shape = {g.out_c, g.in_c, g.kh, g.kw};
  Tensor out(out_shape);

  const double* x = xt.data.data();
  const double* w = wt.data.data();
  const double* y = yt.data.data();
  double* o = out.data.data();

  const int64_t xs_c = g.h * g.w, xs_n = g.in_c * xs_c;
  const int64_t ys_c = g.oh * g.ow, ys_n = g.out_c * ys_c;
  const int64_t ws_ci = g.kh * g.kw, ws_co = g.in_c * ws_ci;

  for (int64_t n = 0; n < batch; ++n)
    for (int64_t co = 0; co < g.out_c; ++co)
      for (int64_t oh = 0; oh < g.oh; ++oh)
        for (int64_t ow = 0; ow < g.ow; ++ow) {
          const int64_t yi = n * ys_n + co * ys_c + oh * g.ow + ow;
          double acc = 0.0;
          for (int64_t ci = 0; ci < g.in_c; ++ci)
            for (int64_t i = 0; i < g.kh; ++i) {
              const int64_t h = oh * g.stride - g.pad + i;
              if (h < 0 || h >= g.h) continue;
              for (int64_t j = 0; j < g.kw; ++j) {
                const int64_t wcol = ow * g.stride - g.pad + j;
                if (wcol < 0 || wcol >= g.w) continue;
                const int64_t xi = n * xs_n + ci * xs_c + h * g.w + wcol;
                const int64_t wi = co * ws_co + ci * ws_ci + i * g.kw + j;
                if constexpr (M == ConvMode::Fwd) acc += x[xi] * w[wi];
                if constexpr (M == ConvMode::AdjInput) o[xi] += y[yi] * w[wi];
                if constexpr (M == ConvMode::AdjWeight) o[wi] += x[xi] * y[yi];
              }
            }
          if constexpr (M == ConvMode::Fwd) o[yi] = acc;
        }
  return out;
}

}  // namespace

Tensor t_conv_fwd(const Tensor& x, const Tensor& w, const ConvGeom& g) {
  check_conv_shapes("conv2d", g, &x, &w, nullptr);
  static const Tensor dummy;
  return conv_nest<ConvMode::Fwd>(x, w, dummy, g, x.dim(0));
}

Tensor t_conv_adj_input(const Tensor& y, const Tensor& w, const ConvGeom& g) {
  check_conv_shapes("conv2d-input-adjoint", g, nullptr, &w, &y);
  static const Tensor dummy;
  return conv_nest<ConvMode::AdjInput>(dummy, w, y, g, y.dim(0));
}

Tensor t_conv_adj_weight(const Tensor& x, const Tensor& y, const ConvGeom& g) {
  check_conv_shapes("conv2d-weight-adjoint", g, &x, nullptr, &y);
  if (x.dim(0) != y.dim(0)) shape_error("conv2d-weight-adjoint", "batch sizes differ");
  static const Tensor dummy;
  return conv_nest<ConvMode::AdjWeight>(x, dummy, y, g, x.dim(0));
}

Tensor t_maxpool(const Tensor& x, std::vector<int64_t>& mask) {
  if (x.rank() != 4) shape_error("maxpool", "expects rank 4, got " + shape_str(x.shape));
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  mask.assign(out.numel(), 0);
  int64_t oi = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j, ++oi) {
          int64_t best = -1;
          double bv = 0.0;
          for (int64_t di = 0; di < 2; ++di)
            for (int64_t dj = 0; dj < 2; ++dj) {
              int64_t idx = ((b * c + ch) * h + (2 * i + di)) * w + (2 * j + dj);
              if (best < 0 || x[idx] > bv) {
                best = idx;
                bv = x[idx];
              }
            }
          out[oi] = bv;
          mask[oi] = best;
        }
  return out;
}

Tensor t_pool_scatter(const Tensor& y, const std::vector<int64_t>& mask, const Shape& x_shape) {
  if (y.numel() != static_cast<int64_t>(mask.size()))
    shape_error("pool-scatter", "mask length does not match input");
  Tensor out(x_shape);
  for (int64_t i = 0; i < y.numel(); ++i) out[mask[i]] += y[i];
  return out;
}

Tensor t_pool_gather(const Tensor& x, const std::vector<int64_t>& mask, const Shape& y_shape) {
  Tensor out(y_shape);
  if (out.numel() != static_cast<int64_t>(mask.size()))
    shape_error("pool-gather", "mask length does not match output");
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[mask[i]];
  return out;
}

Tensor t_row_sum(const Tensor& a) {
  if (a.rank() != 2) shape_error("row-sum", "expects rank 2, got " + shape_str(a.shape));
  int64_t n = a.dim(0), k = a.dim(1);
  Tensor out({n});
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += a[i * k + j];
    out[i] = s;
  }
  return out;
}

Tensor t_col_bcast(const Tensor& v, int64_t k) {
  if (v.rank() != 1) shape_error("col-broadcast", "expects rank 1, got " + shape_str(v.shape));
  int64_t n = v.dim(0);
  Tensor out({n, k});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) out[i * k + j] = v[i];
  return out;
}

Tensor t_feat_sum(const Tensor& a) {
  if (a.rank() != 2) shape_error("feature-sum", "expects rank 2, got " + shape_str(a.shape));
  int64_t n = a.dim(0), f = a.dim(1);
  Tensor out({f});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < f; ++j) out[j] += a[i * f + j];
  return out;
}

Tensor t_feat_bcast(const Tensor& v, int64_t n) {
  if (v.rank() != 1) shape_error("feature-broadcast", "expects rank 1, got " + shape_str(v.shape));
  int64_t f = v.dim(0);
  Tensor out({n, f});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < f; ++j) out[i * f + j] = v[j];
  return out;
}

Tensor t_chan_sum(const Tensor& a) {
  if (a.rank() != 4) shape_error("channel-sum", "expects rank 4, got " + shape_str(a.shape));
  int64_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out({c});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      const double* p = a.data.data() + (b * c + ch) * hw;
      for (int64_t i = 0; i < hw; ++i) s += p[i];
      out[ch] += s;
    }
  return out;
}

Tensor t_chan_bcast(const Tensor& v, const Shape& s) {
  if (v.rank() != 1 || s.size() != 4 || s[1] != v.dim(0))
    shape_error("channel-broadcast", "bias " + shape_str(v.shape) + " vs target " + shape_str(s));
  Tensor out(s);
  int64_t n = s[0], c = s[1], hw = s[2] * s[3];
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      double* p = out.data.data() + (b * c + ch) * hw;
      for (int64_t i = 0; i < hw; ++i) p[i] = v[ch];
    }
  return out;
}

Tensor t_sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v;
  return Tensor::scalar(s);
}

Tensor t_fill_bcast(const Tensor& s1, const Shape& s) {
  if (s1.numel() != 1) shape_error("fill-broadcast", "source must be scalar");
  return Tensor::full(s, s1[0]);
}

Tensor t_softmax_rows(const Tensor& z) {
  if (z.rank() != 2) shape_error("softmax", "expects rank 2, got " + shape_str(z.shape));
  int64_t n = z.dim(0), k = z.dim(1);
  Tensor out({n, k});
  for (int64_t i = 0; i < n; ++i) {
    const double* row = z.data.data() + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - m);
    for (int64_t j = 0; j < k; ++j) out[i * k + j] = std::exp(row[j] - m) / denom;
  }
  return out;
}

Tensor t_softmax_xent(const Tensor& z, const std::vector<int>& labels) {
  if (z.rank() != 2) shape_error("softmax-xent", "expects rank-2 logits, got " + shape_str(z.shape));
  int64_t n = z.dim(0), k = z.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    shape_error("softmax-xent", "label count " + std::to_string(labels.size()) +
                                    " does not match batch " + std::to_string(n));
  Tensor out({n});
  for (int64_t i = 0; i < n; ++i) {
    int y = labels[i];
    if (y < 0 || y >= k) shape_error("softmax-xent", "label " + std::to_string(y) + " out of range");
    const double* row = z.data.data() + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - m);
    out[i] = std::log(denom) - (row[y] - m);
  }
  return out;
}

Tensor t_onehot(const std::vector<int>& labels, int64_t k) {
  Tensor out({static_cast<int64_t>(labels.size()), k});
  for (size_t i = 0; i < labels.size(); ++i) out[static_cast<int64_t>(i) * k + labels[i]] = 1.0;
  return out;
}

}  // namespace dc
