#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace dc {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major array of doubles. The single value type of the library;
// all layers, gradients and datasets are Tensors.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) { data.assign(shape_numel(shape), 0.0); }
  Tensor(Shape s, std::vector<double> d);

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v) { return full({1}, v); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[i]; }

  double& operator[](int64_t i) { return data[i]; }
  double operator[](int64_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  double max_abs() const;
};

// Geometry of one 2-D convolution; shared by the forward op and both
// adjoints so the three stay consistent.
struct ConvGeom {
  int64_t in_c = 0, out_c = 0;
  int64_t kh = 0, kw = 0;
  int64_t stride = 1, pad = 0;
  int64_t h = 0, w = 0;    // input spatial size
  int64_t oh = 0, ow = 0;  // output spatial size

  bool consistent() const {
    return oh == (h + 2 * pad - kh) / stride + 1 && ow == (w + 2 * pad - kw) / stride + 1;
  }
};

// --- elementwise ------------------------------------------------------
Tensor t_add(const Tensor& a, const Tensor& b);
Tensor t_sub(const Tensor& a, const Tensor& b);
Tensor t_mul(const Tensor& a, const Tensor& b);
Tensor t_scalar_mul(const Tensor& a, double c);
Tensor t_relu(const Tensor& a);
Tensor t_relu_mask(const Tensor& a);  // 1 where a > 0, else 0
Tensor t_tanh(const Tensor& a);

// --- linear algebra ---------------------------------------------------
Tensor t_matmul(const Tensor& a, const Tensor& b);  // (N,K)x(K,M)
Tensor t_transpose(const Tensor& a);                // rank 2

// --- convolution family -----------------------------------------------
// Three positions of the same trilinear form:
//   conv_fwd(x, w)        -> y       (standard convolution, zero pad)
//   conv_adj_input(y, w)  -> x-like  (adjoint wrt x; transposed conv)
//   conv_adj_weight(x, y) -> w-like  (adjoint wrt w)
Tensor t_conv_fwd(const Tensor& x, const Tensor& w, const ConvGeom& g);
Tensor t_conv_adj_input(const Tensor& y, const Tensor& w, const ConvGeom& g);
Tensor t_conv_adj_weight(const Tensor& x, const Tensor& y, const ConvGeom& g);

// --- pooling ----------------------------------------------------------
// 2x2 stride-2 max pooling. `mask` records, per output element, the flat
// index of the selected input; ties resolve to the first candidate in
// row-major order.
Tensor t_maxpool(const Tensor& x, std::vector<int64_t>& mask);
Tensor t_pool_scatter(const Tensor& y, const std::vector<int64_t>& mask, const Shape& x_shape);
Tensor t_pool_gather(const Tensor& x, const std::vector<int64_t>& mask, const Shape& y_shape);

// --- reductions / broadcasts (adjoint pairs) --------------------------
Tensor t_row_sum(const Tensor& a);                    // (N,K) -> (N)
Tensor t_col_bcast(const Tensor& v, int64_t k);       // (N)   -> (N,K)
Tensor t_feat_sum(const Tensor& a);                   // (N,F) -> (F)
Tensor t_feat_bcast(const Tensor& v, int64_t n);      // (F)   -> (N,F)
Tensor t_chan_sum(const Tensor& a);                   // (N,C,H,W) -> (C)
Tensor t_chan_bcast(const Tensor& v, const Shape& s); // (C)   -> (N,C,H,W)
Tensor t_sum_all(const Tensor& a);                    // any -> {1}
Tensor t_fill_bcast(const Tensor& s1, const Shape& s);// {1} -> any

// --- classification loss ----------------------------------------------
Tensor t_softmax_rows(const Tensor& z);  // log-sum-exp shifted
Tensor t_softmax_xent(const Tensor& z, const std::vector<int>& labels);  // per-sample loss (N)
Tensor t_onehot(const std::vector<int>& labels, int64_t k);

[[noreturn]] void shape_error(const std::string& op, const std::string& detail);

}  // namespace dc
