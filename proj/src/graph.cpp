#include "dc/graph.hpp"

#include <stdexcept>

namespace dc {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "subtract";
    case Op::ScalarMul: return "scalar-multiply";
    case Op::Mul: return "multiply";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Conv: return "conv2d";
    case Op::ConvInputAdj: return "conv2d-input-adjoint";
    case Op::ConvWeightAdj: return "conv2d-weight-adjoint";
    case Op::MaxPool: return "maxpool";
    case Op::PoolScatter: return "pool-scatter";
    case Op::PoolGather: return "pool-gather";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Reshape: return "reshape";
    case Op::RowSum: return "row-sum";
    case Op::ColBcast: return "col-broadcast";
    case Op::FeatSum: return "feature-sum";
    case Op::FeatBcast: return "feature-broadcast";
    case Op::ChanSum: return "channel-sum";
    case Op::ChanBcast: return "channel-broadcast";
    case Op::SumAll: return "sum-all";
    case Op::FillBcast: return "fill-broadcast";
    case Op::Softmax: return "softmax";
    case Op::SoftmaxXent: return "softmax-xent";
  }
  return "?";
}

int Graph::push(Node n) {
  if (!n.value.all_finite())
    throw std::runtime_error(std::string("non-finite value produced by op '") + op_name(n.op) +
                             "'");
  if (detach_emission_) n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

namespace {
bool rg(const std::vector<Node>& nodes, int a, int b) {
  bool r = false;
  if (a >= 0) r = r || nodes[a].requires_grad;
  if (b >= 0) r = r || nodes[b].requires_grad;
  return r;
}
}  // namespace

int Graph::leaf(Tensor v, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad;
  n.value = std::move(v);
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.requires_grad = rg(nodes_, a, b);
  n.value = t_add(nodes_[a].value, nodes_[b].value);
  return push(std::move(n));
}

int Graph::sub(int a, int b) {
  Node n;
  n.op = Op::Sub;
  n.a = a;
  n.b = b;
  n.requires_grad = rg(nodes_, a, b);
  n.value = t_sub(nodes_[a].value, nodes_[b].value);
  return push(std::move(n));
}

int Graph::scalar_mul(int a, double c) {
  Node n;
  n.op = Op::ScalarMul;
  n.a = a;
  n.scalar = c;
  n.requires_grad = rg(nodes_, a, -1);
  n.value = t_scalar_mul(nodes_[a].value, c);
  return push(std::move(n));
}

int Graph::mul(int a, int b) {
  Node n;
  n.op = Op::Mul;
  n.a = a;
  n.b = b;
  n.requires_grad = rg(nodes_, a, b);
  n.value = t_mul(nodes_[a].value, nodes_[b].value);
  return push(std::move(n));
}

int Graph::matmul(int a, int b) {
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.requires_grad = rg(nodes_, a, b);
  n.value = t_matmul(nodes_[a].value, nodes_[b].value);
  return push(std::move(n));
}

int Graph::transpose(int a) {
  Node n;
  n.op = Op::Transpose;
  n.a = a;
  n.requires_grad = rg(nodes_, a, -1);
  n.value = t_transpose(nodes_[a].value);
  return push(std::move(n));
}

int Graph::conv(int x, int w, int64_t stride, int64_t pad) {
  const Tensor& xv = nodes_[x].value;
  const Tensor& wv = nodes_[w].value;
  if (xv.rank() != 4 || wv.rank() != 4)
    shape_error("conv2d", "expects rank-4 input and kernel, got " + shape_str(xv.shape) + ", " +
                              shape_str(wv.shape));
  ConvGeom g;
  g.in_c = xv.dim(1);
  g.out_c = wv.dim(0);
  g.kh = wv.dim(2);
  g.kw = wv.dim(3);
  g.stride = stride;
  g.pad = pad;
  g.h = xv.dim(2);
  g.w = xv.dim(3);
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  Node n;
  n.op = Op::Conv;
  n.a = x;
  n.b = w;
  n.geom = g;
  n.requires_grad = rg(nodes_, x, w);
  n.value = t_conv_fwd(xv, wv, g);
  return push(std::move(n));
}

int Graph::conv_input_adj(int y, int w, int64_t stride, int64_t pad, int64_t out_h, int64_t out_w) {
  const Tensor& yv = nodes_[y].value;
  const Tensor& wv = nodes_[w].value;
  if (yv.rank() != 4 || wv.rank() != 4)
    shape_error("conv2d-input-adjoint", "expects rank-4 operands");
  ConvGeom g;
  g.in_c = wv.dim(1);
  g.out_c = wv.dim(0);
  g.kh = wv.dim(2);
  g.kw = wv.dim(3);
  g.stride = stride;
  g.pad = pad;
  g.h = out_h;
  g.w = out_w;
  g.oh = yv.dim(2);
  g.ow = yv.dim(3);
  if (!g.consistent())
    shape_error("conv2d-input-adjoint",
                "requested output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                    " is inconsistent with input " + shape_str(yv.shape));
  Node n;
  n.op = Op::ConvInputAdj;
  n.a = y;
  n.b = w;
  n.geom = g;
  n.requires_grad = rg(nodes_, y, w);
  n.value = t_conv_adj_input(yv, wv, g);
  return push(std::move(n));
}

int Graph::conv_weight_adj(int x, int y, int64_t stride, int64_t pad, int64_t kh, int64_t kw) {
  const Tensor& xv = nodes_[x].value;
  const Tensor& yv = nodes_[y].value;
  ConvGeom g;
  g.in_c = xv.dim(1);
  g.out_c = yv.dim(1);
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.pad = pad;
  g.h = xv.dim(2);
  g.w = xv.dim(3);
  g.oh = yv.dim(2);
  g.ow = yv.dim(3);
  Node n;
  n.op = Op::ConvWeightAdj;
  n.a = x;
  n.b = y;
  n.geom = g;
  n.requires_grad = rg(nodes_, x, y);
  n.value = t_conv_adj_weight(xv, yv, g);
  return push(std::move(n));
}

int Graph::maxpool(int x) {
  Node n;
  n.op = Op::MaxPool;
  n.a = x;
  n.requires_grad = rg(nodes_, x, -1);
  auto mask = std::make_shared<std::vector<int64_t>>();
  n.value = t_maxpool(nodes_[x].value, *mask);
  n.pool_mask = std::move(mask);
  n.shape_arg = nodes_[x].value.shape;
  return push(std::move(n));
}

int Graph::relu(int a) {
  Node n;
  n.op = Op::Relu;
  n.a = a;
  n.requires_grad = rg(nodes_, a, -1);
  n.value = t_relu(nodes_[a].value);
  return push(std::move(n));
}

int Graph::tanh_op(int a) {
  Node n;
  n.op = Op::Tanh;
  n.a = a;
  n.requires_grad = rg(nodes_, a, -1);
  n.value = t_tanh(nodes_[a].value);
  return push(std::move(n));
}

int Graph::reshape(int a, Shape target) {
  const Tensor& av = nodes_[a].value;
  if (shape_numel(target) != av.numel())
    shape_error("reshape", "cannot reshape " + shape_str(av.shape) + " to " + shape_str(target));
  Node n;
  n.op = Op::Reshape;
  n.a = a;
  n.shape_arg = target;
  n.requires_grad = rg(nodes_, a, -1);
  n.value = Tensor(std::move(target), av.data);
  return push(std::move(n));
}

int Graph::row_sum(int a) {
  Node n;
  n.op = Op::RowSum;
  n.a = a;
  n.requires_grad = rg(nodes_, a, -1);
  n.value = t_row_sum(nodes_[a].value);
  return push(std::move(n));
}

int Graph::col_bcast(int v, int64_t k) {
  Node n;
  n.op = Op::ColBcast;
  n.a = v;
  n.requires_grad = rg(nodes_, v, -1);
  n.value = t_col_bcast(nodes_[v].value, k);
  return push(std::move(n));
}

int Graph::feat_sum(int a) {
  Node n;
  n.op = Op::FeatSum;
  n.a = a;
  n.requires_grad = rg(nodes_, a, -1);
  n.value = t_feat_sum(nodes_[a].value);
  return push(std::move(n));
}

int Graph::feat_bcast(int v, int64_t count) {
  Node n;
  n.op = Op::FeatBcast;
  n.a = v;
  n.requires_grad = rg(nodes_, v, -1);
  n.value = t_feat_bcast(nodes_[v].value, count);
  return push(std::move(n));
}

int Graph::chan_sum(int a) {
  Node n;
  n.op = Op::ChanSum;
  n.a = a;
  n.requires_grad = rg(nodes_, a, -1);
  n.value = t_chan_sum(nodes_[a].value);
  return push(std::move(n));
}

int Graph::chan_bcast(int v, Shape target) {
  Node n;
  n.op = Op::ChanBcast;
  n.a = v;
  n.shape_arg = target;
  n.requires_grad = rg(nodes_, v, -1);
  n.value = t_chan_bcast(nodes_[v].value, target);
  return push(std::move(n));
}

int Graph::sum_all(int a) {
  Node n;
  n.op = Op::SumAll;
  n.a = a;
  n.requires_grad = rg(nodes_, a, -1);
  n.value = t_sum_all(nodes_[a].value);
  return push(std::move(n));
}

int Graph::fill_bcast(int s, Shape target) {
  Node n;
  n.op = Op::FillBcast;
  n.a = s;
  n.shape_arg = target;
  n.requires_grad = rg(nodes_, s, -1);
  n.value = t_fill_bcast(nodes_[s].value, target);
  return push(std::move(n));
}

int Graph::softmax(int z) {
  Node n;
  n.op = Op::Softmax;
  n.a = z;
  n.requires_grad = rg(nodes_, z, -1);
  n.value = t_softmax_rows(nodes_[z].value);
  return push(std::move(n));
}

int Graph::softmax_xent(int z, std::vector<int> labels) {
  Node n;
  n.op = Op::SoftmaxXent;
  n.a = z;
  n.requires_grad = rg(nodes_, z, -1);
  n.value = t_softmax_xent(nodes_[z].value, labels);
  n.labels = std::make_shared<const std::vector<int>>(std::move(labels));
  return push(std::move(n));
}

int Graph::bias_add(int x, int b) {
  const Tensor& xv = nodes_[x].value;
  if (xv.rank() == 2) return add(x, feat_bcast(b, xv.dim(0)));
  if (xv.rank() == 4) return add(x, chan_bcast(b, xv.shape));
  shape_error("bias-broadcast-add", "expects rank 2 or 4, got " + shape_str(xv.shape));
}

int Graph::mean_batch(int a) {
  int64_t n = nodes_[a].value.numel();
  return scalar_mul(sum_all(a), 1.0 / static_cast<double>(n));
}

int Graph::emit_scaled(int grad, double c) { return scalar_mul(grad, c); }

void Graph::accumulate(std::vector<int>& grad, int target, int contribution) {
  if (!nodes_[target].requires_grad || !live_[target]) return;
  grad[target] = grad[target] < 0 ? contribution : add(grad[target], contribution);
}

GradMap Graph::backward(int loss, bool create_graph, const std::vector<int>* only_leaves) {
  if (loss < 0 || loss >= size()) throw std::invalid_argument("backward: bad loss node");
  if (nodes_[loss].value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(nodes_[loss].value.shape));

  const int n0 = size();
  // A node participates only if one of the requested leaves is reachable
  // from it through parent edges (all requires-grad leaves by default).
  live_.assign(n0, 0);
  if (only_leaves) {
    for (int l : *only_leaves)
      if (l >= 0 && l < n0) live_[l] = 1;
    for (int id = 0; id < n0; ++id) {
      if (live_[id]) continue;
      const Node& nd = nodes_[id];
      if ((nd.a >= 0 && live_[nd.a]) || (nd.b >= 0 && live_[nd.b])) live_[id] = 1;
    }
  } else {
    std::fill(live_.begin(), live_.end(), 1);
  }

  detach_emission_ = !create_graph;
  std::vector<int> grad(n0, -1);
  grad[loss] = constant(Tensor::full(nodes_[loss].value.shape, 1.0));

  for (int id = loss; id >= 0; --id) {
    const int g = grad[id];
    if (g < 0 || !nodes_[id].requires_grad) continue;
    // Emitting nodes may reallocate nodes_; copy what the rules need first.
    const Op op = nodes_[id].op;
    const int pa = nodes_[id].a, pb = nodes_[id].b;
    const double scalar = nodes_[id].scalar;
    const ConvGeom geom = nodes_[id].geom;
    const Shape shape_arg = nodes_[id].shape_arg;
    const auto pool_mask = nodes_[id].pool_mask;
    const auto labels = nodes_[id].labels;

    switch (op) {
      case Op::Leaf:
        break;
      case Op::Add:
        accumulate(grad, pa, g);
        accumulate(grad, pb, g);
        break;
      case Op::Sub:
        accumulate(grad, pa, g);
        if (nodes_[pb].requires_grad) accumulate(grad, pb, emit_scaled(g, -1.0));
        break;
      case Op::ScalarMul:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, emit_scaled(g, scalar));
        break;
      case Op::Mul:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, mul(g, pb));
        if (nodes_[pb].requires_grad) accumulate(grad, pb, mul(g, pa));
        break;
      case Op::MatMul:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, matmul(g, transpose(pb)));
        if (nodes_[pb].requires_grad) accumulate(grad, pb, matmul(transpose(pa), g));
        break;
      case Op::Transpose:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, transpose(g));
        break;
      case Op::Conv:
        if (nodes_[pa].requires_grad)
          accumulate(grad, pa, conv_input_adj(g, pb, geom.stride, geom.pad, geom.h, geom.w));
        if (nodes_[pb].requires_grad)
          accumulate(grad, pb, conv_weight_adj(pa, g, geom.stride, geom.pad, geom.kh, geom.kw));
        break;
      case Op::ConvInputAdj:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, conv(g, pb, geom.stride, geom.pad));
        if (nodes_[pb].requires_grad)
          accumulate(grad, pb, conv_weight_adj(g, pa, geom.stride, geom.pad, geom.kh, geom.kw));
        break;
      case Op::ConvWeightAdj:
        if (nodes_[pa].requires_grad)
          accumulate(grad, pa, conv_input_adj(pb, g, geom.stride, geom.pad, geom.h, geom.w));
        if (nodes_[pb].requires_grad) accumulate(grad, pb, conv(pa, g, geom.stride, geom.pad));
        break;
      case Op::MaxPool: {
        if (nodes_[pa].requires_grad) {
          Node s;
          s.op = Op::PoolScatter;
          s.a = g;
          s.pool_mask = pool_mask;
          s.shape_arg = shape_arg;
          s.requires_grad = rg(nodes_, g, -1);
          s.value = t_pool_scatter(nodes_[g].value, *pool_mask, shape_arg);
          accumulate(grad, pa, push(std::move(s)));
        }
        break;
      }
      case Op::PoolScatter: {
        if (nodes_[pa].requires_grad) {
          Node s;
          s.op = Op::PoolGather;
          s.a = g;
          s.pool_mask = pool_mask;
          s.shape_arg = nodes_[pa].value.shape;
          s.requires_grad = rg(nodes_, g, -1);
          s.value = t_pool_gather(nodes_[g].value, *pool_mask, s.shape_arg);
          accumulate(grad, pa, push(std::move(s)));
        }
        break;
      }
      case Op::PoolGather: {
        if (nodes_[pa].requires_grad) {
          Node s;
          s.op = Op::PoolScatter;
          s.a = g;
          s.pool_mask = pool_mask;
          s.shape_arg = nodes_[pa].value.shape;
          s.requires_grad = rg(nodes_, g, -1);
          s.value = t_pool_scatter(nodes_[g].value, *pool_mask, s.shape_arg);
          accumulate(grad, pa, push(std::move(s)));
        }
        break;
      }
      case Op::Relu: {
        // Gate captured as a constant: subgradient 0 at the kink and a
        // second derivative of zero everywhere.
        if (nodes_[pa].requires_grad) {
          int mask = constant(t_relu_mask(nodes_[pa].value));
          accumulate(grad, pa, mul(g, mask));
        }
        break;
      }
      case Op::Tanh: {
        if (nodes_[pa].requires_grad) {
          int ones = constant(Tensor::full(nodes_[id].value.shape, 1.0));
          int sech2 = sub(ones, mul(id, id));  // 1 - tanh^2, via the node's own output
          accumulate(grad, pa, mul(g, sech2));
        }
        break;
      }
      case Op::Reshape:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, reshape(g, nodes_[pa].value.shape));
        break;
      case Op::RowSum:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, col_bcast(g, nodes_[pa].value.dim(1)));
        break;
      case Op::ColBcast:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, row_sum(g));
        break;
      case Op::FeatSum:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, feat_bcast(g, nodes_[pa].value.dim(0)));
        break;
      case Op::FeatBcast:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, feat_sum(g));
        break;
      case Op::ChanSum:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, chan_bcast(g, nodes_[pa].value.shape));
        break;
      case Op::ChanBcast:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, chan_sum(g));
        break;
      case Op::SumAll:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, fill_bcast(g, nodes_[pa].value.shape));
        break;
      case Op::FillBcast:
        if (nodes_[pa].requires_grad) accumulate(grad, pa, sum_all(g));
        break;
      case Op::Softmax: {
        if (nodes_[pa].requires_grad) {
          int gp = mul(g, id);
          int dot = col_bcast(row_sum(gp), nodes_[id].value.dim(1));
          accumulate(grad, pa, mul(id, sub(g, dot)));
        }
        break;
      }
      case Op::SoftmaxXent: {
        // d/dz of per-sample loss is softmax(z) - onehot(y), scaled by the
        // incoming per-sample gradient.
        if (nodes_[pa].requires_grad) {
          int64_t k = nodes_[pa].value.dim(1);
          int p = softmax(pa);
          int oh = constant(t_onehot(*labels, k));
          accumulate(grad, pa, mul(col_bcast(g, k), sub(p, oh)));
        }
        break;
      }
    }
  }
  detach_emission_ = false;

  GradMap out;
  for (int id = 0; id < n0; ++id)
    if (nodes_[id].op == Op::Leaf && nodes_[id].requires_grad && grad[id] >= 0) out[id] = grad[id];
  return out;
}

std::vector<Tensor> Graph::backward_values(int loss, const std::vector<int>& leaves) {
  int cp = size();
  GradMap gm = backward(loss, /*create_graph=*/false, &leaves);
  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (int l : leaves) {
    auto it = gm.find(l);
    if (it == gm.end())
      throw std::runtime_error("backward_values: missing gradient entry for leaf " +
                               std::to_string(l));
    out.push_back(nodes_[it->second].value);
  }
  rollback(cp);
  return out;
}

}  // namespace dc
