#pragma once

#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

#include "dc/tensor.hpp"

namespace dc {

enum class Op : uint8_t {
  Leaf,
  Add,
  Sub,
  ScalarMul,
  Mul,
  MatMul,
  Transpose,
  Conv,
  ConvInputAdj,
  ConvWeightAdj,
  MaxPool,
  PoolScatter,
  PoolGather,
  Relu,
  Tanh,
  Reshape,
  RowSum,
  ColBcast,
  FeatSum,
  FeatBcast,
  ChanSum,
  ChanBcast,
  SumAll,
  FillBcast,
  Softmax,
  SoftmaxXent,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::Leaf;
  int a = -1, b = -1;  // parent ids, -1 if unused
  bool requires_grad = false;
  Tensor value;
  double scalar = 0.0;  // ScalarMul factor
  ConvGeom geom;        // Conv family
  Shape shape_arg;      // Reshape / broadcast targets, pool input shape
  std::shared_ptr<const std::vector<int64_t>> pool_mask;
  std::shared_ptr<const std::vector<int>> labels;
};

// Gradient of a scalar node with respect to requires-grad leaves:
// leaf id -> id of the node holding the gradient tensor.
using GradMap = std::unordered_map<int, int>;

// Define-by-run computation tape. Every builder call evaluates its value
// immediately and appends a node; parents always precede children, so the
// tape order is a topological order.
//
// backward() emits the reverse pass as ordinary graph ops. With
// create_graph=true the emitted nodes track gradients themselves, so a
// scalar function of a gradient can be differentiated again (double
// backprop); the pseudo-update meta-gradient relies on this. With
// create_graph=false the emitted nodes are detached, and callers normally
// use backward_values(), which copies the gradients out and rolls the
// tape back to its pre-backward size.
class Graph {
 public:
  int leaf(Tensor v, bool requires_grad = false);
  int constant(Tensor v) { return leaf(std::move(v), false); }

  int add(int a, int b);
  int sub(int a, int b);
  int scalar_mul(int a, double c);
  int mul(int a, int b);
  int matmul(int a, int b);
  int transpose(int a);
  int conv(int x, int w, int64_t stride, int64_t pad);
  // Transposed convolution: y-shaped input, x-shaped output of size out_h x out_w.
  int conv_input_adj(int y, int w, int64_t stride, int64_t pad, int64_t out_h, int64_t out_w);
  int conv_weight_adj(int x, int y, int64_t stride, int64_t pad, int64_t kh, int64_t kw);
  int maxpool(int x);
  int relu(int a);
  int tanh_op(int a);
  int reshape(int a, Shape target);
  int row_sum(int a);
  int col_bcast(int v, int64_t k);
  int feat_sum(int a);
  int feat_bcast(int v, int64_t n);
  int chan_sum(int a);
  int chan_bcast(int v, Shape target);
  int sum_all(int a);
  int fill_bcast(int s, Shape target);
  int softmax(int z);
  int softmax_xent(int z, std::vector<int> labels);

  // Composites.
  int bias_add(int x, int b);   // rank-2: per-feature, rank-4: per-channel
  int mean_batch(int a);        // sum / numel, scalar result

  const Tensor& val(int id) const { return nodes_[id].value; }
  const Node& node(int id) const { return nodes_[id]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Drop every node with id >= checkpoint.
  void rollback(int checkpoint) { nodes_.resize(checkpoint); }

  // With only_leaves set, gradient propagation is pruned to nodes from
  // which one of those leaves is reachable; other leaves get no entry.
  GradMap backward(int loss, bool create_graph, const std::vector<int>* only_leaves = nullptr);

  // Gradients of `loss` for the given leaves, tape restored afterwards.
  // Throws if a leaf has no gradient entry (not reachable from the loss).
  std::vector<Tensor> backward_values(int loss, const std::vector<int>& leaves);

 private:
  int push(Node n);
  int emit_scaled(int grad, double c);
  void accumulate(std::vector<int>& grad, int target, int contribution);
  std::vector<char> live_;  // per-node: propagation allowed (scratch for backward)

  std::vector<Node> nodes_;
  bool detach_emission_ = false;
};

}  // namespace dc
