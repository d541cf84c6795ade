#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dc/graph.hpp"
#include "dc/tensor.hpp"

namespace dc {

// Named, ordered parameter collection; the unit the optimizers and the
// serializer work on. Order is fixed by the architecture spec, so two
// ParamSets built from the same spec always align.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  size_t size() const { return items.size(); }
  const Tensor& tensor(size_t i) const { return items[i].second; }
  Tensor& tensor(size_t i) { return items[i].second; }
  const std::string& name(size_t i) const { return items[i].first; }
  int64_t total_params() const;
};

enum class VictimKind { Mlp, Cnn };

struct VictimSpec {
  VictimKind kind = VictimKind::Mlp;
  // Mlp: full width chain {in, hidden..., K}.
  std::vector<int64_t> mlp_widths;
  // Cnn: 3x3 same-pad convs, each followed by relu and 2x2 maxpool.
  std::vector<int64_t> conv_channels;
  int64_t fc_width = 500;
  int64_t num_classes = 10;
  Shape input_shape;  // {d} for Mlp-style data, {C,H,W} for images

  int64_t input_dim() const { return shape_numel(input_shape); }
};

// Classifier presets. width_scale halves/doubles the hidden widths for
// the transfer study.
VictimSpec mlp_victim(const Shape& input_shape, int64_t num_classes, double width_scale = 1.0);
VictimSpec cnn_victim(const Shape& input_shape, int64_t num_classes);

enum class GeneratorKind { Fc, Conv };

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::Fc;
  // Fc: hidden widths only; in/out dims come from input_shape.
  std::vector<int64_t> fc_hidden;
  // Conv: encoder channels; decoder mirrors them with transposed convs.
  std::vector<int64_t> enc_channels;
  double epsilon = 0.0;  // infinity-norm noise budget
  Shape input_shape;

  int64_t input_dim() const { return shape_numel(input_shape); }
};

GeneratorSpec fc_generator(const Shape& input_shape, double epsilon,
                           std::vector<int64_t> hidden = {256, 64, 256});
GeneratorSpec conv_generator(const Shape& input_shape, double epsilon,
                             std::vector<int64_t> enc_channels = {16, 32, 64, 128});

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases;
// bit-identical for identical (spec, seed).
ParamSet init_params(const VictimSpec& spec, uint64_t seed);
ParamSet init_params(const GeneratorSpec& spec, uint64_t seed);

// Add one leaf per parameter to the graph, in ParamSet order.
std::vector<int> add_param_leaves(Graph& g, const ParamSet& p, bool requires_grad);

// Forward builders; differentiable wrt both parameters and input.
int victim_logits(Graph& g, const VictimSpec& spec, std::span<const int> params, int x);
// Activation entering the logits layer (the "final hidden layer").
int victim_hidden(Graph& g, const VictimSpec& spec, std::span<const int> params, int x);
// Bounded perturbation in the input space: epsilon * tanh(pre-activation).
int generator_noise(Graph& g, const GeneratorSpec& spec, std::span<const int> params, int x);

// Plain (non-graph) forward passes over value tensors.
Tensor victim_logits_eval(const VictimSpec& spec, const ParamSet& theta, const Tensor& x);
Tensor victim_hidden_eval(const VictimSpec& spec, const ParamSet& theta, const Tensor& x);
Tensor generator_noise_eval(const GeneratorSpec& spec, const ParamSet& xi, const Tensor& x);

// --- optimizers ---------------------------------------------------------

enum class OptKind { Sgd, Adam };

struct OptimizerState {
  OptKind kind = OptKind::Sgd;
  double lr = 0.01;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step_count = 0;
  std::vector<Tensor> m, v;  // first/second moments, ParamSet order
};

OptimizerState make_sgd(double lr);
OptimizerState make_adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// theta - alpha * g. Inputs untouched; throws on count/shape mismatch.
ParamSet sgd_step(const ParamSet& params, const std::vector<Tensor>& grads, double alpha);

// Bias-corrected Adam; returns the updated parameters and state.
std::pair<ParamSet, OptimizerState> adam_step(const ParamSet& params,
                                              const std::vector<Tensor>& grads,
                                              OptimizerState state);

// Dispatch on state.kind; mutates state in place (Adam moments/step).
ParamSet optimizer_step(const ParamSet& params, const std::vector<Tensor>& grads,
                        OptimizerState& state);

// --- serialization ------------------------------------------------------
// Binary format: magic "DCFZ", version byte 1, u32 tensor count, then per
// tensor (u32 name length, name bytes, u32 rank, u64 dims...), then all
// tensor data as little-endian f64 in declared order.
void save_params(const ParamSet& p, const std::string& path);
ParamSet load_params(const std::string& path);

}  // namespace dc
