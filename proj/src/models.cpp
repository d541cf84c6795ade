#include "dc/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dc/rng.hpp"

namespace dc {

int64_t ParamSet::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : items) n += t.numel();
  return n;
}

VictimSpec mlp_victim(const Shape& input_shape, int64_t num_classes, double width_scale) {
  VictimSpec s;
  s.kind = VictimKind::Mlp;
  s.input_shape = input_shape;
  s.num_classes = num_classes;
  auto scaled = [&](int64_t w) { return std::max<int64_t>(4, std::llround(w * width_scale)); };
  s.mlp_widths = {s.input_dim(), scaled(256), scaled(128), num_classes};
  return s;
}

VictimSpec cnn_victim(const Shape& input_shape, int64_t num_classes) {
  VictimSpec s;
  s.kind = VictimKind::Cnn;
  s.input_shape = input_shape;
  s.num_classes = num_classes;
  s.conv_channels = {20, 50};
  s.fc_width = 500;
  return s;
}

GeneratorSpec fc_generator(const Shape& input_shape, double epsilon, std::vector<int64_t> hidden) {
  GeneratorSpec s;
  s.kind = GeneratorKind::Fc;
  s.input_shape = input_shape;
  s.epsilon = epsilon;
  s.fc_hidden = std::move(hidden);
  return s;
}

GeneratorSpec conv_generator(const Shape& input_shape, double epsilon,
                             std::vector<int64_t> enc_channels) {
  GeneratorSpec s;
  s.kind = GeneratorKind::Conv;
  s.input_shape = input_shape;
  s.epsilon = epsilon;
  s.enc_channels = std::move(enc_channels);
  return s;
}

namespace {

constexpr int64_t kEncKernel = 4, kEncStride = 2, kEncPad = 1;

int64_t enc_out_size(int64_t in) { return (in + 2 * kEncPad - kEncKernel) / kEncStride + 1; }

// Spatial sizes along the conv-generator encoder, input size first.
std::vector<int64_t> encoder_sizes(int64_t in, size_t layers) {
  std::vector<int64_t> sizes{in};
  for (size_t i = 0; i < layers; ++i) {
    int64_t next = enc_out_size(sizes.back());
    if (next < 1)
      throw std::invalid_argument("conv generator: input too small for " +
                                  std::to_string(layers) + " encoder layers");
    sizes.push_back(next);
  }
  return sizes;
}

struct ParamBuilder {
  ParamSet set;
  Rng rng;
  explicit ParamBuilder(uint64_t seed) : rng(seed) {}

  void weight(const std::string& name, Shape shape, int64_t fan_in, int64_t fan_out) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    set.items.emplace_back(name, std::move(t));
  }
  void bias(const std::string& name, int64_t n) {
    set.items.emplace_back(name, Tensor::zeros({n}));
  }
};

void mlp_layers(ParamBuilder& b, const std::vector<int64_t>& widths, const std::string& prefix) {
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    std::string tag = prefix + std::to_string(i);
    b.weight(tag + ".w", {widths[i], widths[i + 1]}, widths[i], widths[i + 1]);
    b.bias(tag + ".b", widths[i + 1]);
  }
}

}  // namespace

ParamSet init_params(const VictimSpec& spec, uint64_t seed) {
  ParamBuilder b(seed);
  if (spec.kind == VictimKind::Mlp) {
    if (spec.mlp_widths.size() < 2 || spec.mlp_widths.back() != spec.num_classes)
      throw std::invalid_argument("mlp victim: width chain must end at num_classes");
    mlp_layers(b, spec.mlp_widths, "fc");
    return std::move(b.set);
  }
  if (spec.input_shape.size() != 3)
    throw std::invalid_argument("cnn victim: input shape must be {C,H,W}");
  int64_t c = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
  for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
    int64_t out_c = spec.conv_channels[i];
    std::string tag = "conv" + std::to_string(i);
    b.weight(tag + ".w", {out_c, c, 3, 3}, c * 9, out_c * 9);
    b.bias(tag + ".b", out_c);
    c = out_c;
    h /= 2;
    w /= 2;
  }
  int64_t flat = c * h * w;
  mlp_layers(b, {flat, spec.fc_width, spec.num_classes}, "fc");
  return std::move(b.set);
}

ParamSet init_params(const GeneratorSpec& spec, uint64_t seed) {
  ParamBuilder b(seed);
  if (spec.epsilon < 0.0) throw std::invalid_argument("generator: epsilon must be >= 0");
  if (spec.kind == GeneratorKind::Fc) {
    std::vector<int64_t> widths;
    widths.push_back(spec.input_dim());
    widths.insert(widths.end(), spec.fc_hidden.begin(), spec.fc_hidden.end());
    widths.push_back(spec.input_dim());
    mlp_layers(b, widths, "fc");
    return std::move(b.set);
  }
  if (spec.input_shape.size() != 3)
    throw std::invalid_argument("conv generator: input shape must be {C,H,W}");
  const auto& ch = spec.enc_channels;
  if (ch.empty()) throw std::invalid_argument("conv generator: empty channel list");
  encoder_sizes(spec.input_shape[1], ch.size());  // validates depth
  encoder_sizes(spec.input_shape[2], ch.size());
  int64_t in_c = spec.input_shape[0];
  for (size_t i = 0; i < ch.size(); ++i) {
    std::string tag = "enc" + std::to_string(i);
    b.weight(tag + ".w", {ch[i], in_c, kEncKernel, kEncKernel}, in_c * kEncKernel * kEncKernel,
             ch[i] * kEncKernel * kEncKernel);
    b.bias(tag + ".b", ch[i]);
    in_c = ch[i];
  }
  // Transposed-conv weight (in_c, out_c, kh, kw): the mirror of enc layer i
  // maps ch[i] back toward ch[i-1]; the last one keeps ch[0] channels.
  for (size_t i = ch.size(); i-- > 0;) {
    int64_t out_c = i > 0 ? ch[i - 1] : ch[0];
    std::string tag = "dec" + std::to_string(ch.size() - 1 - i);
    b.weight(tag + ".w", {ch[i], out_c, kEncKernel, kEncKernel}, ch[i] * kEncKernel * kEncKernel,
             out_c * kEncKernel * kEncKernel);
    b.bias(tag + ".b", out_c);
  }
  b.weight("out.w", {spec.input_shape[0], ch[0], 3, 3}, ch[0] * 9, spec.input_shape[0] * 9);
  b.bias("out.b", spec.input_shape[0]);
  return std::move(b.set);
}

std::vector<int> add_param_leaves(Graph& g, const ParamSet& p, bool requires_grad) {
  std::vector<int> ids;
  ids.reserve(p.size());
  for (const auto& [name, t] : p.items) ids.push_back(g.leaf(t, requires_grad));
  return ids;
}

namespace {

int mlp_chain(Graph& g, std::span<const int> params, int x, size_t layers, bool relu_last) {
  int h = x;
  for (size_t i = 0; i < layers; ++i) {
    h = g.bias_add(g.matmul(h, params[2 * i]), params[2 * i + 1]);
    if (i + 1 < layers || relu_last) h = g.relu(h);
  }
  return h;
}

int flatten_to(Graph& g, int x, int64_t dim) {
  const Tensor& v = g.val(x);
  if (v.rank() == 2 && v.dim(1) == dim) return x;
  return g.reshape(x, {v.dim(0), dim});
}

int to_image(Graph& g, int x, const Shape& chw) {
  const Tensor& v = g.val(x);
  Shape target{v.dim(0)};
  target.insert(target.end(), chw.begin(), chw.end());
  if (v.shape == target) return x;
  return g.reshape(x, target);
}

}  // namespace

int victim_logits(Graph& g, const VictimSpec& spec, std::span<const int> params, int x) {
  if (spec.kind == VictimKind::Mlp) {
    int h = flatten_to(g, x, spec.input_dim());
    return mlp_chain(g, params, h, spec.mlp_widths.size() - 1, false);
  }
  int h = to_image(g, x, spec.input_shape);
  size_t p = 0;
  for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
    h = g.bias_add(g.conv(h, params[p], 1, 1), params[p + 1]);
    p += 2;
    h = g.maxpool(g.relu(h));
  }
  const Tensor& v = g.val(h);
  h = g.reshape(h, {v.dim(0), v.numel() / v.dim(0)});
  return mlp_chain(g, params.subspan(p), h, 2, false);
}

int victim_hidden(Graph& g, const VictimSpec& spec, std::span<const int> params, int x) {
  // Rebuild the forward chain but stop at the activation feeding the
  // logits layer.
  if (spec.kind == VictimKind::Mlp) {
    int h = flatten_to(g, x, spec.input_dim());
    size_t layers = spec.mlp_widths.size() - 1;
    return mlp_chain(g, params, h, layers - 1, true);
  }
  int h = to_image(g, x, spec.input_shape);
  size_t p = 0;
  for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
    h = g.bias_add(g.conv(h, params[p], 1, 1), params[p + 1]);
    p += 2;
    h = g.maxpool(g.relu(h));
  }
  const Tensor& v = g.val(h);
  h = g.reshape(h, {v.dim(0), v.numel() / v.dim(0)});
  return mlp_chain(g, params.subspan(p), h, 1, true);
}

int generator_noise(Graph& g, const GeneratorSpec& spec, std::span<const int> params, int x) {
  const Shape in_shape = g.val(x).shape;
  int out;
  if (spec.kind == GeneratorKind::Fc) {
    int h = flatten_to(g, x, spec.input_dim());
    out = mlp_chain(g, params, h, spec.fc_hidden.size() + 1, false);
  } else {
    int h = to_image(g, x, spec.input_shape);
    const auto& ch = spec.enc_channels;
    auto sizes_h = encoder_sizes(spec.input_shape[1], ch.size());
    auto sizes_w = encoder_sizes(spec.input_shape[2], ch.size());
    size_t p = 0;
    for (size_t i = 0; i < ch.size(); ++i) {
      h = g.relu(g.bias_add(g.conv(h, params[p], kEncStride, kEncPad), params[p + 1]));
      p += 2;
    }
    for (size_t i = 0; i < ch.size(); ++i) {
      size_t level = ch.size() - 1 - i;  // decode toward encoder input sizes
      h = g.conv_input_adj(h, params[p], kEncStride, kEncPad, sizes_h[level], sizes_w[level]);
      h = g.relu(g.bias_add(h, params[p + 1]));
      p += 2;
    }
    out = g.bias_add(g.conv(h, params[p], 1, 1), params[p + 1]);
  }
  int noise = g.scalar_mul(g.tanh_op(out), spec.epsilon);
  if (g.val(noise).shape != in_shape) noise = g.reshape(noise, in_shape);
  return noise;
}

namespace {
template <typename Spec, typename Builder>
Tensor eval_forward(const Spec& spec, const ParamSet& p, const Tensor& x, Builder&& build) {
  Graph g;
  auto leaves = add_param_leaves(g, p, false);
  int xid = g.constant(x);
  int out = build(g, spec, leaves, xid);
  return g.val(out);
}
}  // namespace

Tensor victim_logits_eval(const VictimSpec& spec, const ParamSet& theta, const Tensor& x) {
  return eval_forward(spec, theta, x, [](Graph& g, const VictimSpec& s, auto& l, int xid) {
    return victim_logits(g, s, l, xid);
  });
}

Tensor victim_hidden_eval(const VictimSpec& spec, const ParamSet& theta, const Tensor& x) {
  return eval_forward(spec, theta, x, [](Graph& g, const VictimSpec& s, auto& l, int xid) {
    return victim_hidden(g, s, l, xid);
  });
}

Tensor generator_noise_eval(const GeneratorSpec& spec, const ParamSet& xi, const Tensor& x) {
  return eval_forward(spec, xi, x, [](Graph& g, const GeneratorSpec& s, auto& l, int xid) {
    return generator_noise(g, s, l, xid);
  });
}

OptimizerState make_sgd(double lr) {
  OptimizerState s;
  s.kind = OptKind::Sgd;
  s.lr = lr;
  return s;
}

OptimizerState make_adam(double lr, double beta1, double beta2, double eps) {
  OptimizerState s;
  s.kind = OptKind::Adam;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

namespace {
void check_grads(const char* op, const ParamSet& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size())
    throw std::invalid_argument(std::string(op) + ": got " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(params.size()) + " parameters");
  for (size_t i = 0; i < grads.size(); ++i)
    if (grads[i].shape != params.tensor(i).shape)
      throw std::invalid_argument(std::string(op) + ": gradient shape mismatch for '" +
                                  params.name(i) + "'");
}
}  // namespace

ParamSet sgd_step(const ParamSet& params, const std::vector<Tensor>& grads, double alpha) {
  check_grads("sgd_step", params, grads);
  ParamSet out;
  out.items.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    out.items.emplace_back(params.name(i), t_sub(params.tensor(i), t_scalar_mul(grads[i], alpha)));
  return out;
}

std::pair<ParamSet, OptimizerState> adam_step(const ParamSet& params,
                                              const std::vector<Tensor>& grads,
                                              OptimizerState state) {
  check_grads("adam_step", params, grads);
  if (state.m.empty()) {
    for (size_t i = 0; i < params.size(); ++i) {
      state.m.push_back(Tensor::zeros(params.tensor(i).shape));
      state.v.push_back(Tensor::zeros(params.tensor(i).shape));
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match parameter count");
  state.step_count += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  ParamSet out;
  out.items.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params.tensor(i);
    const Tensor& g = grads[i];
    if (state.m[i].shape != p.shape)
      throw std::invalid_argument("adam_step: moment shape mismatch for '" + params.name(i) + "'");
    Tensor np(p.shape);
    for (int64_t j = 0; j < p.numel(); ++j) {
      double m = state.beta1 * state.m[i][j] + (1.0 - state.beta1) * g[j];
      double v = state.beta2 * state.v[i][j] + (1.0 - state.beta2) * g[j] * g[j];
      state.m[i][j] = m;
      state.v[i][j] = v;
      np[j] = p[j] - state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps);
    }
    out.items.emplace_back(params.name(i), std::move(np));
  }
  return {std::move(out), std::move(state)};
}

ParamSet optimizer_step(const ParamSet& params, const std::vector<Tensor>& grads,
                        OptimizerState& state) {
  if (state.kind == OptKind::Sgd) return sgd_step(params, grads, state.lr);
  auto [p, s] = adam_step(params, grads, std::move(state));
  state = std::move(s);
  return std::move(p);
}

namespace {

constexpr char kMagic[4] = {'D', 'C', 'F', 'Z'};
constexpr uint8_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error("parameter file truncated");
  return v;
}

}  // namespace

void save_params(const ParamSet& p, const std::string& path) {
  for (const auto& [name, t] : p.items)
    if (!t.all_finite())
      throw std::runtime_error("save_params: non-finite values in '" + name + "'");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint32_t>(p.size()));
  for (const auto& [name, t] : p.items) {
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape) write_pod(os, static_cast<uint64_t>(d));
  }
  for (const auto& [name, t] : p.items)
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

ParamSet load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open parameter file '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("'" + path + "' is not a parameter file (bad magic)");
  uint8_t version = read_pod<uint8_t>(is);
  if (version != kVersion)
    throw std::runtime_error("unsupported parameter file version " + std::to_string(version));
  uint32_t count = read_pod<uint32_t>(is);
  ParamSet p;
  std::vector<int64_t> sizes;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("parameter file truncated");
    uint32_t rank = read_pod<uint32_t>(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(read_pod<uint64_t>(is));
    sizes.push_back(shape_numel(shape));
    p.items.emplace_back(std::move(name), Tensor(std::move(shape)));
  }
  for (uint32_t i = 0; i < count; ++i) {
    Tensor& t = p.tensor(i);
    if (!is.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(sizes[i] * sizeof(double))))
      throw std::runtime_error("parameter file truncated");
    if (!t.all_finite())
      throw std::runtime_error("non-finite values in parameter '" + p.name(i) + "'");
  }
  return p;
}

}  // namespace dc
