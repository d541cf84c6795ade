#include "dc/confuse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dc/rng.hpp"

namespace dc {

LabelMap LabelMap::shift(int num_classes, int k) {
  LabelMap m;
  m.table.resize(num_classes);
  for (int y = 0; y < num_classes; ++y)
    m.table[y] = static_cast<int>(((y + k) % num_classes + num_classes) % num_classes);
  return m;
}

std::vector<int> LabelMap::apply(const std::vector<int>& ys) const {
  std::vector<int> out(ys.size());
  for (size_t i = 0; i < ys.size(); ++i) out[i] = table[ys[i]];
  return out;
}

void LabelMap::validate(bool fixed_point_free) const {
  int k = static_cast<int>(table.size());
  std::vector<char> seen(k, 0);
  for (int y = 0; y < k; ++y) {
    int t = table[y];
    if (t < 0 || t >= k || seen[t]) throw std::invalid_argument("label map is not a permutation");
    seen[t] = 1;
    if (fixed_point_free && t == y)
      throw std::invalid_argument("label map has a fixed point at " + std::to_string(y));
  }
}

void ConfuseConfig::validate(int num_classes) const {
  if (trials < 0) throw std::invalid_argument("config: trials must be >= 0");
  if (maxiter < 1) throw std::invalid_argument("config: maxiter must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch size must be >= 1");
  if (alpha_f < 0.0 || alpha_g < 0.0) throw std::invalid_argument("config: learning rates must be >= 0");
  if (generator.epsilon < 0.0) throw std::invalid_argument("config: epsilon must be >= 0");
  if (mode == AttackMode::Targeted) {
    if (static_cast<int>(eta.table.size()) != num_classes)
      throw std::invalid_argument("targeted mode requires eta defined on all " +
                                  std::to_string(num_classes) + " labels");
    eta.validate(/*fixed_point_free=*/true);
  }
}

Tensor poison_batch(const GeneratorSpec& spec, const ParamSet& xi, const Tensor& x) {
  return t_add(x, generator_noise_eval(spec, xi, x));
}

LabeledDataset apply_poison(const GeneratorSpec& spec, const ParamSet& xi,
                            const LabeledDataset& d, double ratio, uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0)
    throw std::invalid_argument("apply_poison: ratio must be in [0,1]");
  int64_t n = d.size();
  int64_t count = std::clamp<int64_t>(std::llround(ratio * static_cast<double>(n)), 0, n);
  if (count == 0) return d;

  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(count);

  LabeledDataset out = d;
  constexpr int64_t kChunk = 256;
  int64_t row = d.sample_dim();
  for (int64_t at = 0; at < count; at += kChunk) {
    std::vector<int64_t> idx(order.begin() + at,
                             order.begin() + std::min(count, at + kChunk));
    Tensor x = gather_samples(d, idx);
    Tensor px = poison_batch(spec, xi, x);
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy_n(px.data.begin() + static_cast<int64_t>(i) * row, row,
                  out.samples.data.begin() + idx[i] * row);
  }
  char tag[96];
  std::snprintf(tag, sizeof(tag), "|poisoned(ratio=%g,eps=%g,seed=%llu)", ratio, spec.epsilon,
                static_cast<unsigned long long>(seed));
  out.provenance += tag;
  return out;
}

PseudoUpdate pseudo_update(Graph& g, const VictimSpec& vs, const ParamSet& theta,
                           const GeneratorSpec& gs, std::span<const int> xi_leaves,
                           const Tensor& x, const std::vector<int>& y, double alpha_f) {
  std::vector<int> theta_leaves = add_param_leaves(g, theta, true);
  int xc = g.constant(x);
  int noise = generator_noise(g, gs, xi_leaves, xc);
  int xadv = g.add(xc, noise);
  int logits = victim_logits(g, vs, theta_leaves, xadv);
  int loss = g.mean_batch(g.softmax_xent(logits, y));

  GradMap gm = g.backward(loss, /*create_graph=*/true, &theta_leaves);
  PseudoUpdate pu;
  pu.inner_loss = g.val(loss)[0];
  pu.theta_prime.reserve(theta_leaves.size());
  for (int leaf : theta_leaves) {
    auto it = gm.find(leaf);
    if (it == gm.end()) throw std::runtime_error("pseudo_update: missing gradient for parameter");
    pu.theta_prime.push_back(g.sub(leaf, g.scalar_mul(it->second, alpha_f)));
  }
  return pu;
}

std::pair<std::vector<Tensor>, double> outer_grads(Graph& g, const VictimSpec& vs,
                                                   const PseudoUpdate& pu, const Tensor& x_clean,
                                                   const std::vector<int>& labels,
                                                   std::span<const int> xi_leaves) {
  int xc = g.constant(x_clean);
  int logits = victim_logits(g, vs, pu.theta_prime, xc);
  int loss = g.mean_batch(g.softmax_xent(logits, labels));
  double value = g.val(loss)[0];
  std::vector<int> leaves(xi_leaves.begin(), xi_leaves.end());
  return {g.backward_values(loss, leaves), value};
}

std::pair<double, std::vector<int>> mode_sign_labels(AttackMode mode, const LabelMap& eta,
                                                     const std::vector<int>& y) {
  if (mode == AttackMode::Untargeted) return {-1.0, y};  // ascent: negate for the minimizer
  if (eta.empty()) throw std::invalid_argument("targeted mode without eta");
  return {+1.0, eta.apply(y)};  // descent toward the mapped labels
}

ParamSet generator_ascent_step(const VictimSpec& vs, const ParamSet& theta,
                               const GeneratorSpec& gs, const ParamSet& xi, const Tensor& x,
                               const std::vector<int>& y, const Tensor& x_outer,
                               const std::vector<int>& y_outer, double alpha_f, AttackMode mode,
                               const LabelMap& eta, OptimizerState& opt, double* inner_loss,
                               double* outer_loss) {
  Graph g;
  std::vector<int> xi_leaves = add_param_leaves(g, xi, true);
  PseudoUpdate pu = pseudo_update(g, vs, theta, gs, xi_leaves, x, y, alpha_f);
  auto [sign, labels] = mode_sign_labels(mode, eta, y_outer);
  auto [grads, value] = outer_grads(g, vs, pu, x_outer, labels, xi_leaves);
  for (Tensor& t : grads) t = t_scalar_mul(t, sign);
  if (inner_loss) *inner_loss = pu.inner_loss;
  if (outer_loss) *outer_loss = value;
  return optimizer_step(xi, grads, opt);
}

double victim_train_step(const VictimSpec& vs, ParamSet& theta, const Tensor& x,
                         const std::vector<int>& y, double alpha_f) {
  Graph g;
  std::vector<int> leaves = add_param_leaves(g, theta, true);
  int logits = victim_logits(g, vs, leaves, g.constant(x));
  int loss = g.mean_batch(g.softmax_xent(logits, y));
  std::vector<Tensor> grads = g.backward_values(loss, leaves);
  double value = g.val(loss)[0];
  theta = sgd_step(theta, grads, alpha_f);
  return value;
}

namespace {

// Sequential passes over one per-trial shuffle; both algorithms must see
// the same schedule for the equivalence contract to hold.
class BatchSchedule {
 public:
  BatchSchedule(int64_t n, int batch, uint64_t seed) : perm_(n), batch_(batch) {
    std::iota(perm_.begin(), perm_.end(), 0);
    Rng rng(seed);
    rng.shuffle(perm_);
  }

  std::vector<int64_t> batch(int step) const {
    int64_t n = static_cast<int64_t>(perm_.size());
    std::vector<int64_t> idx(batch_);
    int64_t start = (static_cast<int64_t>(step) * batch_) % n;
    for (int j = 0; j < batch_; ++j) idx[j] = perm_[(start + j) % n];
    return idx;
  }

 private:
  std::vector<int64_t> perm_;
  int batch_;
};

struct TrialSeeds {
  uint64_t theta, batches, heldout;
};

TrialSeeds trial_seeds(uint64_t master, int trial) {
  return {derive_seed(master, tag_of("theta"), static_cast<uint64_t>(trial)),
          derive_seed(master, tag_of("batches"), static_cast<uint64_t>(trial)),
          derive_seed(master, tag_of("heldout"), static_cast<uint64_t>(trial))};
}

OptimizerState make_generator_optimizer(const ConfuseConfig& cfg) {
  return cfg.generator_optimizer == OptKind::Adam ? make_adam(cfg.alpha_g) : make_sgd(cfg.alpha_g);
}

}  // namespace

AttackResult confuse_trajectory(const ConfuseConfig& cfg, const LabeledDataset& data) {
  data.validate();
  cfg.validate(data.num_classes);
  AttackResult res;
  res.xi = init_params(cfg.generator, derive_seed(cfg.seed, tag_of("xi")));
  OptimizerState opt = make_generator_optimizer(cfg);

  for (int t = 0; t < cfg.trials; ++t) {
    TrialSeeds seeds = trial_seeds(cfg.seed, t);
    ParamSet theta = init_params(cfg.victim, seeds.theta);
    BatchSchedule sched(data.size(), cfg.batch_size, seeds.batches);
    BatchSchedule heldout(data.size(), cfg.batch_size, seeds.heldout);

    // Train the victim on data poisoned by the trial-frozen generator,
    // recording every step.
    LabeledDataset poisoned = apply_poison(cfg.generator, res.xi, data, 1.0, 0);
    std::vector<TrajectoryEntry> trajectory;
    trajectory.reserve(cfg.maxiter);
    double loss_sum = 0.0;
    for (int i = 0; i < cfg.maxiter; ++i) {
      std::vector<int64_t> idx = sched.batch(i);
      TrajectoryEntry e;
      e.theta = theta;
      e.x = gather_samples(data, idx);
      e.y = gather_labels(data, idx);
      trajectory.push_back(std::move(e));
      loss_sum += victim_train_step(cfg.victim, theta, gather_samples(poisoned, idx),
                                    trajectory.back().y, cfg.alpha_f);
    }

    // Replay the recorded trajectory, updating the generator at each step.
    double outer_last = 0.0;
    for (int i = 0; i < cfg.maxiter; ++i) {
      const TrajectoryEntry& e = trajectory[i];
      Tensor x_outer = e.x;
      std::vector<int> y_outer = e.y;
      if (cfg.heldout_clean_batch) {
        std::vector<int64_t> hidx = heldout.batch(i);
        x_outer = gather_samples(data, hidx);
        y_outer = gather_labels(data, hidx);
      }
      res.xi = generator_ascent_step(cfg.victim, e.theta, cfg.generator, res.xi, e.x, e.y,
                                     x_outer, y_outer, cfg.alpha_f, cfg.mode, cfg.eta, opt,
                                     nullptr, &outer_last);
    }
    res.diagnostics.push_back({t, loss_sum / cfg.maxiter, outer_last});
  }
  return res;
}

AttackResult confuse_memeff(const ConfuseConfig& cfg, const LabeledDataset& data) {
  data.validate();
  cfg.validate(data.num_classes);
  AttackResult res;
  // The working copy xi' from the memory-efficient variant; it coincides
  // with xi at every trial boundary, so a single ParamSet serves as both.
  res.xi = init_params(cfg.generator, derive_seed(cfg.seed, tag_of("xi")));
  OptimizerState opt = make_generator_optimizer(cfg);

  for (int t = 0; t < cfg.trials; ++t) {
    TrialSeeds seeds = trial_seeds(cfg.seed, t);
    ParamSet theta = init_params(cfg.victim, seeds.theta);
    BatchSchedule sched(data.size(), cfg.batch_size, seeds.batches);
    BatchSchedule heldout(data.size(), cfg.batch_size, seeds.heldout);

    // Victim steps use the trial-frozen generator; only xi' advances.
    LabeledDataset poisoned = apply_poison(cfg.generator, res.xi, data, 1.0, 0);
    double loss_sum = 0.0;
    double outer_last = 0.0;
    for (int i = 0; i < cfg.maxiter; ++i) {
      std::vector<int64_t> idx = sched.batch(i);
      Tensor x = gather_samples(data, idx);
      std::vector<int> y = gather_labels(data, idx);

      Tensor x_outer = x;
      std::vector<int> y_outer = y;
      if (cfg.heldout_clean_batch) {
        std::vector<int64_t> hidx = heldout.batch(i);
        x_outer = gather_samples(data, hidx);
        y_outer = gather_labels(data, hidx);
      }
      res.xi = generator_ascent_step(cfg.victim, theta, cfg.generator, res.xi, x, y, x_outer,
                                     y_outer, cfg.alpha_f, cfg.mode, cfg.eta, opt, nullptr,
                                     &outer_last);
      loss_sum +=
          victim_train_step(cfg.victim, theta, gather_samples(poisoned, idx), y, cfg.alpha_f);
    }
    res.diagnostics.push_back({t, loss_sum / cfg.maxiter, outer_last});
  }
  return res;
}

AttackResult run_attack(const ConfuseConfig& cfg, const LabeledDataset& data, AttackAlgo algo) {
  return algo == AttackAlgo::Trajectory ? confuse_trajectory(cfg, data)
                                        : confuse_memeff(cfg, data);
}

void write_trial_csv(const std::vector<TrialDiag>& diags, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "trial,mean_inner_loss,outer_clean_loss\n";
  char line[128];
  for (const TrialDiag& d : diags) {
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f\n", d.trial, d.mean_inner_loss,
                  d.outer_clean_loss);
    os << line;
  }
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace dc
