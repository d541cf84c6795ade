#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dc/data.hpp"
#include "dc/graph.hpp"
#include "dc/models.hpp"

namespace dc {

enum class AttackMode { Untargeted, Targeted };
enum class AttackAlgo { Trajectory, MemEfficient };

// Label permutation for the targeted mode; must be bijective and, when
// used as an attack target, fixed-point free.
struct LabelMap {
  std::vector<int> table;

  static LabelMap shift(int num_classes, int k);
  int operator()(int y) const { return table[y]; }
  bool empty() const { return table.empty(); }
  std::vector<int> apply(const std::vector<int>& ys) const;
  void validate(bool fixed_point_free) const;
};

struct ConfuseConfig {
  int trials = 20;
  int maxiter = 200;
  double alpha_f = 0.01;   // victim SGD learning rate
  double alpha_g = 1e-4;   // generator learning rate
  int batch_size = 64;
  AttackMode mode = AttackMode::Untargeted;
  LabelMap eta;            // targeted mode only
  uint64_t seed = 0;
  OptKind generator_optimizer = OptKind::Adam;
  // Draw the generator update's clean batch from a separate shuffled
  // stream instead of reusing the step's own mini-batch.
  bool heldout_clean_batch = false;
  VictimSpec victim;
  GeneratorSpec generator;  // carries epsilon

  double epsilon() const { return generator.epsilon; }
  void validate(int num_classes) const;
};

// One recorded victim-training step: parameters BEFORE the update plus
// the clean mini-batch it consumed.
struct TrajectoryEntry {
  ParamSet theta;
  Tensor x;
  std::vector<int> y;
};

struct TrialDiag {
  int trial = 0;
  double mean_inner_loss = 0.0;
  double outer_clean_loss = 0.0;
};

struct AttackResult {
  ParamSet xi;
  std::vector<TrialDiag> diagnostics;
};

// x + g_xi(x). The sum may leave [0,1] by up to epsilon; it is not
// re-clipped (the noise is bounded, not the sum).
Tensor poison_batch(const GeneratorSpec& spec, const ParamSet& xi, const Tensor& x);

// Replace a seeded uniformly random `ratio` fraction of samples by their
// poisoned versions; labels untouched. ratio counts round to nearest.
LabeledDataset apply_poison(const GeneratorSpec& spec, const ParamSet& xi,
                            const LabeledDataset& d, double ratio, uint64_t seed);

// Differentiable single SGD step on the poisoned batch:
//   theta' = theta - alpha_f * grad_theta L(f_theta(x + g_xi(x)), y)
// built with create_graph so theta' is a function of the xi leaves.
struct PseudoUpdate {
  std::vector<int> theta_prime;  // node ids in ParamSet order
  double inner_loss = 0.0;
};
PseudoUpdate pseudo_update(Graph& g, const VictimSpec& vs, const ParamSet& theta,
                           const GeneratorSpec& gs, std::span<const int> xi_leaves,
                           const Tensor& x, const std::vector<int>& y, double alpha_f);

// Gradient of L(f_theta'(x), labels) with respect to the xi leaves, plus
// the loss value.
std::pair<std::vector<Tensor>, double> outer_grads(Graph& g, const VictimSpec& vs,
                                                   const PseudoUpdate& pu, const Tensor& x_clean,
                                                   const std::vector<int>& labels,
                                                   std::span<const int> xi_leaves);

// The only difference between the attack modes at the generator step:
// untargeted ascends the outer loss on true labels (descent direction -1),
// targeted descends it on eta(y) (direction +1).
std::pair<double, std::vector<int>> mode_sign_labels(AttackMode mode, const LabelMap& eta,
                                                     const std::vector<int>& y);

// One full generator update. The inner batch (x, y) feeds the
// pseudo-update; (x_outer, y_outer) is the clean batch for the outer loss
// (normally the same batch). Returns the updated xi.
ParamSet generator_ascent_step(const VictimSpec& vs, const ParamSet& theta,
                               const GeneratorSpec& gs, const ParamSet& xi, const Tensor& x,
                               const std::vector<int>& y, const Tensor& x_outer,
                               const std::vector<int>& y_outer, double alpha_f, AttackMode mode,
                               const LabelMap& eta, OptimizerState& opt,
                               double* inner_loss = nullptr, double* outer_loss = nullptr);

// Plain victim SGD step on a fixed batch; returns the batch loss.
double victim_train_step(const VictimSpec& vs, ParamSet& theta, const Tensor& x,
                         const std::vector<int>& y, double alpha_f);

// Algorithm variants. Trajectory records every (theta_i, x_i, y_i) during
// victim training and replays the list for the generator updates;
// MemEfficient interleaves a generator copy with the victim steps and
// never stores the trajectory. Same seeds and batch schedule give
// identical results.
AttackResult confuse_trajectory(const ConfuseConfig& cfg, const LabeledDataset& data);
AttackResult confuse_memeff(const ConfuseConfig& cfg, const LabeledDataset& data);
AttackResult run_attack(const ConfuseConfig& cfg, const LabeledDataset& data, AttackAlgo algo);

void write_trial_csv(const std::vector<TrialDiag>& diags, const std::string& path);

}  // namespace dc
