#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dc/confuse.hpp"
#include "dc/data.hpp"
#include "dc/rng.hpp"
#include "test_util.hpp"

using namespace dc;
using namespace dc::test;

namespace {

bool same_values(const ParamSet& a, const ParamSet& b, double rel_tol) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    for (int64_t j = 0; j < a.tensor(i).numel(); ++j) {
      double x = a.tensor(i)[j], y = b.tensor(i)[j];
      if (std::abs(x - y) > rel_tol * std::max({1.0, std::abs(x), std::abs(y)})) return false;
    }
  return true;
}

LabeledDataset two_blobs(int64_t per_class, int64_t d, uint64_t seed) {
  std::vector<std::vector<double>> centers(2, std::vector<double>(d, 0.0));
  centers[1].assign(d, 1.0);
  return make_gaussian_blobs(per_class, d, centers, 1.0 / 6.0, seed);
}

// Outer loss after one differentiable inner step, as a plain function of
// the generator parameters; the finite-difference oracle for the
// meta-gradient re-runs this at perturbed points.
double meta_loss_at(const VictimSpec& vs, const ParamSet& theta, const GeneratorSpec& gs,
                    const ParamSet& xi, const Tensor& x, const std::vector<int>& y, double af,
                    const std::vector<int>& outer_labels) {
  Graph g;
  auto xl = add_param_leaves(g, xi, true);
  PseudoUpdate pu = pseudo_update(g, vs, theta, gs, xl, x, y, af);
  int logits = victim_logits(g, vs, pu.theta_prime, g.constant(x));
  return g.val(g.mean_batch(g.softmax_xent(logits, outer_labels)))[0];
}

double meta_grad_fd_error(const VictimSpec& vs, const ParamSet& theta, const GeneratorSpec& gs,
                          const ParamSet& xi, const Tensor& x, const std::vector<int>& y,
                          double af) {
  Graph g;
  auto xl = add_param_leaves(g, xi, true);
  PseudoUpdate pu = pseudo_update(g, vs, theta, gs, xl, x, y, af);
  auto [grads, value] = outer_grads(g, vs, pu, x, y, xl);

  double delta = 1e-5, worst = 0.0;
  ParamSet probe = xi;
  for (size_t i = 0; i < xi.size(); ++i)
    for (int64_t j = 0; j < xi.tensor(i).numel(); ++j) {
      double orig = probe.tensor(i)[j];
      probe.tensor(i)[j] = orig + delta;
      double up = meta_loss_at(vs, theta, gs, probe, x, y, af, y);
      probe.tensor(i)[j] = orig - delta;
      double down = meta_loss_at(vs, theta, gs, probe, x, y, af, y);
      probe.tensor(i)[j] = orig;
      worst = std::max(worst, rel_err((up - down) / (2 * delta), grads[i][j]));
    }
  return worst;
}

}  // namespace

TEST_CASE("poison_batch: zero budget is the identity, otherwise bounded") {
  Rng rng(tag_of("poison"));
  Tensor x = rand_tensor({6, 5}, rng, 0.0, 1.0);

  GeneratorSpec g0 = fc_generator({5}, 0.0, {6});
  Tensor p0 = poison_batch(g0, init_params(g0, 3), x);
  CHECK(p0.data == x.data);

  GeneratorSpec g3 = fc_generator({5}, 0.3, {6});
  ParamSet xi = init_params(g3, 3);
  for (auto& [name, t] : xi.items)
    for (auto& v : t.data) v *= 20.0;  // saturate tanh
  Tensor p3 = poison_batch(g3, xi, x);
  CHECK(max_abs_diff(p3, x) <= 0.3 + 1e-12);  // x+n-x rounds by one ulp
  CHECK(max_abs_diff(p3, x) > 0.25);  // actually reaches near the budget
}

TEST_CASE("pseudo_update with alpha_f 0 keeps theta and kills the meta-gradient") {
  VictimSpec vs = mlp_victim({4}, 2);
  vs.mlp_widths = {4, 3, 2};
  GeneratorSpec gs = fc_generator({4}, 0.2, {5});
  ParamSet theta = init_params(vs, 1);
  ParamSet xi = init_params(gs, 2);
  Rng rng(tag_of("pu0"));
  Tensor x = rand_tensor({3, 4}, rng, 0.0, 1.0);
  std::vector<int> y{0, 1, 0};

  Graph g;
  auto xl = add_param_leaves(g, xi, true);
  PseudoUpdate pu = pseudo_update(g, vs, theta, gs, xl, x, y, 0.0);
  for (size_t i = 0; i < theta.size(); ++i)
    CHECK(g.val(pu.theta_prime[i]).data == theta.tensor(i).data);
  auto [grads, value] = outer_grads(g, vs, pu, x, y, xl);
  for (const Tensor& t : grads) CHECK(t.max_abs() == 0.0);
}

TEST_CASE("silent generator reduces the pseudo-update to a plain SGD step") {
  VictimSpec vs = mlp_victim({4}, 2);
  vs.mlp_widths = {4, 3, 2};
  GeneratorSpec gs = fc_generator({4}, 0.25, {5});
  ParamSet theta = init_params(vs, 5);
  ParamSet xi = init_params(gs, 6);
  for (auto& [name, t] : xi.items) std::fill(t.data.begin(), t.data.end(), 0.0);
  Rng rng(tag_of("pu-silent"));
  Tensor x = rand_tensor({4, 4}, rng, 0.0, 1.0);
  std::vector<int> y{0, 1, 1, 0};

  Graph g;
  auto xl = add_param_leaves(g, xi, true);
  PseudoUpdate pu = pseudo_update(g, vs, theta, gs, xl, x, y, 0.05);

  ParamSet plain = theta;
  victim_train_step(vs, plain, x, y, 0.05);
  for (size_t i = 0; i < theta.size(); ++i)
    CHECK(max_abs_diff(g.val(pu.theta_prime[i]), plain.tensor(i)) <= 1e-12);
}

TEST_CASE("meta-gradient matches finite differences on a two-parameter toy model") {
  VictimSpec vs;
  vs.kind = VictimKind::Mlp;
  vs.input_shape = {1};
  vs.num_classes = 2;
  vs.mlp_widths = {1, 2};
  GeneratorSpec gs = fc_generator({1}, 0.3, {});  // single 1x1 layer
  ParamSet theta = init_params(vs, 3);
  ParamSet xi = init_params(gs, 4);
  Rng rng(tag_of("meta-2p"));
  Tensor x = rand_tensor({4, 1}, rng, 0.1, 1.0);
  std::vector<int> y{0, 1, 1, 0};
  double err = meta_grad_fd_error(vs, theta, gs, xi, x, y, 0.1);
  INFO("two-parameter meta-gradient err " << err);
  CHECK(err <= 1e-4);
}

TEST_CASE("meta-gradient matches finite differences on a two-layer model") {
  VictimSpec vs = mlp_victim({3}, 2);
  vs.mlp_widths = {3, 4, 2};
  GeneratorSpec gs = fc_generator({3}, 0.2, {4});
  ParamSet theta = init_params(vs, 11);
  ParamSet xi = init_params(gs, 12);
  Rng rng(tag_of("meta-mlp"));
  Tensor x = rand_tensor({4, 3}, rng, 0.1, 1.0);
  std::vector<int> y{0, 1, 0, 1};
  double err = meta_grad_fd_error(vs, theta, gs, xi, x, y, 0.05);
  INFO("two-layer meta-gradient err " << err);
  CHECK(err <= 1e-4);
}

TEST_CASE("meta-gradient through a conv victim and conv generator") {
  VictimSpec vs;
  vs.kind = VictimKind::Cnn;
  vs.input_shape = {1, 4, 4};
  vs.num_classes = 2;
  vs.conv_channels = {2};
  vs.fc_width = 3;
  GeneratorSpec gs = conv_generator({1, 4, 4}, 0.2, {2});
  ParamSet theta = init_params(vs, 21);
  ParamSet xi = init_params(gs, 22);
  Rng br(tag_of("meta-conv-b"));
  for (auto& [name, t] : xi.items)  // keep pre-activations off the relu kink
    if (name.ends_with(".b"))
      for (auto& v : t.data) v = br.uniform(0.05, 0.2);
  Rng rng(tag_of("meta-conv"));
  Tensor x = rand_tensor({2, 1, 4, 4}, rng, 0.1, 1.0);
  std::vector<int> y{0, 1};
  double err = meta_grad_fd_error(vs, theta, gs, xi, x, y, 0.05);
  INFO("conv meta-gradient err " << err);
  CHECK(err <= 1e-4);
}

TEST_CASE("mode_sign_labels: the two modes differ only in sign and label map") {
  LabelMap eta = LabelMap::shift(4, 1);
  std::vector<int> y{0, 3, 2};
  auto [su, lu] = mode_sign_labels(AttackMode::Untargeted, eta, y);
  CHECK(su == -1.0);
  CHECK(lu == y);
  auto [st, lt] = mode_sign_labels(AttackMode::Targeted, eta, y);
  CHECK(st == +1.0);
  CHECK(lt == std::vector<int>{1, 0, 3});
  LabelMap none;
  CHECK_THROWS_AS(mode_sign_labels(AttackMode::Targeted, none, y), std::invalid_argument);
}

TEST_CASE("label map validation") {
  CHECK_THROWS_AS(LabelMap::shift(5, 0).validate(true), std::invalid_argument);
  LabelMap::shift(5, 0).validate(false);
  LabelMap::shift(5, 2).validate(true);
  LabelMap broken;
  broken.table = {1, 1, 0};
  CHECK_THROWS_AS(broken.validate(false), std::invalid_argument);
}

TEST_CASE("generator step: ascent raises the outer loss, targeted descent lowers it") {
  VictimSpec vs;
  vs.kind = VictimKind::Mlp;
  vs.input_shape = {2};
  vs.num_classes = 2;
  vs.mlp_widths = {2, 2};  // convex in the parameters: linear + cross-entropy
  GeneratorSpec gs = fc_generator({2}, 0.3, {});
  ParamSet theta = init_params(vs, 31);
  ParamSet xi = init_params(gs, 32);
  Rng rng(tag_of("ascent"));
  Tensor x = rand_tensor({6, 2}, rng, 0.1, 1.0);
  std::vector<int> y{0, 1, 0, 1, 0, 1};
  LabelMap eta = LabelMap::shift(2, 1);
  double af = 0.05, ag = 1e-3;

  auto outer_value = [&](const ParamSet& gen, const std::vector<int>& labels) {
    return meta_loss_at(vs, theta, gs, gen, x, y, af, labels);
  };

  // alpha_g = 0 leaves xi untouched.
  OptimizerState frozen = make_sgd(0.0);
  ParamSet same = generator_ascent_step(vs, theta, gs, xi, x, y, x, y, af,
                                        AttackMode::Untargeted, eta, frozen);
  CHECK(same_values(same, xi, 0.0));

  OptimizerState up = make_sgd(ag);
  ParamSet xi_up = generator_ascent_step(vs, theta, gs, xi, x, y, x, y, af,
                                         AttackMode::Untargeted, eta, up);
  CHECK(outer_value(xi_up, y) > outer_value(xi, y));

  OptimizerState down = make_sgd(ag);
  ParamSet xi_down = generator_ascent_step(vs, theta, gs, xi, x, y, x, y, af,
                                           AttackMode::Targeted, eta, down);
  CHECK(outer_value(xi_down, eta.apply(y)) < outer_value(xi, eta.apply(y)));
}

namespace {
ConfuseConfig small_config(const LabeledDataset& data, double epsilon) {
  ConfuseConfig cfg;
  cfg.trials = 2;
  cfg.maxiter = 12;
  cfg.alpha_f = 0.05;
  cfg.alpha_g = 1e-3;
  cfg.batch_size = 8;
  cfg.seed = 99;
  cfg.victim = mlp_victim(data.sample_shape(), data.num_classes);
  cfg.victim.mlp_widths = {data.sample_dim(), 8, 4, data.num_classes};
  cfg.generator = fc_generator(data.sample_shape(), epsilon, {8, 4, 8});
  return cfg;
}
}  // namespace

TEST_CASE("attack with zero trials returns the freshly initialized generator") {
  LabeledDataset data = two_blobs(20, 6, 1);
  ConfuseConfig cfg = small_config(data, 0.3);
  cfg.trials = 0;
  AttackResult a = confuse_trajectory(cfg, data);
  AttackResult b = confuse_memeff(cfg, data);
  CHECK(same_values(a.xi, b.xi, 0.0));
  CHECK(a.diagnostics.empty());
  // Matches an untouched init of the same architecture drawn from the run seed.
  ParamSet fresh = init_params(cfg.generator, derive_seed(cfg.seed, tag_of("xi")));
  CHECK(same_values(a.xi, fresh, 0.0));
}

TEST_CASE("attack is deterministic and the two algorithms coincide") {
  LabeledDataset data = two_blobs(24, 6, 7);
  ConfuseConfig cfg = small_config(data, 0.3);

  AttackResult t1 = confuse_trajectory(cfg, data);
  AttackResult t2 = confuse_trajectory(cfg, data);
  CHECK(same_values(t1.xi, t2.xi, 0.0));

  AttackResult m = confuse_memeff(cfg, data);
  CHECK(same_values(t1.xi, m.xi, 1e-6));
  REQUIRE(t1.diagnostics.size() == m.diagnostics.size());
  for (size_t i = 0; i < t1.diagnostics.size(); ++i) {
    CHECK(t1.diagnostics[i].mean_inner_loss ==
          doctest::Approx(m.diagnostics[i].mean_inner_loss).epsilon(1e-9));
    CHECK(t1.diagnostics[i].outer_clean_loss ==
          doctest::Approx(m.diagnostics[i].outer_clean_loss).epsilon(1e-9));
  }
}

TEST_CASE("equivalence also holds with sgd generator updates and heldout batches") {
  LabeledDataset data = two_blobs(24, 5, 8);
  ConfuseConfig cfg = small_config(data, 0.2);
  cfg.generator_optimizer = OptKind::Sgd;
  cfg.heldout_clean_batch = true;
  AttackResult t = confuse_trajectory(cfg, data);
  AttackResult m = confuse_memeff(cfg, data);
  CHECK(same_values(t.xi, m.xi, 1e-6));
}

TEST_CASE("targeted mode requires a valid eta") {
  LabeledDataset data = two_blobs(12, 4, 3);
  ConfuseConfig cfg = small_config(data, 0.2);
  cfg.mode = AttackMode::Targeted;
  CHECK_THROWS_AS(confuse_memeff(cfg, data), std::invalid_argument);
  cfg.eta = LabelMap::shift(2, 1);
  cfg.trials = 1;
  cfg.maxiter = 4;
  AttackResult r = confuse_memeff(cfg, data);  // runs through
  CHECK(r.diagnostics.size() == 1);
}

TEST_CASE("epsilon 0 attack leaves the data untouched end to end") {
  LabeledDataset data = two_blobs(16, 5, 4);
  ConfuseConfig cfg = small_config(data, 0.0);
  cfg.trials = 1;
  AttackResult r = confuse_memeff(cfg, data);
  LabeledDataset poisoned = apply_poison(cfg.generator, r.xi, data, 1.0, 5);
  CHECK(poisoned.samples.data == data.samples.data);
  CHECK(poisoned.labels == data.labels);
}

TEST_CASE("apply_poison: ratio semantics and determinism") {
  LabeledDataset data = two_blobs(20, 5, 9);
  GeneratorSpec gs = fc_generator({5}, 0.3, {6});
  ParamSet xi = init_params(gs, 17);
  for (auto& [name, t] : xi.items)
    for (auto& v : t.data) v *= 5.0;

  LabeledDataset none = apply_poison(gs, xi, data, 0.0, 1);
  CHECK(none.samples.data == data.samples.data);
  CHECK(none.provenance == data.provenance);

  LabeledDataset all = apply_poison(gs, xi, data, 1.0, 1);
  int64_t changed_all = 0;
  for (int64_t i = 0; i < data.size(); ++i)
    if (one_sample(all, i).data != one_sample(data, i).data) changed_all++;
  CHECK(changed_all == data.size());
  CHECK(max_abs_diff(all.samples, data.samples) <= 0.3 + 1e-12);
  CHECK(all.labels == data.labels);

  LabeledDataset half_a = apply_poison(gs, xi, data, 0.5, 2);
  LabeledDataset half_b = apply_poison(gs, xi, data, 0.5, 2);
  CHECK(half_a.samples.data == half_b.samples.data);
  int64_t changed = 0;
  for (int64_t i = 0; i < data.size(); ++i)
    if (one_sample(half_a, i).data != one_sample(data, i).data) changed++;
  CHECK(changed == data.size() / 2);

  CHECK_THROWS_AS(apply_poison(gs, xi, data, 1.5, 0), std::invalid_argument);
}

TEST_CASE("trial diagnostics CSV") {
  std::vector<TrialDiag> diags{{0, 0.5, 1.25}, {1, 0.25, 2.5}};
  auto path = (std::filesystem::temp_directory_path() / "dc_trials.csv").string();
  write_trial_csv(diags, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "trial,mean_inner_loss,outer_clean_loss");
  std::getline(is, line);
  CHECK(line == "0,0.500000,1.250000");
  std::getline(is, line);
  CHECK(line == "1,0.250000,2.500000");
  std::filesystem::remove(path);
}
