#include "dc/gradcheck.hpp"

#include <cmath>

namespace dc {

namespace {

double loss_at(const LossBuilder& build, const ParamSet& point) {
  Graph g;
  auto leaves = add_param_leaves(g, point, true);
  int loss = build(g, leaves);
  return g.val(loss)[0];
}

double max_rel_error(const LossBuilder& build, const ParamSet& point, double delta,
                     const std::vector<Tensor>& analytic) {
  double worst = 0.0;
  ParamSet probe = point;
  for (size_t i = 0; i < point.size(); ++i) {
    for (int64_t j = 0; j < point.tensor(i).numel(); ++j) {
      double orig = probe.tensor(i)[j];
      probe.tensor(i)[j] = orig + delta;
      double up = loss_at(build, probe);
      probe.tensor(i)[j] = orig - delta;
      double down = loss_at(build, probe);
      probe.tensor(i)[j] = orig;
      double fd = (up - down) / (2.0 * delta);
      double ad = analytic[i][j];
      double rel = std::abs(fd - ad) / std::max(1e-8, std::abs(fd) + std::abs(ad));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

double grad_check(const LossBuilder& build, const ParamSet& point, double delta) {
  if (delta <= 0.0) throw std::invalid_argument("grad_check: delta must be positive");
  Graph g;
  auto leaves = add_param_leaves(g, point, true);
  int loss = build(g, leaves);
  std::vector<Tensor> analytic = g.backward_values(loss, leaves);
  return max_rel_error(build, point, delta, analytic);
}

double grad_check_against(const LossBuilder& build, const ParamSet& point, double delta,
                          const std::vector<Tensor>& analytic) {
  return max_rel_error(build, point, delta, analytic);
}

double eval_loss(const LossBuilder& build, const ParamSet& point) {
  return loss_at(build, point);
}

}  // namespace dc
