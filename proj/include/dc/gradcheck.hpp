#pragma once

#include <functional>
#include <vector>

#include "dc/graph.hpp"
#include "dc/models.hpp"

namespace dc {

// Builds a scalar loss from leaves that were added (in ParamSet order,
// requires_grad=true) for the point under test. Must be a pure function
// of the leaf values so that re-evaluation at perturbed points is valid.
using LossBuilder = std::function<int(Graph&, const std::vector<int>& leaves)>;

// Max over all coordinates of |fd - ad| / max(1e-8, |fd| + |ad|), where fd
// is the central difference (f(x+d) - f(x-d)) / 2d and ad the reverse-mode
// gradient. Reports, never throws on mismatch.
double grad_check(const LossBuilder& build, const ParamSet& point, double delta);

// Same metric against externally supplied gradients; lets tests verify the
// oracle actually flags corrupted derivatives.
double grad_check_against(const LossBuilder& build, const ParamSet& point, double delta,
                          const std::vector<Tensor>& analytic);

// Loss value at a point (forward only).
double eval_loss(const LossBuilder& build, const ParamSet& point);

}  // namespace dc
