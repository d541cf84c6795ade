#include "dc/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dc/rng.hpp"

namespace dc {

namespace {

struct TreeBuilder {
  const LabeledDataset& data;
  const ForestSpec& spec;
  int64_t dim;
  int features_per_split;
  Rng& rng;
  std::vector<TreeNode> nodes;

  double sample(int64_t row, int64_t feature) const {
    return data.samples[row * dim + feature];
  }

  int majority(const std::vector<int64_t>& rows) const {
    std::vector<int64_t> counts(data.num_classes, 0);
    for (int64_t r : rows) counts[data.labels[r]]++;
    int best = 0;
    for (int c = 1; c < data.num_classes; ++c)
      if (counts[c] > counts[best]) best = c;
    return best;
  }

  static double gini(const std::vector<int64_t>& counts, int64_t total) {
    if (total == 0) return 0.0;
    double s = 0.0;
    for (int64_t c : counts) {
      double p = static_cast<double>(c) / static_cast<double>(total);
      s += p * p;
    }
    return 1.0 - s;
  }

  bool pure(const std::vector<int64_t>& rows) const {
    for (size_t i = 1; i < rows.size(); ++i)
      if (data.labels[rows[i]] != data.labels[rows[0]]) return false;
    return true;
  }

  int make_leaf(const std::vector<int64_t>& rows) {
    TreeNode n;
    n.is_leaf = true;
    n.label = majority(rows);
    nodes.push_back(n);
    return static_cast<int>(nodes.size()) - 1;
  }

  int build(std::vector<int64_t>& rows, int depth) {
    if (depth >= spec.max_depth || static_cast<int>(rows.size()) < 2 * spec.min_samples_leaf ||
        pure(rows))
      return make_leaf(rows);

    // Feature subset without replacement.
    std::vector<int64_t> features(dim);
    std::iota(features.begin(), features.end(), 0);
    for (int i = 0; i < features_per_split; ++i) {
      int64_t j = static_cast<int64_t>(rng.below(dim - i)) + i;
      std::swap(features[i], features[j]);
    }
    features.resize(features_per_split);

    const int64_t total = static_cast<int64_t>(rows.size());
    double best_impurity = 2.0;
    int64_t best_feature = -1;
    double best_threshold = 0.0;
    int64_t best_imbalance = total + 1;

    std::vector<std::pair<double, int>> vals(total);
    std::vector<int64_t> left_counts(data.num_classes), right_counts(data.num_classes);
    for (int64_t f : features) {
      for (int64_t i = 0; i < total; ++i)
        vals[i] = {sample(rows[i], f), data.labels[rows[i]]};
      std::sort(vals.begin(), vals.end());
      if (vals.front().first == vals.back().first) continue;

      std::fill(left_counts.begin(), left_counts.end(), 0);
      std::fill(right_counts.begin(), right_counts.end(), 0);
      for (int64_t i = 0; i < total; ++i) right_counts[vals[i].second]++;

      for (int64_t i = 0; i + 1 < total; ++i) {
        left_counts[vals[i].second]++;
        right_counts[vals[i].second]--;
        if (vals[i].first == vals[i + 1].first) continue;
        int64_t nl = i + 1, nr = total - nl;
        if (nl < spec.min_samples_leaf || nr < spec.min_samples_leaf) continue;
        double imp = (nl * gini(left_counts, nl) + nr * gini(right_counts, nr)) / total;
        // Ties on impurity go to the most balanced split; pure-XOR-like
        // patterns offer no first-level gain and would otherwise degrade
        // into one-sample peeling.
        int64_t imbalance = std::abs(nl - nr);
        if (imp < best_impurity - 1e-12 ||
            (imp < best_impurity + 1e-12 && imbalance < best_imbalance)) {
          best_impurity = std::min(imp, best_impurity);
          best_imbalance = imbalance;
          best_feature = f;
          best_threshold = 0.5 * (vals[i].first + vals[i + 1].first);
        }
      }
    }
    if (best_feature < 0) return make_leaf(rows);

    std::vector<int64_t> left, right;
    for (int64_t r : rows)
      (sample(r, best_feature) <= best_threshold ? left : right).push_back(r);
    if (left.empty() || right.empty()) return make_leaf(rows);

    int id = static_cast<int>(nodes.size());
    TreeNode n;
    n.is_leaf = false;
    n.feature = static_cast<int>(best_feature);
    n.threshold = best_threshold;
    nodes.push_back(n);
    rows.clear();
    rows.shrink_to_fit();
    int l = build(left, depth + 1);
    int r = build(right, depth + 1);
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
  }
};

}  // namespace

Forest forest_train(const ForestSpec& spec, const LabeledDataset& data) {
  if (data.size() == 0) throw std::invalid_argument("forest_train: empty dataset");
  if (spec.n_trees < 1 || spec.max_depth < 1)
    throw std::invalid_argument("forest_train: need n_trees >= 1 and max_depth >= 1");
  Forest f;
  f.spec = spec;
  f.num_classes = data.num_classes;
  int64_t dim = data.sample_dim();
  int per_split = spec.features_per_split > 0
                      ? spec.features_per_split
                      : std::max(1, static_cast<int>(std::sqrt(static_cast<double>(dim))));
  per_split = std::min<int>(per_split, static_cast<int>(dim));

  for (int t = 0; t < spec.n_trees; ++t) {
    Rng rng(derive_seed(spec.seed, tag_of("tree"), static_cast<uint64_t>(t)));
    std::vector<int64_t> rows(data.size());
    if (spec.bootstrap) {
      for (auto& r : rows) r = static_cast<int64_t>(rng.below(data.size()));
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    TreeBuilder b{data, spec, dim, per_split, rng, {}};
    b.build(rows, 0);
    f.trees.push_back(std::move(b.nodes));
  }
  return f;
}

int forest_predict(const Forest& f, std::span<const double> x) {
  std::vector<int> votes(f.num_classes, 0);
  for (const auto& tree : f.trees) {
    int at = 0;
    while (!tree[at].is_leaf)
      at = x[tree[at].feature] <= tree[at].threshold ? tree[at].left : tree[at].right;
    votes[tree[at].label]++;
  }
  int best = 0;
  for (int c = 1; c < f.num_classes; ++c)
    if (votes[c] > votes[best]) best = c;
  return best;
}

std::vector<int> forest_predict_all(const Forest& f, const LabeledDataset& data) {
  int64_t dim = data.sample_dim();
  std::vector<int> out(data.size());
  for (int64_t i = 0; i < data.size(); ++i)
    out[i] = forest_predict(f, {data.samples.data.data() + i * dim, static_cast<size_t>(dim)});
  return out;
}

double forest_accuracy(const Forest& f, const LabeledDataset& data) {
  std::vector<int> pred = forest_predict_all(f, data);
  int64_t hits = 0;
  for (int64_t i = 0; i < data.size(); ++i)
    if (pred[i] == data.labels[i]) hits++;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace dc
