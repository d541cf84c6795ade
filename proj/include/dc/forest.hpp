#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dc/data.hpp"

namespace dc {

struct ForestSpec {
  int n_trees = 30;
  int max_depth = 12;
  int min_samples_leaf = 1;
  int features_per_split = 0;  // 0 -> floor(sqrt(d))
  bool bootstrap = true;
  uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1, right = -1;  // indices within the tree; -1 on leaves
  int label = 0;              // leaf prediction
  bool is_leaf = true;
};

struct Forest {
  ForestSpec spec;
  int num_classes = 0;
  std::vector<std::vector<TreeNode>> trees;
};

// CART trees on Gini impurity, bootstrap sampling, random feature subsets
// per split. Deterministic given (spec, dataset).
Forest forest_train(const ForestSpec& spec, const LabeledDataset& data);

// Majority vote across trees; ties break toward the smaller label.
int forest_predict(const Forest& f, std::span<const double> x);
std::vector<int> forest_predict_all(const Forest& f, const LabeledDataset& data);
double forest_accuracy(const Forest& f, const LabeledDataset& data);

}  // namespace dc
