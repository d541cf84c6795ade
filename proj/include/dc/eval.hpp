#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dc/confuse.hpp"
#include "dc/data.hpp"
#include "dc/forest.hpp"
#include "dc/models.hpp"

namespace dc {

using Confusion = std::vector<std::vector<int64_t>>;  // [true][predicted]

struct EvalReport {
  std::vector<double> train_acc_curve;
  std::vector<double> test_acc_curve;
  double final_test_acc = 0.0;
  Confusion confusion;
  double targeted_success = 0.0;
  std::map<std::string, std::string> metadata;
};

// Argmax prediction (ties toward the smaller class index) against labels.
std::pair<double, Confusion> evaluate(const VictimSpec& spec, const ParamSet& theta,
                                      const LabeledDataset& d);
std::vector<int> predict(const VictimSpec& spec, const ParamSet& theta, const LabeledDataset& d);

// Plain SGD training with per-epoch shuffles; accuracy recorded on both
// splits after every epoch.
std::pair<ParamSet, EvalReport> train_victim(const VictimSpec& spec, const LabeledDataset& train,
                                             const LabeledDataset& test, int epochs,
                                             double alpha_f, int batch, uint64_t seed);

// Accuracy of f_theta(g_xi(x)) against the TRUE labels: the noise alone as
// input. High values mean the classifier keyed on the noise.
double noise_only_probe(const VictimSpec& vs, const ParamSet& theta, const GeneratorSpec& gs,
                        const ParamSet& xi, const LabeledDataset& d);

struct PcaResult {
  std::vector<double> mean;                       // fit-set feature mean
  std::vector<std::vector<double>> components;    // one unit vector per component
  std::vector<double> eigenvalues;
  double total_variance = 0.0;
  int iterations = 0;                             // worst component
  std::vector<std::array<double, 2>> fit_coords, proj_coords;
  std::vector<int> fit_labels, proj_labels;
};

// Fit PCA (power iteration with deflation, tol 1e-9, <= 10000 iterations)
// on the final-hidden-layer activations of fit_set; project both sets with
// the fit statistics.
PcaResult pca_project(const VictimSpec& vs, const ParamSet& theta, const LabeledDataset& fit_set,
                      const LabeledDataset& project_set, int components = 2);
void write_pca_csv(const PcaResult& r, const std::string& path);

struct TargetedEval {
  double accuracy = 0.0;
  double success_rate = 0.0;  // fraction predicted exactly eta(y)
  Confusion confusion;
};
TargetedEval targeted_eval(const VictimSpec& vs, const ParamSet& theta, const LabeledDataset& d,
                           const LabelMap& eta);

struct TrainSettings {
  int epochs = 20;
  double alpha_f = 0.01;
  int batch = 64;
};

struct TransferRow {
  std::string victim;
  double width_scale = 1.0;
  std::string data;  // "clean" or "poisoned"
  uint64_t seed = 0;
  double test_acc = 0.0;
};

// Trains {mlp, mlp-small, mlp-large, forest} on the clean and poisoned
// train sets with matched seeds, so row pairs isolate the data effect.
std::vector<TransferRow> transfer_suite(const LabeledDataset& clean_train,
                                        const LabeledDataset& poisoned_train,
                                        const LabeledDataset& test, const TrainSettings& ts,
                                        const ForestSpec& forest, uint64_t seed);
void write_transfer_csv(const std::vector<TransferRow>& rows, const std::string& path);

struct SweepRow {
  std::string param;  // "epsilon", "ratio" or "random_flip"
  double value = 0.0;
  uint64_t seed = 0;
  double clean_test_acc = 0.0;
  double poisoned_test_acc = 0.0;
};

// One generator per epsilon; victims retrained per value with the same seed.
std::vector<SweepRow> epsilon_sweep(const std::vector<double>& eps_list, ConfuseConfig base,
                                    const LabeledDataset& train, const LabeledDataset& test,
                                    const TrainSettings& ts, AttackAlgo algo);

// One shared generator; victims retrained on partially poisoned data.
// With include_random_flip, adds a label-flip baseline at each ratio:
// ceil(r*n) labels flipped to uniformly random different labels.
std::vector<SweepRow> ratio_sweep(const std::vector<double>& ratios, const GeneratorSpec& gs,
                                  const ParamSet& xi, const VictimSpec& vs,
                                  const LabeledDataset& train, const LabeledDataset& test,
                                  const TrainSettings& ts, uint64_t seed,
                                  bool include_random_flip);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

// Label-flip baseline used by ratio_sweep; exposed for testing.
LabeledDataset random_flip_labels(const LabeledDataset& d, double fraction, uint64_t seed);

}  // namespace dc
