#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dc/eval.hpp"
#include "dc/rng.hpp"
#include "test_util.hpp"

using namespace dc;
using namespace dc::test;

namespace {

LabeledDataset blobs(int64_t per_class, int64_t d, int k, uint64_t seed, double sigma = 1.0 / 6.0) {
  std::vector<std::vector<double>> centers;
  Rng rng(derive_seed(seed, tag_of("centers")));
  for (int c = 0; c < k; ++c) {
    std::vector<double> center(d);
    for (auto& v : center) v = (c + rng.uniform()) / k;
    centers.push_back(center);
  }
  // Two well-separated corners for the 2-class case.
  if (k == 2) {
    centers[0].assign(d, 0.0);
    centers[1].assign(d, 1.0);
  }
  return make_gaussian_blobs(per_class, d, centers, sigma, seed);
}

int64_t class_count(const LabeledDataset& d, int c) {
  int64_t n = 0;
  for (int y : d.labels)
    if (y == c) n++;
  return n;
}

}  // namespace

TEST_CASE("evaluate: memorizing model, confusion sums, tie-breaking") {
  LabeledDataset data = blobs(12, 6, 2, 5);
  VictimSpec spec = mlp_victim({6}, 2);
  spec.mlp_widths = {6, 12, 2};
  auto [theta, rep] = train_victim(spec, data, data, 40, 0.5, 8, 3);
  auto [acc, conf] = evaluate(spec, theta, data);
  CHECK(acc == 1.0);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      if (i != j) CHECK(conf[i][j] == 0);
  for (int i = 0; i < 2; ++i) {
    int64_t row = 0;
    for (int j = 0; j < 2; ++j) row += conf[i][j];
    CHECK(row == class_count(data, i));
  }

  // Constant logits predict the smallest index; class 0 holds the plurality.
  LabeledDataset skew;
  skew.num_classes = 3;
  skew.samples = Tensor({10, 4});
  Rng rng(tag_of("skew"));
  for (auto& v : skew.samples.data) v = rng.uniform(0.0, 1.0);
  skew.labels = {0, 0, 0, 0, 0, 1, 1, 2, 2, 2};
  VictimSpec cspec = mlp_victim({4}, 3);
  ParamSet zero = init_params(cspec, 1);
  for (auto& [name, t] : zero.items) std::fill(t.data.begin(), t.data.end(), 0.0);
  auto [cacc, cconf] = evaluate(cspec, zero, skew);
  CHECK(cacc == doctest::Approx(0.5));  // max class prior
}

TEST_CASE("train_victim: zero epochs stays near chance, separable blobs are learned") {
  LabeledDataset train = blobs(100, 10, 2, 11);
  LabeledDataset test = blobs(50, 10, 2, 12);
  VictimSpec spec = mlp_victim({10}, 2);
  spec.mlp_widths = {10, 16, 8, 2};

  auto [theta0, rep0] = train_victim(spec, train, test, 0, 0.01, 16, 1);
  CHECK(rep0.train_acc_curve.empty());
  CHECK(rep0.final_test_acc > 0.2);
  CHECK(rep0.final_test_acc < 0.8);

  auto [theta, rep] = train_victim(spec, train, test, 10, 0.1, 16, 1);
  CHECK(rep.final_test_acc >= 0.99);
  CHECK(rep.train_acc_curve.size() == 10);
  CHECK(rep.test_acc_curve.size() == 10);
  CHECK(rep.metadata.at("train_provenance") == train.provenance);
}

TEST_CASE("noise-only probe on an untrained model sits near chance") {
  LabeledDataset data = blobs(50, 8, 2, 21);
  VictimSpec vs = mlp_victim({8}, 2);
  GeneratorSpec gs = fc_generator({8}, 0.3, {8});
  double acc = noise_only_probe(vs, init_params(vs, 1), gs, init_params(gs, 2), data);
  CHECK(acc > 0.2);
  CHECK(acc < 0.8);
}

TEST_CASE("pca: isotropic inputs give 2/d variance ratio, orthonormal components") {
  // Victim whose hidden layer is an affine shift: identity weights, large
  // positive bias keeps every relu active, so hidden covariance equals
  // input covariance.
  const int64_t d = 16, n = 2000;
  VictimSpec spec;
  spec.kind = VictimKind::Mlp;
  spec.input_shape = {d};
  spec.num_classes = 2;
  spec.mlp_widths = {d, d, 2};
  ParamSet theta = init_params(spec, 1);
  Tensor& w0 = theta.tensor(0);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j) w0[i * d + j] = i == j ? 1.0 : 0.0;
  std::fill(theta.tensor(1).data.begin(), theta.tensor(1).data.end(), 8.0);

  LabeledDataset data;
  data.num_classes = 2;
  data.samples = Tensor({n, d});
  Rng rng(tag_of("pca-iso"));
  for (auto& v : data.samples.data) v = rng.normal();
  data.labels.assign(n, 0);
  for (int64_t i = 0; i < n / 2; ++i) data.labels[i] = 1;

  PcaResult r = pca_project(spec, theta, data, data, 2);
  double ratio = (r.eigenvalues[0] + r.eigenvalues[1]) / r.total_variance;
  double expect = 2.0 / static_cast<double>(d);
  INFO("ratio " << ratio << " expected about " << expect);
  CHECK(ratio >= expect * 0.7);
  CHECK(ratio <= expect * 1.3);

  double n1 = 0, n2 = 0, dot = 0;
  for (size_t i = 0; i < r.components[0].size(); ++i) {
    n1 += r.components[0][i] * r.components[0][i];
    n2 += r.components[1][i] * r.components[1][i];
    dot += r.components[0][i] * r.components[1][i];
  }
  CHECK(std::abs(std::sqrt(n1) - 1.0) <= 1e-6);
  CHECK(std::abs(std::sqrt(n2) - 1.0) <= 1e-6);
  CHECK(std::abs(dot) <= 1e-6);

  // Projections of the fit set are centered.
  double m1 = 0, m2 = 0;
  for (const auto& c : r.fit_coords) {
    m1 += c[0];
    m2 += c[1];
  }
  CHECK(std::abs(m1 / n) <= 1e-9);
  CHECK(std::abs(m2 / n) <= 1e-9);

  // Identical fit and project sets produce identical coordinates, and the
  // whole procedure is deterministic.
  for (size_t i = 0; i < r.fit_coords.size(); ++i) {
    CHECK(r.fit_coords[i][0] == r.proj_coords[i][0]);
    CHECK(r.fit_coords[i][1] == r.proj_coords[i][1]);
  }
  PcaResult r2 = pca_project(spec, theta, data, data, 2);
  CHECK(r.fit_coords == r2.fit_coords);
}

TEST_CASE("pca csv schema") {
  LabeledDataset data = blobs(10, 4, 2, 31);
  VictimSpec spec = mlp_victim({4}, 2);
  spec.mlp_widths = {4, 5, 2};
  ParamSet theta = init_params(spec, 2);
  PcaResult r = pca_project(spec, theta, data, data, 2);
  auto path = (std::filesystem::temp_directory_path() / "dc_pca.csv").string();
  write_pca_csv(r, path);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "set,label,pc1,pc2");
  int lines = 0;
  for (std::string line; std::getline(is, line);) lines++;
  CHECK(lines == 2 * data.size());
  std::filesystem::remove(path);
}

TEST_CASE("forest: pure class, xor pattern, determinism, errors") {
  LabeledDataset pure;
  pure.num_classes = 3;
  pure.samples = Tensor({10, 3});
  Rng rng(tag_of("forest-pure"));
  for (auto& v : pure.samples.data) v = rng.uniform(0.0, 1.0);
  pure.labels.assign(10, 2);
  ForestSpec fs;
  fs.n_trees = 5;
  fs.seed = 1;
  Forest f = forest_train(fs, pure);
  for (int p : forest_predict_all(f, pure)) CHECK(p == 2);

  // Exact XOR corners: every root split has zero gain, the balanced
  // tie-break picks the midpoint and depth 2 fits exactly.
  LabeledDataset xo;
  xo.num_classes = 2;
  const int reps = 25;
  xo.samples = Tensor({4 * reps, 2});
  for (int r = 0; r < reps; ++r) {
    double corners[4][2] = {{0.1, 0.1}, {0.9, 0.9}, {0.1, 0.9}, {0.9, 0.1}};
    int labels[4] = {0, 0, 1, 1};
    for (int c = 0; c < 4; ++c) {
      int64_t i = r * 4 + c;
      xo.samples[i * 2 + 0] = corners[c][0];
      xo.samples[i * 2 + 1] = corners[c][1];
      xo.labels.push_back(labels[c]);
    }
  }
  ForestSpec xs;
  xs.n_trees = 9;
  xs.max_depth = 2;
  xs.features_per_split = 2;
  xs.bootstrap = false;
  xs.seed = 3;
  Forest xf = forest_train(xs, xo);
  CHECK(forest_accuracy(xf, xo) == 1.0);

  Forest xf2 = forest_train(xs, xo);
  CHECK(forest_predict_all(xf, xo) == forest_predict_all(xf2, xo));

  LabeledDataset empty;
  empty.num_classes = 2;
  empty.samples = Tensor({0, 2});
  CHECK_THROWS_AS(forest_train(xs, empty), std::invalid_argument);
}

TEST_CASE("targeted_eval: a model trained to emit eta(y) scores success 1.0") {
  LabeledDataset data = blobs(40, 8, 4, 41, 0.05);
  LabelMap eta = LabelMap::shift(4, 1);
  LabeledDataset relabeled = data;
  relabeled.labels = eta.apply(data.labels);
  VictimSpec spec = mlp_victim({8}, 4);
  spec.mlp_widths = {8, 16, 4};
  auto [theta, rep] = train_victim(spec, relabeled, relabeled, 60, 0.5, 16, 2);
  REQUIRE(rep.final_test_acc == 1.0);  // fits eta(y) exactly on its train set
  TargetedEval te = targeted_eval(spec, theta, data, eta);
  CHECK(te.success_rate == 1.0);
  CHECK(te.accuracy == 0.0);
  CHECK(te.accuracy + te.success_rate <= 1.0);
}

TEST_CASE("random_flip_labels flips exactly ceil(r*n) labels to different labels") {
  LabeledDataset data = blobs(30, 4, 3, 51);
  double fraction = 0.37;
  LabeledDataset flipped = random_flip_labels(data, fraction, 7);
  int64_t n = data.size();
  int64_t want = static_cast<int64_t>(std::ceil(fraction * static_cast<double>(n)));
  int64_t changed = 0;
  for (int64_t i = 0; i < n; ++i)
    if (flipped.labels[i] != data.labels[i]) changed++;
  CHECK(changed == want);
  for (int64_t i = 0; i < n; ++i) {
    CHECK(flipped.labels[i] >= 0);
    CHECK(flipped.labels[i] < 3);
  }
  LabeledDataset again = random_flip_labels(data, fraction, 7);
  CHECK(again.labels == flipped.labels);
}

TEST_CASE("transfer suite: complete rows, epsilon-0 poison changes nothing") {
  LabeledDataset train = blobs(30, 6, 2, 61);
  LabeledDataset test = blobs(15, 6, 2, 62);
  GeneratorSpec gs = fc_generator({6}, 0.0, {6});
  ParamSet xi = init_params(gs, 1);
  LabeledDataset poisoned = apply_poison(gs, xi, train, 1.0, 2);

  TrainSettings ts{4, 0.1, 16};
  ForestSpec fs;
  fs.n_trees = 5;
  fs.max_depth = 6;
  auto rows = transfer_suite(train, poisoned, test, ts, fs, 77);
  REQUIRE(rows.size() == 8);
  const char* expect[] = {"mlp", "mlp", "mlp-small", "mlp-small",
                          "mlp-large", "mlp-large", "forest", "forest"};
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].victim == expect[i]);
    CHECK(rows[i].seed == 77);
  }
  // Matched seeds and identical data: clean and poisoned accuracies agree.
  for (size_t i = 0; i < rows.size(); i += 2) CHECK(rows[i].test_acc == rows[i + 1].test_acc);

  auto path = (std::filesystem::temp_directory_path() / "dc_transfer.csv").string();
  write_transfer_csv(rows, path);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "victim,width_scale,data,seed,test_acc");
  std::filesystem::remove(path);
}

TEST_CASE("sweeps: schema, ordering, duplicate rejection") {
  LabeledDataset train = blobs(20, 5, 2, 71);
  LabeledDataset test = blobs(10, 5, 2, 72);
  TrainSettings ts{3, 0.1, 8};

  GeneratorSpec gs = fc_generator({5}, 0.2, {5});
  ParamSet xi = init_params(gs, 5);
  VictimSpec vs = mlp_victim({5}, 2);
  vs.mlp_widths = {5, 6, 2};

  auto rows = ratio_sweep({0.5, 0.0, 1.0}, gs, xi, vs, train, test, ts, 3, true);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].param == "ratio");
  CHECK(rows[0].value == 0.0);
  CHECK(rows[1].value == 0.5);
  CHECK(rows[2].value == 1.0);
  CHECK(rows[3].param == "random_flip");
  // Ratio zero trains on identical data: equal accuracies by construction.
  CHECK(rows[0].poisoned_test_acc == rows[0].clean_test_acc);

  CHECK_THROWS_AS(ratio_sweep({0.5, 0.5}, gs, xi, vs, train, test, ts, 3, false),
                  std::invalid_argument);
  CHECK_THROWS_AS(ratio_sweep({}, gs, xi, vs, train, test, ts, 3, false), std::invalid_argument);
  CHECK_THROWS_AS(ratio_sweep({1.5}, gs, xi, vs, train, test, ts, 3, false),
                  std::invalid_argument);

  auto path = (std::filesystem::temp_directory_path() / "dc_sweep.csv").string();
  write_sweep_csv(rows, path);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "param,value,seed,clean_test_acc,poisoned_test_acc");
  std::string first;
  std::getline(is, first);
  CHECK(first.starts_with("ratio,0,3,"));
  std::filesystem::remove(path);

  ConfuseConfig cfg;
  cfg.victim = vs;
  cfg.generator = gs;
  cfg.trials = 1;
  cfg.maxiter = 3;
  cfg.batch_size = 8;
  cfg.seed = 1;
  CHECK_THROWS_AS(epsilon_sweep({}, cfg, train, test, ts, AttackAlgo::MemEfficient),
                  std::invalid_argument);
  CHECK_THROWS_AS(epsilon_sweep({0.1, 0.1}, cfg, train, test, ts, AttackAlgo::MemEfficient),
                  std::invalid_argument);
  auto erows = epsilon_sweep({0.1, 0.0}, cfg, train, test, ts, AttackAlgo::MemEfficient);
  REQUIRE(erows.size() == 2);
  CHECK(erows[0].value == 0.0);
  CHECK(erows[0].param == "epsilon");
  // Epsilon 0 retrains on identical data.
  CHECK(erows[0].poisoned_test_acc == erows[0].clean_test_acc);
}
