#include "dc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dc/rng.hpp"

namespace dc {

namespace {

constexpr int64_t kEvalChunk = 256;

std::vector<int> argmax_rows(const Tensor& logits) {
  int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (int64_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = static_cast<int>(j);
    out[i] = best;
  }
  return out;
}

}  // namespace

std::vector<int> predict(const VictimSpec& spec, const ParamSet& theta, const LabeledDataset& d) {
  std::vector<int> pred;
  pred.reserve(d.size());
  for (int64_t at = 0; at < d.size(); at += kEvalChunk) {
    std::vector<int64_t> idx;
    for (int64_t i = at; i < std::min(d.size(), at + kEvalChunk); ++i) idx.push_back(i);
    Tensor logits = victim_logits_eval(spec, theta, gather_samples(d, idx));
    for (int p : argmax_rows(logits)) pred.push_back(p);
  }
  return pred;
}

std::pair<double, Confusion> evaluate(const VictimSpec& spec, const ParamSet& theta,
                                      const LabeledDataset& d) {
  std::vector<int> pred = predict(spec, theta, d);
  Confusion conf(d.num_classes, std::vector<int64_t>(d.num_classes, 0));
  int64_t hits = 0;
  for (int64_t i = 0; i < d.size(); ++i) {
    conf[d.labels[i]][pred[i]]++;
    if (pred[i] == d.labels[i]) hits++;
  }
  return {static_cast<double>(hits) / static_cast<double>(std::max<int64_t>(1, d.size())), conf};
}

std::pair<ParamSet, EvalReport> train_victim(const VictimSpec& spec, const LabeledDataset& train,
                                             const LabeledDataset& test, int epochs,
                                             double alpha_f, int batch, uint64_t seed) {
  train.validate();
  ParamSet theta = init_params(spec, derive_seed(seed, tag_of("victim-init")));
  EvalReport report;
  report.metadata["train_provenance"] = train.provenance;
  report.metadata["test_provenance"] = test.provenance;
  report.metadata["epochs"] = std::to_string(epochs);
  report.metadata["alpha_f"] = std::to_string(alpha_f);
  report.metadata["batch"] = std::to_string(batch);
  report.metadata["seed"] = std::to_string(seed);

  std::vector<int64_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < epochs; ++e) {
    Rng rng(derive_seed(seed, tag_of("epoch"), static_cast<uint64_t>(e)));
    rng.shuffle(order);
    for (int64_t at = 0; at < train.size(); at += batch) {
      std::vector<int64_t> idx(order.begin() + at,
                               order.begin() + std::min<int64_t>(train.size(), at + batch));
      victim_train_step(spec, theta, gather_samples(train, idx), gather_labels(train, idx),
                        alpha_f);
    }
    report.train_acc_curve.push_back(evaluate(spec, theta, train).first);
    report.test_acc_curve.push_back(evaluate(spec, theta, test).first);
  }
  auto [acc, conf] = evaluate(spec, theta, test);
  report.final_test_acc = acc;
  report.confusion = std::move(conf);
  return {std::move(theta), std::move(report)};
}

double noise_only_probe(const VictimSpec& vs, const ParamSet& theta, const GeneratorSpec& gs,
                        const ParamSet& xi, const LabeledDataset& d) {
  int64_t hits = 0;
  for (int64_t at = 0; at < d.size(); at += kEvalChunk) {
    std::vector<int64_t> idx;
    for (int64_t i = at; i < std::min(d.size(), at + kEvalChunk); ++i) idx.push_back(i);
    Tensor noise = generator_noise_eval(gs, xi, gather_samples(d, idx));
    std::vector<int> pred = argmax_rows(victim_logits_eval(vs, theta, noise));
    for (size_t i = 0; i < idx.size(); ++i)
      if (pred[i] == d.labels[idx[i]]) hits++;
  }
  return static_cast<double>(hits) / static_cast<double>(std::max<int64_t>(1, d.size()));
}

namespace {

// Hidden activations for a whole dataset, row per sample.
std::vector<std::vector<double>> hidden_features(const VictimSpec& vs, const ParamSet& theta,
                                                 const LabeledDataset& d) {
  std::vector<std::vector<double>> rows;
  rows.reserve(d.size());
  for (int64_t at = 0; at < d.size(); at += kEvalChunk) {
    std::vector<int64_t> idx;
    for (int64_t i = at; i < std::min(d.size(), at + kEvalChunk); ++i) idx.push_back(i);
    Tensor h = victim_hidden_eval(vs, theta, gather_samples(d, idx));
    int64_t w = h.dim(1);
    for (size_t i = 0; i < idx.size(); ++i)
      rows.emplace_back(h.data.begin() + static_cast<int64_t>(i) * w,
                        h.data.begin() + static_cast<int64_t>(i + 1) * w);
  }
  return rows;
}

std::vector<double> matvec(const std::vector<double>& m, const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<double> out(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = m.data() + i * n;
    for (size_t j = 0; j < n; ++j) s += row[j] * v[j];
    out[i] = s;
  }
  return out;
}

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

PcaResult pca_project(const VictimSpec& vs, const ParamSet& theta, const LabeledDataset& fit_set,
                      const LabeledDataset& project_set, int components) {
  auto fit_rows = hidden_features(vs, theta, fit_set);
  auto proj_rows = hidden_features(vs, theta, project_set);
  size_t n = fit_rows.size(), dim = fit_rows[0].size();

  PcaResult res;
  res.mean.assign(dim, 0.0);
  for (const auto& r : fit_rows) axpy(res.mean, 1.0, r);
  for (double& m : res.mean) m /= static_cast<double>(n);
  for (auto& r : fit_rows) axpy(r, -1.0, res.mean);

  // Covariance of the fit set only.
  std::vector<double> cov(dim * dim, 0.0);
  for (const auto& r : fit_rows)
    for (size_t i = 0; i < dim; ++i) {
      double ri = r[i];
      if (ri == 0.0) continue;
      double* row = cov.data() + i * dim;
      for (size_t j = 0; j < dim; ++j) row[j] += ri * r[j];
    }
  double denom = static_cast<double>(n > 1 ? n - 1 : 1);
  for (double& c : cov) c /= denom;
  for (size_t i = 0; i < dim; ++i) res.total_variance += cov[i * dim + i];

  constexpr double kTol = 1e-9;
  constexpr int kMaxIter = 10000;
  for (int c = 0; c < components; ++c) {
    Rng rng(derive_seed(12345, tag_of("pca-start"), static_cast<uint64_t>(c)));
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    // Stay orthogonal to the components already found.
    for (const auto& prev : res.components) axpy(v, -dot(v, prev), prev);
    double nv = norm2(v);
    for (double& x : v) x /= nv;

    int it = 0;
    for (; it < kMaxIter; ++it) {
      std::vector<double> next = matvec(cov, v);
      for (const auto& prev : res.components) axpy(next, -dot(next, prev), prev);
      double nn = norm2(next);
      if (nn == 0.0) break;  // exhausted variance; keep current direction
      for (double& x : next) x /= nn;
      double diff = 0.0;
      for (size_t i = 0; i < dim; ++i) diff += (next[i] - v[i]) * (next[i] - v[i]);
      v = std::move(next);
      if (std::sqrt(diff) < kTol) break;
    }
    if (it == kMaxIter)
      throw std::runtime_error("pca_project: power iteration did not converge within " +
                               std::to_string(kMaxIter) + " iterations");
    res.iterations = std::max(res.iterations, it + 1);
    res.eigenvalues.push_back(dot(v, matvec(cov, v)));
    res.components.push_back(std::move(v));
  }

  auto project = [&](const std::vector<double>& raw) {
    std::array<double, 2> out{0.0, 0.0};
    for (size_t c = 0; c < res.components.size() && c < 2; ++c) {
      double s = 0.0;
      for (size_t i = 0; i < dim; ++i) s += (raw[i] - res.mean[i]) * res.components[c][i];
      out[c] = s;
    }
    return out;
  };
  // fit_rows were centered in place; undo by adding the mean back for
  // projection via the shared path.
  for (auto& r : fit_rows) axpy(r, 1.0, res.mean);
  for (const auto& r : fit_rows) res.fit_coords.push_back(project(r));
  for (const auto& r : proj_rows) res.proj_coords.push_back(project(r));
  res.fit_labels = fit_set.labels;
  res.proj_labels = project_set.labels;
  return res;
}

void write_pca_csv(const PcaResult& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "set,label,pc1,pc2\n";
  char line[128];
  for (size_t i = 0; i < r.fit_coords.size(); ++i) {
    std::snprintf(line, sizeof(line), "fit,%d,%.6f,%.6f\n", r.fit_labels[i], r.fit_coords[i][0],
                  r.fit_coords[i][1]);
    os << line;
  }
  for (size_t i = 0; i < r.proj_coords.size(); ++i) {
    std::snprintf(line, sizeof(line), "project,%d,%.6f,%.6f\n", r.proj_labels[i],
                  r.proj_coords[i][0], r.proj_coords[i][1]);
    os << line;
  }
}

TargetedEval targeted_eval(const VictimSpec& vs, const ParamSet& theta, const LabeledDataset& d,
                           const LabelMap& eta) {
  if (eta.empty()) throw std::invalid_argument("targeted_eval: eta undefined");
  std::vector<int> pred = predict(vs, theta, d);
  TargetedEval out;
  out.confusion.assign(d.num_classes, std::vector<int64_t>(d.num_classes, 0));
  int64_t hits = 0, targeted = 0;
  for (int64_t i = 0; i < d.size(); ++i) {
    out.confusion[d.labels[i]][pred[i]]++;
    if (pred[i] == d.labels[i]) hits++;
    if (pred[i] == eta(d.labels[i])) targeted++;
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(d.size());
  out.success_rate = static_cast<double>(targeted) / static_cast<double>(d.size());
  return out;
}

std::vector<TransferRow> transfer_suite(const LabeledDataset& clean_train,
                                        const LabeledDataset& poisoned_train,
                                        const LabeledDataset& test, const TrainSettings& ts,
                                        const ForestSpec& forest, uint64_t seed) {
  std::vector<TransferRow> rows;
  struct NetEntry {
    const char* name;
    double scale;
  };
  const NetEntry nets[] = {{"mlp", 1.0}, {"mlp-small", 0.5}, {"mlp-large", 2.0}};
  for (const auto& net : nets) {
    VictimSpec spec = mlp_victim(clean_train.sample_shape(), clean_train.num_classes, net.scale);
    for (const auto* data : {&clean_train, &poisoned_train}) {
      auto [theta, rep] =
          train_victim(spec, *data, test, ts.epochs, ts.alpha_f, ts.batch, seed);
      rows.push_back({net.name, net.scale, data == &clean_train ? "clean" : "poisoned", seed,
                      rep.final_test_acc});
    }
  }
  for (const auto* data : {&clean_train, &poisoned_train}) {
    ForestSpec fs = forest;
    fs.seed = seed;
    Forest f = forest_train(fs, *data);
    rows.push_back({"forest", 1.0, data == &clean_train ? "clean" : "poisoned", seed,
                    forest_accuracy(f, test)});
  }
  return rows;
}

void write_transfer_csv(const std::vector<TransferRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "victim,width_scale,data,seed,test_acc\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%g,%s,%llu,%.6f\n", r.victim.c_str(), r.width_scale,
                  r.data.c_str(), static_cast<unsigned long long>(r.seed), r.test_acc);
    os << line;
  }
}

std::vector<SweepRow> epsilon_sweep(const std::vector<double>& eps_list, ConfuseConfig base,
                                    const LabeledDataset& train, const LabeledDataset& test,
                                    const TrainSettings& ts, AttackAlgo algo) {
  if (eps_list.empty()) throw std::invalid_argument("epsilon_sweep: empty epsilon list");
  std::vector<double> sorted = eps_list;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("epsilon_sweep: duplicate epsilon values");

  auto [theta_clean, rep_clean] = train_victim(base.victim, train, test, ts.epochs, ts.alpha_f,
                                               ts.batch, base.seed);
  std::vector<SweepRow> rows;
  for (double eps : sorted) {
    ConfuseConfig cfg = base;
    cfg.generator.epsilon = eps;
    AttackResult att = run_attack(cfg, train, algo);
    LabeledDataset poisoned = apply_poison(cfg.generator, att.xi, train, 1.0, cfg.seed);
    auto [theta_p, rep_p] =
        train_victim(cfg.victim, poisoned, test, ts.epochs, ts.alpha_f, ts.batch, base.seed);
    rows.push_back({"epsilon", eps, base.seed, rep_clean.final_test_acc, rep_p.final_test_acc});
  }
  return rows;
}

LabeledDataset random_flip_labels(const LabeledDataset& d, double fraction, uint64_t seed) {
  LabeledDataset out = d;
  int64_t n = d.size();
  int64_t count = std::min<int64_t>(
      n, static_cast<int64_t>(std::ceil(fraction * static_cast<double>(n))));
  if (count <= 0 || d.num_classes < 2) return out;
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  for (int64_t i = 0; i < count; ++i) {
    int64_t r = order[i];
    int offset = 1 + static_cast<int>(rng.below(d.num_classes - 1));
    out.labels[r] = (d.labels[r] + offset) % d.num_classes;
  }
  out.provenance += "|flipped(fraction=" + std::to_string(fraction) + ")";
  return out;
}

std::vector<SweepRow> ratio_sweep(const std::vector<double>& ratios, const GeneratorSpec& gs,
                                  const ParamSet& xi, const VictimSpec& vs,
                                  const LabeledDataset& train, const LabeledDataset& test,
                                  const TrainSettings& ts, uint64_t seed,
                                  bool include_random_flip) {
  if (ratios.empty()) throw std::invalid_argument("ratio_sweep: empty ratio list");
  std::vector<double> sorted = ratios;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("ratio_sweep: duplicate ratio values");
  for (double r : sorted)
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("ratio_sweep: ratio outside [0,1]");

  auto [theta_clean, rep_clean] =
      train_victim(vs, train, test, ts.epochs, ts.alpha_f, ts.batch, seed);
  std::vector<SweepRow> rows;
  for (double ratio : sorted) {
    LabeledDataset poisoned =
        apply_poison(gs, xi, train, ratio, derive_seed(seed, tag_of("ratio-subset")));
    auto [theta_p, rep_p] = train_victim(vs, poisoned, test, ts.epochs, ts.alpha_f, ts.batch, seed);
    rows.push_back({"ratio", ratio, seed, rep_clean.final_test_acc, rep_p.final_test_acc});
  }
  if (include_random_flip) {
    for (double ratio : sorted) {
      LabeledDataset flipped =
          random_flip_labels(train, ratio, derive_seed(seed, tag_of("flip-subset")));
      auto [theta_f, rep_f] =
          train_victim(vs, flipped, test, ts.epochs, ts.alpha_f, ts.batch, seed);
      rows.push_back({"random_flip", ratio, seed, rep_clean.final_test_acc, rep_f.final_test_acc});
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "param,value,seed,clean_test_acc,poisoned_test_acc\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%g,%llu,%.6f,%.6f\n", r.param.c_str(), r.value,
                  static_cast<unsigned long long>(r.seed), r.clean_test_acc, r.poisoned_test_acc);
    os << line;
  }
}

}  // namespace dc
