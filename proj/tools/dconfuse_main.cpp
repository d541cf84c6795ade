// Command-line front end: learn a noise generator, poison data, retrain
// and evaluate victims, run sweeps, export sample images, check gradients.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>

#include "dc/confuse.hpp"
#include "dc/data.hpp"
#include "dc/eval.hpp"
#include "dc/forest.hpp"
#include "dc/gradcheck.hpp"
#include "dc/models.hpp"
#include "dc/rng.hpp"

namespace {

constexpr const char* kToolVersion = "dconfuse 1.0.0";

using dc::LabeledDataset;

struct DataOptions {
  std::string data = "blobs";
  int64_t subset = 0;       // 0: keep everything
  int64_t test_subset = 0;  // 0: subset/2 for idx data
  uint64_t seed = 0;
};

struct LoadedData {
  LabeledDataset train, test;
};

LoadedData load_data(const DataOptions& opt) {
  LoadedData out;
  if (opt.data == "blobs") {
    const int64_t d = 20;
    std::vector<std::vector<double>> centers(2, std::vector<double>(d, 0.0));
    centers[1].assign(d, 1.0);
    out.train = dc::make_gaussian_blobs(250, d, centers, 1.0 / 6.0,
                                        dc::derive_seed(opt.seed, dc::tag_of("blobs-train")));
    out.test = dc::make_gaussian_blobs(250, d, centers, 1.0 / 6.0,
                                       dc::derive_seed(opt.seed, dc::tag_of("blobs-test")));
  } else if (opt.data.rfind("mnist:", 0) == 0) {
    std::filesystem::path dir = opt.data.substr(6);
    out.train = dc::load_mnist_idx((dir / "train-images-idx3-ubyte").string(),
                                   (dir / "train-labels-idx1-ubyte").string());
    out.test = dc::load_mnist_idx((dir / "t10k-images-idx3-ubyte").string(),
                                  (dir / "t10k-labels-idx1-ubyte").string());
  } else {
    throw CLI::ValidationError("--data must be 'blobs' or 'mnist:<dir>'");
  }
  if (opt.subset > 0) {
    out.train = dc::stratified_subset(out.train, opt.subset,
                                      dc::derive_seed(opt.seed, dc::tag_of("subset-train")));
    int64_t nt = opt.test_subset > 0 ? opt.test_subset : opt.subset / 2;
    nt = std::min<int64_t>(nt, out.test.size());
    if (nt > 0)
      out.test = dc::stratified_subset(out.test, nt,
                                       dc::derive_seed(opt.seed, dc::tag_of("subset-test")));
  }
  return out;
}

dc::VictimSpec victim_by_name(const std::string& name, const dc::Shape& input_shape, int k) {
  if (name == "mlp") return dc::mlp_victim(input_shape, k, 1.0);
  if (name == "mlp-small") return dc::mlp_victim(input_shape, k, 0.5);
  if (name == "mlp-large") return dc::mlp_victim(input_shape, k, 2.0);
  if (name == "cnn") {
    if (input_shape.size() != 3)
      throw CLI::ValidationError("--victim cnn needs image-shaped data");
    return dc::cnn_victim(input_shape, k);
  }
  throw CLI::ValidationError("unknown victim '" + name + "'");
}

dc::GeneratorSpec generator_by_name(const std::string& name, const dc::Shape& input_shape,
                                    double epsilon) {
  if (name == "conv") {
    if (input_shape.size() != 3)
      throw CLI::ValidationError("--generator conv needs image-shaped data");
    return dc::conv_generator(input_shape, epsilon);
  }
  if (name != "fc") throw CLI::ValidationError("unknown generator '" + name + "'");
  if (dc::shape_numel(input_shape) >= 512) return dc::fc_generator(input_shape, epsilon);
  return dc::fc_generator(input_shape, epsilon, {64, 32, 64});
}

dc::LabelMap parse_eta(const std::string& text, int num_classes) {
  if (text.rfind("shift:", 0) != 0)
    throw CLI::ValidationError("--eta must have the form shift:<k>");
  int k = std::stoi(text.substr(6));
  return dc::LabelMap::shift(num_classes, k);
}

void write_manifest(const std::string& path, std::map<std::string, std::string> kv) {
  kv["tool_version"] = kToolVersion;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest '" + path + "'");
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

// --- confuse ------------------------------------------------------------

struct ConfuseArgs {
  DataOptions data;
  double epsilon = 0.3;
  int trials = 20;
  int maxiter = 200;
  int batch = 64;
  double alpha_f = 0.01;
  double alpha_g = 1e-4;
  std::string algo = "memeff";
  std::string mode = "untargeted";
  std::string eta;
  std::string victim = "mlp";
  std::string generator = "fc";
  std::string out = "generator.dcfz";
  bool heldout = false;
};

void add_confuse_flags(CLI::App* cmd, ConfuseArgs& a) {
  cmd->add_option("--data", a.data.data, "Dataset: blobs or mnist:<dir>");
  cmd->add_option("--subset", a.data.subset, "Stratified training subset size (0: all)");
  cmd->add_option("--test-subset", a.data.test_subset, "Test subset size (0: subset/2)");
  cmd->add_option("--epsilon", a.epsilon, "Infinity-norm noise budget");
  cmd->add_option("--trials", a.trials, "Number of trials (victim re-inits)");
  cmd->add_option("--maxiter", a.maxiter, "Victim training steps per trial");
  cmd->add_option("--batch", a.batch, "Mini-batch size");
  cmd->add_option("--alpha-f", a.alpha_f, "Victim SGD learning rate");
  cmd->add_option("--alpha-g", a.alpha_g, "Generator learning rate");
  cmd->add_option("--algo", a.algo, "traj or memeff")
      ->check(CLI::IsMember({"traj", "memeff"}));
  cmd->add_option("--mode", a.mode, "untargeted or targeted")
      ->check(CLI::IsMember({"untargeted", "targeted"}));
  cmd->add_option("--eta", a.eta, "Label map for targeted mode, e.g. shift:1");
  cmd->add_option("--victim", a.victim, "mlp or cnn");
  cmd->add_option("--generator", a.generator, "fc or conv");
  cmd->add_option("--seed", a.data.seed, "Master seed");
  cmd->add_option("--heldout-clean", a.heldout,
                  "Use a held-out clean batch for the generator update");
}

dc::ConfuseConfig make_config(const ConfuseArgs& a, const LoadedData& d) {
  dc::ConfuseConfig cfg;
  cfg.trials = a.trials;
  cfg.maxiter = a.maxiter;
  cfg.alpha_f = a.alpha_f;
  cfg.alpha_g = a.alpha_g;
  cfg.batch_size = a.batch;
  cfg.seed = a.data.seed;
  cfg.heldout_clean_batch = a.heldout;
  cfg.mode = a.mode == "targeted" ? dc::AttackMode::Targeted : dc::AttackMode::Untargeted;
  if (cfg.mode == dc::AttackMode::Targeted) {
    if (a.eta.empty()) throw CLI::ValidationError("--mode targeted requires --eta");
    cfg.eta = parse_eta(a.eta, d.train.num_classes);
  } else if (!a.eta.empty()) {
    throw CLI::ValidationError("--eta only makes sense with --mode targeted");
  }
  cfg.victim = victim_by_name(a.victim, d.train.sample_shape(), d.train.num_classes);
  cfg.generator = generator_by_name(a.generator, d.train.sample_shape(), a.epsilon);
  return cfg;
}

std::map<std::string, std::string> confuse_manifest(const ConfuseArgs& a, const LoadedData& d) {
  return {{"command", "confuse"},
          {"data", a.data.data},
          {"data_provenance", d.train.provenance},
          {"subset", std::to_string(a.data.subset)},
          {"test_subset", std::to_string(a.data.test_subset)},
          {"epsilon", fmt(a.epsilon)},
          {"trials", std::to_string(a.trials)},
          {"maxiter", std::to_string(a.maxiter)},
          {"batch", std::to_string(a.batch)},
          {"alpha_f", fmt(a.alpha_f)},
          {"alpha_g", fmt(a.alpha_g)},
          {"algo", a.algo},
          {"mode", a.mode},
          {"eta", a.eta.empty() ? "none" : a.eta},
          {"victim", a.victim},
          {"generator", a.generator},
          {"heldout_clean", a.heldout ? "true" : "false"},
          {"seed", std::to_string(a.data.seed)},
          {"out", a.out}};
}

int run_confuse(const ConfuseArgs& a) {
  LoadedData d = load_data(a.data);
  write_manifest(a.out + ".manifest", confuse_manifest(a, d));
  dc::ConfuseConfig cfg = make_config(a, d);
  dc::AttackAlgo algo =
      a.algo == "traj" ? dc::AttackAlgo::Trajectory : dc::AttackAlgo::MemEfficient;
  std::cerr << "training generator on " << d.train.provenance << " (" << d.train.size()
            << " samples, " << cfg.trials << " trials x " << cfg.maxiter << " steps)\n";
  dc::AttackResult res = dc::run_attack(cfg, d.train, algo);
  for (const auto& t : res.diagnostics)
    std::cerr << "trial " << t.trial << ": inner loss " << t.mean_inner_loss << ", outer loss "
              << t.outer_clean_loss << "\n";
  dc::save_params(res.xi, a.out);
  dc::write_trial_csv(res.diagnostics, a.out + ".trials.csv");
  std::cout << "generator written to " << a.out << "\n";
  return 0;
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  DataOptions data;
  std::string gen;
  bool clean = false;
  std::string victim = "mlp";
  std::string generator = "fc";
  double epsilon = 0.3;  // architecture of --gen (epsilon recorded there is not stored)
  int repeats = 1;
  int epochs = 20;
  double alpha_f = 0.01;
  int batch = 64;
  std::string eta;
  std::string out = "eval.csv";
  std::string confusion;
  std::string pca;
};

int run_eval(const EvalArgs& a) {
  if (a.gen.empty() && !a.clean)
    throw CLI::ValidationError("eval needs --gen <file> or --clean");
  LoadedData d = load_data(a.data);
  write_manifest(a.out + ".manifest",
                 {{"command", "eval"},
                  {"data", a.data.data},
                  {"data_provenance", d.train.provenance},
                  {"subset", std::to_string(a.data.subset)},
                  {"test_subset", std::to_string(a.data.test_subset)},
                  {"gen", a.clean ? "none" : a.gen},
                  {"epsilon", fmt(a.epsilon)},
                  {"victim", a.victim},
                  {"generator", a.generator},
                  {"repeats", std::to_string(a.repeats)},
                  {"epochs", std::to_string(a.epochs)},
                  {"alpha_f", fmt(a.alpha_f)},
                  {"batch", std::to_string(a.batch)},
                  {"eta", a.eta.empty() ? "none" : a.eta},
                  {"seed", std::to_string(a.data.seed)},
                  {"out", a.out}});

  LabeledDataset train = d.train;
  std::string data_tag = "clean";
  dc::GeneratorSpec gs;
  dc::ParamSet xi;
  if (!a.clean) {
    gs = generator_by_name(a.generator, d.train.sample_shape(), a.epsilon);
    xi = dc::load_params(a.gen);
    train = dc::apply_poison(gs, xi, d.train, 1.0, a.data.seed);
    data_tag = "poisoned";
  }

  std::vector<dc::TransferRow> rows;
  std::vector<double> accs;
  double width_scale = a.victim == "mlp-small" ? 0.5 : (a.victim == "mlp-large" ? 2.0 : 1.0);
  for (int r = 0; r < a.repeats; ++r) {
    uint64_t seed = a.data.seed + static_cast<uint64_t>(r);
    double acc = 0.0;
    if (a.victim == "forest") {
      dc::ForestSpec fs;
      fs.seed = seed;
      dc::Forest f = dc::forest_train(fs, train);
      acc = dc::forest_accuracy(f, d.test);
      rows.push_back({"forest", 1.0, data_tag, seed, acc});
    } else {
      dc::VictimSpec spec = victim_by_name(a.victim, d.train.sample_shape(), d.train.num_classes);
      auto [theta, rep] = dc::train_victim(spec, train, d.test, a.epochs, a.alpha_f, a.batch, seed);
      acc = rep.final_test_acc;
      rows.push_back({a.victim, width_scale, data_tag, seed, acc});
      if (r == 0 && !a.confusion.empty()) {
        std::ofstream os(a.confusion);
        os << "true_label,pred_label,count\n";
        for (size_t i = 0; i < rep.confusion.size(); ++i)
          for (size_t j = 0; j < rep.confusion.size(); ++j)
            os << i << "," << j << "," << rep.confusion[i][j] << "\n";
      }
      if (r == 0 && !a.pca.empty()) {
        dc::PcaResult pr = dc::pca_project(spec, theta, train, d.test, 2);
        dc::write_pca_csv(pr, a.pca);
      }
      if (r == 0 && !a.eta.empty()) {
        dc::LabelMap eta = parse_eta(a.eta, d.train.num_classes);
        dc::TargetedEval te = dc::targeted_eval(spec, theta, d.test, eta);
        std::cout << "targeted_success=" << te.success_rate << " accuracy=" << te.accuracy
                  << "\n";
      }
    }
    accs.push_back(acc);
  }
  dc::write_transfer_csv(rows, a.out);
  double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
  double var = 0.0;
  for (double x : accs) var += (x - mean) * (x - mean);
  double sd = accs.size() > 1 ? std::sqrt(var / (accs.size() - 1)) : 0.0;
  std::printf("%s on %s data: test accuracy %.4f +- %.4f over %d repeat(s)\n", a.victim.c_str(),
              data_tag.c_str(), mean, sd, a.repeats);
  return 0;
}

// --- sweep ------------------------------------------------------------

struct SweepArgs {
  ConfuseArgs confuse;
  std::string param = "epsilon";
  std::string values;
  bool random_flip = false;
  int epochs = 20;
  std::string out = "sweep.csv";
};

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::string token;
  std::istringstream ss(text);
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) out.push_back(std::stod(token));
  }
  if (out.empty()) throw CLI::ValidationError("--values must be a non-empty comma list");
  return out;
}

int run_sweep(const SweepArgs& a) {
  std::vector<double> values = parse_values(a.values);
  LoadedData d = load_data(a.confuse.data);
  auto manifest = confuse_manifest(a.confuse, d);
  manifest["command"] = "sweep";
  manifest["param"] = a.param;
  manifest["values"] = a.values;
  manifest["random_flip"] = a.random_flip ? "true" : "false";
  manifest["epochs"] = std::to_string(a.epochs);
  manifest["out"] = a.out;
  write_manifest(a.out + ".manifest", manifest);

  dc::ConfuseConfig cfg = make_config(a.confuse, d);
  dc::AttackAlgo algo =
      a.confuse.algo == "traj" ? dc::AttackAlgo::Trajectory : dc::AttackAlgo::MemEfficient;
  dc::TrainSettings ts{a.epochs, a.confuse.alpha_f, a.confuse.batch};

  std::vector<dc::SweepRow> rows;
  if (a.param == "epsilon") {
    rows = dc::epsilon_sweep(values, cfg, d.train, d.test, ts, algo);
  } else if (a.param == "ratio") {
    std::cerr << "training shared generator at epsilon " << cfg.epsilon() << "\n";
    dc::AttackResult res = dc::run_attack(cfg, d.train, algo);
    rows = dc::ratio_sweep(values, cfg.generator, res.xi, cfg.victim, d.train, d.test, ts,
                           cfg.seed, a.random_flip);
  } else {
    throw CLI::ValidationError("--param must be epsilon or ratio");
  }
  dc::write_sweep_csv(rows, a.out);
  std::cout << "sweep written to " << a.out << "\n";
  return 0;
}

// --- export-images ------------------------------------------------------

struct ExportArgs {
  DataOptions data;
  std::string gen;
  std::string generator = "fc";
  double epsilon = 0.3;
  int64_t count = 8;
  std::string outdir = "images";
  bool clip = false;
};

int run_export(const ExportArgs& a) {
  if (a.gen.empty()) throw CLI::ValidationError("export-images needs --gen");
  LoadedData d = load_data(a.data);
  std::filesystem::create_directories(a.outdir);
  write_manifest((std::filesystem::path(a.outdir) / "export.manifest").string(),
                 {{"command", "export-images"},
                  {"data", a.data.data},
                  {"data_provenance", d.train.provenance},
                  {"gen", a.gen},
                  {"epsilon", fmt(a.epsilon)},
                  {"count", std::to_string(a.count)},
                  {"clip", a.clip ? "true" : "false"},
                  {"outdir", a.outdir},
                  {"seed", std::to_string(a.data.seed)}});
  dc::GeneratorSpec gs = generator_by_name(a.generator, d.train.sample_shape(), a.epsilon);
  dc::ParamSet xi = dc::load_params(a.gen);

  dc::Shape ss = d.train.sample_shape();
  if (ss.size() != 3 || ss[0] != 1)
    throw std::runtime_error("export-images needs single-channel image data");
  for (int64_t i = 0; i < std::min<int64_t>(a.count, d.train.size()); ++i) {
    dc::Tensor x = dc::gather_samples(d.train, {i});
    dc::Tensor noise = dc::generator_noise_eval(gs, xi, x);
    dc::Tensor poisoned = dc::t_add(x, noise);
    if (a.clip)
      for (auto& v : poisoned.data) v = std::clamp(v, 0.0, 1.0);
    dc::Shape img{ss[1], ss[2]};
    char name[64];
    std::snprintf(name, sizeof(name), "sample_%04lld", static_cast<long long>(i));
    auto base = std::filesystem::path(a.outdir) / name;
    dc::export_pgm(dc::Tensor(img, x.data), base.string() + "_clean.pgm", dc::PgmMode::Clean);
    dc::export_pgm(dc::Tensor(img, poisoned.data), base.string() + "_poisoned.pgm",
                   dc::PgmMode::Poisoned);
    dc::export_pgm(dc::Tensor(img, noise.data), base.string() + "_noise.pgm", dc::PgmMode::Noise,
                   a.epsilon);
  }
  std::cout << "images written to " << a.outdir << "\n";
  return 0;
}

// --- gradcheck ------------------------------------------------------------

int run_gradcheck() {
  using dc::Graph;
  using dc::ParamSet;
  using dc::Tensor;
  struct Row {
    std::string name;
    double err;
    double tol;
  };
  std::vector<Row> rows;
  auto rnd = [](dc::Shape s, uint64_t seed, double lo = -2.0, double hi = 2.0) {
    dc::Rng r(seed);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = r.uniform(lo, hi);
    return t;
  };
  auto one = [&](const std::string& name, dc::Shape sa, dc::Shape out,
                 std::function<int(Graph&, const std::vector<int>&)> op, double tol = 1e-5,
                 bool off_kink = false) {
    ParamSet p;
    Tensor t = rnd(sa, dc::tag_of(name.c_str()));
    if (off_kink)
      for (auto& v : t.data)
        if (std::abs(v) < 0.05) v += v >= 0 ? 0.05 : -0.05;
    p.items.emplace_back("a", std::move(t));
    Tensor c = rnd(out, dc::tag_of(name.c_str()) + 1, 0.2, 1.0);
    double err = dc::grad_check(
        [&, c](Graph& g, const std::vector<int>& l) {
          return g.sum_all(g.mul(op(g, l), g.constant(c)));
        },
        p, 1e-5);
    rows.push_back({name, err, tol});
  };

  one("relu", {4, 5}, {4, 5}, [](Graph& g, auto& l) { return g.relu(l[0]); }, 1e-5, true);
  one("tanh", {4, 5}, {4, 5}, [](Graph& g, auto& l) { return g.tanh_op(l[0]); });
  one("softmax", {4, 5}, {4, 5}, [](Graph& g, auto& l) { return g.softmax(l[0]); });
  one("reshape", {4, 5}, {2, 10}, [](Graph& g, auto& l) { return g.reshape(l[0], {2, 10}); });
  one("mean-batch", {20}, {1}, [](Graph& g, auto& l) { return g.mean_batch(l[0]); });
  one("softmax-xent", {4, 3}, {4},
      [](Graph& g, auto& l) { return g.softmax_xent(l[0], {0, 2, 1, 0}); });
  {
    // Binary ops with both operands as leaves.
    auto two = [&](const std::string& name, dc::Shape sa, dc::Shape sb, dc::Shape out,
                   std::function<int(Graph&, const std::vector<int>&)> op) {
      ParamSet p;
      p.items.emplace_back("a", rnd(sa, dc::tag_of(name.c_str())));
      p.items.emplace_back("b", rnd(sb, dc::tag_of(name.c_str()) + 7));
      Tensor c = rnd(out, dc::tag_of(name.c_str()) + 3, 0.2, 1.0);
      double err = dc::grad_check(
          [&, c](Graph& g, const std::vector<int>& l) {
            return g.sum_all(g.mul(op(g, l), g.constant(c)));
          },
          p, 1e-5);
      rows.push_back({name, err, 1e-5});
    };
    two("add", {3, 4}, {3, 4}, {3, 4}, [](Graph& g, auto& l) { return g.add(l[0], l[1]); });
    two("subtract", {3, 4}, {3, 4}, {3, 4}, [](Graph& g, auto& l) { return g.sub(l[0], l[1]); });
    two("multiply", {3, 4}, {3, 4}, {3, 4}, [](Graph& g, auto& l) { return g.mul(l[0], l[1]); });
    two("matmul", {3, 4}, {4, 2}, {3, 2}, [](Graph& g, auto& l) { return g.matmul(l[0], l[1]); });
    two("bias-add", {3, 4}, {4}, {3, 4}, [](Graph& g, auto& l) { return g.bias_add(l[0], l[1]); });
    two("conv2d", {1, 2, 5, 5}, {3, 2, 3, 3}, {1, 3, 5, 5},
        [](Graph& g, auto& l) { return g.conv(l[0], l[1], 1, 1); });
    two("transposed-conv2d", {1, 3, 3, 3}, {3, 2, 4, 4}, {1, 2, 6, 6},
        [](Graph& g, auto& l) { return g.conv_input_adj(l[0], l[1], 2, 1, 6, 6); });
  }
  {
    // maxpool needs separated pool windows.
    ParamSet p;
    Tensor t = rnd({1, 2, 4, 4}, dc::tag_of("maxpool"));
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 4; ++j)
        for (int64_t c = 0; c < 2; ++c)
          t[(c * 4 + i) * 4 + j] += 0.05 * static_cast<double>((i % 2) * 2 + j % 2);
    p.items.emplace_back("a", std::move(t));
    Tensor c = rnd({1, 2, 2, 2}, 1, 0.2, 1.0);
    double err = dc::grad_check(
        [&](Graph& g, const std::vector<int>& l) {
          return g.sum_all(g.mul(g.maxpool(l[0]), g.constant(c)));
        },
        p, 1e-5);
    rows.push_back({"maxpool", err, 1e-5});
  }
  {
    // Double backprop: d/dtheta of <grad theta L, v>.
    dc::VictimSpec vs = dc::mlp_victim({4}, 3);
    vs.mlp_widths = {4, 5, 3};
    ParamSet theta = dc::init_params(vs, 7);
    Tensor x = rnd({3, 4}, 77, 0.1, 1.0);
    std::vector<int> y{0, 1, 2};
    std::vector<Tensor> v;
    for (auto& [n, t] : theta.items) v.push_back(rnd(t.shape, dc::tag_of(n.c_str()), 0.2, 1.0));

    Graph g;
    auto leaves = dc::add_param_leaves(g, theta, true);
    int loss = g.mean_batch(g.softmax_xent(dc::victim_logits(g, vs, leaves, g.constant(x)), y));
    dc::GradMap gm = g.backward(loss, true);
    int s = -1;
    for (size_t j = 0; j < leaves.size(); ++j) {
      int term = g.sum_all(g.mul(gm.at(leaves[j]), g.constant(v[j])));
      s = s < 0 ? term : g.add(s, term);
    }
    auto analytic = g.backward_values(s, leaves);
    auto grad_dot_v = [&](const ParamSet& point) {
      Graph g2;
      auto l2 = dc::add_param_leaves(g2, point, true);
      int loss2 =
          g2.mean_batch(g2.softmax_xent(dc::victim_logits(g2, vs, l2, g2.constant(x)), y));
      auto grads = g2.backward_values(loss2, l2);
      double acc = 0.0;
      for (size_t j = 0; j < grads.size(); ++j)
        for (int64_t i = 0; i < grads[j].numel(); ++i) acc += grads[j][i] * v[j][i];
      return acc;
    };
    double delta = 1e-5, worst = 0.0;
    ParamSet probe = theta;
    for (size_t j = 0; j < theta.size(); ++j)
      for (int64_t i = 0; i < theta.tensor(j).numel(); ++i) {
        double orig = probe.tensor(j)[i];
        probe.tensor(j)[i] = orig + delta;
        double up = grad_dot_v(probe);
        probe.tensor(j)[i] = orig - delta;
        double down = grad_dot_v(probe);
        probe.tensor(j)[i] = orig;
        double fd = (up - down) / (2 * delta);
        worst = std::max(worst,
                         std::abs(fd - analytic[j][i]) /
                             std::max(1e-8, std::abs(fd) + std::abs(analytic[j][i])));
      }
    rows.push_back({"double-backprop", worst, 1e-4});
  }
  {
    // Meta-gradient through one pseudo-update on a toy model.
    dc::VictimSpec vs = dc::mlp_victim({3}, 2);
    vs.mlp_widths = {3, 4, 2};
    dc::GeneratorSpec gs = dc::fc_generator({3}, 0.2, {4});
    ParamSet theta = dc::init_params(vs, 11);
    ParamSet xi = dc::init_params(gs, 12);
    Tensor x = rnd({4, 3}, 99, 0.1, 1.0);
    std::vector<int> y{0, 1, 0, 1};
    double af = 0.05;

    Graph g;
    auto xl = dc::add_param_leaves(g, xi, true);
    dc::PseudoUpdate pu = dc::pseudo_update(g, vs, theta, gs, xl, x, y, af);
    auto [grads, value] = dc::outer_grads(g, vs, pu, x, y, xl);

    auto meta_loss = [&](const ParamSet& gen) {
      Graph g2;
      auto xl2 = dc::add_param_leaves(g2, gen, true);
      dc::PseudoUpdate pu2 = dc::pseudo_update(g2, vs, theta, gs, xl2, x, y, af);
      int logits = dc::victim_logits(g2, vs, pu2.theta_prime, g2.constant(x));
      return g2.val(g2.mean_batch(g2.softmax_xent(logits, y)))[0];
    };
    double delta = 1e-5, worst = 0.0;
    ParamSet probe = xi;
    for (size_t j = 0; j < xi.size(); ++j)
      for (int64_t i = 0; i < xi.tensor(j).numel(); ++i) {
        double orig = probe.tensor(j)[i];
        probe.tensor(j)[i] = orig + delta;
        double up = meta_loss(probe);
        probe.tensor(j)[i] = orig - delta;
        double down = meta_loss(probe);
        probe.tensor(j)[i] = orig;
        double fd = (up - down) / (2 * delta);
        worst = std::max(worst, std::abs(fd - grads[j][i]) /
                                    std::max(1e-8, std::abs(fd) + std::abs(grads[j][i])));
      }
    rows.push_back({"meta-gradient", worst, 1e-4});
  }

  bool ok = true;
  std::printf("%-20s %-12s %-8s %s\n", "check", "max_rel_err", "tol", "status");
  for (const auto& r : rows) {
    bool pass = r.err <= r.tol;
    ok = ok && pass;
    std::printf("%-20s %-12.3e %-8.0e %s\n", r.name.c_str(), r.err, r.tol,
                pass ? "PASS" : "FAIL");
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-data confusion laboratory"};
  app.require_subcommand(1);

  ConfuseArgs ca;
  auto* confuse = app.add_subcommand("confuse", "Learn a noise generator");
  add_confuse_flags(confuse, ca);
  confuse->add_option("--out", ca.out, "Output generator file");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Retrain victims and evaluate");
  eval->add_option("--data", ea.data.data, "Dataset: blobs or mnist:<dir>");
  eval->add_option("--subset", ea.data.subset, "Training subset size");
  eval->add_option("--test-subset", ea.data.test_subset, "Test subset size");
  eval->add_option("--gen", ea.gen, "Generator parameter file");
  eval->add_flag("--clean", ea.clean, "Evaluate the clean baseline instead of a generator");
  eval->add_option("--victim", ea.victim, "mlp|mlp-small|mlp-large|cnn|forest");
  eval->add_option("--generator", ea.generator, "Generator architecture of --gen (fc|conv)");
  eval->add_option("--epsilon", ea.epsilon, "Epsilon the generator was trained with");
  eval->add_option("--repeats", ea.repeats, "Training repetitions (seed + index)");
  eval->add_option("--epochs", ea.epochs, "Training epochs");
  eval->add_option("--alpha-f", ea.alpha_f, "Victim learning rate");
  eval->add_option("--batch", ea.batch, "Batch size");
  eval->add_option("--eta", ea.eta, "Report targeted success for this label map");
  eval->add_option("--seed", ea.data.seed, "Master seed");
  eval->add_option("--out", ea.out, "Output CSV");
  eval->add_option("--confusion", ea.confusion, "Optional confusion matrix CSV");
  eval->add_option("--pca", ea.pca, "Optional PCA projection CSV");

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "Epsilon or ratio sweep");
  add_confuse_flags(sweep, sa.confuse);
  sweep->add_option("--param", sa.param, "epsilon or ratio");
  sweep->add_option("--values", sa.values, "Comma-separated values")->required();
  sweep->add_flag("--random-flip", sa.random_flip, "Add the label-flip baseline (ratio sweep)");
  sweep->add_option("--epochs", sa.epochs, "Retraining epochs");
  sweep->add_option("--out", sa.out, "Output CSV");

  ExportArgs xa;
  auto* expimg = app.add_subcommand("export-images", "Write clean/poisoned/noise PGM triples");
  expimg->add_option("--data", xa.data.data, "Dataset: mnist:<dir>");
  expimg->add_option("--subset", xa.data.subset, "Training subset size");
  expimg->add_option("--gen", xa.gen, "Generator parameter file");
  expimg->add_option("--generator", xa.generator, "Generator architecture (fc|conv)");
  expimg->add_option("--epsilon", xa.epsilon, "Epsilon used for the noise image mapping");
  expimg->add_option("--count", xa.count, "Number of samples");
  expimg->add_option("--outdir", xa.outdir, "Output directory");
  expimg->add_flag("--clip", xa.clip, "Clip poisoned images to [0,1] for export");
  expimg->add_option("--seed", xa.data.seed, "Master seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*confuse) return run_confuse(ca);
    if (*eval) return run_eval(ea);
    if (*sweep) return run_sweep(sa);
    if (*expimg) return run_export(xa);
    if (*gradcheck) return run_gradcheck();
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
