#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dc/data.hpp"
#include "dc/rng.hpp"
#include "test_util.hpp"

using namespace dc;
using namespace dc::test;

namespace {

namespace fs = std::filesystem;

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

void append(std::vector<unsigned char>& out, const std::vector<unsigned char>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

struct IdxFixture {
  std::string images, labels;
  IdxFixture(uint32_t img_magic, uint32_t img_count, uint32_t lab_magic, uint32_t lab_count) {
    auto tmp = fs::temp_directory_path();
    images = (tmp / "dc_fixture_images.idx").string();
    labels = (tmp / "dc_fixture_labels.idx").string();
    std::vector<unsigned char> img;
    append(img, be32(img_magic));
    append(img, be32(img_count));
    append(img, be32(2));
    append(img, be32(2));
    // two 2x2 images
    for (unsigned char b : {0, 1, 128, 255, 255, 0, 1, 128}) img.push_back(b);
    write_bytes(images, img);
    std::vector<unsigned char> lab;
    append(lab, be32(lab_magic));
    append(lab, be32(lab_count));
    lab.push_back(3);
    lab.push_back(7);
    write_bytes(labels, lab);
  }
  ~IdxFixture() {
    fs::remove(images);
    fs::remove(labels);
  }
};

}  // namespace

TEST_CASE("idx loader parses a hand-built fixture exactly") {
  IdxFixture fx(2051, 2, 2049, 2);
  LabeledDataset d = load_mnist_idx(fx.images, fx.labels);
  CHECK(d.size() == 2);
  CHECK(d.samples.shape == Shape{2, 1, 2, 2});
  CHECK(d.samples[0] == 0.0);
  CHECK(d.samples[1] == doctest::Approx(1.0 / 255.0).epsilon(1e-15));
  CHECK(d.samples[2] == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
  CHECK(d.samples[3] == 1.0);
  CHECK(d.labels == std::vector<int>{3, 7});
}

TEST_CASE("idx loader rejects malformed files distinctly") {
  {
    IdxFixture fx(2052, 2, 2049, 2);
    CHECK_THROWS_WITH_AS(load_mnist_idx(fx.images, fx.labels), doctest::Contains("wrong magic"),
                         std::runtime_error);
  }
  {
    IdxFixture fx(2051, 2, 2049, 3);
    CHECK_THROWS_WITH_AS(load_mnist_idx(fx.images, fx.labels),
                         doctest::Contains("count mismatch"), std::runtime_error);
  }
  {
    IdxFixture fx(2051, 9, 2049, 9);  // counts claim more data than present
    CHECK_THROWS_WITH_AS(load_mnist_idx(fx.images, fx.labels), doctest::Contains("truncated"),
                         std::runtime_error);
  }
}

TEST_CASE("idx writer round-trips through the parser") {
  Rng rng(tag_of("idx-rt"));
  LabeledDataset d;
  d.samples = Tensor({5, 1, 3, 4});
  for (int64_t i = 0; i < d.samples.numel(); ++i)
    d.samples[i] = static_cast<double>(rng.below(256)) / 255.0;
  d.labels = {0, 1, 2, 1, 0};
  d.num_classes = 3;
  auto tmp = fs::temp_directory_path();
  std::string ip = (tmp / "dc_rt_images.idx").string();
  std::string lp = (tmp / "dc_rt_labels.idx").string();
  save_mnist_idx(d, ip, lp);
  LabeledDataset back = load_mnist_idx(ip, lp);
  CHECK(back.samples.shape == d.samples.shape);
  CHECK(back.samples.data == d.samples.data);
  CHECK(back.labels == d.labels);
  fs::remove(ip);
  fs::remove(lp);
}

TEST_CASE("gaussian blobs: degenerate sigma, determinism, range") {
  std::vector<std::vector<double>> centers{{0, 0, 1}, {1, 1, 1}};
  LabeledDataset d0 = make_gaussian_blobs(4, 3, centers, 0.0, 5);
  // sigma 0: every class-k sample equals its rescaled center.
  for (int64_t i = 1; i < 4; ++i)
    for (int64_t j = 0; j < 3; ++j)
      CHECK(d0.samples[i * 3 + j] == d0.samples[0 * 3 + j]);
  // third dimension is constant across classes; maps to 0.5
  CHECK(d0.samples[2] == 0.5);
  CHECK(d0.samples[0] == 0.0);  // class-0 center at the low end
  CHECK(d0.samples[4 * 3 + 0] == 1.0);

  LabeledDataset a = make_gaussian_blobs(10, 3, centers, 0.2, 7);
  LabeledDataset b = make_gaussian_blobs(10, 3, centers, 0.2, 7);
  CHECK(a.samples.data == b.samples.data);
  CHECK(a.labels == b.labels);
  for (double v : a.samples.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("stratified subset balances classes deterministically") {
  Rng rng(tag_of("strat"));
  LabeledDataset d;
  d.num_classes = 3;
  d.samples = rand_tensor({30, 2}, rng, 0.0, 1.0);
  for (int i = 0; i < 30; ++i) d.labels.push_back(i < 14 ? 0 : (i < 24 ? 1 : 2));

  LabeledDataset s = stratified_subset(d, 10, 3);
  std::vector<int> counts(3, 0);
  for (int y : s.labels) counts[y]++;
  int lo = *std::min_element(counts.begin(), counts.end());
  int hi = *std::max_element(counts.begin(), counts.end());
  CHECK(hi - lo <= 1);
  CHECK(s.size() == 10);

  LabeledDataset s2 = stratified_subset(d, 10, 3);
  CHECK(s.samples.data == s2.samples.data);
  CHECK(s.labels == s2.labels);

  // n_total == n keeps the multiset of samples.
  LabeledDataset all = stratified_subset(d, 30, 9);
  auto sorted_rows = [](const LabeledDataset& x) {
    std::vector<std::pair<std::vector<double>, int>> rows;
    for (int64_t i = 0; i < x.size(); ++i) {
      auto t = one_sample(x, i);
      rows.emplace_back(t.data, x.labels[i]);
    }
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  CHECK(sorted_rows(all) == sorted_rows(d));

  CHECK_THROWS_AS(stratified_subset(d, 31, 0), std::invalid_argument);
}

TEST_CASE("pgm export quantization and round trip") {
  auto tmp = fs::temp_directory_path();
  std::string path = (tmp / "dc_test.pgm").string();

  export_pgm(Tensor::zeros({4, 4}), path, PgmMode::Clean);
  Tensor z = read_pgm(path);
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);

  // Zero noise at positive epsilon maps to mid-gray 128.
  export_pgm(Tensor::zeros({4, 4}), path, PgmMode::Noise, 0.3);
  Tensor mid = read_pgm(path);
  for (int64_t i = 0; i < mid.numel(); ++i) CHECK(mid[i] == doctest::Approx(128.0 / 255.0));

  Rng rng(tag_of("pgm"));
  Tensor img = rand_tensor({5, 7}, rng, 0.0, 1.0);
  export_pgm(img, path, PgmMode::Clean);
  Tensor back = read_pgm(path);
  CHECK(back.shape == img.shape);
  CHECK(max_abs_diff(back, img) <= 0.5 / 255.0 + 1e-12);

  CHECK_THROWS_AS(export_pgm(Tensor::zeros({3, 4, 5, 6}), path, PgmMode::Clean),
                  std::invalid_argument);
  fs::remove(path);
}

TEST_CASE("rng streams are stable and seed-dependent") {
  Rng a(123), b(123), c(124);
  for (int i = 0; i < 100; ++i) {
    double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
  CHECK(Rng(123).next() != c.next());
  CHECK(derive_seed(1, tag_of("x"), 0) != derive_seed(1, tag_of("x"), 1));
  CHECK(derive_seed(1, tag_of("x")) != derive_seed(1, tag_of("y")));
  CHECK(derive_seed(1, tag_of("x"), 5) == derive_seed(1, tag_of("x"), 5));
}
