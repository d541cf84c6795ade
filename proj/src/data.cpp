#include "dc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dc/rng.hpp"

namespace dc {

Shape LabeledDataset::sample_shape() const {
  Shape s(samples.shape.begin() + 1, samples.shape.end());
  return s;
}

void LabeledDataset::validate() const {
  if (size() != static_cast<int64_t>(labels.size()))
    throw std::runtime_error("dataset: " + std::to_string(size()) + " samples but " +
                             std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw std::runtime_error("dataset: label " + std::to_string(y) + " outside 0.." +
                               std::to_string(num_classes - 1));
  if (!samples.all_finite()) throw std::runtime_error("dataset: non-finite sample values");
}

Tensor gather_samples(const LabeledDataset& d, const std::vector<int64_t>& idx) {
  int64_t row = d.sample_dim();
  Shape shape{static_cast<int64_t>(idx.size())};
  Shape per = d.sample_shape();
  shape.insert(shape.end(), per.begin(), per.end());
  Tensor out(shape);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(d.samples.data.begin() + idx[i] * row, row,
                out.data.begin() + static_cast<int64_t>(i) * row);
  return out;
}

std::vector<int> gather_labels(const LabeledDataset& d, const std::vector<int64_t>& idx) {
  std::vector<int> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = d.labels[idx[i]];
  return out;
}

Tensor one_sample(const LabeledDataset& d, int64_t i) {
  int64_t row = d.sample_dim();
  Tensor out(d.sample_shape());
  std::copy_n(d.samples.data.begin() + i * row, row, out.data.begin());
  return out;
}

namespace {

uint32_t read_be32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("'" + path + "': truncated file");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

constexpr uint32_t kImageMagic = 2051;
constexpr uint32_t kLabelMagic = 2049;

}  // namespace

LabeledDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("cannot open image file '" + images_path + "'");
  uint32_t magic = read_be32(imgs, images_path);
  if (magic != kImageMagic)
    throw std::runtime_error("'" + images_path + "': wrong magic " + std::to_string(magic) +
                             ", expected " + std::to_string(kImageMagic));
  uint32_t count = read_be32(imgs, images_path);
  uint32_t rows = read_be32(imgs, images_path);
  uint32_t cols = read_be32(imgs, images_path);

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("cannot open label file '" + labels_path + "'");
  uint32_t lmagic = read_be32(labs, labels_path);
  if (lmagic != kLabelMagic)
    throw std::runtime_error("'" + labels_path + "': wrong magic " + std::to_string(lmagic) +
                             ", expected " + std::to_string(kLabelMagic));
  uint32_t lcount = read_be32(labs, labels_path);
  if (count != lcount)
    throw std::runtime_error("image/label count mismatch: " + std::to_string(count) + " images vs " +
                             std::to_string(lcount) + " labels");

  LabeledDataset d;
  d.samples = Tensor({static_cast<int64_t>(count), 1, static_cast<int64_t>(rows),
                      static_cast<int64_t>(cols)});
  std::vector<unsigned char> buf(static_cast<size_t>(count) * rows * cols);
  if (!imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw std::runtime_error("'" + images_path + "': truncated file");
  for (size_t i = 0; i < buf.size(); ++i) d.samples[static_cast<int64_t>(i)] = buf[i] / 255.0;

  std::vector<unsigned char> lbuf(count);
  if (!labs.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size())))
    throw std::runtime_error("'" + labels_path + "': truncated file");
  d.labels.assign(lbuf.begin(), lbuf.end());
  d.num_classes = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  d.provenance = "mnist-idx:" + images_path;
  d.validate();
  return d;
}

void save_mnist_idx(const LabeledDataset& d, const std::string& images_path,
                    const std::string& labels_path) {
  if (d.samples.rank() != 4 || d.samples.dim(1) != 1)
    throw std::runtime_error("save_mnist_idx: expects (n,1,rows,cols) samples");
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("cannot open '" + images_path + "' for writing");
  write_be32(imgs, kImageMagic);
  write_be32(imgs, static_cast<uint32_t>(d.size()));
  write_be32(imgs, static_cast<uint32_t>(d.samples.dim(2)));
  write_be32(imgs, static_cast<uint32_t>(d.samples.dim(3)));
  for (int64_t i = 0; i < d.samples.numel(); ++i) {
    double v = std::clamp(d.samples[i], 0.0, 1.0);
    imgs.put(static_cast<char>(static_cast<unsigned char>(std::floor(v * 255.0 + 0.5))));
  }
  std::ofstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("cannot open '" + labels_path + "' for writing");
  write_be32(labs, kLabelMagic);
  write_be32(labs, static_cast<uint32_t>(d.size()));
  for (int y : d.labels) labs.put(static_cast<char>(static_cast<unsigned char>(y)));
  if (!imgs || !labs) throw std::runtime_error("idx write failed");
}

LabeledDataset make_gaussian_blobs(int64_t n_per_class, int64_t d,
                                   const std::vector<std::vector<double>>& centers, double sigma,
                                   uint64_t seed) {
  if (d < 1) throw std::invalid_argument("make_gaussian_blobs: d must be >= 1");
  int64_t k = static_cast<int64_t>(centers.size());
  if (k < 1) throw std::invalid_argument("make_gaussian_blobs: need at least one center");
  for (const auto& c : centers)
    if (static_cast<int64_t>(c.size()) != d)
      throw std::invalid_argument("make_gaussian_blobs: center dimension mismatch");

  int64_t n = n_per_class * k;
  LabeledDataset out;
  out.samples = Tensor({n, d});
  out.labels.resize(n);
  out.num_classes = static_cast<int>(k);
  Rng rng(seed);
  for (int64_t c = 0; c < k; ++c)
    for (int64_t i = 0; i < n_per_class; ++i) {
      int64_t row = c * n_per_class + i;
      out.labels[row] = static_cast<int>(c);
      for (int64_t j = 0; j < d; ++j)
        out.samples[row * d + j] = centers[c][j] + sigma * rng.normal();
    }
  // Rescale each dimension onto [0,1] so the noise budget epsilon is in
  // the same units as for image data.
  for (int64_t j = 0; j < d; ++j) {
    double lo = out.samples[j], hi = out.samples[j];
    for (int64_t i = 1; i < n; ++i) {
      lo = std::min(lo, out.samples[i * d + j]);
      hi = std::max(hi, out.samples[i * d + j]);
    }
    for (int64_t i = 0; i < n; ++i) {
      double& v = out.samples[i * d + j];
      v = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    }
  }
  out.provenance = "blobs(k=" + std::to_string(k) + ",d=" + std::to_string(d) +
                   ",n=" + std::to_string(n) + ",seed=" + std::to_string(seed) + ")";
  return out;
}

LabeledDataset stratified_subset(const LabeledDataset& d, int64_t n_total, uint64_t seed) {
  if (n_total > d.size())
    throw std::invalid_argument("stratified_subset: requested " + std::to_string(n_total) +
                                " of " + std::to_string(d.size()));
  int64_t k = d.num_classes;
  std::vector<int64_t> want(k, n_total / k);
  for (int64_t c = 0; c < n_total % k; ++c) want[c] += 1;

  std::vector<std::vector<int64_t>> by_class(k);
  for (int64_t i = 0; i < d.size(); ++i) by_class[d.labels[i]].push_back(i);

  // Classes too small to meet their quota hand the shortfall to the
  // smallest class indices that still have spare samples.
  int64_t shortfall = 0;
  for (int64_t c = 0; c < k; ++c) {
    int64_t avail = static_cast<int64_t>(by_class[c].size());
    if (want[c] > avail) {
      shortfall += want[c] - avail;
      want[c] = avail;
    }
  }
  while (shortfall > 0) {
    bool moved = false;
    for (int64_t c = 0; c < k && shortfall > 0; ++c) {
      if (want[c] < static_cast<int64_t>(by_class[c].size())) {
        want[c] += 1;
        shortfall -= 1;
        moved = true;
      }
    }
    if (!moved) throw std::runtime_error("stratified_subset: not enough samples");
  }

  Rng rng(seed);
  std::vector<int64_t> chosen;
  for (int64_t c = 0; c < k; ++c) {
    auto& pool = by_class[c];
    rng.shuffle(pool);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + want[c]);
  }
  LabeledDataset out;
  out.samples = gather_samples(d, chosen);
  out.labels = gather_labels(d, chosen);
  out.num_classes = d.num_classes;
  out.provenance = d.provenance + "|subset(n=" + std::to_string(n_total) +
                   ",seed=" + std::to_string(seed) + ")";
  return out;
}

namespace {
unsigned char quant255(double v) {
  return static_cast<unsigned char>(std::clamp(std::floor(v * 255.0 + 0.5), 0.0, 255.0));
}
}  // namespace

void export_pgm(const Tensor& image, const std::string& path, PgmMode mode, double epsilon) {
  Tensor img = image;
  if (img.rank() == 3 && img.dim(0) == 1) img.shape = {img.dim(1), img.dim(2)};
  if (img.rank() != 2)
    throw std::invalid_argument("export_pgm: expects a single-channel 2-D image, got " +
                                shape_str(image.shape));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  for (int64_t i = 0; i < img.numel(); ++i) {
    double v = img[i];
    unsigned char byte;
    if (mode == PgmMode::Noise)
      byte = epsilon > 0.0 ? quant255((v + epsilon) / (2.0 * epsilon)) : quant255(0.5);
    else
      byte = quant255(std::clamp(v, 0.0, 1.0));
    os.put(static_cast<char>(byte));
  }
  if (!os) throw std::runtime_error("pgm write failed for '" + path + "'");
}

Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open pgm '" + path + "'");
  std::string magic;
  is >> magic;
  if (magic != "P5") throw std::runtime_error("'" + path + "': not a P5 pgm");
  int64_t w, h, maxval;
  is >> w >> h >> maxval;
  is.get();  // single whitespace after maxval
  if (maxval != 255) throw std::runtime_error("'" + path + "': unsupported maxval");
  Tensor out({h, w});
  for (int64_t i = 0; i < out.numel(); ++i) {
    int c = is.get();
    if (c < 0) throw std::runtime_error("'" + path + "': truncated pgm");
    out[i] = c / 255.0;
  }
  return out;
}

}  // namespace dc
