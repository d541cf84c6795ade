#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dc/tensor.hpp"

namespace dc {

// Samples in [0,1] with integer labels in {0..num_classes-1}. First axis
// of `samples` is the sample index; the rest is the per-sample shape.
struct LabeledDataset {
  Tensor samples;
  std::vector<int> labels;
  int num_classes = 0;
  std::string provenance;

  int64_t size() const { return samples.rank() ? samples.dim(0) : 0; }
  int64_t sample_dim() const { return size() ? samples.numel() / size() : 0; }
  Shape sample_shape() const;
  void validate() const;  // label range, count match, finite samples
};

// Gather rows into a batch tensor / label vector.
Tensor gather_samples(const LabeledDataset& d, const std::vector<int64_t>& idx);
std::vector<int> gather_labels(const LabeledDataset& d, const std::vector<int64_t>& idx);
Tensor one_sample(const LabeledDataset& d, int64_t i);  // without batch axis

// IDX ingestion (big-endian magic 2051/2049); pixels scaled by 1/255.
LabeledDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);
// IDX emission, the round-trip partner of the loader. Values are
// quantized to bytes with round-half-up.
void save_mnist_idx(const LabeledDataset& d, const std::string& images_path,
                    const std::string& labels_path);

// Per-class isotropic Gaussians, affinely rescaled to [0,1] per dimension.
// Dimensions with no spread map to 0.5.
LabeledDataset make_gaussian_blobs(int64_t n_per_class, int64_t d,
                                   const std::vector<std::vector<double>>& centers, double sigma,
                                   uint64_t seed);

// Class-balanced subset: per-class floor of n_total/K, remainder assigned
// to the smallest class indices.
LabeledDataset stratified_subset(const LabeledDataset& d, int64_t n_total, uint64_t seed);

enum class PgmMode { Clean, Poisoned, Noise };

// Binary PGM (P5, maxval 255). Clean/Poisoned clamp [0,1] then scale;
// Noise maps [-eps, +eps] affinely onto [0,255]. Round-half-up.
void export_pgm(const Tensor& image, const std::string& path, PgmMode mode, double epsilon = 0.0);

// Minimal P5 reader for round-trip checks; returns values scaled to [0,1].
Tensor read_pgm(const std::string& path);

}  // namespace dc
