#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bdl/tensor.hpp"

namespace bdl {

// Labeled image set. Images live in (N,H,W,C) layout with values in [0,1].
struct Dataset {
  Tensor images;
  std::vector<int64_t> labels;
  std::string name;

  int64_t size() const { return images.defined() ? images.shape()[0] : 0; }
  int64_t height() const { return images.shape()[1]; }
  int64_t width() const { return images.shape()[2]; }
  int64_t channels() const { return images.shape()[3]; }

  // Copy of image n in (C,H,W) layout, the layout the models consume.
  std::vector<double> image_chw(int64_t n) const;
};

// IDX readers/writers (big-endian magic 2051 = images with 3 dims,
// 2049 = labels with 1 dim, then unsigned bytes). Pixels are scaled by
// 1/255 on load.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const Dataset& dataset, const std::string& images_path,
              const std::string& labels_path);

// Two-digit composition: the left half of each 28x28 output encodes the
// tens digit, the right half the units digit, label = 10*left + right.
// Each constituent is squeezed to 28x14 by 2:1 horizontal averaging.
// `provenance`, when given, receives the constituent source indices
// (test support for the label invariant).
Dataset synth_multimnist(const Dataset& mnist, int64_t count, uint64_t seed,
                         std::vector<std::pair<int64_t, int64_t>>* provenance = nullptr);

struct Batch {
  Tensor images;                 // (B,C,H,W)
  std::vector<int64_t> labels;
  std::vector<int64_t> indices;  // dataset rows this batch was drawn from
};

// One epoch worth of batches. Uniform mode: seeded shuffle, contiguous
// slices, ragged tail kept. Weighted mode: sampling with replacement from
// the stated per-class probabilities.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, int64_t batch_size, uint64_t seed,
              std::optional<std::vector<double>> class_weights);

  std::optional<Batch> next();
  int64_t num_batches() const;

 private:
  const Dataset* dataset_;
  int64_t batch_size_;
  std::vector<int64_t> order_;
  int64_t cursor_ = 0;
};

BatchStream make_batches(const Dataset& dataset, int64_t batch_size, uint64_t seed,
                         std::optional<std::vector<double>> class_weights = std::nullopt);

// Assembles specific dataset rows into a model-ready batch.
Batch gather_batch(const Dataset& dataset, const std::vector<int64_t>& rows);

// Binary dataset cache, magic "BLD1", same container style as model
// checkpoints.
void save_dataset_cache(const Dataset& dataset, const std::string& path);
Dataset load_dataset_cache(const std::string& path);

}  // namespace bdl
