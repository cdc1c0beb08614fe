#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaopt/rng.hpp"
#include "metaopt/tensor.hpp"

namespace metaopt {

// Immutable labeled image collection. Disk-loaded data stays as raw bytes
// (60k CIFAR images as doubles would be ~1.5GB); synthetic data is stored as
// doubles. Either way images come out as doubles in [0,1], layout [C,H,W].
class ImageStore {
 public:
  ImageStore() = default;

  static ImageStore from_bytes(int n_classes, int c, int h, int w,
                               std::vector<std::uint8_t> pixels, std::vector<int> labels);
  static ImageStore from_doubles(int n_classes, int c, int h, int w, std::vector<double> pixels,
                                 std::vector<int> labels);

  std::int64_t size() const { return static_cast<std::int64_t>(labels_.size()); }
  int label(std::int64_t i) const { return labels_[static_cast<std::size_t>(i)]; }
  std::int64_t image_elems() const { return static_cast<std::int64_t>(c_) * h_ * w_; }

  // dst must have room for image_elems() doubles.
  void copy_image(std::int64_t i, double* dst) const;
  std::vector<double> image(std::int64_t i) const;

  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int n_classes() const { return nc_; }

 private:
  int nc_ = 0, c_ = 0, h_ = 0, w_ = 0;
  bool byte_backed_ = false;
  std::vector<std::uint8_t> bytes_;
  std::vector<double> reals_;
  std::vector<int> labels_;
};

struct DatasetSplits {
  ImageStore train, valid, test;
};

// Reads the binary CIFAR-10 distribution (data_batch_1..5.bin, test_batch.bin;
// 10,000 records of 1 label byte + 3072 pixel bytes each). The validation set
// is carved from the concatenated training batches: the last 500 records of
// each class, in file order. Throws on missing files, short/long files, or
// bad labels.
DatasetSplits load_cifar10(const std::string& dir);

struct ImageBatch {
  Tensor x;  // [B,C,H,W]
  std::vector<int> labels;
};

// Uniform sampling with replacement; consumes exactly `batch` draws from rng.
void sample_minibatch(const ImageStore& ds, int batch, Rng& rng, ImageBatch& out);

// Small 4-class synthetic task on 8x8 RGB images: smooth class templates plus
// per-sample amplitude jitter and pixel noise. Split 80/10/10 per class,
// classes interleaved. Same (n_per_class, seed) reproduces the dataset bit
// for bit.
DatasetSplits make_toy_dataset(int n_per_class, std::uint64_t seed);

std::vector<std::int64_t> label_histogram(const ImageStore& ds);

}  // namespace metaopt
