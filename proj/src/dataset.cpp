#include "metaopt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace metaopt {

namespace {

constexpr std::int64_t kCifarRecordBytes = 3073;
constexpr std::int64_t kCifarRecordsPerFile = 10000;
constexpr int kCifarValidPerClass = 500;

void check_store_args(int n_classes, int c, int h, int w, std::size_t n_pixels,
                      const std::vector<int>& labels) {
  if (n_classes <= 0 || c <= 0 || h <= 0 || w <= 0)
    throw std::invalid_argument("ImageStore: non-positive dimensions");
  const std::size_t elems = static_cast<std::size_t>(c) * h * w;
  if (labels.empty() || n_pixels != labels.size() * elems)
    throw std::invalid_argument("ImageStore: pixel buffer does not match label count");
  for (int y : labels)
    if (y < 0 || y >= n_classes)
      throw std::invalid_argument("ImageStore: label " + std::to_string(y) + " outside [0," +
                                  std::to_string(n_classes) + ")");
}

}  // namespace

ImageStore ImageStore::from_bytes(int n_classes, int c, int h, int w,
                                  std::vector<std::uint8_t> pixels, std::vector<int> labels) {
  check_store_args(n_classes, c, h, w, pixels.size(), labels);
  ImageStore s;
  s.nc_ = n_classes;
  s.c_ = c;
  s.h_ = h;
  s.w_ = w;
  s.byte_backed_ = true;
  s.bytes_ = std::move(pixels);
  s.labels_ = std::move(labels);
  return s;
}

ImageStore ImageStore::from_doubles(int n_classes, int c, int h, int w, std::vector<double> pixels,
                                    std::vector<int> labels) {
  check_store_args(n_classes, c, h, w, pixels.size(), labels);
  ImageStore s;
  s.nc_ = n_classes;
  s.c_ = c;
  s.h_ = h;
  s.w_ = w;
  s.byte_backed_ = false;
  s.reals_ = std::move(pixels);
  s.labels_ = std::move(labels);
  return s;
}

void ImageStore::copy_image(std::int64_t i, double* dst) const {
  if (i < 0 || i >= size()) throw std::out_of_range("ImageStore: index " + std::to_string(i));
  const std::int64_t n = image_elems();
  if (byte_backed_) {
    const std::uint8_t* src = bytes_.data() + i * n;
    for (std::int64_t k = 0; k < n; ++k) dst[k] = static_cast<double>(src[k]) * (1.0 / 255.0);
  } else {
    const double* src = reals_.data() + i * n;
    std::copy(src, src + n, dst);
  }
}

std::vector<double> ImageStore::image(std::int64_t i) const {
  std::vector<double> out(static_cast<std::size_t>(image_elems()));
  copy_image(i, out.data());
  return out;
}

namespace {

void read_cifar_file(const std::filesystem::path& path, std::vector<std::uint8_t>& pixels,
                     std::vector<int>& labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const std::int64_t bytes = in.tellg();
  if (bytes != kCifarRecordBytes * kCifarRecordsPerFile)
    throw std::runtime_error(path.string() + ": expected " +
                             std::to_string(kCifarRecordBytes * kCifarRecordsPerFile) +
                             " bytes, found " + std::to_string(bytes));
  in.seekg(0);
  std::vector<std::uint8_t> rec(kCifarRecordBytes);
  for (std::int64_t r = 0; r < kCifarRecordsPerFile; ++r) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), kCifarRecordBytes))
      throw std::runtime_error(path.string() + ": short read at record " + std::to_string(r));
    const int y = rec[0];
    if (y >= 10)
      throw std::runtime_error(path.string() + ": bad label " + std::to_string(y) + " at record " +
                               std::to_string(r));
    labels.push_back(y);
    pixels.insert(pixels.end(), rec.begin() + 1, rec.end());
  }
}

}  // namespace

DatasetSplits load_cifar10(const std::string& dir) {
  const std::filesystem::path root(dir);
  std::vector<std::uint8_t> train_px;
  std::vector<int> train_y;
  train_px.reserve(static_cast<std::size_t>(5) * kCifarRecordsPerFile * 3072);
  for (int i = 1; i <= 5; ++i)
    read_cifar_file(root / ("data_batch_" + std::to_string(i) + ".bin"), train_px, train_y);

  std::vector<std::uint8_t> test_px;
  std::vector<int> test_y;
  read_cifar_file(root / "test_batch.bin", test_px, test_y);

  // Mark the last 500 occurrences of each class (in concatenated order) as
  // validation, walking backwards until every class has its quota.
  const std::int64_t n = static_cast<std::int64_t>(train_y.size());
  std::vector<char> is_valid(static_cast<std::size_t>(n), 0);
  std::vector<int> need(10, kCifarValidPerClass);
  int remaining = 10 * kCifarValidPerClass;
  for (std::int64_t i = n - 1; i >= 0 && remaining > 0; --i) {
    int& q = need[static_cast<std::size_t>(train_y[static_cast<std::size_t>(i)])];
    if (q > 0) {
      --q;
      --remaining;
      is_valid[static_cast<std::size_t>(i)] = 1;
    }
  }
  for (int c = 0; c < 10; ++c)
    if (need[static_cast<std::size_t>(c)] > 0)
      throw std::runtime_error("class " + std::to_string(c) + " has fewer than " +
                               std::to_string(kCifarValidPerClass) + " training records");

  std::vector<std::uint8_t> tr_px, va_px;
  std::vector<int> tr_y, va_y;
  tr_px.reserve(train_px.size());
  for (std::int64_t i = 0; i < n; ++i) {
    auto begin = train_px.begin() + i * 3072;
    if (is_valid[static_cast<std::size_t>(i)]) {
      va_px.insert(va_px.end(), begin, begin + 3072);
      va_y.push_back(train_y[static_cast<std::size_t>(i)]);
    } else {
      tr_px.insert(tr_px.end(), begin, begin + 3072);
      tr_y.push_back(train_y[static_cast<std::size_t>(i)]);
    }
  }

  DatasetSplits s;
  s.train = ImageStore::from_bytes(10, 3, 32, 32, std::move(tr_px), std::move(tr_y));
  s.valid = ImageStore::from_bytes(10, 3, 32, 32, std::move(va_px), std::move(va_y));
  s.test = ImageStore::from_bytes(10, 3, 32, 32, std::move(test_px), std::move(test_y));
  return s;
}

void sample_minibatch(const ImageStore& ds, int batch, Rng& rng, ImageBatch& out) {
  if (batch <= 0) throw std::invalid_argument("sample_minibatch: batch must be positive");
  if (ds.size() == 0) throw std::invalid_argument("sample_minibatch: empty dataset");
  const Shape want{batch, ds.channels(), ds.height(), ds.width()};
  if (out.x.shape != want) out.x = Tensor(want);
  out.labels.resize(static_cast<std::size_t>(batch));
  const std::int64_t elems = ds.image_elems();
  for (int b = 0; b < batch; ++b) {
    const std::int64_t idx = rng.below(ds.size());
    ds.copy_image(idx, out.x.data.data() + b * elems);
    out.labels[static_cast<std::size_t>(b)] = ds.label(idx);
  }
}

namespace {

constexpr int kToyClasses = 4;
constexpr int kToyHW = 8;

// Smooth, well-separated class prototypes on [0,1]^2 per channel.
double toy_template(int cls, int c, int i, int j) {
  const double u = i / double(kToyHW - 1);
  const double v = j / double(kToyHW - 1);
  switch (cls) {
    case 0: {
      const double wc[3] = {1.0, 0.6, 0.3};
      return wc[c] * u;
    }
    case 1: {
      const double wc[3] = {0.3, 1.0, 0.6};
      return wc[c] * v;
    }
    case 2: {
      const double wc[3] = {0.6, 0.3, 1.0};
      const double d2 = (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5);
      return wc[c] * std::exp(-d2 / 0.08);
    }
    default: {
      const double wc[3] = {1.0, 1.0, 0.25};
      return wc[c] * 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * (u + v)));
    }
  }
}

}  // namespace

DatasetSplits make_toy_dataset(int n_per_class, std::uint64_t seed) {
  if (n_per_class < 10) throw std::invalid_argument("make_toy_dataset: need at least 10 per class");
  const int n_test = n_per_class / 10;
  const int n_valid = n_per_class / 10;
  const int n_train = n_per_class - n_test - n_valid;

  Rng rng(mix64(seed) ^ 0x746f79ULL);

  struct Part {
    std::vector<double> px;
    std::vector<int> y;
  };
  Part parts[3];  // train, valid, test

  // Round-robin over classes so no split is class-sorted.
  const int counts[3] = {n_train, n_valid, n_test};
  for (int p = 0; p < 3; ++p) {
    for (int rep = 0; rep < counts[p]; ++rep) {
      for (int cls = 0; cls < kToyClasses; ++cls) {
        const double amp = 0.7 + 0.3 * rng.uniform();
        for (int c = 0; c < 3; ++c)
          for (int i = 0; i < kToyHW; ++i)
            for (int j = 0; j < kToyHW; ++j) {
              double v = amp * toy_template(cls, c, i, j) + 0.15 * rng.normal();
              parts[p].px.push_back(std::clamp(v, 0.0, 1.0));
            }
        parts[p].y.push_back(cls);
      }
    }
  }

  DatasetSplits s;
  s.train = ImageStore::from_doubles(kToyClasses, 3, kToyHW, kToyHW, std::move(parts[0].px),
                                     std::move(parts[0].y));
  s.valid = ImageStore::from_doubles(kToyClasses, 3, kToyHW, kToyHW, std::move(parts[1].px),
                                     std::move(parts[1].y));
  s.test = ImageStore::from_doubles(kToyClasses, 3, kToyHW, kToyHW, std::move(parts[2].px),
                                    std::move(parts[2].y));
  return s;
}

std::vector<std::int64_t> label_histogram(const ImageStore& ds) {
  std::vector<std::int64_t> h(static_cast<std::size_t>(ds.n_classes()), 0);
  for (std::int64_t i = 0; i < ds.size(); ++i) ++h[static_cast<std::size_t>(ds.label(i))];
  return h;
}

}  // namespace metaopt
