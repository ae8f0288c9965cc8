#include "bdl/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace bdl {

namespace {

constexpr uint32_t kImagesMagic = 2051;
constexpr uint32_t kLabelsMagic = 2049;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("idx: cannot open '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is),
                                    std::istreambuf_iterator<char>());
}

uint32_t read_be32(const std::vector<unsigned char>& buf, size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) throw FormatError("idx: truncated header in '" + path + "'");
  return (static_cast<uint32_t>(buf[offset]) << 24) | (static_cast<uint32_t>(buf[offset + 1]) << 16) |
         (static_cast<uint32_t>(buf[offset + 2]) << 8) | static_cast<uint32_t>(buf[offset + 3]);
}

void write_be32(std::ostream& os, uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

}  // namespace

std::vector<double> Dataset::image_chw(int64_t n) const {
  const int64_t h = height(), w = width(), c = channels();
  std::vector<double> out(static_cast<size_t>(c * h * w));
  const double* src = images.data().data() + n * h * w * c;
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      for (int64_t k = 0; k < c; ++k) {
        out[static_cast<size_t>((k * h + i) * w + j)] = src[(i * w + j) * c + k];
      }
    }
  }
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img_buf = read_file(images_path);
  const uint32_t img_magic = read_be32(img_buf, 0, images_path);
  if (img_magic != kImagesMagic) {
    throw FormatError("idx: expected image magic 2051 in '" + images_path + "', found " +
                      std::to_string(img_magic));
  }
  const int64_t n = read_be32(img_buf, 4, images_path);
  const int64_t h = read_be32(img_buf, 8, images_path);
  const int64_t w = read_be32(img_buf, 12, images_path);
  const size_t expected = 16 + static_cast<size_t>(n) * h * w;
  if (img_buf.size() != expected) {
    throw FormatError("idx: '" + images_path + "' payload size mismatch, expected " +
                      std::to_string(expected) + " bytes, found " + std::to_string(img_buf.size()));
  }

  const auto lbl_buf = read_file(labels_path);
  const uint32_t lbl_magic = read_be32(lbl_buf, 0, labels_path);
  if (lbl_magic != kLabelsMagic) {
    throw FormatError("idx: expected label magic 2049 in '" + labels_path + "', found " +
                      std::to_string(lbl_magic));
  }
  const int64_t ln = read_be32(lbl_buf, 4, labels_path);
  const size_t lbl_expected = 8 + static_cast<size_t>(ln);
  if (lbl_buf.size() != lbl_expected) {
    throw FormatError("idx: '" + labels_path + "' payload size mismatch, expected " +
                      std::to_string(lbl_expected) + " bytes, found " +
                      std::to_string(lbl_buf.size()));
  }
  if (ln != n) {
    throw FormatError("idx: image count " + std::to_string(n) + " != label count " +
                      std::to_string(ln));
  }

  std::vector<double> pixels(static_cast<size_t>(n) * h * w);
  for (size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<double>(img_buf[16 + i]) / 255.0;
  }
  Dataset ds;
  ds.images = Tensor::leaf({n, h, w, 1}, std::move(pixels));
  ds.labels.assign(lbl_buf.begin() + 8, lbl_buf.end());
  ds.name = images_path;
  return ds;
}

void save_idx(const Dataset& dataset, const std::string& images_path,
              const std::string& labels_path) {
  require(dataset.channels() == 1, "save_idx: only single-channel datasets");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("idx: cannot open '" + images_path + "' for writing");
  write_be32(img, kImagesMagic);
  write_be32(img, static_cast<uint32_t>(dataset.size()));
  write_be32(img, static_cast<uint32_t>(dataset.height()));
  write_be32(img, static_cast<uint32_t>(dataset.width()));
  for (double v : dataset.images.data()) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    img.put(static_cast<char>(std::lround(clamped * 255.0)));
  }
  std::ofstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw FormatError("idx: cannot open '" + labels_path + "' for writing");
  write_be32(lbl, kLabelsMagic);
  write_be32(lbl, static_cast<uint32_t>(dataset.labels.size()));
  for (int64_t y : dataset.labels) lbl.put(static_cast<char>(y));
}

Dataset synth_multimnist(const Dataset& mnist, int64_t count, uint64_t seed,
                         std::vector<std::pair<int64_t, int64_t>>* provenance) {
  require(count > 0, "synth_multimnist: count must be positive");
  require(mnist.height() == 28 && mnist.width() == 28 && mnist.channels() == 1,
          "synth_multimnist: source must be 28x28 single-channel");
  require(mnist.size() > 0, "synth_multimnist: empty source dataset");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> pick(0, mnist.size() - 1);
  std::vector<double> out(static_cast<size_t>(count) * 28 * 28, 0.0);
  std::vector<int64_t> labels(static_cast<size_t>(count));
  if (provenance) provenance->clear();

  const double* src = mnist.images.data().data();
  for (int64_t n = 0; n < count; ++n) {
    const int64_t left = pick(rng);
    const int64_t right = pick(rng);
    labels[static_cast<size_t>(n)] = 10 * mnist.labels[static_cast<size_t>(left)] +
                                     mnist.labels[static_cast<size_t>(right)];
    if (provenance) provenance->emplace_back(left, right);
    double* dst = out.data() + n * 28 * 28;
    const double* li = src + left * 28 * 28;
    const double* ri = src + right * 28 * 28;
    // 2:1 horizontal averaging squeezes each digit into a 28x14 half.
    for (int64_t i = 0; i < 28; ++i) {
      for (int64_t j = 0; j < 14; ++j) {
        dst[i * 28 + j] = 0.5 * (li[i * 28 + 2 * j] + li[i * 28 + 2 * j + 1]);
        dst[i * 28 + 14 + j] = 0.5 * (ri[i * 28 + 2 * j] + ri[i * 28 + 2 * j + 1]);
      }
    }
  }

  Dataset ds;
  ds.images = Tensor::leaf({count, 28, 28, 1}, std::move(out));
  ds.labels = std::move(labels);
  ds.name = "multimnist(" + mnist.name + ")";
  return ds;
}

BatchStream::BatchStream(const Dataset& dataset, int64_t batch_size, uint64_t seed,
                         std::optional<std::vector<double>> class_weights)
    : dataset_(&dataset), batch_size_(batch_size) {
  require(batch_size >= 1, "make_batches: batch_size must be >= 1");
  const int64_t n = dataset.size();
  std::mt19937_64 rng(seed);
  if (!class_weights) {
    order_.resize(static_cast<size_t>(n));
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng);
    return;
  }

  const auto& w = *class_weights;
  double sum = 0.0;
  for (double p : w) {
    require(p >= 0.0, "make_batches: negative class probability");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-9, "make_batches: class probabilities must sum to 1");

  std::vector<std::vector<int64_t>> members(w.size());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t y = dataset.labels[static_cast<size_t>(i)];
    if (y >= 0 && y < static_cast<int64_t>(w.size())) members[static_cast<size_t>(y)].push_back(i);
  }
  std::vector<double> cumulative(w.size());
  double acc = 0.0;
  for (size_t c = 0; c < w.size(); ++c) {
    acc += members[c].empty() ? 0.0 : w[c];
    cumulative[c] = acc;
  }
  require(acc > 0.0, "make_batches: no samples available under the given class probabilities");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  order_.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double u = unit(rng) * acc;
    size_t c = static_cast<size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                                   cumulative.begin());
    if (c >= members.size()) c = members.size() - 1;
    while (members[c].empty()) ++c;  // unreachable classes were folded into cumulative
    std::uniform_int_distribution<size_t> pick(0, members[c].size() - 1);
    order_.push_back(members[c][pick(rng)]);
  }
}

std::optional<Batch> BatchStream::next() {
  const int64_t n = static_cast<int64_t>(order_.size());
  if (cursor_ >= n) return std::nullopt;
  const int64_t take = std::min(batch_size_, n - cursor_);
  std::vector<int64_t> rows(order_.begin() + cursor_, order_.begin() + cursor_ + take);
  cursor_ += take;
  return gather_batch(*dataset_, rows);
}

int64_t BatchStream::num_batches() const {
  return (static_cast<int64_t>(order_.size()) + batch_size_ - 1) / batch_size_;
}

BatchStream make_batches(const Dataset& dataset, int64_t batch_size, uint64_t seed,
                         std::optional<std::vector<double>> class_weights) {
  return BatchStream(dataset, batch_size, seed, std::move(class_weights));
}

Batch gather_batch(const Dataset& dataset, const std::vector<int64_t>& rows) {
  require(!rows.empty(), "gather_batch: empty row set");
  const int64_t h = dataset.height(), w = dataset.width(), c = dataset.channels();
  const int64_t b = static_cast<int64_t>(rows.size());
  std::vector<double> data(static_cast<size_t>(b * c * h * w));
  std::vector<int64_t> labels(rows.size());
  for (int64_t i = 0; i < b; ++i) {
    const auto chw = dataset.image_chw(rows[static_cast<size_t>(i)]);
    std::copy(chw.begin(), chw.end(), data.begin() + i * c * h * w);
    labels[static_cast<size_t>(i)] = dataset.labels[static_cast<size_t>(rows[static_cast<size_t>(i)])];
  }
  Batch batch;
  batch.images = Tensor::leaf({b, c, h, w}, std::move(data));
  batch.labels = std::move(labels);
  batch.indices = rows;
  return batch;
}

namespace {

constexpr char kCacheMagic[4] = {'B', 'L', 'D', '1'};

}  // namespace

void save_dataset_cache(const Dataset& dataset, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("dataset cache: cannot open '" + path + "' for writing");
  os.write(kCacheMagic, 4);
  const uint32_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), 4);
  const uint32_t name_len = static_cast<uint32_t>(dataset.name.size());
  os.write(reinterpret_cast<const char*>(&name_len), 4);
  os.write(dataset.name.data(), name_len);
  for (int64_t d : dataset.images.shape()) {
    const uint64_t v = static_cast<uint64_t>(d);
    os.write(reinterpret_cast<const char*>(&v), 8);
  }
  os.write(reinterpret_cast<const char*>(dataset.images.data().data()),
           static_cast<std::streamsize>(dataset.images.data().size() * sizeof(double)));
  const uint64_t n_labels = dataset.labels.size();
  os.write(reinterpret_cast<const char*>(&n_labels), 8);
  os.write(reinterpret_cast<const char*>(dataset.labels.data()),
           static_cast<std::streamsize>(n_labels * sizeof(int64_t)));
  if (!os) throw FormatError("dataset cache: write failed for '" + path + "'");
}

Dataset load_dataset_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("dataset cache: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCacheMagic, 4) != 0) {
    throw FormatError("dataset cache: bad magic, expected BLD1");
  }
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw FormatError("dataset cache: unsupported version");
  uint32_t name_len = 0;
  is.read(reinterpret_cast<char*>(&name_len), 4);
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  Shape shape(4);
  for (auto& d : shape) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    d = static_cast<int64_t>(v);
  }
  if (!is) throw FormatError("dataset cache: truncated header");
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  uint64_t n_labels = 0;
  is.read(reinterpret_cast<char*>(&n_labels), 8);
  std::vector<int64_t> labels(n_labels);
  is.read(reinterpret_cast<char*>(labels.data()),
          static_cast<std::streamsize>(n_labels * sizeof(int64_t)));
  if (!is) throw FormatError("dataset cache: truncated payload");
  Dataset ds;
  ds.images = Tensor::leaf(std::move(shape), std::move(data));
  ds.labels = std::move(labels);
  ds.name = std::move(name);
  return ds;
}

}  // namespace bdl
