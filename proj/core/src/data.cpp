#include "lqiq/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

#include "lqiq/errors.hpp"

namespace lqiq {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t at,
                        const std::string& source, const char* what) {
  if (bytes.size() < at + 4) {
    throw LengthError(source + ": truncated at byte " +
                          std::to_string(bytes.size()) + " while reading " +
                          what + " at offset " + std::to_string(at),
                      bytes.size());
  }
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

void check_magic(std::uint32_t found, std::uint32_t expected,
                 const std::string& source) {
  if (found != expected) {
    throw FormatError(source + ": bad IDX magic, expected " + hex32(expected) +
                          " found " + hex32(found),
                      0);
  }
}

void check_payload(std::span<const std::uint8_t> bytes, std::size_t header,
                   std::size_t payload, const std::string& source) {
  const std::size_t expected = header + payload;
  if (bytes.size() < expected) {
    throw LengthError(source + ": truncated at byte " +
                          std::to_string(bytes.size()) + ", header promises " +
                          std::to_string(expected) + " bytes",
                      bytes.size());
  }
  if (bytes.size() > expected) {
    throw FormatError(source + ": " + std::to_string(bytes.size() - expected) +
                          " unexpected trailing bytes from offset " +
                          std::to_string(expected),
                      expected);
  }
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kProbe: return "probe";
  }
  return "?";
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kMnist: return "mnist";
    case DatasetKind::kCifar10: return "cifar10";
    case DatasetKind::kCifar100: return "cifar100";
  }
  return "?";
}

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "mnist") return DatasetKind::kMnist;
  if (name == "cifar10") return DatasetKind::kCifar10;
  if (name == "cifar100") return DatasetKind::kCifar100;
  throw ParameterError("unknown dataset \"" + name +
                       "\" (expected mnist, cifar10 or cifar100)");
}

Normalization default_normalization(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kMnist:
      return {{0.1307f}, {0.3081f}};
    case DatasetKind::kCifar10:
      return {{0.4914f, 0.4822f, 0.4465f}, {0.2470f, 0.2435f, 0.2616f}};
    case DatasetKind::kCifar100:
      return {{0.5071f, 0.4865f, 0.4409f}, {0.2673f, 0.2564f, 0.2762f}};
  }
  throw ParameterError("unknown dataset kind");
}

void validate(const LabeledDataset& dataset) {
  if (dataset.images.rank() != 4) {
    throw ContractError("dataset images must be [n x c x h x w], got " +
                        shape_string(dataset.images.shape()));
  }
  if (dataset.images.dim(0) != dataset.labels.size()) {
    throw ContractError("dataset has " + std::to_string(dataset.images.dim(0)) +
                        " images but " + std::to_string(dataset.labels.size()) +
                        " labels");
  }
  for (const auto label : dataset.labels) {
    const bool ok = dataset.is_probe()
                        ? label == kProbeLabel
                        : label >= 0 && static_cast<std::size_t>(label) <
                                            dataset.num_classes;
    if (!ok) {
      throw ContractError("label " + std::to_string(label) +
                          " out of range for " +
                          std::to_string(dataset.num_classes) + " classes");
    }
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw IoError("no such file: " + path.string());
  }
  // gzread passes non-gzip files through unchanged.
  std::unique_ptr<gzFile_s, int (*)(gzFile)> file(
      gzopen(path.string().c_str(), "rb"), &gzclose);
  if (!file) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  std::uint8_t chunk[1 << 16];
  for (;;) {
    const int n = gzread(file.get(), chunk, sizeof chunk);
    if (n < 0) {
      int errnum = 0;
      const char* msg = gzerror(file.get(), &errnum);
      throw IoError(path.string() + ": " + (msg ? msg : "read error") +
                    " after " + std::to_string(bytes.size()) + " bytes");
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), chunk, chunk + n);
  }
  return bytes;
}

LabeledDataset parse_mnist_idx(std::span<const std::uint8_t> image_bytes,
                               std::span<const std::uint8_t> label_bytes,
                               Split split, std::string source) {
  const std::string image_src = source + " (images)";
  const std::string label_src = source + " (labels)";
  check_magic(read_be32(image_bytes, 0, image_src, "magic"), kIdxImageMagic,
              image_src);
  check_magic(read_be32(label_bytes, 0, label_src, "magic"), kIdxLabelMagic,
              label_src);
  const std::size_t n = read_be32(image_bytes, 4, image_src, "item count");
  const std::size_t rows = read_be32(image_bytes, 8, image_src, "row count");
  const std::size_t cols = read_be32(image_bytes, 12, image_src, "column count");
  const std::size_t n_labels = read_be32(label_bytes, 4, label_src, "item count");
  check_payload(image_bytes, 16, n * rows * cols, image_src);
  check_payload(label_bytes, 8, n_labels, label_src);
  if (n != n_labels) {
    throw FormatError(source + ": " + std::to_string(n) + " images but " +
                          std::to_string(n_labels) + " labels",
                      4);
  }

  LabeledDataset out;
  out.num_classes = 10;
  out.split = split;
  out.source = "idx:" + source;
  std::vector<float> pixels(image_bytes.begin() + 16, image_bytes.end());
  out.images = Tensor<float>({n, 1, rows, cols}, std::move(pixels));
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = label_bytes[8 + i];
    if (label >= 10) {
      throw FormatError(label_src + ": label " + std::to_string(label) +
                            " at offset " + std::to_string(8 + i) +
                            " is not a digit",
                        8 + i);
    }
    out.labels.push_back(label);
  }
  return out;
}

LabeledDataset load_mnist_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path,
                              Split split) {
  const auto images = read_file_bytes(images_path);
  const auto labels = read_file_bytes(labels_path);
  return parse_mnist_idx(images, labels, split, images_path.string());
}

LabeledDataset parse_cifar_binary(std::span<const std::uint8_t> bytes,
                                  CifarVariant variant, Split split,
                                  std::string source) {
  const std::size_t label_bytes = variant == CifarVariant::kCifar10 ? 1 : 2;
  const std::size_t record = label_bytes + kCifarPixels;
  if (bytes.size() % record != 0) {
    const std::size_t whole = bytes.size() / record * record;
    throw LengthError(source + ": length " + std::to_string(bytes.size()) +
                          " is not a multiple of the " +
                          std::to_string(record) +
                          "-byte record; partial record starts at byte " +
                          std::to_string(whole),
                      whole);
  }
  const std::size_t n = bytes.size() / record;
  LabeledDataset out;
  out.num_classes = variant == CifarVariant::kCifar10 ? 10 : 100;
  out.split = split;
  out.source = "cifar:" + source;
  std::vector<float> pixels(n * kCifarPixels);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    const std::uint8_t label = rec[label_bytes - 1];
    if (label >= out.num_classes) {
      throw FormatError(source + ": label " + std::to_string(label) +
                            " out of range at byte " +
                            std::to_string(i * record + label_bytes - 1),
                        i * record + label_bytes - 1);
    }
    out.labels.push_back(label);
    std::copy_n(rec + label_bytes, kCifarPixels,
                pixels.begin() + static_cast<std::ptrdiff_t>(i * kCifarPixels));
  }
  out.images = Tensor<float>({n, 3, 32, 32}, std::move(pixels));
  return out;
}

LabeledDataset load_cifar_binary(std::span<const std::filesystem::path> paths,
                                 CifarVariant variant, Split split) {
  if (paths.empty()) throw ParameterError("load_cifar_binary: no input files");
  std::vector<LabeledDataset> parts;
  std::size_t total = 0;
  for (const auto& path : paths) {
    parts.push_back(
        parse_cifar_binary(read_file_bytes(path), variant, split, path.string()));
    total += parts.back().size();
  }
  LabeledDataset out;
  out.num_classes = parts.front().num_classes;
  out.split = split;
  out.source = parts.front().source;
  for (std::size_t i = 1; i < parts.size(); ++i) out.source += "+" + paths[i].string();
  std::vector<float> pixels;
  pixels.reserve(total * kCifarPixels);
  for (const auto& part : parts) {
    pixels.insert(pixels.end(), part.images.data().begin(),
                  part.images.data().end());
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
  }
  out.images = Tensor<float>({total, 3, 32, 32}, std::move(pixels));
  return out;
}

std::vector<std::filesystem::path> dataset_files(DatasetKind kind,
                                                 const std::filesystem::path& dir,
                                                 Split split) {
  if (split == Split::kProbe) throw ParameterError("probe split has no files");
  const bool train = split == Split::kTrain;
  std::vector<std::string> names;
  switch (kind) {
    case DatasetKind::kMnist:
      names = train ? std::vector<std::string>{"train-images-idx3-ubyte",
                                               "train-labels-idx1-ubyte"}
                    : std::vector<std::string>{"t10k-images-idx3-ubyte",
                                               "t10k-labels-idx1-ubyte"};
      break;
    case DatasetKind::kCifar10:
      if (train) {
        for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
      } else {
        names = {"test_batch.bin"};
      }
      break;
    case DatasetKind::kCifar100:
      names = {train ? "train.bin" : "test.bin"};
      break;
  }
  std::vector<std::filesystem::path> paths;
  for (const auto& name : names) {
    auto path = dir / name;
    if (!std::filesystem::exists(path)) {
      auto gz = path;
      gz += ".gz";
      if (!std::filesystem::exists(gz)) {
        throw IoError("missing " + to_string(kind) + " " + to_string(split) +
                      " file: " + path.string() + " (or .gz)");
      }
      path = gz;
    }
    paths.push_back(path);
  }
  return paths;
}

LabeledDataset load_dataset(DatasetKind kind, const std::filesystem::path& dir,
                            Split split) {
  const auto paths = dataset_files(kind, dir, split);
  LabeledDataset raw;
  if (kind == DatasetKind::kMnist) {
    raw = load_mnist_idx(paths[0], paths[1], split);
  } else {
    raw = load_cifar_binary(paths,
                            kind == DatasetKind::kCifar10 ? CifarVariant::kCifar10
                                                          : CifarVariant::kCifar100,
                            split);
  }
  return normalize(raw, default_normalization(kind));
}

LabeledDataset normalize(const LabeledDataset& dataset,
                         const Normalization& normalization) {
  if (dataset.normalization) {
    throw ContractError("normalize: dataset is already normalized");
  }
  const std::size_t channels = dataset.channels();
  if (normalization.mean.size() != channels ||
      normalization.std.size() != channels) {
    throw ParameterError("normalize: need " + std::to_string(channels) +
                         " per-channel constants");
  }
  for (const float s : normalization.std) {
    if (!(s > 0.0f)) throw ParameterError("normalize: std must be > 0");
  }
  LabeledDataset out = dataset;
  std::vector<float> pixels(dataset.images.data().begin(),
                            dataset.images.data().end());
  const std::size_t plane = dataset.height() * dataset.width();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const std::size_t c = (i / plane) % channels;
    pixels[i] = (pixels[i] / 255.0f - normalization.mean[c]) / normalization.std[c];
  }
  out.images = Tensor<float>(dataset.images.shape(), std::move(pixels));
  out.normalization = normalization;
  return out;
}

LabeledDataset denormalize(const LabeledDataset& dataset) {
  if (!dataset.normalization) return dataset;
  const auto& norm = *dataset.normalization;
  LabeledDataset out = dataset;
  std::vector<float> pixels(dataset.images.data().begin(),
                            dataset.images.data().end());
  const std::size_t channels = dataset.channels();
  const std::size_t plane = dataset.height() * dataset.width();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const std::size_t c = (i / plane) % channels;
    pixels[i] = (pixels[i] * norm.std[c] + norm.mean[c]) * 255.0f;
  }
  out.images = Tensor<float>(dataset.images.shape(), std::move(pixels));
  out.normalization.reset();
  return out;
}

LabeledDataset make_zeros_probe(
    std::size_t n, std::size_t channels, std::size_t height, std::size_t width,
    const std::optional<Normalization>& normalization) {
  if (n == 0) throw ParameterError("make_zeros_probe: n must be > 0");
  LabeledDataset raw;
  raw.images = Tensor<float>::zeros({n, channels, height, width});
  raw.labels.assign(n, kProbeLabel);
  raw.num_classes = 0;
  raw.split = Split::kProbe;
  raw.source = "zeros-probe";
  if (!normalization) return raw;
  return normalize(raw, *normalization);
}

LabeledDataset take_prefix(const LabeledDataset& dataset, std::size_t n) {
  if (n == 0 || n >= dataset.size()) return dataset;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto out = select(dataset, idx);
  out.source = dataset.source + "[:" + std::to_string(n) + "]";
  return out;
}

LabeledDataset select(const LabeledDataset& dataset,
                      std::span<const std::size_t> indices) {
  LabeledDataset out;
  Batch batch = gather_batch(dataset, indices);
  out.images = std::move(batch.images);
  out.labels = std::move(batch.labels);
  out.num_classes = dataset.num_classes;
  out.split = dataset.split;
  out.source = dataset.source;
  out.normalization = dataset.normalization;
  return out;
}

std::vector<double> make_synthetic_scalar_dataset(ScalarDistribution dist,
                                                  std::size_t n,
                                                  std::uint64_t seed) {
  if (n == 0) throw ParameterError("synthetic dataset: n must be > 0");
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) {
    switch (dist) {
      case ScalarDistribution::kUniform:
        v = rng.uniform();
        break;
      case ScalarDistribution::kGaussian:
        v = rng.normal();
        break;
      case ScalarDistribution::kBimodal: {
        const double centre = rng.uniform() < 0.5 ? -2.0 : 2.0;
        v = rng.normal(centre, 0.5);
        break;
      }
    }
  }
  return out;
}

Batch gather_batch(const LabeledDataset& dataset,
                   std::span<const std::size_t> indices) {
  const std::size_t per = dataset.image_numel();
  std::vector<float> pixels(indices.size() * per);
  Batch batch;
  batch.labels.reserve(indices.size());
  const auto src = dataset.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= dataset.size()) {
      throw ContractError("example index " + std::to_string(indices[i]) +
                          " out of range for dataset of size " +
                          std::to_string(dataset.size()));
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                pixels.begin() + static_cast<std::ptrdiff_t>(i * per));
    batch.labels.push_back(dataset.labels[indices[i]]);
  }
  batch.images = Tensor<float>(
      {indices.size(), dataset.channels(), dataset.height(), dataset.width()},
      std::move(pixels));
  batch.indices.assign(indices.begin(), indices.end());
  return batch;
}

BatchIterator::BatchIterator(const LabeledDataset& dataset,
                             std::size_t batch_size, std::uint64_t seed,
                             bool drop_last, bool shuffle)
    : dataset_(&dataset),
      batch_size_(batch_size),
      drop_last_(drop_last),
      shuffle_(shuffle),
      rng_(seed) {
  if (batch_size == 0) throw ParameterError("batch size must be >= 1");
  order_.resize(dataset.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  cursor_ = order_.size();
}

void BatchIterator::start_epoch() {
  if (shuffle_) {
    order_ = rng_.permutation(dataset_->size());
  }
  cursor_ = 0;
}

std::size_t BatchIterator::batches_per_epoch() const {
  const std::size_t n = order_.size();
  return drop_last_ ? n / batch_size_ : (n + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
  const std::size_t remaining = order_.size() - cursor_;
  if (remaining == 0 || (drop_last_ && remaining < batch_size_)) {
    return std::nullopt;
  }
  const std::size_t take = std::min(batch_size_, remaining);
  std::span<const std::size_t> idx(order_.data() + cursor_, take);
  cursor_ += take;
  return gather_batch(*dataset_, idx);
}

}  // namespace lqiq
