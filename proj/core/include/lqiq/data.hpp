#ifndef LQIQ_DATA_HPP_
#define LQIQ_DATA_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lqiq/rng.hpp"
#include "lqiq/tensor.hpp"

namespace lqiq {

enum class Split { kTrain, kTest, kProbe };
enum class DatasetKind { kMnist, kCifar10, kCifar100 };

std::string to_string(Split split);
std::string to_string(DatasetKind kind);
// Accepts "mnist", "cifar10", "cifar100". Throws ParameterError otherwise.
DatasetKind parse_dataset_kind(const std::string& name);

// Label carried by zeros-probe images; never a valid class.
inline constexpr std::int64_t kProbeLabel = -1;

// Per-channel affine map applied as (pixel / 255 - mean) / std.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> std;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

Normalization default_normalization(DatasetKind kind);

struct LabeledDataset {
  Tensor<float> images;  // [n x c x h x w]
  std::vector<std::int64_t> labels;
  std::size_t num_classes = 0;
  Split split = Split::kTrain;
  std::string source;
  // Absent while pixels are still raw 0..255 byte values.
  std::optional<Normalization> normalization;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t image_numel() const { return channels() * height() * width(); }
  bool is_probe() const { return split == Split::kProbe; }
};

// Throws ContractError when a dataset invariant is broken.
void validate(const LabeledDataset& dataset);

// Whole-file read. Gzip input is detected and decompressed transparently.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// IDX (big-endian) parsing. Images must carry magic 0x00000803, labels
// 0x00000801.
LabeledDataset parse_mnist_idx(std::span<const std::uint8_t> image_bytes,
                               std::span<const std::uint8_t> label_bytes,
                               Split split, std::string source);
LabeledDataset load_mnist_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path,
                              Split split = Split::kTrain);

enum class CifarVariant { kCifar10, kCifar100 };

// CIFAR binary records: CIFAR-10 is label + 3072 pixels, CIFAR-100 is
// coarse + fine + 3072 pixels (the fine label is used). Pixels are stored
// channel-major: 1024 red, then green, then blue.
LabeledDataset parse_cifar_binary(std::span<const std::uint8_t> bytes,
                                  CifarVariant variant, Split split,
                                  std::string source);
LabeledDataset load_cifar_binary(std::span<const std::filesystem::path> paths,
                                 CifarVariant variant,
                                 Split split = Split::kTrain);

// Files of a split in the usual distribution layout under `dir`:
//   mnist     train-images-idx3-ubyte / train-labels-idx1-ubyte (t10k-* for test)
//   cifar10   data_batch_1.bin .. data_batch_5.bin, test_batch.bin
//   cifar100  train.bin, test.bin
// A missing file is also looked up with a ".gz" suffix. Throws IoError naming
// the first path that cannot be found.
std::vector<std::filesystem::path> dataset_files(DatasetKind kind,
                                                 const std::filesystem::path& dir,
                                                 Split split);
// Loads a split from `dir` and applies default_normalization(kind).
LabeledDataset load_dataset(DatasetKind kind, const std::filesystem::path& dir,
                            Split split);

// pixel <- (pixel / 255 - mean) / std per channel. The input must be raw.
LabeledDataset normalize(const LabeledDataset& dataset,
                         const Normalization& normalization);
// Inverse of normalize; returns raw-scale pixels.
LabeledDataset denormalize(const LabeledDataset& dataset);

// n all-black images labelled kProbeLabel, normalized like real data when
// `normalization` is given.
LabeledDataset make_zeros_probe(std::size_t n, std::size_t channels,
                                std::size_t height, std::size_t width,
                                const std::optional<Normalization>& normalization);

// First `n` examples (or all of them when n is 0 or exceeds the size).
LabeledDataset take_prefix(const LabeledDataset& dataset, std::size_t n);
LabeledDataset select(const LabeledDataset& dataset,
                      std::span<const std::size_t> indices);

enum class ScalarDistribution { kUniform, kGaussian, kBimodal };

// iid scalar draws for quantile-convergence checks:
//   uniform   U(0, 1)
//   gaussian  N(0, 1)
//   bimodal   equal mixture of N(-2, 0.25) and N(2, 0.25) (variance 0.25)
std::vector<double> make_synthetic_scalar_dataset(ScalarDistribution dist,
                                                  std::size_t n,
                                                  std::uint64_t seed);

struct Batch {
  Tensor<float> images;
  std::vector<std::int64_t> labels;
  std::vector<std::size_t> indices;  // positions in the source dataset
};

Batch gather_batch(const LabeledDataset& dataset,
                   std::span<const std::size_t> indices);

// Seeded shuffled mini-batches. Each start_epoch() draws the next
// permutation from the iterator's own stream, so identical seeds give
// identical visitation orders epoch after epoch.
class BatchIterator {
 public:
  BatchIterator(const LabeledDataset& dataset, std::size_t batch_size,
                std::uint64_t seed, bool drop_last = false,
                bool shuffle = true);

  void start_epoch();
  std::optional<Batch> next();

  std::size_t batch_size() const { return batch_size_; }
  std::size_t batches_per_epoch() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const LabeledDataset* dataset_;
  std::size_t batch_size_;
  bool drop_last_;
  bool shuffle_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace lqiq

#endif  // LQIQ_DATA_HPP_
