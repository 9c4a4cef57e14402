#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <utility>
#include <vector>

#include "privleak/rng.hpp"
#include "privleak/tensor.hpp"

namespace privleak {

inline constexpr int kClasses = 10;
inline constexpr Index kImageSide = 32;

enum class Split { train, test, shadow_in, shadow_out };
enum class Source { mnist, cifar10 };

std::string_view to_string(Split split);
std::string_view to_string(Source source);
Source source_from_string(std::string_view name);

struct LabeledDataset {
  Tensor<float> images;  // [N, 32, 32, channels], values in [0,1]
  std::vector<int> labels;
  Split split = Split::train;
  Source source = Source::mnist;
  /// Row index of each example in the split it was derived from.
  std::vector<Index> origin;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index channels() const { return images.dim(3); }

  /// Throws FormatError when sizes, label range or pixel range are off.
  void validate() const;
};

/// Examples at `indices` (in that order); origin entries are carried over.
LabeledDataset subset(const LabeledDataset& data, const std::vector<Index>& indices);
/// The first `count` examples, or all when count is 0 or exceeds the size.
LabeledDataset head(const LabeledDataset& data, Index count);
std::array<Index, kClasses> class_counts(const LabeledDataset& data);

struct AttackRecord {
  std::array<float, kClasses> probs{};
  int member = 0;
};

/// Parses the four standard IDX files (train-images-idx3-ubyte, ...).
/// Images are scaled by 1/255 and zero-padded to 32x32 about the centre.
std::pair<LabeledDataset, LabeledDataset> load_mnist(const std::filesystem::path& dir);

/// Parses data_batch_1..5.bin and test_batch.bin (3073-byte records).
std::pair<LabeledDataset, LabeledDataset> load_cifar10(const std::filesystem::path& dir);

std::pair<LabeledDataset, LabeledDataset> load_dataset(Source source, const std::filesystem::path& dir);

/// Single-file parsers, exposed for fixtures.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
Tensor<float> parse_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& name);
std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& bytes, const std::string& name);
void parse_cifar_batch(const std::vector<std::uint8_t>& bytes, const std::string& name, std::vector<float>& pixels,
                       std::vector<int>& labels);

/// Bilinear resize of an [H, W, C] image to [out_h, out_w, C], sampling at
/// pixel centres.
Tensor<float> resize_bilinear(const Tensor<float>& image, Index out_h, Index out_w);

/// Random resize by u ~ U[1, 1.25], crop back to H x W at a random offset,
/// horizontal flip with probability 1/2, intensity scale v ~ U[0.9, 1.1],
/// clamp to [0,1]. If the result equals the input the draw is repeated once
/// (constant images are fixed points, so one repeat is all that is tried).
Tensor<float> shadow_transform(const Tensor<float>& image, Rng& rng);

/// Transforms every example, then splits each class in half at random.
/// Odd class sizes alternate which side receives the extra example.
std::pair<LabeledDataset, LabeledDataset> build_shadow_datasets(const LabeledDataset& source, Rng& rng);

/// Keeps min(#members, #non-members) of each, in shuffled order.
std::vector<AttackRecord> balanced_subsample(const std::vector<AttackRecord>& records, Rng& rng);

}  // namespace privleak
