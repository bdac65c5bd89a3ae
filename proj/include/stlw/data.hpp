#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stlw/tensor.hpp"

namespace stlw {

/// Labeled, already-encoded samples stored sample-major as [n, T, N, d_in].
struct Dataset {
  Index time_steps = 0;
  Index patches = 0;
  Index features = 0;
  int num_classes = 0;
  std::vector<int> labels;
  ArrayX<float> samples;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index sample_len() const { return time_steps * patches * features; }

  /// Gathers samples into the time-major layout [T, B, N, d_in].
  Tensor<float> batch(std::span<const Index> indices) const;
  std::vector<int> batch_labels(std::span<const Index> indices) const;
  /// All samples in order.
  Tensor<float> all() const;
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Class k is defined by a distinct subset of `active_patches` patches whose
/// features spike with probability r_high; all other positions use r_low.
struct SynthSpec {
  int classes = 4;
  int patches = 16;
  int features = 16;
  int time_steps = 4;
  int active_patches = 4;
  int train_size = 256;
  int test_size = 512;
  double r_high = 0.8;
  double r_low = 0.05;

  void validate() const;
};

DataSplit synth_dataset(const SynthSpec& spec, std::uint64_t seed);

/// The patch subsets the synthetic generator uses, one per class.
std::vector<std::vector<int>> synth_class_patches(const SynthSpec& spec, std::uint64_t seed);

enum class Encoding { rate, direct };
Encoding parse_encoding(const std::string& text);
std::string to_string(Encoding e);

/// Grayscale images in [0, 1], one row per image.
struct RawImages {
  Index rows = 0;
  Index cols = 0;
  std::vector<int> labels;
  std::vector<float> pixels;  // n * rows * cols
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
RawImages read_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Reads "label,p0,p1,..." rows with pixels as 0..255 integers.
RawImages read_image_csv(const std::filesystem::path& path, Index rows, Index cols);

/// Splits each image into square patches of side `patch` (row-major patch
/// order, pixels row-major within a patch) and encodes intensities over T
/// steps: rate = Bernoulli(intensity) per step, direct = repeated frame.
Dataset encode_images(const RawImages& images, int patch, Encoding encoding, int time_steps, std::uint64_t seed);

/// read_idx + encode_images.
Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels, int patch,
                        Encoding encoding, int time_steps, std::uint64_t seed);

}  // namespace stlw
