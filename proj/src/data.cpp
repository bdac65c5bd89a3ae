#include "stlw/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace stlw {

Tensor<float> Dataset::batch(std::span<const Index> indices) const {
  const Index b = static_cast<Index>(indices.size());
  const Index step = patches * features;
  ArrayX<float> out(time_steps * b * step);
  for (Index j = 0; j < b; ++j) {
    const Index i = indices[static_cast<std::size_t>(j)];
    if (i < 0 || i >= size()) throw DimensionError("batch index out of range");
    for (Index t = 0; t < time_steps; ++t)
      out.segment((t * b + j) * step, step) = samples.segment(i * sample_len() + t * step, step);
  }
  return Tensor<float>(Shape{time_steps, b, patches, features}, std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const Index> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

Tensor<float> Dataset::all() const {
  std::vector<Index> idx(static_cast<std::size_t>(size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  return batch(idx);
}

void SynthSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least two classes");
  if (patches < 1 || features < 1 || time_steps < 1) throw ConfigError("patches, features, T must be >= 1");
  if (active_patches < 1 || active_patches >= patches) throw ConfigError("active_patches must be in [1, patches)");
  if (train_size < classes || test_size < 1) throw ConfigError("dataset sizes too small");
  if (!(r_high > r_low)) throw ConfigError("r_high must exceed r_low");
  if (r_low < 0.0 || r_high > 1.0) throw ConfigError("rates must lie in [0, 1]");
  // Number of distinct subsets must cover the classes.
  double subsets = 1.0;
  for (int i = 0; i < active_patches; ++i) subsets = subsets * (patches - i) / (i + 1);
  if (subsets < classes) throw ConfigError("not enough distinct patch subsets for the class count");
}

std::vector<std::vector<int>> synth_class_patches(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> out;
  std::vector<int> order(static_cast<std::size_t>(spec.patches));
  while (static_cast<int>(out.size()) < spec.classes) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> subset(order.begin(), order.begin() + spec.active_patches);
    std::sort(subset.begin(), subset.end());
    if (seen.insert(subset).second) out.push_back(std::move(subset));
  }
  return out;
}

namespace {

Dataset synth_split(const SynthSpec& spec, const std::vector<std::vector<int>>& groups, int n, std::mt19937_64& rng) {
  Dataset d;
  d.time_steps = spec.time_steps;
  d.patches = spec.patches;
  d.features = spec.features;
  d.num_classes = spec.classes;
  d.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) d.labels[static_cast<std::size_t>(i)] = i % spec.classes;
  std::shuffle(d.labels.begin(), d.labels.end(), rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  d.samples.resize(n * d.sample_len());
  Index pos = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<bool> active(static_cast<std::size_t>(spec.patches), false);
    for (int p : groups[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])])
      active[static_cast<std::size_t>(p)] = true;
    for (int t = 0; t < spec.time_steps; ++t)
      for (int p = 0; p < spec.patches; ++p) {
        const double rate = active[static_cast<std::size_t>(p)] ? spec.r_high : spec.r_low;
        for (int f = 0; f < spec.features; ++f) d.samples[pos++] = unit(rng) < rate ? 1.0f : 0.0f;
      }
  }
  return d;
}

std::uint32_t read_be32(std::istream& in, std::size_t offset, const std::string& file) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(file + ": truncated header at byte offset " + std::to_string(offset));
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

}  // namespace

DataSplit synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  const auto groups = synth_class_patches(spec, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  DataSplit split;
  split.train = synth_split(spec, groups, spec.train_size, rng);
  split.test = synth_split(spec, groups, spec.test_size, rng);
  return split;
}

Encoding parse_encoding(const std::string& text) {
  if (text == "rate") return Encoding::rate;
  if (text == "direct") return Encoding::direct;
  throw ConfigError("unknown encoding '" + text + "' (expected rate or direct)");
}

std::string to_string(Encoding e) { return e == Encoding::rate ? "rate" : "direct"; }

RawImages read_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  RawImages out;
  {
    const std::string name = images.string();
    std::ifstream in(images, std::ios::binary);
    if (!in) throw FormatError(name + ": cannot open");
    const std::uint32_t magic = read_be32(in, 0, name);
    if (magic != 0x00000803)
      throw FormatError(name + ": bad image magic at byte offset 0 (expected 0x00000803)");
    const std::uint32_t n = read_be32(in, 4, name);
    out.rows = read_be32(in, 8, name);
    out.cols = read_be32(in, 12, name);
    const std::size_t count = static_cast<std::size_t>(n) * out.rows * out.cols;
    std::vector<unsigned char> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count)
      throw FormatError(name + ": truncated pixel data at byte offset " + std::to_string(16 + in.gcount()));
    out.pixels.resize(count);
    for (std::size_t i = 0; i < count; ++i) out.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  }
  {
    const std::string name = labels.string();
    std::ifstream in(labels, std::ios::binary);
    if (!in) throw FormatError(name + ": cannot open");
    const std::uint32_t magic = read_be32(in, 0, name);
    if (magic != 0x00000801)
      throw FormatError(name + ": bad label magic at byte offset 0 (expected 0x00000801)");
    const std::uint32_t n = read_be32(in, 4, name);
    const std::size_t expected = out.pixels.size() / static_cast<std::size_t>(std::max<Index>(out.rows * out.cols, 1));
    if (n != expected)
      throw FormatError(name + ": label count " + std::to_string(n) + " at byte offset 4 does not match " +
                        std::to_string(expected) + " images");
    std::vector<unsigned char> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), n);
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw FormatError(name + ": truncated label data at byte offset " + std::to_string(8 + in.gcount()));
    out.labels.assign(raw.begin(), raw.end());
  }
  return out;
}

RawImages read_image_csv(const std::filesystem::path& path, Index rows, Index cols) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  RawImages out;
  out.rows = rows;
  out.cols = cols;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<int> values;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stoi(cell));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": non-integer cell on line " + std::to_string(line_no));
      }
    }
    if (static_cast<Index>(values.size()) != 1 + rows * cols)
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + " has " +
                        std::to_string(values.size()) + " cells, expected " + std::to_string(1 + rows * cols));
    out.labels.push_back(values[0]);
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (values[i] < 0 || values[i] > 255)
        throw FormatError(path.string() + ": pixel out of range on line " + std::to_string(line_no));
      out.pixels.push_back(static_cast<float>(values[i]) / 255.0f);
    }
  }
  return out;
}

Dataset encode_images(const RawImages& images, int patch, Encoding encoding, int time_steps, std::uint64_t seed) {
  if (patch < 1 || images.rows % patch != 0 || images.cols % patch != 0)
    throw ConfigError("patch size must divide the image extents");
  if (time_steps < 1) throw ConfigError("T must be >= 1");
  Dataset d;
  d.time_steps = time_steps;
  d.patches = (images.rows / patch) * (images.cols / patch);
  d.features = static_cast<Index>(patch) * patch;
  d.labels = images.labels;
  for (int y : d.labels)
    if (y < 0) throw FormatError("negative label");
  d.num_classes = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;

  const Index n = d.size();
  const Index step = d.patches * d.features;
  // Patchified frame per image.
  ArrayX<float> frames(n * step);
  const Index grid_cols = images.cols / patch;
  for (Index i = 0; i < n; ++i)
    for (Index r = 0; r < images.rows; ++r)
      for (Index c = 0; c < images.cols; ++c) {
        const Index p = (r / patch) * grid_cols + c / patch;
        const Index f = (r % patch) * patch + c % patch;
        frames[i * step + p * d.features + f] =
            images.pixels[static_cast<std::size_t>((i * images.rows + r) * images.cols + c)];
      }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  d.samples.resize(n * d.sample_len());
  for (Index i = 0; i < n; ++i)
    for (Index t = 0; t < time_steps; ++t) {
      auto dst = d.samples.segment(i * d.sample_len() + t * step, step);
      const auto src = frames.segment(i * step, step);
      if (encoding == Encoding::direct) {
        dst = src;
      } else {
        for (Index k = 0; k < step; ++k) dst[k] = unit(rng) < src[k] ? 1.0f : 0.0f;
      }
    }
  return d;
}

Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels, int patch,
                        Encoding encoding, int time_steps, std::uint64_t seed) {
  return encode_images(read_idx(images, labels), patch, encoding, time_steps, seed);
}

}  // namespace stlw
