#include "privleak/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

namespace privleak {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr std::size_t kCifarRecord = 1 + 3 * 1024;

std::string hex(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) out += digits[(v >> shift) & 0xf];
  return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void check_idx_header(const std::vector<std::uint8_t>& bytes, const std::string& name, std::uint32_t magic,
                      std::size_t header) {
  if (bytes.size() >= 4 && be32(bytes, 0) != magic)
    throw FormatError(name + ": bad IDX magic " + hex(be32(bytes, 0)) + ", expected " + hex(magic));
  if (bytes.size() < header)
    throw FormatError(name + ": truncated IDX header (" + std::to_string(bytes.size()) + " of " +
                      std::to_string(header) + " bytes)");
}

void check_payload(const std::vector<std::uint8_t>& bytes, const std::string& name, std::size_t header,
                   std::size_t payload) {
  const std::size_t want = header + payload;
  if (bytes.size() < want)
    throw FormatError(name + ": truncated at byte " + std::to_string(bytes.size()) + ", header promises " +
                      std::to_string(want) + " bytes");
  if (bytes.size() > want)
    throw FormatError(name + ": " + std::to_string(bytes.size() - want) + " trailing bytes after byte " +
                      std::to_string(want));
}

LabeledDataset make_dataset(Tensor<float> images, std::vector<int> labels, Split split, Source source) {
  LabeledDataset d;
  d.images = std::move(images);
  d.labels = std::move(labels);
  d.split = split;
  d.source = source;
  d.origin.resize(d.labels.size());
  std::iota(d.origin.begin(), d.origin.end(), Index{0});
  d.validate();
  return d;
}

LabeledDataset mnist_split(const std::filesystem::path& dir, const char* images, const char* labels, Split split) {
  const auto img_path = dir / images, lbl_path = dir / labels;
  auto x = parse_idx_images(read_file(img_path), img_path.string());
  auto y = parse_idx_labels(read_file(lbl_path), lbl_path.string());
  if (x.dim(0) != static_cast<Index>(y.size()))
    throw FormatError(img_path.string() + " holds " + std::to_string(x.dim(0)) + " images but " +
                      lbl_path.string() + " holds " + std::to_string(y.size()) + " labels");
  return make_dataset(std::move(x), std::move(y), split, Source::mnist);
}

LabeledDataset cifar_split(const std::filesystem::path& dir, const std::vector<std::string>& files, Split split) {
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& f : files) parse_cifar_batch(read_file(dir / f), (dir / f).string(), pixels, labels);
  const auto n = static_cast<Index>(labels.size());
  Tensor<float> images({n, kImageSide, kImageSide, 3},
                       Eigen::Map<const Vec<float>>(pixels.data(), static_cast<Index>(pixels.size())));
  return make_dataset(std::move(images), std::move(labels), split, Source::cifar10);
}

Tensor<float> transform_once(const Tensor<float>& image, Rng& rng) {
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  std::uniform_real_distribution<double> scale(1.0, 1.25), gain(0.9, 1.1);
  std::bernoulli_distribution flip(0.5);

  const double u = scale(rng);
  const Index rh = std::max(h, static_cast<Index>(std::lround(h * u)));
  const Index rw = std::max(w, static_cast<Index>(std::lround(w * u)));
  const Tensor<float> big = resize_bilinear(image, rh, rw);
  const Index y0 = std::uniform_int_distribution<Index>(0, rh - h)(rng);
  const Index x0 = std::uniform_int_distribution<Index>(0, rw - w)(rng);
  const bool mirror = flip(rng);
  const auto v = static_cast<float>(gain(rng));

  Tensor<float> out({h, w, c});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const Index sx = x0 + (mirror ? w - 1 - x : x);
      for (Index ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = std::clamp(big[((y0 + y) * rw + sx) * c + ch] * v, 0.0f, 1.0f);
    }
  return out;
}

LabeledDataset split_part(const LabeledDataset& transformed, std::vector<Index> rows, Split split) {
  std::sort(rows.begin(), rows.end());
  LabeledDataset part = subset(transformed, rows);
  part.split = split;
  return part;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::shadow_in: return "shadow_in";
    case Split::shadow_out: return "shadow_out";
  }
  return "?";
}

std::string_view to_string(Source source) { return source == Source::mnist ? "mnist" : "cifar10"; }

Source source_from_string(std::string_view name) {
  if (name == "mnist") return Source::mnist;
  if (name == "cifar10") return Source::cifar10;
  throw ConfigError("unknown dataset '" + std::string(name) + "' (expected mnist or cifar10)");
}

void LabeledDataset::validate() const {
  if (images.rank() != 4 || images.dim(1) != kImageSide || images.dim(2) != kImageSide)
    throw FormatError("dataset images must be [N,32,32,C], got " + to_string(images.shape()));
  if (images.dim(0) != size())
    throw FormatError("dataset has " + std::to_string(images.dim(0)) + " images and " + std::to_string(size()) +
                      " labels");
  if (static_cast<Index>(origin.size()) != size()) throw FormatError("dataset origin table has the wrong length");
  for (int y : labels)
    if (y < 0 || y >= kClasses) throw FormatError("label " + std::to_string(y) + " outside [0,10)");
  if (images.size() > 0 && (images.data().minCoeff() < 0.0f || images.data().maxCoeff() > 1.0f))
    throw FormatError("pixel values outside [0,1]");
}

LabeledDataset subset(const LabeledDataset& data, const std::vector<Index>& indices) {
  LabeledDataset out;
  out.images = gather_rows(data.images, indices);
  out.split = data.split;
  out.source = data.source;
  out.labels.reserve(indices.size());
  out.origin.reserve(indices.size());
  for (Index i : indices) {
    out.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
    out.origin.push_back(data.origin[static_cast<std::size_t>(i)]);
  }
  return out;
}

LabeledDataset head(const LabeledDataset& data, Index count) {
  if (count <= 0 || count >= data.size()) return data;
  std::vector<Index> rows(static_cast<std::size_t>(count));
  std::iota(rows.begin(), rows.end(), Index{0});
  return subset(data, rows);
}

std::array<Index, kClasses> class_counts(const LabeledDataset& data) {
  std::array<Index, kClasses> counts{};
  for (int y : data.labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Tensor<float> parse_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  constexpr std::size_t header = 16;
  check_idx_header(bytes, name, kIdxImages, header);
  const std::size_t n = be32(bytes, 4), rows = be32(bytes, 8), cols = be32(bytes, 12);
  if (rows == 0 || cols == 0 || rows > static_cast<std::size_t>(kImageSide) ||
      cols > static_cast<std::size_t>(kImageSide))
    throw FormatError(name + ": image size " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " does not fit 32x32");
  if (n > (bytes.size() - header) / (rows * cols))
    throw FormatError(name + ": truncated at byte " + std::to_string(bytes.size()) + ", header promises " +
                      std::to_string(n) + " images of " + std::to_string(rows) + "x" + std::to_string(cols));
  check_payload(bytes, name, header, n * rows * cols);

  const Index top = (kImageSide - static_cast<Index>(rows)) / 2;
  const Index left = (kImageSide - static_cast<Index>(cols)) / 2;
  Tensor<float> out({static_cast<Index>(n), kImageSide, kImageSide, 1});
  const std::uint8_t* src = bytes.data() + header;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out[(static_cast<Index>(i) * kImageSide + top + static_cast<Index>(r)) * kImageSide + left +
            static_cast<Index>(c)] = static_cast<float>(*src++) / 255.0f;
  return out;
}

std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  constexpr std::size_t header = 8;
  check_idx_header(bytes, name, kIdxLabels, header);
  const std::size_t n = be32(bytes, 4);
  check_payload(bytes, name, header, n);
  std::vector<int> labels(bytes.begin() + header, bytes.end());
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] >= kClasses)
      throw FormatError(name + ": label " + std::to_string(labels[i]) + " at byte " + std::to_string(header + i) +
                        " exceeds 9");
  return labels;
}

void parse_cifar_batch(const std::vector<std::uint8_t>& bytes, const std::string& name, std::vector<float>& pixels,
                       std::vector<int>& labels) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0)
    throw FormatError(name + ": size " + std::to_string(bytes.size()) + " is not a multiple of 3073; record " +
                      std::to_string(bytes.size() / kCifarRecord) + " is truncated at byte offset " +
                      std::to_string(bytes.size() / kCifarRecord * kCifarRecord));
  const std::size_t n = bytes.size() / kCifarRecord;
  const std::size_t plane = static_cast<std::size_t>(kImageSide * kImageSide);
  pixels.reserve(pixels.size() + n * 3 * plane);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] >= kClasses)
      throw FormatError(name + ": label " + std::to_string(rec[0]) + " at byte offset " +
                        std::to_string(r * kCifarRecord) + " exceeds 9");
    labels.push_back(rec[0]);
    // Planar R, G, B to interleaved HWC.
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t ch = 0; ch < 3; ++ch) pixels.push_back(static_cast<float>(rec[1 + ch * plane + p]) / 255.0f);
  }
}

std::pair<LabeledDataset, LabeledDataset> load_mnist(const std::filesystem::path& dir) {
  return {mnist_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::train),
          mnist_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::test)};
}

std::pair<LabeledDataset, LabeledDataset> load_cifar10(const std::filesystem::path& dir) {
  std::vector<std::string> train;
  for (int i = 1; i <= 5; ++i) train.push_back("data_batch_" + std::to_string(i) + ".bin");
  return {cifar_split(dir, train, Split::train), cifar_split(dir, {"test_batch.bin"}, Split::test)};
}

std::pair<LabeledDataset, LabeledDataset> load_dataset(Source source, const std::filesystem::path& dir) {
  return source == Source::mnist ? load_mnist(dir) : load_cifar10(dir);
}

Tensor<float> resize_bilinear(const Tensor<float>& image, Index out_h, Index out_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear expects an [H,W,C] image");
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor<float> out({out_h, out_w, c});
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  for (Index y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const Index y0 = static_cast<Index>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - y0;
    for (Index x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const Index x0 = static_cast<Index>(fx), x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - x0;
      for (Index ch = 0; ch < c; ++ch) {
        auto at = [&](Index yy, Index xx) { return static_cast<double>(image[(yy * w + xx) * c + ch]); };
        const double top = (1 - ax) * at(y0, x0) + ax * at(y0, x1);
        const double bottom = (1 - ax) * at(y1, x0) + ax * at(y1, x1);
        out[(y * out_w + x) * c + ch] = static_cast<float>((1 - ay) * top + ay * bottom);
      }
    }
  }
  return out;
}

Tensor<float> shadow_transform(const Tensor<float>& image, Rng& rng) {
  if (image.rank() != 3) throw ShapeError("shadow_transform expects an [H,W,C] image, got " + to_string(image.shape()));
  Tensor<float> out = transform_once(image, rng);
  if (out == image) out = transform_once(image, rng);
  return out;
}

std::pair<LabeledDataset, LabeledDataset> build_shadow_datasets(const LabeledDataset& source, Rng& rng) {
  const auto counts = class_counts(source);
  for (int k = 0; k < kClasses; ++k)
    if (counts[static_cast<std::size_t>(k)] < 2)
      throw ConfigError("class " + std::to_string(k) + " has " + std::to_string(counts[static_cast<std::size_t>(k)]) +
                        " examples; the shadow split needs at least 2 per class");

  LabeledDataset transformed = source;
  const Shape image_shape(source.images.shape().begin() + 1, source.images.shape().end());
  const Index row = source.images.row_size();
  for (Index i = 0; i < source.size(); ++i) {
    const Tensor<float> img(image_shape, source.images.data().segment(i * row, row));
    transformed.images.data().segment(i * row, row) = shadow_transform(img, rng).data();
  }

  std::array<std::vector<Index>, kClasses> by_class;
  for (Index i = 0; i < source.size(); ++i) by_class[static_cast<std::size_t>(source.labels[static_cast<std::size_t>(i)])].push_back(i);
  std::vector<Index> in_rows, out_rows;
  bool extra_to_in = true;
  for (auto& rows : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    std::size_t half = rows.size() / 2;
    if (rows.size() % 2 == 1) {
      if (extra_to_in) ++half;
      extra_to_in = !extra_to_in;
    }
    in_rows.insert(in_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(half));
    out_rows.insert(out_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(half), rows.end());
  }
  return {split_part(transformed, std::move(in_rows), Split::shadow_in),
          split_part(transformed, std::move(out_rows), Split::shadow_out)};
}

std::vector<AttackRecord> balanced_subsample(const std::vector<AttackRecord>& records, Rng& rng) {
  std::vector<std::size_t> members, others;
  for (std::size_t i = 0; i < records.size(); ++i) (records[i].member ? members : others).push_back(i);
  if (members.empty() || others.empty())
    throw ConfigError(std::string("balanced_subsample: no ") + (members.empty() ? "member" : "non-member") +
                      " records");
  const std::size_t keep = std::min(members.size(), others.size());
  std::shuffle(members.begin(), members.end(), rng);
  std::shuffle(others.begin(), others.end(), rng);
  std::vector<AttackRecord> out;
  out.reserve(2 * keep);
  for (std::size_t i = 0; i < keep; ++i) {
    out.push_back(records[members[i]]);
    out.push_back(records[others[i]]);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace privleak
