#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "privleak/data.hpp"

using namespace privleak;
namespace fs = std::filesystem;

namespace {

using Bytes = std::vector<std::uint8_t>;

void put_be32(Bytes& b, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) b.push_back(static_cast<std::uint8_t>(v >> shift));
}

// Two 2x2 images: the first all 0, the second {0, 255, 128, 255}.
Bytes idx_images() {
  Bytes b;
  put_be32(b, 0x803);
  put_be32(b, 2);
  put_be32(b, 2);
  put_be32(b, 2);
  for (int v : {0, 0, 0, 0, 0, 255, 128, 255}) b.push_back(static_cast<std::uint8_t>(v));
  return b;
}

Bytes idx_labels(std::initializer_list<int> labels) {
  Bytes b;
  put_be32(b, 0x801);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  for (int v : labels) b.push_back(static_cast<std::uint8_t>(v));
  return b;
}

Bytes cifar_record(int label, int fill) {
  Bytes b(3073, static_cast<std::uint8_t>(fill));
  b[0] = static_cast<std::uint8_t>(label);
  return b;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("privleak_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  void write(const std::string& name, const Bytes& b) const {
    std::ofstream out(path / name, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }
};

LabeledDataset synthetic(const std::vector<int>& per_class, std::uint64_t seed, Index channels = 1) {
  std::vector<int> labels;
  for (int k = 0; k < static_cast<int>(per_class.size()); ++k) labels.insert(labels.end(), static_cast<std::size_t>(per_class[static_cast<std::size_t>(k)]), k);
  const auto n = static_cast<Index>(labels.size());
  Tensor<float> images({n, kImageSide, kImageSide, channels});
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (Index i = 0; i < images.size(); ++i) images[i] = u(rng);
  LabeledDataset d;
  d.images = std::move(images);
  d.labels = std::move(labels);
  d.origin.resize(static_cast<std::size_t>(n));
  std::iota(d.origin.begin(), d.origin.end(), Index{0});
  return d;
}

Tensor<float> image_of(const LabeledDataset& d, Index i) {
  return Tensor<float>({kImageSide, kImageSide, d.channels()}, d.images.data().segment(i * d.images.row_size(), d.images.row_size()));
}

}  // namespace

TEST_CASE("IDX images are scaled and centred in 32x32") {
  const auto t = parse_idx_images(idx_images(), "fixture");
  REQUIRE(t.shape() == Shape{2, 32, 32, 1});
  CHECK(t.data().segment(0, 1024).isZero(0.0));
  const Index base = 1024;
  CHECK(t[base + 15 * 32 + 15] == 0.0f);
  CHECK(t[base + 15 * 32 + 16] == 1.0f);
  CHECK(t[base + 16 * 32 + 15] == 128.0f / 255.0f);
  CHECK(t[base + 16 * 32 + 16] == 1.0f);
  CHECK(t.data().sum() == doctest::Approx(2.0 + 128.0 / 255.0));
}

TEST_CASE("IDX parser errors") {
  CHECK_THROWS_WITH_AS(parse_idx_images(idx_labels({1, 2}), "train-images-idx3-ubyte"),
                       doctest::Contains("train-images-idx3-ubyte: bad IDX magic 0x00000801, expected 0x00000803"),
                       FormatError);
  CHECK_THROWS_WITH_AS(parse_idx_labels(idx_images(), "lbl"), doctest::Contains("expected 0x00000801"), FormatError);

  auto truncated = idx_images();
  truncated.pop_back();
  CHECK_THROWS_WITH_AS(parse_idx_images(truncated, "img"), doctest::Contains("truncated"), FormatError);
  CHECK_THROWS_AS(parse_idx_images(Bytes(7, 0), "img"), FormatError);
  CHECK_THROWS_WITH_AS(parse_idx_labels(idx_labels({1, 10}), "lbl"), doctest::Contains("exceeds 9"), FormatError);
}

TEST_CASE("mutating any of the first 16 header bytes is rejected") {
  const Bytes images = idx_images();
  const Bytes labels = idx_labels({3, 7, 1, 0, 9, 2, 4, 5});
  int accepted = 0;
  for (std::size_t at = 0; at < 16; ++at)
    for (int delta : {1, 2, 0x10, 0x80, 0xff}) {
      Bytes b = images;
      b[at] = static_cast<std::uint8_t>(b[at] + delta);
      try {
        parse_idx_images(b, "img");
        ++accepted;
      } catch (const FormatError&) {
      }
      if (at >= 8) continue;
      Bytes l = labels;
      l[at] = static_cast<std::uint8_t>(l[at] + delta);
      try {
        parse_idx_labels(l, "lbl");
        ++accepted;
      } catch (const FormatError&) {
      }
    }
  CHECK(accepted == 0);

  // Every strict prefix is rejected as well.
  for (std::size_t len = 0; len < images.size(); ++len)
    CHECK_THROWS_AS(parse_idx_images(Bytes(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(len)), "img"),
                    FormatError);
}

TEST_CASE("load_mnist checks image/label counts") {
  TempDir dir("mnist");
  dir.write("train-images-idx3-ubyte", idx_images());
  dir.write("train-labels-idx1-ubyte", idx_labels({4, 9}));
  dir.write("t10k-images-idx3-ubyte", idx_images());
  dir.write("t10k-labels-idx1-ubyte", idx_labels({1, 2, 3}));
  CHECK_THROWS_WITH_AS(load_mnist(dir.path), doctest::Contains("holds 2 images but"), FormatError);

  dir.write("t10k-labels-idx1-ubyte", idx_labels({1, 2}));
  const auto [train, test] = load_mnist(dir.path);
  CHECK(train.size() == 2);
  CHECK(train.labels == std::vector<int>{4, 9});
  CHECK(train.split == Split::train);
  CHECK(test.split == Split::test);
  CHECK(train.source == Source::mnist);

  CHECK_THROWS_WITH_AS(load_mnist(dir.path / "missing"), doctest::Contains("cannot open"), FormatError);
}

TEST_CASE("CIFAR-10 records") {
  std::vector<float> pixels;
  std::vector<int> labels;
  parse_cifar_batch(cifar_record(3, 255), "one", pixels, labels);
  CHECK(labels == std::vector<int>{3});
  REQUIRE(pixels.size() == 3072);
  CHECK(std::all_of(pixels.begin(), pixels.end(), [](float v) { return v == 1.0f; }));

  // Planes are R, G, B; output is interleaved.
  Bytes rec = cifar_record(0, 0);
  rec[1] = 255;           // R of pixel 0
  rec[1 + 1024 + 1] = 51;  // G of pixel 1
  rec[1 + 2048 + 1023] = 102;  // B of the last pixel
  pixels.clear();
  labels.clear();
  parse_cifar_batch(rec, "planes", pixels, labels);
  CHECK(pixels[0] == 1.0f);
  CHECK(pixels[3 + 1] == 51.0f / 255.0f);
  CHECK(pixels[3 * 1023 + 2] == 102.0f / 255.0f);

  Bytes two = cifar_record(1, 0);
  const Bytes second = cifar_record(2, 0);
  two.insert(two.end(), second.begin(), second.end() - 10);
  CHECK_THROWS_WITH_AS(parse_cifar_batch(two, "short.bin", pixels, labels),
                       doctest::Contains("truncated at byte offset 3073"), FormatError);
  for (int bad : {10, 11, 128, 255})
    CHECK_THROWS_WITH_AS(parse_cifar_batch(cifar_record(bad, 0), "bad.bin", pixels, labels),
                         doctest::Contains("exceeds 9"), FormatError);
  CHECK_THROWS_AS(parse_cifar_batch(Bytes{}, "empty.bin", pixels, labels), FormatError);
  for (std::size_t len = 1; len < 3073; len += 97)
    CHECK_THROWS_AS(parse_cifar_batch(Bytes(len, 0), "prefix.bin", pixels, labels), FormatError);
}

TEST_CASE("load_cifar10 reads six batch files") {
  TempDir dir("cifar");
  for (int i = 1; i <= 5; ++i) dir.write("data_batch_" + std::to_string(i) + ".bin", cifar_record(i, 255));
  dir.write("test_batch.bin", cifar_record(9, 0));
  const auto [train, test] = load_cifar10(dir.path);
  CHECK(train.images.shape() == Shape{5, 32, 32, 3});
  CHECK(train.labels == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(test.size() == 1);
  CHECK(test.images.data().isZero(0.0));
  CHECK(train.source == Source::cifar10);
}

TEST_CASE("resize_bilinear") {
  Tensor<float> img({3, 4, 2});
  for (Index i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / static_cast<float>(img.size());
  CHECK(resize_bilinear(img, 3, 4) == img);
  const auto flat = resize_bilinear(Tensor<float>::constant({5, 5, 1}, 0.25f), 7, 6);
  CHECK(flat.shape() == Shape{7, 6, 1});
  CHECK((flat.data().array() - 0.25f).abs().maxCoeff() <= 1e-7f);
}

TEST_CASE("shadow_transform") {
  const auto data = synthetic({3, 3, 3, 3, 3, 3, 3, 3, 3, 3}, 5, 3);
  for (Index i = 0; i < data.size(); ++i) {
    const auto img = image_of(data, i);
    Rng a(100 + static_cast<std::uint64_t>(i)), b(100 + static_cast<std::uint64_t>(i));
    const auto out = shadow_transform(img, a);
    CHECK(out.shape() == img.shape());
    CHECK(out.data().minCoeff() >= 0.0f);
    CHECK(out.data().maxCoeff() <= 1.0f);
    CHECK_FALSE(out == img);
    CHECK(shadow_transform(img, b) == out);
  }
  // Constant images are fixed points of every geometric step; still total.
  Rng rng(1);
  const auto black = Tensor<float>::constant({32, 32, 1}, 0.0f);
  CHECK(shadow_transform(black, rng) == black);
  CHECK_THROWS_AS(shadow_transform(Tensor<float>({32, 32}), rng), ShapeError);
}

TEST_CASE("build_shadow_datasets splits each class in half") {
  const std::vector<int> per_class{7, 6, 5, 9, 2, 3, 4, 11, 8, 13};
  const auto data = synthetic(per_class, 9);
  Rng rng(42);
  const auto [in, out] = build_shadow_datasets(data, rng);
  CHECK(in.split == Split::shadow_in);
  CHECK(out.split == Split::shadow_out);
  CHECK(in.size() + out.size() == data.size());
  // Six odd classes, alternating extras: equal halves.
  CHECK(in.size() == out.size());
  const auto ci = class_counts(in), co = class_counts(out);
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    CHECK(ci[k] + co[k] == per_class[k]);
    CHECK(std::abs(ci[k] - co[k]) <= 1);
  }
  std::set<Index> seen(in.origin.begin(), in.origin.end());
  for (Index o : out.origin) CHECK(seen.insert(o).second);
  CHECK(static_cast<Index>(seen.size()) == data.size());
  // Each shadow image is a transform of its origin, never the origin itself.
  for (Index i = 0; i < in.size(); ++i) {
    const Index o = in.origin[static_cast<std::size_t>(i)];
    CHECK(in.labels[static_cast<std::size_t>(i)] == data.labels[static_cast<std::size_t>(o)]);
    CHECK_FALSE(image_of(in, i) == image_of(data, o));
  }

  Rng again(42);
  const auto [in2, out2] = build_shadow_datasets(data, again);
  CHECK(in2.images == in.images);
  CHECK(out2.origin == out.origin);

  Rng r(1);
  CHECK_THROWS_WITH_AS(build_shadow_datasets(synthetic({2, 2, 2, 1, 2, 2, 2, 2, 2, 2}, 1), r),
                       doctest::Contains("class 3"), ConfigError);
}

TEST_CASE("balanced_subsample") {
  std::vector<AttackRecord> records;
  for (int i = 0; i < 400; ++i) {
    AttackRecord r;
    r.probs[0] = static_cast<float>(i);
    r.member = i < 100 ? 1 : 0;
    records.push_back(r);
  }
  Rng rng(3);
  const auto out = balanced_subsample(records, rng);
  REQUIRE(out.size() == 200);
  CHECK(std::count_if(out.begin(), out.end(), [](const AttackRecord& r) { return r.member == 1; }) == 100);

  Rng a(8), b(8);
  const auto s1 = balanced_subsample(records, a), s2 = balanced_subsample(records, b);
  CHECK(std::equal(s1.begin(), s1.end(), s2.begin(),
                   [](const AttackRecord& x, const AttackRecord& y) { return x.probs == y.probs; }));

  // Already balanced: same multiset, new order.
  std::vector<AttackRecord> balanced(records.begin(), records.begin() + 200);
  const auto shuffled = balanced_subsample(balanced, rng);
  std::multiset<float> before, after;
  for (const auto& r : balanced) before.insert(r.probs[0]);
  for (const auto& r : shuffled) after.insert(r.probs[0]);
  CHECK(before == after);
  bool moved = false;
  for (std::size_t i = 0; i < balanced.size(); ++i) moved |= balanced[i].probs[0] != shuffled[i].probs[0];
  CHECK(moved);

  // Exact 50/50 on random inputs.
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<AttackRecord> rs(static_cast<std::size_t>(2 + trial * 7));
    for (auto& r : rs) r.member = std::bernoulli_distribution(0.3)(rng);
    rs[0].member = 1;
    rs[1].member = 0;
    const auto bs = balanced_subsample(rs, rng);
    const auto m = std::count_if(bs.begin(), bs.end(), [](const AttackRecord& r) { return r.member == 1; });
    CHECK(2 * m == static_cast<std::ptrdiff_t>(bs.size()));
  }

  std::vector<AttackRecord> members_only(5);
  for (auto& r : members_only) r.member = 1;
  CHECK_THROWS_WITH_AS(balanced_subsample(members_only, rng), doctest::Contains("non-member"), ConfigError);
}
