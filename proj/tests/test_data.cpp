#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gfrnet/data.hpp"

using namespace gfrnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

bool samples_equal(const Sample& a, const Sample& b) {
  if (!(a.image.shape() == b.image.shape()) || !(a.gt.labels == b.gt.labels)) return false;
  for (int64_t i = 0; i < a.image.size(); ++i) {
    if (a.image[i] != b.image[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("gen_shapes: count, label range, determinism") {
  Prng rng(1);
  CHECK(gen_shapes(rng, 0, 32, 4).empty());

  Prng r1(2), r2(2);
  auto a = gen_shapes(r1, 12, 32, 4);
  auto b = gen_shapes(r2, 12, 32, 4);
  REQUIRE(a.size() == 12);
  bool any_shape = false;
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(samples_equal(a[i], b[i]));
    for (int32_t v : a[i].gt.labels.v) {
      CHECK(v >= 0);
      CHECK(v < 4);
      any_shape |= v > 0;
    }
    for (int64_t j = 0; j < a[i].image.size(); ++j) {
      CHECK(a[i].image[j] >= Real(0));
      CHECK(a[i].image[j] <= Real(1));
    }
  }
  CHECK(any_shape);
}

TEST_CASE("gen_shapes: image colors follow the palette exactly, aligned with labels") {
  Prng rng(3);
  const int C = 4;
  auto samples = gen_shapes(rng, 6, 32, C);
  const Palette pal = default_palette(C);
  for (const auto& s : samples) {
    for (int64_t y = 0; y < 32; ++y) {
      for (int64_t x = 0; x < 32; ++x) {
        const auto& e = pal.entry(s.gt.labels.at(0, y, x));
        CHECK(s.image.at(0, 0, y, x) == static_cast<Real>(e.r) / Real(255));
        CHECK(s.image.at(0, 1, y, x) == static_cast<Real>(e.g) / Real(255));
        CHECK(s.image.at(0, 2, y, x) == static_cast<Real>(e.b) / Real(255));
      }
    }
  }
}

TEST_CASE("gen_ambiguous: pair members carry byte-identical patches") {
  Prng rng(5);
  auto samples = gen_ambiguous(rng, 20, 64);
  REQUIRE(samples.size() == 20);
  for (size_t p = 0; p + 1 < samples.size(); p += 2) {
    const Sample& a = samples[p];
    const Sample& b = samples[p + 1];
    int64_t patch_pixels = 0;
    for (int64_t y = 0; y < 64; ++y) {
      for (int64_t x = 0; x < 64; ++x) {
        const bool in_a = a.gt.labels.at(0, y, x) != 0;
        const bool in_b = b.gt.labels.at(0, y, x) != 0;
        CHECK(in_a == in_b);  // same patch position
        if (in_a) {
          ++patch_pixels;
          CHECK(a.gt.labels.at(0, y, x) == 1);
          CHECK(b.gt.labels.at(0, y, x) == 2);
          for (int64_t c = 0; c < 3; ++c) {
            CHECK(a.image.at(0, c, y, x) == b.image.at(0, c, y, x));
          }
        }
      }
    }
    CHECK(patch_pixels == 12 * 12);  // 3*64/16 squared
  }
}

TEST_CASE("gen_ambiguous: patch and cue are separated by at least half the image") {
  Prng rng(7);
  const int64_t size = 64;
  const int64_t cue = size / 8;
  auto samples = gen_ambiguous(rng, 50, size);
  for (const auto& s : samples) {
    int64_t max_coord = -1;
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        if (s.gt.labels.at(0, y, x) != 0) max_coord = std::max({max_coord, y, x});
      }
    }
    REQUIRE(max_coord >= 0);
    // every labeled pixel is at least size/2 away, per axis, from the cue block
    CHECK(size - cue - (max_coord + 1) >= size / 2);
  }
}

TEST_CASE("gen_ambiguous: exact class balance over many samples") {
  Prng rng(9);
  auto samples = gen_ambiguous(rng, 1000, 32);
  int64_t count[3] = {0, 0, 0};
  for (const auto& s : samples) {
    int32_t cls = 0;
    for (int32_t v : s.gt.labels.v) cls = std::max(cls, v);
    ++count[cls];
  }
  CHECK(count[0] == 0);
  CHECK(count[1] == 500);
  CHECK(count[2] == 500);

  Prng r2(9);
  auto again = gen_ambiguous(r2, 1000, 32);
  CHECK(samples_equal(samples[123], again[123]));
}

TEST_CASE("ppm/pgm round trips are bit-exact") {
  TempDir dir("gfrnet_pnm_test");
  Prng rng(11);
  auto samples = gen_shapes(rng, 1, 16, 3);
  const std::string img = (dir.path / "a.ppm").string();
  const std::string lbl = (dir.path / "a.pgm").string();
  write_ppm(img, samples[0].image);
  write_pgm(lbl, samples[0].gt.labels);

  const Tensor t = load_image_ppm(img);
  REQUIRE(t.shape() == samples[0].image.shape());
  for (int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == samples[0].image[i]);
  const GroundTruth gt = load_labels_pgm(lbl);
  CHECK(gt.labels == samples[0].gt.labels);

  // writing what was read reproduces the same bytes
  const std::string img2 = (dir.path / "b.ppm").string();
  write_ppm(img2, t);
  std::ifstream f1(img, std::ios::binary), f2(img2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("pgm of zeros is all background; ppm of 255 is all ones") {
  TempDir dir("gfrnet_pnm_edge");
  {
    std::ofstream os(dir.path / "zero.pgm", std::ios::binary);
    os << "P5\n4 2\n255\n";
    for (int i = 0; i < 8; ++i) os.put('\0');
  }
  const GroundTruth gt = load_labels_pgm((dir.path / "zero.pgm").string());
  CHECK(gt.labels.h == 2);
  CHECK(gt.labels.w == 4);
  for (int32_t v : gt.labels.v) CHECK(v == 0);

  {
    std::ofstream os(dir.path / "white.ppm", std::ios::binary);
    os << "P6\n2 2\n255\n";
    for (int i = 0; i < 12; ++i) os.put('\xff');
  }
  const Tensor t = load_image_ppm((dir.path / "white.ppm").string());
  for (int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == Real(1));
}

TEST_CASE("netpbm headers may carry comments") {
  TempDir dir("gfrnet_pnm_comment");
  {
    std::ofstream os(dir.path / "c.pgm", std::ios::binary);
    os << "P5\n# a comment line\n2 # trailing\n2\n255\n";
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>(i));
  }
  const GroundTruth gt = load_labels_pgm((dir.path / "c.pgm").string());
  CHECK(gt.labels.h == 2);
  CHECK(gt.labels.v == std::vector<int32_t>{0, 1, 2, 3});
}

TEST_CASE("netpbm loader errors are specific") {
  TempDir dir("gfrnet_pnm_err");
  auto write_file = [&](const std::string& name, const std::string& content) {
    std::ofstream os(dir.path / name, std::ios::binary);
    os << content;
    return (dir.path / name).string();
  };

  CHECK_THROWS_WITH_AS(load_image_ppm(write_file("bad_magic.ppm", "P5\n2 2\n255\n....")),
                       doctest::Contains("expected P6"), DataError);
  CHECK_THROWS_WITH_AS(load_image_ppm(write_file("bad_header.ppm", "P6\nnope\n")),
                       doctest::Contains("malformed"), DataError);
  CHECK_THROWS_WITH_AS(load_image_ppm(write_file("short.ppm", "P6\n2 2\n255\nxx")),
                       doctest::Contains("truncated"), DataError);
  CHECK_THROWS_WITH_AS(load_image_ppm(write_file("maxval.ppm", "P6\n1 1\n65535\nxxxxxx")),
                       doctest::Contains("maxval"), DataError);
  CHECK_THROWS_AS(load_image_ppm((dir.path / "missing.ppm").string()), DataError);
}

TEST_CASE("random_crop: full-size crop is the identity") {
  Prng rng(13);
  auto samples = gen_shapes(rng, 1, 16, 3);
  Prng crop_rng(1);
  auto cropped = random_crop(samples[0], 16, 16, crop_rng);
  CHECK(samples_equal(samples[0], cropped));
}

TEST_CASE("random_crop: 1000 seeded draws stay within bounds and keep alignment") {
  Prng rng(17);
  auto samples = gen_shapes(rng, 1, 32, 3);
  const Sample& s = samples[0];
  const Palette pal = default_palette(3);
  Prng crop_rng(99);
  for (int t = 0; t < 1000; ++t) {
    const Sample c = random_crop(s, 16, 8, crop_rng);
    CHECK(c.image.shape() == Shape{1, 3, 16, 8});
    CHECK(c.gt.labels.h == 16);
    CHECK(c.gt.labels.w == 8);
    // image pixels still agree with the label palette at every position
    for (int64_t y = 0; y < 16; ++y) {
      for (int64_t x = 0; x < 8; ++x) {
        const auto& e = pal.entry(c.gt.labels.at(0, y, x));
        CHECK(c.image.at(0, 0, y, x) == static_cast<Real>(e.r) / Real(255));
      }
    }
  }
  CHECK_THROWS_AS(random_crop(s, 64, 64, crop_rng), DataError);
}

TEST_CASE("normalize: identity, centering, and the worked example") {
  Prng rng(19);
  auto samples = gen_shapes(rng, 1, 16, 3);
  const Tensor& img = samples[0].image;

  const Tensor same = normalize(img, {0, 0, 0}, {1, 1, 1});
  for (int64_t i = 0; i < img.size(); ++i) CHECK(same[i] == img[i]);

  Tensor half(Shape{1, 3, 2, 2}, Real(0.5));
  const Tensor zeros = normalize(half, {0.5, 0.5, 0.5}, {1, 1, 1});
  for (int64_t i = 0; i < zeros.size(); ++i) CHECK(zeros[i] == Real(0));

  Tensor x(Shape{1, 3, 1, 1}, Real(0.8));
  const Tensor scaled = normalize(x, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25});
  for (int64_t i = 0; i < 3; ++i) CHECK(scaled[i] == doctest::Approx(1.2));

  CHECK_THROWS_AS(normalize(x, {0, 0, 0}, {1, 0, 1}), ConfigError);

  const Tensor vgg = normalize(x, kImagenetMean, kImagenetStd);
  CHECK(vgg[0] == doctest::Approx((0.8 - 0.485) / 0.229));
}

TEST_CASE("palette: validation, file round trip") {
  const Palette p = default_palette(5);
  CHECK_NOTHROW(p.validate(5));
  CHECK_THROWS_AS(p.validate(4), DataError);
  CHECK(p.entry(0).name == "background");

  TempDir dir("gfrnet_palette");
  const std::string path = (dir.path / "palette.txt").string();
  write_palette(path, p);
  const Palette q = load_palette(path);
  REQUIRE(q.entries.size() == p.entries.size());
  for (size_t i = 0; i < p.entries.size(); ++i) {
    CHECK(q.entries[i].index == p.entries[i].index);
    CHECK(q.entries[i].r == p.entries[i].r);
    CHECK(q.entries[i].name == p.entries[i].name);
  }

  std::ofstream(dir.path / "bad.txt") << "0 900 0 0 background\n";
  CHECK_THROWS_AS(load_palette((dir.path / "bad.txt").string()), DataError);

  Palette dup;
  dup.entries = {PaletteEntry{0, 1, 2, 3, "a"}, PaletteEntry{0, 4, 5, 6, "b"}};
  CHECK_THROWS_AS(dup.validate(2), DataError);
}

TEST_CASE("manifest round trip and label-range check at load") {
  TempDir dir("gfrnet_manifest");
  Prng rng(23);
  auto samples = gen_shapes(rng, 3, 16, 4);
  std::vector<std::pair<std::string, std::string>> rows;
  for (size_t i = 0; i < samples.size(); ++i) {
    const std::string img = "img_" + std::to_string(i) + ".ppm";
    const std::string lbl = "gt_" + std::to_string(i) + ".pgm";
    write_ppm((dir.path / img).string(), samples[i].image);
    write_pgm((dir.path / lbl).string(), samples[i].gt.labels);
    rows.emplace_back(img, lbl);
  }
  const std::string manifest = (dir.path / "manifest.txt").string();
  write_manifest(manifest, rows);
  CHECK(read_manifest(manifest) == rows);

  auto loaded = load_manifest_samples(manifest, 4);
  REQUIRE(loaded.size() == 3);
  for (size_t i = 0; i < loaded.size(); ++i) CHECK(samples_equal(loaded[i], samples[i]));

  // label >= C is rejected at the point of use
  CHECK_THROWS_WITH_AS(load_manifest_samples(manifest, 2), doctest::Contains("num_classes"),
                       DataError);

  std::ofstream(dir.path / "broken.txt") << "one_field\n";
  CHECK_THROWS_AS(read_manifest((dir.path / "broken.txt").string()), DataError);
}
