#include "gfrnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace gfrnet {

namespace {

namespace fs = std::filesystem;

struct Rgb {
  uint8_t r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c, g = x;
  } else if (hp < 2) {
    r = x, g = c;
  } else if (hp < 3) {
    g = c, b = x;
  } else if (hp < 4) {
    g = x, b = c;
  } else if (hp < 5) {
    r = x, b = c;
  } else {
    r = c, b = x;
  }
  const double m = v - c;
  auto u8 = [&](double q) { return static_cast<uint8_t>(std::lround((q + m) * 255.0)); };
  return Rgb{u8(r), u8(g), u8(b)};
}

// u8 image buffer that converts to a [0,1] tensor; keeps generated pixels on
// the exact byte grid so PPM round trips are bit-exact.
struct Canvas {
  int64_t h, w;
  std::vector<uint8_t> px;  // (3, h, w) planar

  Canvas(int64_t h_, int64_t w_, Rgb fill) : h(h_), w(w_), px(static_cast<size_t>(3 * h_ * w_)) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) set(y, x, fill);
  }
  void set(int64_t y, int64_t x, Rgb c) {
    px[static_cast<size_t>(y * w + x)] = c.r;
    px[static_cast<size_t>(h * w + y * w + x)] = c.g;
    px[static_cast<size_t>(2 * h * w + y * w + x)] = c.b;
  }
  Tensor tensor() const {
    Tensor t(Shape{1, 3, h, w});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(px[i]) / Real(255);
    return t;
  }
};

}  // namespace

void Palette::validate(int num_classes) const {
  if (static_cast<int>(entries.size()) != num_classes) {
    throw DataError("palette has " + std::to_string(entries.size()) + " entries for " +
                    std::to_string(num_classes) + " classes");
  }
  std::vector<char> seen(static_cast<size_t>(num_classes), 0);
  for (const auto& e : entries) {
    if (e.index < 0 || e.index >= num_classes || seen[e.index]) {
      throw DataError("palette indices must be unique and dense in [0, " +
                      std::to_string(num_classes) + ")");
    }
    seen[e.index] = 1;
  }
}

const PaletteEntry& Palette::entry(int index) const {
  for (const auto& e : entries) {
    if (e.index == index) return e;
  }
  throw DataError("palette has no entry for class " + std::to_string(index));
}

Palette default_palette(int num_classes) {
  Palette p;
  p.entries.push_back(PaletteEntry{0, 190, 190, 190, "background"});
  for (int c = 1; c < num_classes; ++c) {
    const double hue = std::fmod(static_cast<double>(c - 1) * 0.61803398875, 1.0) * 360.0;
    const Rgb rgb = hsv_to_rgb(hue, 0.72, 0.92);
    p.entries.push_back(PaletteEntry{c, rgb.r, rgb.g, rgb.b, "class_" + std::to_string(c)});
  }
  return p;
}

Palette load_palette(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open palette: " + path);
  Palette p;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int index, r, g, b;
    std::string name;
    if (!(ls >> index >> r >> g >> b >> name) || r < 0 || r > 255 || g < 0 || g > 255 || b < 0 ||
        b > 255) {
      throw DataError("palette " + path + " line " + std::to_string(lineno) +
                      ": expected 'index r g b name'");
    }
    p.entries.push_back(PaletteEntry{index, static_cast<uint8_t>(r), static_cast<uint8_t>(g),
                                     static_cast<uint8_t>(b), name});
  }
  return p;
}

void write_palette(const std::string& path, const Palette& palette) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write palette: " + path);
  for (const auto& e : palette.entries) {
    os << e.index << " " << static_cast<int>(e.r) << " " << static_cast<int>(e.g) << " "
       << static_cast<int>(e.b) << " " << e.name << "\n";
  }
}

std::vector<Sample> gen_shapes(Prng& rng, int n, int size, int num_classes) {
  if (n < 0) throw DataError("gen_shapes: negative sample count");
  if (num_classes < 2) throw DataError("gen_shapes: needs at least 2 classes");
  if (size < 8) throw DataError("gen_shapes: size must be >= 8");
  const Palette palette = default_palette(num_classes);
  const uint64_t base = rng.next_u64();

  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Prng r = Prng(base).fork(static_cast<uint64_t>(i));
    Canvas canvas(size, size, Rgb{190, 190, 190});
    LabelMap labels(1, size, size, 0);

    const int max_shapes = std::min(4, num_classes - 1);
    const int count = 1 + static_cast<int>(r.next_below(static_cast<uint64_t>(max_shapes)));
    // distinct classes per image
    std::vector<int> classes;
    for (int c = 1; c < num_classes; ++c) classes.push_back(c);
    for (size_t k = 0; k + 1 < classes.size(); ++k) {
      const size_t j = k + r.next_below(classes.size() - k);
      std::swap(classes[k], classes[j]);
    }

    for (int s = 0; s < count; ++s) {
      const int cls = classes[s];
      const auto& pe = palette.entry(cls);
      const Rgb color{pe.r, pe.g, pe.b};
      const bool disc = r.next_below(2) == 1;
      const int64_t cy = static_cast<int64_t>(r.next_below(static_cast<uint64_t>(size)));
      const int64_t cx = static_cast<int64_t>(r.next_below(static_cast<uint64_t>(size)));
      const int64_t lo = size / 12 + 1;
      const int64_t hi = size / 4;
      auto extent = [&] {
        return lo + static_cast<int64_t>(r.next_below(static_cast<uint64_t>(hi - lo + 1)));
      };
      if (disc) {
        const int64_t rad = extent();
        for (int64_t y = std::max<int64_t>(0, cy - rad); y <= std::min<int64_t>(size - 1, cy + rad); ++y) {
          for (int64_t x = std::max<int64_t>(0, cx - rad); x <= std::min<int64_t>(size - 1, cx + rad); ++x) {
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= rad * rad) {
              canvas.set(y, x, color);
              labels.at(0, y, x) = cls;
            }
          }
        }
      } else {
        const int64_t ay = extent(), ax = extent();
        for (int64_t y = std::max<int64_t>(0, cy - ay); y <= std::min<int64_t>(size - 1, cy + ay); ++y) {
          for (int64_t x = std::max<int64_t>(0, cx - ax); x <= std::min<int64_t>(size - 1, cx + ax); ++x) {
            canvas.set(y, x, color);
            labels.at(0, y, x) = cls;
          }
        }
      }
    }

    char id[32];
    std::snprintf(id, sizeof id, "shapes_%04d", i);
    out.push_back(Sample{canvas.tensor(), GroundTruth{std::move(labels), 255}, id});
  }
  return out;
}

std::vector<Sample> gen_ambiguous(Prng& rng, int n, int size) {
  if (n < 0) throw DataError("gen_ambiguous: negative sample count");
  if (size < 32) throw DataError("gen_ambiguous: size must be >= 32");
  const int64_t patch = 3 * size / 16;      // textured square, class 1 or 2
  const int64_t cue = std::max(4, size / 8);  // tinted corner block
  const int64_t t_max = size / 2 - cue - patch;
  if (t_max < 2) throw DataError("gen_ambiguous: size too small for the separation rule");

  const Rgb bg{160, 160, 160};
  const Rgb cue_color[2] = {{204, 72, 40}, {40, 88, 204}};
  const Rgb texture[2] = {{45, 45, 45}, {235, 235, 235}};
  const uint64_t base = rng.next_u64();

  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int pair = i / 2;
    const int cls = 1 + i % 2;
    Prng r = Prng(base).fork(static_cast<uint64_t>(pair));

    const int64_t ty = 2 + static_cast<int64_t>(r.next_below(static_cast<uint64_t>(t_max - 1)));
    const int64_t tx = 2 + static_cast<int64_t>(r.next_below(static_cast<uint64_t>(t_max - 1)));
    // per-pair random 2x2-block texture, identical for both pair members
    const int64_t blocks = (patch + 1) / 2;
    std::vector<uint8_t> bits(static_cast<size_t>(blocks * blocks));
    for (auto& bit : bits) bit = static_cast<uint8_t>(r.next_below(2));

    Canvas canvas(size, size, bg);
    LabelMap labels(1, size, size, 0);
    for (int64_t y = 0; y < patch; ++y) {
      for (int64_t x = 0; x < patch; ++x) {
        const uint8_t bit = bits[static_cast<size_t>((y / 2) * blocks + x / 2)];
        canvas.set(ty + y, tx + x, texture[bit]);
        labels.at(0, ty + y, tx + x) = cls;
      }
    }
    // context cue in the bottom-right corner; stays background in the labels
    for (int64_t y = size - cue; y < size; ++y) {
      for (int64_t x = size - cue; x < size; ++x) {
        canvas.set(y, x, cue_color[cls - 1]);
      }
    }

    char id[32];
    std::snprintf(id, sizeof id, "ambig_%04d%c", pair, i % 2 == 0 ? 'a' : 'b');
    out.push_back(Sample{canvas.tensor(), GroundTruth{std::move(labels), 255}, id});
  }
  return out;
}

namespace {

int read_pnm_int(std::istream& is, const std::string& path) {
  // skip whitespace and '#' comments
  for (;;) {
    const int ch = is.peek();
    if (ch == '#') {
      std::string comment;
      std::getline(is, comment);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
  }
  int value = -1;
  if (!(is >> value) || value < 0) {
    throw DataError("malformed netpbm header in " + path);
  }
  return value;
}

std::vector<uint8_t> read_pnm(const std::string& path, const char* magic, int64_t channels,
                              int64_t& h, int64_t& w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char m[2];
  is.read(m, 2);
  if (!is || m[0] != magic[0] || m[1] != magic[1]) {
    throw DataError(std::string("expected ") + magic + " magic in " + path);
  }
  w = read_pnm_int(is, path);
  h = read_pnm_int(is, path);
  const int maxval = read_pnm_int(is, path);
  if (maxval != 255) throw DataError("netpbm maxval must be 255 in " + path);
  const int sep = is.get();
  if (!std::isspace(sep)) throw DataError("malformed netpbm header in " + path);
  if (h <= 0 || w <= 0) throw DataError("malformed netpbm header in " + path);

  std::vector<uint8_t> payload(static_cast<size_t>(channels * h * w));
  is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<size_t>(is.gcount()) != payload.size()) {
    throw DataError("truncated netpbm payload in " + path + ": expected " +
                    std::to_string(payload.size()) + " bytes, read " + std::to_string(is.gcount()));
  }
  return payload;
}

}  // namespace

Tensor load_image_ppm(const std::string& path) {
  int64_t h = 0, w = 0;
  const auto bytes = read_pnm(path, "P6", 3, h, w);
  Tensor t(Shape{1, 3, h, w});
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const size_t o = static_cast<size_t>(3 * (y * w + x));
      for (int64_t c = 0; c < 3; ++c) {
        t.at(0, c, y, x) = static_cast<Real>(bytes[o + static_cast<size_t>(c)]) / Real(255);
      }
    }
  }
  return t;
}

GroundTruth load_labels_pgm(const std::string& path) {
  int64_t h = 0, w = 0;
  const auto bytes = read_pnm(path, "P5", 1, h, w);
  GroundTruth gt;
  gt.labels = LabelMap(1, h, w);
  for (int64_t i = 0; i < gt.labels.count(); ++i) gt.labels.v[i] = bytes[static_cast<size_t>(i)];
  return gt;
}

void write_ppm(const std::string& path, const Tensor& image01) {
  const auto [n, c, h, w] = image01.shape();
  if (n != 1 || c != 3) throw DataError("write_ppm: image must be (1,3,h,w), got " + image01.shape().str());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(3 * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(static_cast<double>(image01.at(0, ch, y, x)), 0.0, 1.0);
        row[static_cast<size_t>(3 * x + ch)] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw DataError("write failed: " + path);
}

void write_pgm(const std::string& path, const LabelMap& labels) {
  if (labels.n != 1) throw DataError("write_pgm: batch size must be 1");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path);
  os << "P5\n" << labels.w << " " << labels.h << "\n255\n";
  std::vector<uint8_t> buf(static_cast<size_t>(labels.count()));
  for (int64_t i = 0; i < labels.count(); ++i) {
    const int32_t v = labels.v[static_cast<size_t>(i)];
    if (v < 0 || v > 255) {
      throw DataError("write_pgm: label " + std::to_string(v) + " does not fit a byte");
    }
    buf[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("write failed: " + path);
}

Sample random_crop(const Sample& s, int64_t crop_h, int64_t crop_w, Prng& rng) {
  const auto [n, c, h, w] = s.image.shape();
  if (crop_h < 1 || crop_w < 1 || crop_h > h || crop_w > w) {
    throw DataError("random_crop: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                    " does not fit image " + s.image.shape().str());
  }
  const int64_t y0 = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(h - crop_h + 1)));
  const int64_t x0 = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(w - crop_w + 1)));

  Sample out;
  out.id = s.id;
  out.image = Tensor(Shape{n, c, crop_h, crop_w});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < crop_h; ++y)
        for (int64_t x = 0; x < crop_w; ++x)
          out.image.at(b, ch, y, x) = s.image.at(b, ch, y0 + y, x0 + x);

  out.gt.ignore_index = s.gt.ignore_index;
  out.gt.labels = LabelMap(s.gt.labels.n, crop_h, crop_w);
  for (int64_t b = 0; b < s.gt.labels.n; ++b)
    for (int64_t y = 0; y < crop_h; ++y)
      for (int64_t x = 0; x < crop_w; ++x)
        out.gt.labels.at(b, y, x) = s.gt.labels.at(b, y0 + y, x0 + x);
  return out;
}

Tensor normalize(const Tensor& image, std::array<double, 3> mean, std::array<double, 3> stddev) {
  const auto [n, c, h, w] = image.shape();
  if (c != 3) throw DataError("normalize: expected 3 channels, got " + image.shape().str());
  for (double s : stddev) {
    if (!(s > 0)) throw ConfigError("normalize: stddev must be positive");
  }
  Tensor out(image.shape());
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < 3; ++ch) {
      const Real m = static_cast<Real>(mean[static_cast<size_t>(ch)]);
      const Real inv = static_cast<Real>(1.0 / stddev[static_cast<size_t>(ch)]);
      const Real* src = &image.at(b, ch, 0, 0);
      Real* dst = &out.at(b, ch, 0, 0);
      for (int64_t i = 0; i < h * w; ++i) dst[i] = (src[i] - m) * inv;
    }
  }
  return out;
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest: " + path);
  for (const auto& [img, lbl] : rows) os << img << " " << lbl << "\n";
}

std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path);
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string img, lbl, extra;
    if (!(ls >> img >> lbl) || (ls >> extra)) {
      throw DataError("manifest " + path + " line " + std::to_string(lineno) +
                      ": expected 'image_path label_path'");
    }
    rows.emplace_back(std::move(img), std::move(lbl));
  }
  return rows;
}

std::vector<Sample> load_manifest_samples(const std::string& manifest_path, int num_classes) {
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<Sample> out;
  for (const auto& [img_rel, lbl_rel] : read_manifest(manifest_path)) {
    Sample s;
    s.id = fs::path(img_rel).stem().string();
    s.image = load_image_ppm((dir / img_rel).string());
    s.gt = load_labels_pgm((dir / lbl_rel).string());
    if (s.gt.labels.h != s.image.shape().h || s.gt.labels.w != s.image.shape().w) {
      throw DataError("image/label size mismatch for " + img_rel);
    }
    for (int32_t v : s.gt.labels.v) {
      if (v != s.gt.ignore_index && v >= num_classes) {
        throw DataError("label " + std::to_string(v) + " >= num_classes " +
                        std::to_string(num_classes) + " in " + lbl_rel);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gfrnet
