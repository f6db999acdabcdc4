#include "iscf/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "iscf/errors.hpp"
#include "iscf/rng.hpp"

namespace iscf {

namespace fs = std::filesystem;

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const std::string& origin) : s_(bytes), origin_(origin) {}

  void skip_space_and_comments() {
    while (pos_ < s_.size()) {
      if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else if (s_[pos_] == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::int64_t integer(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::int64_t v = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      v = v * 10 + (s_[pos_] - '0');
      if (v > (std::int64_t{1} << 31)) fail(std::string(what) + " is too large");
      ++pos_;
    }
    if (pos_ == start) fail(std::string("missing ") + what);
    return v;
  }

  /// Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= s_.size() || !std::isspace(static_cast<unsigned char>(s_[pos_]))) fail("header not terminated");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& why) const { throw MalformedPnm(origin_ + ": " + why); }

 private:
  const std::string& s_;
  std::string origin_;
  std::size_t pos_ = 2;
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Image8 parse_pnm(const std::string& bytes, const std::string& origin) {
  HeaderReader r(bytes, origin);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) r.fail("bad magic (need P5 or P6)");
  Image8 img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  img.width = r.integer("width");
  img.height = r.integer("height");
  const std::int64_t maxval = r.integer("maxval");
  if (img.width <= 0 || img.height <= 0) r.fail("extents must be positive");
  if (maxval != 255) r.fail("maxval must be 255, got " + std::to_string(maxval));
  const std::size_t start = r.raster_start();
  const auto need = static_cast<std::size_t>(img.width * img.height * img.channels);
  if (bytes.size() - start < need) r.fail("raster truncated");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
  return img;
}

Image8 read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_pnm(bytes, path.string());
}

void write_pnm(const fs::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw InvalidConfig("PNM output needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

Tensor image_to_tensor(const Image8& img) {
  const std::int64_t c = img.channels, h = img.height, w = img.width;
  Buffer b(static_cast<std::size_t>(c * h * w));
  for (std::int64_t k = 0; k < c; ++k)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) b[(k * h + y) * w + x] = img.at(y, x, static_cast<int>(k)) / 255.0;
  return Tensor({c, h, w}, std::move(b));
}

Image8 tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw ShapeMismatch("expected [1|3,H,W], got " + shape_to_string(t.shape()));
  }
  Image8 img;
  img.channels = static_cast<int>(t.dim(0));
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(t.numel());
  const std::int64_t h = img.height, w = img.width;
  for (std::int64_t k = 0; k < img.channels; ++k)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double v = clamp01(t[(k * h + y) * w + x]);
        img.pixels[(y * w + x) * img.channels + k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

Tensor resize_bilinear(const Image8& img, std::int64_t h, std::int64_t w) {
  const std::int64_t c = img.channels;
  Buffer b(static_cast<std::size_t>(c * h * w));
  const double sy = static_cast<double>(img.height) / h, sx = static_cast<double>(img.width) / w;
  for (std::int64_t y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::int64_t>(fy);
    const std::int64_t y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - y0;
    for (std::int64_t x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::int64_t>(fx);
      const std::int64_t x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - x0;
      for (std::int64_t k = 0; k < c; ++k) {
        const int ch = static_cast<int>(k);
        const double top = img.at(y0, x0, ch) * (1 - tx) + img.at(y0, x1, ch) * tx;
        const double bottom = img.at(y1, x0, ch) * (1 - tx) + img.at(y1, x1, ch) * tx;
        b[(k * h + y) * w + x] = (top * (1 - ty) + bottom * ty) / 255.0;
      }
    }
  }
  return Tensor({c, h, w}, std::move(b));
}

Tensor resize_mask_nearest(const Image8& img, std::int64_t h, std::int64_t w) {
  Buffer b(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    const std::int64_t sy = std::min(img.height - 1, (2 * y + 1) * img.height / (2 * h));
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t sx = std::min(img.width - 1, (2 * x + 1) * img.width / (2 * w));
      b[y * w + x] = img.at(sy, sx) >= 128 ? 1.0 : 0.0;
    }
  }
  return Tensor({1, h, w}, std::move(b));
}

std::vector<Sample> load_dataset(const fs::path& dir, std::int64_t h, std::int64_t w) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory '" + dir.string() + "' does not exist");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());

  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const fs::path mask_path = dir / (id + "_mask.pgm");
    if (!fs::exists(mask_path)) throw MissingMask("image '" + id + "' has no " + mask_path.filename().string());
    const Image8 image = read_pnm(dir / (id + ".ppm"));
    const Image8 mask = read_pnm(mask_path);
    if (image.channels != 3) throw MalformedPnm(id + ".ppm: expected a P6 colour image");
    if (mask.channels != 1) throw MalformedPnm(mask_path.filename().string() + ": expected a P5 mask");
    if (image.width != mask.width || image.height != mask.height) {
      throw ExtentMismatch("'" + id + "': image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                           " vs mask " + std::to_string(mask.width) + "x" + std::to_string(mask.height));
    }
    out.push_back({resize_bilinear(image, h, w), resize_mask_nearest(mask, h, w), id});
  }
  return out;
}

void save_sample(const fs::path& dir, const Sample& s) {
  fs::create_directories(dir);
  write_pnm(dir / (s.id + ".ppm"), tensor_to_image(s.image));
  write_pnm(dir / (s.id + "_mask.pgm"), tensor_to_image(s.mask));
}

bool inside(const Ellipse& e, std::int64_t x, std::int64_t y) {
  const double dx = x + 0.5 - e.cx, dy = y + 0.5 - e.cy;
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  const double u = (c * dx + s * dy) / e.a, v = (-s * dx + c * dy) / e.b;
  return u * u + v * v <= 1.0;
}

void SynthSpec::validate() const {
  if (count < 0) throw InvalidSpec("count must be non-negative");
  if (h <= 0 || w <= 0 || h % 32 != 0 || w % 32 != 0) throw InvalidSpec("extents must be positive multiples of 32");
  if (min_ellipses < 1 || max_ellipses < min_ellipses) throw InvalidSpec("need 1 <= min_ellipses <= max_ellipses");
  if (!(0.0 <= min_fraction && min_fraction < max_fraction && max_fraction <= 1.0)) {
    throw InvalidSpec("need 0 <= min_fraction < max_fraction <= 1");
  }
  if (noise < 0 || texture < 0 || contrast < 0 || contrast > 1) throw InvalidSpec("noise/texture/contrast out of range");
}

std::vector<SynthSample> synth_dataset(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double side = static_cast<double>(std::min(spec.h, spec.w));
  const double pixels = static_cast<double>(spec.h * spec.w);
  std::vector<SynthSample> out;
  out.reserve(static_cast<std::size_t>(spec.count));

  for (std::int64_t i = 0; i < spec.count; ++i) {
    SynthSample s;
    Buffer mask(static_cast<std::size_t>(spec.h * spec.w));
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw InvalidSpec("cannot meet the mask fraction band");
      s.ellipses.clear();
      const int n = spec.min_ellipses + static_cast<int>(rng.below(spec.max_ellipses - spec.min_ellipses + 1));
      for (int k = 0; k < n; ++k) {
        Ellipse e;
        e.cx = rng.uniform(0.2, 0.8) * spec.w;
        e.cy = rng.uniform(0.2, 0.8) * spec.h;
        e.a = rng.uniform(0.08, 0.32) * side;
        e.b = rng.uniform(0.08, 0.32) * side;
        e.theta = rng.uniform(0.0, std::numbers::pi);
        s.ellipses.push_back(e);
      }
      double positive = 0;
      for (std::int64_t y = 0; y < spec.h; ++y)
        for (std::int64_t x = 0; x < spec.w; ++x) {
          const bool in = std::any_of(s.ellipses.begin(), s.ellipses.end(),
                                      [&](const Ellipse& e) { return inside(e, x, y); });
          mask[y * spec.w + x] = in ? 1.0 : 0.0;
          positive += in;
        }
      const double fraction = positive / pixels;
      if (fraction >= spec.min_fraction && fraction <= spec.max_fraction) break;
    }

    // Skin-like background with a low-frequency pattern, darker brown lesion.
    const double base[3] = {rng.uniform(0.75, 0.9), rng.uniform(0.55, 0.7), rng.uniform(0.45, 0.6)};
    const double tint[3] = {1.0, 0.85, 0.75};
    const double fx = rng.uniform(1.0, 4.0) * 2 * std::numbers::pi / spec.w;
    const double fy = rng.uniform(1.0, 4.0) * 2 * std::numbers::pi / spec.h;
    const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
    Buffer img(static_cast<std::size_t>(3 * spec.h * spec.w));
    for (std::int64_t y = 0; y < spec.h; ++y)
      for (std::int64_t x = 0; x < spec.w; ++x) {
        const double pattern = spec.texture * std::sin(fx * x + phase) * std::cos(fy * y - phase);
        const bool lesion = mask[y * spec.w + x] > 0;
        for (int c = 0; c < 3; ++c) {
          double v = base[c] + pattern;
          if (lesion) v *= (1.0 - spec.contrast) * tint[c];
          img[(c * spec.h + y) * spec.w + x] = clamp01(v + spec.noise * rng.normal());
        }
      }

    char id[32];
    std::snprintf(id, sizeof id, "synth_%05lld", static_cast<long long>(i));
    s.sample = {Tensor({3, spec.h, spec.w}, std::move(img)), Tensor({1, spec.h, spec.w}, std::move(mask)), id};
    out.push_back(std::move(s));
  }
  return out;
}

Image8 render_overlay(const Tensor& image, const Tensor& gt_mask, const Tensor& pred_mask) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeMismatch("overlay image must be [3,H,W]");
  const std::int64_t h = image.dim(1), w = image.dim(2);
  for (const Tensor* m : {&gt_mask, &pred_mask}) {
    if (m->numel() != static_cast<std::size_t>(h * w) || m->dim(-1) != w || m->dim(-2) != h) {
      throw ShapeMismatch("overlay mask " + shape_to_string(m->shape()) + " does not match image " +
                          shape_to_string(image.shape()));
    }
  }
  Image8 out = tensor_to_image(image);
  auto paint = [&](const Tensor& m, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto on = [&](std::int64_t y, std::int64_t x) { return m[y * w + x] != 0.0; };
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        if (!on(y, x)) continue;
        const bool edge = (y > 0 && !on(y - 1, x)) || (y + 1 < h && !on(y + 1, x)) ||
                          (x > 0 && !on(y, x - 1)) || (x + 1 < w && !on(y, x + 1));
        if (!edge) continue;
        auto* px = &out.pixels[static_cast<std::size_t>((y * w + x) * 3)];
        px[0] = r;
        px[1] = g;
        px[2] = b;
      }
  };
  paint(gt_mask, 0, 255, 0);
  paint(pred_mask, 0, 0, 255);
  return out;
}

void overlay_contours(const Tensor& image, const Tensor& gt_mask, const Tensor& pred_mask, const fs::path& path) {
  write_pnm(path, render_overlay(image, gt_mask, pred_mask));
}

}  // namespace iscf
