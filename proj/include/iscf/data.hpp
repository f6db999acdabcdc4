#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iscf/tensor.hpp"

namespace iscf {

/// 8-bit raster, interleaved channels, row-major. channels is 1 (P5) or 3 (P6).
struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::int64_t y, std::int64_t x, int c = 0) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

/// Binary NetPBM with maxval 255. Comments are allowed in the header.
Image8 read_pnm(const std::filesystem::path& path);
Image8 parse_pnm(const std::string& bytes, const std::string& origin = "<memory>");
void write_pnm(const std::filesystem::path& path, const Image8& img);

/// [c,H,W] in [0,1] ↔ 8-bit raster (rounded, clamped).
Tensor image_to_tensor(const Image8& img);
Image8 tensor_to_image(const Tensor& t);

/// Bilinear resize with half-pixel centres and edge clamping; output [c,h,w] in [0,1].
Tensor resize_bilinear(const Image8& img, std::int64_t h, std::int64_t w);
/// Nearest-neighbour resize of the first channel, binarized at 128: [1,h,w] in {0,1}.
Tensor resize_mask_nearest(const Image8& img, std::int64_t h, std::int64_t w);

struct Sample {
  Tensor image;  // [3,H,W] in [0,1]
  Tensor mask;   // [1,H,W] in {0,1}
  std::string id;
};

/// Pairs <id>.ppm with <id>_mask.pgm; result sorted by id.
std::vector<Sample> load_dataset(const std::filesystem::path& dir, std::int64_t h, std::int64_t w);
/// Writes <id>.ppm and <id>_mask.pgm.
void save_sample(const std::filesystem::path& dir, const Sample& s);

struct Ellipse {
  double cx = 0, cy = 0;  // pixel coordinates of the centre
  double a = 0, b = 0;    // semi-axes in pixels
  double theta = 0;       // rotation in radians
};

/// Pixel (x, y) is inside when its centre (x+0.5, y+0.5) satisfies the ellipse inequality.
bool inside(const Ellipse& e, std::int64_t x, std::int64_t y);

struct SynthSpec {
  std::int64_t count = 250;
  std::int64_t h = 64;
  std::int64_t w = 64;
  int min_ellipses = 1;
  int max_ellipses = 3;
  double min_fraction = 0.05;
  double max_fraction = 0.60;
  double noise = 0.04;    // std of per-pixel Gaussian noise
  double texture = 0.06;  // amplitude of the low-frequency background pattern
  double contrast = 0.35; // lesion darkening
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSample {
  Sample sample;
  std::vector<Ellipse> ellipses;
};

std::vector<SynthSample> synth_dataset(const SynthSpec& spec);

/// Copies `image` and paints contours: ground truth green, then prediction
/// blue. A contour pixel is a positive pixel with a negative 4-neighbour;
/// pixels outside the raster do not count as neighbours.
Image8 render_overlay(const Tensor& image, const Tensor& gt_mask, const Tensor& pred_mask);
void overlay_contours(const Tensor& image, const Tensor& gt_mask, const Tensor& pred_mask,
                      const std::filesystem::path& path);

}  // namespace iscf
