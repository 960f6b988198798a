#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recondet/common.hpp"

namespace recondet {

// Square RGB raster, planar channel layout (R plane, G plane, B plane),
// values normalized to [-1, 1]. The one sample carrier of the pipeline.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // 3 * height * width, planar

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, 0.f) {}

  float& at(int ch, int y, int x) {
    return data[(static_cast<std::size_t>(ch) * height + y) * width + x];
  }
  float at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * height + y) * width + x];
  }
  std::size_t size() const { return data.size(); }
};

// 8-bit value -> [-1, 1]; exact affine map, v/255*2-1.
float normalize_u8(std::uint8_t v);
// [-1, 1] -> 8-bit with round-half-up and clipping; inverse of normalize_u8
// on all 256 grid points.
std::uint8_t denormalize_u8(float x);

// Perturbations used by the robustness study. `level` selects a fixed
// parameter: blur sigma in {1,2,3}, jpeg quality {1:90, 2:60, 3:30}.
// Level 0 is accepted for gaussian_blur only and is the identity (the
// baseline grid point of a sweep).
enum class PerturbKind { GaussianBlur, Jpeg };

struct PerturbSpec {
  PerturbKind kind = PerturbKind::GaussianBlur;
  int level = 1;

  void validate() const;
  std::string tag() const;  // "none" is represented by an empty grid, not here
};

int jpeg_quality_for_level(int level);

// Decodes a PNG or JPEG file, converts to [-1, 1] RGB and resizes (bilinear)
// to a square target_size x target_size image.
Image load_image(const std::string& path, int target_size);

// Same decode at the file's own resolution. 16-bit PNGs keep their full
// precision, which is what lets reconstruction caches round-trip exactly.
Image load_image_native(const std::string& path);

// Lossless PNG writers. bit_depth 8 stores round((x+1)/2*255); 16 stores
// round((x+1)/2*65535). Reconstruction caches use 16 bits so cached values
// round-trip bit-exactly against snap_u16-quantized outputs.
void save_png(const Image& img, const std::string& path, int bit_depth = 8);
void save_jpeg(const Image& img, const std::string& path, int quality);

// Convolution with a normalized discrete Gaussian, radius ceil(3*sigma),
// symmetric (edge-mirroring) padding, output clipped to [-1, 1].
Image gaussian_blur(const Image& img, double sigma);

// Encode to JPEG at the level's quality and decode back.
Image jpeg_compress(const Image& img, int level);

// Bilinear resampling to a square size (half-pixel centers).
Image resize(const Image& img, int size);

Image apply_perturbation(const Image& img, const PerturbSpec& spec);

// Snaps every value to the 16-bit storage grid used by reconstruction
// outputs, after clipping to [-1, 1].
void snap_u16(Image& img);

double mse(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);

}  // namespace recondet
