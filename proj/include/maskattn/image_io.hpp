#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskattn/tensor.hpp"

// Binary PPM (P6) and PGM (P5) files, 8 bits per channel. Readers exist so
// tests can verify what the writers produced.
namespace maskattn::img {

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 3 for PPM, 1 for PGM
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

// [3,h,w] tensor with values in [0,1] -> interleaved bytes; out-of-range
// values are clamped, then mapped via round(v * 255)
Image8 planes_to_rgb8(const Tensor& t);

// latent in [-1,1] -> [0,1] image; v = clamp((z + 1) / 2)
Tensor latent_to_image(const Tensor& z);

void write_ppm(const std::string& path, const Image8& im);
void write_pgm(const std::string& path, const Image8& im);
Image8 read_ppm(const std::string& path);
Image8 read_pgm(const std::string& path);

}  // namespace maskattn::img
