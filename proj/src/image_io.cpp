#include "maskattn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace maskattn::img {

namespace {

std::uint8_t to_byte(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

void write_netpbm(const std::string& path, const Image8& im, int channels, const char* magic) {
  if (im.channels != channels)
    throw std::invalid_argument(std::string("write ") + magic + ": image has " +
                                std::to_string(im.channels) + " channels, need " +
                                std::to_string(channels));
  std::size_t need = static_cast<std::size_t>(im.width) * im.height * channels;
  if (im.width <= 0 || im.height <= 0 || im.pixels.size() != need)
    throw std::invalid_argument(std::string("write ") + magic + ": bad dimensions " +
                                std::to_string(im.width) + "x" + std::to_string(im.height));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << magic << "\n" << im.width << " " << im.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(im.pixels.data()),
            static_cast<std::streamsize>(im.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Image8 read_netpbm(const std::string& path, int channels, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header;
  in >> header;
  if (header != magic)
    throw std::runtime_error(path + ": expected " + magic + " header, got \"" + header + "\"");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0) throw std::runtime_error(path + ": bad dimensions");
  if (maxval != 255) throw std::runtime_error(path + ": maxval must be 255");
  in.get();  // single whitespace byte after maxval
  Image8 im;
  im.width = w;
  im.height = h;
  im.channels = channels;
  im.pixels.resize(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(im.pixels.data()),
          static_cast<std::streamsize>(im.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(im.pixels.size()))
    throw std::runtime_error(path + ": truncated pixel data");
  return im;
}

}  // namespace

Image8 planes_to_rgb8(const Tensor& t) {
  if (t.ndim() != 3 || t.dim(0) != 3)
    throw std::invalid_argument("planes_to_rgb8: need [3,h,w], got " + shape_str(t.shape()));
  int h = t.dim(1), w = t.dim(2);
  Image8 im;
  im.width = w;
  im.height = h;
  im.channels = 3;
  im.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  std::size_t plane = static_cast<std::size_t>(w) * h;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) im.pixels[i * 3 + c] = to_byte(t.data()[c * plane + i]);
  return im;
}

Tensor latent_to_image(const Tensor& z) {
  Tensor out = Tensor::zeros(z.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = std::clamp((z.data()[i] + 1.0) / 2.0, 0.0, 1.0);
  return out;
}

void write_ppm(const std::string& path, const Image8& im) { write_netpbm(path, im, 3, "P6"); }
void write_pgm(const std::string& path, const Image8& im) { write_netpbm(path, im, 1, "P5"); }
Image8 read_ppm(const std::string& path) { return read_netpbm(path, 3, "P6"); }
Image8 read_pgm(const std::string& path) { return read_netpbm(path, 1, "P5"); }

}  // namespace maskattn::img
