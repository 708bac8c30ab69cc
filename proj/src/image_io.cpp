#include "kdiff/image_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

#include "kdiff/error.hpp"

namespace kdiff {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace

unsigned char to_byte(double v) {
  const double scaled = std::clamp((v + 1.0) * 127.5, 0.0, 255.0);
  return static_cast<unsigned char>(std::lround(scaled));
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    fail(ErrorKind::ShapeMismatch, "PPM needs an [h, w, 3] image, got " + shape_string(image.shape()));
  }
  std::string bytes(image.numel(), '\0');
  for (std::size_t i = 0; i < image.numel(); ++i) bytes[i] = static_cast<char>(to_byte(image[i]));
  auto out = open_out(path);
  out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  finish(out, path);
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::DataError, "cannot read " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w == 0 || h == 0) fail(ErrorKind::DataError, path.string() + " is not an 8-bit P6");
  in.get();
  std::string bytes(w * h * 3, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) fail(ErrorKind::DataError, path.string() + " truncated");
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<unsigned char>(bytes[i]) / 127.5 - 1.0;
  return img;
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) fail(ErrorKind::ShapeMismatch, "PGM needs a 2-D map, got " + shape_string(map.shape()));
  double peak = 0.0;
  for (double v : map.data()) peak = std::max(peak, v);
  std::string bytes(map.numel(), '\0');
  for (std::size_t i = 0; i < map.numel(); ++i) {
    const double v = peak > 0.0 ? std::clamp(map[i] / peak, 0.0, 1.0) : 0.0;
    bytes[i] = static_cast<char>(std::lround(v * 255.0));
  }
  auto out = open_out(path);
  out << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  finish(out, path);
}

void write_csv(const std::filesystem::path& path, const Tensor& matrix) {
  if (matrix.rank() != 2) fail(ErrorKind::ShapeMismatch, "CSV needs a 2-D tensor, got " + shape_string(matrix.shape()));
  std::string text;
  char buf[32];
  for (std::size_t r = 0; r < matrix.dim(0); ++r) {
    for (std::size_t c = 0; c < matrix.dim(1); ++c) {
      if (c) text += ',';
      const auto res = std::to_chars(buf, buf + sizeof buf, matrix.at(r, c));
      text.append(buf, res.ptr);
    }
    text += '\n';
  }
  auto out = open_out(path);
  out << text;
  finish(out, path);
}

}  // namespace kdiff
