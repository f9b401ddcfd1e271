#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace alearn::data {

// 8-bit single-channel image, row-major.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Binary PGM (P5). 16-bit files are scaled down to 8 bits.
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);

// Color and alpha are folded to gray by averaging the color channels.
GrayImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const GrayImage& image);

// Dispatches on the file signature.
GrayImage decode_image(std::span<const std::uint8_t> bytes);
GrayImage read_image(const std::filesystem::path& path);

GrayImage resize_bilinear(const GrayImage& image, std::size_t height,
                          std::size_t width);

}  // namespace alearn::data
