#include "image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "error.hpp"

namespace alearn::data {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

class PgmReader {
 public:
  explicit PgmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t next_number() {
    skip_space_and_comments();
    std::size_t value = 0;
    bool any = false;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1u << 24)) fail(ErrorCode::Data, "PGM header value too large");
      ++pos_;
      any = true;
    }
    if (!any) fail(ErrorCode::Data, "malformed PGM header");
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size()) fail(ErrorCode::Data, "PGM raster missing");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    fail(ErrorCode::Data, "not a binary PGM (P5) file");
  }
  PgmReader reader(bytes);
  const std::size_t width = reader.next_number();
  const std::size_t height = reader.next_number();
  const std::size_t maxval = reader.next_number();
  if (width == 0 || height == 0) fail(ErrorCode::Data, "PGM has zero size");
  if (maxval == 0 || maxval > 65535) fail(ErrorCode::Data, "PGM maxval out of range");
  const std::size_t offset = reader.raster_offset();
  const std::size_t bytes_per_pixel = maxval > 255 ? 2 : 1;
  if (bytes.size() < offset + width * height * bytes_per_pixel) {
    fail(ErrorCode::Data, "PGM raster truncated");
  }

  GrayImage image(height, width);
  for (std::size_t i = 0; i < width * height; ++i) {
    std::size_t v;
    if (bytes_per_pixel == 1) {
      v = bytes[offset + i];
    } else {
      v = (std::size_t{bytes[offset + 2 * i]} << 8) | bytes[offset + 2 * i + 1];
    }
    image.pixels[i] = static_cast<std::uint8_t>(
        maxval == 255 ? v : std::min<std::size_t>(255, (v * 255 + maxval / 2) / maxval));
  }
  return image;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  std::ostringstream header;
  header << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    fail(ErrorCode::Data, "not a PNG file");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    const std::string message = png.message;
    png_image_free(&png);
    fail(ErrorCode::Data, "PNG: " + message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, rgb.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    fail(ErrorCode::Data, "PNG: " + message);
  }

  GrayImage image(png.height, png.width);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const unsigned sum = rgb[3 * i] + rgb[3 * i + 1] + rgb[3 * i + 2];
    image.pixels[i] = static_cast<std::uint8_t>((sum + 1) / 3);
  }
  return image;
}

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0,
                                 nullptr)) {
    fail(ErrorCode::Internal, std::string("PNG encode: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0,
                                 nullptr)) {
    fail(ErrorCode::Internal, std::string("PNG encode: ") + png.message);
  }
  out.resize(size);
  return out;
}

GrayImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  fail(ErrorCode::Data, "unsupported image format (expected PNG or binary PGM)");
}

GrayImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_image(bytes);
}

GrayImage resize_bilinear(const GrayImage& image, std::size_t height,
                          std::size_t width) {
  if (height == 0 || width == 0) fail(ErrorCode::InvalidArgument, "resize to zero size");
  if (image.height == height && image.width == width) return image;
  GrayImage out(height, width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(image.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(image.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = image.at(y0, x0) * (1 - wx) + image.at(y0, x1) * wx;
      const double bottom = image.at(y1, x0) * (1 - wx) + image.at(y1, x1) * wx;
      out.at(y, x) = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bottom * wy));
    }
  }
  return out;
}

}  // namespace alearn::data
