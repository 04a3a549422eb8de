#include "gma/image.hpp"

#include <cstdio>
#include <fstream>
#include <memory>

#include <fmt/format.h>
#include <png.h>

#include "gma/errors.hpp"

namespace gma {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError(fmt::format("cannot open {}", path.string()));
  return f;
}

}  // namespace

FrameImage read_png(const fs::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng initialisation failed");
  }
  FrameImage image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(fmt::format("cannot decode PNG {}", path.string()));
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  image = FrameImage(static_cast<int>(png_get_image_width(png, info)),
                     static_cast<int>(png_get_image_height(png, info)));
  rows.resize(static_cast<size_t>(image.height));
  for (int y = 0; y < image.height; ++y) rows[static_cast<size_t>(y)] = image.at(0, y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const fs::path& path, const FrameImage& image) {
  if (!image.valid()) throw DimensionMismatch("cannot write an empty frame");
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(static_cast<size_t>(image.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError(fmt::format("cannot encode PNG {}", path.string()));
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 1);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(image.at(0, y));
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<FrameImage> read_png_sequence(const fs::path& dir, int count) {
  std::vector<FrameImage> frames;
  frames.reserve(static_cast<size_t>(count));
  for (int i = 1; i <= count; ++i) {
    frames.push_back(read_png(dir / fmt::format("frame_{:06d}.png", i)));
  }
  return frames;
}

void write_png_sequence(const fs::path& dir, const std::vector<FrameImage>& frames) {
  fs::create_directories(dir);
  for (size_t i = 0; i < frames.size(); ++i) {
    write_png(dir / fmt::format("frame_{:06d}.png", i + 1), frames[i]);
  }
}

std::vector<FrameImage> read_raw_rgb(const fs::path& path, int width, int height, int count) {
  if (width <= 0 || height <= 0) throw DimensionMismatch("raw stream needs positive dimensions");
  const auto frame_bytes = static_cast<std::uintmax_t>(width) * height * 3;
  const auto size = fs::file_size(path);
  if (size != frame_bytes * static_cast<std::uintmax_t>(count)) {
    throw DimensionMismatch(fmt::format("{} holds {} bytes, expected {} frames of {}x{}",
                                        path.string(), size, count, width, height));
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<FrameImage> frames;
  frames.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    FrameImage f(width, height);
    in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(frame_bytes));
    if (!in) throw DataError(fmt::format("short read in {}", path.string()));
    frames.push_back(std::move(f));
  }
  return frames;
}

void write_raw_rgb(const fs::path& path, const std::vector<FrameImage>& frames) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& f : frames) {
    out.write(reinterpret_cast<const char*>(f.pixels.data()),
              static_cast<std::streamsize>(f.pixels.size()));
  }
  if (!out) throw DataError(fmt::format("failed writing {}", path.string()));
}

}  // namespace gma
