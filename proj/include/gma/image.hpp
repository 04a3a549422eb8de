#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gma {

/// Row-major RGB24 frame.
struct FrameImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  FrameImage() = default;
  FrameImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, fill) {}

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
  bool valid() const { return width > 0 && height > 0 && pixels.size() == static_cast<size_t>(width) * height * 3; }

  friend bool operator==(const FrameImage&, const FrameImage&) = default;
};

FrameImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const FrameImage& image);

/// Reads `frame_%06d.png` files (numbered from 1) in ascending order.
std::vector<FrameImage> read_png_sequence(const std::filesystem::path& dir, int count);
void write_png_sequence(const std::filesystem::path& dir, const std::vector<FrameImage>& frames);

/// Headerless RGB24 stream: `count` frames of `width*height*3` bytes.
std::vector<FrameImage> read_raw_rgb(const std::filesystem::path& path, int width, int height,
                                     int count);
void write_raw_rgb(const std::filesystem::path& path, const std::vector<FrameImage>& frames);

}  // namespace gma
