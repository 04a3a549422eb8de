#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace gma::binary {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written little-endian; add byte swapping for this target");

inline void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_f32(std::string& out, float v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

/// Bounds-checked little-endian cursor over a byte buffer.
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool has(size_t n) const { return pos_ + n <= bytes_.size(); }
  size_t position() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }
  bool skip(size_t n) {
    if (!has(n)) return false;
    pos_ += n;
    return true;
  }

  template <typename T>
  bool get(T& v) {
    if (!has(sizeof(T))) return false;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return true;
  }

 private:
  std::string_view bytes_;
  size_t pos_ = 0;
};

}  // namespace gma::binary
