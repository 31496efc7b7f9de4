#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "taco/errors.hpp"

namespace taco {

using Extent3 = std::array<std::size_t, 3>;  // (z, y, x)

inline std::string extent_str(const Extent3& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

// Dense z-major scalar field.
template <class T>
struct Grid3 {
  Extent3 shape{};
  std::vector<T> data;

  Grid3() = default;
  explicit Grid3(Extent3 s, T fill = T{}) : shape(s), data(s[0] * s[1] * s[2], fill) {
    if (s[0] == 0 || s[1] == 0 || s[2] == 0) throw DimensionError("zero volume extent");
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z * shape[1] + y) * shape[2] + x;
  }
  T& operator()(std::size_t z, std::size_t y, std::size_t x) { return data[index(z, y, x)]; }
  const T& operator()(std::size_t z, std::size_t y, std::size_t x) const {
    return data[index(z, y, x)];
  }
  bool operator==(const Grid3&) const = default;
};

// Intensities are kept as doubles in memory but always hold float32-representable
// values, so that writing and reading a .f32 file is lossless.
using Volume = Grid3<double>;
using LabelVolume = Grid3<std::uint16_t>;

}  // namespace taco
