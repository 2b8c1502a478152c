#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "docrep/tensor.hpp"

namespace docrep {

/// 8-bit RGB page raster, interleaved row-major (HWC).
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(int w, int h, std::array<std::uint8_t, 3> fill = {255, 255, 255});

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }

  /// Fills [x1,x2) x [y1,y2), clipped to the raster.
  void fill_rect(int x1, int y1, int x2, int y2, std::array<std::uint8_t, 3> rgb);

  bool operator==(const Raster&) const = default;
};

/// Channel-first real-valued view (3, height, width) in [0, 1].
template <typename T>
Tensor<T> raster_to_tensor(const Raster& r);

Raster read_png(const std::filesystem::path& path);
void write_png(const Raster& r, const std::filesystem::path& path);

/// Bilinear resize; identity when the size already matches.
Raster resize(const Raster& r, int width, int height);

}  // namespace docrep
