#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crowdscale/error.hpp"
#include "crowdscale/tensor.hpp"

namespace crowdscale {

// Single-channel row-major 2-D field.
template <typename T>
struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{}) : h(rows), w(cols), values(rows * cols, fill) {}

  T& operator()(std::size_t y, std::size_t x) { return values[y * w + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return values[y * w + x]; }
  std::size_t size() const { return values.size(); }
  template <typename U>
  bool same_dims(const Grid<U>& o) const { return h == o.h && w == o.w; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

// People per pixel; integrates to a count.
using DensityMap = Grid<double>;
// Binary region of interest, values in {0, 1}.
using RoiMask = Grid<std::uint8_t>;

template <typename T, typename S>
Tensor4<T> to_tensor(const Grid<S>& g) {
  Tensor4<T> t(1, 1, g.h, g.w);
  for (std::size_t i = 0; i < g.size(); ++i) t[i] = static_cast<T>(g.values[i]);
  return t;
}

template <typename S, typename T>
Grid<S> to_grid(const Tensor4<T>& t) {
  if (t.n() != 1 || t.c() != 1) {
    throw DimensionError("expected a single-channel map, got " + to_string(t.shape()));
  }
  Grid<S> g(t.h(), t.w());
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = static_cast<S>(t[i]);
  return g;
}

inline void save_density(const std::string& path, const DensityMap& d) { save_tnsr(path, to_tensor<double>(d)); }

inline DensityMap load_density(const std::string& path) { return to_grid<double>(load_tnsr<double>(path)); }

}  // namespace crowdscale
