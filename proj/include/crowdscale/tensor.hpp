#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "crowdscale/error.hpp"

namespace crowdscale {

// (batch, channel, height, width)
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s.n << "," << s.c << "," << s.h << "," << s.w << ")";
  return os.str();
}

// Dense row-major rank-4 array with an optional gradient buffer of the same
// shape. The gradient is allocated on first use.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape shape, T fill = T{0})
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor4(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
    }
  }
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{0})
      : Tensor4(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) { return data_[index(b, ch, y, x)]; }
  const T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return data_[index(b, ch, y, x)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  // Pointer to the (b, ch) plane.
  T* plane(std::size_t b, std::size_t ch) { return data_.data() + (b * shape_.c + ch) * shape_.plane(); }
  const T* plane(std::size_t b, std::size_t ch) const {
    return data_.data() + (b * shape_.c + ch) * shape_.plane();
  }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }
  bool has_grad() const { return !grad_.empty(); }
  std::vector<T>& grad() {
    if (grad_.empty()) grad_.assign(data_.size(), T{0});
    return grad_;
  }
  const std::vector<T>& grad() const { return grad_; }
  void zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T{0});
  }
  void drop_grad() { grad_.clear(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  T sum() const {
    T s{0};
    for (T v : data_) s += v;
    return s;
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    out.set_requires_grad(requires_grad_);
    return out;
  }

  void reshape(Shape s) {
    if (s.numel() != data_.size()) throw DimensionError("reshape to " + to_string(s) + " changes element count");
    shape_ = s;
    if (!grad_.empty()) grad_.resize(s.numel());
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

// ---------------------------------------------------------------------------
// TNSR binary format: "TNSR 1 <n> <c> <h> <w>\n" then little-endian float32.

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

inline void write_f32_le(std::ostream& os, float f) {
  const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(f));
  char bytes[4];
  std::memcpy(bytes, &bits, 4);
  os.write(bytes, 4);
}

inline float read_f32_le(std::istream& is) {
  char bytes[4];
  if (!is.read(bytes, 4)) throw FormatError("unexpected end of binary payload");
  std::uint32_t bits;
  std::memcpy(&bits, bytes, 4);
  return std::bit_cast<float>(to_little_endian(bits));
}

}  // namespace detail

template <typename T>
void write_tnsr(std::ostream& os, const Tensor4<T>& t) {
  const Shape& s = t.shape();
  os << "TNSR 1 " << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) detail::write_f32_le(os, static_cast<float>(t[i]));
}

template <typename T = float>
Tensor4<T> read_tnsr(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw FormatError("TNSR: missing header line");
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  long long n = -1, c = -1, h = -1, w = -1;
  hs >> magic >> version >> n >> c >> h >> w;
  if (magic != "TNSR" || version != 1 || hs.fail() || n < 0 || c < 0 || h < 0 || w < 0) {
    throw FormatError("TNSR: malformed header '" + header + "'");
  }
  Tensor4<T> t(Shape{static_cast<std::size_t>(n), static_cast<std::size_t>(c), static_cast<std::size_t>(h),
                     static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(detail::read_f32_le(is));
  return t;
}

template <typename T>
void save_tnsr(const std::string& path, const Tensor4<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_tnsr(os, t);
}

template <typename T = float>
Tensor4<T> load_tnsr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  try {
    return read_tnsr<T>(is);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace crowdscale
