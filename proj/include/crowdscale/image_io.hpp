#pragma once

// Binary PPM (P6) / PGM (P5) images, 8-bit or 16-bit.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "crowdscale/error.hpp"
#include "crowdscale/grid.hpp"
#include "crowdscale/tensor.hpp"

namespace crowdscale {

struct Image {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t channels = 3;       // 1 (PGM) or 3 (PPM)
  std::vector<std::uint8_t> data;  // interleaved, row-major

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * w + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * w + x) * channels + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline long long read_pnm_int(std::istream& is) {
  int ch = is.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = is.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = is.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw FormatError("PNM: malformed header");
  long long v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    ch = is.get();
  }
  return v;  // the single whitespace after the value has been consumed
}

}  // namespace detail

inline Image read_pnm(std::istream& is) {
  char magic[2];
  if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw FormatError("PNM: only binary P5/P6 images are supported");
  }
  Image img;
  img.channels = magic[1] == '6' ? 3 : 1;
  const long long w = detail::read_pnm_int(is);
  const long long h = detail::read_pnm_int(is);
  const long long maxval = detail::read_pnm_int(is);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw FormatError("PNM: bad dims or maxval");
  img.w = static_cast<std::size_t>(w);
  img.h = static_cast<std::size_t>(h);
  const std::size_t count = img.w * img.h * img.channels;
  img.data.resize(count);
  if (maxval < 256) {
    if (!is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(count))) {
      throw FormatError("PNM: truncated pixel data");
    }
    if (maxval != 255) {
      for (auto& v : img.data) v = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
    }
  } else {
    std::vector<unsigned char> raw(count * 2);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      throw FormatError("PNM: truncated pixel data");
    }
    for (std::size_t i = 0; i < count; ++i) {
      const long long v = (raw[2 * i] << 8) | raw[2 * i + 1];
      img.data[i] = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
    }
  }
  return img;
}

inline void write_pnm(std::ostream& os, const Image& img) {
  os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.w << ' ' << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
}

inline Image load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open image '" + path + "'");
  try {
    return read_pnm(is);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void save_image(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_pnm(os, img);
}

// [1, 3, h, w] with values in [0, 1]; grayscale is replicated to 3 channels.
template <typename T>
Tensor4<T> image_to_tensor(const Image& img) {
  Tensor4<T> t(1, 3, img.h, img.w);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src = img.channels == 3 ? c : 0;
    for (std::size_t y = 0; y < img.h; ++y) {
      for (std::size_t x = 0; x < img.w; ++x) t.at(0, c, y, x) = static_cast<T>(img.at(y, x, src)) / T{255};
    }
  }
  return t;
}

// Binary mask from a PGM: 1 where the value is >= 128.
inline RoiMask mask_from_image(const Image& img) {
  RoiMask m(img.h, img.w, 0);
  for (std::size_t y = 0; y < img.h; ++y) {
    for (std::size_t x = 0; x < img.w; ++x) m(y, x) = img.at(y, x, 0) >= 128 ? 1 : 0;
  }
  return m;
}

inline Image mask_to_image(const RoiMask& m) {
  Image img;
  img.h = m.h;
  img.w = m.w;
  img.channels = 1;
  img.data.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) img.data[i] = m.values[i] != 0 ? 255 : 0;
  return img;
}

inline RoiMask load_mask(const std::string& path) { return mask_from_image(load_image(path)); }

}  // namespace crowdscale
