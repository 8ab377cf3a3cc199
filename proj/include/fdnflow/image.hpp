#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "fdnflow/tensor.hpp"

namespace fdnflow {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// H x W scalar field with values in [0, 1].
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major

  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * width + j]; }
  double at(int i, int j) const {
    return values[static_cast<std::size_t>(i) * width + j];
  }

  static GrayImage zeros(int h, int w) {
    return {h, w, std::vector<double>(static_cast<std::size_t>(h) * w, 0.0)};
  }
};

// Displacement field w = (u, v), u along width, v along height
// (positive v points down the pixel-row axis).
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<double> u;
  std::vector<double> v;

  static FlowField zeros(int h, int w) {
    const std::size_t n = static_cast<std::size_t>(h) * w;
    return {h, w, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  }
};

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel
};

struct CircleSpec {
  double row = 0.0;
  double col = 0.0;
  double radius = 0.0;
  double intensity = 0.0;
  double du = 0.0;  // horizontal displacement, pixels
  double dv = 0.0;  // vertical displacement, pixels (positive = down)
};

// ---- tensor bridges ----

inline Tensor image_to_tensor(const GrayImage& img, bool requires_grad = false) {
  return Tensor::from_data({1, 1, img.height, img.width}, img.values,
                           requires_grad);
}

inline Tensor pair_to_tensor(const GrayImage& a, const GrayImage& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("pair_to_tensor: frame sizes differ");
  std::vector<double> data;
  data.reserve(2 * a.values.size());
  data.insert(data.end(), a.values.begin(), a.values.end());
  data.insert(data.end(), b.values.begin(), b.values.end());
  return Tensor::from_data({1, 2, a.height, a.width}, std::move(data));
}

inline Tensor flow_to_tensor(const FlowField& f) {
  std::vector<double> data;
  data.reserve(2 * f.u.size());
  data.insert(data.end(), f.u.begin(), f.u.end());
  data.insert(data.end(), f.v.begin(), f.v.end());
  return Tensor::from_data({1, 2, f.height, f.width}, std::move(data));
}

inline FlowField tensor_to_flow(const Tensor& t) {
  if (t.shape().size() != 4 || t.shape()[0] != 1 || t.shape()[1] != 2)
    throw std::invalid_argument("tensor_to_flow: expected 1x2xHxW");
  const int H = t.shape()[2], W = t.shape()[3];
  FlowField f = FlowField::zeros(H, W);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::copy_n(t.data().begin(), plane, f.u.begin());
  std::copy_n(t.data().begin() + plane, plane, f.v.begin());
  return f;
}

// ---- Shepp-Logan phantom ----

// Standard 10-ellipse phantom: (intensity, semi-axis a, semi-axis b,
// center x, center y, rotation degrees) on the unit square [-1,1]^2 with
// y pointing up.
inline const std::vector<std::array<double, 6>>& shepp_logan_ellipses() {
  static const std::vector<std::array<double, 6>> table = {
      {1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0},
      {-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0},
      {-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0},
      {-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0},
      {0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0},
      {0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0},
      {0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0},
      {0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0},
      {0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0},
      {0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0},
  };
  return table;
}

inline GrayImage shepp_logan(int size) {
  if (size < 16) throw std::invalid_argument("shepp_logan: size must be >= 16");
  GrayImage img = GrayImage::zeros(size, size);
  const auto& ellipses = shepp_logan_ellipses();
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      // pixel centers mapped onto [-1,1]^2, row 0 at the top (y = +1)
      const double x = (2.0 * j + 1.0) / size - 1.0;
      const double y = 1.0 - (2.0 * i + 1.0) / size;
      double val = 0.0;
      for (const auto& e : ellipses) {
        const double phi = e[5] * M_PI / 180.0;
        const double c = std::cos(phi), s = std::sin(phi);
        const double xr = c * (x - e[3]) + s * (y - e[4]);
        const double yr = -s * (x - e[3]) + c * (y - e[4]);
        if ((xr * xr) / (e[1] * e[1]) + (yr * yr) / (e[2] * e[2]) <= 1.0)
          val += e[0];
      }
      img.at(i, j) = std::clamp(val, 0.0, 1.0);
    }
  return img;
}

// ---- warping ----

inline double sample_bilinear_clamped(const GrayImage& img, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(img.height - 1));
  c = std::clamp(c, 0.0, static_cast<double>(img.width - 1));
  const int r0 = std::min(static_cast<int>(std::floor(r)), img.height - 2 >= 0
                                                               ? img.height - 2
                                                               : 0);
  const int c0 = std::min(static_cast<int>(std::floor(c)), img.width - 2 >= 0
                                                               ? img.width - 2
                                                               : 0);
  const int r1 = std::min(r0 + 1, img.height - 1);
  const int c1 = std::min(c0 + 1, img.width - 1);
  const double fr = r - r0, fc = c - c0;
  return (1 - fr) * ((1 - fc) * img.at(r0, c0) + fc * img.at(r0, c1)) +
         fr * ((1 - fc) * img.at(r1, c0) + fc * img.at(r1, c1));
}

// Backward warp: out(x) = I(x - w(x)), sampled bilinearly with boundary
// clamping, so that (I, warp_image(I, w)) satisfies brightness constancy
// under w where w is locally constant.
inline GrayImage warp_image(const GrayImage& img, const FlowField& flow) {
  if (img.height != flow.height || img.width != flow.width)
    throw std::invalid_argument("warp_image: shapes do not match");
  GrayImage out = GrayImage::zeros(img.height, img.width);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * img.width + j;
      out.at(i, j) =
          sample_bilinear_clamped(img, i - flow.v[idx], j - flow.u[idx]);
    }
  return out;
}

// ---- synthetic phantom pair ----

inline std::vector<CircleSpec> default_phantom_circles(int size,
                                                       double shift = 3.0) {
  const double r = size / 10.0;
  return {
      {size / 4.0, size / 2.0, r, 0.5, 0.0, -shift},   // upper circle, moving up
      {3.0 * size / 4.0, size / 2.0, r, 0.75, 0.0, shift},  // lower, moving down
  };
}

struct PhantomPair {
  GrayImage frame1;
  GrayImage frame2;
  FlowField gt;
};

inline PhantomPair make_phantom_pair(int size,
                                     const std::vector<CircleSpec>& circles) {
  for (const auto& c : circles) {
    if (c.row - c.radius < 0 || c.col - c.radius < 0 ||
        c.row + c.radius > size - 1 || c.col + c.radius > size - 1)
      throw std::invalid_argument("make_phantom_pair: circle outside the image");
    if (c.intensity < 0.0 || c.intensity > 1.0)
      throw std::invalid_argument("make_phantom_pair: intensity outside [0,1]");
  }
  for (std::size_t a = 0; a < circles.size(); ++a)
    for (std::size_t b = a + 1; b < circles.size(); ++b) {
      const double dr = circles[a].row - circles[b].row;
      const double dc = circles[a].col - circles[b].col;
      if (std::sqrt(dr * dr + dc * dc) < circles[a].radius + circles[b].radius)
        throw std::invalid_argument("make_phantom_pair: circles overlap");
    }

  PhantomPair out;
  out.frame1 = shepp_logan(size);
  out.gt = FlowField::zeros(size, size);
  for (const auto& c : circles) {
    // A moving circle is painted as a linear brightness wedge along its
    // displacement direction, rising from the trailing edge to a peak at
    // the leading edge, with the outermost leading pixel of each chord
    // dropped back to the background level. On a linear ramp the
    // first-order brightness-constancy expansion is exact, so every
    // interior pixel's data term is minimized at the true displacement;
    // the one-pixel drop makes even the high-contrast leading boundary
    // rows satisfy the same relation under the support-clipped warp
    // instead of dragging the flow toward half the true motion, which is
    // what every radially symmetric bump profile does. The lateral sides
    // stay sharp on purpose: a brightness edge parallel to the motion is
    // exactly brightness-constant under the displacement, so it only
    // anchors the cross-motion flow component at zero alongside the
    // circle. Static circles fall back to a radial smoothstep dome.
    const double disp = std::sqrt(c.du * c.du + c.dv * c.dv);
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) {
        const double dr = i - c.row, dc = j - c.col;
        const double d = std::sqrt(dr * dr + dc * dc);
        if (d <= c.radius) {
          double alpha;
          if (disp > 0.0) {
            // coordinates along / across the motion direction
            const double par = (dr * c.dv + dc * c.du) / disp;
            const double perp = (dr * c.du - dc * c.dv) / disp;
            const double half_chord = std::sqrt(
                std::max(c.radius * c.radius - perp * perp, 0.0));
            if (par > half_chord - 1.0) {
              alpha = 1.0 / (2.0 * half_chord + 1.0);  // leading-edge drop
            } else {
              alpha = (par + half_chord + 1.0) / (2.0 * half_chord + 1.0);
            }
          } else {
            const double t = std::clamp((c.radius - d) / c.radius, 0.0, 1.0);
            alpha = t * t * (3.0 - 2.0 * t);
          }
          out.frame1.at(i, j) =
              (1.0 - alpha) * out.frame1.at(i, j) + alpha * c.intensity;
          const std::size_t idx = static_cast<std::size_t>(i) * size + j;
          out.gt.u[idx] = c.du;
          out.gt.v[idx] = c.dv;
        }
      }
  }
  out.frame2 = warp_image(out.frame1, out.gt);
  return out;
}

// ---- raster I/O ----

namespace detail {

inline int read_pnm_token(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw FormatError("malformed PNM header");
  return value;
}

}  // namespace detail

// Reads binary PGM (P5) directly or binary PPM (P6) by equal-weight
// channel average; 8-bit samples, values scaled to [0,1].
inline GrayImage load_grayscale(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image file: " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5" && magic != "P6")
    throw FormatError("unsupported raster format in " + path);
  const int w = detail::read_pnm_token(in);
  const int h = detail::read_pnm_token(in);
  const int maxval = detail::read_pnm_token(in);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw FormatError("unsupported PNM header in " + path);
  in.get();  // single whitespace after maxval
  const int channels = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw FormatError("truncated PNM payload in " + path);
  GrayImage img = GrayImage::zeros(h, w);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    double s = 0.0;
    for (int c = 0; c < channels; ++c) s += raw[i * channels + c];
    img.values[i] = s / (channels * static_cast<double>(maxval));
  }
  return img;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write image file: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(img.values.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(img.values[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write image file: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

namespace detail {

inline void png_chunk(std::ofstream& out, const char* tag,
                      const std::uint8_t* data, std::size_t len) {
  std::uint8_t head[8];
  const std::uint32_t n = static_cast<std::uint32_t>(len);
  head[0] = n >> 24;
  head[1] = (n >> 16) & 0xff;
  head[2] = (n >> 8) & 0xff;
  head[3] = n & 0xff;
  std::memcpy(head + 4, tag, 4);
  out.write(reinterpret_cast<const char*>(head), 8);
  if (len) out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
  std::uint32_t crc = crc32(0, head + 4, 4);
  if (len) crc = crc32(crc, data, static_cast<uInt>(len));
  std::uint8_t tail[4] = {static_cast<std::uint8_t>(crc >> 24),
                          static_cast<std::uint8_t>((crc >> 16) & 0xff),
                          static_cast<std::uint8_t>((crc >> 8) & 0xff),
                          static_cast<std::uint8_t>(crc & 0xff)};
  out.write(reinterpret_cast<const char*>(tail), 4);
}

}  // namespace detail

// Minimal 8-bit RGB PNG writer (zlib-deflated, filter 0 scanlines).
inline void write_png(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write image file: " + path);
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::uint8_t ihdr[13];
  auto put32 = [](std::uint8_t* p, std::uint32_t v) {
    p[0] = v >> 24;
    p[1] = (v >> 16) & 0xff;
    p[2] = (v >> 8) & 0xff;
    p[3] = v & 0xff;
  };
  put32(ihdr, static_cast<std::uint32_t>(img.width));
  put32(ihdr + 4, static_cast<std::uint32_t>(img.height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // truecolor
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  detail::png_chunk(out, "IHDR", ihdr, 13);

  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw((stride + 1) * img.height);
  for (int i = 0; i < img.height; ++i) {
    raw[i * (stride + 1)] = 0;  // filter: none
    std::memcpy(raw.data() + i * (stride + 1) + 1, img.pixels.data() + i * stride,
                stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> deflated(bound);
  if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_BEST_COMPRESSION) != Z_OK)
    throw FormatError("PNG deflate failed for " + path);
  detail::png_chunk(out, "IDAT", deflated.data(), bound);
  detail::png_chunk(out, "IEND", nullptr, 0);
}

}  // namespace fdnflow
