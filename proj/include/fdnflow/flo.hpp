#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fdnflow/image.hpp"

namespace fdnflow {

// Middlebury .flo interchange: little-endian float magic 202021.25,
// int32 width, int32 height, then row-major interleaved (u, v) floats.
inline constexpr float kFloMagic = 202021.25f;
// Values at or above this are "unknown" and excluded from metrics.
inline constexpr double kFlowUnknown = 1e9;

inline void write_flo(const std::string& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write flow file: " + path);
  const float magic = kFloMagic;
  const std::int32_t w = flow.width, h = flow.height;
  out.write(reinterpret_cast<const char*>(&magic), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  std::vector<float> row(static_cast<std::size_t>(w) * 2);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * w + j;
      row[2 * j] = static_cast<float>(flow.u[idx]);
      row[2 * j + 1] = static_cast<float>(flow.v[idx]);
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * 4));
  }
  if (!out) throw FormatError("short write on flow file: " + path);
}

inline FlowField read_flo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open flow file: " + path);
  float magic = 0.0f;
  std::int32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&magic), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!in || magic != kFloMagic)
    throw FormatError("bad .flo magic in " + path);
  if (w < 1 || h < 1) throw FormatError("bad .flo extents in " + path);
  std::vector<float> payload(static_cast<std::size_t>(w) * h * 2);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(payload.size() * 4))
    throw FormatError("truncated .flo payload in " + path);
  FlowField flow = FlowField::zeros(h, w);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    flow.u[i] = payload[2 * i];
    flow.v[i] = payload[2 * i + 1];
  }
  return flow;
}

// 1 = pixel has known ground truth.
inline std::vector<std::uint8_t> known_flow_mask(const FlowField& flow) {
  std::vector<std::uint8_t> mask(flow.u.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = (std::abs(flow.u[i]) < kFlowUnknown &&
               std::abs(flow.v[i]) < kFlowUnknown)
                  ? 1
                  : 0;
  return mask;
}

}  // namespace fdnflow
