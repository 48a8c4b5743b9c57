#pragma once

#include <string>

#include "dmz/tensor.hpp"

namespace dmz::io {

// Tiles a (B,C,H,W) batch into a grid and writes a binary PGM (C=1) or PPM
// (C=3), mapping [-1,1] -> [0,255] with rounding half away from zero. A raw
// tensor sidecar (path + ".raw") keeps the exact floats.
void export_images(const Tensor& batch, int columns, const std::string& path);

// Lossless float64 tensor container with checksum.
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

// 8-bit image payload -> [-1,1] via x / 127.5 - 1.
Tensor ingest_u8(const std::vector<uint8_t>& pixels,
                 const std::vector<int64_t>& shape);

}  // namespace dmz::io
