#include "dmz/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "dmz/checkpoint.hpp"
#include "dmz/errors.hpp"

namespace dmz::io {

namespace {

constexpr char kTensorMagic[8] = {'D', 'M', 'Z', 'T', 'E', 'N', 'S', '\0'};

uint8_t quantize(double v) {
    double mapped = (std::clamp(v, -1.0, 1.0) + 1.0) * 127.5;
    // round half away from zero (mapped is nonnegative here)
    return static_cast<uint8_t>(std::floor(mapped + 0.5));
}

}  // namespace

void export_images(const Tensor& batch, int columns, const std::string& path) {
    if (batch.shape.size() != 4 || batch.shape[0] == 0)
        throw ShapeError("export_images: expected nonempty (B,C,H,W), got " +
                         batch.shape_str());
    const int64_t b = batch.shape[0], c = batch.shape[1];
    const int64_t h = batch.shape[2], w = batch.shape[3];
    if (c != 1 && c != 3)
        throw ConfigError("export_images: only 1- or 3-channel batches");
    if (columns < 1) throw ConfigError("export_images: columns must be >= 1");
    int64_t cols = std::min<int64_t>(columns, b);
    int64_t rows = (b + cols - 1) / cols;
    int64_t gw = cols * w, gh = rows * h;

    std::string bytes;
    bytes += (c == 1 ? "P5\n" : "P6\n");
    bytes += std::to_string(gw) + " " + std::to_string(gh) + "\n255\n";
    std::string pix(static_cast<size_t>(gw * gh * c), '\0');
    for (int64_t i = 0; i < b; ++i) {
        int64_t oy = (i / cols) * h, ox = (i % cols) * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                for (int64_t ch = 0; ch < c; ++ch)
                    pix[static_cast<size_t>(((oy + y) * gw + ox + x) * c + ch)] =
                        static_cast<char>(quantize(
                            batch.data[static_cast<size_t>(
                                ((i * c + ch) * h + y) * w + x)]));
    }
    bytes += pix;
    write_file_atomic(path, bytes);
    save_tensor(batch, path + ".raw");
}

void save_tensor(const Tensor& t, const std::string& path) {
    std::string bytes(kTensorMagic, 8);
    uint64_t rank = t.shape.size();
    bytes.append(reinterpret_cast<const char*>(&rank), sizeof rank);
    for (int64_t d : t.shape) {
        uint64_t u = static_cast<uint64_t>(d);
        bytes.append(reinterpret_cast<const char*>(&u), sizeof u);
    }
    bytes.append(reinterpret_cast<const char*>(t.data.data()),
                 t.data.size() * sizeof(double));
    uint32_t c = crc32(reinterpret_cast<const uint8_t*>(bytes.data()),
                       bytes.size());
    bytes.append(reinterpret_cast<const char*>(&c), sizeof c);
    write_file_atomic(path, bytes);
}

Tensor load_tensor(const std::string& path) {
    std::string bytes = read_file(path);
    if (bytes.size() < 8 + 8 + 4)
        throw CorruptionError("tensor file too short: " + path);
    size_t body = bytes.size() - 4;
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, 4);
    if (stored != crc32(reinterpret_cast<const uint8_t*>(bytes.data()), body))
        throw CorruptionError("tensor file checksum mismatch: " + path);
    if (std::memcmp(bytes.data(), kTensorMagic, 8) != 0)
        throw CorruptionError("tensor file bad magic: " + path);
    const char* p = bytes.data() + 8;
    const char* end = bytes.data() + body;
    auto need = [&](size_t n) {
        if (static_cast<size_t>(end - p) < n)
            throw CorruptionError("tensor file truncated: " + path);
    };
    uint64_t rank;
    need(sizeof rank);
    std::memcpy(&rank, p, sizeof rank);
    p += sizeof rank;
    if (rank > 8) throw CorruptionError("tensor file implausible rank: " + path);
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) {
        uint64_t u;
        need(sizeof u);
        std::memcpy(&u, p, sizeof u);
        p += sizeof u;
        d = static_cast<int64_t>(u);
        if (d <= 0) throw CorruptionError("tensor file bad shape: " + path);
    }
    Tensor t = Tensor::zeros(shape);
    need(t.data.size() * sizeof(double));
    std::memcpy(t.data.data(), p, t.data.size() * sizeof(double));
    p += t.data.size() * sizeof(double);
    if (p != end) throw CorruptionError("tensor file trailing bytes: " + path);
    return t;
}

Tensor ingest_u8(const std::vector<uint8_t>& pixels,
                 const std::vector<int64_t>& shape) {
    Tensor t = Tensor::zeros(shape);
    if (t.data.size() != pixels.size())
        throw ShapeError("ingest_u8: pixel count does not match shape");
    for (size_t i = 0; i < pixels.size(); ++i)
        t.data[i] = static_cast<double>(pixels[i]) / 127.5 - 1.0;
    return t;
}

}  // namespace dmz::io
