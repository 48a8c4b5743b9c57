#include "dmz/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dmz/errors.hpp"

namespace dmz::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'M', 'Z', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;
constexpr char kCodesMagic[8] = {'D', 'M', 'Z', 'C', 'O', 'D', 'E', '\0'};
constexpr uint32_t kCodesVersion = 1;

// Sink that streams into a buffer while folding in the CRC incrementally.
struct Writer {
    std::string buf;
    void raw(const void* p, size_t n) {
        buf.append(static_cast<const char*>(p), n);
    }
    void u32(uint32_t v) { raw(&v, sizeof v); }
    void u64(uint64_t v) { raw(&v, sizeof v); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void tensor(const Tensor& t) {
        u64(t.shape.size());
        for (int64_t d : t.shape) u64(static_cast<uint64_t>(d));
        raw(t.data.data(), t.data.size() * sizeof(double));
    }
};

struct Reader {
    const uint8_t* p;
    const uint8_t* end;
    void need(size_t n) const {
        if (static_cast<size_t>(end - p) < n)
            throw CorruptionError("checkpoint: truncated file");
    }
    void raw(void* out, size_t n) {
        need(n);
        std::memcpy(out, p, n);
        p += n;
    }
    uint32_t u32() { uint32_t v; raw(&v, sizeof v); return v; }
    uint64_t u64() { uint64_t v; raw(&v, sizeof v); return v; }
    std::string str() {
        uint64_t n = u64();
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        return s;
    }
    Tensor tensor() {
        uint64_t rank = u64();
        if (rank > 8) throw CorruptionError("checkpoint: implausible tensor rank");
        std::vector<int64_t> shape(rank);
        int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int64_t>(u64());
            if (d <= 0 || numel > (1ll << 32) / std::max<int64_t>(d, 1))
                throw CorruptionError("checkpoint: implausible tensor shape");
            numel *= d;
        }
        Tensor t = Tensor::zeros(shape);
        raw(t.data.data(), t.data.size() * sizeof(double));
        return t;
    }
};

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failed for " + path);
    return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("rename to " + path + " failed: " + ec.message());
}

namespace {

void append_crc(std::string& bytes) {
    uint32_t c = crc32(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
    bytes.append(reinterpret_cast<const char*>(&c), sizeof c);
}

// Splits off and verifies the trailing CRC, returns the payload view.
Reader open_checked(const std::string& bytes, const char magic[8],
                    const char* what) {
    if (bytes.size() < 12 + sizeof(uint32_t))
        throw CorruptionError(std::string(what) + ": file too short");
    size_t body = bytes.size() - sizeof(uint32_t);
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, sizeof stored);
    uint32_t actual = crc32(reinterpret_cast<const uint8_t*>(bytes.data()), body);
    if (stored != actual)
        throw CorruptionError(std::string(what) + ": checksum mismatch");
    Reader r{reinterpret_cast<const uint8_t*>(bytes.data()),
             reinterpret_cast<const uint8_t*>(bytes.data()) + body};
    char m[8];
    r.raw(m, 8);
    if (std::memcmp(m, magic, 8) != 0)
        throw CorruptionError(std::string(what) + ": bad magic");
    return r;
}

json require(const json& j, const char* key) {
    if (!j.contains(key))
        throw ConfigError(std::string("config missing field: ") + key);
    return j.at(key);
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::string config_to_json(const train::TrainConfig& c) {
    json j;
    j["T"] = c.T;
    j["n_bits"] = c.n_bits;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["weight_decay"] = c.weight_decay;
    j["total_iterations"] = c.total_iterations;
    j["ema_decay"] = c.ema_decay;
    j["gamma_ip"] = c.gamma_ip;
    j["temperature_start"] = c.temperature_start;
    j["temperature_end"] = c.temperature_end;
    j["temperature_anneal_iters"] = c.temperature_anneal_iters;
    j["conditioning_mode"] = denoiser::to_string(c.conditioning_mode);
    j["schedule_kind"] = diffusion::to_string(c.schedule_kind);
    j["latent_kind"] = latent::to_string(c.latent_kind);
    j["seed"] = c.seed;
    j["channels"] = c.channels;
    j["height"] = c.height;
    j["width"] = c.width;
    j["base_channels"] = c.base_channels;
    j["channel_multipliers"] = c.channel_multipliers;
    j["blocks_per_resolution"] = c.blocks_per_resolution;
    j["attention_resolutions"] = c.attention_resolutions;
    j["cross_attention_resolutions"] = c.cross_attention_resolutions;
    j["mid_block_cross_attention"] = c.mid_block_cross_attention;
    j["z_embed_dim"] = c.z_embed_dim;
    j["z_tokens"] = c.z_tokens;
    j["time_embed_dim"] = c.time_embed_dim;
    j["norm_groups"] = c.norm_groups;
    j["dropout"] = c.dropout;
    j["encoder_blocks"] = c.encoder_blocks;
    j["encoder_channels"] = c.encoder_channels;
    j["checkpoint_every"] = c.checkpoint_every;
    j["log_every"] = c.log_every;
    return j.dump();
}

train::TrainConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    train::TrainConfig c;
    try {
        c.T = require(j, "T").get<int>();
        c.n_bits = require(j, "n_bits").get<int>();
        c.batch_size = require(j, "batch_size").get<int>();
        c.learning_rate = require(j, "learning_rate").get<double>();
        c.weight_decay = require(j, "weight_decay").get<double>();
        c.total_iterations = require(j, "total_iterations").get<int64_t>();
        c.ema_decay = require(j, "ema_decay").get<double>();
        c.gamma_ip = require(j, "gamma_ip").get<double>();
        c.temperature_start = require(j, "temperature_start").get<double>();
        c.temperature_end = require(j, "temperature_end").get<double>();
        c.temperature_anneal_iters =
            require(j, "temperature_anneal_iters").get<int64_t>();
        c.conditioning_mode = denoiser::conditioning_mode_from_string(
            require(j, "conditioning_mode").get<std::string>());
        c.schedule_kind = diffusion::schedule_kind_from_string(
            require(j, "schedule_kind").get<std::string>());
        c.latent_kind = latent::latent_kind_from_string(
            require(j, "latent_kind").get<std::string>());
        c.seed = require(j, "seed").get<uint64_t>();
        c.channels = require(j, "channels").get<int64_t>();
        c.height = require(j, "height").get<int64_t>();
        c.width = require(j, "width").get<int64_t>();
        c.base_channels = require(j, "base_channels").get<int64_t>();
        c.channel_multipliers =
            require(j, "channel_multipliers").get<std::vector<int>>();
        c.blocks_per_resolution = require(j, "blocks_per_resolution").get<int>();
        c.attention_resolutions =
            require(j, "attention_resolutions").get<std::vector<int64_t>>();
        c.cross_attention_resolutions =
            require(j, "cross_attention_resolutions").get<std::vector<int64_t>>();
        c.mid_block_cross_attention =
            require(j, "mid_block_cross_attention").get<bool>();
        c.z_embed_dim = require(j, "z_embed_dim").get<int64_t>();
        c.z_tokens = require(j, "z_tokens").get<int>();
        c.time_embed_dim = require(j, "time_embed_dim").get<int64_t>();
        c.norm_groups = require(j, "norm_groups").get<int>();
        c.dropout = require(j, "dropout").get<double>();
        c.encoder_blocks = require(j, "encoder_blocks").get<int>();
        c.encoder_channels =
            require(j, "encoder_channels").get<std::vector<int64_t>>();
        c.checkpoint_every = require(j, "checkpoint_every").get<int64_t>();
        c.log_every = require(j, "log_every").get<int64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field has wrong type: ") + e.what());
    }
    c.validate();
    return c;
}

void save_checkpoint(const train::ModelState& state, const std::string& path) {
    Writer w;
    w.raw(kMagic, 8);
    w.u32(kVersion);
    w.str(config_to_json(state.cfg));
    w.u64(static_cast<uint64_t>(state.step));

    w.u64(state.params.count());
    for (const auto& name : state.params.names()) {
        const nn::Param& p = state.params.at(name);
        w.str(name);
        w.u32(p.trainable ? 1 : 0);
        w.tensor(p.value);
        w.tensor(p.adam_m);
        w.tensor(p.adam_v);
    }
    w.u64(state.ema.tensors().size());
    for (const auto& [name, t] : state.ema.tensors()) {
        w.str(name);
        w.tensor(t);
    }
    append_crc(w.buf);
    write_file_atomic(path, w.buf);
}

std::unique_ptr<train::ModelState> load_checkpoint(const std::string& path) {
    std::string bytes = read_file(path);
    Reader r = open_checked(bytes, kMagic, "checkpoint");
    uint32_t version = r.u32();
    if (version != kVersion)
        throw VersionError("checkpoint: unsupported format version " +
                           std::to_string(version));
    train::TrainConfig cfg = config_from_json(r.str());
    int64_t step = static_cast<int64_t>(r.u64());

    auto state = train::init_model(cfg);
    state->step = step;

    uint64_t n_params = r.u64();
    if (n_params != state->params.count())
        throw CorruptionError("checkpoint: parameter count mismatch");
    for (uint64_t i = 0; i < n_params; ++i) {
        std::string name = r.str();
        if (!state->params.contains(name))
            throw CorruptionError("checkpoint: unknown parameter " + name);
        nn::Param& p = state->params.at(name);
        p.trainable = r.u32() != 0;
        Tensor value = r.tensor();
        Tensor m = r.tensor();
        Tensor v = r.tensor();
        if (value.shape != p.value.shape)
            throw CorruptionError("checkpoint: shape mismatch for " + name);
        p.value = std::move(value);
        p.adam_m = std::move(m);
        p.adam_v = std::move(v);
    }
    uint64_t n_ema = r.u64();
    auto& shadow = state->ema.tensors();
    if (n_ema != shadow.size())
        throw CorruptionError("checkpoint: EMA tensor count mismatch");
    for (uint64_t i = 0; i < n_ema; ++i) {
        std::string name = r.str();
        auto it = shadow.find(name);
        if (it == shadow.end())
            throw CorruptionError("checkpoint: unknown EMA tensor " + name);
        Tensor t = r.tensor();
        if (t.shape != it->second.shape)
            throw CorruptionError("checkpoint: EMA shape mismatch for " + name);
        it->second = std::move(t);
    }
    if (r.p != r.end)
        throw CorruptionError("checkpoint: trailing bytes after payload");
    return state;
}

void save_codes(const Tensor& codes, const std::string& path) {
    if (codes.shape.size() != 2)
        throw ShapeError("save_codes: expected (count, n_bits), got " +
                         codes.shape_str());
    for (double v : codes.data)
        if (v != 0.0 && v != 1.0)
            throw DataError("save_codes: entries must be 0 or 1");
    uint64_t count = static_cast<uint64_t>(codes.shape[0]);
    uint64_t n_bits = static_cast<uint64_t>(codes.shape[1]);
    Writer w;
    w.raw(kCodesMagic, 8);
    w.u32(kCodesVersion);
    w.u64(count);
    w.u64(n_bits);
    uint64_t total = count * n_bits;
    std::vector<uint8_t> packed((total + 7) / 8, 0);
    for (uint64_t i = 0; i < total; ++i)
        if (codes.data[i] == 1.0) packed[i / 8] |= uint8_t(1u << (i % 8));
    w.raw(packed.data(), packed.size());
    append_crc(w.buf);
    write_file_atomic(path, w.buf);
}

Tensor load_codes(const std::string& path) {
    std::string bytes = read_file(path);
    Reader r = open_checked(bytes, kCodesMagic, "codes");
    uint32_t version = r.u32();
    if (version != kCodesVersion)
        throw VersionError("codes: unsupported format version " +
                           std::to_string(version));
    uint64_t count = r.u64();
    uint64_t n_bits = r.u64();
    if (n_bits == 0 || n_bits > 4096 || count > (1u << 30))
        throw CorruptionError("codes: implausible header");
    uint64_t total = count * n_bits;
    std::vector<uint8_t> packed((total + 7) / 8);
    r.raw(packed.data(), packed.size());
    if (r.p != r.end)
        throw CorruptionError("codes: trailing bytes after payload");
    Tensor t = Tensor::zeros({static_cast<int64_t>(count),
                              static_cast<int64_t>(n_bits)});
    for (uint64_t i = 0; i < total; ++i)
        t.data[i] = (packed[i / 8] >> (i % 8)) & 1u;
    return t;
}

}  // namespace dmz::io
