#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "dmz/checkpoint.hpp"
#include "dmz/config.hpp"
#include "dmz/data.hpp"
#include "dmz/errors.hpp"
#include "dmz/image_io.hpp"
#include "dmz/rng.hpp"
#include "dmz/serialize.hpp"
#include "dmz/trainer.hpp"

using namespace dmz;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dmz_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

train::TrainConfig tiny_config() {
    train::TrainConfig cfg;
    cfg.T = 6;
    cfg.n_bits = 4;
    cfg.batch_size = 2;
    cfg.height = cfg.width = 8;
    cfg.base_channels = 8;
    cfg.channel_multipliers = {1, 2};
    cfg.attention_resolutions = {4};
    cfg.cross_attention_resolutions = {4};
    cfg.z_embed_dim = 8;
    cfg.z_tokens = 2;
    cfg.time_embed_dim = 16;
    cfg.norm_groups = 4;
    cfg.encoder_blocks = 2;
    cfg.encoder_channels = {8, 8};
    return cfg;
}

void corrupt_byte(const std::string& path, int64_t offset_from_end) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    auto size = static_cast<int64_t>(f.tellg());
    f.seekp(size - offset_from_end);
    char c;
    f.seekg(size - offset_from_end);
    f.read(&c, 1);
    c ^= 0x5a;
    f.seekp(size - offset_from_end);
    f.write(&c, 1);
}

void truncate_file(const std::string& path, int64_t keep) {
    fs::resize_file(path, static_cast<uintmax_t>(keep));
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit exact") {
    TempDir dir;
    auto state = train::init_model(tiny_config());
    Rng rng(1);
    Tensor batch = rng.normal_tensor({2, 1, 8, 8});
    for (int i = 0; i < 2; ++i) train::train_step(batch, *state, rng);

    std::string path = dir.file("model.ckpt");
    io::save_checkpoint(*state, path);
    auto loaded = io::load_checkpoint(path);

    CHECK(loaded->step == state->step);
    CHECK(loaded->cfg.T == state->cfg.T);
    CHECK(loaded->cfg.n_bits == state->cfg.n_bits);
    REQUIRE(loaded->params.names() == state->params.names());
    for (const auto& n : state->params.names()) {
        const auto& a = state->params.at(n);
        const auto& b = loaded->params.at(n);
        CHECK(a.value.data == b.value.data);
        CHECK(a.adam_m.data == b.adam_m.data);
        CHECK(a.adam_v.data == b.adam_v.data);
        CHECK(a.trainable == b.trainable);
        CHECK(state->ema.at(n).data == loaded->ema.at(n).data);
    }
    // the loaded model computes the same function
    Tensor x = rng.normal_tensor({1, 1, 8, 8});
    Tensor z({1, 4}, {1, 0, 1, 0});
    CHECK(state->net->predict(x, 3, &z).data == loaded->net->predict(x, 3, &z).data);
}

TEST_CASE("checkpoint corruption is reported by category") {
    TempDir dir;
    auto state = train::init_model(tiny_config());
    std::string path = dir.file("model.ckpt");
    io::save_checkpoint(*state, path);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(io::load_checkpoint(dir.file("nope.ckpt")), IoError);
    }
    SUBCASE("flipped payload byte breaks the checksum") {
        corrupt_byte(path, 100);
        CHECK_THROWS_AS(io::load_checkpoint(path), CorruptionError);
    }
    SUBCASE("truncated file") {
        auto size = static_cast<int64_t>(fs::file_size(path));
        truncate_file(path, size / 2);
        CHECK_THROWS_AS(io::load_checkpoint(path), CorruptionError);
    }
    SUBCASE("bad magic") {
        corrupt_byte(path, static_cast<int64_t>(fs::file_size(path)) - 1);
        CHECK_THROWS_AS(io::load_checkpoint(path), CorruptionError);
    }
    SUBCASE("trailing garbage") {
        std::ofstream f(path, std::ios::app | std::ios::binary);
        f << "extra";
        f.close();
        CHECK_THROWS_AS(io::load_checkpoint(path), CorruptionError);
    }
}

TEST_CASE("codes round-trip through the bit-packed format") {
    TempDir dir;
    Rng rng(2);
    Tensor codes({37, 11});  // awkward sizes exercise the bit packing
    for (auto& v : codes.data) v = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
    std::string path = dir.file("z.codes");
    io::save_codes(codes, path);
    Tensor back = io::load_codes(path);
    REQUIRE(back.shape == codes.shape);
    CHECK(back.data == codes.data);

    Tensor bad({2, 2}, {0.0, 0.5, 1.0, 1.0});
    CHECK_THROWS_AS(io::save_codes(bad, dir.file("bad.codes")), DataError);
    corrupt_byte(path, 2);
    CHECK_THROWS_AS(io::load_codes(path), CorruptionError);
    CHECK_THROWS_AS(io::load_codes(dir.file("absent.codes")), IoError);
}

TEST_CASE("tensor container round-trips exactly") {
    TempDir dir;
    Rng rng(3);
    Tensor t = rng.normal_tensor({3, 5, 2});
    std::string path = dir.file("t.tensor");
    io::save_tensor(t, path);
    Tensor back = io::load_tensor(path);
    REQUIRE(back.shape == t.shape);
    CHECK(back.data == t.data);
    corrupt_byte(path, 5);
    CHECK_THROWS_AS(io::load_tensor(path), CorruptionError);
}

TEST_CASE("config json round-trip preserves every field") {
    train::TrainConfig cfg = tiny_config();
    cfg.learning_rate = 3.25e-4;
    cfg.ema_decay = 0.99;
    cfg.gamma_ip = 0.15;
    cfg.total_iterations = 123;
    cfg.seed = 99;
    cfg.schedule_kind = diffusion::ScheduleKind::linear;
    cfg.latent_kind = latent::LatentKind::normal;
    std::string text = io::config_to_json(cfg);
    train::TrainConfig back = io::config_from_json(text);
    CHECK(io::config_to_json(back) == text);
    CHECK(back.learning_rate == cfg.learning_rate);
    CHECK(back.seed == cfg.seed);
    CHECK(back.schedule_kind == cfg.schedule_kind);
    CHECK(back.latent_kind == cfg.latent_kind);
    CHECK(back.channel_multipliers == cfg.channel_multipliers);
    CHECK_THROWS_AS(io::config_from_json("not json"), ConfigError);
    CHECK_THROWS_AS(io::config_from_json("{}"), ConfigError);
}

TEST_CASE("kv config text parses, applies and round-trips") {
    std::string text =
        "# a comment\n"
        "T = 42\n"
        "learning_rate = 2e-3\n"
        "channel_multipliers = 1,2,4\n"
        "cross_attention_resolutions = none\n"
        "conditioning_mode = unconditional\n";
    auto kv = io::parse_kv_text(text);
    CHECK(kv.at("T") == "42");
    train::TrainConfig cfg = tiny_config();
    io::apply_config(cfg, kv);
    CHECK(cfg.T == 42);
    CHECK(cfg.learning_rate == 2e-3);
    CHECK(cfg.channel_multipliers == std::vector<int>({1, 2, 4}));
    CHECK(cfg.cross_attention_resolutions.empty());
    CHECK(cfg.conditioning_mode == denoiser::ConditioningMode::unconditional);

    // full round-trip through the emitted text
    std::string out = io::config_to_kv_text(cfg);
    train::TrainConfig cfg2 = tiny_config();
    io::apply_config(cfg2, io::parse_kv_text(out));
    CHECK(io::config_to_kv_text(cfg2) == out);

    CHECK_THROWS_AS(io::apply_config(cfg, {{"no_such_key", "1"}}), ConfigError);
    CHECK_THROWS_AS(io::apply_config(cfg, {{"T", "not_a_number"}}), ConfigError);
    CHECK_THROWS_AS(io::parse_kv_text("missing_equals_sign\n"), ConfigError);
}

TEST_CASE("image export quantizes the endpoints exactly") {
    TempDir dir;
    Tensor batch({1, 1, 1, 4}, {-1.0, 0.0, 1.0, 2.5});  // 2.5 clamps to 1
    std::string path = dir.file("img.pgm");
    io::export_images(batch, 1, path);
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::string magic, dims, maxval;
    std::getline(f, magic);
    std::getline(f, dims);
    std::getline(f, maxval);
    CHECK(magic == "P5");
    CHECK(maxval == "255");
    unsigned char px[4];
    f.read(reinterpret_cast<char*>(px), 4);
    CHECK(px[0] == 0);
    CHECK(px[1] == 128);  // round(127.5) half away from zero
    CHECK(px[2] == 255);
    CHECK(px[3] == 255);
    // the raw sidecar keeps the unclamped values
    Tensor raw = io::load_tensor(path + ".raw");
    CHECK(raw.data == batch.data);
}

TEST_CASE("ingest maps 8-bit pixels into the signed unit range") {
    Tensor t = io::ingest_u8({0, 255, 127}, {1, 1, 1, 3});
    CHECK(t[0] == doctest::Approx(-1.0));
    CHECK(t[1] == doctest::Approx(1.0));
    CHECK(t[2] == doctest::Approx(127.0 / 127.5 - 1.0));
}

TEST_CASE("labels csv round-trips") {
    TempDir dir;
    data::SyntheticSpec spec;
    spec.resolution = 8;
    spec.count = 20;
    spec.seed = 4;
    auto ds = data::generate_synthetic(spec);
    std::string path = dir.file("labels.csv");
    data::save_labels(ds, path);
    auto rows = data::load_labels(path);
    REQUIRE(rows.size() == 20);
    for (size_t i = 0; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 4);
        CHECK(rows[i][0] == static_cast<int>(i));
        CHECK(rows[i][1] == ds.shape_labels[i]);
        CHECK(rows[i][2] == ds.fill_labels[i]);
        CHECK(rows[i][3] == ds.position_labels[i]);
    }
}

TEST_CASE("synthetic data covers all factor combinations") {
    data::SyntheticSpec spec;
    spec.resolution = 8;
    spec.count = 64;
    spec.seed = 5;
    auto ds = data::generate_synthetic(spec);
    REQUIRE(ds.images.shape == std::vector<int64_t>({64, 1, 8, 8}));
    int seen[2][2][4] = {};
    for (int i = 0; i < 64; ++i)
        seen[ds.shape_labels[static_cast<size_t>(i)]]
            [ds.fill_labels[static_cast<size_t>(i)]]
            [ds.position_labels[static_cast<size_t>(i)]]++;
    for (int s = 0; s < 2; ++s)
        for (int f = 0; f < 2; ++f)
            for (int p = 0; p < 4; ++p) CHECK(seen[s][f][p] == 4);
    for (double v : ds.images.data) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // factor accessor and validation
    CHECK(&ds.factor("shape") == &ds.shape_labels);
    CHECK(&ds.factor("fill") == &ds.fill_labels);
    CHECK(&ds.factor("position") == &ds.position_labels);
    CHECK_THROWS_AS(ds.factor("texture"), ConfigError);
    data::SyntheticSpec bad;
    bad.resolution = 2;
    bad.count = 1;
    CHECK_THROWS_AS(data::generate_synthetic(bad), ConfigError);
}

TEST_CASE("paired domains differ only in fill") {
    data::SyntheticSpec spec;
    spec.resolution = 8;
    spec.count = 16;
    spec.seed = 6;
    auto [src, tgt] = data::generate_paired_domains(spec);
    REQUIRE(src.images.shape == tgt.images.shape);
    for (int i = 0; i < 16; ++i) {
        CHECK(src.shape_labels[static_cast<size_t>(i)] ==
              tgt.shape_labels[static_cast<size_t>(i)]);
        CHECK(src.position_labels[static_cast<size_t>(i)] ==
              tgt.position_labels[static_cast<size_t>(i)]);
        CHECK(src.fill_labels[static_cast<size_t>(i)] == 0);
        CHECK(tgt.fill_labels[static_cast<size_t>(i)] == 1);
    }
}

TEST_CASE("probe json round-trip") {
    TempDir dir;
    tools::LinearProbe probe;
    probe.n_classes = 3;
    Rng rng(7);
    probe.W = rng.normal_tensor({5, 3});
    probe.b = rng.normal_tensor({3});
    std::string path = dir.file("probe.json");
    io::save_probe(probe, path);
    tools::LinearProbe back = io::load_probe(path);
    CHECK(back.n_classes == 3);
    CHECK(back.W.shape == probe.W.shape);
    CHECK(back.W.data == probe.W.data);
    CHECK(back.b.data == probe.b.data);
    io::write_file_atomic(path, "{\"kind\": \"linear_probe\"}");
    CHECK_THROWS_AS(io::load_probe(path), CorruptionError);
}

TEST_CASE("ar prior json round-trip") {
    TempDir dir;
    Rng rng(8);
    Tensor codes({40, 5});
    for (auto& v : codes.data) v = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
    latent::ARPrior prior = latent::fit_ar_prior(codes);
    std::string path = dir.file("prior.json");
    io::save_ar_prior(prior, path);
    latent::ARPrior back = io::load_ar_prior(path);
    CHECK(back.n_bits == prior.n_bits);
    CHECK(back.bias == prior.bias);
    CHECK(back.weights == prior.weights);
}

TEST_CASE("latent map json round-trip") {
    TempDir dir;
    Rng rng(9);
    Tensor codes({32, 4});
    for (auto& v : codes.data) v = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
    translate::MapFitOptions opt;
    opt.iterations = 30;
    auto map = translate::fit_latent_map(codes, codes, 2, opt, nullptr);
    std::string path = dir.file("map.json");
    io::save_latent_map(*map, path);
    auto back = io::load_latent_map(path);
    CHECK(back->n_src == map->n_src);
    CHECK(back->n_tgt == map->n_tgt);
    CHECK(back->hidden_layers == map->hidden_layers);
    Tensor probe_in = Tensor({1, 4}, {1, 0, 1, 0});
    CHECK(back->forward_logits(probe_in).data ==
          map->forward_logits(probe_in).data);
}

TEST_CASE("atomic write creates parents and survives checksum verification") {
    TempDir dir;
    std::string path = dir.file("a/b/c.txt");
    io::write_file_atomic(path, "hello");
    CHECK(io::read_file(path) == "hello");
    CHECK_THROWS_AS(io::read_file(dir.file("missing.txt")), IoError);
    const uint8_t data[] = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    // standard check value for this polynomial
    CHECK(io::crc32(data, 9) == 0xCBF43926u);
}
