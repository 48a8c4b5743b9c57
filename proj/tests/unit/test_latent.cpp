#include <doctest.h>

#include <cmath>

#include "dmz/ar_prior.hpp"
#include "dmz/errors.hpp"
#include "dmz/graph.hpp"
#include "dmz/latent.hpp"
#include "dmz/params.hpp"
#include "dmz/rng.hpp"

using namespace dmz;
using namespace dmz::latent;

TEST_CASE("relaxed sample closed form") {
    Tensor logits({1, 3}, {0.0, 2.0, -1.0});
    Tensor u({1, 3}, {0.5, 0.5, 0.5});
    // u = 0.5 makes the logistic noise vanish: value = sigmoid(logit / tau)
    LatentCode c = relax_sample(logits, 0.5, u);
    CHECK(c.mode == LatentMode::relaxed);
    for (int64_t i = 0; i < 3; ++i)
        CHECK(c.values[i] ==
              doctest::Approx(1.0 / (1.0 + std::exp(-logits[i] / 0.5))).epsilon(1e-14));

    Tensor u2({1, 3}, {0.3, 0.9, 0.1});
    LatentCode c2 = relax_sample(logits, 1.0, u2);
    for (int64_t i = 0; i < 3; ++i) {
        double noise = std::log(u2[i]) - std::log(1.0 - u2[i]);
        double want = 1.0 / (1.0 + std::exp(-(logits[i] + noise)));
        CHECK(c2.values[i] == doctest::Approx(want).epsilon(1e-14));
        CHECK(c2.values[i] > 0.0);
        CHECK(c2.values[i] < 1.0);
    }
    CHECK_THROWS_AS(relax_sample(logits, 0.0, u), ConfigError);
    CHECK_THROWS_AS(relax_sample(logits, 1.0, Tensor::zeros({1, 2})), ShapeError);
}

TEST_CASE("relaxed sample gradient matches finite differences") {
    Tensor logits({2, 4});
    Rng rng(31);
    for (auto& v : logits.data) v = rng.normal();
    Tensor u({2, 4});
    for (auto& v : u.data) v = rng.uniform_open();
    const double tau = 0.7;

    Tensor grad = Tensor::zeros(logits.shape);
    {
        nn::Graph g;
        nn::V lv = g.param(logits, &grad);
        nn::V out = relax_sample_node(g, lv, tau, u);
        g.backward(g.mean_all(out));
    }
    const double h = 1e-6;
    for (size_t i = 0; i < logits.data.size(); ++i) {
        auto eval = [&](double x) {
            Tensor l2 = logits;
            l2.data[i] = x;
            LatentCode c = relax_sample(l2, tau, u);
            double s = 0.0;
            for (double v : c.values.data) s += v;
            return s / static_cast<double>(c.values.size());
        };
        double fd = (eval(logits.data[i] + h) - eval(logits.data[i] - h)) / (2 * h);
        CHECK(grad.data[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("binarization thresholds and tie handling") {
    LatentCode relaxed;
    relaxed.mode = LatentMode::relaxed;
    relaxed.values = Tensor({1, 4}, {0.49, 0.5, 0.51, 1.0});
    LatentCode hard = binarize_relaxed(relaxed);
    CHECK(hard.mode == LatentMode::hard);
    CHECK(hard.values.data == std::vector<double>{0.0, 0.0, 1.0, 1.0});

    Tensor logits({1, 4}, {-0.1, 0.0, 0.1, 5.0});
    LatentCode hl = binarize_logits(logits);
    CHECK(hl.values.data == std::vector<double>{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("bernoulli prior statistics") {
    Rng rng(17);
    const int64_t B = 20000;
    Tensor z = sample_prior_bernoulli_batch(B, 6, rng);
    REQUIRE(z.shape == std::vector<int64_t>({B, 6}));
    std::vector<double> marg(6, 0.0);
    for (int64_t r = 0; r < B; ++r)
        for (int64_t c = 0; c < 6; ++c) {
            double v = z[r * 6 + c];
            CHECK((v == 0.0 || v == 1.0));
            marg[static_cast<size_t>(c)] += v;
        }
    for (double m : marg) CHECK(std::abs(m / B - 0.5) < 0.02);
    LatentCode one = sample_prior_bernoulli(6, rng);
    CHECK(one.values.shape == std::vector<int64_t>({6}));
    CHECK(one.mode == LatentMode::hard);
}

TEST_CASE("encoder zero-init gives logits zero and deterministic eval") {
    EncoderSpec spec;
    spec.height = spec.width = 8;
    spec.n_bits = 4;
    spec.n_blocks = 2;
    spec.channels_per_block = {8, 8};
    nn::ParamStore store;
    Encoder enc(spec, store);
    Rng rng(5);
    enc.init_params(rng);
    Tensor x = rng.normal_tensor({2, 1, 8, 8});
    Tensor logits = enc.encode_logits(x);
    REQUIRE(logits.shape == std::vector<int64_t>({2, 4}));
    // zero-initialized projection: every logit starts at exactly zero
    for (double v : logits.data) CHECK(v == 0.0);
    LatentCode hard = enc.encode_hard(x);
    for (double v : hard.values.data) CHECK(v == 0.0);

    // same inputs, same parameters -> identical outputs
    Tensor again = enc.encode_logits(x);
    CHECK(again.data == logits.data);
}

TEST_CASE("encoder spec validation") {
    EncoderSpec bad;
    bad.n_blocks = 2;
    bad.channels_per_block = {8};  // mismatched block list
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    EncoderSpec bad3;
    bad3.n_bits = 0;
    CHECK_THROWS_AS(bad3.validate(), ConfigError);
}

TEST_CASE("ar prior degenerate constant bit") {
    // training codes where bit 0 is always 1 -> conditional close to 1
    Tensor codes({50, 2});
    Rng rng(9);
    for (int64_t r = 0; r < 50; ++r) {
        codes[r * 2 + 0] = 1.0;
        codes[r * 2 + 1] = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
    }
    ARPrior p = fit_ar_prior(codes);
    CHECK(p.conditional_p1(nullptr, 0) > 0.95);
}

TEST_CASE("ar prior fair coin") {
    Rng rng(13);
    Tensor codes({400, 3});
    for (auto& v : codes.data) v = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
    ARPrior p = fit_ar_prior(codes);
    double z0[3] = {0, 0, 0};
    double z1[3] = {1, 1, 1};
    for (int i = 0; i < 3; ++i) {
        CHECK(p.conditional_p1(z0, i) == doctest::Approx(0.5).epsilon(0.15));
        CHECK(p.conditional_p1(z1, i) == doctest::Approx(0.5).epsilon(0.15));
    }
    // log-likelihood of independent fair bits approaches -n ln 2 per code
    CHECK(p.log_likelihood(codes) ==
          doctest::Approx(-3.0 * std::log(2.0)).epsilon(0.05));
}

TEST_CASE("ar prior learns a copied bit") {
    Rng rng(13);
    Tensor codes({300, 2});
    for (int64_t r = 0; r < 300; ++r) {
        double b = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
        codes[r * 2 + 0] = b;
        codes[r * 2 + 1] = b;  // bit 1 copies bit 0
    }
    ARPrior p = fit_ar_prior(codes);
    double z0[2] = {0, 0};
    double z1[2] = {1, 1};
    CHECK(p.conditional_p1(z0, 1) < 0.1);
    CHECK(p.conditional_p1(z1, 1) > 0.9);

    // samples preserve the dependency
    Rng srng(21);
    Tensor s = sample_ar_prior_batch(p, 4000, srng);
    int agree = 0;
    for (int64_t r = 0; r < 4000; ++r)
        if (s[r * 2] == s[r * 2 + 1]) ++agree;
    CHECK(agree > 3600);
}

TEST_CASE("ar prior sampling shapes and errors") {
    Tensor codes({20, 4});
    Rng rng(2);
    for (auto& v : codes.data) v = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
    ARPrior p = fit_ar_prior(codes);
    Rng srng(3);
    LatentCode one = sample_ar_prior(p, srng);
    CHECK(one.values.shape == std::vector<int64_t>({4}));
    CHECK(one.mode == LatentMode::hard);
    Tensor batch = sample_ar_prior_batch(p, 7, srng);
    CHECK(batch.shape == std::vector<int64_t>({7, 4}));
    Tensor bad({2, 2}, {0.0, 1.0, 0.5, 0.0});
    CHECK_THROWS_AS(fit_ar_prior(bad), DataError);
}

TEST_CASE("normal prior fit and sampling") {
    Rng rng(41);
    const int64_t N = 30000;
    Tensor codes({N, 2});
    for (int64_t r = 0; r < N; ++r) {
        codes[r * 2 + 0] = 1.0 + 0.5 * rng.normal();
        codes[r * 2 + 1] = -2.0 + 2.0 * rng.normal();
    }
    NormalPrior p = fit_normal_prior(codes);
    CHECK(p.mean[0] == doctest::Approx(1.0).epsilon(0.02));
    CHECK(p.mean[1] == doctest::Approx(-2.0).epsilon(0.02));
    CHECK(p.stddev[0] == doctest::Approx(0.5).epsilon(0.03));
    CHECK(p.stddev[1] == doctest::Approx(2.0).epsilon(0.03));

    Rng srng(42);
    Tensor s = sample_normal_prior(p, 30000, srng);
    double sum = 0.0, sumsq = 0.0;
    for (int64_t r = 0; r < 30000; ++r) {
        sum += s[r * 2];
        sumsq += s[r * 2] * s[r * 2];
    }
    double mean = sum / 30000;
    CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
    CHECK(std::sqrt(sumsq / 30000 - mean * mean) ==
          doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("latent kind names round-trip") {
    CHECK(to_string(LatentKind::binary) == "binary");
    CHECK(to_string(LatentKind::normal) == "normal");
    CHECK(latent_kind_from_string("binary") == LatentKind::binary);
    CHECK(latent_kind_from_string("normal") == LatentKind::normal);
    CHECK_THROWS_AS(latent_kind_from_string("ternary"), ConfigError);
}
