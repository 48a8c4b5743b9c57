#include <doctest.h>

#include <cmath>
#include <set>

#include "dmz/errors.hpp"
#include "dmz/latent_tools.hpp"
#include "dmz/rng.hpp"

using namespace dmz;
using namespace dmz::tools;

namespace {

int hamming(const Tensor& a, const Tensor& b) {
    int d = 0;
    for (int64_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) ++d;
    return d;
}

}  // namespace

TEST_CASE("discrete interpolation flips one bit per step") {
    Rng rng(3);
    for (int64_t n : {16, 64}) {
        for (int rep = 0; rep < 50; ++rep) {
            Tensor a({n}), b({n});
            for (int64_t i = 0; i < n; ++i) {
                a[i] = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
                b[i] = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
            }
            auto path = interpolate_discrete(a, b, rng);
            int d = hamming(a, b);
            REQUIRE(static_cast<int>(path.size()) == d + 1);
            CHECK(path.front().data == a.data);
            CHECK(path.back().data == b.data);
            for (size_t k = 0; k + 1 < path.size(); ++k) {
                CHECK(hamming(path[k], path[k + 1]) == 1);
                // monotone: each step moves closer to the target
                CHECK(hamming(path[k + 1], b) == hamming(path[k], b) - 1);
            }
            // never flips a bit the endpoints agree on
            for (const auto& z : path)
                for (int64_t i = 0; i < n; ++i)
                    if (a[i] == b[i]) CHECK(z[i] == a[i]);
        }
    }
}

TEST_CASE("interpolation of identical codes is the single endpoint") {
    Rng rng(4);
    Tensor a({8}, {1, 0, 0, 1, 1, 0, 1, 0});
    auto path = interpolate_discrete(a, a, rng);
    REQUIRE(path.size() == 1);
    CHECK(path[0].data == a.data);
}

TEST_CASE("interpolation order is randomized by the rng") {
    Tensor a = Tensor::zeros({16});
    Tensor b = Tensor::full({16}, 1.0);
    Rng r1(5), r2(6);
    auto p1 = interpolate_discrete(a, b, r1);
    auto p2 = interpolate_discrete(a, b, r2);
    bool same = true;
    for (size_t k = 0; k < p1.size() && same; ++k) same = p1[k].data == p2[k].data;
    CHECK_FALSE(same);
}

TEST_CASE("interpolation validates inputs") {
    Rng rng(7);
    Tensor a({4}, {0, 1, 0, 1});
    CHECK_THROWS_AS(interpolate_discrete(a, Tensor::zeros({5}), rng), ShapeError);
    Tensor frac({4}, {0.5, 1, 0, 1});
    CHECK_THROWS_AS(interpolate_discrete(frac, a, rng), DataError);
}

TEST_CASE("probe separates linearly separable codes perfectly") {
    // class = bit 0; other bits random
    Rng rng(11);
    const int64_t N = 200;
    Tensor codes({N, 8});
    std::vector<int> labels(static_cast<size_t>(N));
    for (int64_t r = 0; r < N; ++r) {
        for (int64_t c = 0; c < 8; ++c)
            codes[r * 8 + c] = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
        labels[static_cast<size_t>(r)] = static_cast<int>(codes[r * 8]);
    }
    auto [probe, m] = fit_linear_probe(codes, labels, 1);
    CHECK(m.accuracy == doctest::Approx(1.0));
    CHECK(m.auroc == doctest::Approx(1.0));
    REQUIRE(m.split_accuracies.size() == 5);
    for (double a : m.split_accuracies) CHECK(a == doctest::Approx(1.0));
    // the refit probe classifies training rows too
    for (int64_t r = 0; r < N; ++r) {
        Tensor z({8});
        for (int64_t c = 0; c < 8; ++c) z[c] = codes[r * 8 + c];
        CHECK(probe.predict(z) == labels[static_cast<size_t>(r)]);
    }
}

TEST_CASE("probe on labels independent of codes is at chance") {
    Rng rng(13);
    const int64_t N = 400;
    Tensor codes({N, 8});
    std::vector<int> labels(static_cast<size_t>(N));
    for (int64_t r = 0; r < N; ++r) {
        for (int64_t c = 0; c < 8; ++c)
            codes[r * 8 + c] = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
        labels[static_cast<size_t>(r)] = rng.uniform_open() < 0.5 ? 0 : 1;
    }
    auto [probe, m] = fit_linear_probe(codes, labels, 2);
    CHECK(m.accuracy > 0.35);
    CHECK(m.accuracy < 0.65);
}

TEST_CASE("probe cannot solve XOR of two bits") {
    Rng rng(17);
    const int64_t N = 400;
    Tensor codes({N, 8});
    std::vector<int> labels(static_cast<size_t>(N));
    for (int64_t r = 0; r < N; ++r) {
        for (int64_t c = 0; c < 8; ++c)
            codes[r * 8 + c] = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
        labels[static_cast<size_t>(r)] =
            static_cast<int>(codes[r * 8]) ^ static_cast<int>(codes[r * 8 + 1]);
    }
    auto [probe, m] = fit_linear_probe(codes, labels, 3);
    CHECK(m.accuracy < 0.65);  // a linear model stays near chance
}

TEST_CASE("probe handles more than two classes") {
    Rng rng(19);
    const int64_t N = 300;
    Tensor codes({N, 4});
    std::vector<int> labels(static_cast<size_t>(N));
    for (int64_t r = 0; r < N; ++r) {
        int cls = static_cast<int>(rng.uniform_int(0, 3));
        labels[static_cast<size_t>(r)] = cls;
        codes[r * 4 + 0] = cls & 1;
        codes[r * 4 + 1] = (cls >> 1) & 1;
        codes[r * 4 + 2] = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
        codes[r * 4 + 3] = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
    }
    auto [probe, m] = fit_linear_probe(codes, labels, 4);
    CHECK(probe.n_classes == 4);
    CHECK(m.accuracy > 0.95);
    CHECK(std::isnan(m.auroc));  // AUROC is binary-only
}

TEST_CASE("probe fit validates inputs") {
    Tensor codes({4, 2}, {0, 1, 1, 0, 0, 0, 1, 1});
    std::vector<int> labels = {0, 1, 0, 1};
    CHECK_THROWS_AS(fit_linear_probe(codes, labels, 1), DataError);  // < 10 rows
    Tensor codes2({12, 2});
    std::vector<int> one_class(12, 0);
    CHECK_THROWS_AS(fit_linear_probe(codes2, one_class, 1), DataError);
    std::vector<int> short_labels(11, 0);
    CHECK_THROWS_AS(fit_linear_probe(codes2, short_labels, 1), ShapeError);
}

TEST_CASE("auroc with midrank tie handling") {
    // perfect separation
    CHECK(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
    // perfectly wrong
    CHECK(auroc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == doctest::Approx(0.0));
    // all scores tied: 0.5 by the midrank convention
    CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
    // hand-computed mixed case: scores 1,2,2,3 labels 0,0,1,1
    // pairs: (1 vs 2)=1, (1 vs 3)=1, (2 vs 2)=0.5, (2 vs 3)=1 -> 3.5/4
    CHECK(auroc({1, 2, 2, 3}, {0, 0, 1, 1}) == doctest::Approx(0.875));
    CHECK_THROWS_AS(auroc({0.5, 0.6}, {1, 1}), DataError);  // one class only
}

TEST_CASE("classifier translate hand example") {
    // probe with normal n = w_class0 - w_class1 = (1, 0): moving z = (1,1)
    // by delta = -1 crosses to the boundary; g(z) = z_0 here
    LinearProbe probe;
    probe.n_classes = 2;
    probe.W = Tensor({2, 2}, {1.0, 0.0,   // bit 0 weights per class
                              0.0, 0.0}); // bit 1 weights per class
    probe.b = Tensor({2}, {0.0, 0.0});
    Tensor z({2}, {1.0, 1.0});
    CHECK(probe.decision_value(z) == doctest::Approx(1.0));

    auto pts = classifier_translate(z, probe, {0.0, -1.0, -2.0}, false);
    REQUIRE(pts.size() == 3);
    // delta 0: unchanged
    CHECK(pts[0].data == std::vector<double>{1.0, 1.0});
    // delta -1: lands exactly on the decision boundary
    CHECK(probe.decision_value(pts[1]) == doctest::Approx(0.0));
    CHECK(pts[1][0] == doctest::Approx(0.0));
    CHECK(pts[1][1] == doctest::Approx(1.0));
    // delta -2: mirrored across the boundary
    CHECK(pts[2][0] == doctest::Approx(-1.0));

    // binarized variant thresholds at 0.5
    auto hard = classifier_translate(z, probe, {-1.0}, true);
    CHECK(hard[0].data == std::vector<double>{0.0, 1.0});
}

TEST_CASE("classifier translate scales the decision value linearly") {
    // invariant: g(z + delta * v) = (1 + delta) * g(z)
    Rng rng(23);
    LinearProbe probe;
    probe.n_classes = 2;
    probe.W = rng.normal_tensor({6, 2});
    probe.b = rng.normal_tensor({2});
    for (int rep = 0; rep < 1000; ++rep) {
        Tensor z({6});
        for (int64_t i = 0; i < 6; ++i) z[i] = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
        double g0 = probe.decision_value(z);
        double delta = 3.0 * rng.normal();
        auto pts = classifier_translate(z, probe, {delta}, false);
        CHECK(probe.decision_value(pts[0]) ==
              doctest::Approx((1.0 + delta) * g0).epsilon(1e-9));
    }
    // crossing: past delta = -1 the sign flips
    Tensor z({6}, {1, 0, 1, 1, 0, 0});
    double g0 = probe.decision_value(z);
    auto pts = classifier_translate(z, probe, {-1.5}, false);
    CHECK(probe.decision_value(pts[0]) * g0 < 0.0);
}

TEST_CASE("classifier translate rejects degenerate probes") {
    LinearProbe probe;
    probe.n_classes = 2;
    probe.W = Tensor::zeros({4, 2});
    probe.b = Tensor::zeros({2});
    Tensor z({4}, {1, 0, 1, 0});
    CHECK_THROWS_AS(classifier_translate(z, probe, {1.0}, false), NumericError);
    LinearProbe multi;
    multi.n_classes = 3;
    multi.W = Tensor::zeros({4, 3});
    multi.b = Tensor::zeros({3});
    CHECK_THROWS_AS(classifier_translate(z, multi, {1.0}, false), ConfigError);
}
