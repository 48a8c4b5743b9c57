#include <doctest.h>

#include "dmz/rng.hpp"
#include "dmz/tensor.hpp"

using namespace dmz;

TEST_CASE("tensor construction and shape checks") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.shape_str() == "(2,3)");
    CHECK(t.all_finite());
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0}), ShapeError);

    Tensor u = Tensor::full({2, 3}, 0.5);
    CHECK(u[5] == 0.5);
    CHECK_NOTHROW(check_same_shape(t, u, "test"));
    CHECK_THROWS_AS(check_same_shape(t, Tensor::zeros({3, 2}), "test"),
                    ShapeError);
}

TEST_CASE("rng determinism and ranges") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());

    Rng r(7);
    for (int i = 0; i < 20000; ++i) {
        double u = r.uniform_open();
        CHECK(u > 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        int v = r.uniform_int(1, 10);
        CHECK(v >= 1);
        CHECK(v <= 10);
    }
}

TEST_CASE("rng tensor draws have the right moments") {
    Rng r(3);
    Tensor n = r.normal_tensor({100000});
    double mean = 0.0, var = 0.0;
    for (double v : n.data) mean += v;
    mean /= static_cast<double>(n.size());
    for (double v : n.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n.size());
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}
