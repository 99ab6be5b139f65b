#include <doctest.h>

#include "drc/rng.hpp"
#include "drc/tensor.hpp"
#include "test_util.hpp"

using namespace drc;

TEST_CASE("tensor basics") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    t.at(1, 2) = 5.0;
    CHECK(t[5] == 5.0);
    CHECK(t.shape_str() == "(2,3)");

    Tensor e({0, 4});
    CHECK(e.size() == 0);
    CHECK(e.all_finite());

    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    Tensor r = t.reshaped({3, 2});
    CHECK(r.at(2, 1) == 5.0);
}

TEST_CASE("gemm against hand products") {
    // A(2x3) * B(3x2)
    Tensor a({2, 3});
    Tensor b({3, 2});
    for (int i = 0; i < 6; ++i) {
        a[i] = i + 1;       // [[1,2,3],[4,5,6]]
        b[i] = 6 - i;       // [[6,5],[4,3],[2,1]]
    }
    Tensor c({2, 2});
    gemm_nn(a.data(), b.data(), c.data(), 2, 2, 3);
    CHECK(c.at(0, 0) == doctest::Approx(1 * 6 + 2 * 4 + 3 * 2));
    CHECK(c.at(0, 1) == doctest::Approx(1 * 5 + 2 * 3 + 3 * 1));
    CHECK(c.at(1, 0) == doctest::Approx(4 * 6 + 5 * 4 + 6 * 2));
    CHECK(c.at(1, 1) == doctest::Approx(4 * 5 + 5 * 3 + 6 * 1));

    // Transposed variants agree with explicit transposition.
    Rng rng(7);
    Tensor x = test_util::random_tensor({4, 5}, rng);
    Tensor y = test_util::random_tensor({4, 6}, rng);
    Tensor xt({5, 4});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) xt.at(j, i) = x.at(i, j);
    Tensor r1({5, 6}), r2({5, 6});
    gemm_tn(x.data(), y.data(), r1.data(), 5, 6, 4);
    gemm_nn(xt.data(), y.data(), r2.data(), 5, 6, 4);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == doctest::Approx(r2[i]));

    Tensor z = test_util::random_tensor({6, 5}, rng);
    Tensor r3({4, 6}), r4({4, 6});
    gemm_nt(x.data(), z.data(), r3.data(), 4, 6, 5);
    Tensor zt({5, 6});
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j) zt.at(j, i) = z.at(i, j);
    gemm_nn(x.data(), zt.data(), r4.data(), 4, 6, 5);
    for (std::size_t i = 0; i < r3.size(); ++i) CHECK(r3[i] == doctest::Approx(r4[i]));
}

TEST_CASE("rng determinism and ranges") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(5);
    for (int i = 0; i < 1000; ++i) {
        double d = r.next_double();
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
        long long v = r.uniform_int(-3, 3);
        CHECK(v >= -3);
        CHECK(v <= 3);
    }

    // Shuffle is a permutation and seed-stable.
    std::vector<int> v1{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<int> v2 = v1;
    Rng s1(9), s2(9);
    s1.shuffle(v1);
    s2.shuffle(v2);
    CHECK(v1 == v2);
    std::vector<int> sorted = v1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("seed fan-out separates stages") {
    auto s1 = fan_out(42, "shuffle");
    auto s2 = fan_out(42, "augment");
    auto s3 = fan_out(43, "shuffle");
    CHECK(s1 != s2);
    CHECK(s1 != s3);
    CHECK(fan_out(42, "shuffle") == s1);
    CHECK(fan_out(42, "shuffle", 0) != fan_out(42, "shuffle", 1));
}

TEST_CASE("normal draws have sane moments") {
    Rng r(11);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}
