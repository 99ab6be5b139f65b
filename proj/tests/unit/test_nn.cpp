#include <doctest.h>

#include "drc/nn/layers.hpp"
#include "test_util.hpp"

using namespace drc;
using namespace drc::nn;
using test_util::check_grad_entries;
using test_util::random_tensor;
using test_util::sample_indices;
using test_util::weighted_sum;

namespace {

// Runs forward through `net` on a fresh tape and returns the projected loss.
template <class Net>
double run_loss(Net&& net, const Tensor& x, const Tensor& proj) {
    Tape t(false);
    Var vx = t.leaf(x);
    Var y = net(t, vx);
    return t.value(weighted_sum(t, y, proj))[0];
}

} // namespace

TEST_CASE("conv2d forward shape and gradient") {
    Rng rng(101);
    Conv2d conv("c", 3, 5, 3, 2, 1, /*bias=*/true);
    init_kernels({&conv.weight}, rng);
    for (std::size_t i = 0; i < conv.bias->value.size(); ++i)
        conv.bias->value[i] = rng.uniform(-0.5, 0.5);

    Tensor x = random_tensor({2, 9, 9, 3}, rng);
    Tensor proj = random_tensor({2, 5, 5, 5}, rng);

    auto fwd = [&](Tape& t, Var vx) { return conv(t, vx); };

    Tape t(true);
    Var vx = t.leaf(x);
    Var y = fwd(t, vx);
    CHECK(t.value(y).shape() == std::vector<int>{2, 5, 5, 5});
    Var loss = weighted_sum(t, y, proj);
    t.backward(loss);

    auto loss_fn = [&] { return run_loss(fwd, x, proj); };
    check_grad_entries(loss_fn, x.data(), t.grad(vx), sample_indices(x.size(), 20, rng));
    check_grad_entries(loss_fn, conv.weight.value.data(), conv.weight.grad,
                       sample_indices(conv.weight.value.size(), 20, rng));
    check_grad_entries(loss_fn, conv.bias->value.data(), conv.bias->grad, {0, 2, 4});
}

TEST_CASE("conv2d rejects bad inputs") {
    Conv2d conv("c", 3, 4, 3, 1, 1, false);
    Tape t(false);
    Var bad_rank = t.leaf(Tensor({2, 4, 4}));
    CHECK_THROWS_AS(conv(t, bad_rank), ShapeError);
    Var bad_ch = t.leaf(Tensor({1, 4, 4, 2}));
    CHECK_THROWS_AS(conv(t, bad_ch), ShapeError);
}

TEST_CASE("batchnorm training-mode gradient") {
    Rng rng(202);
    BatchNorm2d bn("bn", 4);
    for (int i = 0; i < 4; ++i) {
        bn.gamma.value[i] = rng.uniform(0.5, 1.5);
        bn.beta.value[i] = rng.uniform(-0.5, 0.5);
    }
    Tensor x = random_tensor({3, 4, 4, 4}, rng);
    Tensor proj = random_tensor({3, 4, 4, 4}, rng);

    // Running statistics shift across calls; freeze copies so the finite
    // difference closure evaluates the same function the tape recorded.
    auto fwd = [&](Tape& t, Var vx) {
        Tensor rm = bn.running_mean, rv = bn.running_var;
        Var out = bn(t, vx, /*training=*/true);
        bn.running_mean = rm;
        bn.running_var = rv;
        return out;
    };

    Tape t(true);
    Var vx = t.leaf(x);
    Var loss = weighted_sum(t, fwd(t, vx), proj);
    t.backward(loss);

    auto loss_fn = [&] { return run_loss(fwd, x, proj); };
    check_grad_entries(loss_fn, x.data(), t.grad(vx), sample_indices(x.size(), 20, rng));
    check_grad_entries(loss_fn, bn.gamma.value.data(), bn.gamma.grad, {0, 1, 2, 3});
    check_grad_entries(loss_fn, bn.beta.value.data(), bn.beta.grad, {0, 1, 2, 3});
}

TEST_CASE("batchnorm inference uses running stats and normalizes") {
    BatchNorm2d bn("bn", 2);
    bn.running_mean[0] = 1.0;
    bn.running_var[0] = 4.0;
    Tape t(false);
    Tensor x({1, 1, 1, 2});
    x[0] = 3.0;
    x[1] = 0.0;
    Var y = bn(t, t.leaf(x), /*training=*/false);
    CHECK(t.value(y)[0] == doctest::Approx((3.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
    CHECK(t.value(y)[1] == doctest::Approx(0.0));
}

TEST_CASE("linear gradient") {
    Rng rng(303);
    Linear fc("fc", 6, 3);
    init_kernels({&fc.weight}, rng);
    Tensor x = random_tensor({4, 6}, rng);
    Tensor proj = random_tensor({4, 3}, rng);

    auto fwd = [&](Tape& t, Var vx) { return fc(t, vx); };
    Tape t(true);
    Var vx = t.leaf(x);
    Var loss = weighted_sum(t, fwd(t, vx), proj);
    t.backward(loss);

    auto loss_fn = [&] { return run_loss(fwd, x, proj); };
    check_grad_entries(loss_fn, x.data(), t.grad(vx), sample_indices(x.size(), 12, rng));
    check_grad_entries(loss_fn, fc.weight.value.data(), fc.weight.grad,
                       sample_indices(fc.weight.value.size(), 12, rng));
    check_grad_entries(loss_fn, fc.bias->value.data(), fc.bias->grad, {0, 1, 2});
}

TEST_CASE("elementwise and pooling gradients") {
    Rng rng(404);
    Tensor x = random_tensor({2, 6, 6, 3}, rng);

    SUBCASE("relu") {
        Tensor proj = random_tensor({2, 6, 6, 3}, rng);
        auto fwd = [](Tape& t, Var v) { return relu(t, v); };
        Tape t(true);
        Var vx = t.leaf(x);
        Var loss = weighted_sum(t, fwd(t, vx), proj);
        t.backward(loss);
        auto loss_fn = [&] { return run_loss(fwd, x, proj); };
        check_grad_entries(loss_fn, x.data(), t.grad(vx), sample_indices(x.size(), 15, rng));
    }
    SUBCASE("avg_pool") {
        Tensor proj = random_tensor({2, 3, 3, 3}, rng);
        auto fwd = [](Tape& t, Var v) { return avg_pool(t, v, 2, 2); };
        Tape t(true);
        Var vx = t.leaf(x);
        Var loss = weighted_sum(t, fwd(t, vx), proj);
        t.backward(loss);
        auto loss_fn = [&] { return run_loss(fwd, x, proj); };
        check_grad_entries(loss_fn, x.data(), t.grad(vx), sample_indices(x.size(), 15, rng));
    }
    SUBCASE("max_pool") {
        Tensor proj = random_tensor({2, 3, 3, 3}, rng);
        auto fwd = [](Tape& t, Var v) { return max_pool(t, v, 3, 2, 1); };
        Tape t(true);
        Var vx = t.leaf(x);
        Var loss = weighted_sum(t, fwd(t, vx), proj);
        t.backward(loss);
        auto loss_fn = [&] { return run_loss(fwd, x, proj); };
        check_grad_entries(loss_fn, x.data(), t.grad(vx), sample_indices(x.size(), 15, rng));
    }
    SUBCASE("global_avg_pool") {
        Tensor proj = random_tensor({2, 3}, rng);
        auto fwd = [](Tape& t, Var v) { return global_avg_pool(t, v); };
        Tape t(true);
        Var vx = t.leaf(x);
        Var loss = weighted_sum(t, fwd(t, vx), proj);
        t.backward(loss);
        auto loss_fn = [&] { return run_loss(fwd, x, proj); };
        check_grad_entries(loss_fn, x.data(), t.grad(vx), sample_indices(x.size(), 15, rng));
    }
}

TEST_CASE("softmax rows normalize and gradient matches") {
    Rng rng(505);
    Tensor x = random_tensor({3, 5}, rng, -2.0, 2.0);
    Tensor proj = random_tensor({3, 5}, rng);
    auto fwd = [](Tape& t, Var v) { return softmax(t, v); };
    Tape t(true);
    Var vx = t.leaf(x);
    Var y = fwd(t, vx);
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) s += t.value(y).at(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    Var loss = weighted_sum(t, y, proj);
    t.backward(loss);
    auto loss_fn = [&] { return run_loss(fwd, x, proj); };
    check_grad_entries(loss_fn, x.data(), t.grad(vx), sample_indices(x.size(), 15, rng));
}

TEST_CASE("concat and add route gradients") {
    Rng rng(606);
    Tensor a = random_tensor({1, 2, 2, 2}, rng);
    Tensor b = random_tensor({1, 2, 2, 3}, rng);
    Tensor proj = random_tensor({1, 2, 2, 5}, rng);

    Tape t(true);
    Var va = t.leaf(a), vb = t.leaf(b);
    Var y = concat_channels(t, {va, vb});
    CHECK(t.value(y).shape() == std::vector<int>{1, 2, 2, 5});
    // Channel interleave preserved.
    CHECK(t.value(y).at(0, 1, 1, 0) == a.at(0, 1, 1, 0));
    CHECK(t.value(y).at(0, 1, 1, 2) == b.at(0, 1, 1, 0));
    Var loss = weighted_sum(t, y, proj);
    t.backward(loss);
    auto loss_fn = [&] {
        Tape t2(false);
        Var y2 = concat_channels(t2, {t2.leaf(a), t2.leaf(b)});
        return t2.value(weighted_sum(t2, y2, proj))[0];
    };
    check_grad_entries(loss_fn, a.data(), t.grad(va), sample_indices(a.size(), 8, rng));
    check_grad_entries(loss_fn, b.data(), t.grad(vb), sample_indices(b.size(), 8, rng));

    Tensor c = random_tensor({1, 2, 2, 2}, rng);
    Tape t4(true);
    Var va4 = t4.leaf(a), vc4 = t4.leaf(c);
    Var sum = add(t4, va4, vc4);
    Tensor proj2 = random_tensor({1, 2, 2, 2}, rng);
    t4.backward(weighted_sum(t4, sum, proj2));
    for (std::size_t i = 0; i < proj2.size(); ++i) {
        CHECK(t4.grad(va4)[i] == doctest::Approx(proj2[i]));
        CHECK(t4.grad(vc4)[i] == doctest::Approx(proj2[i]));
    }

    Tape t5(false);
    CHECK_THROWS_AS(add(t5, t5.leaf(a), t5.leaf(b)), ShapeError);
}

TEST_CASE("empty batch flows through") {
    Conv2d conv("c", 3, 4, 3, 1, 1, true);
    BatchNorm2d bn("bn", 4);
    Tape t(false);
    Var x = t.leaf(Tensor({0, 8, 8, 3}));
    Var y = bn(t, conv(t, x), true);
    y = global_avg_pool(t, relu(t, y));
    CHECK(t.value(y).shape() == std::vector<int>{0, 4});
}

TEST_CASE("init_kernels is seed-stable and scaled") {
    Conv2d c1("c", 8, 16, 3, 1, 1, false);
    Conv2d c2("c", 8, 16, 3, 1, 1, false);
    Rng r1(99), r2(99);
    init_kernels({&c1.weight}, r1);
    init_kernels({&c2.weight}, r2);
    double sq = 0.0;
    for (std::size_t i = 0; i < c1.weight.value.size(); ++i) {
        CHECK(c1.weight.value[i] == c2.weight.value[i]);
        CHECK(c1.weight.value[i] == nn::to_f32(c1.weight.value[i]));
        sq += c1.weight.value[i] * c1.weight.value[i];
    }
    const double fan_in = 3.0 * 3.0 * 8.0;
    const double expect_var = 2.0 / fan_in;
    CHECK(sq / double(c1.weight.value.size()) ==
          doctest::Approx(expect_var).epsilon(0.15));
}
