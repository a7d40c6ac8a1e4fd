#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "splitcom/graph.hpp"
#include "splitcom/ops.hpp"
#include "splitcom/rng.hpp"

using namespace splitcom;
using ad::VarPtr;

namespace {

// Centered finite difference on one coordinate of a parameter tensor.
float fd_grad(Tensor& param, std::size_t idx, const std::function<float()>& loss_fn, float h = 1e-3f) {
    const float saved = param.data[idx];
    param.data[idx] = saved + h;
    const float lp = loss_fn();
    param.data[idx] = saved - h;
    const float lm = loss_fn();
    param.data[idx] = saved;
    return (lp - lm) / (2.0f * h);
}

bool grad_close(float analytic, float numeric, float rel_tol = 1e-2f, float abs_floor = 1e-4f) {
    const float diff = std::abs(analytic - numeric);
    return diff <= abs_floor + rel_tol * std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace

TEST_CASE("sum backward is all ones") {
    Rng rng(1);
    auto x = ad::leaf(ops::gaussian(rng, {3, 4}), true);
    auto loss = ad::sum(x);
    ad::backward(loss);
    for (float g : x->grad.data) CHECK(g == 1.0f);
}

TEST_CASE("x dot x gradient") {
    auto x = ad::leaf(Tensor({1, 1}, {3.0f}), true);
    auto loss = ad::sum(ad::mul(x, x));
    ad::backward(loss);
    CHECK(x->grad.data[0] == doctest::Approx(6.0f));
}

TEST_CASE("backward twice is a state error") {
    auto x = ad::leaf(Tensor({1}, {2.0f}), true);
    auto loss = ad::sum(x);
    ad::backward(loss);
    CHECK_THROWS_AS(ad::backward(loss), StateError);
}

TEST_CASE("non-scalar backward requires a seed") {
    auto x = ad::leaf(Tensor({2}, {1.0f, 2.0f}), true);
    auto y = ad::scale(x, 2.0f);
    CHECK_THROWS_AS(ad::backward(y), StateError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(7);
    Tensor aT = ops::gaussian(rng, {3, 4});
    Tensor bT = ops::gaussian(rng, {4, 2});
    auto loss_fn = [&] {
        auto a = ad::leaf(aT), b = ad::leaf(bT);
        auto c = ad::matmul(a, b);
        float total = 0;
        for (float v : c->value.data) total += v * v;
        return total;
    };
    auto a = ad::leaf(aT, true);
    auto b = ad::leaf(bT, true);
    auto c = ad::matmul(a, b);
    auto loss = ad::sum(ad::mul(c, c));
    ad::backward(loss);
    for (std::size_t i : {0ul, 5ul, 11ul}) CHECK(grad_close(a->grad.data[i], fd_grad(aT, i, loss_fn)));
    for (std::size_t i : {0ul, 3ul, 7ul}) CHECK(grad_close(b->grad.data[i], fd_grad(bT, i, loss_fn)));
}

TEST_CASE("composite block gradient vs finite differences") {
    // layer_norm -> matmul -> gelu -> softmax -> cross entropy, sampled coords
    Rng rng(13);
    Tensor xT = ops::gaussian(rng, {4, 8});
    Tensor wT = ops::gaussian(rng, {8, 8});
    Tensor gainT = Tensor::full({8}, 1.0f);
    Tensor biasT = ops::gaussian(rng, {8});
    const std::vector<int> targets = {1, 0, 7, 3};

    auto build = [&](bool grads) {
        auto x = ad::leaf(xT, grads);
        auto w = ad::leaf(wT, grads);
        auto gain = ad::leaf(gainT, grads);
        auto bias = ad::leaf(biasT, grads);
        auto h = ad::gelu(ad::matmul(ad::layer_norm(x, gain, bias), w));
        auto loss = ad::cross_entropy_loss(h, targets);
        return std::tuple{loss, x, w, gain, bias};
    };

    auto [loss, x, w, gain, bias] = build(true);
    ad::backward(loss);

    auto value_of = [&] { return std::get<0>(build(false))->value.data[0]; };
    Rng pick(99);
    struct Slot {
        Tensor* host;
        VarPtr var;
    };
    Slot slots[] = {{&xT, x}, {&wT, w}, {&gainT, gain}, {&biasT, bias}};
    for (auto& s : slots) {
        for (int trial = 0; trial < 5; ++trial) {
            std::size_t idx = pick.uniform_below(s.host->data.size());
            CHECK(grad_close(s.var->grad.data[idx], fd_grad(*s.host, idx, value_of)));
        }
    }
}

TEST_CASE("embed and slice gradients flow") {
    Rng rng(21);
    Tensor tableT = ops::gaussian(rng, {10, 6});
    auto table = ad::leaf(tableT, true);
    auto x = ad::embed({2, 2, 5}, table);
    auto part = ad::slice_cols(x, 2, 3);
    auto loss = ad::sum(part);
    ad::backward(loss);
    // row 2 used twice, row 5 once, cols 2..4 only
    CHECK(table->grad.data[2 * 6 + 2] == 2.0f);
    CHECK(table->grad.data[5 * 6 + 3] == 1.0f);
    CHECK(table->grad.data[5 * 6 + 0] == 0.0f);
    CHECK(table->grad.data[0] == 0.0f);

    CHECK_THROWS_AS(ad::embed({10}, table), IndexError);
}

TEST_CASE("dropout scales and masks deterministically") {
    Rng r1(5), r2(5);
    auto x = ad::leaf(Tensor::full({64}, 1.0f), true);
    auto d1 = ad::dropout(x, 0.5f, r1);
    auto d2 = ad::dropout(ad::leaf(Tensor::full({64}, 1.0f)), 0.5f, r2);
    CHECK(d1->value == d2->value);
    for (float v : d1->value.data) CHECK((v == 0.0f || v == 2.0f));
    auto loss = ad::sum(d1);
    ad::backward(loss);
    for (std::size_t i = 0; i < 64; ++i) CHECK(x->grad.data[i] == d1->value.data[i]);
}
