#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "splitcom/federation.hpp"
#include "splitcom/ops.hpp"

using namespace splitcom;
using namespace splitcom::fed;
using model::LoraAdapter;
using model::LoraAdapterSet;

namespace {

LoraAdapterSet scalar_set(float value) {
    LoraAdapterSet s;
    s.layer_begin = 0;
    s.layer_end = 1;
    s.q.push_back({Tensor({1, 1}, {value}), Tensor({1, 1}, {value})});
    s.v.push_back({Tensor({1, 1}, {value}), Tensor({1, 1}, {value})});
    return s;
}

LoraAdapterSet random_set(std::uint64_t seed) {
    Rng rng(seed);
    LoraAdapterSet s;
    s.layer_begin = 1;
    s.layer_end = 3;
    for (int l = 0; l < 2; ++l) {
        s.q.push_back({ops::gaussian(rng, {4, 2}), ops::gaussian(rng, {2, 4})});
        s.v.push_back({ops::gaussian(rng, {4, 2}), ops::gaussian(rng, {2, 4})});
    }
    return s;
}

bool sets_equal(const LoraAdapterSet& a, const LoraAdapterSet& b) {
    if (a.q.size() != b.q.size() || a.v.size() != b.v.size()) return false;
    for (std::size_t l = 0; l < a.q.size(); ++l)
        if (!(a.q[l].a == b.q[l].a && a.q[l].b == b.q[l].b)) return false;
    for (std::size_t l = 0; l < a.v.size(); ++l)
        if (!(a.v[l].a == b.v[l].a && a.v[l].b == b.v[l].b)) return false;
    return true;
}

}  // namespace

TEST_CASE("client weights from shard sizes") {
    auto w = client_weights({10, 30});
    CHECK(w[0] == doctest::Approx(0.25));
    CHECK(w[1] == doctest::Approx(0.75));
    // IID equal partition -> exactly 1/K
    auto eq = client_weights({25, 25, 25, 25});
    for (double v : eq) CHECK(v == 0.25);
    CHECK_THROWS_AS(client_weights({5, 0}), ConfigError);
}

TEST_CASE("weight validation") {
    CHECK_NOTHROW(validate_weights({0.5, 0.5}, 2));
    CHECK_THROWS_AS(validate_weights({0.5, 0.6}, 2), ConfigError);
    CHECK_THROWS_AS(validate_weights({1.5, -0.5}, 2), ConfigError);
    CHECK_THROWS_AS(validate_weights({1.0}, 2), ConfigError);
}

TEST_CASE("fedavg identity, midpoint, weighted scalar") {
    auto x = random_set(1);
    CHECK(sets_equal(fedavg({x}, {1.0}), x));

    auto y = random_set(2);
    auto mid = fedavg({x, y}, {0.5, 0.5});
    for (std::size_t l = 0; l < x.q.size(); ++l)
        for (std::size_t i = 0; i < x.q[l].a.data.size(); ++i)
            CHECK(mid.q[l].a.data[i] == doctest::Approx(0.5f * (x.q[l].a.data[i] + y.q[l].a.data[i])));

    auto agg = fedavg({scalar_set(0.0f), scalar_set(4.0f)}, {0.25, 0.75});
    CHECK(agg.q[0].a.data[0] == 3.0f);
    CHECK(agg.v[0].b.data[0] == 3.0f);
}

TEST_CASE("fedavg idempotence and convex hull") {
    auto x = random_set(3);
    // three identical sets with irrational-ish weights still return x exactly
    auto same = fedavg({x, x, x}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    CHECK(sets_equal(same, x));

    auto a = random_set(4), b = random_set(5), c = random_set(6);
    auto agg = fedavg({a, b, c}, {0.2, 0.3, 0.5});
    for (std::size_t l = 0; l < agg.q.size(); ++l)
        for (std::size_t i = 0; i < agg.q[l].a.data.size(); ++i) {
            const float lo = std::min({a.q[l].a.data[i], b.q[l].a.data[i], c.q[l].a.data[i]});
            const float hi = std::max({a.q[l].a.data[i], b.q[l].a.data[i], c.q[l].a.data[i]});
            CHECK(agg.q[l].a.data[i] >= lo);
            CHECK(agg.q[l].a.data[i] <= hi);
        }
}

TEST_CASE("fedavg structural errors") {
    auto x = random_set(1);
    auto y = random_set(2);
    y.q[0].a = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(fedavg({x, y}, {0.5, 0.5}), ShapeError);

    auto z = random_set(3);
    z.layer_end = 4;
    CHECK_THROWS_AS(fedavg({x, z}, {0.5, 0.5}), ShapeError);

    CHECK_THROWS_AS(fedavg({}, {}), ConfigError);
    CHECK_THROWS_AS(fedavg({x, random_set(2)}, {0.7, 0.2}), ConfigError);
}
