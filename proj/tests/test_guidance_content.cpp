#include "support.hpp"

#include "zecon/error.hpp"
#include "zecon/guidance_content.hpp"

#include <doctest.h>

#include <cmath>

using namespace zecon;

namespace {

/// Exposes the input image itself as its single feature layer "pixels".
class PixelFeatures final : public ScoreAdapter {
public:
    std::string name() const override { return "pixel_features"; }
    Tensor predict_eps(const Tensor& x, std::size_t) const override { return Tensor::zeros_like(x); }
    bool has_encoder_features() const override { return true; }
    std::vector<std::string> feature_layers() const override { return {"pixels"}; }
    FeatureStack encoder_features(const ad::Var& x, std::size_t, const std::vector<std::string>& ids) const override {
        FeatureStack s;
        for (const auto& id : ids) {
            if (id != "pixels") throw Error("test", "unknown layer " + id);
            s.push_back({id, x});
        }
        return s;
    }
};

class NoFeatures final : public ScoreAdapter {
public:
    std::string name() const override { return "no_features"; }
    Tensor predict_eps(const Tensor& x, std::size_t) const override { return Tensor::zeros_like(x); }
};

double naive_infonce(const std::vector<double>& q, const std::vector<double>& p,
                     const std::vector<std::vector<double>>& negs, double tau) {
    auto unit = [](std::vector<double> v) {
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= n;
        return v;
    };
    auto d = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    const auto uq = unit(q);
    const double pos = std::exp(d(uq, unit(p)) / tau);
    double denom = pos;
    for (const auto& n : negs) denom += std::exp(d(uq, unit(n)) / tau);
    return -std::log(pos / denom);
}

std::shared_ptr<ToyUNet> toy(std::size_t size = 8) { return build_toy_unet(8, 3, 5, size); }

/// Image with its 4x4 tiles permuted (a derangement: every tile moves).
Tensor shuffle_tiles(const Tensor& x, std::size_t tile, RandomStream& rng) {
    const std::size_t n = x.dim(1) / tile, count = n * n;
    std::vector<std::size_t> perm;
    for (;;) {
        perm = rng.sample_without_replacement(count, count);
        bool moved = true;
        for (std::size_t i = 0; i < count; ++i) moved = moved && perm[i] != i;
        if (moved) break;
    }
    Tensor out = x;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t sy = perm[i] / n, sx = perm[i] % n, dy = i / n, dx = i % n;
        for (std::size_t c = 0; c < x.dim(0); ++c)
            for (std::size_t y = 0; y < tile; ++y)
                for (std::size_t xx = 0; xx < tile; ++xx)
                    out.at(c, dy * tile + y, dx * tile + xx) = x.at(c, sy * tile + y, sx * tile + xx);
    }
    return out;
}

} // namespace

TEST_CASE("infonce hand value") {
    std::vector<double> v{1, 0}, pos{1, 0}, neg{0, 1};
    const double l = infonce(v, pos, {std::span<const double>(neg)}, 1.0);
    CHECK(l == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-14));
    CHECK(l == doctest::Approx(0.31326).epsilon(1e-5));
}

TEST_CASE("infonce under uniform logits is log(1 + N)") {
    RandomStream rng(3);
    for (std::size_t n : {1u, 4u, 31u}) {
        auto q = rng.normal({5}).vec();
        auto k = rng.normal({5}).vec();
        std::vector<std::span<const double>> negs(n, std::span<const double>(k));
        CHECK(infonce(q, k, negs, 0.07) == doctest::Approx(std::log(1.0 + n)).epsilon(1e-12));
    }
}

TEST_CASE("infonce matches the naive evaluation") {
    RandomStream rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t dim = 2 + rng.uniform_index(6), n = 1 + rng.uniform_index(6);
        const double tau = rng.uniform(0.2, 2.0);
        auto q = rng.normal({dim}).vec(), p = rng.normal({dim}).vec();
        std::vector<std::vector<double>> negs;
        std::vector<std::span<const double>> spans;
        for (std::size_t i = 0; i < n; ++i) negs.push_back(rng.normal({dim}).vec());
        for (const auto& v : negs) spans.emplace_back(v);
        CHECK(std::abs(infonce(q, p, spans, tau) - naive_infonce(q, p, negs, tau)) <= 1e-6);
    }
}

TEST_CASE("infonce is stable at small temperatures and nonnegative when the positive wins") {
    std::vector<double> v{1, 0.1}, pos{1, 0.1}, neg{-1, 0.3};
    const double l = infonce(v, pos, {std::span<const double>(neg)}, 1e-3);
    CHECK(std::isfinite(l));
    CHECK(l >= 0.0);
}

TEST_CASE("infonce errors") {
    std::vector<double> v{1, 0}, zero{0, 0};
    CHECK_THROWS_AS(infonce(v, v, {}, 1.0), Error);
    CHECK_THROWS_AS(infonce(zero, v, {std::span<const double>(v)}, 1.0), Error);
    CHECK_THROWS_AS(infonce(v, v, {std::span<const double>(v)}, 0.0), Error);
}

TEST_CASE("zecon loss on two hand-built locations") {
    // one channel pair per location: image [2, 1, 2]
    Tensor x0({2, 1, 2}, {1.0, 0.0, 0.0, 1.0});     // loc0 = (1,0), loc1 = (0,1)
    Tensor xh({2, 1, 2}, {1.0, 1.0, 0.5, -1.0});    // loc0 = (1,0.5), loc1 = (1,-1)
    PixelFeatures model;
    ContrastiveConfig cfg{{"pixels"}, 2, 0.5};
    RandomStream rng(1);
    const double got = zecon_loss(xh, x0, model, 0, cfg, rng);
    std::vector<double> q0{1.0, 0.5}, q1{1.0, -1.0}, k0{1.0, 0.0}, k1{0.0, 1.0};
    const double expect = infonce(q0, k0, {std::span<const double>(k1)}, 0.5) +
                          infonce(q1, k1, {std::span<const double>(k0)}, 0.5);
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("zecon loss ordering on the toy UNet") {
    auto net = toy(32);
    ContrastiveConfig cfg;
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RandomStream img_rng(seed, "img");
        auto x0 = make_blob_image(32, img_rng);
        auto shuffled = shuffle_tiles(x0, 8, img_rng);
        RandomStream r1(seed), r2(seed);
        if (zecon_loss(x0, x0, *net, 200, cfg, r1) < zecon_loss(shuffled, x0, *net, 200, cfg, r2)) ++wins;
    }
    CHECK(wins >= 9);
}

TEST_CASE("zecon loss does not depend on layer order and is directional") {
    auto net = toy(16);
    auto a = test::random_image(16, 1), b = test::random_image(16, 2);
    ContrastiveConfig fwd{{"enc0", "enc1", "enc2"}, 16, 0.07};
    ContrastiveConfig rev{{"enc2", "enc0", "enc1"}, 16, 0.07};
    RandomStream r1(5), r2(5), r3(5);
    const double l1 = zecon_loss(a, b, *net, 100, fwd, r1);
    const double l2 = zecon_loss(a, b, *net, 100, rev, r2);
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
    CHECK(std::abs(zecon_loss(b, a, *net, 100, fwd, r3) - l1) > 1e-6);
}

TEST_CASE("zecon loss uses the same positions for both stacks") {
    auto net = toy(16);
    auto a = test::random_image(16, 1);
    ContrastiveConfig cfg{{"enc0", "enc1"}, 10, 0.07};
    RandomStream rng(2);
    SampledPositions pos;
    zecon_loss(ad::Var::constant(a), a, *net, 10, cfg, rng, &pos);
    REQUIRE(pos.per_layer.size() == 2);
    CHECK(pos.per_layer[0].size() == 10);
    CHECK(pos.per_layer[1].size() == 10);
}

TEST_CASE("zecon loss errors") {
    NoFeatures plain;
    ContrastiveConfig cfg;
    RandomStream rng(0);
    auto x = test::random_image(8, 1);
    CHECK_THROWS_AS(zecon_loss(x, x, plain, 0, cfg, rng), Error);
    PixelFeatures px;
    ContrastiveConfig one{{"pixels"}, 2, 0.07};
    Tensor tiny({2, 1, 1}, {1.0, 0.0});
    CHECK_THROWS_AS(zecon_loss(tiny, tiny, px, 0, one, rng), Error);
    ContrastiveConfig bad{{"pixels"}, 1, 0.07};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("pixel and perceptual losses") {
    Tensor a({2}, {1.0, 1.0}), z({2}, {0.0, 0.0});
    CHECK(pixel_loss(a, z) == 1.0);
    CHECK(pixel_loss(a, a) == 0.0);

    auto x = test::random_image(5, 1), y = test::random_image(5, 2);
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) s += (x.at(c, i, j) - y.at(c, i, j)) * (x.at(c, i, j) - y.at(c, i, j));
    CHECK(std::abs(pixel_loss(x, y) - s / 75.0) <= 1e-12);
    CHECK(pixel_loss(x, y) == pixel_loss(y, x));

    IdentityExtractor id;
    CHECK(perceptual_loss(x, y, id) == doctest::Approx(pixel_loss(x, y)).epsilon(1e-14));
    CHECK(perceptual_loss(x, x, id) == 0.0);

    // features = M * pixel, M = [[1, 2, 0], [0, -1, 1]]
    LinearExtractor lin(Tensor({2, 3}, {1, 2, 0, 0, -1, 1}));
    double hand = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            const double d0 = x.at(0, i, j) - y.at(0, i, j), d1 = x.at(1, i, j) - y.at(1, i, j),
                         d2 = x.at(2, i, j) - y.at(2, i, j);
            hand += (d0 + 2 * d1) * (d0 + 2 * d1) + (-d1 + d2) * (-d1 + d2);
        }
    CHECK(perceptual_loss(x, y, lin) == doctest::Approx(hand / 50.0).epsilon(1e-12));
    CHECK(perceptual_loss(x, y, lin) == doctest::Approx(perceptual_loss(y, x, lin)).epsilon(1e-14));

    CHECK_THROWS(pixel_loss(x, test::random_image(4, 1)));
}

TEST_CASE("content loss weights") {
    auto net = toy();
    ToyConvExtractor ext(4, 1);
    ContrastiveConfig cfg;
    auto x0 = test::random_image(8, 1), xh = test::random_image(8, 2);

    RandomStream rng(0);
    auto v = ad::Var::parameter(xh);
    auto zero = content_loss(v, x0, *net, 50, {0, 0, 0}, cfg, &ext, rng);
    CHECK(zero.value().item() == 0.0);
    ad::backward(zero);
    CHECK(l2_norm(v.grad()) == 0.0);

    auto eval = [&](ContentWeights w) {
        RandomStream r(4);
        auto p = ad::Var::parameter(xh);
        auto l = content_loss(p, x0, *net, 50, w, cfg, &ext, r);
        ad::backward(l);
        return std::make_pair(l.value().item(), p.grad());
    };
    auto [l1, g1] = eval({100, 10, 5000});
    auto [l3, g3] = eval({300, 30, 15000});
    CHECK(l3 == doctest::Approx(3 * l1).epsilon(1e-12));
    CHECK(max_abs_diff(g3, g1 * 3.0) <= 1e-9 * l2_norm(g3));

    NoFeatures plain;
    try {
        RandomStream r(0);
        content_loss(ad::Var::constant(xh), x0, plain, 0, {1, 0, 0}, cfg, nullptr, r);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.component() == "content.zecon");
    }
    RandomStream r(0);
    CHECK_THROWS_AS(content_loss(ad::Var::constant(xh), x0, *net, 0, {0, 1, 0}, cfg, nullptr, r), Error);
    CHECK_THROWS_AS(content_loss(ad::Var::constant(xh), x0, *net, 0, {-1, 0, 0}, cfg, nullptr, r), ValidationError);
}

TEST_CASE("content loss gradient matches finite differences") {
    auto net = toy();
    ToyConvExtractor ext(4, 1);
    ContrastiveConfig cfg;
    auto x0 = test::random_image(8, 1), xh = test::random_image(8, 2);
    auto f = [&](const ad::Var& x) {
        RandomStream r(7);
        return content_loss(x, x0, *net, 120, {100, 10, 5000}, cfg, &ext, r);
    };
    auto r = test::check_gradient(f, xh, 24, 1);
    CHECK(r.checked == 24);
    CHECK(r.max_rel_error <= 1e-3);
}
