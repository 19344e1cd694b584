#include "support.hpp"

#include "zecon/error.hpp"
#include "zecon/models.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

using namespace zecon;

namespace {

NoiseSchedule linear() { return make_linear_schedule(1000, 1e-4, 0.02); }

/// log N(x; sqrt(abar) mu, (abar s2 + 1 - abar) I), up to a constant.
double log_density(const Tensor& x, const Tensor& mu, double s2, double ab) {
    const double var = ab * s2 + 1 - ab;
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - std::sqrt(ab) * mu[i]) * (x[i] - std::sqrt(ab) * mu[i]);
    return -0.5 * s / var;
}

} // namespace

TEST_CASE("analytic Gaussian score recovers the noise when s2 = 0") {
    auto s = linear();
    auto mu = test::random_image(4, 1);
    AnalyticGaussianScore model(mu, 0.0, s);
    RandomStream rng(2);
    for (std::size_t t : {1u, 250u, 999u}) {
        auto eps = rng.normal(mu.shape());
        auto xt = forward_diffuse(s, mu, t, eps);
        CHECK(max_abs_diff(model.predict_eps(xt, t), eps) <= 1e-10);
        CHECK(l2_norm(model.predict_eps(mu * std::sqrt(s.alpha_bar(t)), t)) == 0.0);
    }
}

TEST_CASE("analytic Gaussian score equals the scaled density gradient") {
    auto s = linear();
    auto mu = test::random_image(3, 1);
    const double s2 = 0.7;
    AnalyticGaussianScore model(mu, s2, s);
    auto x = test::random_image(3, 5, -2, 2);
    for (std::size_t t : {0u, 100u, 600u, 999u}) {
        const double ab = s.alpha_bar(t), h = 1e-6;
        auto eps = model.predict_eps(x, t);
        for (std::size_t i = 0; i < x.size(); ++i) {
            Tensor xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double grad = (log_density(xp, mu, s2, ab) - log_density(xm, mu, s2, ab)) / (2 * h);
            CHECK(std::abs(eps[i] + std::sqrt(1 - ab) * grad) <= 1e-8);
        }
    }
}

TEST_CASE("analytic Gaussian rejects a negative variance") {
    CHECK_THROWS_AS(analytic_gaussian_score(Tensor({3, 2, 2}), -1.0, linear()), ValidationError);
}

TEST_CASE("score adapters keep the shape contract") {
    auto s = linear();
    auto net = build_toy_unet(8, 3, 1, 16);
    AnalyticGaussianScore gauss(test::random_image(16, 1), 1.0, s);
    RandomStream rng(0);
    for (int i = 0; i < 5; ++i) {
        const std::size_t t = rng.uniform_index(1000);
        auto x = rng.normal({3, 16, 16});
        CHECK(net->predict_eps(x, t).shape() == x.shape());
        CHECK(gauss.predict_eps(x, t).shape() == x.shape());
    }
    CHECK_THROWS(net->predict_eps(Tensor({3, 8, 6}), 0));
    CHECK_THROWS(net->predict_eps(Tensor({1, 8, 8}), 0));
}

TEST_CASE("toy UNet encoder features") {
    auto net = build_toy_unet(8, 3, 7, 32);
    auto x = test::random_image(32, 1);
    auto f = net->encoder_features(ad::Var::constant(x), 10, {"enc0", "enc1", "enc2"});
    REQUIRE(f.size() == 3);
    CHECK(f[0].features.shape()[1] == 32);
    CHECK(f[1].features.shape()[1] == 16);
    CHECK(f[2].features.shape()[1] == 8);
    CHECK(net->feature_layers() == std::vector<std::string>{"enc0", "enc1", "enc2"});

    auto again = build_toy_unet(8, 3, 7, 32)->encoder_features(ad::Var::constant(x), 10, {"enc2"});
    CHECK(again[0].features.value() == f[2].features.value());

    auto only = net->encoder_features(ad::Var::constant(x), 10, {"enc1", "enc0"});
    CHECK(only[0].id == "enc1");
    CHECK(only[1].id == "enc0");
    CHECK_THROWS(net->encoder_features(ad::Var::constant(x), 10, {"enc9"}));
    CHECK_THROWS(build_toy_unet(8, 1, 0, 32));
}

TEST_CASE("toy UNet features are local") {
    auto net = build_toy_unet(8, 3, 3, 32);
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        RandomStream rng(seed, "locality");
        auto x = make_blob_image(32, rng);
        // scramble the pixels of the top-left 8x8 tile
        Tensor y = x;
        auto perm = rng.sample_without_replacement(64, 64);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 64; ++i) y.at(c, i / 8, i % 8) = x.at(c, perm[i] / 8, perm[i] % 8);
        auto fx = net->encoder_features(ad::Var::constant(x), 100, {"enc1"})[0].features.value();
        auto fy = net->encoder_features(ad::Var::constant(y), 100, {"enc1"})[0].features.value();
        // enc1 is 16x16: tile covers [0,4)^2; far block is [12,16)^2
        auto change = [&](std::size_t y0, std::size_t x0) {
            double s = 0.0;
            for (std::size_t c = 0; c < fx.dim(0); ++c)
                for (std::size_t i = y0; i < y0 + 4; ++i)
                    for (std::size_t j = x0; j < x0 + 4; ++j) s += std::abs(fx.at(c, i, j) - fy.at(c, i, j));
            return s;
        };
        if (change(0, 0) > change(12, 12)) ++wins;
    }
    CHECK(wins >= 19);
}

TEST_CASE("toy UNet save and load") {
    auto net = build_toy_unet(4, 2, 11, 16);
    auto path = std::filesystem::temp_directory_path() / "zecon_toy_unet_test.json";
    net->save(path);
    auto back = ToyUNet::load(path);
    auto x = test::random_image(16, 2);
    CHECK(back->predict_eps(x, 321) == net->predict_eps(x, 321));
    std::filesystem::remove(path);
}

TEST_CASE("toy UNet training lowers the loss") {
    ToyUNetOptions o;
    o.channels = 8;
    o.depth = 2;
    o.image_size = 16;
    ToyUNet net(o);
    ToyTrainingOptions t;
    t.steps = 60;
    t.learning_rate = 3e-3;
    auto losses = train_toy_unet(net, linear(), t);
    REQUIRE(losses.size() == 60);
    double first = 0, last = 0;
    for (int i = 0; i < 15; ++i) {
        first += losses[static_cast<std::size_t>(i)];
        last += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(last < first);
    // parameters are frozen again afterwards
    for (const auto& p : net.parameters()) CHECK_FALSE(p.requires_grad());
}

TEST_CASE("stub embedder is unit norm with a matching Jacobian") {
    StubEmbedder e(12, 4, 1);
    auto x = test::random_image(4, 3);
    CHECK(std::abs(l2_norm(e.embed_image(x)) - 1.0) <= 1e-12);
    CHECK(std::abs(l2_norm(e.embed_text("golden")) - 1.0) <= 1e-12);
    CHECK(e.embed_text("golden") == e.embed_text("golden"));
    CHECK(!(e.embed_text("golden") == e.embed_text("clay")));

    // each output coordinate against central differences
    for (std::size_t d = 0; d < 12; d += 5) {
        auto f = [&](const ad::Var& v) { return ad::slice(e.embed_image(v), d, {}); };
        auto r = test::check_gradient(f, x, 48, d, 1e-6);
        CHECK(r.max_rel_error <= 1e-6);
    }
}

TEST_CASE("callback adapters route gradients through the host VJP") {
    // host "model": features = 2x on one layer, eps = -x
    ScoreCallbacks cb;
    cb.predict_eps = [](const Tensor& x, std::size_t) { return x * -1.0; };
    cb.layers = {"a"};
    cb.features = [](const Tensor& x, std::size_t, const std::vector<std::string>& ids) {
        return std::vector<Tensor>(ids.size(), x * 2.0);
    };
    cb.features_vjp = [](const Tensor&, std::size_t, const std::vector<std::string>&, const std::vector<Tensor>& cot) {
        return cot[0] * 2.0;
    };
    CallbackScoreAdapter model("host", cb);
    auto x = test::random_image(4, 1);
    CHECK(model.predict_eps(x, 5) == x * -1.0);
    auto v = ad::Var::parameter(x);
    auto f = model.encoder_features(v, 5, {"a"});
    auto loss = ad::sum(ad::mul(f[0].features, f[0].features));
    ad::backward(loss);
    CHECK(max_abs_diff(v.grad(), x * 8.0) < 1e-12);
    CHECK_THROWS(model.encoder_features(v, 5, {"b"}));

    EmbedderCallbacks ecb;
    ecb.input_size = 4;
    ecb.embed_image = [](const Tensor& img) { return img.reshaped({img.size()}) * 0.5; };
    ecb.embed_image_vjp = [](const Tensor&, const Tensor& g) { return g * 0.5; };
    CallbackEmbedder emb("host_clip", ecb);
    auto p = ad::Var::parameter(x);
    ad::backward(ad::sum(emb.embed_image(p)));
    CHECK(max_abs_diff(p.grad(), Tensor(x.shape(), 0.5)) < 1e-12);
    CHECK_THROWS(emb.embed_text("anything"));
}

TEST_CASE("descriptor json and checkpoint paths") {
    ModelDescriptor d;
    d.type = "toy_unet";
    d.path = "${ZECON_CHECKPOINT_DIR}/unet.json";
    d.image_size = 256;
    d.schedule = ScheduleSpec{1000, 1e-4, 0.02, 50};
    d.layers = {"enc0", "enc1"};
    auto back = ModelDescriptor::from_json(d.to_json());
    CHECK(back.type == d.type);
    CHECK(back.path == d.path);
    CHECK(back.image_size == d.image_size);
    CHECK(back.layers == d.layers);
    CHECK(back.schedule->steps == 1000);
    CHECK(d.resolved_path("/ckpt") == std::filesystem::path("/ckpt/unet.json"));
    ModelDescriptor rel;
    rel.path = "weights/x.json";
    CHECK(rel.resolved_path("/root") == std::filesystem::path("/root/weights/x.json"));
}

TEST_CASE("registry errors") {
    ModelDescriptor d;
    d.type = "guided_diffusion_xl";
    try {
        load_pretrained(d);
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("toy_unet") != std::string::npos);
        CHECK(msg.find("analytic_gaussian") != std::string::npos);
    }
    ModelDescriptor missing;
    missing.type = "toy_unet";
    missing.path = "/nonexistent/unet.json";
    CHECK_THROWS_AS(load_pretrained(missing), Error);
}

TEST_CASE("schedule conflict between checkpoint and run config") {
    ModelDescriptor d;
    d.type = "toy_unet";
    d.image_size = 16;
    d.params = {{"channels", 4}, {"depth", 2}};
    d.schedule = ScheduleSpec{1000, 1e-4, 0.02, 50};
    LoadContext ctx;
    ctx.run_schedule = ScheduleSpec{500, 1e-4, 0.02, 50};
    try {
        load_pretrained(d, ctx);
        FAIL("expected a conflict");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("schedule conflict") != std::string::npos);
    }
    ctx.run_schedule = ScheduleSpec{1000, 1e-4, 0.02, 50};
    auto ok = load_pretrained(d, ctx);
    REQUIRE(ok->native_schedule());
    CHECK(ok->native_schedule()->steps() == 1000);
}

TEST_CASE("descriptor for a 256 x 256 model accepts 256 x 256 inputs") {
    ModelDescriptor d;
    d.type = "toy_unet";
    d.image_size = 256;
    d.params = {{"channels", 2}, {"depth", 2}};
    auto model = load_pretrained(d);
    REQUIRE(model->image_size());
    CHECK(*model->image_size() == 256);
    auto x = test::random_image(256, 1);
    CHECK(model->predict_eps(x, 500).shape() == x.shape());
}

TEST_CASE("perceptual extractors") {
    ToyConvExtractor ext(4, 2);
    auto f = ext.features(ad::Var::constant(test::random_image(8, 1)));
    REQUIRE(f.size() == 2);
    CHECK(f[0].shape() == std::vector<std::size_t>{4, 8, 8});
    CHECK(f[1].shape() == std::vector<std::size_t>{4, 4, 4});
    CHECK(ext.layers().size() == 2);
}
