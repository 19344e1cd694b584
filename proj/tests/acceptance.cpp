#include "support.hpp"

#include "zecon/error.hpp"
#include "zecon/eval.hpp"
#include "zecon/guidance.hpp"
#include "zecon/guidance_content.hpp"
#include "zecon/guidance_style.hpp"
#include "zecon/image_io.hpp"
#include "zecon/pipeline.hpp"
#include "zecon/sampler.hpp"
#include "zecon/schedule.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

using namespace zecon;
using json = nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

NoiseSchedule base_schedule() { return make_linear_schedule(1000, 1e-4, 0.02); }

Outcome schedule_identities() {
    auto s = base_schedule();
    double worst = 0.0;
    long double prod = 1.0L;
    for (std::size_t t = 0; t < 1000; ++t) {
        const long double beta = 1e-4L + (0.02L - 1e-4L) * static_cast<long double>(t) / 999.0L;
        prod *= 1.0L - beta;
        worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(s.alpha_bar(t)) - prod)));
    }
    auto r = respace(s, 50);
    double mapped = 0.0;
    for (std::size_t k = 0; k < r.steps(); ++k) {
        mapped = std::max(mapped, std::abs(r.alpha_bar(k) - s.alpha_bar(r.timestep(k))));
        // the respaced betas must rebuild the same cumulative products
        double p = 1.0;
        for (std::size_t j = 0; j <= k; ++j) p *= 1.0 - r.betas()[j];
        mapped = std::max(mapped, std::abs(p - r.alpha_bar(k)));
    }
    return {worst <= 1e-12 && mapped <= 1e-12,
            "running-product max err " + fmt("%.2e", worst) + ", respaced max err " + fmt("%.2e", mapped)};
}

Outcome ddpm_forms_agree() {
    auto base = base_schedule();
    auto s = respace(base, 1000);
    SamplerConfig cfg;
    cfg.respaced_steps = 1000;
    RandomStream rng(2024, "acceptance/ddpm");
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t t = 1 + rng.uniform_index(999);
        auto x = rng.normal({3, 8, 8});
        auto eps = rng.normal({3, 8, 8});
        auto z = rng.normal({3, 8, 8});
        const double beta = base.betas()[t], ab = base.alpha_bar(t), ab_prev = base.alpha_bar(t - 1);
        const double sigma = std::sqrt((1 - ab_prev) / (1 - ab) * beta);
        Tensor ancestral(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            ancestral[i] = (x[i] - beta / std::sqrt(1 - ab) * eps[i]) / std::sqrt(1 - beta) + sigma * z[i];
        }
        auto got = reverse_step(s, {x, static_cast<int>(t)}, eps, denoised_estimate(eps, x, s, t), cfg, z);
        worst = std::max(worst, max_abs_diff(got.x, ancestral));
    }
    return {worst <= 1e-6, "max abs diff " + fmt("%.2e", worst) + " over 100 triples"};
}

Outcome round_trip() {
    auto s = respace(base_schedule(), 50);
    SamplerConfig cfg;
    cfg.forward_mode = ForwardMode::ddim_deterministic;
    cfg.reverse_mode = ReverseMode::ddim;
    cfg.eta = 0.0;
    cfg.t0_index = 25;
    cfg.respaced_steps = 50;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto x0 = test::random_image(16, seed, -0.9, 0.9);
        AnalyticGaussianScore prior(x0, 1.0, base_schedule());
        auto out = sample(x0, s, cfg, prior, NullGuidance{}, RandomStream(seed));
        worst = std::max(worst, relative_l2(out.image, x0));
    }
    // same sampler with a prior that does not memorise the input, for reference
    auto x0 = test::random_image(16, 0, -0.9, 0.9);
    AnalyticGaussianScore broad(Tensor(x0.shape()), 1.0, base_schedule());
    const double off = relative_l2(sample(x0, s, cfg, broad, NullGuidance{}, RandomStream(0)).image, x0);
    return {worst <= 1e-3, "prior mean = x0: rel L2 " + fmt("%.2e", worst) + " (zero-mean prior: " + fmt("%.2e", off) +
                               ", reported only)"};
}

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

Outcome infonce_oracle() {
    RandomStream rng(7, "acceptance/infonce");
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t dim = 2 + rng.uniform_index(7), n = 1 + rng.uniform_index(8);
        const double tau = rng.uniform(0.05, 1.0);
        auto vec = [&] {
            std::vector<double> v(dim);
            for (double& x : v) x = rng.normal();
            return v;
        };
        auto q = vec(), p = vec();
        std::vector<std::vector<double>> negs;
        for (std::size_t i = 0; i < n; ++i) negs.push_back(vec());
        std::vector<std::span<const double>> spans(negs.begin(), negs.end());
        worst = std::max(worst, std::abs(infonce(q, p, spans, tau) - naive_infonce(q, p, negs, tau)));
    }
    double uniform = 0.0;
    for (std::size_t n = 1; n <= 64; n *= 2) {
        std::vector<double> q{0.3, -1.2, 0.5}, same{2.0, 1.0, -1.0};
        std::vector<std::span<const double>> negs(n, std::span<const double>(same));
        uniform = std::max(uniform, std::abs(infonce(q, same, negs, 0.07) - std::log(1.0 + static_cast<double>(n))));
    }
    return {worst <= 1e-6 && uniform <= 1e-12,
            "max |stable - naive| " + fmt("%.2e", worst) + ", max |uniform - log(1+N)| " + fmt("%.2e", uniform)};
}

Outcome gradient_check() {
    auto x0 = test::random_image(8, 1, -0.8, 0.8);
    auto xh = test::random_image(8, 2, -0.8, 0.8);
    auto net = build_toy_unet(8, 3, 5, 8);
    auto embedder = std::make_shared<StubEmbedder>(16, 8, 3);
    auto extractor = std::make_shared<ToyConvExtractor>(4, 1);
    ZeconGuidance::Options o;
    o.weights = {1.0, 1.0, 0.05, 2.0, 0.5};
    o.contrastive = {{"enc0", "enc1", "enc2"}, 8, 0.07};
    o.patches.n_patches = 4;
    o.patches.min_frac = 0.5;
    o.patches.max_frac = 1.0;
    o.prompts = {"photo", "golden"};
    ZeconGuidance g(x0, o, net, embedder, extractor);
    auto f = [&](const ad::Var& x) {
        RandomStream r(9);
        return g.loss(x, 150, r);
    };
    auto r = test::check_gradient(f, xh, 32, 4);
    return {r.checked >= 20 && r.max_rel_error <= 1e-3,
            "max rel err " + fmt("%.2e", r.max_rel_error) + " over " + std::to_string(r.checked) + " coordinates"};
}

Outcome patch_policy() {
    auto image = ad::Var::constant(test::random_image(256, 3));
    std::string detail;
    bool ok = true;
    for (std::size_t n : {32u, 96u}) {
        for (auto [lo, hi] : {std::pair{0.01, 0.05}, std::pair{0.01, 0.3}}) {
            PatchPolicy p;
            p.n_patches = n;
            p.min_frac = lo;
            p.max_frac = hi;
            RandomStream rng(n, "acceptance/patches");
            std::vector<PatchGeometry> geo;
            auto patches = crop_and_augment(image, p, 16, rng, &geo);
            bool inside = geo.size() == n;
            for (const auto& gm : geo) inside = inside && gm.crop_frac >= lo && gm.crop_frac <= hi;
            ok = ok && patches.size() == n && inside;
        }
    }
    detail = "N in {32, 96} x ranges {(0.01,0.05), (0.01,0.3)}: counts and crop fractions " +
             std::string(ok ? "as configured" : "out of range");
    return {ok, detail};
}

json analytic_doc(const std::string& target) {
    json doc = json::parse(R"({
      "sampler": {"T_prime": 50, "t0": 25, "forward_mode": "ddim", "reverse_mode": "ddim", "eta": 0},
      "guidance_content": {"zecon": 0, "mse": 0, "vgg": 0},
      "guidance_style": {"global": 0, "dir": 0},
      "models": {"score": {"type": "analytic_gaussian", "params": {"mu": "source", "s2": 1.0}}},
      "task": {"seed": 4}
    })");
    doc["task"]["target_prompt"] = target;
    doc["task"]["source_prompt"] = "photo";
    return doc;
}

Outcome degenerate_purity() {
    auto src = test::random_image(16, 12, -0.9, 0.9);
    RunOptions o;
    o.source = src;
    o.write_outputs = false;
    auto a = run_task(validate_config(analytic_doc("golden")), o);
    auto b = run_task(validate_config(analytic_doc("watercolor painting of a cat")), o);
    const double err = relative_l2(a.result.image, src);
    const bool same = a.result.image == b.result.image;
    return {err <= 1e-3 && same, "rel L2 " + fmt("%.2e", err) + ", outputs for different prompts " +
                                     (same ? "bitwise equal" : "differ")};
}

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

Outcome zecon_ordering() {
    auto net = build_toy_unet(8, 3, 5, 32);
    ContrastiveConfig cfg;
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        RandomStream img_rng(seed, "acceptance/ordering");
        auto x0 = make_blob_image(32, img_rng);
        auto shuffled = shuffle_tiles(x0, 8, img_rng);
        RandomStream r1(seed), r2(seed);
        if (zecon_loss(x0, x0, *net, 200, cfg, r1) < zecon_loss(shuffled, x0, *net, 200, cfg, r2)) ++wins;
    }
    return {wins >= 95, std::to_string(wins) + "/100 trials ordered"};
}

Outcome end_to_end() {
    const auto dir = std::filesystem::temp_directory_path() / "zecon_acceptance";
    std::filesystem::remove_all(dir);
    RandomStream rng(5, "acceptance/source");
    write_image(make_blob_image(128, rng), dir / "source.png");

    // default toy models at (T', t0) = (50, 25); weights scaled to the toy networks
    json doc = json::parse(R"({
      "sampler": {"T_prime": 50, "t0": 25},
      "guidance_content": {"zecon": 0.02, "mse": 1, "vgg": 0.1},
      "guidance_style": {"global": 0.5, "dir": 0.5, "patch": {"n_patches": 16}},
      "task": {"source_prompt": "photo", "target_prompt": "golden", "seed": 11}
    })");
    doc["task"]["source"] = (dir / "source.png").string();
    doc["task"]["output"] = (dir / "out.png").string();
    auto first = run_task(validate_config(doc));

    json saved;
    std::ifstream(first.manifest_path) >> saved;
    auto again = rerun_manifest(saved, {}, (dir / "rerun.png").string());
    const double moved = relative_l2(first.result.image, first.source);
    const bool same_digest = again.manifest["image_digest"] == saved["image_digest"];
    const bool same_file = read_image(dir / "out.png") == read_image(dir / "rerun.png");
    std::filesystem::remove_all(dir);
    return {moved > 0.01 && same_digest && same_file && first.result.trace.size() == 26,
            "rel L2 from input " + fmt("%.3f", moved) + ", rerun " +
                (same_digest && same_file ? "reproduces digest and file" : "differs")};
}

Outcome full_scale(const std::string& config_path) {
    auto base = load_config(config_path);
    Tensor src = read_image(base.task.source_image_path);
    int improved = 0, timed = 0, runs = 0;
    std::string names;
    for (const auto& preset : style_presets()) {
        if (preset.model != "imagenet" || runs == 5) continue;
        RunConfig c = base;
        apply_preset(c, preset);
        c.task.prompts = {preset.source_prompt, preset.target_prompt};
        RunOptions o;
        o.source = src;
        o.write_outputs = false;
        const auto start = std::chrono::steady_clock::now();
        auto out = run_task(c, o);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs >= 19.0 && secs <= 57.0) ++timed;
        auto embedder = load_models(c, &out.source, {}).embedder;
        RandomStream r1(0, "eval"), r2(0, "eval");
        const double before = clip_score(out.source, preset.target_prompt, *embedder, c.effective_patch(), r1);
        const double after = clip_score(out.result.image, preset.target_prompt, *embedder, c.effective_patch(), r2);
        if (after > before) ++improved;
        ++runs;
    }
    return {timed == runs && improved >= 4,
            std::to_string(timed) + "/" + std::to_string(runs) + " runs within 38 s +/- 50%, " +
                std::to_string(improved) + "/" + std::to_string(runs) + " styles raise the patch CLIP score"};
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_seconds;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "schedule identities", 1.0, schedule_identities},
        {2, "DDPM update equals its DDIM form", 1.0, ddpm_forms_agree},
        {3, "inversion round trip", 5.0, round_trip},
        {4, "InfoNCE oracle", 5.0, infonce_oracle},
        {5, "total loss gradient", 60.0, gradient_check},
        {6, "patch policy", 5.0, patch_policy},
        {7, "zero-guidance purity", 5.0, degenerate_purity},
        {8, "ZeCon ordering", 120.0, zecon_ordering},
        {9, "end-to-end toy run", 60.0, end_to_end},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.budget_seconds;
        const bool pass = o.pass && in_time;
        if (!pass) ++failed;
        std::printf("criterion %2d %-36s %s  %s [%.2f s, budget %.0f s%s]\n", c.id, c.name, pass ? "PASS" : "FAIL",
                    o.detail.c_str(), secs, c.budget_seconds, in_time ? "" : ", over budget");
        std::fflush(stdout);
    }

    const char* full = std::getenv("ZECON_FULL_SCALE");
    if (full && *full) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = full_scale(full);
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!o.pass) ++failed;
        std::printf("criterion 10 %-36s %s  %s [%.2f s]\n", "full-scale presets", o.pass ? "PASS" : "FAIL",
                    o.detail.c_str(), secs);
    } else {
        std::printf("criterion 10 %-36s SKIPPED  set ZECON_FULL_SCALE=<config.json> with real checkpoints\n",
                    "full-scale presets");
    }
    return failed == 0 ? 0 : 1;
}
