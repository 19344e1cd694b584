#include "zecon/eval.hpp"

#include "zecon/error.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <sstream>

namespace zecon {

using json = nlohmann::json;

namespace {

double cosine(const Tensor& a, const Tensor& b) {
    const double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) throw Error("eval", "zero-length embedding");
    return dot(a, b) / (na * nb);
}

} // namespace

double clip_score(const Tensor& x, const std::string& target, const EmbedderAdapter& embedder) {
    return cosine(embedder.embed_image(x), embedder.embed_text(target));
}

double clip_score(const Tensor& x, const std::string& target, const EmbedderAdapter& embedder,
                  const PatchPolicy& policy, RandomStream& rng) {
    const Tensor text = embedder.embed_text(target);
    auto patches = crop_and_augment(ad::Var::constant(x), policy, embedder.input_size(), rng);
    double total = 0.0;
    for (const auto& p : patches) total += cosine(embedder.embed_image(p).value(), text);
    return total / static_cast<double>(patches.size());
}

std::optional<double> identity_distance(const Tensor& x, const Tensor& x_ref, const ImageEmbedder* face) {
    if (!face) return std::nullopt;
    return 1.0 - cosine(face->embed_image(x), face->embed_image(x_ref));
}

json EvalReport::aggregates() const {
    json a;
    const double n = static_cast<double>(rows.size());
    auto mean_of = [&](auto get) -> json {
        if (rows.empty()) return "unavailable";
        double s = 0.0;
        for (const auto& r : rows) {
            auto v = get(r);
            if (!v) return "unavailable";
            s += *v;
        }
        return s / n;
    };
    a["clip_global"] = mean_of([](const EvalRow& r) { return std::optional<double>(r.clip_global); });
    a["clip_patch"] = mean_of([](const EvalRow& r) { return std::optional<double>(r.clip_patch); });
    a["identity_distance"] = mean_of([](const EvalRow& r) { return r.identity_distance; });
    a["seconds"] = mean_of([](const EvalRow& r) { return r.seconds; });
    a["count"] = rows.size();
    return a;
}

json EvalReport::to_json() const {
    json per = json::array();
    for (const auto& r : rows) {
        json row{{"id", r.id}, {"clip_global", r.clip_global}, {"clip_patch", r.clip_patch}};
        row["identity_distance"] = r.identity_distance ? json(*r.identity_distance) : json("unavailable");
        row["seconds"] = r.seconds ? json(*r.seconds) : json("unavailable");
        per.push_back(row);
    }
    return {{"format", "zecon.eval.v1"},
            {"target_prompt", target_prompt},
            {"seed", seed},
            {"patch_policy",
             {{"n_patches", patch_policy.n_patches},
              {"min_frac", patch_policy.min_frac},
              {"max_frac", patch_policy.max_frac},
              {"augment", patch_policy.augment}}},
            {"per_image", per},
            {"aggregates", aggregates()}};
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    auto opt = [&](const std::optional<double>& v) {
        std::ostringstream s;
        s << std::setprecision(6) << std::fixed;
        if (v) s << *v; else s << "unavailable";
        return s.str();
    };
    os << "id\tclip_global\tclip_patch\tidentity_distance\tseconds\n";
    for (const auto& r : rows) {
        os << r.id << '\t' << r.clip_global << '\t' << r.clip_patch << '\t' << opt(r.identity_distance) << '\t'
           << opt(r.seconds) << '\n';
    }
    os << "# summary (" << rows.size() << " images, prompt \"" << target_prompt << "\")\n";
    const json agg = aggregates();
    for (const auto& [k, v] : agg.items()) os << "# " << k << " = " << v.dump() << '\n';
    return os.str();
}

EvalReport evaluate(const std::vector<EvalInput>& inputs, const std::string& target, const EmbedderAdapter& embedder,
                    const PatchPolicy& policy, std::uint64_t seed, const ImageEmbedder* face) {
    EvalReport report;
    report.target_prompt = target;
    report.patch_policy = policy;
    report.seed = seed;
    for (const auto& in : inputs) {
        EvalRow row;
        row.id = in.id;
        row.clip_global = clip_score(in.image, target, embedder);
        RandomStream rng(seed, "eval/" + in.id);
        row.clip_patch = clip_score(in.image, target, embedder, policy, rng);
        if (in.reference) row.identity_distance = identity_distance(in.image, *in.reference, face);
        row.seconds = in.seconds;
        report.rows.push_back(std::move(row));
    }
    return report;
}

json BenchmarkStats::to_json() const {
    return {{"seconds", seconds}, {"median", median}, {"spread", spread}, {"repetitions", seconds.size()}};
}

BenchmarkStats benchmark(const StyleTask& task, const RunConfig& config, std::size_t repetitions,
                         const RunOptions& options) {
    if (repetitions < 1) throw ValidationError("eval", "repetitions must be >= 1");
    RunOptions opts = options;
    opts.write_outputs = false;
    BenchmarkStats stats;
    for (std::size_t i = 0; i < repetitions; ++i) {
        const auto start = std::chrono::steady_clock::now();
        run_task(task, config, opts);
        stats.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    auto sorted = stats.seconds;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    stats.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    stats.spread = sorted.back() - sorted.front();
    return stats;
}

} // namespace zecon
