// zecon command-line front end: guided style transfer runs, manifests,
// config validation, presets, evaluation and benchmarking.

#include "zecon/eval.hpp"
#include "zecon/image_io.hpp"
#include "zecon/models.hpp"
#include "zecon/pipeline.hpp"
#include "zecon/presets.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace zecon;

namespace {

int report_error(const std::exception& e, const std::string& output = {}) {
    json rec = error_record(e);
    std::cerr << rec.dump(2) << "\n";
    if (!output.empty()) {
        std::ofstream(output + ".error.json") << rec.dump(2) << "\n";
    }
    return dynamic_cast<const ValidationError*>(&e) ? 2 : 1;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cli", "cannot read " + p.string());
    return json::parse(in, nullptr, true, true);
}

struct RunArgs {
    std::string source, output, target, source_prompt, preset, config, mode, batch;
    std::optional<std::uint64_t> seed;
    std::optional<int> t0, t_prime;
    std::size_t threads = 1;
    std::string checkpoint_dir;
};

RunConfig build_config(const RunArgs& a) {
    json doc = a.config.empty() ? json::object() : read_json(a.config);
    if (!a.preset.empty()) {
        if (a.config.empty() || !doc.contains("preset")) doc["preset"] = a.preset;
        else throw ValidationError("cli", "give either --preset or a config with a preset, not both");
    }
    auto& task = doc["task"];
    if (!a.source.empty()) task["source"] = a.source;
    if (!a.output.empty()) task["output"] = a.output;
    if (!a.target.empty()) task["target_prompt"] = a.target;
    if (!a.source_prompt.empty()) task["source_prompt"] = a.source_prompt;
    if (!a.mode.empty()) task["mode"] = a.mode;
    if (a.seed) task["seed"] = *a.seed;
    if (a.t0) doc["sampler"]["t0"] = *a.t0;
    if (a.t_prime) doc["sampler"]["T_prime"] = *a.t_prime;
    return validate_config(doc);
}

int cmd_run(const RunArgs& a) {
    RunOptions opts;
    opts.checkpoint_root = a.checkpoint_dir;
    std::string out_hint = a.output;
    try {
        RunConfig cfg = build_config(a);
        if (!a.batch.empty()) {
            json list = read_json(a.batch);
            if (!list.is_array()) throw ValidationError("cli", "batch file must be a JSON array of tasks");
            std::vector<StyleTask> tasks;
            for (const auto& j : list) {
                StyleTask t = cfg.task;
                t.source_image_path = j.value("source", t.source_image_path);
                t.output_path = j.value("output", t.output_path);
                t.prompts.target = j.value("target_prompt", t.prompts.target);
                t.prompts.source = j.value("source_prompt", t.prompts.source);
                tasks.push_back(t);
            }
            auto items = run_batch(tasks, cfg, opts, a.threads);
            int failures = 0;
            for (std::size_t i = 0; i < items.size(); ++i) {
                if (items[i].ok) {
                    std::cout << items[i].outcome->output_path.string() << "\n";
                } else {
                    ++failures;
                    std::cerr << items[i].error.dump(2) << "\n";
                }
            }
            return failures ? 1 : 0;
        }
        out_hint = cfg.task.output_path;
        auto out = run_task(cfg, opts);
        std::cout << out.output_path.string() << "\n" << out.manifest_path.string() << "\n";
        return 0;
    } catch (const std::exception& e) {
        return report_error(e, out_hint);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot contrastive-guided diffusion style transfer"};
    app.require_subcommand(1);
    std::string checkpoint_dir;
    app.add_option("--checkpoint-dir", checkpoint_dir, "Checkpoint root (default: $ZECON_CHECKPOINT_DIR)");

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Style-transfer one image (or a batch)");
    run_cmd->add_option("-s,--source", run.source, "Source image");
    run_cmd->add_option("-o,--output", run.output, "Output image; the manifest is written next to it");
    run_cmd->add_option("-t,--target", run.target, "Target prompt");
    run_cmd->add_option("--source-prompt", run.source_prompt, "Source prompt");
    run_cmd->add_option("-p,--preset", run.preset, "Preset name (see `presets list`)");
    run_cmd->add_option("-c,--config", run.config, "Config file (JSON)");
    run_cmd->add_option("--seed", run.seed, "Random seed");
    run_cmd->add_option("--t0", run.t0, "Start index of the reverse process");
    run_cmd->add_option("--T-prime,--t-prime", run.t_prime, "Respaced step count");
    run_cmd->add_option("-m,--mode", run.mode, "style_transfer_patch or whole_image");
    run_cmd->add_option("--batch", run.batch, "JSON array of {source, output, target_prompt, source_prompt}");
    run_cmd->add_option("-j,--threads", run.threads, "Concurrent tasks in batch mode");

    std::string manifest_path, rerun_output;
    auto* rerun_cmd = app.add_subcommand("rerun", "Re-run a manifest's config and seed");
    rerun_cmd->add_option("manifest", manifest_path)->required();
    rerun_cmd->add_option("-o,--output", rerun_output, "Write here instead of the recorded output path");

    std::string validate_path;
    bool first_error = false;
    auto* validate_cmd = app.add_subcommand("validate", "Check a config file and print the resolved config");
    validate_cmd->add_option("config", validate_path, "Config file (omit for defaults)");
    validate_cmd->add_flag("--first-error", first_error, "Stop at the first problem");

    auto* presets_cmd = app.add_subcommand("presets", "List or export the built-in style presets");
    presets_cmd->require_subcommand(1);
    auto* presets_list = presets_cmd->add_subcommand("list", "Print preset names and weights");
    std::string export_dir;
    auto* presets_export = presets_cmd->add_subcommand("export", "Write one config file per preset");
    presets_export->add_option("dir", export_dir)->required();

    std::string eval_prompt, eval_config, eval_json;
    std::vector<std::string> eval_images, eval_refs;
    std::uint64_t eval_seed = 0;
    auto* eval_cmd = app.add_subcommand("eval", "CLIP scores (and identity distance) for images");
    eval_cmd->add_option("images", eval_images)->required();
    eval_cmd->add_option("-t,--target", eval_prompt, "Target prompt")->required();
    eval_cmd->add_option("-c,--config", eval_config, "Config providing embedder, face embedder and patch policy");
    eval_cmd->add_option("-r,--reference", eval_refs, "Reference image per input (identity metric)");
    eval_cmd->add_option("--seed", eval_seed);
    eval_cmd->add_option("--json", eval_json, "Also write the report as JSON");

    RunArgs bench;
    std::size_t reps = 3;
    auto* bench_cmd = app.add_subcommand("bench", "Time end-to-end sampling");
    bench_cmd->add_option("-s,--source", bench.source)->required();
    bench_cmd->add_option("-t,--target", bench.target);
    bench_cmd->add_option("--source-prompt", bench.source_prompt);
    bench_cmd->add_option("-p,--preset", bench.preset);
    bench_cmd->add_option("-c,--config", bench.config);
    bench_cmd->add_option("--t0", bench.t0);
    bench_cmd->add_option("--T-prime,--t-prime", bench.t_prime);
    bench_cmd->add_option("-n,--repetitions", reps);

    std::string train_out;
    ToyTrainingOptions train_opts;
    std::size_t train_size = 32, train_channels = 16, train_depth = 3;
    auto* train_cmd = app.add_subcommand("train-toy", "Briefly train the toy UNet on synthetic blob images");
    train_cmd->add_option("output", train_out)->required();
    train_cmd->add_option("--steps", train_opts.steps);
    train_cmd->add_option("--seconds", train_opts.time_budget_seconds);
    train_cmd->add_option("--lr", train_opts.learning_rate);
    train_cmd->add_option("--seed", train_opts.seed);
    train_cmd->add_option("--size", train_size);
    train_cmd->add_option("--channels", train_channels);
    train_cmd->add_option("--depth", train_depth);

    ScheduleSpec sched;
    std::string sched_out;
    auto* sched_cmd = app.add_subcommand("schedule", "Print (or save) a schedule file and its respaced steps");
    sched_cmd->add_option("--T", sched.steps);
    sched_cmd->add_option("--beta-start", sched.beta_start);
    sched_cmd->add_option("--beta-end", sched.beta_end);
    sched_cmd->add_option("--T-prime,--t-prime", sched.respaced_steps);
    sched_cmd->add_option("-o,--output", sched_out);

    CLI11_PARSE(app, argc, argv);
    run.checkpoint_dir = bench.checkpoint_dir = checkpoint_dir;

    if (*run_cmd) return cmd_run(run);

    try {
        if (*rerun_cmd) {
            RunOptions opts;
            opts.checkpoint_root = checkpoint_dir;
            json m = read_json(manifest_path);
            std::optional<std::string> out;
            if (!rerun_output.empty()) out = rerun_output;
            auto result = rerun_manifest(m, opts, out);
            const bool same = result.manifest["image_digest"] == m["image_digest"];
            std::cout << result.output_path.string() << "\n"
                      << "image_digest " << result.manifest["image_digest"].get<std::string>()
                      << (same ? " (matches)" : " (DIFFERS from recorded)") << "\n";
            return same ? 0 : 3;
        }
        if (*validate_cmd) {
            const auto mode = first_error ? ValidationMode::first_error : ValidationMode::all_errors;
            RunConfig c = validate_path.empty() ? validate_config(std::string{}, mode) : load_config(validate_path, mode);
            std::cout << c.to_json().dump(2) << "\n";
            return 0;
        }
        if (*presets_list) {
            for (const auto& p : style_presets()) {
                const auto& w = p.weights;
                std::cout << p.name << "\t\"" << p.target_prompt << "\"\tglobal=" << w.global << " dir=" << w.dir
                          << " zecon=" << w.zecon << " mse=" << w.mse << " vgg=" << w.vgg
                          << " patch=" << p.patch_max_frac << " t0=" << p.t0_index << "\n";
            }
            return 0;
        }
        if (*presets_export) {
            fs::create_directories(export_dir);
            for (const auto& p : style_presets()) {
                const fs::path path = fs::path(export_dir) / (p.name + ".json");
                std::ofstream(path) << preset_config(p).dump(2) << "\n";
                std::cout << path.string() << "\n";
            }
            return 0;
        }
        if (*eval_cmd) {
            RunConfig c = eval_config.empty() ? default_config() : load_config(eval_config);
            LoadContext ctx;
            ctx.checkpoint_root = checkpoint_dir;
            auto embedder = AdapterRegistry::global().load_embedder(c.models.embedder, ctx);
            std::shared_ptr<ImageEmbedder> face;
            if (c.models.face) face = AdapterRegistry::global().load_face_embedder(*c.models.face, ctx);
            if (!eval_refs.empty() && eval_refs.size() != eval_images.size()) {
                throw ValidationError("cli", "give one --reference per image");
            }
            std::vector<EvalInput> inputs;
            for (std::size_t i = 0; i < eval_images.size(); ++i) {
                EvalInput in{eval_images[i], read_image(eval_images[i]), std::nullopt, std::nullopt};
                if (!eval_refs.empty()) in.reference = read_image(eval_refs[i]);
                inputs.push_back(std::move(in));
            }
            auto report = evaluate(inputs, eval_prompt, *embedder, c.effective_patch(), eval_seed, face.get());
            std::cout << report.to_text();
            if (!eval_json.empty()) std::ofstream(eval_json) << report.to_json().dump(2) << "\n";
            return 0;
        }
        if (*bench_cmd) {
            RunConfig c = build_config(bench);
            RunOptions opts;
            opts.checkpoint_root = checkpoint_dir;
            auto stats = benchmark(c.task, c, reps, opts);
            std::cout << stats.to_json().dump(2) << "\n";
            return 0;
        }
        if (*train_cmd) {
            ToyUNetOptions o;
            o.image_size = train_size;
            o.channels = train_channels;
            o.depth = train_depth;
            o.seed = train_opts.seed;
            const ScheduleSpec spec;
            auto schedule = make_linear_schedule(spec.steps, spec.beta_start, spec.beta_end);
            ToyUNet net(o, schedule);
            auto losses = train_toy_unet(net, schedule, train_opts);
            net.save(train_out);
            std::cout << "steps " << losses.size() << ", final loss " << (losses.empty() ? 0.0 : losses.back())
                      << "\n" << train_out << "\n";
            return 0;
        }
        if (*sched_cmd) {
            auto rs = sched.build();
            if (!sched_out.empty()) sched.save(sched_out);
            std::cout << sched.to_text();
            std::cout << "# index_map:";
            for (auto t : rs.index_map()) std::cout << ' ' << t;
            std::cout << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        return report_error(e);
    }
    return 0;
}
