// endovid: pre-training, gradient checks, linear probes, datasets and metrics.
//
// Exit codes: 0 success, 1 runtime or check failure, 2 usage or configuration error.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "endovid/checkpoint.hpp"
#include "endovid/config.hpp"
#include "endovid/errors.hpp"
#include "endovid/gradcheck_suite.hpp"
#include "endovid/kernels.hpp"
#include "endovid/pretrain.hpp"
#include "endovid/probe.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace endovid;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::vector<std::size_t> parse_counts(const std::string& flag, const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v <= 0) throw std::invalid_argument(item);
            out.push_back(std::size_t(v));
        } catch (const std::exception&) {
            throw ConfigError(flag + ": expected a comma list of positive integers, got '" + text + "'");
        }
    }
    if (out.empty()) throw ConfigError(flag + " must not be empty");
    return out;
}

// ---------------------------------------------------------------------------
// shared config flags
// ---------------------------------------------------------------------------

struct ConfigFlags {
    std::string config_file;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    std::string manifest;

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "JSON config file with flat namespaced keys");
        app->add_option("--seed", seed, "master seed (overrides run.seed and ENDOVID_SEED)");
        app->add_option("--set", sets, "override one key: --set distill.lr=5e-4 (repeatable)");
        app->add_option("--manifest", manifest, "dataset manifest (data.manifest)");
    }

    // File values, then --set, then named flags; the seed is resolved last.
    cli::RunConfig resolve(const std::function<void(cli::RunConfig&)>& named = {}) const {
        cli::RunConfig c = config_file.empty() ? cli::RunConfig{} : cli::load_run_config(config_file);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            cli::set_from_text(c, s.substr(0, eq), s.substr(eq + 1));
        }
        if (!manifest.empty()) c.manifest = manifest;
        if (named) named(c);
        if (seed) c.seed = *seed;
        c.seed = c.resolved_seed();
        c.validate();
        return c;
    }
};

std::vector<data::VideoClip> load_clips(const cli::RunConfig& c) {
    if (c.manifest.empty()) throw ConfigError("data.manifest is not set (use --manifest or the config file)");
    return data::load_dataset(c.manifest);
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainArgs {
    ConfigFlags cfg;
    std::string out;
    bool disable_dm = false, disable_cv = false;
    std::string local_mode;
    std::optional<std::size_t> global_views, local_views;
    std::string tl, tg;
    std::optional<std::int64_t> max_steps, checkpoint_every, stop_after;
    std::string resume;
    std::size_t log_every = 10;
    bool quiet = false;
};

int cmd_pretrain(const PretrainArgs& a) {
    const auto config = a.cfg.resolve([&](cli::RunConfig& c) {
        if (a.disable_dm) c.distill.disable_dm = true;
        if (a.disable_cv) c.distill.disable_cv = true;
        if (!a.local_mode.empty()) c.views.local_mode = views::parse_local_mode(a.local_mode);
        if (a.global_views) c.views.global_views = *a.global_views;
        if (a.local_views) c.views.local_views = *a.local_views;
        if (!a.tl.empty()) c.views.local_frames = parse_counts("--tl", a.tl);
        if (!a.tg.empty()) c.views.global_frames = parse_counts("--tg", a.tg);
        if (a.max_steps) c.distill.max_steps = *a.max_steps;
        if (a.checkpoint_every) c.checkpoint_every = *a.checkpoint_every;
        if (!a.out.empty()) c.out_dir = a.out;
    });
    const auto clips = load_clips(config);
    const fs::path out = config.out_dir;
    fs::create_directories(out);
    write_json(out / "config.json", config.to_json());

    distill::PretrainOptions opts;
    opts.out_dir = out;
    opts.checkpoint_every = config.checkpoint_every;
    if (!a.resume.empty()) opts.resume = fs::path(a.resume);
    if (a.stop_after) opts.stop_after = *a.stop_after;
    const distill::Trainer probe_trainer(config.model, config.views, config.distill, *config.seed, clips.size());
    const auto total = probe_trainer.total_steps();
    if (!a.quiet) {
        std::printf("pretrain: %zu clips, %lld steps (%lld per epoch), seed %llu, out %s\n", clips.size(),
                    static_cast<long long>(total), static_cast<long long>(probe_trainer.steps_per_epoch()),
                    static_cast<unsigned long long>(*config.seed), out.string().c_str());
        opts.on_step = [&](const distill::StepMetrics& m) {
            if (a.log_every > 0 && (m.step % std::int64_t(a.log_every) == 0 || m.step == total)) {
                std::printf("step %6lld/%lld  loss %.5f  cv %.5f  dm %.5f  H %.4f  lr %.3e\n",
                            static_cast<long long>(m.step), static_cast<long long>(total), m.loss_total,
                            m.loss_cv, m.loss_dm, m.teacher_entropy, m.lr);
                std::fflush(stdout);
            }
        };
    }
    const std::string started = utc_now();
    const auto result = distill::pretrain_run(clips, config.model, config.views, config.distill, *config.seed, opts);

    json info{{"seed", *config.seed},
              {"started", started},
              {"finished", utc_now()},
              {"wall_clock_seconds", result.wall_seconds},
              {"steps_run", result.metrics.size()},
              {"final_step", result.state.step},
              {"total_steps", total},
              {"threads", kernels::max_threads()},
              {"resumed_from", a.resume.empty() ? json(nullptr) : json(a.resume)},
              {"final_checkpoint", result.final_checkpoint ? json(result.final_checkpoint->string()) : json(nullptr)}};
    write_json(out / "run_info.json", info);
    if (!a.quiet)
        std::printf("done: %zu steps in %.1fs, checkpoint %s\n", result.metrics.size(), result.wall_seconds,
                    result.final_checkpoint ? result.final_checkpoint->string().c_str() : "-");
    return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
    GradCheckSuiteOptions opts;
    bool list = false;
    std::string report;
};

int cmd_gradcheck(GradcheckArgs a) {
    if (a.list) {
        for (const auto& n : gradcheck_item_names()) std::printf("%s\n", n.c_str());
        return kOk;
    }
    if (!(a.opts.check.step > 0)) throw ConfigError("--step must be positive");
    std::printf("gradient check: tiny config, float64, central differences h=%g, threshold %g\n",
                a.opts.check.step, a.opts.threshold);
    const auto results = run_gradcheck_suite(a.opts);
    std::vector<std::string> failures;
    for (const auto& r : results) {
        if (r.report.finite) {
            std::printf("%-26s max_rel_error %.3e  coords %5zu  worst %-28s %s\n", r.name.c_str(),
                        r.report.max_rel_error, r.report.coordinates, r.report.worst.c_str(),
                        r.passed ? "PASS" : "FAIL");
        } else {
            std::printf("%-26s non-finite loss: %s  FAIL\n", r.name.c_str(), r.report.failure.c_str());
        }
        if (!r.passed) failures.push_back(r.name);
    }
    if (!a.report.empty()) {
        json items = json::array();
        double worst = 0.0;
        for (const auto& r : results) {
            items.push_back({{"name", r.name},
                             {"max_rel_error", r.report.finite ? json(r.report.max_rel_error) : json(nullptr)},
                             {"coordinates", r.report.coordinates},
                             {"worst", r.report.worst},
                             {"passed", r.passed}});
            if (r.report.finite) worst = std::max(worst, r.report.max_rel_error);
        }
        write_json(a.report, {{"step", a.opts.check.step},
                              {"threshold", a.opts.threshold},
                              {"max_rel_error", worst},
                              {"passed", failures.empty()},
                              {"items", items}});
    }
    if (failures.empty()) {
        std::printf("all %zu checks passed\n", results.size());
        return kOk;
    }
    std::printf("FAILED:");
    for (const auto& f : failures) std::printf(" %s", f.c_str());
    std::printf("\n");
    return kFailure;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

struct ProbeArgs {
    ConfigFlags cfg;
    std::string checkpoint;
    bool random_init = false;
    bool unfreeze = false;
    std::string role = "teacher";
    std::optional<std::size_t> frames, epochs, repeats;
    std::optional<std::uint64_t> probe_seed;
    std::string report;
};

int cmd_probe(const ProbeArgs& a) {
    auto config = a.cfg.resolve([&](cli::RunConfig& c) {
        if (a.unfreeze) c.probe.unfreeze = true;
        if (a.frames) c.probe.frames = *a.frames;
        if (a.epochs) c.probe.epochs = *a.epochs;
        if (a.probe_seed) c.probe.seed = *a.probe_seed;
        if (a.repeats) c.probe.repeats = *a.repeats;
    });
    if (a.checkpoint.empty() && !a.random_init)
        throw ConfigError("probe needs --checkpoint, or --random-init for a baseline");
    if (a.role != "teacher" && a.role != "student") throw ConfigError("--role must be teacher or student");

    model::ModelConfig model = config.model;
    ParameterSet<float> backbone;
    std::string source;
    std::uint64_t init_seed = *config.seed;
    if (!a.checkpoint.empty()) {
        auto ck = data::load_checkpoint(a.checkpoint);
        model = ck.model;
        init_seed = ck.state.seed;
        if (a.random_init) {
            source = "random init (architecture of " + a.checkpoint + ")";
        } else {
            backbone = a.role == "teacher" ? std::move(ck.state.teacher) : std::move(ck.state.student);
            source = a.checkpoint + " (" + a.role + ")";
        }
    } else {
        source = "random init (configured architecture)";
    }
    // the exact weights pre-training with this seed starts from
    if (a.random_init) backbone = distill::initial_student(model, init_seed).clone(false);
    if (config.probe.frames > model.max_frames)
        throw ConfigError("probe.frames exceeds the backbone's max_frames (" + std::to_string(model.max_frames) + ")");

    const auto clips = load_clips(config);
    const auto summary = probe::run_probe_repeated(clips, backbone, model, config.probe);
    const auto& first = summary.splits.front();
    std::printf("probe: %s\n", source.c_str());
    std::printf("  clips train/test  %zu / %zu, classes %zu, %s\n", first.train_count, first.test_count,
                first.classes, config.probe.unfreeze ? "fine-tuned" : "frozen backbone");
    if (summary.splits.size() > 1)
        std::printf("  splits            %zu (seeds %llu..%llu)\n", summary.splits.size(),
                    static_cast<unsigned long long>(config.probe.seed),
                    static_cast<unsigned long long>(config.probe.seed + summary.splits.size() - 1));
    std::printf("  accuracy          %.4f\n", summary.mean_accuracy);
    std::printf("  macro F1          %.4f\n", summary.mean_macro_f1);
    if (summary.mean_binary_f1) std::printf("  binary F1 (cls 1) %.4f\n", *summary.mean_binary_f1);
    if (!a.report.empty()) {
        // a single split keeps the flat report layout
        json j = summary.splits.size() == 1 ? first.to_json() : summary.to_json();
        j["macro_f1_mean"] = summary.mean_macro_f1;
        j["source"] = source;
        j["probe"] = {{"frames", config.probe.frames}, {"epochs", config.probe.epochs},
                      {"seed", config.probe.seed}, {"repeats", config.probe.repeats},
                      {"unfreeze", config.probe.unfreeze}};
        write_json(a.report, j);
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// make-data
// ---------------------------------------------------------------------------

struct MakeDataArgs {
    std::string out;
    bool force = false;
    data::SyntheticSpec spec;
    std::string slice_from;
    double seconds = 5.0;
    std::optional<int> label;
};

int cmd_make_data(MakeDataArgs a) {
    const fs::path out = a.out;
    if (fs::exists(out) && !fs::is_empty(out)) {
        if (!a.force) throw UsageError(out.string() + " exists and is not empty (use --force to replace it)");
        fs::remove_all(out);
    }
    data::Manifest manifest;
    std::vector<data::VideoClip> clips;
    if (!a.slice_from.empty()) {
        const auto seq = data::load_frame_sequence(a.slice_from);
        const auto pieces = data::slice_video_to_clips(seq, a.spec.fps, a.seconds);
        manifest.dataset = fs::path(a.slice_from).filename().string();
        manifest.seed = a.spec.seed;
        const std::size_t digits = std::to_string(pieces.size()).size();
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            char id[64];
            std::snprintf(id, sizeof(id), "clip_%0*zu", int(digits), i);
            data::VideoClip c{id, a.spec.fps, pieces[i], a.label};
            manifest.clips.push_back({c.id, c.id, c.frames.frames, c.fps, c.label});
            clips.push_back(std::move(c));
        }
        std::printf("sliced %zu frames at %g fps into %zu clips of %g s\n", seq.frames, a.spec.fps,
                    clips.size(), a.seconds);
    } else {
        auto ds = data::generate_synthetic_dataset(a.spec);
        manifest = std::move(ds.manifest);
        clips = std::move(ds.clips);
    }
    data::write_dataset(out, manifest, clips);

    std::map<std::string, std::size_t> histogram;
    for (const auto& e : manifest.clips) histogram[e.label ? std::to_string(*e.label) : "unlabelled"]++;
    std::printf("dataset '%s': %zu clips in %s\n", manifest.dataset.c_str(), manifest.clips.size(),
                out.string().c_str());
    for (const auto& [label, n] : histogram) std::printf("  class %-10s %zu\n", label.c_str(), n);
    std::printf("manifest fnv1a64 %016llx\n",
                static_cast<unsigned long long>(fnv1a(read_file(out / "manifest.json"))));
    return kOk;
}

// ---------------------------------------------------------------------------
// export-metrics
// ---------------------------------------------------------------------------

int cmd_export_metrics(const std::string& run_dir, std::size_t window, const std::string& out_file) {
    const fs::path dir = run_dir;
    const auto rows = distill::read_metrics_csv(dir / "metrics.csv");
    auto summary = distill::summarize_metrics(rows, window);
    if (fs::exists(dir / "run_info.json")) {
        const auto info = json::parse(read_file(dir / "run_info.json"), nullptr, false);
        if (!info.is_discarded() && info.contains("wall_clock_seconds") && info["wall_clock_seconds"].is_number())
            summary.wall_clock_seconds = info["wall_clock_seconds"].get<double>();
    }
    const json j = summary.to_json();
    const fs::path target = out_file.empty() ? dir / "summary.json" : fs::path(out_file);
    write_json(target, j);
    std::printf("steps                 %zu\n", summary.steps);
    std::printf("loss, first %3zu steps %.6f\n", summary.window, summary.first_window_loss_mean);
    std::printf("loss, last  %3zu steps %.6f\n", summary.window, summary.last_window_loss_mean);
    std::printf("teacher entropy       min %.4f  max %.4f  final %.4f\n", summary.entropy_min,
                summary.entropy_max, summary.entropy_final);
    if (summary.wall_clock_seconds) std::printf("wall clock            %.1f s\n", *summary.wall_clock_seconds);
    std::printf("summary written to %s\n", target.string().c_str());
    return kOk;
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

int cmd_config(const ConfigFlags& flags, bool keys) {
    if (keys) {
        const auto defaults = cli::RunConfig{}.to_json();
        for (const auto& k : cli::config_keys())
            std::printf("%-34s %-16s %s\n", k.key.c_str(), defaults[k.key].dump().c_str(), k.description.c_str());
        return kOk;
    }
    std::printf("%s\n", flags.resolve().to_json().dump(2).c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"endovid: self-supervised video pre-training at desk scale"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "OpenMP threads for the parallel kernels (0 keeps the default)");

    PretrainArgs pre;
    auto* sp = app.add_subcommand("pretrain", "teacher-student pre-training");
    pre.cfg.attach(sp);
    sp->add_option("--out", pre.out, "output directory (run.out_dir)");
    sp->add_flag("--disable-dm", pre.disable_dm, "drop dynamic motion matching");
    sp->add_flag("--disable-cv", pre.disable_cv, "drop cross-view matching");
    sp->add_option("--local-mode", pre.local_mode, "local views: both | spatial | temporal");
    sp->add_option("--G,-G", pre.global_views, "global views per clip");
    sp->add_option("--L,-L", pre.local_views, "local views per clip");
    sp->add_option("--tl", pre.tl, "local frame counts, comma separated");
    sp->add_option("--tg", pre.tg, "global frame counts, comma separated");
    sp->add_option("--max-steps", pre.max_steps, "step budget (overrides epochs)");
    sp->add_option("--checkpoint-every", pre.checkpoint_every, "steps between checkpoints");
    sp->add_option("--resume", pre.resume, "continue from a checkpoint");
    sp->add_option("--stop-after", pre.stop_after, "stop once this many steps are complete")->group("");
    sp->add_option("--log-every", pre.log_every, "progress line interval");
    sp->add_flag("--quiet", pre.quiet, "no progress output");

    GradcheckArgs gc;
    auto* sg = app.add_subcommand("gradcheck", "finite-difference gradient checks (float64, tiny config)");
    sg->add_option("--step", gc.opts.check.step, "central difference step");
    sg->add_option("--samples", gc.opts.check.samples_per_tensor, "coordinates sampled per tensor");
    sg->add_option("--seed", gc.opts.check.seed, "coordinate sampling seed");
    sg->add_option("--threshold", gc.opts.threshold, "maximum relative error");
    sg->add_option("--only", gc.opts.only, "run only these items");
    sg->add_flag("--list", gc.list, "list item names");
    sg->add_option("--report", gc.report, "write per-item results as JSON");
    sg->add_flag("--inject-fault", gc.opts.inject_fault)->group("");

    ProbeArgs pr;
    auto* spr = app.add_subcommand("probe", "linear probe on frozen backbone features");
    pr.cfg.attach(spr);
    spr->add_option("--checkpoint", pr.checkpoint, "pre-trained checkpoint");
    spr->add_flag("--random-init", pr.random_init, "untrained backbone: the step-0 weights of the checkpoint's run, or of --seed");
    spr->add_flag("--unfreeze", pr.unfreeze, "fine-tune the backbone together with the classifier");
    spr->add_option("--role", pr.role, "checkpoint weights to use: teacher | student");
    spr->add_option("--frames", pr.frames, "frames per clip");
    spr->add_option("--epochs", pr.epochs, "classifier epochs");
    spr->add_option("--probe-seed", pr.probe_seed, "split and classifier seed (probe.seed)");
    spr->add_option("--repeats", pr.repeats, "seeded splits to average (probe.repeats)");
    spr->add_option("--report", pr.report, "write the report as JSON");

    MakeDataArgs md;
    auto* sm = app.add_subcommand("make-data", "write a synthetic dataset or slice a frame sequence");
    sm->add_option("--out", md.out, "output directory")->required();
    sm->add_flag("--force", md.force, "replace a non-empty output directory");
    sm->add_option("--count", md.spec.count, "clips");
    sm->add_option("--size", md.spec.size, "frame side in pixels");
    sm->add_option("--frames", md.spec.frames, "frames per clip");
    sm->add_option("--classes", md.spec.classes, "motion classes");
    sm->add_option("--square", md.spec.square, "moving square side in pixels");
    sm->add_option("--appearance-variation", md.spec.appearance_variation, "per-clip colour variation in [0,1]");
    sm->add_option("--fps", md.spec.fps, "frame rate");
    sm->add_option("--seed", md.spec.seed, "generator seed");
    sm->add_option("--name", md.spec.name, "dataset name");
    sm->add_option("--slice-from", md.slice_from, "directory of frame_%05d.ppm to slice into clips");
    sm->add_option("--seconds", md.seconds, "clip duration when slicing");
    sm->add_option("--label", md.label, "label for every sliced clip");

    std::string run_dir, summary_out;
    std::size_t window = 20;
    auto* se = app.add_subcommand("export-metrics", "summarise a run's metrics.csv");
    se->add_option("run_dir", run_dir, "run directory")->required();
    se->add_option("--window", window, "steps per loss window");
    se->add_option("--out", summary_out, "summary path (default <run_dir>/summary.json)");

    ConfigFlags cf;
    bool keys = false;
    auto* sc = app.add_subcommand("config", "print the resolved configuration");
    cf.attach(sc);
    sc->add_flag("--keys", keys, "list every key with its default and meaning");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (threads > 0) kernels::set_threads(threads);
        if (sp->parsed()) return cmd_pretrain(pre);
        if (sg->parsed()) return cmd_gradcheck(gc);
        if (spr->parsed()) return cmd_probe(pr);
        if (sm->parsed()) return cmd_make_data(md);
        if (se->parsed()) return cmd_export_metrics(run_dir, window, summary_out);
        if (sc->parsed()) return cmd_config(cf, keys);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kUsage;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kUsage;
}
