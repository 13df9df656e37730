// Acceptance driver: one PASS/FAIL line per criterion.
//
//   endovid_acceptance [--only 1,5,7] [--work DIR]
//
// Criteria 1 and 5-9 drive the endovid binary end to end; 2-4 check the
// library directly against independent oracles.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "endovid/distill.hpp"
#include "endovid/model.hpp"
#include "endovid/pretrain.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace endovid;

namespace {

const std::string kBinary = ENDOVID_CLI;
const fs::path kConfigs = ENDOVID_CONFIG_DIR;

fs::path g_work;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

// Runs the CLI with stdout/stderr captured in `log`; returns the exit status.
int endovid(const std::string& args, const fs::path& log) {
    fs::create_directories(log.parent_path());
    const std::string cmd = kBinary + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::string tail_of(const fs::path& log) {
    const auto s = slurp(log);
    const auto cut = s.size() > 300 ? s.substr(s.size() - 300) : s;
    std::string one;
    for (char c : cut) one += c == '\n' ? ' ' : c;
    return one;
}

// Datasets used by the behavioural criteria, generated once per work dir.
//   synthetic: 64 clips, per-clip colours vary
//   motion:    64 clips, fixed colours, so only motion separates the classes
//   motion_probe: 256 held-out clips of the motion task
fs::path dataset(const std::string& name) {
    static const std::map<std::string, std::string> specs{
        {"synthetic", "--count 64 --size 16 --frames 16 --square 4 --seed 11"},
        {"motion", "--count 64 --size 16 --frames 16 --square 4 --seed 11 --appearance-variation 0"},
        {"motion_probe", "--count 256 --size 16 --frames 16 --square 4 --seed 99 --appearance-variation 0"},
    };
    const fs::path dir = g_work / "data" / name;
    if (!fs::exists(dir / "manifest.json")) {
        const int rc = endovid("make-data --force --out " + dir.string() + " " + specs.at(name),
                               g_work / "logs" / ("make-data-" + name + ".txt"));
        if (rc != 0) throw std::runtime_error("make-data " + name + " failed");
    }
    return dir / "manifest.json";
}

std::string pretrain_cmd(const fs::path& manifest, const fs::path& out, const std::string& extra) {
    return "pretrain --quiet --config " + (kConfigs / "acceptance.json").string() + " --manifest " +
           manifest.string() + " --out " + out.string() + " " + extra;
}

// --- 1 -------------------------------------------------------------------

Outcome gradient_oracle() {
    const fs::path dir = g_work / "c1";
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = endovid("gradcheck --report " + (dir / "gradcheck.json").string(), dir / "log.txt");
    const double secs = seconds_since(t0);
    if (!fs::exists(dir / "gradcheck.json")) return {false, "no report (exit " + std::to_string(rc) + "): " + tail_of(dir / "log.txt")};
    const auto r = read_json(dir / "gradcheck.json");
    std::string failed;
    for (const auto& item : r["items"])
        if (!item["passed"].get<bool>()) failed += " " + item["name"].get<std::string>();
    const double worst = r["max_rel_error"];
    const bool ok = rc == 0 && failed.empty() && worst < 1e-4 && secs < 300;
    return {ok, std::to_string(r["items"].size()) + " items, max rel error " + fmt("%.2e", worst) +
                    " (< 1e-4), " + fmt("%.0f", secs) + " s (< 300)" + (failed.empty() ? "" : "; failed:" + failed)};
}

// --- 2 -------------------------------------------------------------------

std::vector<double> dirichlet_like(std::size_t k, std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> p(k);
    double s = 0;
    for (auto& v : p) s += (v = e(rng));
    for (auto& v : p) v /= s;
    return p;
}

ag::Tensor<double> log_student(const std::vector<double>& p) {
    // softmax(tau * log p / tau) = p
    std::vector<double> f(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) f[i] = 0.07 * std::log(p[i]);
    return distill::student_log_distribution(ag::Tensor<double>::from({1, p.size()}, f), 0.07);
}

double entropy_oracle(const std::vector<double>& p) {
    double h = 0;
    for (double v : p) h -= v * std::log(v);
    return h;
}

Outcome equation_algebra() {
    std::mt19937_64 rng(2);
    std::size_t bad_counts = 0;
    double worst = 0.0;
    for (std::size_t g = 1; g <= 3; ++g) {
        for (std::size_t l = 0; l <= 4; ++l) {
            std::vector<std::vector<double>> teacher;
            std::vector<ag::Tensor<double>> sg, sl;
            for (std::size_t i = 0; i < g; ++i) {
                teacher.push_back(dirichlet_like(16, rng));
                sg.push_back(log_student(dirichlet_like(16, rng)));
            }
            for (std::size_t j = 0; j < l; ++j) sl.push_back(log_student(dirichlet_like(16, rng)));
            const auto cv = distill::cross_view_loss(teacher, sl);
            const auto dm = distill::dynamic_motion_loss(teacher, sg);
            bad_counts += cv.pairs != g * l;
            bad_counts += dm.pairs != g * (g - 1);

            // p_s = p_t for every pair: one shared distribution
            const auto p = dirichlet_like(16, rng);
            const std::vector<std::vector<double>> same(g, p);
            const double h = entropy_oracle(p);
            if (l > 0) {
                const std::vector<ag::Tensor<double>> match(l, log_student(p));
                worst = std::max(worst, std::abs(distill::cross_view_loss(same, match).value.item() - h));
            }
            if (g > 1) {
                const std::vector<ag::Tensor<double>> match(g, log_student(p));
                worst = std::max(worst, std::abs(distill::dynamic_motion_loss(same, match).value.item() - h));
            }
        }
    }
    return {bad_counts == 0 && worst < 1e-6,
            "pair counts " + std::string(bad_counts == 0 ? "exact" : "WRONG") + " for G in 1..3, L in 0..4; "
            "|mean pair term - entropy| max " + fmt("%.1e", worst) + " (< 1e-6)"};
}

// --- 3 -------------------------------------------------------------------

Outcome ema_algebra() {
    const auto cfg = model::ModelConfig::desk();
    std::size_t mismatches = 0, checked = 0;
    for (double alpha : {0.0, 0.5, 0.996, 1.0}) {
        auto teacher = model::init_params<float>(cfg, 31, false);
        const auto before = teacher.clone(false);
        const auto student = model::init_params<float>(cfg, 32, false);
        distill::ema_update(teacher, student, alpha);
        const float a = float(alpha), b = 1.0f - float(alpha);
        for (std::size_t i = 0; i < teacher.size(); ++i) {
            const auto t = teacher.tensor(i).values();
            const auto phi = before.tensor(i).values();
            const auto theta = student.tensor(i).values();
            for (std::size_t k = 0; k < t.size(); ++k, ++checked) mismatches += t[k] != a * phi[k] + b * theta[k];
        }
    }
    return {mismatches == 0, std::to_string(checked) + " float32 elements over alpha {0, 0.5, 0.996, 1}, " +
                                 std::to_string(mismatches) + " differ from alpha*phi + (1-alpha)*theta"};
}

// --- 4 -------------------------------------------------------------------

Outcome architecture_invariants() {
    const auto cfg = model::ModelConfig::desk();
    const auto params = model::init_params<double>(cfg, 41, false);
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);

    std::size_t shape_bad = 0, count_bad = 0, rows = 0;
    double worst_row = 0.0;
    const std::vector<std::array<std::size_t, 3>> views{{8, 32, 32}, {4, 16, 16}, {2, 8, 12}, {1, 16, 32}};
    for (const auto& [t, h, w] : views) {
        Frames f(t, h, w);
        for (auto& v : f.data) v = u(rng);
        auto grid = model::patchify_and_embed(f, params, cfg);
        const std::size_t n = (h / cfg.patch_size) * (w / cfg.patch_size);
        count_bad += grid.token_count() != t * n + 1;
        const ag::Shape want{t, n + 1, cfg.embed_dim};
        model::AttentionTrace<double> trace;
        for (std::size_t b = 0; b < cfg.depth; ++b) {
            grid = model::encoder_block_forward(grid, params, cfg, b, &trace);
            shape_bad += grid.shape() != want;
        }
        for (const auto& a : trace) {
            const std::size_t s = a.dim(-1);
            const auto v = a.values();
            for (std::size_t r = 0; r < v.size() / s; ++r, ++rows) {
                double sum = 0;
                for (std::size_t j = 0; j < s; ++j) sum += v[r * s + j];
                worst_row = std::max(worst_row, std::abs(sum - 1.0));
            }
        }
    }
    const auto& temporal = params["pos_embed.temporal"];
    const auto& spatial = params["pos_embed.spatial"];
    const auto ti = model::interpolate_temporal(temporal, cfg.max_frames);
    const auto si = model::interpolate_spatial(spatial, cfg.grid_height(), cfg.grid_width(),
                                               cfg.grid_height(), cfg.grid_width());
    const bool identity = std::equal(ti.values().begin(), ti.values().end(), temporal.values().begin()) &&
                          std::equal(si.values().begin(), si.values().end(), spatial.values().begin());

    const bool ok = shape_bad == 0 && count_bad == 0 && worst_row < 1e-6 && identity;
    return {ok, "block shapes " + std::string(shape_bad ? "CHANGED" : "preserved") + ", token counts " +
                    (count_bad ? "WRONG" : "T*N+1") + ", " + std::to_string(rows) + " attention rows max |sum-1| " +
                    fmt("%.1e", worst_row) + ", native interpolation " + (identity ? "exact identity" : "NOT identity")};
}

// --- 5 -------------------------------------------------------------------

Outcome anti_collapse() {
    const auto data = dataset("synthetic");
    const fs::path dir = g_work / "c5";
    const auto t0 = std::chrono::steady_clock::now();
    const int rc_off = endovid(pretrain_cmd(data, dir / "no_centering",
                                            "--max-steps 200 --set distill.centering=false --set distill.teacher_temp=0.01"),
                               dir / "no_centering.txt");
    const int rc_on = endovid(pretrain_cmd(data, dir / "centering", "--max-steps 200"), dir / "centering.txt");
    const double secs = seconds_since(t0);
    if (rc_off != 0 || rc_on != 0) return {false, "run failed: " + tail_of(dir / (rc_off ? "no_centering.txt" : "centering.txt"))};

    const auto off = distill::summarize_metrics(distill::read_metrics_csv(dir / "no_centering/metrics.csv"));
    const auto on = distill::summarize_metrics(distill::read_metrics_csv(dir / "centering/metrics.csv"));
    const double ln_k = std::log(double(read_json(dir / "centering/config.json")["model.out_dim"].get<std::size_t>()));
    const bool collapsed = off.entropy_final < 0.1 * ln_k;
    const bool held = on.entropy_min > 0.25 * ln_k;
    return {collapsed && held && secs < 900,
            "no centering, tau_t=0.01: final entropy " + fmt("%.3f", off.entropy_final) + " (< " + fmt("%.3f", 0.1 * ln_k) +
                "); centering, 0.04/0.07: min entropy " + fmt("%.3f", on.entropy_min) + " (> " + fmt("%.3f", 0.25 * ln_k) +
                "); " + fmt("%.0f", secs) + " s (< 900)"};
}

// --- 6 -------------------------------------------------------------------

Outcome learning_signal() {
    const auto data = dataset("synthetic");
    const fs::path dir = g_work / "c6";
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = endovid(pretrain_cmd(data, dir / "run", "--max-steps 500"), dir / "pretrain.txt");
    const double secs = seconds_since(t0);
    if (rc != 0) return {false, "pretrain failed: " + tail_of(dir / "pretrain.txt")};
    if (endovid("export-metrics " + (dir / "run").string() + " --window 20", dir / "export.txt") != 0)
        return {false, "export-metrics failed: " + tail_of(dir / "export.txt")};
    const auto s = read_json(dir / "run/summary.json");
    const bool ok = s["steps"] == 500 && s["loss_decreased"].get<bool>() && s["entropy_finite"].get<bool>() && secs < 1800;
    return {ok, "loss mean first 20 " + fmt("%.4f", s["first_window_loss_mean"].get<double>()) + " -> last 20 " +
                    fmt("%.4f", s["last_window_loss_mean"].get<double>()) + ", entropy " +
                    (s["entropy_finite"].get<bool>() ? "finite" : "NOT finite") + ", " + fmt("%.0f", secs) + " s (< 1800)"};
}

// --- 7 -------------------------------------------------------------------

Outcome transfer_signal() {
    const auto train = dataset("motion");
    const auto probe_data = dataset("motion_probe");
    const fs::path dir = g_work / "c7";
    const auto t0 = std::chrono::steady_clock::now();
    if (endovid(pretrain_cmd(train, dir / "run", "--max-steps 500"), dir / "pretrain.txt") != 0)
        return {false, "pretrain failed: " + tail_of(dir / "pretrain.txt")};
    const fs::path ckpt = dir / "run/checkpoint_final.ckpt";
    const std::string probe = "probe --config " + (kConfigs / "acceptance.json").string() + " --manifest " +
                              probe_data.string() + " --checkpoint " + ckpt.string() + " --probe-seed 0 --repeats 5";
    if (endovid(probe + " --report " + (dir / "pretrained.json").string(), dir / "probe_pretrained.txt") != 0)
        return {false, "probe failed: " + tail_of(dir / "probe_pretrained.txt")};
    if (endovid(probe + " --random-init --report " + (dir / "random.json").string(), dir / "probe_random.txt") != 0)
        return {false, "probe failed: " + tail_of(dir / "probe_random.txt")};
    const double secs = seconds_since(t0);
    const double pre = 100.0 * read_json(dir / "pretrained.json")["mean_macro_f1"].get<double>();
    const double rnd = 100.0 * read_json(dir / "random.json")["mean_macro_f1"].get<double>();
    return {pre - rnd >= 10.0 && secs < 1800,
            "macro F1 over 5 splits: pre-trained " + fmt("%.1f", pre) + " vs random init " + fmt("%.1f", rnd) +
                ", gap " + fmt("%+.1f", pre - rnd) + " (>= 10), " + fmt("%.0f", secs) + " s (< 1800)"};
}

// --- 8 -------------------------------------------------------------------

Outcome determinism() {
    const auto data = dataset("motion");
    const fs::path dir = g_work / "c8";
    fs::remove_all(dir);
    const std::string steps = "--max-steps 40 --seed 5";
    int rc = endovid(pretrain_cmd(data, dir / "a", steps), dir / "a.txt");
    rc |= endovid(pretrain_cmd(data, dir / "b", steps), dir / "b.txt");
    rc |= endovid(pretrain_cmd(data, dir / "c", steps + " --checkpoint-every 20 --stop-after 20"), dir / "c1.txt");
    rc |= endovid(pretrain_cmd(data, dir / "c", steps + " --resume " + (dir / "c/checkpoint_step_000020.ckpt").string()),
                  dir / "c2.txt");
    if (rc != 0) return {false, "a run failed; see " + dir.string()};
    const auto a = slurp(dir / "a/metrics.csv");
    const bool same_seed = a == slurp(dir / "b/metrics.csv");
    const bool resumed = a == slurp(dir / "c/metrics.csv");
    const bool same_ckpt = slurp(dir / "a/checkpoint_final.ckpt") == slurp(dir / "c/checkpoint_final.ckpt");
    const auto rows = distill::read_metrics_csv(dir / "a/metrics.csv").size();
    return {same_seed && resumed && same_ckpt && rows == 40,
            "identical seeds: metrics " + std::string(same_seed ? "byte-identical" : "DIFFER") +
                "; resume at step 20 of 40: metrics " + (resumed ? "byte-identical" : "DIFFER") + ", final checkpoint " +
                (same_ckpt ? "byte-identical" : "DIFFERS")};
}

// --- 9 -------------------------------------------------------------------

Outcome ablation_plumbing() {
    const auto data = dataset("synthetic");
    const fs::path dir = g_work / "c9";
    fs::remove_all(dir);
    struct Case {
        std::string name, flags;
        std::map<std::string, json> expect;
        std::function<bool(const std::vector<distill::StepMetrics>&)> metrics_ok;
    };
    auto all = [](auto pred) {
        return [pred](const std::vector<distill::StepMetrics>& rows) { return std::all_of(rows.begin(), rows.end(), pred); };
    };
    const std::vector<Case> cases{
        {"disable_dm", "--disable-dm", {{"distill.disable_dm", true}}, all([](const auto& m) { return m.loss_dm == 0.0 && m.loss_cv > 0.0; })},
        {"disable_cv", "--disable-cv", {{"distill.disable_cv", true}}, all([](const auto& m) { return m.loss_cv == 0.0 && m.loss_dm > 0.0; })},
        {"spatial_only", "--local-mode spatial", {{"views.local_mode", "spatial"}}, nullptr},
        {"temporal_only", "--local-mode temporal", {{"views.local_mode", "temporal"}}, nullptr},
        {"one_global", "-G 1 -L 2", {{"views.global_views", 1}, {"views.local_views", 2}}, nullptr},
        {"three_globals", "-G 3 -L 6 --tg 4,8", {{"views.global_views", 3}, {"views.local_views", 6}, {"views.global_frames", json::array({4, 8})}}, nullptr},
        {"short_locals", "--tl 2", {{"views.local_frames", json::array({2})}}, nullptr},
        {"no_locals", "-L 0", {{"views.local_views", 0}}, all([](const auto& m) { return m.loss_cv == 0.0; })},
    };
    std::vector<std::string> bad;
    for (const auto& c : cases) {
        const fs::path out = dir / c.name;
        if (endovid(pretrain_cmd(data, out, "--max-steps 2 " + c.flags), dir / (c.name + ".txt")) != 0) {
            bad.push_back(c.name + " (exit)");
            continue;
        }
        const auto snap = read_json(out / "config.json");
        bool ok = true;
        for (const auto& [k, v] : c.expect) ok = ok && snap.contains(k) && snap[k] == v;
        const auto rows = distill::read_metrics_csv(out / "metrics.csv");
        ok = ok && rows.size() == 2 && (!c.metrics_ok || c.metrics_ok(rows));
        if (!ok) bad.push_back(c.name);
    }
    std::string detail = std::to_string(cases.size() - bad.size()) + "/" + std::to_string(cases.size()) +
                         " ablation runs completed with matching snapshots";
    for (const auto& b : bad) detail += "; failed " + b;
    return {bad.empty(), detail};
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
};

const std::vector<Criterion> kCriteria{
    {1, "gradient oracle", gradient_oracle},
    {2, "equation algebra", equation_algebra},
    {3, "EMA algebra", ema_algebra},
    {4, "architecture invariants", architecture_invariants},
    {5, "anti-collapse", anti_collapse},
    {6, "learning signal", learning_signal},
    {7, "transfer signal", transfer_signal},
    {8, "determinism and persistence", determinism},
    {9, "ablation plumbing", ablation_plumbing},
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    g_work = fs::current_path() / "acceptance_runs";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string item;
            while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
        } else if (arg == "--work" && i + 1 < argc) {
            g_work = argv[++i];
        } else {
            std::fprintf(stderr, "usage: %s [--only 1,2,...] [--work DIR]\n", argv[0]);
            return 2;
        }
    }
    fs::create_directories(g_work);

    int failures = 0;
    for (const auto& c : kCriteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
        failures += !o.pass;
    }
    return failures == 0 ? 0 : 1;
}
