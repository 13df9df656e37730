#include "endovid/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "endovid/checkpoint.hpp"
#include "endovid/errors.hpp"

namespace endovid::distill {

void write_metrics_row(std::ostream& out, const StepMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(m.step), static_cast<long long>(m.epoch), m.loss_cv,
                  m.loss_dm, m.loss_total, m.teacher_entropy, m.lr);
    out << buf;
}

std::vector<StepMetrics> read_metrics_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open metrics file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        throw FormatError(path.string() + ": missing or unexpected metrics header");
    std::vector<StepMetrics> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        StepMetrics m;
        long long step = 0, epoch = 0;
        if (std::sscanf(line.c_str(), "%lld,%lld,%lf,%lf,%lf,%lf,%lf", &step, &epoch, &m.loss_cv,
                        &m.loss_dm, &m.loss_total, &m.teacher_entropy, &m.lr) != 7) {
            throw FormatError(path.string() + ": malformed row at line " + std::to_string(lineno));
        }
        m.step = step;
        m.epoch = epoch;
        rows.push_back(m);
    }
    if (rows.empty()) throw FormatError(path.string() + ": metrics file has no rows");
    return rows;
}

nlohmann::json MetricsSummary::to_json() const {
    return nlohmann::json{{"steps", steps},
                          {"window", window},
                          {"first_window_loss_mean", first_window_loss_mean},
                          {"last_window_loss_mean", last_window_loss_mean},
                          {"loss_decreased", loss_decreased},
                          {"entropy_min", entropy_min},
                          {"entropy_max", entropy_max},
                          {"entropy_final", entropy_final},
                          {"entropy_finite", entropy_finite},
                          {"final_lr", final_lr},
                          {"wall_clock_seconds", wall_clock_seconds ? nlohmann::json(*wall_clock_seconds)
                                                                    : nlohmann::json(nullptr)}};
}

MetricsSummary summarize_metrics(const std::vector<StepMetrics>& rows, std::size_t window) {
    if (rows.empty()) throw FormatError("no metrics rows to summarise");
    MetricsSummary s;
    s.steps = rows.size();
    s.window = std::max<std::size_t>(1, std::min(window, rows.size() / 2));
    for (std::size_t i = 0; i < s.window; ++i) {
        s.first_window_loss_mean += rows[i].loss_total;
        s.last_window_loss_mean += rows[rows.size() - 1 - i].loss_total;
    }
    s.first_window_loss_mean /= double(s.window);
    s.last_window_loss_mean /= double(s.window);
    s.loss_decreased = s.last_window_loss_mean < s.first_window_loss_mean;
    s.entropy_min = s.entropy_max = rows.front().teacher_entropy;
    for (const auto& r : rows) {
        s.entropy_finite = s.entropy_finite && std::isfinite(r.teacher_entropy);
        s.entropy_min = std::min(s.entropy_min, r.teacher_entropy);
        s.entropy_max = std::max(s.entropy_max, r.teacher_entropy);
    }
    s.entropy_final = rows.back().teacher_entropy;
    s.final_lr = rows.back().lr;
    return s;
}

namespace {

fs::path step_checkpoint(const fs::path& dir, std::int64_t step) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "checkpoint_step_%06lld.ckpt", static_cast<long long>(step));
    return dir / buf;
}

}  // namespace

PretrainResult pretrain_run(const std::vector<data::VideoClip>& clips,
                            const model::ModelConfig& model, const views::ViewConfig& views,
                            const DistillConfig& config, std::uint64_t seed,
                            const PretrainOptions& options) {
    if (clips.empty()) throw ConfigError("pre-training needs a non-empty dataset");
    const auto t0 = std::chrono::steady_clock::now();
    const Trainer trainer(model, views, config, seed, clips.size());

    PretrainResult result;
    std::optional<fs::path> last_good;
    if (options.resume) {
        auto ck = data::load_checkpoint(*options.resume);
        if (!(ck.model == model))
            throw ConfigError("checkpoint model configuration differs from the run configuration");
        if (ck.state.seed != seed)
            throw ConfigError("checkpoint seed differs from the run seed");
        ck.state.teacher.require_same_structure(ck.state.student);
        result.state = std::move(ck.state);
        last_good = *options.resume;
    } else {
        result.state = trainer.initial_state();
    }

    const bool persist = !options.out_dir.empty();
    std::ofstream csv;
    if (persist) {
        fs::create_directories(options.out_dir);
        const fs::path csv_path = options.out_dir / "metrics.csv";
        // Keep earlier rows of the same run when resuming into its directory.
        std::vector<StepMetrics> kept;
        if (options.resume && fs::exists(csv_path)) {
            for (const auto& m : read_metrics_csv(csv_path))
                if (m.step <= result.state.step) kept.push_back(m);
        }
        csv.open(csv_path, std::ios::trunc);
        if (!csv) throw FormatError("cannot write " + csv_path.string());
        csv << kMetricsHeader << '\n';
        for (const auto& m : kept) write_metrics_row(csv, m);
        csv.flush();
    }

    std::int64_t end = trainer.total_steps();
    if (options.stop_after > 0) end = std::min(end, options.stop_after);
    while (result.state.step < end) {
        const std::int64_t step = result.state.step;
        std::vector<const data::VideoClip*> batch;
        for (auto i : trainer.batch_indices(step)) batch.push_back(&clips[i]);
        StepMetrics m;
        try {
            m = trainer.train_step(result.state, batch, step / trainer.steps_per_epoch());
        } catch (const NonFiniteLoss& e) {
            throw NonFiniteLoss(std::string(e.what()) + " at step " + std::to_string(step + 1) +
                                "; last good checkpoint: " +
                                (last_good ? last_good->string() : std::string("none")));
        }
        result.metrics.push_back(m);
        if (persist) {
            write_metrics_row(csv, m);
            csv.flush();
            if (options.checkpoint_every > 0 && m.step % options.checkpoint_every == 0) {
                const auto p = step_checkpoint(options.out_dir, m.step);
                data::save_checkpoint(p, model, result.state);
                last_good = p;
            }
        }
        if (options.on_step) options.on_step(m);
    }
    if (persist) {
        const fs::path p = options.out_dir / "checkpoint_final.ckpt";
        data::save_checkpoint(p, model, result.state);
        result.final_checkpoint = p;
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace endovid::distill
