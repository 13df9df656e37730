#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "endovid/data.hpp"
#include "endovid/distill.hpp"

namespace endovid::distill {

namespace fs = std::filesystem;

// --- metrics CSV: step,epoch,loss_cv,loss_dm,loss_total,teacher_entropy,lr ---

inline constexpr const char* kMetricsHeader = "step,epoch,loss_cv,loss_dm,loss_total,teacher_entropy,lr";

void write_metrics_row(std::ostream& out, const StepMetrics& m);
/// Throws FormatError when the file is missing, has the wrong header or has no rows.
std::vector<StepMetrics> read_metrics_csv(const fs::path& path);

/// Fixed summary schema written by export-metrics:
///   steps, window, first_window_loss_mean, last_window_loss_mean, loss_decreased,
///   entropy_min, entropy_max, entropy_final, entropy_finite, final_lr, wall_clock_seconds
struct MetricsSummary {
    std::size_t steps = 0;
    std::size_t window = 0;  // min(requested, steps / 2), at least 1
    double first_window_loss_mean = 0.0;
    double last_window_loss_mean = 0.0;
    bool loss_decreased = false;
    double entropy_min = 0.0;
    double entropy_max = 0.0;
    double entropy_final = 0.0;
    bool entropy_finite = true;
    double final_lr = 0.0;
    std::optional<double> wall_clock_seconds;

    nlohmann::json to_json() const;
};

/// Throws FormatError on an empty row list.
MetricsSummary summarize_metrics(const std::vector<StepMetrics>& rows, std::size_t window = 20);

struct PretrainOptions {
    fs::path out_dir;                    // empty: keep everything in memory
    std::int64_t checkpoint_every = 0;   // 0: final checkpoint only
    std::optional<fs::path> resume;      // continue from this checkpoint
    std::int64_t stop_after = 0;         // > 0: stop once this many steps are done
    std::function<void(const StepMetrics&)> on_step;
};

struct PretrainResult {
    TrainState state;
    std::vector<StepMetrics> metrics;  // steps run by this call
    std::optional<fs::path> final_checkpoint;
    double wall_seconds = 0.0;
};

/// Run train_step over the cosine schedule until the configured number of steps.
/// A non-finite loss aborts with NonFiniteLoss naming the last good checkpoint.
PretrainResult pretrain_run(const std::vector<data::VideoClip>& clips,
                            const model::ModelConfig& model, const views::ViewConfig& views,
                            const DistillConfig& config, std::uint64_t seed,
                            const PretrainOptions& options = {});

}  // namespace endovid::distill
