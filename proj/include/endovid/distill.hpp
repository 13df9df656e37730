#pragma once

// Teacher-student self-distillation over global and local views.
//
// The teacher sees the global views and produces centred, sharpened target
// distributions; the student sees every view and is trained to match them:
//   cross-view:     teacher(global i) vs student(local j), all i, j
//   dynamic motion: teacher(global i) vs student(global k), i != k
// The teacher never receives gradients. After each optimizer step it tracks the
// student by an exponential moving average, and the centre tracks the mean
// teacher output.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "endovid/data.hpp"
#include "endovid/model.hpp"
#include "endovid/optim.hpp"
#include "endovid/params.hpp"
#include "endovid/views.hpp"

namespace endovid::distill {

struct DistillConfig {
    double teacher_temp = 0.04;
    double student_temp = 0.07;
    double ema_momentum = 0.996;
    double center_momentum = 0.9;
    bool centering = true;
    bool sum_pairs = false;  // raw double sums instead of pair means
    bool disable_cv = false;
    bool disable_dm = false;
    std::size_t epochs = 30;
    std::size_t batch_size = 12;
    std::int64_t max_steps = 0;  // > 0 overrides epochs * steps_per_epoch
    double lr = 2e-5;
    double final_lr = 1e-6;
    double weight_decay = 4e-2;
    double warmup_fraction = 0.1;

    void validate() const;
};

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A loss term and the number of (teacher, student) pairs it averages.
template <typename T>
struct LossTerm {
    ag::Tensor<T> value;
    std::size_t pairs = 0;
    bool empty = false;  // no pairs; value is 0
};

/// softmax((f - c) / tau_t); a constant target, outside the graph.
template <typename T>
std::vector<T> teacher_distribution(std::span<const T> logits, std::span<const T> center,
                                    double teacher_temp);

/// softmax(f / tau_s); differentiable.
template <typename T>
ag::Tensor<T> student_distribution(const ag::Tensor<T>& logits, double student_temp);
/// log softmax(f / tau_s); what the losses consume.
template <typename T>
ag::Tensor<T> student_log_distribution(const ag::Tensor<T>& logits, double student_temp);

/// -p_t . log p_s for one pair.
template <typename T>
ag::Tensor<T> pair_cross_entropy(const std::vector<T>& teacher, const ag::Tensor<T>& student_log);

/// Teacher targets of the global views against student log-distributions of the
/// local views, averaged over the G*L pairs (summed when `sum_pairs`).
template <typename T>
LossTerm<T> cross_view_loss(const std::vector<std::vector<T>>& teacher_globals,
                            const std::vector<ag::Tensor<T>>& student_locals,
                            bool sum_pairs = false);

/// Teacher targets of the global views against the student on every other
/// global view, averaged over the G*(G-1) ordered pairs.
template <typename T>
LossTerm<T> dynamic_motion_loss(const std::vector<std::vector<T>>& teacher_globals,
                                const std::vector<ag::Tensor<T>>& student_globals,
                                bool sum_pairs = false);

/// cv + dm; throws NonFiniteLoss when either part is not finite.
template <typename T>
ag::Tensor<T> total_loss(const ag::Tensor<T>& cv, const ag::Tensor<T>& dm);

/// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
template <typename T>
void ema_update(ParameterSet<T>& teacher, const ParameterSet<T>& student, double alpha);

/// c <- m * c + (1 - m) * mean(batch).
template <typename T>
void center_update(std::vector<T>& center, const std::vector<std::vector<T>>& batch,
                   double momentum);

template <typename T>
double entropy(std::span<const T> p);

/// Number of global views to sample: dynamic motion matching needs at least two
/// even when cross-view matching is restricted to one.
std::size_t sampled_global_count(const views::ViewConfig& views, const DistillConfig& config);

/// Indices of the globals that take part in cross-view matching. With G = 1 and two
/// sampled globals only the one with more frames is used.
std::vector<std::size_t> cross_view_globals(const std::vector<views::View>& globals,
                                            std::size_t configured_globals);

template <typename T>
struct ClipLoss {
    ag::Tensor<T> total;
    double cv = 0.0;
    double dm = 0.0;
    std::vector<std::vector<T>> teacher_logits;  // one per sampled global view
    double teacher_entropy = 0.0;                // mean over the teacher targets
};

/// Full pre-training objective for the views of one clip.
template <typename T>
ClipLoss<T> clip_loss(const views::ViewSet& views, const ParameterSet<T>& student,
                      const ParameterSet<T>& teacher, std::span<const T> center,
                      const model::ModelConfig& model_config,
                      const views::ViewConfig& view_config, const DistillConfig& config);

struct StepMetrics {
    std::int64_t step = 0;  // 1-based count of completed optimizer steps
    std::int64_t epoch = 0;
    double loss_cv = 0.0;
    double loss_dm = 0.0;
    double loss_total = 0.0;
    double teacher_entropy = 0.0;
    double lr = 0.0;
    double center_norm = 0.0;
};

/// Everything needed to continue a run bit-for-bit.
struct TrainState {
    ParameterSet<float> student;
    ParameterSet<float> teacher;
    optim::OptimizerState<float> optimizer;
    std::vector<float> center;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
};

/// Student weights at step 0 for `seed`; the teacher starts as an exact copy.
ParameterSet<float> initial_student(const model::ModelConfig& model, std::uint64_t seed);

class Trainer {
public:
    Trainer(model::ModelConfig model, views::ViewConfig views, DistillConfig config,
            std::uint64_t seed, std::size_t dataset_size);

    /// Student initialised from the seed, teacher an exact copy, zero centre.
    TrainState initial_state() const;

    std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
    std::int64_t total_steps() const { return total_steps_; }
    const optim::LrSchedule& schedule() const { return schedule_; }

    /// Dataset indices used by optimizer step `step` (0-based).
    std::vector<std::size_t> batch_indices(std::int64_t step) const;

    /// One optimizer step on `batch` (views drawn from the (seed, clip, epoch) stream).
    StepMetrics train_step(TrainState& state, const std::vector<const data::VideoClip*>& batch,
                           std::int64_t epoch) const;

    const model::ModelConfig& model_config() const { return model_; }
    const views::ViewConfig& view_config() const { return views_; }
    const DistillConfig& config() const { return config_; }

private:
    model::ModelConfig model_;
    views::ViewConfig views_;
    DistillConfig config_;
    std::uint64_t seed_;
    std::size_t dataset_size_;
    std::int64_t steps_per_epoch_ = 1;
    std::int64_t total_steps_ = 1;
    optim::LrSchedule schedule_;
};

}  // namespace endovid::distill
