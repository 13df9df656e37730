#include "endovid/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "endovid/errors.hpp"

namespace endovid::distill {

using ag::Tensor;

void DistillConfig::validate() const {
    if (!(teacher_temp > 0.0 && teacher_temp < student_temp))
        throw ConfigError("distill.teacher_temp and distill.student_temp must satisfy 0 < teacher_temp < student_temp");
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0))
        throw ConfigError("distill.ema_momentum must lie in [0, 1]");
    if (!(center_momentum >= 0.0 && center_momentum < 1.0))
        throw ConfigError("distill.center_momentum must lie in [0, 1)");
    if (disable_cv && disable_dm)
        throw ConfigError("distill.disable_cv and distill.disable_dm cannot both be set: no loss would remain");
    if (batch_size == 0) throw ConfigError("distill.batch_size must be positive");
    if (epochs == 0 && max_steps <= 0) throw ConfigError("distill.epochs must be positive");
    if (!(lr >= 0.0) || !(final_lr >= 0.0) || final_lr > lr)
        throw ConfigError("distill.final_lr must lie in [0, distill.lr]");
    if (!(weight_decay >= 0.0)) throw ConfigError("distill.weight_decay must be non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
        throw ConfigError("distill.warmup_fraction must lie in [0, 1]");
}

template <typename T>
std::vector<T> teacher_distribution(std::span<const T> logits, std::span<const T> center,
                                    double teacher_temp) {
    if (!(teacher_temp > 0.0)) throw DomainError("teacher temperature must be positive");
    std::vector<T> shifted(logits.begin(), logits.end());
    if (!center.empty()) {
        if (center.size() != logits.size()) throw ShapeError("center width differs from logits");
        for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] -= center[i];
    }
    const std::size_t n = shifted.size();
    auto p = ag::softmax(Tensor<T>::from({1, n}, std::move(shifted)), T(teacher_temp));
    return {p.values().begin(), p.values().end()};
}

template <typename T>
Tensor<T> student_distribution(const Tensor<T>& logits, double student_temp) {
    return ag::softmax(logits, T(student_temp));
}

template <typename T>
Tensor<T> student_log_distribution(const Tensor<T>& logits, double student_temp) {
    return ag::log_softmax(logits, T(student_temp));
}

template <typename T>
Tensor<T> pair_cross_entropy(const std::vector<T>& teacher, const Tensor<T>& student_log) {
    if (teacher.size() != student_log.numel())
        throw ShapeError("teacher and student distributions differ in width");
    auto target = Tensor<T>::from(student_log.shape(), teacher);
    return ag::scale(ag::sum(ag::mul(target, student_log)), T(-1));
}

namespace {

template <typename T>
LossTerm<T> reduce_pairs(std::vector<Tensor<T>> terms, bool sum_pairs) {
    LossTerm<T> out;
    out.pairs = terms.size();
    if (terms.empty()) {
        out.empty = true;
        out.value = Tensor<T>::scalar(T(0));
        return out;
    }
    Tensor<T> acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ag::add(acc, terms[i]);
    out.value = sum_pairs ? acc : ag::scale(acc, T(1) / T(terms.size()));
    return out;
}

}  // namespace

template <typename T>
LossTerm<T> cross_view_loss(const std::vector<std::vector<T>>& teacher_globals,
                            const std::vector<Tensor<T>>& student_locals, bool sum_pairs) {
    std::vector<Tensor<T>> terms;
    for (const auto& pt : teacher_globals)
        for (const auto& ls : student_locals) terms.push_back(pair_cross_entropy(pt, ls));
    return reduce_pairs(std::move(terms), sum_pairs);
}

template <typename T>
LossTerm<T> dynamic_motion_loss(const std::vector<std::vector<T>>& teacher_globals,
                                const std::vector<Tensor<T>>& student_globals, bool sum_pairs) {
    if (teacher_globals.size() != student_globals.size())
        throw ContractError("dynamic motion matching needs one student output per global view");
    std::vector<Tensor<T>> terms;
    for (std::size_t i = 0; i < teacher_globals.size(); ++i)
        for (std::size_t k = 0; k < student_globals.size(); ++k)
            if (i != k) terms.push_back(pair_cross_entropy(teacher_globals[i], student_globals[k]));
    return reduce_pairs(std::move(terms), sum_pairs);
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& cv, const Tensor<T>& dm) {
    const double a = double(cv.item()), b = double(dm.item());
    if (!std::isfinite(a) || !std::isfinite(b)) {
        std::ostringstream os;
        os << "non-finite loss (cross-view " << a << ", dynamic motion " << b << ")";
        throw NonFiniteLoss(os.str());
    }
    return ag::add(cv, dm);
}

template <typename T>
void ema_update(ParameterSet<T>& teacher, const ParameterSet<T>& student, double alpha) {
    teacher.require_same_structure(student);
    const T a = T(alpha);
    const T b = T(1) - a;
    for (std::size_t p = 0; p < teacher.size(); ++p) {
        auto phi = teacher.tensor(p).mutable_values();
        auto theta = student.tensor(p).values();
        for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = a * phi[i] + b * theta[i];
    }
}

template <typename T>
void center_update(std::vector<T>& center, const std::vector<std::vector<T>>& batch,
                   double momentum) {
    if (batch.empty()) throw ContractError("center update needs a non-empty batch");
    std::vector<double> mean(center.size(), 0.0);
    for (const auto& row : batch) {
        if (row.size() != center.size()) throw ShapeError("teacher output width differs from center");
        for (std::size_t i = 0; i < row.size(); ++i) mean[i] += double(row[i]);
    }
    const T m = T(momentum);
    for (std::size_t i = 0; i < center.size(); ++i)
        center[i] = m * center[i] + (T(1) - m) * T(mean[i] / double(batch.size()));
}

template <typename T>
double entropy(std::span<const T> p) {
    double h = 0.0;
    for (T v : p)
        if (v > T(0)) h -= double(v) * std::log(double(v));
    return h;
}

std::size_t sampled_global_count(const views::ViewConfig& v, const DistillConfig& c) {
    return c.disable_dm ? v.global_views : std::max<std::size_t>(v.global_views, 2);
}

std::vector<std::size_t> cross_view_globals(const std::vector<views::View>& globals,
                                            std::size_t configured) {
    std::vector<std::size_t> idx(globals.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (configured >= globals.size()) return idx;
    // keep the `configured` longest views, earlier ones first on ties
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return globals[a].spec.frame_count > globals[b].spec.frame_count;
    });
    idx.resize(configured);
    std::sort(idx.begin(), idx.end());
    return idx;
}

template <typename T>
ClipLoss<T> clip_loss(const views::ViewSet& views, const ParameterSet<T>& student,
                      const ParameterSet<T>& teacher, std::span<const T> center,
                      const model::ModelConfig& mc, const views::ViewConfig& vc,
                      const DistillConfig& c) {
    ClipLoss<T> out;
    std::vector<std::vector<T>> targets;
    for (const auto& g : views.globals) {
        auto f = model::model_forward(g.frames, teacher, mc);
        out.teacher_logits.emplace_back(f.values().begin(), f.values().end());
        targets.push_back(teacher_distribution<T>(out.teacher_logits.back(), center, c.teacher_temp));
        out.teacher_entropy += entropy<T>(targets.back());
    }
    out.teacher_entropy /= double(std::max<std::size_t>(1, targets.size()));

    Tensor<T> cv = Tensor<T>::scalar(T(0));
    Tensor<T> dm = Tensor<T>::scalar(T(0));
    if (!c.disable_cv && !views.locals.empty()) {
        std::vector<std::vector<T>> cv_targets;
        for (auto i : cross_view_globals(views.globals, vc.global_views)) cv_targets.push_back(targets[i]);
        std::vector<Tensor<T>> locals;
        for (const auto& l : views.locals)
            locals.push_back(student_log_distribution(model::model_forward(l.frames, student, mc),
                                                      c.student_temp));
        cv = cross_view_loss(cv_targets, locals, c.sum_pairs).value;
    }
    if (!c.disable_dm) {
        std::vector<Tensor<T>> globals;
        for (const auto& g : views.globals)
            globals.push_back(student_log_distribution(model::model_forward(g.frames, student, mc),
                                                       c.student_temp));
        dm = dynamic_motion_loss(targets, globals, c.sum_pairs).value;
    }
    out.cv = double(cv.item());
    out.dm = double(dm.item());
    out.total = total_loss(cv, dm);
    return out;
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

Trainer::Trainer(model::ModelConfig model, views::ViewConfig views, DistillConfig config,
                 std::uint64_t seed, std::size_t dataset_size)
    : model_(std::move(model)), views_(std::move(views)), config_(config), seed_(seed),
      dataset_size_(dataset_size) {
    model_.validate();
    views_.validate();
    config_.validate();
    if (dataset_size_ == 0) throw ConfigError("dataset is empty");
    steps_per_epoch_ = std::max<std::int64_t>(1, std::int64_t(dataset_size_ / config_.batch_size));
    total_steps_ = config_.max_steps > 0 ? config_.max_steps
                                         : steps_per_epoch_ * std::int64_t(config_.epochs);
    schedule_.base = config_.lr;
    schedule_.final = config_.final_lr;
    schedule_.total_steps = total_steps_;
    schedule_.warmup_steps = std::int64_t(std::llround(config_.warmup_fraction * double(total_steps_)));
}

ParameterSet<float> initial_student(const model::ModelConfig& model, std::uint64_t seed) {
    return model::init_params<float>(model, mix64(seed ^ 0x5eedULL), true);
}

TrainState Trainer::initial_state() const {
    TrainState s;
    s.seed = seed_;
    s.student = initial_student(model_, seed_);
    s.teacher = s.student.clone(false);
    optim::AdamWConfig oc;
    oc.lr = config_.lr;
    oc.weight_decay = config_.weight_decay;
    s.optimizer = optim::OptimizerState<float>::for_params(s.student, oc);
    s.center.assign(model_.out_dim, 0.0f);
    return s;
}

std::vector<std::size_t> Trainer::batch_indices(std::int64_t step) const {
    const std::int64_t epoch = step / steps_per_epoch_;
    const std::int64_t pos = step % steps_per_epoch_;
    std::vector<std::size_t> order(dataset_size_);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix64(seed_ ^ mix64(std::uint64_t(epoch) + 1)));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t b = std::min(config_.batch_size, dataset_size_);
    return {order.begin() + std::ptrdiff_t(std::size_t(pos) * b),
            order.begin() + std::ptrdiff_t(std::size_t(pos + 1) * b)};
}

StepMetrics Trainer::train_step(TrainState& state, const std::vector<const data::VideoClip*>& batch,
                                std::int64_t epoch) const {
    if (batch.empty()) throw ContractError("train_step needs a non-empty batch");
    const std::size_t n_globals = sampled_global_count(views_, config_);
    const float inv_batch = 1.0f / float(batch.size());
    const double lr = optim::cosine_lr(schedule_, state.step);

    StepMetrics m;
    std::vector<std::vector<float>> teacher_outputs;
    state.student.zero_grad();
    for (const auto* clip : batch) {
        std::mt19937_64 rng(views::stream_seed(seed_, clip->id, std::uint64_t(epoch)));
        const auto views = views::sample_views(clip->frames, views_, n_globals, rng);
        auto loss = clip_loss<float>(views, state.student, state.teacher, state.center, model_,
                                     views_, config_);
        // Per-clip backward keeps one clip's graph alive at a time; the gradients
        // sum to those of the batch-mean loss.
        ag::backward(ag::scale(loss.total, inv_batch));
        m.loss_cv += loss.cv;
        m.loss_dm += loss.dm;
        m.teacher_entropy += loss.teacher_entropy;
        for (auto& t : loss.teacher_logits) teacher_outputs.push_back(std::move(t));
    }
    optim::adamw_step(state.optimizer, state.student, lr);
    ema_update(state.teacher, state.student, config_.ema_momentum);
    if (config_.centering) center_update(state.center, teacher_outputs, config_.center_momentum);

    state.step += 1;
    m.step = state.step;
    m.epoch = epoch;
    m.loss_cv /= double(batch.size());
    m.loss_dm /= double(batch.size());
    m.loss_total = m.loss_cv + m.loss_dm;
    m.teacher_entropy /= double(batch.size());
    m.lr = lr;
    double cn = 0.0;
    for (float v : state.center) cn += double(v) * double(v);
    m.center_norm = std::sqrt(cn);
    return m;
}

#define ENDOVID_INSTANTIATE_DISTILL(T)                                                          \
    template std::vector<T> teacher_distribution<T>(std::span<const T>, std::span<const T>,      \
                                                    double);                                     \
    template Tensor<T> student_distribution<T>(const Tensor<T>&, double);                        \
    template Tensor<T> student_log_distribution<T>(const Tensor<T>&, double);                    \
    template Tensor<T> pair_cross_entropy<T>(const std::vector<T>&, const Tensor<T>&);           \
    template LossTerm<T> cross_view_loss<T>(const std::vector<std::vector<T>>&,                  \
                                            const std::vector<Tensor<T>>&, bool);                \
    template LossTerm<T> dynamic_motion_loss<T>(const std::vector<std::vector<T>>&,              \
                                                const std::vector<Tensor<T>>&, bool);            \
    template Tensor<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template void ema_update<T>(ParameterSet<T>&, const ParameterSet<T>&, double);               \
    template void center_update<T>(std::vector<T>&, const std::vector<std::vector<T>>&, double); \
    template double entropy<T>(std::span<const T>);                                              \
    template ClipLoss<T> clip_loss<T>(const views::ViewSet&, const ParameterSet<T>&,             \
                                      const ParameterSet<T>&, std::span<const T>,                \
                                      const model::ModelConfig&, const views::ViewConfig&,       \
                                      const DistillConfig&);

ENDOVID_INSTANTIATE_DISTILL(float)
ENDOVID_INSTANTIATE_DISTILL(double)

}  // namespace endovid::distill
