#include <doctest.h>

#include <cmath>
#include <random>

#include "endovid/data.hpp"
#include "endovid/distill.hpp"
#include "endovid/errors.hpp"
#include "support.hpp"

using namespace endovid;
using namespace endovid::distill;
using TD = ag::Tensor<double>;

namespace {

std::vector<double> random_distribution(std::size_t k, std::uint64_t seed) {
    auto v = testing::randn(k, seed);
    double s = 0;
    for (auto& x : v) s += (x = std::exp(x));
    for (auto& x : v) x /= s;
    return v;
}

// log-distribution of the student whose softmax(f / tau) is exactly p
TD student_matching(const std::vector<double>& p, double tau) {
    std::vector<double> f(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) f[i] = tau * std::log(p[i]);
    return student_log_distribution(TD::from({1, p.size()}, f), tau);
}

double h(const std::vector<double>& p) { return entropy<double>(p); }

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("pair counts are G*L and G*(G-1)") {
    for (std::size_t g = 1; g <= 3; ++g)
        for (std::size_t l = 0; l <= 4; ++l) {
            std::vector<std::vector<double>> teacher;
            std::vector<TD> globals, locals;
            for (std::size_t i = 0; i < g; ++i) {
                teacher.push_back(random_distribution(6, 100 + i));
                globals.push_back(student_matching(random_distribution(6, 200 + i), 0.1));
            }
            for (std::size_t j = 0; j < l; ++j) locals.push_back(student_matching(random_distribution(6, 300 + j), 0.1));
            const auto cv = cross_view_loss(teacher, locals);
            const auto dm = dynamic_motion_loss(teacher, globals);
            CHECK(cv.pairs == g * l);
            CHECK(dm.pairs == g * (g - 1));
            CHECK(cv.empty == (l == 0));
            CHECK(dm.empty == (g == 1));
        }
}

TEST_CASE("matching student and teacher give the teacher entropy") {
    std::vector<std::vector<double>> teacher;
    std::vector<TD> students;
    double mean_h = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        teacher.push_back(random_distribution(8, 10 + i));
        students.push_back(student_matching(teacher.back(), 0.07));
        mean_h += h(teacher.back()) / 3;
    }
    // dm pairs the teacher of view i with the student of view k != i, so use identical targets
    std::vector<std::vector<double>> same(3, teacher[0]);
    std::vector<TD> same_students(3, student_matching(teacher[0], 0.07));
    CHECK(std::abs(dynamic_motion_loss(same, same_students).value.item() - h(teacher[0])) < 1e-6);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(std::abs(pair_cross_entropy(teacher[i], students[i]).item() - h(teacher[i])) < 1e-6);

    std::vector<std::vector<double>> one{teacher[1]};
    std::vector<TD> locals(4, students[1]);
    CHECK(std::abs(cross_view_loss(one, locals).value.item() - h(teacher[1])) < 1e-6);
}

TEST_CASE("raw sums scale with the pair count") {
    std::vector<std::vector<double>> teacher{random_distribution(5, 1), random_distribution(5, 2)};
    std::vector<TD> locals{student_matching(random_distribution(5, 3), 0.1),
                           student_matching(random_distribution(5, 4), 0.1),
                           student_matching(random_distribution(5, 5), 0.1)};
    const double mean = cross_view_loss(teacher, locals).value.item();
    const double sum = cross_view_loss(teacher, locals, true).value.item();
    CHECK(sum == doctest::Approx(6 * mean).epsilon(1e-12));
}

TEST_CASE("a pair term never drops below the teacher entropy") {
    // grid over the simplex for K = 3
    const auto pt = random_distribution(3, 42);
    const double floor_h = h(pt);
    double best = 1e9;
    const int n = 60;
    for (int a = 1; a < n; ++a)
        for (int b = 1; a + b < n; ++b) {
            const std::vector<double> ps{double(a) / n, double(b) / n, double(n - a - b) / n};
            const double ce = pair_cross_entropy(pt, student_matching(ps, 0.5)).item();
            CHECK(ce >= floor_h - 1e-12);
            best = std::min(best, ce);
        }
    CHECK(best - floor_h < 1e-2);
    CHECK(pair_cross_entropy(pt, student_matching(pt, 0.5)).item() == doctest::Approx(floor_h).epsilon(1e-12));
}

TEST_CASE("teacher distribution centres and sharpens") {
    const std::vector<double> f{1.0, 2.0, 0.5, 0.0};
    const std::vector<double> zero(4, 0.0);
    const auto p = teacher_distribution<double>(f, zero, 0.04);
    const auto soft = student_distribution(TD::from({1, 4}, f), 0.07);
    CHECK(h(p) < entropy<double>(soft.values()));

    // subtracting the logits themselves as the centre leaves a uniform target
    const auto u = teacher_distribution<double>(f, f, 0.04);
    for (double v : u) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(h(u) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("temperature settings are validated") {
    DistillConfig c;
    CHECK_NOTHROW(c.validate());
    c.teacher_temp = 0.1;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("distill.teacher_temp"), ConfigError);
    c = DistillConfig{};
    c.disable_cv = c.disable_dm = true;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("EMA update matches the closed form exactly in float") {
    const auto m = model::ModelConfig::tiny();
    for (double alpha : {0.0, 0.5, 0.996, 1.0}) {
        auto teacher = model::init_params<float>(m, 1, false);
        const auto student = model::init_params<float>(m, 2, false);
        const auto before = teacher.clone(false);
        ema_update(teacher, student, alpha);
        std::size_t mismatches = 0;
        for (std::size_t i = 0; i < teacher.size(); ++i) {
            const auto t = teacher.tensor(i).values(), th = before.tensor(i).values(), s = student.tensor(i).values();
            for (std::size_t k = 0; k < t.size(); ++k) {
                const float want = float(alpha) * th[k] + (1.0f - float(alpha)) * s[k];
                mismatches += t[k] != want;
            }
        }
        CHECK(mismatches == 0);
        if (alpha == 0.0) CHECK(teacher.tensor(0).values()[0] == student.tensor(0).values()[0]);
        if (alpha == 1.0) CHECK(teacher.tensor(0).values()[0] == before.tensor(0).values()[0]);
    }
}

TEST_CASE("two EMA steps against a frozen student equal one step with alpha squared") {
    const auto m = model::ModelConfig::tiny();
    auto twice = model::init_params<double>(m, 3, false);
    auto once = twice.clone(false);
    const auto student = model::init_params<double>(m, 4, false);
    ema_update(twice, student, 0.9);
    ema_update(twice, student, 0.9);
    ema_update(once, student, 0.81);
    double worst = 0;
    for (std::size_t i = 0; i < once.size(); ++i)
        for (std::size_t k = 0; k < once.tensor(i).numel(); ++k)
            worst = std::max(worst, std::abs(twice.tensor(i).values()[k] - once.tensor(i).values()[k]));
    CHECK(worst < 1e-12);
}

TEST_CASE("centre follows the batch mean") {
    std::vector<double> c{1.0, -1.0};
    center_update(c, {{2.0, 0.0}, {4.0, 2.0}}, 0.9);
    CHECK(c[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 3.0));
    CHECK(c[1] == doctest::Approx(0.9 * -1.0 + 0.1 * 1.0));
}

TEST_CASE("a training step leaves the teacher without gradients") {
    const auto m = model::ModelConfig::tiny();
    const auto v = views::ViewConfig::tiny();
    data::SyntheticSpec spec;
    spec.count = 4;
    spec.size = 16;
    spec.frames = 8;
    spec.square = 4;
    const auto d = data::generate_synthetic_dataset(spec);
    DistillConfig c;
    c.batch_size = 2;
    c.max_steps = 3;
    c.lr = 1e-3;
    Trainer trainer(m, v, c, 9, d.clips.size());
    auto st = trainer.initial_state();
    for (std::size_t i = 0; i < st.student.size(); ++i)
        CHECK(std::equal(st.student.tensor(i).values().begin(), st.student.tensor(i).values().end(),
                         st.teacher.tensor(i).values().begin()));

    for (std::int64_t s = 0; s < 3; ++s) {
        std::vector<const data::VideoClip*> batch;
        for (auto i : trainer.batch_indices(s)) batch.push_back(&d.clips[i]);
        const auto metrics = trainer.train_step(st, batch, s / trainer.steps_per_epoch());
        CHECK(metrics.step == s + 1);
        CHECK(std::isfinite(metrics.loss_total));
        CHECK(metrics.teacher_entropy > 0);
    }
    bool moved = false;
    for (std::size_t i = 0; i < st.teacher.size(); ++i) {
        CHECK_FALSE(st.teacher.tensor(i).has_grad());
        CHECK_FALSE(st.teacher.tensor(i).requires_grad());
        moved = moved || !std::equal(st.student.tensor(i).values().begin(), st.student.tensor(i).values().end(),
                                     st.teacher.tensor(i).values().begin());
    }
    CHECK(moved);
}

TEST_CASE("batches cover each epoch without repeats") {
    DistillConfig c;
    c.batch_size = 3;
    Trainer trainer(model::ModelConfig::tiny(), views::ViewConfig::tiny(), c, 1, 10);
    CHECK(trainer.steps_per_epoch() == 3);
    std::vector<int> seen(10, 0);
    for (std::int64_t s = 0; s < 3; ++s)
        for (auto i : trainer.batch_indices(s)) ++seen[i];
    for (int n : seen) CHECK(n <= 1);
    CHECK(trainer.batch_indices(0) == trainer.batch_indices(0));
}

TEST_CASE("non-finite losses abort") {
    CHECK_THROWS_AS(total_loss(TD::scalar(std::nan("")), TD::scalar(1.0)), NonFiniteLoss);
    CHECK_THROWS_AS(total_loss(TD::scalar(1.0), TD::scalar(INFINITY)), NonFiniteLoss);
}

TEST_CASE("a single global view still samples two for motion matching") {
    views::ViewConfig v = views::ViewConfig::tiny();
    v.global_views = 1;
    DistillConfig c;
    CHECK(sampled_global_count(v, c) == 2);
    c.disable_dm = true;
    CHECK(sampled_global_count(v, c) == 1);
}

}  // TEST_SUITE
