#include <doctest.h>

#include <fstream>
#include <iterator>

#include "endovid/data.hpp"
#include "endovid/errors.hpp"
#include "endovid/pretrain.hpp"
#include "support.hpp"

using namespace endovid;
using namespace endovid::distill;

namespace {

struct Setup {
    model::ModelConfig model = model::ModelConfig::tiny();
    views::ViewConfig views = views::ViewConfig::tiny();
    DistillConfig config;
    std::vector<data::VideoClip> clips;

    Setup() {
        config.batch_size = 2;
        config.max_steps = 6;
        config.lr = 1e-3;
        data::SyntheticSpec s;
        s.count = 4;
        s.size = 16;
        s.frames = 8;
        s.square = 4;
        s.seed = 2;
        clips = data::generate_synthetic_dataset(s).clips;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("pretrain") {

TEST_CASE("identical seeds give identical metrics files") {
    testing::TempDir dir("pretrain_det");
    Setup s;
    PretrainOptions a, b;
    a.out_dir = dir / "a";
    b.out_dir = dir / "b";
    const auto ra = pretrain_run(s.clips, s.model, s.views, s.config, 5, a);
    const auto rb = pretrain_run(s.clips, s.model, s.views, s.config, 5, b);
    CHECK(ra.metrics.size() == 6);
    CHECK(slurp(dir / "a/metrics.csv") == slurp(dir / "b/metrics.csv"));
    CHECK(slurp(dir / "a/checkpoint_final.ckpt") == slurp(dir / "b/checkpoint_final.ckpt"));

    PretrainOptions c;
    c.out_dir = dir / "c";
    pretrain_run(s.clips, s.model, s.views, s.config, 6, c);
    CHECK(slurp(dir / "a/metrics.csv") != slurp(dir / "c/metrics.csv"));
}

TEST_CASE("resuming at the midpoint reproduces the rest of the run") {
    testing::TempDir dir("pretrain_resume");
    Setup s;
    PretrainOptions full;
    full.out_dir = dir / "full";
    const auto whole = pretrain_run(s.clips, s.model, s.views, s.config, 3, full);

    PretrainOptions first;
    first.out_dir = dir / "split";
    first.checkpoint_every = 3;
    first.stop_after = 3;
    const auto head = pretrain_run(s.clips, s.model, s.views, s.config, 3, first);
    CHECK(head.metrics.size() == 3);
    REQUIRE(fs::exists(dir / "split/checkpoint_step_000003.ckpt"));

    PretrainOptions rest;
    rest.out_dir = dir / "split";
    rest.resume = dir / "split/checkpoint_step_000003.ckpt";
    const auto tail = pretrain_run(s.clips, s.model, s.views, s.config, 3, rest);
    REQUIRE(tail.metrics.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& x = tail.metrics[i];
        const auto& y = whole.metrics[i + 3];
        CHECK(x.step == y.step);
        CHECK(x.loss_total == y.loss_total);
        CHECK(x.teacher_entropy == y.teacher_entropy);
        CHECK(x.lr == y.lr);
    }
    CHECK(slurp(dir / "split/metrics.csv") == slurp(dir / "full/metrics.csv"));
    CHECK(slurp(dir / "split/checkpoint_final.ckpt") == slurp(dir / "full/checkpoint_final.ckpt"));
}

TEST_CASE("resume refuses a different seed or architecture") {
    testing::TempDir dir("pretrain_refuse");
    Setup s;
    PretrainOptions o;
    o.out_dir = dir.path();
    o.stop_after = 1;
    pretrain_run(s.clips, s.model, s.views, s.config, 1, o);
    PretrainOptions r;
    r.resume = dir / "checkpoint_final.ckpt";
    CHECK_THROWS_AS(pretrain_run(s.clips, s.model, s.views, s.config, 2, r), ConfigError);
    auto other = s.model;
    other.out_dim = 32;
    CHECK_THROWS_AS(pretrain_run(s.clips, other, s.views, s.config, 1, r), ConfigError);
}

TEST_CASE("metrics CSV round trip and summary") {
    testing::TempDir dir("pretrain_csv");
    std::vector<StepMetrics> rows;
    for (int i = 1; i <= 10; ++i) {
        StepMetrics m;
        m.step = i;
        m.loss_cv = 1.0 / i;
        m.loss_dm = 0.5;
        m.loss_total = m.loss_cv + m.loss_dm;
        m.teacher_entropy = 2.0 + 0.1 * i;
        m.lr = 1e-4;
        rows.push_back(m);
    }
    {
        std::ofstream out(dir / "metrics.csv");
        out << kMetricsHeader << '\n';
        for (const auto& m : rows) write_metrics_row(out, m);
    }
    const auto back = read_metrics_csv(dir / "metrics.csv");
    REQUIRE(back.size() == 10);
    CHECK(back[3].loss_cv == doctest::Approx(0.25).epsilon(1e-9));

    const auto s = summarize_metrics(back, 20);
    CHECK(s.window == 5);
    CHECK(s.loss_decreased);
    CHECK(s.entropy_min == doctest::Approx(2.1));
    CHECK(s.entropy_final == doctest::Approx(3.0));
    CHECK(s.to_json().contains("wall_clock_seconds"));

    std::ofstream(dir / "bad.csv") << "step,loss\n1,2\n";
    CHECK_THROWS_AS(read_metrics_csv(dir / "bad.csv"), FormatError);
    std::ofstream(dir / "torn.csv") << kMetricsHeader << "\n1,0,0.5\n";
    CHECK_THROWS_WITH_AS(read_metrics_csv(dir / "torn.csv"), doctest::Contains("line 2"), FormatError);
    CHECK_THROWS_AS(summarize_metrics({}), FormatError);
}

}  // TEST_SUITE
