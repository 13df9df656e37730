#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "endovid/checkpoint.hpp"
#include "endovid/data.hpp"
#include "endovid/errors.hpp"
#include "support.hpp"

using namespace endovid;
using namespace endovid::data;

namespace {

Frames sequence(std::size_t n) {
    Frames f(n, 2, 2);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t i = 0; i < f.frame_size(); ++i) f.data[t * f.frame_size() + i] = float(t % 256) / 255.0f;
    return f;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
}

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.count = 6;
    s.size = 16;
    s.frames = 8;
    s.square = 4;
    s.seed = 3;
    return s;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("slicing at 30 fps for 5 s gives 150-frame clips") {
    const auto clips = slice_video_to_clips(sequence(300), 30.0, 5.0);
    REQUIRE(clips.size() == 2);
    CHECK(clips[0].frames == 150);
    CHECK(clips[1].data.front() == doctest::Approx(150.0f / 255.0f));
}

TEST_CASE("a remainder of at least half a clip is kept") {
    const auto clips = slice_video_to_clips(sequence(400), 30.0, 5.0);
    REQUIRE(clips.size() == 3);
    CHECK(clips[2].frames == 100);
}

TEST_CASE("a short remainder is dropped") {
    CHECK(slice_video_to_clips(sequence(370), 30.0, 5.0).size() == 2);
    CHECK(slice_video_to_clips(sequence(450), 30.0, 5.0).size() == 3);
    CHECK(slice_video_to_clips(Frames{}, 30.0, 5.0).empty());
    CHECK_THROWS_AS(slice_video_to_clips(sequence(10), 0.0, 5.0), DomainError);
}

TEST_CASE("synthetic data is seeded and balanced") {
    auto spec = small_spec();
    const auto a = generate_synthetic_dataset(spec), b = generate_synthetic_dataset(spec);
    REQUIRE(a.clips.size() == 6);
    int ones = 0;
    for (std::size_t i = 0; i < a.clips.size(); ++i) {
        CHECK(a.clips[i].frames == b.clips[i].frames);
        REQUIRE(a.clips[i].label.has_value());
        ones += *a.clips[i].label;
        for (float v : a.clips[i].frames.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    CHECK(ones == 3);
    spec.seed = 4;
    CHECK_FALSE(generate_synthetic_dataset(spec).clips[0].frames == a.clips[0].frames);
}

TEST_CASE("class 0 moves right, class 1 moves left and faster") {
    const auto d = generate_synthetic_dataset(small_spec());
    auto energy = [](const Frames& f) {
        double e = 0;
        for (std::size_t t = 1; t < f.frames; ++t)
            for (std::size_t i = 0; i < f.frame_size(); ++i)
                e += std::abs(f.data[t * f.frame_size() + i] - f.data[(t - 1) * f.frame_size() + i]);
        return e / double(f.frames - 1);
    };
    double slow = 0, fast = 0;
    for (std::size_t i = 0; i < d.clips.size(); ++i) {
        const auto& xs = d.square_x[i];
        const bool right = *d.clips[i].label == 0;
        double dist = 0;
        for (std::size_t t = 1; t < xs.size(); ++t) {
            if (right) CHECK(xs[t] > xs[t - 1]);
            else CHECK(xs[t] < xs[t - 1]);
            dist += std::abs(xs[t] - xs[t - 1]);
        }
        (right ? slow : fast) += energy(d.clips[i].frames);
    }
    CHECK(fast > slow);
}

TEST_CASE("degenerate synthetic specs are refused") {
    auto spec = small_spec();
    spec.square = 20;
    CHECK_THROWS_AS(generate_synthetic_dataset(spec), DomainError);
    spec = small_spec();
    spec.appearance_variation = 1.5;
    CHECK_THROWS_AS(generate_synthetic_dataset(spec), DomainError);
}

TEST_CASE("dataset round trip through PPM frames within quantisation") {
    testing::TempDir dir("data_roundtrip");
    const auto d = generate_synthetic_dataset(small_spec());
    write_dataset(dir.path(), d.manifest, d.clips);
    const auto loaded = load_dataset(dir / "manifest.json");
    REQUIRE(loaded.size() == d.clips.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].id == d.clips[i].id);
        CHECK(loaded[i].label == d.clips[i].label);
        CHECK(loaded[i].fps == d.clips[i].fps);
        const auto& a = loaded[i].frames.data;
        const auto& b = d.clips[i].frames.data;
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= 0.5f / 255.0f + 1e-6f);
    }
    const auto seq = load_frame_sequence(dir / d.manifest.clips[0].path);
    CHECK(seq.frames == d.clips[0].frames.frames);
}

TEST_CASE("manifest checks") {
    Manifest m;
    m.dataset = "x";
    m.clips = {{"a", "a", 2, 30.0, 0}, {"a", "b", 2, 30.0, 1}};
    CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("duplicate"), FormatError);
    m.clips[1].id = "b";
    CHECK_NOTHROW(m.validate());
    CHECK(Manifest::from_json(m.to_json()).clips == m.clips);
    CHECK_THROWS_AS(Manifest::from_json("{not json"), FormatError);
}

TEST_CASE("missing and malformed frames are named") {
    testing::TempDir dir("data_errors");
    const auto d = generate_synthetic_dataset(small_spec());
    write_dataset(dir.path(), d.manifest, d.clips);
    const auto clip_dir = dir / d.manifest.clips[1].path;
    const auto victim = clip_dir / frame_filename(3);

    const std::string good = slurp(victim);
    spit(victim, good.substr(0, good.size() - 10));
    CHECK_THROWS_WITH_AS(load_dataset(dir / "manifest.json"),
                         doctest::Contains("raster truncated at byte"), FormatError);
    spit(victim, "P3\n" + good.substr(3));
    CHECK_THROWS_WITH_AS(read_ppm(victim), doctest::Contains(victim.string().c_str()), FormatError);

    fs::remove(victim);
    CHECK_THROWS_WITH_AS(load_dataset(dir / "manifest.json"), doctest::Contains(frame_filename(3).c_str()),
                         FormatError);
}

TEST_CASE("frames of different size inside one clip are rejected") {
    testing::TempDir dir("data_mismatch");
    const auto d = generate_synthetic_dataset(small_spec());
    write_dataset(dir.path(), d.manifest, d.clips);
    write_ppm(dir / d.manifest.clips[0].path / frame_filename(2), Frames(1, 8, 8), 0);
    CHECK_THROWS_AS(load_dataset(dir / "manifest.json"), FormatError);
}

TEST_CASE("checkpoint round trip is bit-exact and idempotent") {
    testing::TempDir dir("ckpt");
    const auto m = model::ModelConfig::tiny();
    distill::Trainer trainer(m, views::ViewConfig::tiny(), distill::DistillConfig{}, 5, 4);
    auto st = trainer.initial_state();
    st.step = 17;
    st.center.assign(m.out_dim, 0.25f);
    st.optimizer.step = 17;
    st.optimizer.m[0][0] = 1.5f;
    st.optimizer.v[1][0] = 2.5e-7f;

    save_checkpoint(dir / "a.ckpt", m, st);
    const auto ck = load_checkpoint(dir / "a.ckpt");
    CHECK(ck.model == m);
    CHECK(ck.state.step == 17);
    CHECK(ck.state.seed == 5);
    CHECK(ck.state.center == st.center);
    CHECK(ck.state.optimizer.m == st.optimizer.m);
    CHECK(ck.state.optimizer.v == st.optimizer.v);
    CHECK(ck.state.optimizer.step == 17);
    for (std::size_t i = 0; i < st.student.size(); ++i) {
        CHECK(ck.state.student.name(i) == st.student.name(i));
        CHECK(std::equal(ck.state.student.tensor(i).values().begin(), ck.state.student.tensor(i).values().end(),
                         st.student.tensor(i).values().begin()));
        CHECK(std::equal(ck.state.teacher.tensor(i).values().begin(), ck.state.teacher.tensor(i).values().end(),
                         st.teacher.tensor(i).values().begin()));
    }
    save_checkpoint(dir / "b.ckpt", ck.model, ck.state);
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
}

TEST_CASE("damaged checkpoints are refused") {
    testing::TempDir dir("ckpt_bad");
    const auto m = model::ModelConfig::tiny();
    distill::Trainer trainer(m, views::ViewConfig::tiny(), distill::DistillConfig{}, 1, 4);
    save_checkpoint(dir / "ok.ckpt", m, trainer.initial_state());
    const std::string bytes = slurp(dir / "ok.ckpt");

    spit(dir / "short.ckpt", bytes.substr(0, bytes.size() - 100));
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "short.ckpt"), doctest::Contains("truncated"), FormatError);

    std::string versioned = bytes;
    const auto at = versioned.find("\"format_version\":1");
    REQUIRE(at != std::string::npos);
    versioned[at + 17] = '9';
    spit(dir / "version.ckpt", versioned);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "version.ckpt"), doctest::Contains("version"), FormatError);

    spit(dir / "junk.ckpt", "hello");
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), FormatError);
}

}  // TEST_SUITE
