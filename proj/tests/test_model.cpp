#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "endovid/errors.hpp"
#include "endovid/model.hpp"
#include "support.hpp"

using namespace endovid;
using model::ModelConfig;
using TD = ag::Tensor<double>;

namespace {

Frames random_view(std::size_t t, std::size_t h, std::size_t w, std::uint64_t seed) {
    Frames f(t, h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : f.data) v = u(rng);
    return f;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("preset configurations validate") {
    CHECK_NOTHROW(ModelConfig::desk().validate());
    CHECK_NOTHROW(ModelConfig::tiny().validate());
    CHECK_NOTHROW(ModelConfig::full().validate());
    const auto d = ModelConfig::desk();
    CHECK(d.depth == 4);
    CHECK(d.embed_dim == 64);
    CHECK(d.patch_size == 4);
    CHECK(d.out_dim == 256);

    auto bad = ModelConfig::tiny();
    bad.num_heads = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig::tiny();
    bad.max_height = 18;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("token count is T*N + 1") {
    const auto c = ModelConfig::tiny();
    const auto p = model::init_params<double>(c, 1, false);
    const auto g = model::patchify_and_embed(random_view(3, 8, 12, 2), p, c);
    CHECK(g.frames() == 3);
    CHECK(g.patches_per_frame() == 6);
    CHECK(g.grid_height == 2);
    CHECK(g.grid_width == 3);
    CHECK(g.token_count() == 3 * 6 + 1);
    CHECK(g.cls.shape() == ag::Shape{1, c.embed_dim});
}

TEST_CASE("views that do not fit are rejected") {
    const auto c = ModelConfig::tiny();
    const auto p = model::init_params<double>(c, 1, false);
    CHECK_THROWS_AS(model::patchify_and_embed(random_view(2, 10, 8, 0), p, c), ShapeError);
    CHECK_THROWS_AS(model::patchify_and_embed(random_view(5, 8, 8, 0), p, c), ShapeError);
    CHECK_THROWS_AS(model::patchify_and_embed(random_view(1, 20, 20, 0), p, c), ShapeError);
}

TEST_CASE("encoder blocks preserve (T, N+1, D)") {
    const auto c = ModelConfig::tiny();
    const auto p = model::init_params<double>(c, 3, false);
    for (auto [t, s] : {std::pair<std::size_t, std::size_t>{4, 16}, {2, 8}, {1, 12}}) {
        auto g = model::patchify_and_embed(random_view(t, s, s, 4), p, c);
        const auto shape = g.shape();
        for (std::size_t b = 0; b < c.depth; ++b) {
            g = model::encoder_block_forward(g, p, c, b);
            CHECK(g.shape() == shape);
        }
    }
}

TEST_CASE("every attention row sums to one") {
    const auto c = ModelConfig::tiny();
    const auto p = model::init_params<double>(c, 5, false);
    model::AttentionTrace<double> trace;
    model::model_forward(random_view(4, 16, 16, 6), p, c, &trace);
    CHECK(trace.size() == 2 * c.depth);
    for (const auto& a : trace) {
        const std::size_t s = a.dim(-1);
        const auto v = a.values();
        for (std::size_t r = 0; r < v.size() / s; ++r) {
            double sum = 0;
            for (std::size_t j = 0; j < s; ++j) sum += v[r * s + j];
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("interpolation weights align both ends") {
    CHECK(model::interpolation_weights(3, 3) == std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(model::interpolation_weights(3, 2) == std::vector<double>{1, 0, 0.5, 0.5, 0, 1});
    CHECK(model::interpolation_weights(3, 5) ==
          std::vector<double>{1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1});
    // a single entry samples the centre of the table
    CHECK(model::interpolation_weights(1, 4) == std::vector<double>{0, 0.5, 0.5, 0});
    for (auto [t, cap] : {std::pair<std::size_t, std::size_t>{5, 3}, {7, 8}, {2, 9}}) {
        const auto w = model::interpolation_weights(t, cap);
        for (std::size_t r = 0; r < t; ++r)
            CHECK(std::accumulate(w.begin() + std::ptrdiff_t(r * cap),
                                  w.begin() + std::ptrdiff_t((r + 1) * cap), 0.0) ==
                  doctest::Approx(1.0));
    }
}

TEST_CASE("interpolation at native size is the identity") {
    const auto table = TD::from({6, 5}, testing::randn(30, 7));
    const auto same = model::interpolate_temporal(table, 6);
    CHECK(std::equal(same.values().begin(), same.values().end(), table.values().begin()));

    const auto grid = TD::from({12, 5}, testing::randn(60, 8));
    const auto g2 = model::interpolate_spatial(grid, 3, 4, 3, 4);
    CHECK(std::equal(g2.values().begin(), g2.values().end(), grid.values().begin()));

    const auto f = ag::cast<float>(grid);
    const auto f2 = model::interpolate_spatial(f, 3, 4, 3, 4);
    CHECK(std::equal(f2.values().begin(), f2.values().end(), f.values().begin()));
}

TEST_CASE("spatial interpolation separates per axis") {
    // a table that is linear in (y, x) is reproduced exactly at any resolution
    const std::size_t gh = 4, gw = 4;
    std::vector<double> lin(gh * gw);
    for (std::size_t y = 0; y < gh; ++y)
        for (std::size_t x = 0; x < gw; ++x) lin[y * gw + x] = 2.0 * double(y) / 3 - double(x) / 3;
    const auto out = model::interpolate_spatial(TD::from({gh * gw, 1}, lin), gh, gw, 2, 3);
    const std::vector<double> want{0, -0.5, -1, 2, 1.5, 1};
    for (std::size_t i = 0; i < 6; ++i) CHECK(out.values()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("permuting patches together with their encodings leaves logits unchanged") {
    const auto c = ModelConfig::tiny();
    auto p = model::init_params<double>(c, 9, false);
    const auto view = random_view(4, 16, 16, 10);
    const auto before = model::model_forward(view, p, c);

    const std::size_t g = c.grid_height(), P = c.patch_size;
    std::vector<std::size_t> perm(g * g);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(11));

    Frames moved(view.frames, view.height, view.width);
    for (std::size_t j = 0; j < perm.size(); ++j) {
        const std::size_t sy = perm[j] / g, sx = perm[j] % g, dy = j / g, dx = j % g;
        for (std::size_t t = 0; t < view.frames; ++t)
            for (std::size_t ch = 0; ch < 3; ++ch)
                for (std::size_t y = 0; y < P; ++y)
                    for (std::size_t x = 0; x < P; ++x)
                        moved.at(t, ch, dy * P + y, dx * P + x) = view.at(t, ch, sy * P + y, sx * P + x);
    }
    const auto& table = p["pos_embed.spatial"];
    const std::size_t d = c.embed_dim;
    std::vector<double> rows(table.numel());
    for (std::size_t j = 0; j < perm.size(); ++j)
        std::copy_n(table.values().begin() + std::ptrdiff_t(perm[j] * d), d, rows.begin() + std::ptrdiff_t(j * d));
    p["pos_embed.spatial"] = TD::from(table.shape(), rows);

    const auto after = model::model_forward(moved, p, c);
    CHECK_FALSE(std::equal(view.data.begin(), view.data.end(), moved.data.begin()));
    for (std::size_t k = 0; k < c.out_dim; ++k) CHECK(std::abs(after.values()[k] - before.values()[k]) < 1e-5);
}

TEST_CASE("every parameter receives a non-zero gradient") {
    const auto c = ModelConfig::tiny();
    auto p = model::init_params<double>(c, 12, true);
    const auto logits = model::model_forward(random_view(4, 16, 16, 13), p, c);
    const auto w = TD::from(logits.shape(), testing::randn(c.out_dim, 14));
    ag::backward(ag::sum(ag::mul(ag::log_softmax(logits, 0.1), w)));
    for (std::size_t i = 0; i < p.size(); ++i) {
        INFO(p.name(i));
        const auto g = p.tensor(i).grad();
        REQUIRE(g.size() == p.tensor(i).numel());
        CHECK(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; }));
    }
}

TEST_CASE("head output has K entries and features are layer-normalised") {
    const auto c = ModelConfig::tiny();
    const auto p = model::init_params<double>(c, 15, false);
    const auto view = random_view(2, 8, 8, 16);
    CHECK(model::model_forward(view, p, c).shape() == ag::Shape{1, c.out_dim});
    const auto f = model::extract_features(view, p, c);
    CHECK(f.shape() == ag::Shape{1, c.embed_dim});
    // unit gain and zero shift at init: zero mean, unit variance
    double m = 0, n2 = 0;
    for (double v : f.values()) m += v, n2 += v * v;
    CHECK(std::abs(m) < 1e-9);
    CHECK(n2 / double(c.embed_dim) == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("initialisation is a function of the seed") {
    const auto c = ModelConfig::tiny();
    const auto a = model::init_params<float>(c, 21, false);
    const auto b = model::init_params<float>(c, 21, false);
    const auto other = model::init_params<float>(c, 22, false);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.name(i) == b.name(i));
        CHECK(std::equal(a.tensor(i).values().begin(), a.tensor(i).values().end(), b.tensor(i).values().begin()));
        differs = differs || !std::equal(a.tensor(i).values().begin(), a.tensor(i).values().end(),
                                         other.tensor(i).values().begin());
    }
    CHECK(differs);
}

}  // TEST_SUITE
