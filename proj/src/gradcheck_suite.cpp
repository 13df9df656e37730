#include "endovid/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "endovid/data.hpp"
#include "endovid/distill.hpp"
#include "endovid/errors.hpp"
#include "endovid/model.hpp"
#include "endovid/views.hpp"

namespace endovid {

using ag::Tensor;
using T = double;

namespace {

Tensor<T> random_tensor(std::mt19937_64& rng, ag::Shape shape, bool rg, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<T> v(ag::numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor<T>::from(std::move(shape), std::move(v), rg);
}

// A fixed random weighting keeps every output coordinate in play.
Tensor<T> weigh(const Tensor<T>& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return ag::sum(ag::mul(y, random_tensor(rng, y.shape(), false)));
}

struct Item {
    std::string name;
    std::function<ParameterSet<T>()> params;
    LossFn loss;
};

struct TinySetup {
    model::ModelConfig model = model::ModelConfig::tiny();
    views::ViewConfig views = views::ViewConfig::tiny();
    distill::DistillConfig distill;
    views::ViewSet view_set;
    ParameterSet<T> teacher;
    std::vector<T> center;

    TinySetup() {
        data::SyntheticSpec spec;
        spec.count = 2;
        spec.size = model.max_height;
        spec.frames = 8;
        spec.square = 4;
        spec.seed = 3;
        const auto clip = data::generate_synthetic_dataset(spec).clips.front();
        std::mt19937_64 rng(views::stream_seed(7, clip.id, 0));
        view_set = views::sample_views(clip.frames, views,
                                       distill::sampled_global_count(views, distill), rng);
        teacher = model::init_params<T>(model, 11, false);
        center.assign(model.out_dim, 0.0);
        std::mt19937_64 crng(5);
        std::normal_distribution<double> d(0.0, 0.01);
        for (auto& c : center) c = d(crng);
    }
};

const TinySetup& tiny() {
    static const TinySetup s;
    return s;
}

std::vector<Item> items() {
    std::vector<Item> out;
    auto leaf = [](std::uint64_t seed, std::vector<std::pair<std::string, ag::Shape>> shapes) {
        return [seed, shapes] {
            std::mt19937_64 rng(seed);
            ParameterSet<T> ps;
            for (const auto& [n, s] : shapes) ps.add(n, random_tensor(rng, s, true));
            return ps;
        };
    };

    out.push_back({"matmul", leaf(1, {{"a", {3, 4}}, {"b", {4, 5}}}),
                   [](ParameterSet<T>& p) { return weigh(ag::matmul(p["a"], p["b"]), 101); }});
    out.push_back({"batched_matmul", leaf(2, {{"a", {2, 3, 4}}, {"b", {2, 4, 3}}, {"w", {4, 2}}}),
                   [](ParameterSet<T>& p) {
                       return ag::add(weigh(ag::matmul(p["a"], p["b"]), 102),
                                      weigh(ag::matmul(p["a"], p["w"]), 103));
                   }});
    out.push_back({"elementwise_broadcast", leaf(3, {{"a", {2, 3, 4}}, {"b", {4}}, {"c", {3, 1}}}),
                   [](ParameterSet<T>& p) {
                       auto y = ag::mul(ag::add(p["a"], p["b"]), ag::sub(p["a"], p["c"]));
                       return weigh(ag::scale(y, 0.5), 104);
                   }});
    out.push_back({"softmax", leaf(4, {{"x", {3, 6}}}),
                   [](ParameterSet<T>& p) { return weigh(ag::softmax(p["x"], 0.7), 105); }});
    out.push_back({"log_softmax", leaf(5, {{"x", {3, 6}}}),
                   [](ParameterSet<T>& p) { return weigh(ag::log_softmax(p["x"], 0.3), 106); }});
    out.push_back({"layer_norm", leaf(6, {{"x", {4, 8}}, {"g", {8}}, {"b", {8}}}),
                   [](ParameterSet<T>& p) { return weigh(ag::layer_norm(p["x"], p["g"], p["b"], 1e-6), 107); }});
    out.push_back({"gelu", leaf(7, {{"x", {3, 5}}}),
                   [](ParameterSet<T>& p) { return weigh(ag::gelu(p["x"]), 108); }});
    out.push_back({"l2_normalize", leaf(8, {{"x", {3, 5}}}),
                   [](ParameterSet<T>& p) { return weigh(ag::l2_normalize(p["x"]), 109); }});
    out.push_back({"shape_ops", leaf(9, {{"x", {2, 3, 4}}, {"y", {2, 1, 4}}}),
                   [](ParameterSet<T>& p) {
                       auto z = ag::concat<T>({p["x"], p["y"]}, 1);          // [2,4,4]
                       z = ag::permute(z, {2, 0, 1});                         // [4,2,4]
                       z = ag::slice(z, 0, 1, 3);                             // [2,2,4]
                       z = ag::reshape(z, {4, 4});
                       return ag::add(weigh(z, 110), weigh(ag::mean(z, 0), 111));
                   }});
    out.push_back({"positional_interpolation", leaf(10, {{"temporal", {4, 6}}, {"spatial", {16, 6}}}),
                   [](ParameterSet<T>& p) {
                       return ag::add(weigh(model::interpolate_temporal(p["temporal"], 3), 112),
                                      weigh(model::interpolate_spatial(p["spatial"], 4, 4, 2, 3), 113));
                   }});

    const auto tiny_params = [] { return model::init_params<T>(tiny().model, 21, true); };
    out.push_back({"encoder_block", tiny_params, [](ParameterSet<T>& p) {
                       const auto& s = tiny();
                       auto grid = model::patchify_and_embed(s.view_set.globals.front().frames, p, s.model);
                       auto o = model::encoder_block_forward(grid, p, s.model, 0);
                       return ag::add(weigh(o.patches, 114), weigh(o.cls, 115));
                   }});
    out.push_back({"projection_head", tiny_params, [](ParameterSet<T>& p) {
                       const auto& s = tiny();
                       std::mt19937_64 rng(116);
                       auto cls = random_tensor(rng, {1, s.model.embed_dim}, false);
                       return weigh(model::projection_head_forward(cls, p, s.model), 117);
                   }});

    auto teacher_targets = [](std::size_t g) {
        const auto& s = tiny();
        std::mt19937_64 rng(118);
        std::vector<std::vector<T>> out;
        for (std::size_t i = 0; i < g; ++i) {
            auto f = random_tensor(rng, {1, s.model.out_dim}, false, 0.05);
            out.push_back(distill::teacher_distribution<T>(f.values(), s.center, s.distill.teacher_temp));
        }
        return out;
    };
    out.push_back({"cross_view_loss", leaf(12, {{"l0", {1, 16}}, {"l1", {1, 16}}, {"l2", {1, 16}}}),
                   [teacher_targets](ParameterSet<T>& p) {
                       std::vector<Tensor<T>> locals;
                       for (const char* n : {"l0", "l1", "l2"})
                           locals.push_back(distill::student_log_distribution(p[n], 0.07));
                       return distill::cross_view_loss(teacher_targets(2), locals).value;
                   }});
    out.push_back({"dynamic_motion_loss", leaf(13, {{"g0", {1, 16}}, {"g1", {1, 16}}, {"g2", {1, 16}}}),
                   [teacher_targets](ParameterSet<T>& p) {
                       std::vector<Tensor<T>> globals;
                       for (const char* n : {"g0", "g1", "g2"})
                           globals.push_back(distill::student_log_distribution(p[n], 0.07));
                       return distill::dynamic_motion_loss(teacher_targets(3), globals).value;
                   }});
    out.push_back({"total_loss", tiny_params, [](ParameterSet<T>& p) {
                       const auto& s = tiny();
                       return distill::clip_loss<T>(s.view_set, p, s.teacher, s.center, s.model,
                                                    s.views, s.distill)
                           .total;
                   }});
    return out;
}

}  // namespace

Tensor<T> faulty_cube(const Tensor<T>& x) {
    std::vector<T> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.values()[i] * x.values()[i] * x.values()[i];
    return ag::make_op_result<T>(x.shape(), std::move(y), {&x}, [](ag::Node<T>& self) {
        auto& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 2.0 * in.value[i] * in.value[i];
    });
}

std::vector<std::string> gradcheck_item_names() {
    std::vector<std::string> names;
    for (const auto& it : items()) names.push_back(it.name);
    names.push_back("faulty_op");
    return names;
}

std::vector<GradCheckItem> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
    auto list = items();
    if (options.inject_fault) {
        list.push_back({"faulty_op",
                        [] {
                            std::mt19937_64 rng(14);
                            ParameterSet<T> ps;
                            ps.add("x", random_tensor(rng, {2, 3}, true));
                            return ps;
                        },
                        [](ParameterSet<T>& p) { return weigh(faulty_cube(p["x"]), 119); }});
    }
    std::vector<GradCheckItem> results;
    for (const auto& it : list) {
        if (!options.only.empty() &&
            std::find(options.only.begin(), options.only.end(), it.name) == options.only.end())
            continue;
        auto params = it.params();
        GradCheckItem r;
        r.name = it.name;
        r.report = grad_check(it.loss, params, options.check);
        r.passed = r.report.finite && r.report.max_rel_error < options.threshold;
        results.push_back(std::move(r));
    }
    for (const auto& name : options.only) {
        if (std::none_of(results.begin(), results.end(), [&](const auto& r) { return r.name == name; }))
            throw ConfigError("unknown gradient check item '" + name + "'");
    }
    return results;
}

}  // namespace endovid
