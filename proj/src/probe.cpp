#include "endovid/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "endovid/errors.hpp"
#include "endovid/optim.hpp"
#include "endovid/views.hpp"

namespace endovid::probe {

using ag::Tensor;

void ProbeConfig::validate() const {
    if (frames == 0) throw ConfigError("probe.frames must be positive");
    if (epochs == 0) throw ConfigError("probe.epochs must be positive");
    if (!(lr > 0.0)) throw ConfigError("probe.lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("probe.weight_decay must be non-negative");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("probe.train_fraction must lie in (0, 1)");
    if (!(finetune_lr > 0.0)) throw ConfigError("probe.finetune_lr must be positive");
    if (repeats == 0) throw ConfigError("probe.repeats must be positive");
}

Split stratified_split(const std::vector<int>& labels, double train_fraction, std::uint64_t seed) {
    std::set<int> classes(labels.begin(), labels.end());
    std::mt19937_64 rng(seed);
    Split split;
    for (int c : classes) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) members.push_back(i);
        std::shuffle(members.begin(), members.end(), rng);
        std::size_t n_train = std::size_t(std::lround(train_fraction * double(members.size())));
        if (members.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
        else n_train = members.size();
        split.train.insert(split.train.end(), members.begin(), members.begin() + std::ptrdiff_t(n_train));
        split.test.insert(split.test.end(), members.begin() + std::ptrdiff_t(n_train), members.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

Standardizer Standardizer::fit(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ContractError("cannot standardise an empty feature set");
    const std::size_t d = rows.front().size();
    Standardizer s;
    s.mean.assign(d, 0.0);
    s.scale.assign(d, 1.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
    for (auto& m : s.mean) m /= double(rows.size());
    for (std::size_t j = 0; j < d; ++j) {
        double var = 0.0;
        for (const auto& r : rows) var += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
        var /= double(rows.size());
        s.scale[j] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return s;
}

std::vector<double> Standardizer::apply(const std::vector<double>& row) const {
    if (row.size() != mean.size()) throw ShapeError("feature width differs from the fitted width");
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) * scale[j];
    return out;
}

int LinearClassifier::predict(const std::vector<double>& x) const {
    if (x.size() != dim) throw ShapeError("feature width differs from the classifier width");
    int best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
        double s = bias[c];
        for (std::size_t j = 0; j < dim; ++j) s += x[j] * weight[j * classes + c];
        if (s > best_score) {
            best_score = s;
            best = int(c);
        }
    }
    return best;
}

LinearClassifier train_linear_classifier(const std::vector<std::vector<double>>& x,
                                         const std::vector<int>& y, std::size_t classes,
                                         const ProbeConfig& config) {
    if (x.empty() || x.size() != y.size()) throw ShapeError("features and labels differ in count");
    const std::size_t n = x.size(), d = x.front().size();
    std::vector<double> flat, onehot(n * classes, 0.0);
    flat.reserve(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        flat.insert(flat.end(), x[i].begin(), x[i].end());
        onehot[i * classes + std::size_t(y[i])] = 1.0;
    }
    const auto features = Tensor<double>::from({n, d}, std::move(flat));
    const auto targets = Tensor<double>::from({n, classes}, std::move(onehot));

    ParameterSet<double> ps;
    ps.add("weight", Tensor<double>::zeros({d, classes}, true));
    ps.add("bias", Tensor<double>::zeros({classes}, true));
    optim::AdamWConfig oc;
    oc.lr = config.lr;
    oc.weight_decay = config.weight_decay;
    auto state = optim::OptimizerState<double>::for_params(ps, oc);
    for (std::size_t e = 0; e < config.epochs; ++e) {
        ps.zero_grad();
        auto logp = ag::log_softmax(ag::matmul(features, ps["weight"]) + ps["bias"]);
        auto loss = ag::scale(ag::sum(logp * targets), -1.0 / double(n));
        ag::backward(loss);
        optim::adamw_step(state, ps, config.lr);
    }
    LinearClassifier clf;
    clf.classes = classes;
    clf.dim = d;
    clf.weight.assign(ps["weight"].values().begin(), ps["weight"].values().end());
    clf.bias.assign(ps["bias"].values().begin(), ps["bias"].values().end());
    return clf;
}

ProbeReport score(const std::vector<int>& truth, const std::vector<int>& predicted,
                  std::size_t classes) {
    if (truth.size() != predicted.size()) throw ShapeError("truth and predictions differ in count");
    ProbeReport r;
    r.classes = classes;
    r.test_count = truth.size();
    r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        r.confusion[std::size_t(truth[i])][std::size_t(predicted[i])]++;
        correct += truth[i] == predicted[i];
    }
    r.accuracy = truth.empty() ? 0.0 : double(correct) / double(truth.size());
    r.class_f1.assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t tp = r.confusion[c][c], fp = 0, fn = 0;
        for (std::size_t k = 0; k < classes; ++k) {
            if (k == c) continue;
            fp += r.confusion[k][c];
            fn += r.confusion[c][k];
        }
        const double denom = double(2 * tp + fp + fn);
        r.class_f1[c] = denom > 0.0 ? 2.0 * double(tp) / denom : 0.0;
    }
    r.macro_f1 = std::accumulate(r.class_f1.begin(), r.class_f1.end(), 0.0) / double(classes);
    if (classes == 2) r.binary_f1 = r.class_f1[1];
    return r;
}

nlohmann::json ProbeReport::to_json() const {
    nlohmann::json j{{"classes", classes},       {"train_count", train_count},
                     {"test_count", test_count}, {"accuracy", accuracy},
                     {"macro_f1", macro_f1},     {"class_f1", class_f1},
                     {"confusion", confusion}};
    j["binary_f1"] = binary_f1 ? nlohmann::json(*binary_f1) : nlohmann::json(nullptr);
    return j;
}

std::vector<std::vector<double>> extract_clip_features(const std::vector<data::VideoClip>& clips,
                                                       const ParameterSet<float>& backbone,
                                                       const model::ModelConfig& model,
                                                       std::size_t frames) {
    std::vector<std::vector<double>> out;
    out.reserve(clips.size());
    for (const auto& clip : clips) {
        const auto view = views::evaluation_view(clip.frames, frames, model.max_height);
        const auto f = model::extract_features(view, backbone, model);
        out.emplace_back(f.values().begin(), f.values().end());
    }
    return out;
}

namespace {

struct Labelled {
    std::vector<int> labels;
    std::size_t classes = 0;
};

Labelled collect_labels(const std::vector<data::VideoClip>& clips) {
    Labelled l;
    std::set<int> distinct;
    for (const auto& c : clips) {
        if (!c.label) throw ConfigError("clip '" + c.id + "' has no label; the probe needs labels");
        if (*c.label < 0) throw ConfigError("clip '" + c.id + "' has a negative label");
        l.labels.push_back(*c.label);
        distinct.insert(*c.label);
    }
    if (distinct.size() < 2) throw ConfigError("probe refused: dataset has a single class");
    l.classes = std::size_t(*distinct.rbegin()) + 1;
    return l;
}

template <typename V>
std::vector<V> pick(const std::vector<V>& v, const std::vector<std::size_t>& idx) {
    std::vector<V> out;
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

// Backbone and linear head trained together on raw (unstandardised) features.
ProbeReport run_finetune(const std::vector<data::VideoClip>& clips, const Labelled& l,
                         const Split& split, const ParameterSet<float>& backbone,
                         const model::ModelConfig& model, const ProbeConfig& config) {
    auto ps = backbone.clone<float>(true);
    ParameterSet<float> head;
    head.add("weight", Tensor<float>::zeros({model.embed_dim, l.classes}, true));
    head.add("bias", Tensor<float>::zeros({l.classes}, true));
    optim::AdamWConfig oc;
    oc.weight_decay = config.weight_decay;
    oc.lr = config.finetune_lr;
    auto s_bb = optim::OptimizerState<float>::for_params(ps, oc);
    oc.lr = config.lr;
    auto s_head = optim::OptimizerState<float>::for_params(head, oc);

    std::vector<Frames> views_cache;
    for (const auto& c : clips) views_cache.push_back(views::evaluation_view(c.frames, config.frames, model.max_height));

    std::mt19937_64 rng(config.seed ^ 0xf17eULL);
    auto order = split.train;
    for (std::size_t e = 0; e < config.finetune_epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (auto i : order) {
            ps.zero_grad();
            head.zero_grad();
            auto f = model::extract_features(views_cache[i], ps, model);
            auto logp = ag::log_softmax(ag::matmul(f, head["weight"]) + head["bias"]);
            auto loss = ag::scale(ag::slice(logp, 1, std::size_t(l.labels[i]), std::size_t(l.labels[i]) + 1), -1.0f);
            ag::backward(ag::sum(loss));
            optim::adamw_step(s_bb, ps, config.finetune_lr);
            optim::adamw_step(s_head, head, config.lr);
        }
    }
    std::vector<int> truth, pred;
    for (auto i : split.test) {
        auto f = model::extract_features(views_cache[i], ps.clone<float>(false), model);
        auto logits = ag::matmul(f, head["weight"]) + head["bias"];
        const auto v = logits.values();
        truth.push_back(l.labels[i]);
        pred.push_back(int(std::max_element(v.begin(), v.end()) - v.begin()));
    }
    auto r = score(truth, pred, l.classes);
    r.train_count = split.train.size();
    return r;
}

ProbeReport probe_features(const std::vector<std::vector<double>>& features, const Labelled& labelled,
                           const Split& split, const ProbeConfig& config) {
    const auto train_x = pick(features, split.train);
    const auto std_ = Standardizer::fit(train_x);
    std::vector<std::vector<double>> xs;
    for (const auto& r : train_x) xs.push_back(std_.apply(r));
    const auto clf = train_linear_classifier(xs, pick(labelled.labels, split.train), labelled.classes, config);

    std::vector<int> truth, pred;
    for (auto i : split.test) {
        truth.push_back(labelled.labels[i]);
        pred.push_back(clf.predict(std_.apply(features[i])));
    }
    auto r = score(truth, pred, labelled.classes);
    r.train_count = split.train.size();
    return r;
}

}  // namespace

ProbeReport run_probe(const std::vector<data::VideoClip>& clips, const ParameterSet<float>& backbone,
                      const model::ModelConfig& model, const ProbeConfig& config) {
    config.validate();
    if (config.frames > model.max_frames)
        throw ConfigError("probe.frames exceeds model.max_frames (" + std::to_string(model.max_frames) + ")");
    const auto labelled = collect_labels(clips);
    const auto split = stratified_split(labelled.labels, config.train_fraction, config.seed);
    if (config.unfreeze) return run_finetune(clips, labelled, split, backbone, model, config);

    return probe_features(extract_clip_features(clips, backbone, model, config.frames), labelled,
                          split, config);
}

ProbeSummary run_probe_repeated(const std::vector<data::VideoClip>& clips,
                                const ParameterSet<float>& backbone,
                                const model::ModelConfig& model, const ProbeConfig& config) {
    config.validate();
    if (config.frames > model.max_frames)
        throw ConfigError("probe.frames exceeds model.max_frames (" + std::to_string(model.max_frames) + ")");
    const auto labelled = collect_labels(clips);
    std::vector<std::vector<double>> features;
    if (!config.unfreeze) features = extract_clip_features(clips, backbone, model, config.frames);

    ProbeSummary s;
    double binary = 0.0;
    for (std::size_t r = 0; r < config.repeats; ++r) {
        auto one = config;
        one.seed = config.seed + r;
        const auto split = stratified_split(labelled.labels, one.train_fraction, one.seed);
        s.splits.push_back(config.unfreeze ? run_finetune(clips, labelled, split, backbone, model, one)
                                           : probe_features(features, labelled, split, one));
        s.mean_accuracy += s.splits.back().accuracy;
        s.mean_macro_f1 += s.splits.back().macro_f1;
        if (s.splits.back().binary_f1) binary += *s.splits.back().binary_f1;
    }
    const double n = double(config.repeats);
    s.mean_accuracy /= n;
    s.mean_macro_f1 /= n;
    if (s.splits.front().binary_f1) s.mean_binary_f1 = binary / n;
    return s;
}

nlohmann::json ProbeSummary::to_json() const {
    nlohmann::json j{{"mean_accuracy", mean_accuracy},
                     {"mean_macro_f1", mean_macro_f1},
                     {"mean_binary_f1", mean_binary_f1 ? nlohmann::json(*mean_binary_f1) : nlohmann::json(nullptr)},
                     {"splits", nlohmann::json::array()}};
    for (const auto& r : splits) j["splits"].push_back(r.to_json());
    return j;
}

}  // namespace endovid::probe
