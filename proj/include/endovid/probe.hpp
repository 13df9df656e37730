#pragma once

// Linear-probe evaluation of a frozen backbone.
//
// Each clip is reduced to one feature vector (the final-LayerNorm class token
// of a fixed, unaugmented view). A seeded stratified split holds out a test set;
// features are standardised with training statistics and a softmax linear
// classifier is fit with AdamW.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "endovid/data.hpp"
#include "endovid/model.hpp"
#include "endovid/params.hpp"

namespace endovid::probe {

struct ProbeConfig {
    std::size_t frames = 8;  // uniformly sampled frames per clip
    std::size_t epochs = 200;
    double lr = 1e-2;
    double weight_decay = 1e-4;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    std::size_t repeats = 1;          // splits scored, seeds seed .. seed + repeats - 1
    bool unfreeze = false;            // fine-tune the backbone as well
    std::size_t finetune_epochs = 5;  // passes over the training clips when unfrozen
    double finetune_lr = 1e-4;

    void validate() const;
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Per class: shuffle with the seed, send round(fraction * n) to train (at least
/// one sample to each side when the class has two or more).
Split stratified_split(const std::vector<int>& labels, double train_fraction, std::uint64_t seed);

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;  // 1 / std, 1 for constant features

    static Standardizer fit(const std::vector<std::vector<double>>& rows);
    std::vector<double> apply(const std::vector<double>& row) const;
};

struct LinearClassifier {
    std::size_t classes = 0;
    std::size_t dim = 0;
    std::vector<double> weight;  // dim x classes, row-major
    std::vector<double> bias;

    int predict(const std::vector<double>& x) const;
};

/// Full-batch softmax regression with AdamW.
LinearClassifier train_linear_classifier(const std::vector<std::vector<double>>& x,
                                         const std::vector<int>& y, std::size_t classes,
                                         const ProbeConfig& config);

struct ProbeReport {
    std::size_t classes = 0;
    std::size_t train_count = 0;
    std::size_t test_count = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::optional<double> binary_f1;  // positive class 1, two-class tasks only
    std::vector<double> class_f1;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]

    nlohmann::json to_json() const;
};

ProbeReport score(const std::vector<int>& truth, const std::vector<int>& predicted,
                  std::size_t classes);

/// Class-token features of `frames` uniformly spaced frames at the
/// model's full spatial resolution.
std::vector<std::vector<double>> extract_clip_features(const std::vector<data::VideoClip>& clips,
                                                       const ParameterSet<float>& backbone,
                                                       const model::ModelConfig& model,
                                                       std::size_t frames);

struct ProbeSummary {
    std::vector<ProbeReport> splits;  // one per seed
    double mean_accuracy = 0.0;
    double mean_macro_f1 = 0.0;
    std::optional<double> mean_binary_f1;
    nlohmann::json to_json() const;
};

/// Throws ConfigError for unlabelled clips or a single-class dataset.
ProbeReport run_probe(const std::vector<data::VideoClip>& clips, const ParameterSet<float>& backbone,
                      const model::ModelConfig& model, const ProbeConfig& config);

/// run_probe over `config.repeats` seeded splits. A frozen backbone's features
/// are extracted once and shared by every split.
ProbeSummary run_probe_repeated(const std::vector<data::VideoClip>& clips,
                                const ParameterSet<float>& backbone,
                                const model::ModelConfig& model, const ProbeConfig& config);

}  // namespace endovid::probe
