#pragma once

// Run configuration: one JSON object with flat namespaced keys, e.g.
//
//   { "model.embed_dim": 64, "views.local_views": 4, "distill.lr": 5e-4,
//     "data.manifest": "data/synth/manifest.json", "run.seed": 7 }
//
// Every key has a default (config_keys() lists them with a description).
// Nested objects are accepted and flattened with '.'.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "endovid/distill.hpp"
#include "endovid/model.hpp"
#include "endovid/probe.hpp"
#include "endovid/views.hpp"

namespace endovid::cli {

struct RunConfig {
    model::ModelConfig model;
    views::ViewConfig views;
    distill::DistillConfig distill;
    probe::ProbeConfig probe;

    std::string manifest;                 // data.manifest
    std::optional<std::uint64_t> seed;    // run.seed; unset falls back to ENDOVID_SEED, then 0
    std::string out_dir = "runs/default"; // run.out_dir
    std::int64_t checkpoint_every = 0;    // run.checkpoint_every; 0 keeps only the final one

    /// Throws ConfigError naming the offending key.
    void validate() const;

    /// The seed after applying the fallback chain.
    std::uint64_t resolved_seed() const;

    /// Every key with its current value; feeding it back reproduces this config.
    nlohmann::json to_json() const;
};

struct KeyInfo {
    std::string key;
    std::string description;
};

/// All recognised keys in documentation order.
std::vector<KeyInfo> config_keys();

/// Apply one key. `value` is typed JSON; a mismatch raises ConfigError.
void set_key(RunConfig& config, const std::string& key, const nlohmann::json& value);

/// Apply one `key=value` override from the command line. The value is parsed as
/// JSON when possible ("4", "true", "[2,4]"), otherwise as a comma list for list
/// keys and as a plain string for the rest.
void set_from_text(RunConfig& config, const std::string& key, const std::string& text);

/// Apply every key of a (possibly nested) JSON object onto `config`.
void apply_json(RunConfig& config, const nlohmann::json& object);

/// Defaults overlaid with the file. Unknown keys and wrong types raise ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace endovid::cli
