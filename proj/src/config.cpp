#include "endovid/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "endovid/errors.hpp"

namespace endovid::cli {

using nlohmann::json;

namespace {

enum class Kind { count, integer, real, flag, text, counts, local_mode, seed };

struct Entry {
    std::string key;
    Kind kind;
    std::string description;
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

[[noreturn]] void bad_type(const std::string& key, const char* expected, const json& v) {
    throw ConfigError(key + ": expected " + expected + ", got " + v.dump());
}

std::size_t as_count(const std::string& key, const json& v) {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return std::size_t(v.get<std::int64_t>());
    if (v.is_number_float() && v.get<double>() >= 0 && v.get<double>() == double(std::size_t(v.get<double>())))
        return std::size_t(v.get<double>());
    bad_type(key, "a non-negative integer", v);
}

std::int64_t as_integer(const std::string& key, const json& v) {
    if (v.is_number_integer()) return v.get<std::int64_t>();
    bad_type(key, "an integer", v);
}

double as_real(const std::string& key, const json& v) {
    if (v.is_number()) return v.get<double>();
    bad_type(key, "a number", v);
}

// Field accessors share one table so reading, writing and documenting stay in sync.
template <typename F>
Entry count_key(std::string key, std::string doc, F field) {
    return {key, Kind::count, std::move(doc),
            [field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); },
            [field, key](RunConfig& c, const json& v) { field(c) = as_count(key, v); }};
}
template <typename F>
Entry int_key(std::string key, std::string doc, F field) {
    return {key, Kind::integer, std::move(doc),
            [field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); },
            [field, key](RunConfig& c, const json& v) { field(c) = as_integer(key, v); }};
}
template <typename F>
Entry real_key(std::string key, std::string doc, F field) {
    return {key, Kind::real, std::move(doc),
            [field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); },
            [field, key](RunConfig& c, const json& v) { field(c) = as_real(key, v); }};
}
template <typename F>
Entry flag_key(std::string key, std::string doc, F field) {
    return {key, Kind::flag, std::move(doc),
            [field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); },
            [field, key](RunConfig& c, const json& v) {
                if (!v.is_boolean()) bad_type(key, "true or false", v);
                field(c) = v.get<bool>();
            }};
}
template <typename F>
Entry text_key(std::string key, std::string doc, F field) {
    return {key, Kind::text, std::move(doc),
            [field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); },
            [field, key](RunConfig& c, const json& v) {
                if (!v.is_string()) bad_type(key, "a string", v);
                field(c) = v.get<std::string>();
            }};
}
template <typename F>
Entry counts_key(std::string key, std::string doc, F field) {
    return {key, Kind::counts, std::move(doc),
            [field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); },
            [field, key](RunConfig& c, const json& v) {
                if (!v.is_array()) bad_type(key, "a list of non-negative integers", v);
                std::vector<std::size_t> out;
                for (const auto& e : v) out.push_back(as_count(key, e));
                field(c) = std::move(out);
            }};
}

const std::vector<Entry>& table() {
    static const std::vector<Entry> entries = [] {
        std::vector<Entry> t;
        // model
        t.push_back(count_key("model.patch_size", "patch side P in pixels", [](RunConfig& c) -> auto& { return c.model.patch_size; }));
        t.push_back(count_key("model.embed_dim", "token width D", [](RunConfig& c) -> auto& { return c.model.embed_dim; }));
        t.push_back(count_key("model.depth", "number of encoder blocks", [](RunConfig& c) -> auto& { return c.model.depth; }));
        t.push_back(count_key("model.num_heads", "attention heads per block", [](RunConfig& c) -> auto& { return c.model.num_heads; }));
        t.push_back(count_key("model.max_frames", "temporal positional table capacity", [](RunConfig& c) -> auto& { return c.model.max_frames; }));
        t.push_back(count_key("model.max_height", "spatial table capacity (pixels)", [](RunConfig& c) -> auto& { return c.model.max_height; }));
        t.push_back(count_key("model.max_width", "spatial table capacity (pixels)", [](RunConfig& c) -> auto& { return c.model.max_width; }));
        t.push_back(count_key("model.mlp_ratio", "MLP hidden width / D", [](RunConfig& c) -> auto& { return c.model.mlp_ratio; }));
        t.push_back(count_key("model.head_hidden", "projection head hidden width", [](RunConfig& c) -> auto& { return c.model.head_hidden; }));
        t.push_back(count_key("model.head_bottleneck", "projection head bottleneck width", [](RunConfig& c) -> auto& { return c.model.head_bottleneck; }));
        t.push_back(count_key("model.out_dim", "head output dimension K", [](RunConfig& c) -> auto& { return c.model.out_dim; }));
        t.push_back(real_key("model.init_std", "truncated normal init std", [](RunConfig& c) -> auto& { return c.model.init_std; }));
        t.push_back(real_key("model.head_init_std", "init std of the last projection layer", [](RunConfig& c) -> auto& { return c.model.head_init_std; }));
        t.push_back(real_key("model.ln_eps", "LayerNorm epsilon", [](RunConfig& c) -> auto& { return c.model.ln_eps; }));
        t.push_back(real_key("model.pixel_mean", "input normalisation mean", [](RunConfig& c) -> auto& { return c.model.pixel_mean; }));
        t.push_back(real_key("model.pixel_std", "input normalisation std", [](RunConfig& c) -> auto& { return c.model.pixel_std; }));
        // views
        t.push_back(count_key("views.global_views", "G, global views per clip", [](RunConfig& c) -> auto& { return c.views.global_views; }));
        t.push_back(count_key("views.local_views", "L, local views per clip", [](RunConfig& c) -> auto& { return c.views.local_views; }));
        t.push_back(count_key("views.global_size", "global view side (pixels)", [](RunConfig& c) -> auto& { return c.views.global_size; }));
        t.push_back(count_key("views.local_size", "local view side (pixels)", [](RunConfig& c) -> auto& { return c.views.local_size; }));
        t.push_back(counts_key("views.global_frames", "T_g choices", [](RunConfig& c) -> auto& { return c.views.global_frames; }));
        t.push_back(counts_key("views.local_frames", "T_l choices", [](RunConfig& c) -> auto& { return c.views.local_frames; }));
        t.push_back(real_key("views.global_scale_min", "global crop area fraction, low", [](RunConfig& c) -> auto& { return c.views.global_scale_min; }));
        t.push_back(real_key("views.global_scale_max", "global crop area fraction, high", [](RunConfig& c) -> auto& { return c.views.global_scale_max; }));
        t.push_back(real_key("views.local_scale_min", "local crop area fraction, low", [](RunConfig& c) -> auto& { return c.views.local_scale_min; }));
        t.push_back(real_key("views.local_scale_max", "local crop area fraction, high", [](RunConfig& c) -> auto& { return c.views.local_scale_max; }));
        t.push_back({"views.local_mode", Kind::local_mode, "both | spatial | temporal",
                     [](const RunConfig& c) { return json(views::to_string(c.views.local_mode)); },
                     [](RunConfig& c, const json& v) {
                         if (!v.is_string()) bad_type("views.local_mode", "a string", v);
                         c.views.local_mode = views::parse_local_mode(v.get<std::string>());
                     }});
        t.push_back(flag_key("views.augment.enabled", "apply augmentations", [](RunConfig& c) -> auto& { return c.views.augment.enabled; }));
        t.push_back(real_key("views.augment.flip_prob", "horizontal flip probability", [](RunConfig& c) -> auto& { return c.views.augment.flip_prob; }));
        t.push_back(real_key("views.augment.jitter_prob", "colour jitter probability", [](RunConfig& c) -> auto& { return c.views.augment.jitter_prob; }));
        t.push_back(real_key("views.augment.brightness", "brightness jitter strength", [](RunConfig& c) -> auto& { return c.views.augment.brightness; }));
        t.push_back(real_key("views.augment.contrast", "contrast jitter strength", [](RunConfig& c) -> auto& { return c.views.augment.contrast; }));
        t.push_back(real_key("views.augment.saturation", "saturation jitter strength", [](RunConfig& c) -> auto& { return c.views.augment.saturation; }));
        t.push_back(real_key("views.augment.hue", "hue jitter strength (turns)", [](RunConfig& c) -> auto& { return c.views.augment.hue; }));
        t.push_back(real_key("views.augment.blur_sigma_min", "blur sigma, low", [](RunConfig& c) -> auto& { return c.views.augment.blur_sigma_min; }));
        t.push_back(real_key("views.augment.blur_sigma_max", "blur sigma, high", [](RunConfig& c) -> auto& { return c.views.augment.blur_sigma_max; }));
        t.push_back(real_key("views.augment.blur_prob_first", "blur probability, first global view", [](RunConfig& c) -> auto& { return c.views.augment.blur_prob_first; }));
        t.push_back(real_key("views.augment.blur_prob_other", "blur probability, other views", [](RunConfig& c) -> auto& { return c.views.augment.blur_prob_other; }));
        t.push_back(real_key("views.augment.solarize_threshold", "solarize threshold", [](RunConfig& c) -> auto& { return c.views.augment.solarize_threshold; }));
        t.push_back(real_key("views.augment.solarize_prob", "solarize probability, second global view", [](RunConfig& c) -> auto& { return c.views.augment.solarize_prob; }));
        // distill
        t.push_back(real_key("distill.teacher_temp", "teacher temperature", [](RunConfig& c) -> auto& { return c.distill.teacher_temp; }));
        t.push_back(real_key("distill.student_temp", "student temperature", [](RunConfig& c) -> auto& { return c.distill.student_temp; }));
        t.push_back(real_key("distill.ema_momentum", "teacher EMA momentum", [](RunConfig& c) -> auto& { return c.distill.ema_momentum; }));
        t.push_back(real_key("distill.center_momentum", "centre EMA momentum", [](RunConfig& c) -> auto& { return c.distill.center_momentum; }));
        t.push_back(flag_key("distill.centering", "subtract the centre from teacher logits", [](RunConfig& c) -> auto& { return c.distill.centering; }));
        t.push_back(flag_key("distill.sum_pairs", "sum loss pairs instead of averaging", [](RunConfig& c) -> auto& { return c.distill.sum_pairs; }));
        t.push_back(flag_key("distill.disable_cv", "drop cross-view matching", [](RunConfig& c) -> auto& { return c.distill.disable_cv; }));
        t.push_back(flag_key("distill.disable_dm", "drop dynamic motion matching", [](RunConfig& c) -> auto& { return c.distill.disable_dm; }));
        t.push_back(count_key("distill.epochs", "passes over the dataset", [](RunConfig& c) -> auto& { return c.distill.epochs; }));
        t.push_back(count_key("distill.batch_size", "clips per optimizer step", [](RunConfig& c) -> auto& { return c.distill.batch_size; }));
        t.push_back(int_key("distill.max_steps", "step budget; 0 uses epochs", [](RunConfig& c) -> auto& { return c.distill.max_steps; }));
        t.push_back(real_key("distill.lr", "peak learning rate", [](RunConfig& c) -> auto& { return c.distill.lr; }));
        t.push_back(real_key("distill.final_lr", "learning rate at the last step", [](RunConfig& c) -> auto& { return c.distill.final_lr; }));
        t.push_back(real_key("distill.weight_decay", "AdamW decoupled weight decay", [](RunConfig& c) -> auto& { return c.distill.weight_decay; }));
        t.push_back(real_key("distill.warmup_fraction", "share of steps in linear warmup", [](RunConfig& c) -> auto& { return c.distill.warmup_fraction; }));
        // data / run
        t.push_back(text_key("data.manifest", "dataset manifest path", [](RunConfig& c) -> auto& { return c.manifest; }));
        t.push_back({"run.seed", Kind::seed, "master seed; null falls back to ENDOVID_SEED, then 0",
                     [](const RunConfig& c) { return c.seed ? json(*c.seed) : json(nullptr); },
                     [](RunConfig& c, const json& v) {
                         if (v.is_null()) c.seed.reset();
                         else c.seed = std::uint64_t(as_count("run.seed", v));
                     }});
        t.push_back(text_key("run.out_dir", "output directory", [](RunConfig& c) -> auto& { return c.out_dir; }));
        t.push_back(int_key("run.checkpoint_every", "steps between checkpoints; 0 = final only", [](RunConfig& c) -> auto& { return c.checkpoint_every; }));
        // probe
        t.push_back(count_key("probe.frames", "frames per clip for features", [](RunConfig& c) -> auto& { return c.probe.frames; }));
        t.push_back(count_key("probe.epochs", "classifier training epochs", [](RunConfig& c) -> auto& { return c.probe.epochs; }));
        t.push_back(real_key("probe.lr", "classifier learning rate", [](RunConfig& c) -> auto& { return c.probe.lr; }));
        t.push_back(real_key("probe.weight_decay", "classifier weight decay", [](RunConfig& c) -> auto& { return c.probe.weight_decay; }));
        t.push_back(real_key("probe.train_fraction", "share of each class used for training", [](RunConfig& c) -> auto& { return c.probe.train_fraction; }));
        t.push_back({"probe.seed", Kind::count, "split and shuffle seed",
                     [](const RunConfig& c) { return json(c.probe.seed); },
                     [](RunConfig& c, const json& v) { c.probe.seed = as_count("probe.seed", v); }});
        t.push_back({"probe.repeats", Kind::count, "seeded splits to average (seed, seed+1, ...)",
                     [](const RunConfig& c) { return json(c.probe.repeats); },
                     [](RunConfig& c, const json& v) { c.probe.repeats = as_count("probe.repeats", v); }});
        t.push_back(flag_key("probe.unfreeze", "fine-tune the backbone too", [](RunConfig& c) -> auto& { return c.probe.unfreeze; }));
        t.push_back(count_key("probe.finetune_epochs", "passes when unfrozen", [](RunConfig& c) -> auto& { return c.probe.finetune_epochs; }));
        t.push_back(real_key("probe.finetune_lr", "backbone learning rate when unfrozen", [](RunConfig& c) -> auto& { return c.probe.finetune_lr; }));
        return t;
    }();
    return entries;
}

const Entry& find(const std::string& key) {
    for (const auto& e : table())
        if (e.key == key) return e;
    throw ConfigError("unknown config key '" + key + "'");
}

void flatten(const json& object, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
    for (auto it = object.begin(); it != object.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) flatten(*it, key, out);
        else out.emplace_back(key, *it);
    }
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    views.validate();
    distill.validate();
    probe.validate();
    for (std::size_t s : {views.global_size, views.local_size}) {
        if (s % model.patch_size != 0)
            throw ConfigError("views.global_size and views.local_size must be multiples of model.patch_size");
        if (s > model.max_height || s > model.max_width)
            throw ConfigError("views sizes must not exceed model.max_height / model.max_width");
    }
    for (auto t : views.global_frames)
        if (t > model.max_frames) throw ConfigError("views.global_frames entry exceeds model.max_frames");
    if (probe.frames > model.max_frames) throw ConfigError("probe.frames exceeds model.max_frames");
    if (checkpoint_every < 0) throw ConfigError("run.checkpoint_every must be non-negative");
    if (distill.max_steps < 0) throw ConfigError("distill.max_steps must be non-negative");
    if (out_dir.empty()) throw ConfigError("run.out_dir must not be empty");
}

std::uint64_t RunConfig::resolved_seed() const {
    if (seed) return *seed;
    if (const char* env = std::getenv("ENDOVID_SEED"); env && *env) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("ENDOVID_SEED must be a non-negative integer, got '") + env + "'");
    }
    return 0;
}

json RunConfig::to_json() const {
    json j = json::object();
    for (const auto& e : table()) j[e.key] = e.get(*this);
    return j;
}

std::vector<KeyInfo> config_keys() {
    std::vector<KeyInfo> out;
    for (const auto& e : table()) out.push_back({e.key, e.description});
    return out;
}

void set_key(RunConfig& config, const std::string& key, const json& value) {
    find(key).set(config, value);
}

void set_from_text(RunConfig& config, const std::string& key, const std::string& text) {
    const Entry& e = find(key);
    if (e.kind == Kind::text || e.kind == Kind::local_mode) {
        e.set(config, json(text));
        return;
    }
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded() && e.kind == Kind::counts) {
        value = json::array();
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            json n = json::parse(item, nullptr, false);
            if (n.is_discarded()) throw ConfigError(key + ": cannot parse list item '" + item + "'");
            value.push_back(n);
        }
    }
    if (value.is_discarded()) throw ConfigError(key + ": cannot parse value '" + text + "'");
    if (e.kind == Kind::counts && value.is_number()) value = json::array({value});
    e.set(config, value);
}

void apply_json(RunConfig& config, const json& object) {
    if (!object.is_object()) throw ConfigError("config must be a JSON object");
    std::vector<std::pair<std::string, json>> flat;
    flatten(object, "", flat);
    for (const auto& [k, v] : flat) set_key(config, k, v);
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& ex) {
        throw ConfigError(path.string() + ": " + ex.what());
    }
    RunConfig c;
    apply_json(c, j);
    return c;
}

}  // namespace endovid::cli
