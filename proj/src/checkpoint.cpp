#include "endovid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "endovid/errors.hpp"

namespace endovid::data {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "ENDOVID-CKPT";

json model_to_json(const model::ModelConfig& c) {
    return json{{"patch_size", c.patch_size},       {"embed_dim", c.embed_dim},
                {"depth", c.depth},                 {"num_heads", c.num_heads},
                {"max_frames", c.max_frames},       {"max_height", c.max_height},
                {"max_width", c.max_width},         {"mlp_ratio", c.mlp_ratio},
                {"head_hidden", c.head_hidden},     {"head_bottleneck", c.head_bottleneck},
                {"out_dim", c.out_dim},             {"init_std", c.init_std}, {"head_init_std", c.head_init_std},
                {"ln_eps", c.ln_eps},
                {"pixel_mean", c.pixel_mean},       {"pixel_std", c.pixel_std}};
}

model::ModelConfig model_from_json(const json& j) {
    model::ModelConfig c;
    c.patch_size = j.at("patch_size");
    c.embed_dim = j.at("embed_dim");
    c.depth = j.at("depth");
    c.num_heads = j.at("num_heads");
    c.max_frames = j.at("max_frames");
    c.max_height = j.at("max_height");
    c.max_width = j.at("max_width");
    c.mlp_ratio = j.at("mlp_ratio");
    c.head_hidden = j.at("head_hidden");
    c.head_bottleneck = j.at("head_bottleneck");
    c.out_dim = j.at("out_dim");
    c.init_std = j.at("init_std");
    c.head_init_std = j.at("head_init_std");
    c.ln_eps = j.at("ln_eps");
    c.pixel_mean = j.at("pixel_mean");
    c.pixel_std = j.at("pixel_std");
    return c;
}

void append_floats(std::string& payload, std::span<const float> values) {
    const std::size_t at = payload.size();
    payload.resize(at + values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) payload[at + i * 4 + std::size_t(b)] = char((bits >> (8 * b)) & 0xffu);
    }
}

std::vector<float> read_floats(const std::string& payload, std::size_t offset, std::size_t count) {
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= std::uint32_t(static_cast<unsigned char>(payload[offset + i * 4 + std::size_t(b)])) << (8 * b);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

}  // namespace

void save_checkpoint(const fs::path& path, const model::ModelConfig& model,
                     const distill::TrainState& s) {
    s.student.require_same_structure(s.teacher);
    std::string payload;
    json arrays = json::array();
    auto add = [&](const std::string& name, const ag::Shape& shape, std::span<const float> v) {
        arrays.push_back({{"name", name}, {"shape", shape}, {"offset", payload.size()},
                          {"bytes", v.size() * 4}});
        append_floats(payload, v);
    };
    for (std::size_t i = 0; i < s.student.size(); ++i)
        add("student/" + s.student.name(i), s.student.tensor(i).shape(), s.student.tensor(i).values());
    for (std::size_t i = 0; i < s.teacher.size(); ++i)
        add("teacher/" + s.teacher.name(i), s.teacher.tensor(i).shape(), s.teacher.tensor(i).values());
    for (std::size_t i = 0; i < s.student.size(); ++i) {
        add("adam.m/" + s.student.name(i), s.student.tensor(i).shape(), s.optimizer.m[i]);
        add("adam.v/" + s.student.name(i), s.student.tensor(i).shape(), s.optimizer.v[i]);
    }
    add("center", {s.center.size()}, s.center);

    const auto& oc = s.optimizer.config;
    json header{{"format_version", kCheckpointVersion},
                {"model", model_to_json(model)},
                {"step", s.step},
                {"rng", {{"seed", s.seed}, {"stream", "splitmix64(seed, clip_id, epoch)"}}},
                {"optimizer",
                 {{"lr", oc.lr}, {"weight_decay", oc.weight_decay}, {"beta1", oc.beta1},
                  {"beta2", oc.beta2}, {"eps", oc.eps}, {"step", s.optimizer.step}}},
                {"arrays", arrays},
                {"payload_bytes", payload.size()}};
    const std::string text = header.dump();

    const fs::path tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write checkpoint: " + tmp.string());
        out << kMagic << ' ' << text.size() << '\n' << text;
        out.write(payload.data(), std::streamsize(payload.size()));
        if (!out) throw FormatError("short write: " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const std::size_t nl = buf.find('\n');
    const std::string magic = std::string(kMagic) + ' ';
    if (nl == std::string::npos || buf.compare(0, magic.size(), magic) != 0)
        throw FormatError(path.string() + ": not a checkpoint file");
    std::size_t header_len = 0;
    try {
        header_len = std::stoul(buf.substr(magic.size(), nl - magic.size()));
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed checkpoint preamble");
    }
    if (buf.size() < nl + 1 + header_len) throw FormatError(path.string() + ": truncated header");

    json header;
    try {
        header = json::parse(buf.substr(nl + 1, header_len));
    } catch (const json::exception& ex) {
        throw FormatError(path.string() + ": malformed header: " + ex.what());
    }
    const int version = header.value("format_version", -1);
    if (version != kCheckpointVersion) {
        throw FormatError(path.string() + ": checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const std::string payload = buf.substr(nl + 1 + header_len);

    Checkpoint ck;
    try {
        ck.model = model_from_json(header.at("model"));
        ck.state.step = header.at("step");
        ck.state.seed = header.at("rng").at("seed");
        const auto& oj = header.at("optimizer");
        ck.state.optimizer.config.lr = oj.at("lr");
        ck.state.optimizer.config.weight_decay = oj.at("weight_decay");
        ck.state.optimizer.config.beta1 = oj.at("beta1");
        ck.state.optimizer.config.beta2 = oj.at("beta2");
        ck.state.optimizer.config.eps = oj.at("eps");
        ck.state.optimizer.step = oj.at("step");

        for (const auto& a : header.at("arrays")) {
            const std::string name = a.at("name");
            const ag::Shape shape = a.at("shape").get<ag::Shape>();
            const std::size_t offset = a.at("offset"), bytes = a.at("bytes");
            if (bytes != 4 * ag::numel(shape))
                throw FormatError(path.string() + ": array '" + name + "' length does not match its shape");
            if (offset + bytes > payload.size())
                throw FormatError(path.string() + ": array '" + name + "' is truncated");
            auto values = read_floats(payload, offset, bytes / 4);
            const auto slash = name.find('/');
            const std::string role = name.substr(0, slash);
            const std::string pname = slash == std::string::npos ? "" : name.substr(slash + 1);
            if (role == "student") {
                ck.state.student.add(pname, ag::Tensor<float>::from(shape, std::move(values), true));
            } else if (role == "teacher") {
                ck.state.teacher.add(pname, ag::Tensor<float>::from(shape, std::move(values), false));
            } else if (role == "adam.m") {
                ck.state.optimizer.m.push_back(std::move(values));
            } else if (role == "adam.v") {
                ck.state.optimizer.v.push_back(std::move(values));
            } else if (role == "center") {
                ck.state.center = std::move(values);
            } else {
                throw FormatError(path.string() + ": unknown array '" + name + "'");
            }
        }
    } catch (const json::exception& ex) {
        throw FormatError(path.string() + ": malformed header: " + ex.what());
    }
    if (ck.state.optimizer.m.size() != ck.state.student.size() ||
        ck.state.optimizer.v.size() != ck.state.student.size())
        throw FormatError(path.string() + ": optimizer moments do not cover every parameter");
    try {
        ck.state.student.require_same_structure(ck.state.teacher);
    } catch (const ContractError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return ck;
}

}  // namespace endovid::data
