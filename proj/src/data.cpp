#include "endovid/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "endovid/errors.hpp"

namespace endovid::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

void Manifest::validate() const {
    std::set<std::string> ids;
    for (const auto& c : clips) {
        if (c.id.empty()) throw FormatError("manifest entry with empty id");
        if (c.path.empty()) throw FormatError("manifest entry '" + c.id + "' has no path");
        if (c.frames == 0) throw FormatError("manifest entry '" + c.id + "' has no frames");
        if (!(c.fps > 0)) throw FormatError("manifest entry '" + c.id + "' has non-positive fps");
        if (!ids.insert(c.id).second) throw FormatError("duplicate clip id in manifest: " + c.id);
    }
}

void Manifest::validate_files(const fs::path& root) const {
    for (const auto& c : clips) {
        for (std::size_t i = 0; i < c.frames; ++i) {
            const fs::path p = root / c.path / frame_filename(i);
            if (!fs::exists(p)) throw FormatError("missing frame file: " + p.string());
        }
    }
}

std::string Manifest::to_json() const {
    json j;
    j["dataset"] = dataset;
    j["seed"] = seed;
    j["clips"] = json::array();
    for (const auto& c : clips) {
        json e{{"id", c.id}, {"path", c.path}, {"frames", c.frames}, {"fps", c.fps}};
        if (c.label) e["label"] = *c.label;
        j["clips"].push_back(e);
    }
    return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
    Manifest m;
    try {
        const json j = json::parse(text);
        m.dataset = j.at("dataset").get<std::string>();
        m.seed = j.value("seed", std::uint64_t{0});
        for (const auto& e : j.at("clips")) {
            ManifestEntry c;
            c.id = e.at("id").get<std::string>();
            c.path = e.at("path").get<std::string>();
            c.frames = e.at("frames").get<std::size_t>();
            c.fps = e.at("fps").get<double>();
            if (e.contains("label") && !e["label"].is_null()) c.label = e["label"].get<int>();
            m.clips.push_back(std::move(c));
        }
    } catch (const json::exception& ex) {
        throw FormatError(std::string("malformed manifest: ") + ex.what());
    }
    m.validate();
    return m;
}

void Manifest::write(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write manifest: " + path.string());
    out << to_json();
}

Manifest Manifest::read(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open manifest: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

// ---------------------------------------------------------------------------
// frames on disk
// ---------------------------------------------------------------------------

std::string frame_filename(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05zu.ppm", index);
    return buf;
}

void write_ppm(const fs::path& path, const Frames& f, std::size_t t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write frame: " + path.string());
    out << "P6\n" << f.width << ' ' << f.height << "\n255\n";
    std::vector<unsigned char> bytes(f.width * f.height * 3);
    for (std::size_t y = 0; y < f.height; ++y)
        for (std::size_t x = 0; x < f.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const float v = std::clamp(f.at(t, c, y, x), 0.0f, 1.0f);
                bytes[(y * f.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw FormatError("short write: " + path.string());
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& buf, std::size_t& pos, const fs::path& path) {
    while (pos < buf.size()) {
        if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
            ++pos;
        } else if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    const std::size_t begin = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (begin == pos) {
        throw FormatError(path.string() + ": truncated PPM header at byte " + std::to_string(begin));
    }
    return buf.substr(begin, pos - begin);
}

std::size_t header_number(const std::string& buf, std::size_t& pos, const fs::path& path) {
    const std::size_t at = pos;
    const std::string tok = header_token(buf, pos, path);
    if (!std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        throw FormatError(path.string() + ": expected a number in PPM header near byte " +
                          std::to_string(at));
    }
    return std::stoul(tok);
}

}  // namespace

Frames read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open frame file: " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    if (header_token(buf, pos, path) != "P6") {
        throw FormatError(path.string() + ": not a binary PPM (P6) at byte 0");
    }
    const std::size_t w = header_number(buf, pos, path);
    const std::size_t h = header_number(buf, pos, path);
    const std::size_t maxval = header_number(buf, pos, path);
    if (w == 0 || h == 0) throw FormatError(path.string() + ": zero image extent");
    if (maxval != 255) {
        throw FormatError(path.string() + ": unsupported maxval " + std::to_string(maxval) +
                          " at byte " + std::to_string(pos));
    }
    ++pos;  // single whitespace byte before the raster
    const std::size_t need = w * h * 3;
    if (buf.size() < pos + need) {
        throw FormatError(path.string() + ": raster truncated at byte " +
                          std::to_string(buf.size()) + ", expected " +
                          std::to_string(pos + need) + " bytes");
    }
    Frames f(1, h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                f.at(0, c, y, x) =
                    float(static_cast<unsigned char>(buf[pos + (y * w + x) * 3 + c])) / 255.0f;
    return f;
}

void write_clip(const fs::path& dir, const Frames& frames) {
    fs::create_directories(dir);
    for (std::size_t t = 0; t < frames.frames; ++t) write_ppm(dir / frame_filename(t), frames, t);
}

VideoClip load_clip(const ManifestEntry& entry, const fs::path& root) {
    VideoClip clip;
    clip.id = entry.id;
    clip.fps = entry.fps;
    clip.label = entry.label;
    const fs::path dir = root / entry.path;
    for (std::size_t t = 0; t < entry.frames; ++t) {
        const fs::path p = dir / frame_filename(t);
        if (!fs::exists(p)) throw FormatError("missing frame file: " + p.string());
        Frames f = read_ppm(p);
        if (t == 0) {
            clip.frames = Frames(entry.frames, f.height, f.width);
        } else if (f.height != clip.frames.height || f.width != clip.frames.width) {
            throw FormatError(p.string() + ": frame size " + std::to_string(f.width) + "x" +
                              std::to_string(f.height) + " differs from the first frame of clip '" +
                              entry.id + "'");
        }
        std::copy(f.data.begin(), f.data.end(),
                  clip.frames.data.begin() + std::ptrdiff_t(t * clip.frames.frame_size()));
    }
    return clip;
}

Frames load_frame_sequence(const fs::path& dir) {
    std::size_t count = 0;
    while (fs::exists(dir / frame_filename(count))) ++count;
    if (count == 0) throw FormatError("no " + frame_filename(0) + " in " + dir.string());
    ManifestEntry e;
    e.id = dir.filename().string();
    e.path = ".";
    e.frames = count;
    return load_clip(e, dir).frames;
}

std::vector<VideoClip> load_dataset(const fs::path& manifest_path) {
    const Manifest m = Manifest::read(manifest_path);
    const fs::path root = manifest_path.parent_path();
    m.validate_files(root);
    std::vector<VideoClip> clips;
    clips.reserve(m.clips.size());
    for (const auto& e : m.clips) clips.push_back(load_clip(e, root));
    return clips;
}

std::vector<Frames> slice_video_to_clips(const Frames& seq, double fps, double seconds) {
    if (!(fps > 0) || !(seconds > 0)) throw DomainError("fps and duration must be positive");
    std::vector<Frames> out;
    const auto len = std::size_t(std::llround(fps * seconds));
    if (seq.frames == 0 || len == 0) return out;
    const std::size_t fsz = seq.frame_size();
    for (std::size_t start = 0; start < seq.frames; start += len) {
        const std::size_t n = std::min(len, seq.frames - start);
        if (n < len && 2 * n < len) break;
        Frames clip(n, seq.height, seq.width);
        std::copy_n(seq.data.begin() + std::ptrdiff_t(start * fsz), n * fsz, clip.data.begin());
        out.push_back(std::move(clip));
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic motion clips
// ---------------------------------------------------------------------------

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& s) {
    if (s.square == 0 || s.square >= s.size) {
        throw DomainError("square side " + std::to_string(s.square) +
                          " must be positive and smaller than the frame size " +
                          std::to_string(s.size));
    }
    if (s.frames < 2) throw DomainError("synthetic clips need at least 2 frames");
    if (s.classes == 0) throw DomainError("synthetic dataset needs at least one class");
    if (!(s.appearance_variation >= 0.0 && s.appearance_variation <= 1.0))
        throw DomainError("appearance variation must lie in [0, 1]");

    SyntheticDataset ds;
    ds.manifest.dataset = s.name;
    ds.manifest.seed = s.seed;
    std::mt19937_64 rng(s.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    const double travel = double(s.size - s.square);
    const std::size_t digits = std::to_string(s.count).size();
    for (std::size_t i = 0; i < s.count; ++i) {
        const int label = int(i % s.classes);
        const double dir = label % 2 == 0 ? 1.0 : -1.0;
        const double speed = travel / double(s.frames - 1) * double(label + 1) / double(s.classes);
        const double slack = travel - speed * double(s.frames - 1);
        double x0 = u01(rng) * slack;
        if (dir < 0) x0 = travel - x0;
        const auto y0 = std::size_t(u01(rng) * double(s.size - s.square + 1)) %
                        (s.size - s.square + 1);

        // per-clip appearance
        float bg_tint[3], fg[3];
        const double av = s.appearance_variation;
        for (auto& v : bg_tint) v = float(0.275 + 0.25 * av * (u01(rng) - 0.5));
        for (auto& v : fg) v = float(0.775 + 0.45 * av * (u01(rng) - 0.5));
        std::vector<float> bg_noise(s.size * s.size);
        for (auto& v : bg_noise) v = float(0.15 * u01(rng));
        std::vector<float> texture(s.square * s.square);
        for (auto& v : texture) v = float(0.75 + 0.25 * u01(rng));

        VideoClip clip;
        char id[64];
        std::snprintf(id, sizeof(id), "clip_%0*zu", int(digits), i);
        clip.id = id;
        clip.fps = s.fps;
        clip.label = label;
        clip.frames = Frames(s.frames, s.size, s.size);
        std::vector<double> xs(s.frames);
        for (std::size_t t = 0; t < s.frames; ++t) {
            const double sx = x0 + dir * speed * double(t);
            xs[t] = sx;
            for (std::size_t y = 0; y < s.size; ++y) {
                for (std::size_t x = 0; x < s.size; ++x) {
                    // horizontal coverage of pixel column [x, x+1) by [sx, sx+square)
                    const double cover = std::clamp(
                        std::min(double(x + 1), sx + double(s.square)) - std::max(double(x), sx),
                        0.0, 1.0);
                    const bool rows = y >= y0 && y < y0 + s.square;
                    const double a = rows ? cover : 0.0;
                    const std::size_t tx = std::min(
                        s.square - 1, std::size_t(std::max(0.0, double(x) - sx)));
                    const float tex = rows ? texture[(y - y0) * s.square + tx] : 0.0f;
                    for (std::size_t c = 0; c < 3; ++c) {
                        const float bg = bg_tint[c] + bg_noise[y * s.size + x];
                        clip.frames.at(t, c, y, x) =
                            std::clamp(float((1.0 - a) * bg + a * fg[c] * tex), 0.0f, 1.0f);
                    }
                }
            }
        }
        ds.square_x.push_back(std::move(xs));
        ds.manifest.clips.push_back({clip.id, clip.id, s.frames, s.fps, clip.label});
        ds.clips.push_back(std::move(clip));
    }
    return ds;
}

void write_dataset(const fs::path& root, const Manifest& manifest,
                   const std::vector<VideoClip>& clips) {
    manifest.validate();
    if (clips.size() != manifest.clips.size())
        throw ContractError("manifest and clip list differ in length");
    fs::create_directories(root);
    for (std::size_t i = 0; i < clips.size(); ++i)
        write_clip(root / manifest.clips[i].path, clips[i].frames);
    manifest.write(root / "manifest.json");
}

}  // namespace endovid::data
