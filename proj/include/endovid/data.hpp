#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "endovid/frames.hpp"

namespace endovid::data {

namespace fs = std::filesystem;

struct VideoClip {
    std::string id;
    double fps = 30.0;
    Frames frames;
    std::optional<int> label;
};

struct ManifestEntry {
    std::string id;
    std::string path;  // frame directory, relative to the manifest
    std::size_t frames = 0;
    double fps = 30.0;
    std::optional<int> label;

    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    std::string dataset;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> clips;

    /// Throws FormatError on duplicate ids or empty fields.
    void validate() const;
    /// Throws FormatError naming the first clip whose frame files are missing.
    void validate_files(const fs::path& root) const;

    std::string to_json() const;
    static Manifest from_json(const std::string& text);

    void write(const fs::path& path) const;
    static Manifest read(const fs::path& path);
};

/// File name of frame `index` inside a clip directory.
std::string frame_filename(std::size_t index);

/// Binary PPM (P6, maxval 255) of frame `t` of `frames`.
void write_ppm(const fs::path& path, const Frames& frames, std::size_t t);
/// One-frame stack decoded to [0,1]. Errors name the path and byte offset.
Frames read_ppm(const fs::path& path);

void write_clip(const fs::path& dir, const Frames& frames);
/// Decode the frames listed by `entry`, resolving its path against `root`.
VideoClip load_clip(const ManifestEntry& entry, const fs::path& root);
/// Load and validate every clip of the manifest at `manifest_path`.
std::vector<VideoClip> load_dataset(const fs::path& manifest_path);

/// Consecutive frame_00000.ppm, frame_00001.ppm, ... from `dir` until the first gap.
Frames load_frame_sequence(const fs::path& dir);

/// Cut a long frame sequence into consecutive clips of round(fps * seconds)
/// frames. A trailing remainder is kept when it has at least half a clip.
std::vector<Frames> slice_video_to_clips(const Frames& sequence, double fps, double seconds);

struct SyntheticSpec {
    std::size_t count = 64;
    std::size_t size = 32;    // square frames, pixels
    std::size_t frames = 16;  // per clip
    std::size_t classes = 2;
    std::size_t square = 8;   // moving square side, pixels
    double fps = 30.0;
    double appearance_variation = 1.0;  // scales the per-clip colour ranges; 0 fixes them
    std::uint64_t seed = 0;
    std::string name = "synthetic-motion";
};

struct SyntheticDataset {
    Manifest manifest;
    std::vector<VideoClip> clips;
    /// Left edge of the square per clip per frame, in pixels.
    std::vector<std::vector<double>> square_x;
};

/// Textured square moving horizontally over a noise background. Even classes
/// move right, odd classes move left; speed grows with the class index.
/// Labels are assigned round-robin, so they balance when count % classes == 0.
SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec);

/// Write frames under `root/<clip id>/` and `root/manifest.json`.
void write_dataset(const fs::path& root, const Manifest& manifest,
                   const std::vector<VideoClip>& clips);

}  // namespace endovid::data
