#pragma once

// Global and local spatial-temporal views of a clip.
//
// A view picks T frames at a fixed stride (its frame rate), crops one
// rectangle, resizes it and applies a single augmentation draw to every frame.
// Global views cover most of the frame at high resolution; local views are
// small crops at low resolution with no more frames than any global view.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "endovid/frames.hpp"

namespace endovid::views {

enum class ViewKind { global, local };

enum class LocalMode {
    both,           // local views vary crop and frame rate
    spatial_only,   // frame count and rate copied from the shortest global view
    temporal_only,  // full-frame crop, only the frame rate varies
};

std::string to_string(LocalMode mode);
LocalMode parse_local_mode(const std::string& text);

/// Normalised crop rectangle inside [0,1]^2.
struct CropRect {
    double x = 0.0, y = 0.0, width = 1.0, height = 1.0;
    static CropRect full() { return {}; }
    bool operator==(const CropRect&) const = default;
};

/// One realisation of the augmentation chain; the defaults are the identity.
struct AugmentParams {
    bool flip = false;
    bool jitter = false;
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    double hue = 0.0;         // fraction of a full turn
    double blur_sigma = 0.0;  // 0 disables the blur
    bool solarize = false;
    double solarize_threshold = 0.5;

    bool operator==(const AugmentParams&) const = default;
};

struct AugmentConfig {
    bool enabled = true;
    double flip_prob = 0.5;
    double jitter_prob = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.2;
    double hue = 0.1;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    double blur_prob_first = 1.0;  // first global view
    double blur_prob_other = 0.1;
    double solarize_threshold = 0.5;
    double solarize_prob = 0.2;  // second global view only
};

struct ViewConfig {
    std::size_t global_views = 2;  // G
    std::size_t local_views = 8;   // L
    std::size_t global_size = 32;
    std::size_t local_size = 16;
    std::vector<std::size_t> global_frames{4, 8};
    std::vector<std::size_t> local_frames{2, 4};
    double global_scale_min = 0.4;
    double global_scale_max = 1.0;
    double local_scale_min = 0.05;
    double local_scale_max = 0.4;
    LocalMode local_mode = LocalMode::both;
    AugmentConfig augment;

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;

    static ViewConfig desk() { return {}; }
    static ViewConfig tiny();
    static ViewConfig full();
};

struct ViewSpec {
    ViewKind kind = ViewKind::global;
    std::size_t frame_count = 0;
    std::size_t stride = 1;  // source frames between samples
    std::vector<std::size_t> frame_indices;
    CropRect crop;
    std::size_t out_height = 0;
    std::size_t out_width = 0;
    AugmentParams augment;
};

struct View {
    ViewSpec spec;
    Frames frames;
};

struct ViewSet {
    std::vector<View> globals;
    std::vector<View> locals;
};

/// `count` frame indices spaced `stride` apart from `start`, wrapped cyclically
/// when the clip is too short. The stride spreads the view over the whole clip.
std::vector<std::size_t> frame_indices(std::size_t clip_frames, std::size_t count,
                                       std::size_t stride, std::size_t start);
std::size_t stride_for(std::size_t clip_frames, std::size_t count);

/// Crop `rect` out of the selected frames and resize to out_h x out_w with
/// bilinear sampling at pixel centres.
Frames crop_and_resize(const Frames& clip, const std::vector<std::size_t>& indices,
                       const CropRect& rect, std::size_t out_height, std::size_t out_width);

/// Apply one augmentation draw identically to every frame. Output stays in [0,1].
Frames augment_view(const Frames& frames, const AugmentParams& params);

/// Render a fully specified view.
View materialize(const Frames& clip, const ViewSpec& spec);

std::vector<View> sample_global_views(const Frames& clip, const ViewConfig& config,
                                      std::size_t count, std::mt19937_64& rng);

/// `globals` bound the local frame counts (T_l <= every T_g) and, in spatial-only
/// mode, supply the frame rate.
std::vector<View> sample_local_views(const Frames& clip, const ViewConfig& config,
                                     const std::vector<View>& globals, std::mt19937_64& rng);

/// Globals then locals for one clip; `rng` should come from stream_seed().
ViewSet sample_views(const Frames& clip, const ViewConfig& config, std::size_t global_count,
                     std::mt19937_64& rng);

/// Independent RNG stream for (seed, clip, epoch).
std::uint64_t stream_seed(std::uint64_t seed, const std::string& clip_id, std::uint64_t epoch);

/// Deterministic evaluation view: `count` frames spread uniformly, full frame, no augmentation.
Frames evaluation_view(const Frames& clip, std::size_t count, std::size_t size);

}  // namespace endovid::views
