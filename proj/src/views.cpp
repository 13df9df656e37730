#include "endovid/views.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "endovid/errors.hpp"

namespace endovid::views {

std::string to_string(LocalMode mode) {
    switch (mode) {
        case LocalMode::both: return "both";
        case LocalMode::spatial_only: return "spatial";
        case LocalMode::temporal_only: return "temporal";
    }
    return "both";
}

LocalMode parse_local_mode(const std::string& text) {
    if (text == "both") return LocalMode::both;
    if (text == "spatial") return LocalMode::spatial_only;
    if (text == "temporal") return LocalMode::temporal_only;
    throw ConfigError("views.local_mode must be one of both|spatial|temporal, got '" + text + "'");
}

void ViewConfig::validate() const {
    if (global_views == 0) throw ConfigError("views.global_views must be at least 1");
    if (global_size == 0 || local_size == 0) throw ConfigError("views.global_size and views.local_size must be positive");
    if (global_frames.empty()) throw ConfigError("views.global_frames must not be empty");
    if (local_views > 0 && local_frames.empty())
        throw ConfigError("views.local_frames must not be empty when local views are requested");
    for (auto t : global_frames)
        if (t == 0) throw ConfigError("views.global_frames entries must be positive");
    for (auto t : local_frames)
        if (t == 0) throw ConfigError("views.local_frames entries must be positive");
    if (local_views > 0 && local_mode != LocalMode::spatial_only &&
        *std::min_element(local_frames.begin(), local_frames.end()) >
            *std::min_element(global_frames.begin(), global_frames.end())) {
        throw ConfigError("views.local_frames needs an entry no longer than every global view");
    }
    auto check_scale = [](double lo, double hi, const char* what) {
        if (!(lo > 0.0 && lo <= hi && hi <= 1.0))
            throw ConfigError(std::string("views.") + what + " scale range must satisfy 0 < min <= max <= 1");
    };
    check_scale(global_scale_min, global_scale_max, "global");
    check_scale(local_scale_min, local_scale_max, "local");
}

ViewConfig ViewConfig::tiny() {
    ViewConfig c;
    c.global_views = 2;
    c.local_views = 2;
    c.global_size = 16;
    c.local_size = 8;
    c.global_frames = {4};
    c.local_frames = {2, 4};
    return c;
}

ViewConfig ViewConfig::full() {
    ViewConfig c;
    c.global_views = 2;
    c.local_views = 8;
    c.global_size = 224;
    c.local_size = 96;
    c.global_frames = {8, 16};
    c.local_frames = {2, 4, 8, 16};
    return c;
}

// ---------------------------------------------------------------------------
// sampling geometry
// ---------------------------------------------------------------------------

std::size_t stride_for(std::size_t clip_frames, std::size_t count) {
    return std::max<std::size_t>(1, clip_frames / std::max<std::size_t>(1, count));
}

std::vector<std::size_t> frame_indices(std::size_t clip_frames, std::size_t count,
                                       std::size_t stride, std::size_t start) {
    if (clip_frames == 0) throw DomainError("cannot sample frames from an empty clip");
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = (start + i * stride) % clip_frames;
    return idx;
}

Frames crop_and_resize(const Frames& clip, const std::vector<std::size_t>& indices,
                       const CropRect& rect, std::size_t out_h, std::size_t out_w) {
    Frames out(indices.size(), out_h, out_w);
    const double src_w = double(clip.width), src_h = double(clip.height);
    const double x0 = rect.x * src_w, y0 = rect.y * src_h;
    const double sx_scale = rect.width * src_w / double(out_w);
    const double sy_scale = rect.height * src_h / double(out_h);

    struct Tap {
        std::size_t lo, hi;
        float frac;
    };
    auto taps = [](std::size_t n_out, double origin, double scale, std::size_t n_src) {
        std::vector<Tap> t(n_out);
        for (std::size_t o = 0; o < n_out; ++o) {
            double s = origin + (double(o) + 0.5) * scale - 0.5;
            s = std::clamp(s, 0.0, double(n_src - 1));
            const auto lo = std::size_t(std::floor(s));
            t[o] = {lo, std::min(lo + 1, n_src - 1), float(s - double(lo))};
        }
        return t;
    };
    const auto tx = taps(out_w, x0, sx_scale, clip.width);
    const auto ty = taps(out_h, y0, sy_scale, clip.height);

    for (std::size_t t = 0; t < indices.size(); ++t) {
        const std::size_t src_t = indices[t];
        for (std::size_t c = 0; c < Frames::channels; ++c) {
            for (std::size_t y = 0; y < out_h; ++y) {
                const Tap& vy = ty[y];
                for (std::size_t x = 0; x < out_w; ++x) {
                    const Tap& vx = tx[x];
                    const float a = clip.at(src_t, c, vy.lo, vx.lo);
                    const float b = clip.at(src_t, c, vy.lo, vx.hi);
                    const float d = clip.at(src_t, c, vy.hi, vx.lo);
                    const float e = clip.at(src_t, c, vy.hi, vx.hi);
                    const float top = a + (b - a) * vx.frac;
                    const float bottom = d + (e - d) * vx.frac;
                    out.at(t, c, y, x) = top + (bottom - top) * vy.frac;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace {

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const float delta = mx - mn;
    v = mx;
    s = mx > 0.0f ? delta / mx : 0.0f;
    if (delta <= 0.0f) {
        h = 0.0f;
        return;
    }
    float hh;
    if (mx == r) {
        hh = (g - b) / delta;
    } else if (mx == g) {
        hh = 2.0f + (b - r) / delta;
    } else {
        hh = 4.0f + (r - g) / delta;
    }
    hh /= 6.0f;
    h = hh - std::floor(hh);
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    const float hh = (h - std::floor(h)) * 6.0f;
    const int sector = std::min(5, int(hh));
    const float f = hh - float(sector);
    const float p = v * (1.0f - s), q = v * (1.0f - s * f), t = v * (1.0f - s * (1.0f - f));
    switch (sector) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
}

void color_jitter(Frames& f, const AugmentParams& p) {
    const std::size_t plane = f.height * f.width;
    for (std::size_t t = 0; t < f.frames; ++t) {
        float* r = f.data.data() + t * f.frame_size();
        float* g = r + plane;
        float* b = g + plane;
        for (std::size_t i = 0; i < plane; ++i) {
            float cr = clamp01(r[i] * float(p.brightness));
            float cg = clamp01(g[i] * float(p.brightness));
            float cb = clamp01(b[i] * float(p.brightness));
            const float k = float(p.contrast);
            cr = clamp01((cr - 0.5f) * k + 0.5f);
            cg = clamp01((cg - 0.5f) * k + 0.5f);
            cb = clamp01((cb - 0.5f) * k + 0.5f);
            const float gray = 0.299f * cr + 0.587f * cg + 0.114f * cb;
            const float s = float(p.saturation);
            cr = clamp01(gray + (cr - gray) * s);
            cg = clamp01(gray + (cg - gray) * s);
            cb = clamp01(gray + (cb - gray) * s);
            if (p.hue != 0.0) {
                float h, sat, v;
                rgb_to_hsv(cr, cg, cb, h, sat, v);
                hsv_to_rgb(h + float(p.hue), sat, v, cr, cg, cb);
            }
            r[i] = clamp01(cr);
            g[i] = clamp01(cg);
            b[i] = clamp01(cb);
        }
    }
}

std::vector<float> gaussian_kernel(double sigma) {
    const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<float> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * double(i * i) / (sigma * sigma));
        k[std::size_t(i + radius)] = float(w);
        total += w;
    }
    for (auto& w : k) w = float(double(w) / total);
    return k;
}

void gaussian_blur(Frames& f, double sigma) {
    const auto k = gaussian_kernel(sigma);
    const int radius = int(k.size() / 2);
    const int h = int(f.height), w = int(f.width);
    std::vector<float> tmp(f.height * f.width);
    for (std::size_t t = 0; t < f.frames; ++t) {
        for (std::size_t c = 0; c < Frames::channels; ++c) {
            float* plane = &f.at(t, c, 0, 0);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    float s = 0.0f;
                    for (int i = -radius; i <= radius; ++i)
                        s += k[std::size_t(i + radius)] * plane[y * w + std::clamp(x + i, 0, w - 1)];
                    tmp[std::size_t(y * w + x)] = s;
                }
            }
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    float s = 0.0f;
                    for (int i = -radius; i <= radius; ++i)
                        s += k[std::size_t(i + radius)] * tmp[std::size_t(std::clamp(y + i, 0, h - 1) * w + x)];
                    plane[y * w + x] = clamp01(s);
                }
            }
        }
    }
}

}  // namespace

Frames augment_view(const Frames& frames, const AugmentParams& p) {
    Frames out = frames;
    if (p.flip) {
        for (std::size_t t = 0; t < out.frames; ++t)
            for (std::size_t c = 0; c < Frames::channels; ++c)
                for (std::size_t y = 0; y < out.height; ++y) {
                    float* row = &out.at(t, c, y, 0);
                    std::reverse(row, row + out.width);
                }
    }
    if (p.jitter) color_jitter(out, p);
    if (p.blur_sigma > 0.0) gaussian_blur(out, p.blur_sigma);
    if (p.solarize) {
        const float thr = float(p.solarize_threshold);
        for (auto& v : out.data) v = v >= thr ? 1.0f - v : v;
    }
    return out;
}

View materialize(const Frames& clip, const ViewSpec& spec) {
    View v{spec, crop_and_resize(clip, spec.frame_indices, spec.crop, spec.out_height,
                                 spec.out_width)};
    v.frames = augment_view(v.frames, spec.augment);
    return v;
}

// ---------------------------------------------------------------------------
// random views
// ---------------------------------------------------------------------------

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool coin(std::mt19937_64& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

CropRect random_crop(std::mt19937_64& rng, double scale_min, double scale_max) {
    const double area = uniform(rng, scale_min, scale_max);
    const double ratio = std::exp(uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    CropRect r;
    r.width = std::min(1.0, std::sqrt(area * ratio));
    r.height = std::min(1.0, std::sqrt(area / ratio));
    r.x = uniform(rng, 0.0, 1.0 - r.width);
    r.y = uniform(rng, 0.0, 1.0 - r.height);
    if (r.width >= 1.0) r.x = 0.0;
    if (r.height >= 1.0) r.y = 0.0;
    return r;
}

AugmentParams random_augment(std::mt19937_64& rng, const AugmentConfig& c, double blur_prob,
                             double solarize_prob) {
    AugmentParams p;
    // Every draw is consumed even when augmentation is off so that the sampling
    // stream (crops, frame choices) does not depend on the augmentation switch.
    const bool flip = coin(rng, c.flip_prob);
    const bool jitter = coin(rng, c.jitter_prob);
    const double brightness = uniform(rng, 1.0 - c.brightness, 1.0 + c.brightness);
    const double contrast = uniform(rng, 1.0 - c.contrast, 1.0 + c.contrast);
    const double saturation = uniform(rng, 1.0 - c.saturation, 1.0 + c.saturation);
    const double hue = uniform(rng, -c.hue, c.hue);
    const bool blur = coin(rng, blur_prob);
    const double sigma = uniform(rng, c.blur_sigma_min, c.blur_sigma_max);
    const bool solarize = coin(rng, solarize_prob);
    if (!c.enabled) return p;
    p.flip = flip;
    p.jitter = jitter;
    if (jitter) {
        p.brightness = brightness;
        p.contrast = contrast;
        p.saturation = saturation;
        p.hue = hue;
    }
    p.blur_sigma = blur ? sigma : 0.0;
    p.solarize = solarize;
    p.solarize_threshold = c.solarize_threshold;
    return p;
}

std::size_t random_start(std::mt19937_64& rng, std::size_t clip_frames, std::size_t count,
                         std::size_t stride) {
    const std::size_t span = count * stride;
    if (span >= clip_frames) return 0;
    return std::uniform_int_distribution<std::size_t>(0, clip_frames - span)(rng);
}

}  // namespace

std::vector<View> sample_global_views(const Frames& clip, const ViewConfig& c, std::size_t count,
                                      std::mt19937_64& rng) {
    if (clip.empty()) throw DomainError("cannot sample views from an empty clip");
    // Distinct frame rates while the configured set has enough entries.
    std::vector<std::size_t> pool;
    std::vector<View> out;
    for (std::size_t i = 0; i < count; ++i) {
        if (pool.empty()) {
            pool = c.global_frames;
            std::shuffle(pool.begin(), pool.end(), rng);
        }
        ViewSpec s;
        s.kind = ViewKind::global;
        s.frame_count = pool.back();
        pool.pop_back();
        s.stride = stride_for(clip.frames, s.frame_count);
        s.frame_indices = frame_indices(clip.frames, s.frame_count, s.stride,
                                        random_start(rng, clip.frames, s.frame_count, s.stride));
        s.crop = random_crop(rng, c.global_scale_min, c.global_scale_max);
        s.out_height = s.out_width = c.global_size;
        s.augment = random_augment(rng, c.augment,
                                   i == 0 ? c.augment.blur_prob_first : c.augment.blur_prob_other,
                                   i == 1 ? c.augment.solarize_prob : 0.0);
        out.push_back(materialize(clip, s));
    }
    return out;
}

std::vector<View> sample_local_views(const Frames& clip, const ViewConfig& c,
                                     const std::vector<View>& globals, std::mt19937_64& rng) {
    if (clip.empty()) throw DomainError("cannot sample views from an empty clip");
    std::vector<View> out;
    if (c.local_views == 0) return out;

    const View* shortest = nullptr;
    for (const auto& g : globals)
        if (!shortest || g.spec.frame_count < shortest->spec.frame_count) shortest = &g;
    const std::size_t t_bound = shortest ? shortest->spec.frame_count : clip.frames;

    std::vector<std::size_t> allowed;
    for (auto t : c.local_frames)
        if (t <= t_bound) allowed.push_back(t);
    if (allowed.empty() && c.local_mode != LocalMode::spatial_only)
        throw ConfigError("no local frame count fits under the global views");

    for (std::size_t j = 0; j < c.local_views; ++j) {
        ViewSpec s;
        s.kind = ViewKind::local;
        if (c.local_mode == LocalMode::spatial_only && shortest) {
            s.frame_count = shortest->spec.frame_count;
            s.stride = shortest->spec.stride;
        } else {
            s.frame_count = allowed[std::uniform_int_distribution<std::size_t>(
                0, allowed.size() - 1)(rng)];
            s.stride = stride_for(clip.frames, s.frame_count);
        }
        s.frame_indices = frame_indices(clip.frames, s.frame_count, s.stride,
                                        random_start(rng, clip.frames, s.frame_count, s.stride));
        const CropRect crop = random_crop(rng, c.local_scale_min, c.local_scale_max);
        s.crop = c.local_mode == LocalMode::temporal_only ? CropRect::full() : crop;
        s.out_height = s.out_width = c.local_size;
        s.augment = random_augment(rng, c.augment, c.augment.blur_prob_other, 0.0);
        out.push_back(materialize(clip, s));
    }
    return out;
}

ViewSet sample_views(const Frames& clip, const ViewConfig& c, std::size_t global_count,
                     std::mt19937_64& rng) {
    ViewSet set;
    set.globals = sample_global_views(clip, c, global_count, rng);
    set.locals = sample_local_views(clip, c, set.globals, rng);
    return set;
}

std::uint64_t stream_seed(std::uint64_t seed, const std::string& clip_id, std::uint64_t epoch) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char ch : clip_id) h = (h ^ ch) * 0x100000001b3ULL;
    return mix(mix(mix(seed) ^ h) ^ epoch);
}

Frames evaluation_view(const Frames& clip, std::size_t count, std::size_t size) {
    if (clip.empty()) throw DomainError("cannot sample views from an empty clip");
    const auto idx = frame_indices(clip.frames, count, stride_for(clip.frames, count), 0);
    return crop_and_resize(clip, idx, CropRect::full(), size, size);
}

}  // namespace endovid::views
