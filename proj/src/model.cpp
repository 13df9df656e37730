#include "endovid/model.hpp"

#include <cmath>
#include <random>

#include "endovid/errors.hpp"

namespace endovid::model {

using ag::Tensor;

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
    };
    positive(patch_size, "patch_size");
    positive(embed_dim, "embed_dim");
    positive(depth, "depth");
    positive(num_heads, "num_heads");
    positive(max_frames, "max_frames");
    positive(max_height, "max_height");
    positive(max_width, "max_width");
    positive(mlp_ratio, "mlp_ratio");
    positive(head_hidden, "head_hidden");
    positive(head_bottleneck, "head_bottleneck");
    if (embed_dim % num_heads != 0)
        throw ConfigError("model.embed_dim must be divisible by model.num_heads");
    if (max_height % patch_size != 0 || max_width % patch_size != 0)
        throw ConfigError("model.max_height and model.max_width must be multiples of patch_size");
    if (out_dim < 2) throw ConfigError("model.out_dim must be at least 2");
    if (!(init_std > 0)) throw ConfigError("model.init_std must be positive");
    if (!(head_init_std > 0)) throw ConfigError("model.head_init_std must be positive");
    if (!(pixel_std > 0)) throw ConfigError("model.pixel_std must be positive");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.max_frames = 4;
    c.max_height = 16;
    c.max_width = 16;
    c.head_hidden = 32;
    c.head_bottleneck = 16;
    c.out_dim = 16;
    return c;
}

ModelConfig ModelConfig::full() {
    ModelConfig c;
    c.patch_size = 16;
    c.embed_dim = 768;
    c.depth = 12;
    c.num_heads = 12;
    c.max_frames = 16;
    c.max_height = 224;
    c.max_width = 224;
    c.head_hidden = 2048;
    c.head_bottleneck = 256;
    c.out_dim = 65536;
    return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.patch_size == b.patch_size && a.embed_dim == b.embed_dim && a.depth == b.depth &&
           a.num_heads == b.num_heads && a.max_frames == b.max_frames &&
           a.max_height == b.max_height && a.max_width == b.max_width &&
           a.mlp_ratio == b.mlp_ratio && a.head_hidden == b.head_hidden &&
           a.head_bottleneck == b.head_bottleneck && a.out_dim == b.out_dim &&
           a.init_std == b.init_std && a.head_init_std == b.head_init_std && a.ln_eps == b.ln_eps &&
           a.pixel_mean == b.pixel_mean && a.pixel_std == b.pixel_std;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

namespace {

class Initializer {
public:
    Initializer(std::uint64_t seed, double std) : rng_(seed), std_(std) {}

    // Normal truncated at two standard deviations.
    std::vector<double> trunc_normal(std::size_t n) { return trunc_normal(n, std_); }
    std::vector<double> trunc_normal(std::size_t n, double std) {
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<double> out(n);
        for (auto& v : out) {
            double z;
            do {
                z = dist(rng_);
            } while (std::abs(z) > 2.0);
            v = z * std;
        }
        return out;
    }

private:
    std::mt19937_64 rng_;
    double std_;
};

template <typename T>
Tensor<T> make_param(const ag::Shape& shape, const std::vector<double>& values, bool rg) {
    return Tensor<T>::from(shape, std::vector<T>(values.begin(), values.end()), rg);
}

template <typename T>
void add_linear(ParameterSet<T>& ps, Initializer& init, const std::string& name, std::size_t in,
                std::size_t out, bool rg, bool bias = true) {
    ps.add(name + ".weight", make_param<T>({in, out}, init.trunc_normal(in * out), rg));
    if (bias) ps.add(name + ".bias", Tensor<T>::zeros({out}, rg));
}

template <typename T>
void add_norm(ParameterSet<T>& ps, const std::string& name, std::size_t dim, bool rg) {
    ps.add(name + ".weight", Tensor<T>::full({dim}, T(1), rg));
    ps.add(name + ".bias", Tensor<T>::zeros({dim}, rg));
}

std::string block_prefix(std::size_t b) { return "blocks." + std::to_string(b) + "."; }

}  // namespace

template <typename T>
ParameterSet<T> init_params(const ModelConfig& c, std::uint64_t seed, bool rg) {
    c.validate();
    Initializer init(seed, c.init_std);
    ParameterSet<T> ps;
    const std::size_t d = c.embed_dim;
    const std::size_t patch_dim = c.patch_size * c.patch_size * Frames::channels;
    add_linear(ps, init, "patch_embed", patch_dim, d, rg);
    ps.add("cls_token", make_param<T>({1, d}, init.trunc_normal(d), rg));
    const std::size_t n_max = c.grid_height() * c.grid_width();
    ps.add("pos_embed.spatial", make_param<T>({n_max, d}, init.trunc_normal(n_max * d), rg));
    ps.add("pos_embed.temporal",
           make_param<T>({c.max_frames, d}, init.trunc_normal(c.max_frames * d), rg));
    for (std::size_t b = 0; b < c.depth; ++b) {
        const std::string p = block_prefix(b);
        add_norm(ps, p + "norm1", d, rg);
        for (const char* m : {"q", "k", "v", "proj"})
            add_linear(ps, init, p + "temporal_attn." + m, d, d, rg);
        add_norm(ps, p + "norm2", d, rg);
        for (const char* m : {"q", "k", "v", "proj"})
            add_linear(ps, init, p + "spatial_attn." + m, d, d, rg);
        add_norm(ps, p + "norm3", d, rg);
        add_linear(ps, init, p + "mlp.fc1", d, d * c.mlp_ratio, rg);
        add_linear(ps, init, p + "mlp.fc2", d * c.mlp_ratio, d, rg);
    }
    add_norm(ps, "norm", d, rg);
    add_linear(ps, init, "head.fc1", d, c.head_hidden, rg);
    add_linear(ps, init, "head.fc2", c.head_hidden, c.head_hidden, rg);
    add_linear(ps, init, "head.fc3", c.head_hidden, c.head_bottleneck, rg);
    ps.add("head.last.weight",
           make_param<T>({c.head_bottleneck, c.out_dim},
                         init.trunc_normal(c.head_bottleneck * c.out_dim, c.head_init_std), rg));
    return ps;
}

// ---------------------------------------------------------------------------
// positional encodings
// ---------------------------------------------------------------------------

std::vector<double> interpolation_weights(std::size_t target, std::size_t capacity) {
    if (target == 0 || capacity == 0) throw DomainError("interpolation target must be positive");
    std::vector<double> w(target * capacity, 0.0);
    for (std::size_t i = 0; i < target; ++i) {
        double pos;
        if (target == capacity) {
            pos = double(i);
        } else if (target == 1) {
            pos = double(capacity - 1) / 2.0;
        } else {
            pos = double(i * (capacity - 1)) / double(target - 1);
        }
        const auto lo = std::size_t(std::floor(pos));
        const double frac = pos - double(lo);
        w[i * capacity + lo] += 1.0 - frac;
        if (frac > 0.0) w[i * capacity + lo + 1] += frac;
    }
    return w;
}

template <typename T>
Tensor<T> interpolate_temporal(const Tensor<T>& table, std::size_t target) {
    const std::size_t cap = table.dim(0);
    if (target == cap) return table;
    auto w = interpolation_weights(target, cap);
    auto m = Tensor<T>::from({target, cap}, std::vector<T>(w.begin(), w.end()));
    return ag::matmul(m, table);
}

template <typename T>
Tensor<T> interpolate_spatial(const Tensor<T>& table, std::size_t gh, std::size_t gw,
                              std::size_t th, std::size_t tw) {
    if (table.dim(0) != gh * gw) {
        throw ShapeError("spatial table " + ag::to_string(table.shape()) + " is not a " +
                         std::to_string(gh) + "x" + std::to_string(gw) + " grid");
    }
    if (th == gh && tw == gw) return table;
    const auto wy = interpolation_weights(th, gh);
    const auto wx = interpolation_weights(tw, gw);
    std::vector<T> m(th * tw * gh * gw, T(0));
    for (std::size_t y = 0; y < th; ++y) {
        for (std::size_t x = 0; x < tw; ++x) {
            const std::size_t row = (y * tw + x) * gh * gw;
            for (std::size_t sy = 0; sy < gh; ++sy) {
                const double a = wy[y * gh + sy];
                if (a == 0.0) continue;
                for (std::size_t sx = 0; sx < gw; ++sx)
                    m[row + sy * gw + sx] = T(a * wx[x * gw + sx]);
            }
        }
    }
    auto mt = Tensor<T>::from({th * tw, gh * gw}, std::move(m));
    return ag::matmul(mt, table);
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const ParameterSet<T>& ps, const std::string& name) {
    auto y = ag::matmul(x, ps[name + ".weight"]);
    if (ps.contains(name + ".bias")) y = ag::add(y, ps[name + ".bias"]);
    return y;
}

template <typename T>
Tensor<T> norm(const Tensor<T>& x, const ParameterSet<T>& ps, const std::string& name,
               const ModelConfig& c) {
    return ag::layer_norm(x, ps[name + ".weight"], ps[name + ".bias"], T(c.ln_eps));
}

// x: [B, S, D] -> [B, S, D]
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const ParameterSet<T>& ps, const std::string& name,
                         const ModelConfig& c, AttentionTrace<T>* trace) {
    const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
    const std::size_t h = c.num_heads, dh = d / h;
    auto heads = [&](const Tensor<T>& t) {
        auto r = ag::reshape(t, {b, s, h, dh});
        return ag::reshape(ag::permute(r, {0, 2, 1, 3}), {b * h, s, dh});
    };
    auto q = heads(linear(x, ps, name + ".q"));
    auto k = heads(linear(x, ps, name + ".k"));
    auto v = heads(linear(x, ps, name + ".v"));
    auto scores = ag::scale(ag::matmul(q, ag::permute(k, {0, 2, 1})), T(1) / std::sqrt(T(dh)));
    auto attn = ag::softmax(scores);
    if (trace) trace->push_back(attn);
    auto o = ag::matmul(attn, v);
    o = ag::reshape(ag::permute(ag::reshape(o, {b, h, s, dh}), {0, 2, 1, 3}), {b, s, d});
    return linear(o, ps, name + ".proj");
}

template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const ParameterSet<T>& ps, const std::string& name) {
    return linear(ag::gelu(linear(x, ps, name + ".fc1")), ps, name + ".fc2");
}

}  // namespace

template <typename T>
TokenGrid<T> patchify_and_embed(const Frames& view, const ParameterSet<T>& ps,
                                const ModelConfig& c) {
    const std::size_t p = c.patch_size;
    if (view.frames == 0) throw ShapeError("view has no frames");
    if (view.height % p != 0 || view.width % p != 0) {
        throw ShapeError("view " + std::to_string(view.height) + "x" + std::to_string(view.width) +
                         " is not divisible by patch size " + std::to_string(p));
    }
    if (view.height > c.max_height || view.width > c.max_width || view.frames > c.max_frames) {
        throw ShapeError("view " + std::to_string(view.frames) + "x" +
                         std::to_string(view.height) + "x" + std::to_string(view.width) +
                         " exceeds the positional encoding capacity");
    }
    const std::size_t gh = view.height / p, gw = view.width / p, n = gh * gw, t_len = view.frames;
    const std::size_t patch_dim = p * p * Frames::channels;

    const double inv_std = 1.0 / c.pixel_std;
    std::vector<T> raw(t_len * n * patch_dim);
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t gy = 0; gy < gh; ++gy) {
            for (std::size_t gx = 0; gx < gw; ++gx) {
                T* dst = raw.data() + ((t * n) + gy * gw + gx) * patch_dim;
                for (std::size_t py = 0; py < p; ++py) {
                    for (std::size_t px = 0; px < p; ++px) {
                        for (std::size_t ch = 0; ch < Frames::channels; ++ch)
                            *dst++ = T((view.at(t, ch, gy * p + py, gx * p + px) - c.pixel_mean) * inv_std);
                    }
                }
            }
        }
    }
    auto patches = Tensor<T>::from({t_len, n, patch_dim}, std::move(raw));
    auto tokens = linear(patches, ps, "patch_embed");

    auto spatial = interpolate_spatial(ps["pos_embed.spatial"], c.grid_height(), c.grid_width(),
                                       gh, gw);
    auto temporal = interpolate_temporal(ps["pos_embed.temporal"], t_len);
    tokens = ag::add(tokens, spatial);
    tokens = ag::add(tokens, ag::reshape(temporal, {t_len, 1, c.embed_dim}));
    return TokenGrid<T>{ps["cls_token"], tokens, gh, gw};
}

template <typename T>
TokenGrid<T> encoder_block_forward(const TokenGrid<T>& in, const ParameterSet<T>& ps,
                                   const ModelConfig& c, std::size_t block,
                                   AttentionTrace<T>* trace) {
    const std::string p = block_prefix(block);
    const std::size_t t_len = in.frames(), n = in.patches_per_frame(), d = c.embed_dim;
    if (in.patches.dim(2) != d || in.cls.numel() != d) {
        throw ShapeError("token grid width does not match embed_dim");
    }

    // temporal attention: sequences of T tokens at each spatial index
    auto xt = ag::permute(in.patches, {1, 0, 2});
    xt = ag::add(xt, self_attention(norm(xt, ps, p + "norm1", c), ps, p + "temporal_attn", c,
                                    trace));
    auto x = ag::permute(xt, {1, 0, 2});

    // spatial attention: class token plus the N patches of each frame
    auto cls3 = ag::reshape(in.cls, {1, 1, d});
    auto seq = ag::concat(std::vector<Tensor<T>>{ag::concat(std::vector<Tensor<T>>(t_len, cls3), 0), x}, 1);
    seq = ag::add(seq, self_attention(norm(seq, ps, p + "norm2", c), ps, p + "spatial_attn", c,
                                      trace));
    auto cls = ag::mean(ag::slice(seq, 1, 0, 1), 0);  // [1, D]
    x = ag::slice(seq, 1, 1, n + 1);

    x = ag::add(x, mlp(norm(x, ps, p + "norm3", c), ps, p + "mlp"));
    cls = ag::add(cls, mlp(norm(cls, ps, p + "norm3", c), ps, p + "mlp"));
    return TokenGrid<T>{cls, x, in.grid_height, in.grid_width};
}

template <typename T>
Tensor<T> encode(const TokenGrid<T>& tokens, const ParameterSet<T>& ps, const ModelConfig& c,
                 AttentionTrace<T>* trace) {
    TokenGrid<T> z = tokens;
    for (std::size_t b = 0; b < c.depth; ++b) z = encoder_block_forward(z, ps, c, b, trace);
    return norm(z.cls, ps, "norm", c);
}

template <typename T>
Tensor<T> projection_head_forward(const Tensor<T>& cls, const ParameterSet<T>& ps,
                                  const ModelConfig& c, Tensor<T>* bottleneck) {
    if (cls.numel() != c.embed_dim) throw ShapeError("class token width does not match embed_dim");
    auto h = ag::gelu(linear(ag::reshape(cls, {1, c.embed_dim}), ps, "head.fc1"));
    h = ag::gelu(linear(h, ps, "head.fc2"));
    auto z = ag::l2_normalize(linear(h, ps, "head.fc3"));
    if (bottleneck) *bottleneck = z;
    return linear(z, ps, "head.last");
}

template <typename T>
Tensor<T> extract_features(const Frames& view, const ParameterSet<T>& ps, const ModelConfig& c) {
    return encode(patchify_and_embed(view, ps, c), ps, c);
}

template <typename T>
Tensor<T> model_forward(const Frames& view, const ParameterSet<T>& ps, const ModelConfig& c,
                        AttentionTrace<T>* trace) {
    return projection_head_forward(encode(patchify_and_embed(view, ps, c), ps, c, trace), ps, c);
}

#define ENDOVID_INSTANTIATE_MODEL(T)                                                            \
    template ParameterSet<T> init_params<T>(const ModelConfig&, std::uint64_t, bool);            \
    template Tensor<T> interpolate_temporal<T>(const Tensor<T>&, std::size_t);                   \
    template Tensor<T> interpolate_spatial<T>(const Tensor<T>&, std::size_t, std::size_t,        \
                                              std::size_t, std::size_t);                         \
    template TokenGrid<T> patchify_and_embed<T>(const Frames&, const ParameterSet<T>&,           \
                                                const ModelConfig&);                             \
    template TokenGrid<T> encoder_block_forward<T>(const TokenGrid<T>&, const ParameterSet<T>&,  \
                                                   const ModelConfig&, std::size_t,              \
                                                   AttentionTrace<T>*);                          \
    template Tensor<T> encode<T>(const TokenGrid<T>&, const ParameterSet<T>&,                    \
                                 const ModelConfig&, AttentionTrace<T>*);                        \
    template Tensor<T> projection_head_forward<T>(const Tensor<T>&, const ParameterSet<T>&,      \
                                                  const ModelConfig&, Tensor<T>*);               \
    template Tensor<T> extract_features<T>(const Frames&, const ParameterSet<T>&,                \
                                           const ModelConfig&);                                  \
    template Tensor<T> model_forward<T>(const Frames&, const ParameterSet<T>&,                   \
                                        const ModelConfig&, AttentionTrace<T>*);

ENDOVID_INSTANTIATE_MODEL(float)
ENDOVID_INSTANTIATE_MODEL(double)

}  // namespace endovid::model
