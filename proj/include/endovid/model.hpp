#pragma once

// Divided space-time attention video transformer with a projection head.
//
// Token layout: a view with T frames of H x W pixels becomes T*N patch tokens
// (N = H/P * W/P) stored as a [T, N, D] tensor, plus a single [1, D] class token.
// Each encoder block runs
//   temporal attention over the T tokens sharing a spatial index,
//   spatial attention over the class token and the N tokens of each frame,
//   a token-wise MLP,
// every stage pre-normalised and residual. The class token joins spatial
// attention once per frame, is averaged over frames afterwards and skips
// temporal attention.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "endovid/frames.hpp"
#include "endovid/params.hpp"
#include "endovid/tensor.hpp"

namespace endovid::model {

struct ModelConfig {
    std::size_t patch_size = 4;
    std::size_t embed_dim = 64;
    std::size_t depth = 4;
    std::size_t num_heads = 4;
    std::size_t max_frames = 8;   // temporal table capacity
    std::size_t max_height = 32;  // spatial table capacity, pixels
    std::size_t max_width = 32;
    std::size_t mlp_ratio = 4;
    std::size_t head_hidden = 128;
    std::size_t head_bottleneck = 32;
    std::size_t out_dim = 256;
    double init_std = 0.02;
    double head_init_std = 0.02;  // last projection layer
    double ln_eps = 1e-6;
    double pixel_mean = 0.45;  // inputs enter as (x - mean) / std
    double pixel_std = 0.225;

    std::size_t grid_height() const { return max_height / patch_size; }
    std::size_t grid_width() const { return max_width / patch_size; }
    std::size_t head_dim() const { return embed_dim / num_heads; }

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;

    /// CPU-sized default.
    static ModelConfig desk();
    /// Smallest configuration that still exercises every code path (gradient checks).
    static ModelConfig tiny();
    /// Published scale: 12 blocks, D=768, P=16, 224x224, K=65536.
    static ModelConfig full();
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

template <typename T>
ParameterSet<T> init_params(const ModelConfig& config, std::uint64_t seed, bool requires_grad);

template <typename T>
struct TokenGrid {
    ag::Tensor<T> cls;      // [1, D]
    ag::Tensor<T> patches;  // [T, N, D]
    std::size_t grid_height = 0;
    std::size_t grid_width = 0;

    std::size_t frames() const { return patches.dim(0); }
    std::size_t patches_per_frame() const { return patches.dim(1); }
    std::size_t token_count() const { return frames() * patches_per_frame() + 1; }
    /// Logical (T, N+1, D) extent seen by spatial attention.
    ag::Shape shape() const { return {frames(), patches_per_frame() + 1, patches.dim(2)}; }
};

/// Row weights of a 1-D linear resampling from `capacity` entries onto `target`
/// entries with both ends aligned. Returned as a [target, capacity] matrix.
std::vector<double> interpolation_weights(std::size_t target, std::size_t capacity);

/// Temporal table [T_max, D] resampled to [target, D].
template <typename T>
ag::Tensor<T> interpolate_temporal(const ag::Tensor<T>& table, std::size_t target);

/// Spatial table [gh*gw, D] laid out as a gh x gw grid, resampled per axis to
/// [th*tw, D] by bilinear interpolation.
template <typename T>
ag::Tensor<T> interpolate_spatial(const ag::Tensor<T>& table, std::size_t grid_height,
                                  std::size_t grid_width, std::size_t target_height,
                                  std::size_t target_width);

/// Patch embedding plus interpolated spatial and temporal encodings.
template <typename T>
TokenGrid<T> patchify_and_embed(const Frames& view, const ParameterSet<T>& params,
                                const ModelConfig& config);

/// Attention probabilities recorded during a forward pass, one tensor per
/// attention call with shape [sequences*heads, S, S].
template <typename T>
using AttentionTrace = std::vector<ag::Tensor<T>>;

template <typename T>
TokenGrid<T> encoder_block_forward(const TokenGrid<T>& tokens, const ParameterSet<T>& params,
                                   const ModelConfig& config, std::size_t block,
                                   AttentionTrace<T>* trace = nullptr);

/// All encoder blocks then the final LayerNorm; returns the class token [1, D].
template <typename T>
ag::Tensor<T> encode(const TokenGrid<T>& tokens, const ParameterSet<T>& params,
                     const ModelConfig& config, AttentionTrace<T>* trace = nullptr);

/// Class token [1, D] -> logits [1, K]. When `bottleneck` is given it receives
/// the L2-normalised bottleneck activation.
template <typename T>
ag::Tensor<T> projection_head_forward(const ag::Tensor<T>& cls, const ParameterSet<T>& params,
                                      const ModelConfig& config,
                                      ag::Tensor<T>* bottleneck = nullptr);

/// Backbone features of one view: the class token after the final LayerNorm, [1, D].
template <typename T>
ag::Tensor<T> extract_features(const Frames& view, const ParameterSet<T>& params,
                               const ModelConfig& config);

/// Full model: view -> logits f, [1, K].
template <typename T>
ag::Tensor<T> model_forward(const Frames& view, const ParameterSet<T>& params,
                            const ModelConfig& config, AttentionTrace<T>* trace = nullptr);

}  // namespace endovid::model
