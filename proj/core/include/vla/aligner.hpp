#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vla/config.hpp"
#include "vla/embeddings.hpp"
#include "vla/kernels.hpp"
#include "vla/scene.hpp"
#include "vla/tensor.hpp"

namespace vla {

struct FfnWeights {
    Tensor w1, b1, w2, b2;  // d x hidden, hidden, hidden x d, d
};

struct LayerNormParams {
    Tensor gain, bias;  // d each
};

/// All trainable parameters of the aligner plus the temperature, stored as
/// log(tau) so tau stays positive throughout optimization. The mask-only /
/// pixel-only modes omit the unused stage entirely.
struct AlignerParams {
    std::size_t embed_dim = 0;
    std::size_t heads = 1;
    std::size_t ffn_hidden = 0;
    AlignMode mode = AlignMode::Both;

    Tensor pixel_proj;  // d_v x d, always present
    AttentionWeights pixel_attn;
    FfnWeights pixel_ffn;
    LayerNormParams norm1, norm2;

    Tensor mask_query_proj;  // d_q x d
    AttentionWeights mask_attn;
    FfnWeights mask_ffn;
    LayerNormParams norm3, norm4;

    Tensor log_tau;  // shape {1}

    static AlignerParams init(std::size_t feature_dim, std::size_t query_dim,
                              std::size_t embed_dim, std::size_t heads, std::size_t ffn_hidden,
                              double tau_init, AlignMode mode, std::uint64_t seed);
    /// Same shapes, all zeros; the gradient container.
    static AlignerParams zeros_like(const AlignerParams& p);

    double tau() const;
    bool has_pixel_stage() const { return mode != AlignMode::Mask; }
    bool has_mask_stage() const { return mode != AlignMode::Pixel; }

    /// Mode-aware named enumeration of every trainable tensor, in a fixed
    /// order shared by optimizer state, checkpoints and gradient checks.
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

/// L2-normalized aligned features for one scene.
struct AlignedFeatures {
    Tensor v_align;  // h x w x d
    Tensor q_align;  // N_q x d (empty in pixel-only mode)
};

/// Pixel-level alignment: project features to width d, run one self-attention
/// block over [pixel tokens || text tokens] (no positional terms), return the
/// pixel-token outputs L2-normalized per location. In mask-only mode the
/// attention block is absent and the projected features are normalized as-is.
Tensor pixel_align(const SceneBundle& scene, const PromptSet& prompts,
                   const ClassEmbeddingTable& table, const AlignerParams& params);

/// Mask-level alignment: one cross-attention block with projected decoder
/// queries attending over the pixel-aligned tokens; rows L2-normalized.
Tensor mask_align(const Tensor& pixel_aligned, const SceneBundle& scene,
                  const AlignerParams& params);

AlignedFeatures align_scene(const SceneBundle& scene, const PromptSet& prompts,
                            const ClassEmbeddingTable& table, const AlignerParams& params);

/// Mean over non-ignore locations of the InfoNCE term
/// -log softmax(sim(v_i, t_{y_i}) / tau) over the class axis.
double loss_pixel(const Tensor& v_align, const ClassEmbeddingTable& table,
                  const std::vector<int>& gt_labels, double tau);

/// Same contrastive form over labeled queries; no-object queries excluded.
double loss_mask(const Tensor& q_align, const ClassEmbeddingTable& table,
                 const std::vector<int>& gt_query_labels, double tau);

struct AlignLossResult {
    double total = 0.0;
    double l_pixel = 0.0;
    double l_mask = 0.0;
    AlignerParams grads;  // gradient w.r.t. every aligner tensor
    Tensor d_context;     // gradient w.r.t. the prompt context tokens
};

/// Combined alignment loss lambda_pixel * L_pixel + lambda_mask * L_mask with
/// analytic gradients for every trainable scalar (aligner tensors, context
/// tokens, log tau). The segmentation loss of the frozen backbone is constant
/// with respect to all of these and is not part of the objective.
AlignLossResult loss_align(const SceneBundle& scene, const PromptSet& prompts,
                           const AlignerParams& params, double lambda_pixel, double lambda_mask,
                           bool compute_grads = true);

}  // namespace vla
