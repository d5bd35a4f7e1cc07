#pragma once

#include <cstddef>
#include <vector>

#include "vla/aligner.hpp"
#include "vla/config.hpp"
#include "vla/embeddings.hpp"
#include "vla/scene.hpp"
#include "vla/tensor.hpp"

namespace vla {

/// Per-class score maps from the three sources plus the fused anomaly map.
struct ScoreStack {
    Tensor s_conf;   // C_k x H x W, in [0,1]
    Tensor s_text;   // C_k x H x W, in [0,1] (normalized mode) or [-1,1] (raw)
    Tensor s_img;    // C_k, spatially constant prior
    Tensor s_final;  // H x W, higher = more anomalous
    double alpha = 0.7;
    double beta = 0.2;
    double gamma = 0.1;
};

/// Per-class detector confidence: sum over queries of class softmax times
/// mask sigmoid, clamped to [0,1] so overlapping queries keep the fusion
/// bound valid.
Tensor detector_confidence(const SceneBundle& scene);

/// Bilinear resampling (align-corners false); exact identity at equal sizes.
Tensor bilinear_upsample(const Tensor& plane, std::size_t out_h, std::size_t out_w);

/// Cosine similarity of every aligned location against each class embedding,
/// softmax-normalized over classes with the trained tau (or left raw), then
/// upsampled to the output resolution.
Tensor text_similarity(const Tensor& v_align, const ClassEmbeddingTable& table,
                       std::size_t out_h, std::size_t out_w, double tau, bool raw_sim = false);

/// Global image embedding against each class embedding, same normalization.
Tensor image_similarity(const SceneBundle& scene, const ClassEmbeddingTable& table,
                        const EncoderProvider& provider, double tau, bool raw_sim = false);

/// S_final(p) = 1 - max_k (alpha * conf + beta * text + gamma * img_k).
Tensor fuse(const Tensor& s_conf, const Tensor& s_text, const Tensor& s_img, double alpha,
            double beta, double gamma);

/// Fusion restricted to a source subset. With renormalize, surviving weights
/// are rescaled so they sum to alpha+beta+gamma of the full design.
Tensor ablate(const ScoreStack& stack, const SourceFlags& enabled, bool renormalize);

/// Full multi-source scoring of one scene under the run configuration.
ScoreStack score_scene(const SceneBundle& scene, const PromptSet& prompts,
                       const ClassEmbeddingTable& table, const AlignerParams& params,
                       const EncoderProvider& provider, const RunConfig& cfg);

}  // namespace vla
