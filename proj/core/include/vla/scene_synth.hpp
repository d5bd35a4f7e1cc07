#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vla/config.hpp"
#include "vla/scene.hpp"
#include "vla/tensor.hpp"

namespace vla {

/// Desk-scale scene generator settings, all derived from the run config.
struct SynthConfig {
    std::uint64_t seed = 1234;
    std::size_t grid_h = 16, grid_w = 16, stride = 4;
    std::size_t classes = 4;      // known classes
    std::size_t n_ood = 3;        // held-out anomaly prototypes
    std::size_t feature_dim = 24;
    std::size_t query_dim = 16;
    std::size_t embed_dim = 16;
    std::size_t queries = 8;      // region sites + reserved anomaly slots
    std::size_t max_blobs = 2;
    double noise_sigma = 0.05;
    double blob_min_radius = 1.5;
    double blob_max_radius = 3.5;
    double margin_lo = 1.9;
    double margin_hi = 4.0;
    double claim_prob = 0.15;
    double claim_margin_lo = 0.8;
    double claim_margin_hi = 2.4;
    double logit_noise = 0.05;

    static SynthConfig from_run_config(const RunConfig& cfg);
    void validate() const;
    std::size_t region_sites() const { return queries - max_blobs; }
};

/// Per-class anchors sampled once per config seed: class-name tokens for the
/// text side, pixel-feature prototypes (known + held-out OOD) and query
/// prototypes. All unit rows, pairwise cosine < 0.5 by rejection sampling.
struct SynthPrototypes {
    Tensor class_tokens;     // C_k x d
    Tensor feature_protos;   // (C_k + n_ood) x d_v
    Tensor query_protos;     // C_k x d_q
    std::vector<std::string> class_names;
};

SynthPrototypes make_prototypes(const SynthConfig& cfg);

/// Seeded Voronoi class regions, noisy prototype features, injected OOD
/// ellipse blobs with jittered boundaries, peaked class logits (margin drawn
/// per scene) and block masks. Pure function of (config, scene index).
/// `blob_cells_log`, when given, receives each scene's injected blob area in
/// feature cells.
std::vector<SceneBundle> generate(const SynthConfig& cfg, std::size_t n_scenes,
                                  std::vector<std::size_t>* blob_cells_log = nullptr);

/// Deterministic seeded split; every eval scene keeps at least one OOD blob.
/// Returns (train indices, eval indices), each ascending.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_scenes(
    const std::vector<SceneBundle>& scenes, double train_fraction, std::uint64_t seed);

}  // namespace vla
