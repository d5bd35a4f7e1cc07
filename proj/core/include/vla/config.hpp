#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace vla {

enum class AlignMode { Pixel, Mask, Both };

AlignMode parse_align_mode(const std::string& text);
std::string align_mode_name(AlignMode mode);

struct SourceFlags {
    bool conf = true;
    bool text = true;
    bool img = true;

    bool all() const { return conf && text && img; }
    bool any() const { return conf || text || img; }
};

SourceFlags parse_sources(const std::string& csv);
std::string sources_name(const SourceFlags& s);

/// Every tunable of the engine, parsed from a line-oriented `key = value`
/// file with CLI flag overrides. Unknown keys are rejected; each run writes
/// the fully resolved config next to its outputs.
struct RunConfig {
    // model
    std::size_t classes = 4;        // known classes C_k
    std::size_t embed_dim = 16;     // text/visual joint width d
    std::size_t feature_dim = 24;   // backbone feature width
    std::size_t query_dim = 16;     // decoder query width
    std::size_t context_tokens = 16;  // learnable context tokens M
    std::size_t heads = 4;
    std::size_t ffn_hidden = 0;     // 0 -> 2 * embed_dim
    double tau_init = 0.07;
    AlignMode align = AlignMode::Both;

    // loss
    double lambda_pixel = 0.5;
    double lambda_mask = 0.5;

    // optimizer / schedule
    double lr = 1e-2;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 8;
    std::size_t iters = 500;

    // fusion
    double alpha = 0.7;
    double beta = 0.2;
    double gamma = 0.1;
    bool raw_sim = false;
    SourceFlags sources;
    bool renormalize_sources = false;
    double component_threshold = 0.5;

    // synthetic scenes
    std::uint64_t seed = 1234;
    std::size_t scenes = 64;
    double train_fraction = 0.75;
    std::size_t grid_h = 16;
    std::size_t grid_w = 16;
    std::size_t stride = 4;
    std::size_t queries = 8;
    std::size_t ood_prototypes = 3;
    double noise_sigma = 0.05;
    double blob_min_radius = 1.5;
    double blob_max_radius = 3.5;
    std::size_t max_blobs = 2;
    double margin_lo = 1.9;
    double margin_hi = 4.0;
    double claim_prob = 0.15;
    double claim_margin_lo = 0.8;
    double claim_margin_hi = 2.4;
    double logit_noise = 0.05;

    std::size_t ffn_hidden_or_default() const {
        return ffn_hidden == 0 ? 2 * embed_dim : ffn_hidden;
    }

    /// Apply `key = value`; throws on unknown key or malformed value.
    void set(const std::string& key, const std::string& value);
    /// Render in a fixed key order (the resolved-config format).
    std::string to_text() const;
    void validate() const;
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);

}  // namespace vla
