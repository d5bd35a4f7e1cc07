#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vla/kernels.hpp"
#include "vla/scene.hpp"
#include "vla/tensor.hpp"

namespace vla {

/// Learnable context tokens shared across classes plus frozen class-name
/// tokens. Only `context` is trainable.
struct PromptSet {
    Tensor context;       // M x d
    Tensor class_tokens;  // C_k x d, frozen
    std::vector<std::string> class_names;

    std::size_t context_tokens() const { return context.dim(0); }
    std::size_t embed_dim() const { return context.dim(1); }
    std::size_t num_classes() const { return class_tokens.dim(0); }
    void validate() const;
};

struct ClassEmbeddingTable {
    Tensor embeddings;  // C_k x d, row i = embedding of class i
    bool normalized = false;

    std::size_t num_classes() const { return embeddings.dim(0); }
    std::size_t embed_dim() const { return embeddings.dim(1); }
};

/// Frozen encoder abstraction so fixture files can stand in for a real VLM.
/// Implementations are deterministic and carry no trainable state.
class EncoderProvider {
public:
    virtual ~EncoderProvider() = default;
    /// Token sequence (M+1) x d -> embedding of width d.
    virtual Tensor encode_text(const Tensor& tokens) const = 0;
    virtual Tensor encode_image(const SceneBundle& scene) const = 0;
    /// True when encode_* outputs are already unit-norm and must not be
    /// re-normalized (keeps recorded fixtures bit-exact).
    virtual bool pre_normalized() const = 0;
};

/// Desk-scale stand-in for the frozen VLM: text = mean over token rows then
/// L2 normalization (differentiable, so prompt learning is exercised);
/// image = L2-normalized fixed projection of the mean pixel feature.
class SyntheticEncoder : public EncoderProvider {
public:
    SyntheticEncoder(std::size_t embed_dim, std::size_t feature_dim, std::uint64_t seed);
    Tensor encode_text(const Tensor& tokens) const override;
    Tensor encode_image(const SceneBundle& scene) const override;
    bool pre_normalized() const override { return true; }

private:
    std::size_t embed_dim_;
    std::size_t feature_dim_;
    Tensor image_proj_;  // d x d_v
};

/// Replays recorded tables: class embeddings keyed by the trailing class
/// token of the input sequence, image embeddings keyed by scene name.
class FixtureEncoder : public EncoderProvider {
public:
    FixtureEncoder(Tensor class_tokens, Tensor class_embeddings,
                   std::vector<std::string> class_names);
    void set_image_table(Tensor image_embeddings, std::vector<std::string> scene_names);

    Tensor encode_text(const Tensor& tokens) const override;
    Tensor encode_image(const SceneBundle& scene) const override;
    bool pre_normalized() const override { return true; }

private:
    Tensor class_tokens_;
    Tensor class_embeddings_;
    std::vector<std::string> class_names_;
    Tensor image_embeddings_;
    std::vector<std::string> scene_names_;
};

/// Fixture table on disk: one VLT file plus a sidecar manifest mapping names
/// to row indices (`<name> = <row>` lines).
struct NamedTable {
    Tensor rows;
    std::vector<std::string> names;
};
void save_named_table(const std::filesystem::path& vlt_path, const NamedTable& table);
NamedTable load_named_table(const std::filesystem::path& vlt_path);

/// Build a PromptSet: context from a seeded Gaussian (sigma 0.02), class
/// tokens from `token_source` when given, otherwise from a seeded hash of
/// each class name expanded to d dims and normalized.
PromptSet build_prompts(const std::vector<std::string>& class_names, std::size_t context_tokens,
                        std::size_t embed_dim, std::uint64_t seed,
                        const NamedTable* token_source = nullptr);

/// Per-class text embeddings: encode [context rows || class token i].
ClassEmbeddingTable encode_class_embeddings(const PromptSet& prompts,
                                            const EncoderProvider& provider);

/// Unit-norm global image embedding for one scene.
Tensor encode_image_global(const SceneBundle& scene, const EncoderProvider& provider);

// ---------------------------------------------------------------------------
// Differentiable synthetic text encoding used inside the training graph.
// Same math as SyntheticEncoder::encode_text applied to every class.
// ---------------------------------------------------------------------------
struct TextEncodeCache {
    NormalizeCache norm;
    std::size_t context_rows = 0;
};
/// Returns the C_k x d table of normalized embeddings.
Tensor encode_table_forward(const Tensor& context, const Tensor& class_tokens,
                            TextEncodeCache& cache);
/// Adjoint: gradient of the table back to the context tokens (M x d).
Tensor encode_table_backward(const Tensor& d_table, const TextEncodeCache& cache);

}  // namespace vla
