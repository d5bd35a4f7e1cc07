#include "vla/embeddings.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "vla/rng.hpp"
#include "vla/vlt_io.hpp"

namespace vla {

void PromptSet::validate() const {
    if (context.rank() != 2 || class_tokens.rank() != 2) {
        throw std::invalid_argument("PromptSet: context and class tokens must be rank 2");
    }
    if (context.dim(1) != class_tokens.dim(1)) {
        throw std::invalid_argument("PromptSet: context width " + std::to_string(context.dim(1)) +
                                    " != class token width " + std::to_string(class_tokens.dim(1)));
    }
    if (class_names.size() != class_tokens.dim(0)) {
        throw std::invalid_argument("PromptSet: class name count mismatch");
    }
    std::set<std::string> seen;
    for (const auto& n : class_names) {
        if (n.empty()) throw std::invalid_argument("PromptSet: empty class name");
        if (!seen.insert(n).second) {
            throw std::invalid_argument("PromptSet: duplicate class name `" + n + "`");
        }
    }
}

SyntheticEncoder::SyntheticEncoder(std::size_t embed_dim, std::size_t feature_dim,
                                   std::uint64_t seed)
    : embed_dim_(embed_dim), feature_dim_(feature_dim), image_proj_({embed_dim, feature_dim}) {
    Rng rng(seed ^ 0x76c1a9d402ull);
    for (std::size_t i = 0; i < image_proj_.size(); ++i) {
        image_proj_[i] = rng.gaussian() / std::sqrt(static_cast<double>(feature_dim));
    }
}

Tensor SyntheticEncoder::encode_text(const Tensor& tokens) const {
    if (tokens.rank() != 2 || tokens.dim(1) != embed_dim_) {
        throw std::invalid_argument("SyntheticEncoder: token sequence width " +
                                    std::to_string(tokens.rank() == 2 ? tokens.dim(1) : 0) +
                                    " does not match encoder width " + std::to_string(embed_dim_));
    }
    const std::size_t rows = tokens.dim(0), d = embed_dim_;
    Tensor out({d});
    for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < rows; ++i) acc += tokens.at(i, j);
        out[j] = acc / static_cast<double>(rows);
    }
    l2_normalize_inplace(out.values());
    return out;
}

Tensor SyntheticEncoder::encode_image(const SceneBundle& scene) const {
    if (scene.feature_dim() != feature_dim_) {
        throw std::invalid_argument("SyntheticEncoder: scene feature width " +
                                    std::to_string(scene.feature_dim()) +
                                    " does not match encoder width " +
                                    std::to_string(feature_dim_));
    }
    const std::size_t n = scene.grid_h() * scene.grid_w();
    std::vector<double> mean(feature_dim_, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t c = 0; c < feature_dim_; ++c) {
            mean[c] += scene.pixel_features[p * feature_dim_ + c];
        }
    }
    for (double& v : mean) v /= static_cast<double>(n);
    Tensor out({embed_dim_});
    for (std::size_t i = 0; i < embed_dim_; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < feature_dim_; ++c) acc += image_proj_.at(i, c) * mean[c];
        out[i] = acc;
    }
    l2_normalize_inplace(out.values());
    return out;
}

FixtureEncoder::FixtureEncoder(Tensor class_tokens, Tensor class_embeddings,
                               std::vector<std::string> class_names)
    : class_tokens_(std::move(class_tokens)),
      class_embeddings_(std::move(class_embeddings)),
      class_names_(std::move(class_names)) {
    if (class_tokens_.dim(0) != class_embeddings_.dim(0) ||
        class_tokens_.dim(0) != class_names_.size()) {
        throw std::invalid_argument("FixtureEncoder: table row counts disagree");
    }
}

void FixtureEncoder::set_image_table(Tensor image_embeddings, std::vector<std::string> scene_names) {
    if (image_embeddings.dim(0) != scene_names.size()) {
        throw std::invalid_argument("FixtureEncoder: image table row count mismatch");
    }
    image_embeddings_ = std::move(image_embeddings);
    scene_names_ = std::move(scene_names);
}

Tensor FixtureEncoder::encode_text(const Tensor& tokens) const {
    if (tokens.rank() != 2 || tokens.dim(1) != class_tokens_.dim(1)) {
        throw std::invalid_argument("FixtureEncoder: token width mismatch");
    }
    // The class token is the trailing row of the prompt sequence.
    const std::size_t last = tokens.dim(0) - 1;
    const std::size_t d = tokens.dim(1);
    for (std::size_t i = 0; i < class_tokens_.dim(0); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < d; ++j) {
            if (tokens.at(last, j) != class_tokens_.at(i, j)) {
                match = false;
                break;
            }
        }
        if (match) {
            Tensor out({d});
            for (std::size_t j = 0; j < d; ++j) out[j] = class_embeddings_.at(i, j);
            return out;
        }
    }
    throw std::runtime_error("FixtureEncoder: trailing class token not found in fixture table");
}

Tensor FixtureEncoder::encode_image(const SceneBundle& scene) const {
    for (std::size_t i = 0; i < scene_names_.size(); ++i) {
        if (scene_names_[i] == scene.name) {
            Tensor out({image_embeddings_.dim(1)});
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = image_embeddings_.at(i, j);
            return out;
        }
    }
    throw std::runtime_error("FixtureEncoder: no image embedding recorded for scene `" +
                             scene.name + "`");
}

void save_named_table(const std::filesystem::path& vlt_path, const NamedTable& table) {
    if (table.rows.dim(0) != table.names.size()) {
        throw std::invalid_argument("save_named_table: name count mismatch");
    }
    write_vlt(vlt_path, table.rows);
    Manifest m;
    for (std::size_t i = 0; i < table.names.size(); ++i) {
        m.emplace_back(table.names[i], std::to_string(i));
    }
    auto manifest_path = vlt_path;
    manifest_path += ".manifest";
    write_manifest(manifest_path, m);
}

NamedTable load_named_table(const std::filesystem::path& vlt_path) {
    NamedTable t;
    t.rows = read_vlt(vlt_path);
    auto manifest_path = vlt_path;
    manifest_path += ".manifest";
    const Manifest m = read_manifest(manifest_path);
    if (m.size() != t.rows.dim(0)) {
        throw std::runtime_error("load_named_table: manifest row count mismatch for " +
                                 vlt_path.string());
    }
    t.names.assign(m.size(), "");
    for (const auto& [name, row_text] : m) {
        const std::size_t row = std::stoul(row_text);
        if (row >= t.names.size()) {
            throw std::runtime_error("load_named_table: row index out of range in manifest");
        }
        t.names[row] = name;
    }
    return t;
}

PromptSet build_prompts(const std::vector<std::string>& class_names, std::size_t context_tokens,
                        std::size_t embed_dim, std::uint64_t seed,
                        const NamedTable* token_source) {
    if (class_names.empty()) throw std::invalid_argument("build_prompts: no classes");
    if (context_tokens < 1) throw std::invalid_argument("build_prompts: need at least 1 context token");
    if (embed_dim < 2) throw std::invalid_argument("build_prompts: embed_dim must be >= 2");

    PromptSet p;
    p.class_names = class_names;
    p.context = Tensor({context_tokens, embed_dim});
    Rng rng(seed);
    for (std::size_t i = 0; i < p.context.size(); ++i) p.context[i] = rng.gaussian(0.0, 0.02);

    p.class_tokens = Tensor({class_names.size(), embed_dim});
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        if (token_source != nullptr) {
            bool found = false;
            for (std::size_t r = 0; r < token_source->names.size(); ++r) {
                if (token_source->names[r] == class_names[c]) {
                    if (token_source->rows.dim(1) != embed_dim) {
                        throw std::invalid_argument("build_prompts: fixture token width " +
                                                    std::to_string(token_source->rows.dim(1)) +
                                                    " != embed_dim " + std::to_string(embed_dim));
                    }
                    for (std::size_t j = 0; j < embed_dim; ++j) {
                        p.class_tokens.at(c, j) = token_source->rows.at(r, j);
                    }
                    found = true;
                    break;
                }
            }
            if (!found) {
                throw std::runtime_error("build_prompts: class `" + class_names[c] +
                                         "` missing from fixture token table");
            }
        } else {
            Rng token_rng(stable_hash(class_names[c]) ^ (seed * 0x9e3779b97f4a7c15ULL));
            for (std::size_t j = 0; j < embed_dim; ++j) p.class_tokens.at(c, j) = token_rng.gaussian();
            l2_normalize_inplace(p.class_tokens.row(c));
        }
    }
    p.validate();
    return p;
}

ClassEmbeddingTable encode_class_embeddings(const PromptSet& prompts,
                                            const EncoderProvider& provider) {
    const std::size_t c_k = prompts.num_classes();
    const std::size_t m = prompts.context_tokens();
    const std::size_t d = prompts.embed_dim();

    ClassEmbeddingTable table;
    table.embeddings = Tensor({c_k, d});
    for (std::size_t c = 0; c < c_k; ++c) {
        Tensor seq({m + 1, d});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < d; ++j) seq.at(i, j) = prompts.context.at(i, j);
        }
        for (std::size_t j = 0; j < d; ++j) seq.at(m, j) = prompts.class_tokens.at(c, j);

        Tensor e = provider.encode_text(seq);
        if (e.size() != d) {
            throw std::runtime_error("encode_class_embeddings: provider returned width " +
                                     std::to_string(e.size()) + ", expected " + std::to_string(d));
        }
        if (!provider.pre_normalized()) l2_normalize_inplace(e.values());
        for (std::size_t j = 0; j < d; ++j) table.embeddings.at(c, j) = e[j];
    }
    table.normalized = true;
    return table;
}

Tensor encode_image_global(const SceneBundle& scene, const EncoderProvider& provider) {
    Tensor e = provider.encode_image(scene);
    if (!provider.pre_normalized()) l2_normalize_inplace(e.values());
    return e;
}

Tensor encode_table_forward(const Tensor& context, const Tensor& class_tokens,
                            TextEncodeCache& cache) {
    const std::size_t m = context.dim(0), d = context.dim(1), c_k = class_tokens.dim(0);
    if (class_tokens.dim(1) != d) {
        throw std::invalid_argument("encode_table_forward: width mismatch");
    }
    cache.context_rows = m;
    // Shared context sum, reused for every class.
    std::vector<double> ctx_sum(d, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) ctx_sum[j] += context.at(i, j);
    }
    // Sum-then-divide in the same order as SyntheticEncoder::encode_text so
    // both paths produce bit-identical tables.
    Tensor means({c_k, d});
    const double rows = static_cast<double>(m + 1);
    for (std::size_t c = 0; c < c_k; ++c) {
        for (std::size_t j = 0; j < d; ++j) {
            means.at(c, j) = (ctx_sum[j] + class_tokens.at(c, j)) / rows;
        }
    }
    return l2_normalize_forward(means, cache.norm);
}

Tensor encode_table_backward(const Tensor& d_table, const TextEncodeCache& cache) {
    Tensor d_means = l2_normalize_backward(d_table, cache.norm);
    const std::size_t c_k = d_means.dim(0), d = d_means.dim(1), m = cache.context_rows;
    const double inv = 1.0 / static_cast<double>(m + 1);
    // Every context row receives the same share: sum over classes / (M+1).
    Tensor d_context({m, d});
    std::vector<double> col(d, 0.0);
    for (std::size_t c = 0; c < c_k; ++c) {
        for (std::size_t j = 0; j < d; ++j) col[j] += d_means.at(c, j) * inv;
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) d_context.at(i, j) = col[j];
    }
    return d_context;
}

}  // namespace vla
