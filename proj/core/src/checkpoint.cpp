#include "vla/checkpoint.hpp"

#include <stdexcept>

#include "vla/vlt_io.hpp"

namespace vla {

void save_checkpoint(const std::filesystem::path& dir, const PromptSet& prompts,
                     const AlignerParams& params, const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "meta.cfg", cfg.to_text());
    save_named_table(dir / "class_tokens.vlt", {prompts.class_tokens, prompts.class_names});

    Manifest manifest;
    manifest.emplace_back("context", "context.vlt");
    write_vlt(dir / "context.vlt", prompts.context);
    for (const auto& [name, tensor] : params.named_tensors()) {
        const std::string file = name + ".vlt";
        manifest.emplace_back(name, file);
        write_vlt(dir / file, *tensor);
    }
    write_manifest(dir / "manifest.txt", manifest);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    Checkpoint ckpt;
    ckpt.config = load_config(dir / "meta.cfg");

    const NamedTable tokens = load_named_table(dir / "class_tokens.vlt");
    ckpt.prompts.class_tokens = tokens.rows;
    ckpt.prompts.class_names = tokens.names;

    const Manifest manifest = read_manifest(dir / "manifest.txt");
    ckpt.prompts.context = read_vlt(dir / manifest_get(manifest, "context"));
    ckpt.prompts.validate();

    const RunConfig& cfg = ckpt.config;
    ckpt.params = AlignerParams::init(cfg.feature_dim, cfg.query_dim, cfg.embed_dim, cfg.heads,
                                      cfg.ffn_hidden_or_default(), cfg.tau_init, cfg.align,
                                      cfg.seed);
    for (auto& [name, tensor] : ckpt.params.named_tensors()) {
        const Tensor loaded = read_vlt(dir / manifest_get(manifest, name));
        if (!loaded.same_shape(*tensor)) {
            throw std::runtime_error("load_checkpoint: tensor `" + name + "` has shape " +
                                     loaded.shape_str() + ", expected " + tensor->shape_str());
        }
        *tensor = loaded;
    }
    return ckpt;
}

}  // namespace vla
