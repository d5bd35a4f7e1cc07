#pragma once

#include <filesystem>

#include "vla/aligner.hpp"
#include "vla/config.hpp"
#include "vla/embeddings.hpp"

namespace vla {

struct Checkpoint {
    RunConfig config;
    PromptSet prompts;
    AlignerParams params;
};

/// Checkpoint directory: meta.cfg (resolved run config), class_tokens.vlt
/// (+ name manifest), manifest.txt mapping tensor names to VLT files, and one
/// VLT file per trainable tensor (context included).
void save_checkpoint(const std::filesystem::path& dir, const PromptSet& prompts,
                     const AlignerParams& params, const RunConfig& cfg);

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace vla
