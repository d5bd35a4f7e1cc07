#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vla/tensor.hpp"

namespace vla {

inline constexpr int kIgnoreLabel = -1;  // unlabeled / out-of-distribution pixels
inline constexpr int kNoObject = -1;     // queries matched to no ground-truth segment

/// One scene worth of frozen detector outputs and supervision.
struct SceneBundle {
    std::string name;
    Tensor pixel_features;             // h x w x d_v backbone features
    Tensor mask_queries;               // N_q x d_q decoder queries
    Tensor class_logits;               // N_q x C_k
    Tensor mask_logits;                // N_q x H x W
    std::vector<int> gt_labels;        // h*w, class index or kIgnoreLabel
    std::vector<int> gt_query_labels;  // N_q, class index or kNoObject
    std::vector<std::uint8_t> ood_mask;  // H*W, 1 = anomaly (evaluation only)

    std::size_t grid_h() const { return pixel_features.dim(0); }
    std::size_t grid_w() const { return pixel_features.dim(1); }
    std::size_t feature_dim() const { return pixel_features.dim(2); }
    std::size_t out_h() const { return mask_logits.dim(1); }
    std::size_t out_w() const { return mask_logits.dim(2); }
    std::size_t num_queries() const { return mask_queries.dim(0); }
    std::size_t query_dim() const { return mask_queries.dim(1); }
    std::size_t num_classes() const { return class_logits.dim(1); }

    /// Shape consistency, stride divisibility, ood/ignore agreement.
    void validate() const;
};

/// Majority-vote downsampling of a label map to the feature grid; ties break
/// toward the lowest class index. Ignore labels vote like any other value.
std::vector<int> downsample_labels_majority(const std::vector<int>& labels, std::size_t big_h,
                                            std::size_t big_w, std::size_t small_h,
                                            std::size_t small_w);

/// Ground-truth class for each query: the label of the GT segment with maximal
/// IoU against the binarized (sigmoid > 0.5) predicted mask, or kNoObject when
/// the best IoU is below 0.5.
std::vector<int> assign_query_labels(const SceneBundle& scene);

/// Scene directory schema: fixed VLT file names, integer maps stored as f32.
void save_scene(const std::filesystem::path& dir, const SceneBundle& scene);
SceneBundle load_scene(const std::filesystem::path& dir, const std::string& name);

}  // namespace vla
