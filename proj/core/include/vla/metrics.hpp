#pragma once

#include <cstdint>
#include <vector>

#include "vla/tensor.hpp"

namespace vla {

/// Flat anomaly scores with binary labels (1 = OOD), ignore pixels already
/// filtered out. Needs at least one positive and one negative.
struct PixelEval {
    std::vector<double> scores;
    std::vector<int> labels;

    void validate() const;
    std::size_t positives() const;
    std::size_t negatives() const;
};

/// Exact trapezoidal area under the ROC curve; equal scores collapse into a
/// single threshold step (half credit for tied pairs).
double auroc(const PixelEval& eval);

/// Area under precision-recall by the step-wise summation
/// sum_i (R_i - R_{i-1}) * P_i over descending distinct thresholds
/// (the average-precision convention).
double auprc(const PixelEval& eval);

/// FPR at the highest threshold step whose TPR reaches 0.95; no
/// interpolation between steps.
double fpr_at_95tpr(const PixelEval& eval);

/// 8-connected component labeling; returns a map with 0 = background and
/// 1..count = component ids.
std::vector<int> label_components8(const std::vector<std::uint8_t>& mask, std::size_t h,
                                   std::size_t w, std::size_t& count);

/// Per-component raw statistics, poolable across scenes.
struct ComponentStats {
    std::vector<double> gt_sious;   // adjusted IoU per ground-truth component
    std::vector<double> pred_ppvs;  // precision per predicted component

    void merge(const ComponentStats& other);
};

/// Component statistics of a thresholded prediction against a labeled GT
/// instance map (0 background, 1..n instances). The adjusted IoU of a GT
/// component k is measured against the union of predicted components touching
/// k, with pixels of other GT components excused from the union.
ComponentStats component_stats(const Tensor& pred_scores, const std::vector<int>& gt_components,
                               double threshold);

struct ComponentMetrics {
    double siou = 0.0;
    double ppv = 0.0;
    double f1_star = 0.0;
};

inline constexpr double kComponentIouSweep[] = {0.25, 0.5, 0.75};

/// sIoU = mean of per-GT-component adjusted IoU; PPV = mean per-prediction
/// precision (0 when there are no predictions); F1* = mean component F1 over
/// the fixed tau_IoU sweep, where a GT component counts as detected when its
/// sIoU exceeds tau_IoU and a predicted component is a false positive when
/// its precision does not.
ComponentMetrics component_metrics_from_stats(const ComponentStats& stats);

/// Single-scene convenience wrapper; throws when the GT map has no component.
ComponentMetrics component_metrics(const Tensor& pred_scores,
                                   const std::vector<int>& gt_components, double threshold);

}  // namespace vla
