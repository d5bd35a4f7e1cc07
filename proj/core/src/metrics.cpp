#include "vla/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace vla {

void PixelEval::validate() const {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("PixelEval: score/label length mismatch");
    }
    if (scores.empty()) throw std::invalid_argument("PixelEval: empty");
    const std::size_t pos = positives();
    if (pos == 0 || pos == labels.size()) {
        throw std::invalid_argument("PixelEval: need at least one positive and one negative");
    }
}

std::size_t PixelEval::positives() const {
    std::size_t n = 0;
    for (int l : labels) n += (l != 0);
    return n;
}

std::size_t PixelEval::negatives() const { return labels.size() - positives(); }

namespace {

/// Indices sorted by descending score; equal scores form one threshold group.
std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

}  // namespace

double auroc(const PixelEval& eval) {
    eval.validate();
    const double p = static_cast<double>(eval.positives());
    const double n = static_cast<double>(eval.negatives());
    const auto idx = descending_order(eval.scores);

    double area = 0.0;
    double tp = 0.0, fp = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        const double threshold = eval.scores[idx[i]];
        while (i < idx.size() && eval.scores[idx[i]] == threshold) {
            if (eval.labels[idx[i]] != 0) tp += 1.0;
            else fp += 1.0;
            ++i;
        }
        const double tpr = tp / p;
        const double fpr = fp / n;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    return area;
}

double auprc(const PixelEval& eval) {
    eval.validate();
    const double p = static_cast<double>(eval.positives());
    const auto idx = descending_order(eval.scores);

    double ap = 0.0;
    double tp = 0.0, fp = 0.0, prev_recall = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        const double threshold = eval.scores[idx[i]];
        while (i < idx.size() && eval.scores[idx[i]] == threshold) {
            if (eval.labels[idx[i]] != 0) tp += 1.0;
            else fp += 1.0;
            ++i;
        }
        const double recall = tp / p;
        const double precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

double fpr_at_95tpr(const PixelEval& eval) {
    eval.validate();
    const double p = static_cast<double>(eval.positives());
    const double n = static_cast<double>(eval.negatives());
    const auto idx = descending_order(eval.scores);

    double tp = 0.0, fp = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        const double threshold = eval.scores[idx[i]];
        while (i < idx.size() && eval.scores[idx[i]] == threshold) {
            if (eval.labels[idx[i]] != 0) tp += 1.0;
            else fp += 1.0;
            ++i;
        }
        if (tp / p >= 0.95) return fp / n;
    }
    return 1.0;
}

std::vector<int> label_components8(const std::vector<std::uint8_t>& mask, std::size_t h,
                                   std::size_t w, std::size_t& count) {
    if (mask.size() != h * w) throw std::invalid_argument("label_components8: size mismatch");
    std::vector<int> labels(h * w, 0);
    count = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (mask[start] == 0 || labels[start] != 0) continue;
        ++count;
        labels[start] = static_cast<int>(count);
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(p / w);
            const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(p % w);
            for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
                for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const std::ptrdiff_t nr = r + dr, nc = c + dc;
                    if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(h) ||
                        nc >= static_cast<std::ptrdiff_t>(w)) {
                        continue;
                    }
                    const std::size_t q =
                        static_cast<std::size_t>(nr) * w + static_cast<std::size_t>(nc);
                    if (mask[q] != 0 && labels[q] == 0) {
                        labels[q] = static_cast<int>(count);
                        stack.push_back(q);
                    }
                }
            }
        }
    }
    return labels;
}

void ComponentStats::merge(const ComponentStats& other) {
    gt_sious.insert(gt_sious.end(), other.gt_sious.begin(), other.gt_sious.end());
    pred_ppvs.insert(pred_ppvs.end(), other.pred_ppvs.begin(), other.pred_ppvs.end());
}

ComponentStats component_stats(const Tensor& pred_scores, const std::vector<int>& gt_components,
                               double threshold) {
    if (pred_scores.rank() != 2) {
        throw std::invalid_argument("component_stats: prediction must be a rank-2 map");
    }
    const std::size_t h = pred_scores.dim(0), w = pred_scores.dim(1);
    if (gt_components.size() != h * w) {
        throw std::invalid_argument("component_stats: GT map size mismatch");
    }
    int n_gt = 0;
    for (int v : gt_components) n_gt = std::max(n_gt, v);
    if (n_gt == 0) throw std::invalid_argument("component_stats: no ground-truth component");

    std::vector<std::uint8_t> pred_mask(h * w, 0);
    for (std::size_t p = 0; p < h * w; ++p) pred_mask[p] = pred_scores[p] >= threshold ? 1 : 0;
    std::size_t n_pred = 0;
    const std::vector<int> pred_components = label_components8(pred_mask, h, w, n_pred);

    ComponentStats stats;

    // Adjusted IoU per GT component: union of predicted components touching
    // it, with pixels belonging to other GT components excused.
    for (int k = 1; k <= n_gt; ++k) {
        std::vector<std::uint8_t> touching(n_pred + 1, 0);
        for (std::size_t p = 0; p < h * w; ++p) {
            if (gt_components[p] == k && pred_components[p] != 0) {
                touching[static_cast<std::size_t>(pred_components[p])] = 1;
            }
        }
        std::size_t inter = 0, denom = 0;
        for (std::size_t p = 0; p < h * w; ++p) {
            const bool in_gt = gt_components[p] == k;
            const bool in_pred =
                pred_components[p] != 0 && touching[static_cast<std::size_t>(pred_components[p])];
            const bool other_gt = gt_components[p] != 0 && gt_components[p] != k;
            if (in_gt && in_pred) ++inter;
            if ((in_gt || in_pred) && !other_gt) ++denom;
        }
        stats.gt_sious.push_back(denom == 0 ? 0.0
                                            : static_cast<double>(inter) /
                                                  static_cast<double>(denom));
    }

    // Precision per predicted component against the union of GT components.
    for (std::size_t k = 1; k <= n_pred; ++k) {
        std::size_t size = 0, hit = 0;
        for (std::size_t p = 0; p < h * w; ++p) {
            if (pred_components[p] == static_cast<int>(k)) {
                ++size;
                if (gt_components[p] != 0) ++hit;
            }
        }
        stats.pred_ppvs.push_back(static_cast<double>(hit) / static_cast<double>(size));
    }
    return stats;
}

ComponentMetrics component_metrics_from_stats(const ComponentStats& stats) {
    if (stats.gt_sious.empty()) {
        throw std::invalid_argument("component_metrics: no ground-truth components");
    }
    ComponentMetrics m;
    for (double v : stats.gt_sious) m.siou += v;
    m.siou /= static_cast<double>(stats.gt_sious.size());

    if (!stats.pred_ppvs.empty()) {
        for (double v : stats.pred_ppvs) m.ppv += v;
        m.ppv /= static_cast<double>(stats.pred_ppvs.size());
    }

    double f1_sum = 0.0;
    for (double tau : kComponentIouSweep) {
        std::size_t tp = 0;
        for (double v : stats.gt_sious) tp += v > tau ? 1 : 0;
        const std::size_t fn = stats.gt_sious.size() - tp;
        std::size_t fp = 0;
        for (double v : stats.pred_ppvs) fp += v > tau ? 0 : 1;
        const double denom = static_cast<double>(2 * tp + fn + fp);
        f1_sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
    }
    m.f1_star = f1_sum / static_cast<double>(std::size(kComponentIouSweep));
    return m;
}

ComponentMetrics component_metrics(const Tensor& pred_scores,
                                   const std::vector<int>& gt_components, double threshold) {
    return component_metrics_from_stats(component_stats(pred_scores, gt_components, threshold));
}

}  // namespace vla
