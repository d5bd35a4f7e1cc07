#include "vla/scene.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "vla/kernels.hpp"
#include "vla/vlt_io.hpp"

namespace vla {

void SceneBundle::validate() const {
    if (pixel_features.rank() != 3) {
        throw std::invalid_argument("scene " + name + ": pixel_features must be h x w x d_v");
    }
    if (mask_queries.rank() != 2 || class_logits.rank() != 2 || mask_logits.rank() != 3) {
        throw std::invalid_argument("scene " + name + ": bad tensor ranks");
    }
    const std::size_t h = grid_h(), w = grid_w(), H = out_h(), W = out_w();
    if (H % h != 0 || W % w != 0) {
        throw std::invalid_argument("scene " + name + ": output size " + std::to_string(H) + "x" +
                                    std::to_string(W) + " is not an integer multiple of the grid " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    if (H / h != W / w) {
        throw std::invalid_argument("scene " + name + ": anisotropic stride");
    }
    if (mask_logits.dim(0) != num_queries() || class_logits.dim(0) != num_queries()) {
        throw std::invalid_argument("scene " + name + ": query count mismatch across tensors");
    }
    if (gt_labels.size() != h * w) {
        throw std::invalid_argument("scene " + name + ": gt_labels size mismatch");
    }
    if (gt_query_labels.size() != num_queries()) {
        throw std::invalid_argument("scene " + name + ": gt_query_labels size mismatch");
    }
    if (ood_mask.size() != H * W) {
        throw std::invalid_argument("scene " + name + ": ood_mask size mismatch");
    }
    // OOD pixels never carry class supervision.
    const std::size_t s = H / h;
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            bool any_ood = false;
            for (std::size_t a = 0; a < s && !any_ood; ++a) {
                for (std::size_t b = 0; b < s && !any_ood; ++b) {
                    any_ood = ood_mask[(i * s + a) * W + (j * s + b)] != 0;
                }
            }
            if (any_ood && gt_labels[i * w + j] != kIgnoreLabel) {
                throw std::invalid_argument("scene " + name + ": cell (" + std::to_string(i) +
                                            "," + std::to_string(j) +
                                            ") overlaps the OOD mask but is not ignore-labeled");
            }
        }
    }
    const int c_k = static_cast<int>(num_classes());
    for (int v : gt_labels) {
        if (v != kIgnoreLabel && (v < 0 || v >= c_k)) {
            throw std::invalid_argument("scene " + name + ": gt label out of range");
        }
    }
    for (int v : gt_query_labels) {
        if (v != kNoObject && (v < 0 || v >= c_k)) {
            throw std::invalid_argument("scene " + name + ": query label out of range");
        }
    }
}

std::vector<int> downsample_labels_majority(const std::vector<int>& labels, std::size_t big_h,
                                            std::size_t big_w, std::size_t small_h,
                                            std::size_t small_w) {
    if (labels.size() != big_h * big_w) {
        throw std::invalid_argument("downsample_labels_majority: label size mismatch");
    }
    if (big_h % small_h != 0 || big_w % small_w != 0) {
        throw std::invalid_argument("downsample_labels_majority: sizes must divide evenly");
    }
    const std::size_t sh = big_h / small_h, sw = big_w / small_w;
    std::vector<int> out(small_h * small_w, kIgnoreLabel);
    for (std::size_t i = 0; i < small_h; ++i) {
        for (std::size_t j = 0; j < small_w; ++j) {
            std::map<int, std::size_t> votes;  // ordered: lowest label wins ties
            for (std::size_t a = 0; a < sh; ++a) {
                for (std::size_t b = 0; b < sw; ++b) {
                    ++votes[labels[(i * sh + a) * big_w + (j * sw + b)]];
                }
            }
            int best = kIgnoreLabel;
            std::size_t best_count = 0;
            for (const auto& [label, count] : votes) {
                if (count > best_count) {
                    best = label;
                    best_count = count;
                }
            }
            out[i * small_w + j] = best;
        }
    }
    return out;
}

std::vector<int> assign_query_labels(const SceneBundle& scene) {
    const std::size_t H = scene.out_h(), W = scene.out_w(), s = H / scene.grid_h();
    const std::size_t n_q = scene.num_queries();
    const int c_k = static_cast<int>(scene.num_classes());

    // GT segments at output resolution: one mask per class present.
    std::vector<std::vector<std::uint8_t>> class_mask(static_cast<std::size_t>(c_k),
                                                      std::vector<std::uint8_t>(H * W, 0));
    for (std::size_t i = 0; i < scene.grid_h(); ++i) {
        for (std::size_t j = 0; j < scene.grid_w(); ++j) {
            const int label = scene.gt_labels[i * scene.grid_w() + j];
            if (label == kIgnoreLabel) continue;
            for (std::size_t a = 0; a < s; ++a) {
                for (std::size_t b = 0; b < s; ++b) {
                    class_mask[static_cast<std::size_t>(label)][(i * s + a) * W + (j * s + b)] = 1;
                }
            }
        }
    }

    std::vector<int> out(n_q, kNoObject);
    for (std::size_t m = 0; m < n_q; ++m) {
        std::vector<std::uint8_t> pred(H * W, 0);
        for (std::size_t p = 0; p < H * W; ++p) {
            pred[p] = sigmoid(scene.mask_logits[m * H * W + p]) > 0.5 ? 1 : 0;
        }
        double best_iou = 0.0;
        int best_class = kNoObject;
        for (int c = 0; c < c_k; ++c) {
            std::size_t inter = 0, uni = 0;
            const auto& gm = class_mask[static_cast<std::size_t>(c)];
            for (std::size_t p = 0; p < H * W; ++p) {
                inter += (pred[p] & gm[p]);
                uni += (pred[p] | gm[p]);
            }
            if (uni == 0) continue;
            const double iou = static_cast<double>(inter) / static_cast<double>(uni);
            if (iou > best_iou) {
                best_iou = iou;
                best_class = c;
            }
        }
        out[m] = (best_iou >= 0.5) ? best_class : kNoObject;
    }
    return out;
}

namespace {

Tensor int_map_to_tensor(const std::vector<int>& v, std::vector<std::size_t> shape) {
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = static_cast<double>(v[i]);
    return Tensor(std::move(shape), std::move(d));
}

std::vector<int> tensor_to_int_map(const Tensor& t, const std::string& what) {
    std::vector<int> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = t[i];
        if (v != std::floor(v)) {
            throw std::runtime_error(what + ": non-integer value " + std::to_string(v));
        }
        out[i] = static_cast<int>(v);
    }
    return out;
}

}  // namespace

void save_scene(const std::filesystem::path& dir, const SceneBundle& scene) {
    std::filesystem::create_directories(dir);
    write_vlt(dir / "pixel_features.vlt", scene.pixel_features);
    write_vlt(dir / "mask_queries.vlt", scene.mask_queries);
    write_vlt(dir / "class_logits.vlt", scene.class_logits);
    write_vlt(dir / "mask_logits.vlt", scene.mask_logits);
    write_vlt(dir / "gt_labels.vlt",
              int_map_to_tensor(scene.gt_labels, {scene.grid_h(), scene.grid_w()}));
    write_vlt(dir / "gt_query_labels.vlt",
              int_map_to_tensor(scene.gt_query_labels, {scene.num_queries()}));
    std::vector<int> ood(scene.ood_mask.begin(), scene.ood_mask.end());
    write_vlt(dir / "ood_mask.vlt", int_map_to_tensor(ood, {scene.out_h(), scene.out_w()}));
}

SceneBundle load_scene(const std::filesystem::path& dir, const std::string& name) {
    SceneBundle s;
    s.name = name;
    s.pixel_features = read_vlt(dir / "pixel_features.vlt");
    s.mask_queries = read_vlt(dir / "mask_queries.vlt");
    s.class_logits = read_vlt(dir / "class_logits.vlt");
    s.mask_logits = read_vlt(dir / "mask_logits.vlt");

    Tensor gt = read_vlt(dir / "gt_labels.vlt");
    if (gt.rank() != 2) throw std::runtime_error("scene " + name + ": gt_labels must be rank 2");
    std::vector<int> labels = tensor_to_int_map(gt, "gt_labels");
    // Accept ground truth at output resolution too; majority-vote it down.
    if (gt.dim(0) != s.grid_h() || gt.dim(1) != s.grid_w()) {
        labels = downsample_labels_majority(labels, gt.dim(0), gt.dim(1), s.grid_h(), s.grid_w());
    }
    s.gt_labels = std::move(labels);

    if (std::filesystem::exists(dir / "gt_query_labels.vlt")) {
        s.gt_query_labels = tensor_to_int_map(read_vlt(dir / "gt_query_labels.vlt"),
                                              "gt_query_labels");
    }
    Tensor ood = read_vlt(dir / "ood_mask.vlt");
    const auto ood_ints = tensor_to_int_map(ood, "ood_mask");
    s.ood_mask.assign(ood_ints.size(), 0);
    for (std::size_t i = 0; i < ood_ints.size(); ++i) s.ood_mask[i] = ood_ints[i] ? 1 : 0;

    if (s.gt_query_labels.empty()) s.gt_query_labels = assign_query_labels(s);
    s.validate();
    return s;
}

}  // namespace vla
