#include "vla/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vla/kernels.hpp"

namespace vla {

Tensor detector_confidence(const SceneBundle& scene) {
    const std::size_t n_q = scene.num_queries();
    if (n_q == 0) throw std::invalid_argument("detector_confidence: scene has no queries");
    const std::size_t c_k = scene.num_classes();
    const std::size_t H = scene.out_h(), W = scene.out_w();

    const Tensor probs = softmax(scene.class_logits, 1);  // N_q x C_k
    Tensor out({c_k, H, W});
    for (std::size_t m = 0; m < n_q; ++m) {
        for (std::size_t p = 0; p < H * W; ++p) {
            const double mask = sigmoid(scene.mask_logits[m * H * W + p]);
            for (std::size_t k = 0; k < c_k; ++k) {
                out[k * H * W + p] += probs.at(m, k) * mask;
            }
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], 1.0);
    return out;
}

Tensor bilinear_upsample(const Tensor& plane, std::size_t out_h, std::size_t out_w) {
    if (plane.rank() != 2) throw std::invalid_argument("bilinear_upsample: expected rank-2 map");
    const std::size_t h = plane.dim(0), w = plane.dim(1);
    if (out_h < h || out_w < w) {
        throw std::invalid_argument("bilinear_upsample: output " + std::to_string(out_h) + "x" +
                                    std::to_string(out_w) + " smaller than input " +
                                    plane.shape_str());
    }
    if (out_h == h && out_w == w) return plane;

    Tensor out({out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t i = 0; i < out_h; ++i) {
        double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t j = 0; j < out_w; ++j) {
            double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = plane.at(y0, x0) * (1.0 - wx) + plane.at(y0, x1) * wx;
            const double bot = plane.at(y1, x0) * (1.0 - wx) + plane.at(y1, x1) * wx;
            out.at(i, j) = top * (1.0 - wy) + bot * wy;
        }
    }
    return out;
}

Tensor text_similarity(const Tensor& v_align, const ClassEmbeddingTable& table,
                       std::size_t out_h, std::size_t out_w, double tau, bool raw_sim) {
    if (!table.normalized) {
        throw std::invalid_argument("text_similarity: table must be normalized");
    }
    if (v_align.rank() != 3) {
        throw std::invalid_argument("text_similarity: expected h x w x d aligned features");
    }
    const std::size_t h = v_align.dim(0), w = v_align.dim(1), d = v_align.dim(2);
    if (d != table.embed_dim()) {
        throw std::invalid_argument("text_similarity: width mismatch with embedding table");
    }
    const std::size_t c_k = table.num_classes();

    // Cosine against every class at grid resolution (rows are unit-norm),
    // tempered softmax over the class axis unless raw similarities are asked.
    Tensor sims({c_k, h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
        const double* vp = v_align.data() + p * d;
        for (std::size_t k = 0; k < c_k; ++k) {
            double dot = 0.0;
            auto tk = table.embeddings.row(k);
            for (std::size_t j = 0; j < d; ++j) dot += vp[j] * tk[j];
            sims[k * h * w + p] = raw_sim ? dot : dot / tau;
        }
    }
    if (!raw_sim) sims = softmax(sims, 0);

    Tensor out({c_k, out_h, out_w});
    for (std::size_t k = 0; k < c_k; ++k) {
        Tensor plane({h, w});
        for (std::size_t p = 0; p < h * w; ++p) plane[p] = sims[k * h * w + p];
        Tensor up = bilinear_upsample(plane, out_h, out_w);
        for (std::size_t p = 0; p < out_h * out_w; ++p) out[k * out_h * out_w + p] = up[p];
    }
    return out;
}

Tensor image_similarity(const SceneBundle& scene, const ClassEmbeddingTable& table,
                        const EncoderProvider& provider, double tau, bool raw_sim) {
    if (!table.normalized) {
        throw std::invalid_argument("image_similarity: table must be normalized");
    }
    const Tensor e = encode_image_global(scene, provider);
    const std::size_t c_k = table.num_classes(), d = table.embed_dim();
    if (e.size() != d) {
        throw std::invalid_argument("image_similarity: provider width mismatch");
    }
    Tensor sims({c_k});
    for (std::size_t k = 0; k < c_k; ++k) {
        double dot = 0.0;
        auto tk = table.embeddings.row(k);
        for (std::size_t j = 0; j < d; ++j) dot += e[j] * tk[j];
        sims[k] = dot;
    }
    if (raw_sim) return sims;
    Tensor scaled({c_k});
    for (std::size_t k = 0; k < c_k; ++k) scaled[k] = sims[k] / tau;
    return softmax(scaled, 0);
}

namespace {

Tensor fuse_with_weights(const Tensor* s_conf, const Tensor* s_text, const Tensor* s_img,
                         double wa, double wb, double wc) {
    const Tensor* any_map = s_conf != nullptr ? s_conf : s_text;
    if (any_map == nullptr && s_img == nullptr) {
        throw std::invalid_argument("fuse: no sources enabled");
    }
    std::size_t c_k = 0, H = 0, W = 0;
    if (any_map != nullptr) {
        if (any_map->rank() != 3) throw std::invalid_argument("fuse: maps must be C_k x H x W");
        c_k = any_map->dim(0);
        H = any_map->dim(1);
        W = any_map->dim(2);
    } else {
        throw std::invalid_argument("fuse: image similarity alone has no spatial extent");
    }
    if (s_conf != nullptr && s_text != nullptr && !s_conf->same_shape(*s_text)) {
        throw std::invalid_argument("fuse: source shapes disagree, " + s_conf->shape_str() +
                                    " vs " + s_text->shape_str());
    }
    if (s_img != nullptr && (s_img->rank() != 1 || s_img->dim(0) != c_k)) {
        throw std::invalid_argument("fuse: class count mismatch between image prior and maps");
    }

    Tensor out({H, W});
    for (std::size_t p = 0; p < H * W; ++p) {
        double best = -1e300;
        for (std::size_t k = 0; k < c_k; ++k) {
            double s = 0.0;
            if (s_conf != nullptr) s += wa * (*s_conf)[k * H * W + p];
            if (s_text != nullptr) s += wb * (*s_text)[k * H * W + p];
            if (s_img != nullptr) s += wc * (*s_img)[k];
            best = std::max(best, s);
        }
        out[p] = 1.0 - best;
    }
    return out;
}

}  // namespace

Tensor fuse(const Tensor& s_conf, const Tensor& s_text, const Tensor& s_img, double alpha,
            double beta, double gamma) {
    return fuse_with_weights(&s_conf, &s_text, &s_img, alpha, beta, gamma);
}

Tensor ablate(const ScoreStack& stack, const SourceFlags& enabled, bool renormalize) {
    if (!enabled.any()) throw std::invalid_argument("ablate: empty source subset");
    double wa = stack.alpha, wb = stack.beta, wc = stack.gamma;
    if (renormalize) {
        const double full = stack.alpha + stack.beta + stack.gamma;
        double live = 0.0;
        if (enabled.conf) live += stack.alpha;
        if (enabled.text) live += stack.beta;
        if (enabled.img) live += stack.gamma;
        const double scale = full / live;
        wa *= scale;
        wb *= scale;
        wc *= scale;
    }
    return fuse_with_weights(enabled.conf ? &stack.s_conf : nullptr,
                             enabled.text ? &stack.s_text : nullptr,
                             enabled.img ? &stack.s_img : nullptr, wa, wb, wc);
}

ScoreStack score_scene(const SceneBundle& scene, const PromptSet& prompts,
                       const ClassEmbeddingTable& table, const AlignerParams& params,
                       const EncoderProvider& provider, const RunConfig& cfg) {
    ScoreStack stack;
    stack.alpha = cfg.alpha;
    stack.beta = cfg.beta;
    stack.gamma = cfg.gamma;

    const double tau = params.tau();
    const Tensor v_align = pixel_align(scene, prompts, table, params);

    stack.s_conf = detector_confidence(scene);
    stack.s_text = text_similarity(v_align, table, scene.out_h(), scene.out_w(), tau,
                                   cfg.raw_sim);
    stack.s_img = image_similarity(scene, table, provider, tau, cfg.raw_sim);
    stack.s_final = ablate(stack, cfg.sources, cfg.renormalize_sources);
    return stack;
}

}  // namespace vla
