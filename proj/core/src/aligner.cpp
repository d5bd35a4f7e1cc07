#include "vla/aligner.hpp"

#include <cmath>
#include <stdexcept>

#include "vla/rng.hpp"

namespace vla {

namespace {

Tensor gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    const double sigma = 1.0 / std::sqrt(static_cast<double>(rows));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian(0.0, sigma);
    return t;
}

AttentionWeights init_attention(Rng& rng, std::size_t d) {
    AttentionWeights w;
    w.wq = gaussian_matrix(rng, d, d);
    w.wk = gaussian_matrix(rng, d, d);
    w.wv = gaussian_matrix(rng, d, d);
    w.wo = gaussian_matrix(rng, d, d);
    return w;
}

FfnWeights init_ffn(Rng& rng, std::size_t d, std::size_t hidden) {
    FfnWeights w;
    w.w1 = gaussian_matrix(rng, d, hidden);
    w.b1 = Tensor({hidden});
    w.w2 = gaussian_matrix(rng, hidden, d);
    w.b2 = Tensor({d});
    return w;
}

LayerNormParams init_norm(std::size_t d) {
    LayerNormParams n;
    n.gain = Tensor::full({d}, 1.0);
    n.bias = Tensor({d});
    return n;
}

struct FfnCache {
    Tensor pre, hidden;
};

Tensor ffn_forward(const Tensor& x, const FfnWeights& w, FfnCache& cache) {
    cache.pre = matmul(x, w.w1);
    const std::size_t r = cache.pre.rows(), h = cache.pre.cols();
    for (std::size_t i = 0; i < r; ++i) {
        auto pi = cache.pre.row(i);
        for (std::size_t j = 0; j < h; ++j) pi[j] += w.b1[j];
    }
    cache.hidden = Tensor(cache.pre.shape());
    for (std::size_t i = 0; i < cache.pre.size(); ++i) {
        cache.hidden[i] = cache.pre[i] > 0.0 ? cache.pre[i] : 0.0;
    }
    Tensor out = matmul(cache.hidden, w.w2);
    const std::size_t d = out.cols();
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto oi = out.row(i);
        for (std::size_t j = 0; j < d; ++j) oi[j] += w.b2[j];
    }
    return out;
}

/// Returns dx; accumulates parameter gradients into dw.
Tensor ffn_backward(const Tensor& x, const FfnWeights& w, const FfnCache& cache, const Tensor& g,
                    FfnWeights& dw) {
    const std::size_t r = g.rows(), d = g.cols(), h = cache.hidden.cols();
    for (std::size_t i = 0; i < r; ++i) {
        auto gi = g.row(i);
        for (std::size_t j = 0; j < d; ++j) dw.b2[j] += gi[j];
    }
    Tensor d_hidden;
    matmul_backward(cache.hidden, w.w2, g, d_hidden, dw.w2);
    Tensor d_pre(d_hidden.shape());
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
        d_pre[i] = cache.pre[i] > 0.0 ? d_hidden[i] : 0.0;
    }
    for (std::size_t i = 0; i < r; ++i) {
        auto pi = d_pre.row(i);
        for (std::size_t j = 0; j < h; ++j) dw.b1[j] += pi[j];
    }
    Tensor dx;
    matmul_backward(x, w.w1, d_pre, dx, dw.w1);
    return dx;
}

Tensor vstack(const Tensor& a, const Tensor& b) {
    const std::size_t d = a.dim(1);
    Tensor out({a.dim(0) + b.dim(0), d});
    for (std::size_t i = 0; i < a.dim(0); ++i) {
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = a.at(i, j);
    }
    for (std::size_t i = 0; i < b.dim(0); ++i) {
        for (std::size_t j = 0; j < d; ++j) out.at(a.dim(0) + i, j) = b.at(i, j);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

/// Tape of every intermediate needed by the hand-derived backward pass.
struct AlignerTape {
    TextEncodeCache text;
    Tensor table;  // C_k x d

    Tensor features_flat;  // hw x d_v
    Tensor projected;      // hw x d
    Tensor seq0;
    MhaCache attn1;
    Tensor res1;
    LayerNormCache ln1;
    Tensor seq1;
    FfnCache ffn1;
    Tensor res2;
    LayerNormCache ln2;
    Tensor seq2;
    NormalizeCache pixel_norm;
    Tensor v_align;  // hw x d

    Tensor q_proj;  // N_q x d
    MhaCache attn2;
    Tensor res3;
    LayerNormCache ln3;
    Tensor u1;
    FfnCache ffn2;
    Tensor res4;
    LayerNormCache ln4;
    Tensor u2;
    NormalizeCache query_norm;
    Tensor q_align;  // N_q x d
};

/// Pixel stage over an explicit text table; shared by training and inference.
Tensor pixel_stage_forward(const Tensor& features_flat, const Tensor& table,
                           const AlignerParams& p, AlignerTape& tape) {
    if (features_flat.dim(1) != p.pixel_proj.dim(0)) {
        throw std::invalid_argument("pixel_align: feature width " +
                                    std::to_string(features_flat.dim(1)) +
                                    " does not match projection " + p.pixel_proj.shape_str());
    }
    tape.projected = matmul(features_flat, p.pixel_proj);
    if (!p.has_pixel_stage()) {
        return l2_normalize_forward(tape.projected, tape.pixel_norm);
    }
    if (table.dim(1) != p.embed_dim) {
        throw std::invalid_argument("pixel_align: table width mismatch");
    }
    tape.seq0 = vstack(tape.projected, table);
    Tensor attn_out = mh_attention_forward(tape.seq0, tape.seq0, tape.seq0, p.pixel_attn,
                                           p.heads, tape.attn1);
    tape.res1 = add(tape.seq0, attn_out);
    tape.seq1 = layer_norm_forward(tape.res1, p.norm1.gain, p.norm1.bias, tape.ln1);
    Tensor ffn_out = ffn_forward(tape.seq1, p.pixel_ffn, tape.ffn1);
    tape.res2 = add(tape.seq1, ffn_out);
    tape.seq2 = layer_norm_forward(tape.res2, p.norm2.gain, p.norm2.bias, tape.ln2);

    const std::size_t hw = features_flat.dim(0), d = p.embed_dim;
    Tensor pixel_rows({hw, d});
    for (std::size_t i = 0; i < hw; ++i) {
        for (std::size_t j = 0; j < d; ++j) pixel_rows.at(i, j) = tape.seq2.at(i, j);
    }
    return l2_normalize_forward(pixel_rows, tape.pixel_norm);
}

/// Backward of the pixel stage: consumes d(v_align), accumulates into grads
/// and d_table. Backbone features are frozen, so no input gradient escapes.
void pixel_stage_backward(const Tensor& features_flat, const AlignerParams& p,
                          const AlignerTape& tape, const Tensor& d_v_align,
                          AlignerParams& grads, Tensor& d_table) {
    Tensor d_pixel_rows = l2_normalize_backward(d_v_align, tape.pixel_norm);
    Tensor d_projected;
    if (p.has_pixel_stage()) {
        const std::size_t hw = features_flat.dim(0), d = p.embed_dim;
        const std::size_t total = tape.seq2.dim(0);
        // Text-token outputs are dropped by the slice, so their rows carry no
        // upstream gradient; they re-enter only through the attention mixing.
        Tensor d_seq2({total, d});
        for (std::size_t i = 0; i < hw; ++i) {
            for (std::size_t j = 0; j < d; ++j) d_seq2.at(i, j) = d_pixel_rows.at(i, j);
        }
        Tensor d_res2 = layer_norm_backward(d_seq2, p.norm2.gain, tape.ln2, grads.norm2.gain,
                                            grads.norm2.bias);
        Tensor d_seq1 = d_res2;
        Tensor d_ffn_in = ffn_backward(tape.seq1, p.pixel_ffn, tape.ffn1, d_res2, grads.pixel_ffn);
        add_into(d_seq1, d_ffn_in);
        Tensor d_res1 = layer_norm_backward(d_seq1, p.norm1.gain, tape.ln1, grads.norm1.gain,
                                            grads.norm1.bias);
        Tensor d_seq0 = d_res1;
        MhaGrads mg = mh_attention_backward(tape.seq0, tape.seq0, tape.seq0, p.pixel_attn,
                                            tape.attn1, d_res1);
        add_into(d_seq0, mg.dq);
        add_into(d_seq0, mg.dk);
        add_into(d_seq0, mg.dv);
        add_into(grads.pixel_attn.wq, mg.dw.wq);
        add_into(grads.pixel_attn.wk, mg.dw.wk);
        add_into(grads.pixel_attn.wv, mg.dw.wv);
        add_into(grads.pixel_attn.wo, mg.dw.wo);

        d_projected = Tensor({hw, d});
        for (std::size_t i = 0; i < hw; ++i) {
            for (std::size_t j = 0; j < d; ++j) d_projected.at(i, j) = d_seq0.at(i, j);
        }
        const std::size_t c_k = d_table.dim(0);
        for (std::size_t c = 0; c < c_k; ++c) {
            for (std::size_t j = 0; j < d; ++j) d_table.at(c, j) += d_seq0.at(hw + c, j);
        }
    } else {
        d_projected = std::move(d_pixel_rows);
    }
    Tensor d_features_unused;
    matmul_backward(features_flat, p.pixel_proj, d_projected, d_features_unused, grads.pixel_proj);
}

Tensor mask_stage_forward(const Tensor& mask_queries, const Tensor& v_align,
                          const AlignerParams& p, AlignerTape& tape) {
    if (mask_queries.dim(1) != p.mask_query_proj.dim(0)) {
        throw std::invalid_argument("mask_align: query width " +
                                    std::to_string(mask_queries.dim(1)) +
                                    " does not match projection " + p.mask_query_proj.shape_str());
    }
    tape.q_proj = matmul(mask_queries, p.mask_query_proj);
    Tensor attn_out = mh_attention_forward(tape.q_proj, v_align, v_align, p.mask_attn, p.heads,
                                           tape.attn2);
    tape.res3 = add(tape.q_proj, attn_out);
    tape.u1 = layer_norm_forward(tape.res3, p.norm3.gain, p.norm3.bias, tape.ln3);
    Tensor ffn_out = ffn_forward(tape.u1, p.mask_ffn, tape.ffn2);
    tape.res4 = add(tape.u1, ffn_out);
    tape.u2 = layer_norm_forward(tape.res4, p.norm4.gain, p.norm4.bias, tape.ln4);
    return l2_normalize_forward(tape.u2, tape.query_norm);
}

/// Backward of the mask stage; accumulates into grads and d_v_align.
void mask_stage_backward(const Tensor& mask_queries, const AlignerParams& p,
                         const AlignerTape& tape, const Tensor& d_q_align, AlignerParams& grads,
                         Tensor& d_v_align) {
    Tensor d_u2 = l2_normalize_backward(d_q_align, tape.query_norm);
    Tensor d_res4 = layer_norm_backward(d_u2, p.norm4.gain, tape.ln4, grads.norm4.gain,
                                        grads.norm4.bias);
    Tensor d_u1 = d_res4;
    Tensor d_ffn_in = ffn_backward(tape.u1, p.mask_ffn, tape.ffn2, d_res4, grads.mask_ffn);
    add_into(d_u1, d_ffn_in);
    Tensor d_res3 = layer_norm_backward(d_u1, p.norm3.gain, tape.ln3, grads.norm3.gain,
                                        grads.norm3.bias);
    Tensor d_q_proj = d_res3;
    MhaGrads mg = mh_attention_backward(tape.q_proj, tape.v_align, tape.v_align, p.mask_attn,
                                        tape.attn2, d_res3);
    add_into(d_q_proj, mg.dq);
    add_into(d_v_align, mg.dk);
    add_into(d_v_align, mg.dv);
    add_into(grads.mask_attn.wq, mg.dw.wq);
    add_into(grads.mask_attn.wk, mg.dw.wk);
    add_into(grads.mask_attn.wv, mg.dw.wv);
    add_into(grads.mask_attn.wo, mg.dw.wo);

    Tensor d_queries_unused;
    matmul_backward(mask_queries, p.mask_query_proj, d_q_proj, d_queries_unused,
                    grads.mask_query_proj);
}

struct ContrastiveGrads {
    Tensor d_rows;             // gradient w.r.t. the embedding rows, pre-scaled
    Tensor* d_table = nullptr; // accumulated, pre-scaled
    double d_log_tau = 0.0;    // accumulated, pre-scaled
    double scale = 1.0;        // loss weight folded into every contribution
};

/// Mean InfoNCE over rows whose label is >= 0. Rows and table are unit-norm,
/// so cosine similarity reduces to a dot product. Stable log-sum-exp.
double contrastive_loss(const Tensor& rows, const Tensor& table, const std::vector<int>& labels,
                        double tau, ContrastiveGrads* grads, const char* what) {
    const std::size_t n = rows.rows(), d = rows.cols(), c_k = table.dim(0);
    if (table.dim(1) != d) {
        throw std::invalid_argument(std::string(what) + ": embedding width mismatch");
    }
    if (labels.size() != n) {
        throw std::invalid_argument(std::string(what) + ": label count mismatch");
    }
    std::size_t valid = 0;
    for (int l : labels) {
        if (l >= 0) ++valid;
    }
    if (valid == 0) {
        throw std::invalid_argument(std::string(what) +
                                    ": no supervision (every entry is ignore/no-object)");
    }
    const double inv_n = 1.0 / static_cast<double>(valid);

    double loss = 0.0;
    std::vector<double> z(c_k), expz(c_k);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0) continue;
        auto ri = rows.row(i);
        double zmax = -1e300;
        for (std::size_t k = 0; k < c_k; ++k) {
            double dot = 0.0;
            auto tk = table.row(k);
            for (std::size_t j = 0; j < d; ++j) dot += ri[j] * tk[j];
            z[k] = dot / tau;
            zmax = std::max(zmax, z[k]);
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < c_k; ++k) {
            expz[k] = std::exp(z[k] - zmax);
            sum += expz[k];
        }
        loss += -(z[static_cast<std::size_t>(y)] - zmax) + std::log(sum);

        if (grads != nullptr) {
            for (std::size_t k = 0; k < c_k; ++k) {
                const double p = expz[k] / sum;
                const double dz =
                    (p - (static_cast<int>(k) == y ? 1.0 : 0.0)) * inv_n * grads->scale;
                auto tk = table.row(k);
                auto gr = grads->d_rows.row(i);
                for (std::size_t j = 0; j < d; ++j) gr[j] += dz * tk[j] / tau;
                if (grads->d_table != nullptr) {
                    auto gt = grads->d_table->row(k);
                    for (std::size_t j = 0; j < d; ++j) gt[j] += dz * ri[j] / tau;
                }
                grads->d_log_tau -= dz * z[k];
            }
        }
    }
    return loss * inv_n;
}

}  // namespace

AlignerParams AlignerParams::init(std::size_t feature_dim, std::size_t query_dim,
                                  std::size_t embed_dim, std::size_t heads,
                                  std::size_t ffn_hidden, double tau_init, AlignMode mode,
                                  std::uint64_t seed) {
    if (heads == 0 || embed_dim % heads != 0) {
        throw std::invalid_argument("AlignerParams: embed_dim " + std::to_string(embed_dim) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    if (tau_init <= 0.0) throw std::invalid_argument("AlignerParams: tau must be > 0");
    if (ffn_hidden == 0) ffn_hidden = 2 * embed_dim;

    AlignerParams p;
    p.embed_dim = embed_dim;
    p.heads = heads;
    p.ffn_hidden = ffn_hidden;
    p.mode = mode;

    Rng rng(seed);
    p.pixel_proj = gaussian_matrix(rng, feature_dim, embed_dim);
    if (p.has_pixel_stage()) {
        p.pixel_attn = init_attention(rng, embed_dim);
        p.pixel_ffn = init_ffn(rng, embed_dim, ffn_hidden);
        p.norm1 = init_norm(embed_dim);
        p.norm2 = init_norm(embed_dim);
    }
    if (p.has_mask_stage()) {
        p.mask_query_proj = gaussian_matrix(rng, query_dim, embed_dim);
        p.mask_attn = init_attention(rng, embed_dim);
        p.mask_ffn = init_ffn(rng, embed_dim, ffn_hidden);
        p.norm3 = init_norm(embed_dim);
        p.norm4 = init_norm(embed_dim);
    }
    p.log_tau = Tensor({1});
    p.log_tau[0] = std::log(tau_init);
    return p;
}

AlignerParams AlignerParams::zeros_like(const AlignerParams& p) {
    AlignerParams z;
    z.embed_dim = p.embed_dim;
    z.heads = p.heads;
    z.ffn_hidden = p.ffn_hidden;
    z.mode = p.mode;
    z.pixel_proj = Tensor(p.pixel_proj.shape());
    if (p.has_pixel_stage()) {
        z.pixel_attn = {Tensor(p.pixel_attn.wq.shape()), Tensor(p.pixel_attn.wk.shape()),
                        Tensor(p.pixel_attn.wv.shape()), Tensor(p.pixel_attn.wo.shape())};
        z.pixel_ffn = {Tensor(p.pixel_ffn.w1.shape()), Tensor(p.pixel_ffn.b1.shape()),
                       Tensor(p.pixel_ffn.w2.shape()), Tensor(p.pixel_ffn.b2.shape())};
        z.norm1 = {Tensor(p.norm1.gain.shape()), Tensor(p.norm1.bias.shape())};
        z.norm2 = {Tensor(p.norm2.gain.shape()), Tensor(p.norm2.bias.shape())};
    }
    if (p.has_mask_stage()) {
        z.mask_query_proj = Tensor(p.mask_query_proj.shape());
        z.mask_attn = {Tensor(p.mask_attn.wq.shape()), Tensor(p.mask_attn.wk.shape()),
                       Tensor(p.mask_attn.wv.shape()), Tensor(p.mask_attn.wo.shape())};
        z.mask_ffn = {Tensor(p.mask_ffn.w1.shape()), Tensor(p.mask_ffn.b1.shape()),
                      Tensor(p.mask_ffn.w2.shape()), Tensor(p.mask_ffn.b2.shape())};
        z.norm3 = {Tensor(p.norm3.gain.shape()), Tensor(p.norm3.bias.shape())};
        z.norm4 = {Tensor(p.norm4.gain.shape()), Tensor(p.norm4.bias.shape())};
    }
    z.log_tau = Tensor({1});
    return z;
}

double AlignerParams::tau() const { return std::exp(log_tau[0]); }

std::vector<std::pair<std::string, Tensor*>> AlignerParams::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("pixel_proj", &pixel_proj);
    if (has_pixel_stage()) {
        out.emplace_back("pixel_attn.wq", &pixel_attn.wq);
        out.emplace_back("pixel_attn.wk", &pixel_attn.wk);
        out.emplace_back("pixel_attn.wv", &pixel_attn.wv);
        out.emplace_back("pixel_attn.wo", &pixel_attn.wo);
        out.emplace_back("pixel_ffn.w1", &pixel_ffn.w1);
        out.emplace_back("pixel_ffn.b1", &pixel_ffn.b1);
        out.emplace_back("pixel_ffn.w2", &pixel_ffn.w2);
        out.emplace_back("pixel_ffn.b2", &pixel_ffn.b2);
        out.emplace_back("norm1.gain", &norm1.gain);
        out.emplace_back("norm1.bias", &norm1.bias);
        out.emplace_back("norm2.gain", &norm2.gain);
        out.emplace_back("norm2.bias", &norm2.bias);
    }
    if (has_mask_stage()) {
        out.emplace_back("mask_query_proj", &mask_query_proj);
        out.emplace_back("mask_attn.wq", &mask_attn.wq);
        out.emplace_back("mask_attn.wk", &mask_attn.wk);
        out.emplace_back("mask_attn.wv", &mask_attn.wv);
        out.emplace_back("mask_attn.wo", &mask_attn.wo);
        out.emplace_back("mask_ffn.w1", &mask_ffn.w1);
        out.emplace_back("mask_ffn.b1", &mask_ffn.b1);
        out.emplace_back("mask_ffn.w2", &mask_ffn.w2);
        out.emplace_back("mask_ffn.b2", &mask_ffn.b2);
        out.emplace_back("norm3.gain", &norm3.gain);
        out.emplace_back("norm3.bias", &norm3.bias);
        out.emplace_back("norm4.gain", &norm4.gain);
        out.emplace_back("norm4.bias", &norm4.bias);
    }
    out.emplace_back("log_tau", &log_tau);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> AlignerParams::named_tensors() const {
    auto mutable_list = const_cast<AlignerParams*>(this)->named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mutable_list.size());
    for (auto& [name, t] : mutable_list) out.emplace_back(name, t);
    return out;
}

Tensor pixel_align(const SceneBundle& scene, const PromptSet& prompts,
                   const ClassEmbeddingTable& table, const AlignerParams& params) {
    if (!table.normalized) {
        throw std::invalid_argument("pixel_align: class embedding table must be normalized");
    }
    if (table.num_classes() != prompts.num_classes()) {
        throw std::invalid_argument("pixel_align: table/prompt class count mismatch");
    }
    const std::size_t hw = scene.grid_h() * scene.grid_w();
    AlignerTape tape;
    tape.features_flat = scene.pixel_features.reshaped({hw, scene.feature_dim()});
    Tensor v = pixel_stage_forward(tape.features_flat, table.embeddings, params, tape);
    return v.reshaped({scene.grid_h(), scene.grid_w(), params.embed_dim});
}

Tensor mask_align(const Tensor& pixel_aligned, const SceneBundle& scene,
                  const AlignerParams& params) {
    if (!params.has_mask_stage()) {
        throw std::invalid_argument("mask_align: aligner was built without a mask stage");
    }
    if (scene.num_queries() < 1) throw std::invalid_argument("mask_align: no queries");
    const std::size_t d = params.embed_dim;
    Tensor flat = pixel_aligned.reshaped({pixel_aligned.size() / d, d});
    AlignerTape tape;
    tape.v_align = flat;
    return mask_stage_forward(scene.mask_queries, tape.v_align, params, tape);
}

AlignedFeatures align_scene(const SceneBundle& scene, const PromptSet& prompts,
                            const ClassEmbeddingTable& table, const AlignerParams& params) {
    AlignedFeatures out;
    out.v_align = pixel_align(scene, prompts, table, params);
    if (params.has_mask_stage()) {
        out.q_align = mask_align(out.v_align, scene, params);
    }
    return out;
}

double loss_pixel(const Tensor& v_align, const ClassEmbeddingTable& table,
                  const std::vector<int>& gt_labels, double tau) {
    if (!table.normalized) {
        throw std::invalid_argument("loss_pixel: class embedding table must be normalized");
    }
    const std::size_t d = table.embed_dim();
    Tensor rows = v_align.reshaped({v_align.size() / d, d});
    return contrastive_loss(rows, table.embeddings, gt_labels, tau, nullptr, "loss_pixel");
}

double loss_mask(const Tensor& q_align, const ClassEmbeddingTable& table,
                 const std::vector<int>& gt_query_labels, double tau) {
    if (!table.normalized) {
        throw std::invalid_argument("loss_mask: class embedding table must be normalized");
    }
    return contrastive_loss(q_align, table.embeddings, gt_query_labels, tau, nullptr, "loss_mask");
}

AlignLossResult loss_align(const SceneBundle& scene, const PromptSet& prompts,
                           const AlignerParams& params, double lambda_pixel, double lambda_mask,
                           bool compute_grads) {
    if (lambda_pixel < 0.0 || lambda_mask < 0.0) {
        throw std::invalid_argument("loss_align: lambda weights must be >= 0");
    }
    if (prompts.embed_dim() != params.embed_dim) {
        throw std::invalid_argument("loss_align: prompt width " +
                                    std::to_string(prompts.embed_dim()) + " != aligner width " +
                                    std::to_string(params.embed_dim));
    }
    const double tau = params.tau();
    const std::size_t hw = scene.grid_h() * scene.grid_w();

    AlignerTape tape;
    tape.table = encode_table_forward(prompts.context, prompts.class_tokens, tape.text);
    tape.features_flat = scene.pixel_features.reshaped({hw, scene.feature_dim()});
    tape.v_align = pixel_stage_forward(tape.features_flat, tape.table, params, tape);
    if (params.has_mask_stage()) {
        tape.q_align = mask_stage_forward(scene.mask_queries, tape.v_align, params, tape);
    }

    AlignLossResult result;
    result.grads = AlignerParams::zeros_like(params);
    result.d_context = Tensor(prompts.context.shape());

    Tensor d_table(tape.table.shape());
    Tensor d_v_align(tape.v_align.shape());
    double d_log_tau = 0.0;

    if (params.has_pixel_stage()) {
        ContrastiveGrads g;
        g.d_rows = Tensor(tape.v_align.shape());
        g.d_table = &d_table;
        g.scale = lambda_pixel;
        result.l_pixel = contrastive_loss(tape.v_align, tape.table, scene.gt_labels, tau,
                                          compute_grads ? &g : nullptr, "loss_pixel");
        if (compute_grads) {
            add_into(d_v_align, g.d_rows);
            d_log_tau += g.d_log_tau;
        }
    }
    if (params.has_mask_stage()) {
        ContrastiveGrads g;
        g.d_rows = Tensor(tape.q_align.shape());
        g.d_table = &d_table;
        g.scale = lambda_mask;
        result.l_mask = contrastive_loss(tape.q_align, tape.table, scene.gt_query_labels, tau,
                                         compute_grads ? &g : nullptr, "loss_mask");
        if (compute_grads) {
            mask_stage_backward(scene.mask_queries, params, tape, g.d_rows, result.grads,
                                d_v_align);
            d_log_tau += g.d_log_tau;
        }
    }
    result.total = lambda_pixel * result.l_pixel + lambda_mask * result.l_mask;

    if (compute_grads) {
        pixel_stage_backward(tape.features_flat, params, tape, d_v_align, result.grads, d_table);
        result.d_context = encode_table_backward(d_table, tape.text);
        result.grads.log_tau[0] = d_log_tau;
    }
    return result;
}

}  // namespace vla
