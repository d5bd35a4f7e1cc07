#include "vla/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace vla {

namespace {

void require_rank2(const Tensor& t, const char* who) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(who) + ": expected rank-2 tensor, got shape " +
                                    t.shape_str());
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: inner dimensions disagree, " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
    const std::size_t m = a.dim(0), kk = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kk; ++k) acc += a.at(i, k) * b.at(k, j);
            out.at(i, j) = acc;
        }
    }
    return out;
}

void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& g, Tensor& da, Tensor& db) {
    const std::size_t m = a.dim(0), kk = a.dim(1), n = b.dim(1);
    if (da.empty()) da = Tensor({m, kk});
    if (db.empty()) db = Tensor({kk, n});
    // da = g . b^T
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < kk; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g.at(i, j) * b.at(k, j);
            da.at(i, k) += acc;
        }
    }
    // db = a^T . g
    for (std::size_t k = 0; k < kk; ++k) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += a.at(i, k) * g.at(i, j);
            db.at(k, j) += acc;
        }
    }
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " out of range for shape " + x.shape_str());
    }
    const auto& shape = x.shape();
    std::size_t inner = 1, outer = 1;
    for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
    for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
    const std::size_t len = shape[axis];

    Tensor out(shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = x[base];
            for (std::size_t s = 1; s < len; ++s) mx = std::max(mx, x[base + s * inner]);
            double sum = 0.0;
            for (std::size_t s = 0; s < len; ++s) {
                const double e = std::exp(x[base + s * inner] - mx);
                out[base + s * inner] = e;
                sum += e;
            }
            for (std::size_t s = 0; s < len; ++s) out[base + s * inner] /= sum;
        }
    }
    return out;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& g) {
    Tensor dx(y.shape());
    const std::size_t r = y.rows(), c = y.cols();
    for (std::size_t i = 0; i < r; ++i) {
        auto yi = y.row(i);
        auto gi = g.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += yi[j] * gi[j];
        auto di = dx.row(i);
        for (std::size_t j = 0; j < c; ++j) di[j] = yi[j] * (gi[j] - dot);
    }
    return dx;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
    return out;
}

double cosine_sim(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size()) {
        throw std::invalid_argument("cosine_sim: expected equal-length vectors, got " +
                                    a.shape_str() + " vs " + b.shape_str());
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw std::invalid_argument("cosine_sim: zero-norm vector (upstream embeddings should "
                                    "be normalized; a zero vector indicates a bug)");
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

Tensor layer_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& bias,
                          LayerNormCache& cache) {
    const std::size_t d = x.cols();
    if (gain.size() != d || bias.size() != d) {
        throw std::invalid_argument("layer_norm: gain/bias width mismatch with " + x.shape_str());
    }
    const std::size_t r = x.rows();
    Tensor out(x.shape());
    cache.x_hat = Tensor(x.shape());
    cache.inv_std.assign(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        auto xi = x.row(i);
        double mean = 0.0;
        for (double v : xi) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xi) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_std[i] = inv;
        auto hi = cache.x_hat.row(i);
        auto oi = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            hi[j] = (xi[j] - mean) * inv;
            oi[j] = hi[j] * gain[j] + bias[j];
        }
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    LayerNormCache cache;
    return layer_norm_forward(x, gain, bias, cache);
}

Tensor layer_norm_backward(const Tensor& g, const Tensor& gain, const LayerNormCache& cache,
                           Tensor& d_gain, Tensor& d_bias) {
    const std::size_t r = cache.x_hat.rows(), d = cache.x_hat.cols();
    if (d_gain.empty()) d_gain = Tensor({d});
    if (d_bias.empty()) d_bias = Tensor({d});
    Tensor dx(cache.x_hat.shape());
    for (std::size_t i = 0; i < r; ++i) {
        auto gi = g.row(i);
        auto hi = cache.x_hat.row(i);
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dh = gi[j] * gain[j];
            sum_dh += dh;
            sum_dh_h += dh * hi[j];
            d_gain[j] += gi[j] * hi[j];
            d_bias[j] += gi[j];
        }
        const double inv_n = 1.0 / static_cast<double>(d);
        auto di = dx.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dh = gi[j] * gain[j];
            di[j] = cache.inv_std[i] * (dh - inv_n * sum_dh - hi[j] * inv_n * sum_dh_h);
        }
    }
    return dx;
}

void l2_normalize_inplace(std::span<double> row) {
    double n = 0.0;
    for (double v : row) n += v * v;
    if (n == 0.0) throw std::invalid_argument("l2_normalize: zero row");
    const double inv = 1.0 / std::sqrt(n);
    for (double& v : row) v *= inv;
}

Tensor l2_normalize_forward(const Tensor& x, NormalizeCache& cache) {
    const std::size_t r = x.rows(), d = x.cols();
    cache.y = Tensor(x.shape());
    cache.inv_norm.assign(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        auto xi = x.row(i);
        double n = 0.0;
        for (double v : xi) n += v * v;
        if (n == 0.0) {
            throw std::invalid_argument("l2_normalize: zero row " + std::to_string(i));
        }
        const double inv = 1.0 / std::sqrt(n);
        cache.inv_norm[i] = inv;
        auto yi = cache.y.row(i);
        for (std::size_t j = 0; j < d; ++j) yi[j] = xi[j] * inv;
    }
    return cache.y;
}

Tensor l2_normalize_rows(const Tensor& x) {
    NormalizeCache cache;
    return l2_normalize_forward(x, cache);
}

Tensor l2_normalize_backward(const Tensor& g, const NormalizeCache& cache) {
    const std::size_t r = cache.y.rows(), d = cache.y.cols();
    Tensor dx(cache.y.shape());
    for (std::size_t i = 0; i < r; ++i) {
        auto yi = cache.y.row(i);
        auto gi = g.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += yi[j] * gi[j];
        auto di = dx.row(i);
        for (std::size_t j = 0; j < d; ++j) di[j] = (gi[j] - yi[j] * dot) * cache.inv_norm[i];
    }
    return dx;
}

Tensor mh_attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionWeights& w, std::size_t heads, MhaCache& cache) {
    require_rank2(q, "mh_attention");
    require_rank2(k, "mh_attention");
    require_rank2(v, "mh_attention");
    const std::size_t d = q.dim(1);
    if (k.dim(1) != d || v.dim(1) != d) {
        throw std::invalid_argument("mh_attention: width mismatch, q " + q.shape_str() + " k " +
                                    k.shape_str() + " v " + v.shape_str());
    }
    if (k.dim(0) != v.dim(0)) {
        throw std::invalid_argument("mh_attention: key/value row counts differ");
    }
    if (heads == 0 || d % heads != 0) {
        throw std::invalid_argument("mh_attention: width " + std::to_string(d) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    const std::size_t nq = q.dim(0), nk = k.dim(0), dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.heads = heads;
    cache.qp = matmul(q, w.wq);
    cache.kp = matmul(k, w.wk);
    cache.vp = matmul(v, w.wv);
    cache.attn.assign(heads, Tensor());
    cache.concat = Tensor({nq, d});

    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        Tensor scores({nq, nk});
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c)
                    acc += cache.qp.at(i, off + c) * cache.kp.at(j, off + c);
                scores.at(i, j) = acc * scale;
            }
        }
        Tensor a = softmax(scores, 1);
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < nk; ++j)
                    acc += a.at(i, j) * cache.vp.at(j, off + c);
                cache.concat.at(i, off + c) = acc;
            }
        }
        cache.attn[h] = std::move(a);
    }
    return matmul(cache.concat, w.wo);
}

Tensor mh_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                    const AttentionWeights& w, std::size_t heads) {
    MhaCache cache;
    return mh_attention_forward(q, k, v, w, heads, cache);
}

MhaGrads mh_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                               const AttentionWeights& w, const MhaCache& cache,
                               const Tensor& g) {
    const std::size_t d = q.dim(1), heads = cache.heads, dh = d / heads;
    const std::size_t nq = q.dim(0), nk = k.dim(0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    MhaGrads out;
    out.dq = Tensor(q.shape());
    out.dk = Tensor(k.shape());
    out.dv = Tensor(v.shape());

    // out = concat . wo
    Tensor d_concat;
    matmul_backward(cache.concat, w.wo, g, d_concat, out.dw.wo);

    Tensor d_qp({nq, d}), d_kp({nk, d}), d_vp({nk, d});
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        const Tensor& a = cache.attn[h];
        // dA = dO_h . Vh^T ; dVh = A^T . dO_h
        Tensor da({nq, nk});
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c)
                    acc += d_concat.at(i, off + c) * cache.vp.at(j, off + c);
                da.at(i, j) = acc;
            }
        }
        for (std::size_t j = 0; j < nk; ++j) {
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < nq; ++i)
                    acc += a.at(i, j) * d_concat.at(i, off + c);
                d_vp.at(j, off + c) = acc;
            }
        }
        Tensor ds = softmax_rows_backward(a, da);
        // dQh = dS . Kh * scale ; dKh = dS^T . Qh * scale
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < nk; ++j)
                    acc += ds.at(i, j) * cache.kp.at(j, off + c);
                d_qp.at(i, off + c) = acc * scale;
            }
        }
        for (std::size_t j = 0; j < nk; ++j) {
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < nq; ++i)
                    acc += ds.at(i, j) * cache.qp.at(i, off + c);
                d_kp.at(j, off + c) = acc * scale;
            }
        }
    }

    matmul_backward(q, w.wq, d_qp, out.dq, out.dw.wq);
    matmul_backward(k, w.wk, d_kp, out.dk, out.dw.wk);
    matmul_backward(v, w.wv, d_vp, out.dv, out.dw.wv);
    return out;
}

}  // namespace vla
