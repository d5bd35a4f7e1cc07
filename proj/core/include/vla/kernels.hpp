#pragma once

#include <cstddef>
#include <vector>

#include "vla/tensor.hpp"

namespace vla {

// ---------------------------------------------------------------------------
// Forward kernels
// ---------------------------------------------------------------------------

/// Standard matrix product, row-major deterministic summation order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Softmax along `axis`, computed with max-subtraction.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Elementwise logistic 1/(1+e^-x).
Tensor sigmoid(const Tensor& x);
double sigmoid(double x);

/// Cosine similarity of two equal-length vectors. Zero-norm input is an error.
double cosine_sim(const Tensor& a, const Tensor& b);

/// Per-row zero mean / unit variance (biased variance, eps inside the sqrt)
/// followed by the affine gain/bias over the last axis.
inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// L2-normalize every row (last axis) of x. Zero rows are an error.
Tensor l2_normalize_rows(const Tensor& x);
void l2_normalize_inplace(std::span<double> row);

struct AttentionWeights {
    Tensor wq, wk, wv, wo;  // each d x d
};

/// Scaled dot-product multi-head attention with output projection.
/// q: Nq x d, k/v: Nk x d, per-head scaling 1/sqrt(d/heads).
Tensor mh_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                    const AttentionWeights& w, std::size_t heads);

// ---------------------------------------------------------------------------
// Backward kernels (reverse-mode adjoints, hand-derived)
// ---------------------------------------------------------------------------

/// d(a.b) given upstream g: returns (da, db).
void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& g, Tensor& da, Tensor& db);

/// Adjoint of row softmax: y = softmax rows of some input, g = upstream.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& g);

struct LayerNormCache {
    Tensor x_hat;             // normalized rows before affine
    std::vector<double> inv_std;  // one per row
};
Tensor layer_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& bias,
                          LayerNormCache& cache);
/// Returns dx; accumulates into d_gain / d_bias.
Tensor layer_norm_backward(const Tensor& g, const Tensor& gain, const LayerNormCache& cache,
                           Tensor& d_gain, Tensor& d_bias);

struct NormalizeCache {
    Tensor y;                 // normalized rows
    std::vector<double> inv_norm;
};
Tensor l2_normalize_forward(const Tensor& x, NormalizeCache& cache);
Tensor l2_normalize_backward(const Tensor& g, const NormalizeCache& cache);

struct MhaCache {
    Tensor qp, kp, vp;        // projected inputs, N x d
    std::vector<Tensor> attn; // per head: Nq x Nk softmax weights
    Tensor concat;            // Nq x d pre-output-projection
    std::size_t heads = 0;
};
Tensor mh_attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionWeights& w, std::size_t heads, MhaCache& cache);
struct MhaGrads {
    Tensor dq, dk, dv;
    AttentionWeights dw;
};
MhaGrads mh_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                               const AttentionWeights& w, const MhaCache& cache,
                               const Tensor& g);

}  // namespace vla
