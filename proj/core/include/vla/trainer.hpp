#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vla/aligner.hpp"
#include "vla/config.hpp"
#include "vla/embeddings.hpp"
#include "vla/scene.hpp"
#include "vla/tensor.hpp"

namespace vla {

struct AdamwConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// First/second moment pairs keyed by tensor name; step counts every update.
struct OptimizerState {
    std::size_t step = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments;
};

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;
using NamedGradsView = std::vector<std::pair<std::string, const Tensor*>>;

/// Decoupled weight decay is skipped for the temperature and the layer-norm
/// affine parameters; everything else decays.
bool adamw_decays(const std::string& name);

/// Bias-corrected Adam update with decoupled weight decay applied directly to
/// the parameters. Throws (naming the tensor) on a non-finite gradient.
void adamw_step(const NamedParams& params, const NamedGradsView& grads, OptimizerState& state,
                const AdamwConfig& cfg);

/// The full trainable set: prompt context first, then every aligner tensor.
NamedParams trainable_tensors(Tensor& context, AlignerParams& params);

struct TraceEntry {
    std::size_t iter = 0;
    double l_pixel = 0.0;
    double l_mask = 0.0;
    double total = 0.0;
    double tau = 0.0;
};
/// `iter,L_pixel,L_mask,total,tau` with 9 significant digits.
std::string format_trace_line(const TraceEntry& e);

struct TrainResult {
    Tensor context;
    AlignerParams params;
    std::vector<TraceEntry> trace;
    bool diverged = false;
    std::size_t iterations_run = 0;
};

/// Seeded-shuffled mini-batch optimization of the context tokens and aligner
/// parameters. Deterministic given the seed: batch composition, accumulation
/// order (ascending scene index) and updates are all fixed. On a non-finite
/// loss the loop stops and the last good parameters are returned.
TrainResult train(const std::vector<SceneBundle>& dataset, const PromptSet& prompts,
                  const AlignerParams& params_init, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct GradCheckViolation {
    std::string tensor;
    std::size_t index = 0;
    double analytic = 0.0;
    double fd = 0.0;
    double abs_err = 0.0;
};

struct GradCheckReport {
    struct TensorStat {
        std::string name;
        double max_abs_err = 0.0;
        double max_rel_err = 0.0;
        std::size_t checked = 0;
    };
    std::vector<TensorStat> tensors;
    std::vector<GradCheckViolation> violations;
    bool ok() const { return violations.empty(); }
    std::string summary() const;
};

using NamedGrads = std::vector<std::pair<std::string, Tensor>>;

/// Central finite differences of the combined alignment loss for every
/// trainable scalar (context tokens included).
NamedGrads finite_difference_gradients(const SceneBundle& scene, const PromptSet& prompts,
                                       const AlignerParams& params, double lambda_pixel,
                                       double lambda_mask, double step);

/// Analytic gradients in the same named layout.
NamedGrads analytic_gradients(const SceneBundle& scene, const PromptSet& prompts,
                              const AlignerParams& params, double lambda_pixel,
                              double lambda_mask);

/// A coordinate violates when |a - fd| > max(abs_tol, rel_tol * max(|a|,|fd|)).
GradCheckReport compare_gradients(const NamedGrads& analytic, const NamedGrads& fd,
                                  double rel_tol, double abs_tol);

GradCheckReport grad_check(const SceneBundle& scene, const PromptSet& prompts,
                           const AlignerParams& params, double lambda_pixel, double lambda_mask,
                           double step = 1e-3, double rel_tol = 1e-4, double abs_tol = 1e-6);

}  // namespace vla
