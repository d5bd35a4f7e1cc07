#include "vla/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "vla/rng.hpp"

namespace vla {

bool adamw_decays(const std::string& name) {
    if (name == "log_tau") return false;
    if (name.rfind("norm", 0) == 0) return false;  // norm{1..4}.gain/.bias
    return true;
}

void adamw_step(const NamedParams& params, const NamedGradsView& grads, OptimizerState& state,
                const AdamwConfig& cfg) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adamw_step: parameter/gradient list size mismatch");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);

    for (std::size_t n = 0; n < params.size(); ++n) {
        const auto& [name, theta] = params[n];
        const auto& [gname, grad] = grads[n];
        if (name != gname) {
            throw std::invalid_argument("adamw_step: name order mismatch, `" + name + "` vs `" +
                                        gname + "`");
        }
        if (!grad->all_finite()) {
            throw std::runtime_error("adamw_step: non-finite gradient for tensor `" + name + "`");
        }
        if (!theta->same_shape(*grad)) {
            throw std::invalid_argument("adamw_step: shape mismatch for tensor `" + name + "`");
        }
        auto it = state.moments.find(name);
        if (it == state.moments.end()) {
            it = state.moments.emplace(name, std::make_pair(Tensor(theta->shape()),
                                                            Tensor(theta->shape()))).first;
        }
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        const bool decay = adamw_decays(name) && cfg.weight_decay != 0.0;
        for (std::size_t i = 0; i < theta->size(); ++i) {
            const double g = (*grad)[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            double update = -cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
            if (decay) update -= cfg.lr * cfg.weight_decay * (*theta)[i];
            (*theta)[i] += update;
        }
    }
}

NamedParams trainable_tensors(Tensor& context, AlignerParams& params) {
    NamedParams out;
    out.emplace_back("context", &context);
    for (auto& [name, t] : params.named_tensors()) out.emplace_back(name, t);
    return out;
}

std::string format_trace_line(const TraceEntry& e) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g", e.iter, e.l_pixel, e.l_mask,
                  e.total, e.tau);
    return buf;
}

TrainResult train(const std::vector<SceneBundle>& dataset, const PromptSet& prompts,
                  const AlignerParams& params_init, const RunConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    cfg.validate();

    TrainResult result;
    result.context = prompts.context;
    result.params = params_init;

    PromptSet live = prompts;  // context is updated in place each step

    AdamwConfig adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.adam_eps;
    adam.weight_decay = cfg.weight_decay;

    OptimizerState state;
    NamedParams named = trainable_tensors(live.context, result.params);

    Rng shuffle_rng(cfg.seed ^ 0x7261696e65724cULL);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // force a shuffle on first use

    const std::size_t batch = std::min<std::size_t>(cfg.batch_size, dataset.size());
    result.trace.reserve(cfg.iters);

    for (std::size_t iter = 0; iter < cfg.iters; ++iter) {
        std::vector<std::size_t> picks;
        picks.reserve(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                for (std::size_t i = order.size(); i > 1; --i) {
                    std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
                }
                cursor = 0;
            }
            picks.push_back(order[cursor++]);
        }
        std::sort(picks.begin(), picks.end());

        AlignerParams grad_sum = AlignerParams::zeros_like(result.params);
        Tensor d_context_sum(live.context.shape());
        double l_pixel = 0.0, l_mask = 0.0;
        for (std::size_t idx : picks) {
            AlignLossResult r = loss_align(dataset[idx], live, result.params, cfg.lambda_pixel,
                                           cfg.lambda_mask, true);
            l_pixel += r.l_pixel;
            l_mask += r.l_mask;
            auto src = r.grads.named_tensors();
            auto dst = grad_sum.named_tensors();
            for (std::size_t n = 0; n < src.size(); ++n) {
                Tensor& acc = *dst[n].second;
                const Tensor& g = *src[n].second;
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
            }
            for (std::size_t i = 0; i < d_context_sum.size(); ++i) {
                d_context_sum[i] += r.d_context[i];
            }
        }
        const double inv_b = 1.0 / static_cast<double>(picks.size());
        l_pixel *= inv_b;
        l_mask *= inv_b;
        const double total = cfg.lambda_pixel * l_pixel + cfg.lambda_mask * l_mask;

        if (!std::isfinite(total)) {
            // Abort with the last good parameters (no step applied).
            result.diverged = true;
            result.iterations_run = iter;
            result.context = live.context;
            return result;
        }

        for (std::size_t i = 0; i < d_context_sum.size(); ++i) d_context_sum[i] *= inv_b;
        for (auto& [name, t] : grad_sum.named_tensors()) {
            for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] *= inv_b;
        }

        const double tau_used = result.params.tau();
        NamedGradsView grads_view;
        grads_view.emplace_back("context", &d_context_sum);
        for (auto& [name, t] : grad_sum.named_tensors()) grads_view.emplace_back(name, t);
        adamw_step(named, grads_view, state, adam);

        TraceEntry e;
        e.iter = iter;
        e.l_pixel = l_pixel;
        e.l_mask = l_mask;
        e.total = total;
        e.tau = tau_used;
        result.trace.push_back(e);
    }
    result.iterations_run = cfg.iters;
    result.context = live.context;
    return result;
}

NamedGrads analytic_gradients(const SceneBundle& scene, const PromptSet& prompts,
                              const AlignerParams& params, double lambda_pixel,
                              double lambda_mask) {
    AlignLossResult r = loss_align(scene, prompts, params, lambda_pixel, lambda_mask, true);
    NamedGrads out;
    out.emplace_back("context", std::move(r.d_context));
    for (auto& [name, t] : r.grads.named_tensors()) out.emplace_back(name, *t);
    return out;
}

NamedGrads finite_difference_gradients(const SceneBundle& scene, const PromptSet& prompts,
                                       const AlignerParams& params, double lambda_pixel,
                                       double lambda_mask, double step) {
    PromptSet p = prompts;
    AlignerParams a = params;
    NamedParams named = trainable_tensors(p.context, a);

    NamedGrads out;
    for (auto& [name, tensor] : named) {
        Tensor g(tensor->shape());
        for (std::size_t i = 0; i < tensor->size(); ++i) {
            const double saved = (*tensor)[i];
            (*tensor)[i] = saved + step;
            const double up = loss_align(scene, p, a, lambda_pixel, lambda_mask, false).total;
            (*tensor)[i] = saved - step;
            const double down = loss_align(scene, p, a, lambda_pixel, lambda_mask, false).total;
            (*tensor)[i] = saved;
            g[i] = (up - down) / (2.0 * step);
        }
        out.emplace_back(name, std::move(g));
    }
    return out;
}

GradCheckReport compare_gradients(const NamedGrads& analytic, const NamedGrads& fd,
                                  double rel_tol, double abs_tol) {
    if (analytic.size() != fd.size()) {
        throw std::invalid_argument("compare_gradients: list size mismatch");
    }
    GradCheckReport report;
    for (std::size_t n = 0; n < analytic.size(); ++n) {
        const auto& [name, a] = analytic[n];
        const auto& [fname, f] = fd[n];
        if (name != fname || !a.same_shape(f)) {
            throw std::invalid_argument("compare_gradients: layout mismatch at `" + name + "`");
        }
        GradCheckReport::TensorStat stat;
        stat.name = name;
        stat.checked = a.size();
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double err = std::abs(a[i] - f[i]);
            const double mag = std::max(std::abs(a[i]), std::abs(f[i]));
            stat.max_abs_err = std::max(stat.max_abs_err, err);
            stat.max_rel_err = std::max(stat.max_rel_err, err / std::max(mag, abs_tol));
            if (err > std::max(abs_tol, rel_tol * mag)) {
                report.violations.push_back({name, i, a[i], f[i], err});
            }
        }
        report.tensors.push_back(stat);
    }
    return report;
}

GradCheckReport grad_check(const SceneBundle& scene, const PromptSet& prompts,
                           const AlignerParams& params, double lambda_pixel, double lambda_mask,
                           double step, double rel_tol, double abs_tol) {
    const NamedGrads a = analytic_gradients(scene, prompts, params, lambda_pixel, lambda_mask);
    const NamedGrads f =
        finite_difference_gradients(scene, prompts, params, lambda_pixel, lambda_mask, step);
    return compare_gradients(a, f, rel_tol, abs_tol);
}

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    for (const auto& t : tensors) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-18s checked=%zu max_abs=%.3e max_rel=%.3e\n",
                      t.name.c_str(), t.checked, t.max_abs_err, t.max_rel_err);
        os << buf;
    }
    if (violations.empty()) {
        os << "no violations\n";
    } else {
        os << violations.size() << " violation(s), first: ";
        const auto& v = violations.front();
        char buf[200];
        std::snprintf(buf, sizeof(buf), "%s[%zu] analytic=%.6e fd=%.6e err=%.3e\n",
                      v.tensor.c_str(), v.index, v.analytic, v.fd, v.abs_err);
        os << buf;
    }
    return os.str();
}

}  // namespace vla
