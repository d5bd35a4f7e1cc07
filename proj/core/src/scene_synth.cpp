#include "vla/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vla/kernels.hpp"
#include "vla/rng.hpp"

namespace vla {

namespace {

constexpr double kMaskLogitBig = 12.0;  // sigmoid(12) ~ 0.999994

Tensor sample_separated_rows(Rng& rng, std::size_t rows, std::size_t dim, double max_cos,
                             const char* what) {
    Tensor out({rows, dim});
    for (std::size_t r = 0; r < rows; ++r) {
        bool placed = false;
        for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
            std::vector<double> v(dim);
            for (auto& x : v) x = rng.gaussian();
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm == 0.0) continue;
            for (auto& x : v) x /= norm;
            placed = true;
            for (std::size_t q = 0; q < r && placed; ++q) {
                double dot = 0.0;
                for (std::size_t j = 0; j < dim; ++j) dot += v[j] * out.at(q, j);
                if (dot >= max_cos) placed = false;
            }
            if (placed) {
                for (std::size_t j = 0; j < dim; ++j) out.at(r, j) = v[j];
            }
        }
        if (!placed) {
            throw std::runtime_error(std::string("make_prototypes: could not separate ") + what +
                                     " prototypes (dimension too small for the class count?)");
        }
    }
    return out;
}

}  // namespace

SynthConfig SynthConfig::from_run_config(const RunConfig& cfg) {
    SynthConfig s;
    s.seed = cfg.seed;
    s.grid_h = cfg.grid_h;
    s.grid_w = cfg.grid_w;
    s.stride = cfg.stride;
    s.classes = cfg.classes;
    s.n_ood = cfg.ood_prototypes;
    s.feature_dim = cfg.feature_dim;
    s.query_dim = cfg.query_dim;
    s.embed_dim = cfg.embed_dim;
    s.queries = cfg.queries;
    s.max_blobs = cfg.max_blobs;
    s.noise_sigma = cfg.noise_sigma;
    s.blob_min_radius = cfg.blob_min_radius;
    s.blob_max_radius = cfg.blob_max_radius;
    s.margin_lo = cfg.margin_lo;
    s.margin_hi = cfg.margin_hi;
    s.claim_prob = cfg.claim_prob;
    s.claim_margin_lo = cfg.claim_margin_lo;
    s.claim_margin_hi = cfg.claim_margin_hi;
    s.logit_noise = cfg.logit_noise;
    s.validate();
    return s;
}

void SynthConfig::validate() const {
    if (classes < 1) throw std::invalid_argument("synth: need at least one class");
    if (n_ood < 1) throw std::invalid_argument("synth: need at least one OOD prototype");
    if (stride < 1) throw std::invalid_argument("synth: stride must be >= 1");
    if (queries <= max_blobs) {
        throw std::invalid_argument("synth: queries must exceed max_blobs (region sites left: " +
                                    std::to_string(queries) + " - " + std::to_string(max_blobs) +
                                    ")");
    }
    if (blob_min_radius > blob_max_radius || blob_min_radius <= 0.0) {
        throw std::invalid_argument("synth: bad blob radius range");
    }
    if (grid_h < 2 || grid_w < 2) throw std::invalid_argument("synth: grid too small");
}

SynthPrototypes make_prototypes(const SynthConfig& cfg) {
    cfg.validate();
    SynthPrototypes p;
    Rng rng(cfg.seed ^ 0x70726f746fULL);
    p.class_tokens = sample_separated_rows(rng, cfg.classes, cfg.embed_dim, 0.5, "class-token");
    p.feature_protos =
        sample_separated_rows(rng, cfg.classes + cfg.n_ood, cfg.feature_dim, 0.5, "feature");
    p.query_protos = sample_separated_rows(rng, cfg.classes, cfg.query_dim, 0.5, "query");
    p.class_names.reserve(cfg.classes);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "class_%02zu", c);
        p.class_names.emplace_back(buf);
    }
    return p;
}

std::vector<SceneBundle> generate(const SynthConfig& cfg, std::size_t n_scenes,
                                  std::vector<std::size_t>* blob_cells_log) {
    cfg.validate();
    const SynthPrototypes protos = make_prototypes(cfg);
    const std::size_t h = cfg.grid_h, w = cfg.grid_w, s = cfg.stride;
    const std::size_t H = h * s, W = w * s;
    const std::size_t n_sites = cfg.region_sites();
    const std::size_t c_k = cfg.classes;

    if (blob_cells_log != nullptr) blob_cells_log->clear();
    const Rng base(cfg.seed ^ 0x7363656e65ULL);

    std::vector<SceneBundle> scenes;
    scenes.reserve(n_scenes);
    for (std::size_t scene_idx = 0; scene_idx < n_scenes; ++scene_idx) {
        Rng rng = base.fork(scene_idx);
        SceneBundle scene;
        {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "scene_%04zu", scene_idx);
            scene.name = buf;
        }

        // Voronoi class regions over random sites.
        std::vector<double> site_y(n_sites), site_x(n_sites);
        std::vector<std::size_t> site_class(n_sites);
        for (std::size_t m = 0; m < n_sites; ++m) {
            site_y[m] = rng.uniform(0.0, static_cast<double>(h));
            site_x[m] = rng.uniform(0.0, static_cast<double>(w));
            site_class[m] = rng.uniform_index(c_k);
        }
        std::vector<std::size_t> region(h * w, 0);
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                double best = 1e300;
                std::size_t best_m = 0;
                for (std::size_t m = 0; m < n_sites; ++m) {
                    const double dy = (static_cast<double>(i) + 0.5) - site_y[m];
                    const double dx = (static_cast<double>(j) + 0.5) - site_x[m];
                    const double dist = dy * dy + dx * dx;
                    if (dist < best) {
                        best = dist;
                        best_m = m;
                    }
                }
                region[i * w + j] = best_m;
            }
        }

        // Injected OOD blobs: jittered ellipses rasterized on the grid.
        const std::size_t n_blobs = rng.uniform_index(cfg.max_blobs + 1);
        std::vector<int> blob_id(h * w, -1);
        std::vector<bool> blob_claimed(n_blobs, false);
        std::vector<std::size_t> blob_claim_class(n_blobs, 0);
        std::vector<double> blob_claim_margin(n_blobs, 0.0);
        std::vector<std::size_t> blob_proto(n_blobs, 0);
        std::size_t blob_cells_total = 0;
        for (std::size_t b = 0; b < n_blobs; ++b) {
            bool placed = false;
            for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
                const double ry = rng.uniform(cfg.blob_min_radius, cfg.blob_max_radius);
                const double rx = rng.uniform(cfg.blob_min_radius, cfg.blob_max_radius);
                const double margin_y = ry + 0.5, margin_x = rx + 0.5;
                if (2.0 * margin_y >= static_cast<double>(h) ||
                    2.0 * margin_x >= static_cast<double>(w)) {
                    continue;
                }
                const double cy = rng.uniform(margin_y, static_cast<double>(h) - margin_y);
                const double cx = rng.uniform(margin_x, static_cast<double>(w) - margin_x);
                const double phase = rng.uniform(0.0, 2.0 * M_PI);

                std::vector<std::size_t> cells;
                for (std::size_t i = 0; i < h; ++i) {
                    for (std::size_t j = 0; j < w; ++j) {
                        const double dy = (static_cast<double>(i) + 0.5 - cy) / ry;
                        const double dx = (static_cast<double>(j) + 0.5 - cx) / rx;
                        const double metric = dy * dy + dx * dx;
                        const double theta = std::atan2(dy, dx);
                        const double edge = 1.0 + 0.25 * std::sin(5.0 * theta + phase);
                        if (metric <= edge * edge && blob_id[i * w + j] < 0) {
                            cells.push_back(i * w + j);
                        }
                    }
                }
                if (cells.empty() || cells.size() > h * w / 4) continue;
                for (std::size_t c : cells) blob_id[c] = static_cast<int>(b);
                blob_cells_total += cells.size();
                placed = true;
            }
            if (!placed) {
                throw std::runtime_error("generate: infeasible blob placement in scene " +
                                         scene.name + " (grid too small for the radius range?)");
            }
            blob_proto[b] = rng.uniform_index(cfg.n_ood);
            blob_claimed[b] = rng.uniform() < cfg.claim_prob;
            blob_claim_class[b] = rng.uniform_index(c_k);
            blob_claim_margin[b] = rng.uniform(cfg.claim_margin_lo, cfg.claim_margin_hi);
        }
        if (blob_cells_log != nullptr) blob_cells_log->push_back(blob_cells_total);

        // Pixel features and ground-truth labels at grid resolution.
        scene.pixel_features = Tensor({h, w, cfg.feature_dim});
        scene.gt_labels.assign(h * w, kIgnoreLabel);
        for (std::size_t p = 0; p < h * w; ++p) {
            const bool is_blob = blob_id[p] >= 0;
            const std::size_t proto_row =
                is_blob ? c_k + blob_proto[static_cast<std::size_t>(blob_id[p])]
                        : site_class[region[p]];
            for (std::size_t c = 0; c < cfg.feature_dim; ++c) {
                scene.pixel_features[p * cfg.feature_dim + c] =
                    protos.feature_protos.at(proto_row, c) + rng.gaussian(0.0, cfg.noise_sigma);
            }
            if (!is_blob) scene.gt_labels[p] = static_cast<int>(site_class[region[p]]);
        }

        // OOD mask at output resolution (stride blocks of blob cells).
        scene.ood_mask.assign(H * W, 0);
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                if (blob_id[i * w + j] < 0) continue;
                for (std::size_t a = 0; a < s; ++a) {
                    for (std::size_t b2 = 0; b2 < s; ++b2) {
                        scene.ood_mask[(i * s + a) * W + (j * s + b2)] = 1;
                    }
                }
            }
        }

        // Queries: region sites first, then reserved anomaly slots.
        const double scene_margin = rng.uniform(cfg.margin_lo, cfg.margin_hi);
        scene.mask_queries = Tensor({cfg.queries, cfg.query_dim});
        scene.class_logits = Tensor({cfg.queries, c_k});
        scene.mask_logits = Tensor({cfg.queries, H, W});
        scene.gt_query_labels.assign(cfg.queries, kNoObject);
        scene.mask_logits.fill(-kMaskLogitBig);

        for (std::size_t m = 0; m < cfg.queries; ++m) {
            for (std::size_t k = 0; k < c_k; ++k) {
                scene.class_logits.at(m, k) = rng.gaussian(0.0, cfg.logit_noise);
            }
            if (m < n_sites) {
                std::size_t live_cells = 0;
                for (std::size_t p = 0; p < h * w; ++p) {
                    if (region[p] == m && blob_id[p] < 0) {
                        ++live_cells;
                        const std::size_t i = p / w, j = p % w;
                        for (std::size_t a = 0; a < s; ++a) {
                            for (std::size_t b2 = 0; b2 < s; ++b2) {
                                scene.mask_logits.at(m, i * s + a, j * s + b2) = kMaskLogitBig;
                            }
                        }
                    }
                }
                const std::size_t cls = site_class[m];
                for (std::size_t c = 0; c < cfg.query_dim; ++c) {
                    scene.mask_queries.at(m, c) =
                        protos.query_protos.at(cls, c) + rng.gaussian(0.0, cfg.noise_sigma);
                }
                if (live_cells > 0) {
                    scene.gt_query_labels[m] = static_cast<int>(cls);
                    scene.class_logits.at(m, cls) += scene_margin;
                } else {
                    // Region fully swallowed by blobs: drop the mask again.
                    for (std::size_t p = 0; p < H * W; ++p) {
                        scene.mask_logits[m * H * W + p] = -kMaskLogitBig;
                    }
                }
            } else {
                const std::size_t b = m - n_sites;
                if (b < n_blobs && blob_claimed[b]) {
                    // The frozen detector hallucinates a known class over the
                    // anomaly; no ground-truth label, inference-only effect.
                    const std::size_t cls = blob_claim_class[b];
                    scene.class_logits.at(m, cls) += blob_claim_margin[b];
                    for (std::size_t c = 0; c < cfg.query_dim; ++c) {
                        scene.mask_queries.at(m, c) =
                            protos.query_protos.at(cls, c) + rng.gaussian(0.0, cfg.noise_sigma);
                    }
                    for (std::size_t p = 0; p < h * w; ++p) {
                        if (blob_id[p] == static_cast<int>(b)) {
                            const std::size_t i = p / w, j = p % w;
                            for (std::size_t a = 0; a < s; ++a) {
                                for (std::size_t b2 = 0; b2 < s; ++b2) {
                                    scene.mask_logits.at(m, i * s + a, j * s + b2) = kMaskLogitBig;
                                }
                            }
                        }
                    }
                } else {
                    for (std::size_t c = 0; c < cfg.query_dim; ++c) {
                        scene.mask_queries.at(m, c) = rng.gaussian(0.0, 1.0);
                    }
                }
            }
        }
        scene.validate();
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_scenes(
    const std::vector<SceneBundle>& scenes, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("split_scenes: train_fraction must be in (0, 1)");
    }
    const std::size_t n = scenes.size();
    if (n < 2) throw std::invalid_argument("split_scenes: need at least two scenes");
    const std::size_t n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * train_fraction + 1e-12));
    const std::size_t n_eval = n - n_train;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed ^ 0x73706c6974ULL);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }

    auto has_ood = [&](std::size_t idx) {
        for (auto v : scenes[idx].ood_mask) {
            if (v) return true;
        }
        return false;
    };

    std::vector<std::size_t> eval_set;
    std::vector<bool> taken(n, false);
    for (std::size_t i = 0; i < n && eval_set.size() < n_eval; ++i) {
        if (has_ood(order[i])) {
            eval_set.push_back(order[i]);
            taken[order[i]] = true;
        }
    }
    if (eval_set.size() < n_eval) {
        throw std::runtime_error("split_scenes: only " + std::to_string(eval_set.size()) +
                                 " scenes contain OOD blobs, need " + std::to_string(n_eval) +
                                 " for the eval split");
    }
    std::vector<std::size_t> train_set;
    for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i]) train_set.push_back(i);
    }
    std::sort(eval_set.begin(), eval_set.end());
    return {train_set, eval_set};
}

}  // namespace vla
