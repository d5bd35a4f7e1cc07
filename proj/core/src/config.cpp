#include "vla/config.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "vla/vlt_io.hpp"

namespace vla {

AlignMode parse_align_mode(const std::string& text) {
    if (text == "pixel") return AlignMode::Pixel;
    if (text == "mask") return AlignMode::Mask;
    if (text == "both") return AlignMode::Both;
    throw std::invalid_argument("align: expected pixel|mask|both, got `" + text + "`");
}

std::string align_mode_name(AlignMode mode) {
    switch (mode) {
        case AlignMode::Pixel: return "pixel";
        case AlignMode::Mask: return "mask";
        case AlignMode::Both: return "both";
    }
    return "both";
}

SourceFlags parse_sources(const std::string& csv) {
    SourceFlags s{false, false, false};
    std::stringstream ss(csv);
    std::string item;
    bool seen = false;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        seen = true;
        if (item == "conf") s.conf = true;
        else if (item == "text") s.text = true;
        else if (item == "img") s.img = true;
        else throw std::invalid_argument("sources: expected subset of conf,text,img, got `" + item + "`");
    }
    if (!seen) throw std::invalid_argument("sources: empty source list");
    return s;
}

std::string sources_name(const SourceFlags& s) {
    std::string out;
    if (s.conf) out += "conf";
    if (s.text) out += out.empty() ? "text" : ",text";
    if (s.img) out += out.empty() ? "img" : ",img";
    return out;
}

namespace {

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected a number, got `" + v + "`");
    }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size() || x < 0) throw std::invalid_argument("bad");
        return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected a non-negative integer, got `" + v + "`");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument(key + ": expected true/false, got `" + v + "`");
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "classes") classes = parse_size(key, value);
    else if (key == "embed_dim") embed_dim = parse_size(key, value);
    else if (key == "feature_dim") feature_dim = parse_size(key, value);
    else if (key == "query_dim") query_dim = parse_size(key, value);
    else if (key == "context_tokens") context_tokens = parse_size(key, value);
    else if (key == "heads") heads = parse_size(key, value);
    else if (key == "ffn_hidden") ffn_hidden = parse_size(key, value);
    else if (key == "tau_init") tau_init = parse_double(key, value);
    else if (key == "align") align = parse_align_mode(value);
    else if (key == "lambda_pixel") lambda_pixel = parse_double(key, value);
    else if (key == "lambda_mask") lambda_mask = parse_double(key, value);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "weight_decay") weight_decay = parse_double(key, value);
    else if (key == "beta1") beta1 = parse_double(key, value);
    else if (key == "beta2") beta2 = parse_double(key, value);
    else if (key == "adam_eps") adam_eps = parse_double(key, value);
    else if (key == "batch_size") batch_size = parse_size(key, value);
    else if (key == "iters") iters = parse_size(key, value);
    else if (key == "alpha") alpha = parse_double(key, value);
    else if (key == "beta") beta = parse_double(key, value);
    else if (key == "gamma") gamma = parse_double(key, value);
    else if (key == "raw_sim") raw_sim = parse_bool(key, value);
    else if (key == "sources") sources = parse_sources(value);
    else if (key == "renormalize_sources") renormalize_sources = parse_bool(key, value);
    else if (key == "component_threshold") component_threshold = parse_double(key, value);
    else if (key == "seed") seed = static_cast<std::uint64_t>(parse_size(key, value));
    else if (key == "scenes") scenes = parse_size(key, value);
    else if (key == "train_fraction") train_fraction = parse_double(key, value);
    else if (key == "grid_h") grid_h = parse_size(key, value);
    else if (key == "grid_w") grid_w = parse_size(key, value);
    else if (key == "stride") stride = parse_size(key, value);
    else if (key == "queries") queries = parse_size(key, value);
    else if (key == "ood_prototypes") ood_prototypes = parse_size(key, value);
    else if (key == "noise_sigma") noise_sigma = parse_double(key, value);
    else if (key == "blob_min_radius") blob_min_radius = parse_double(key, value);
    else if (key == "blob_max_radius") blob_max_radius = parse_double(key, value);
    else if (key == "max_blobs") max_blobs = parse_size(key, value);
    else if (key == "margin_lo") margin_lo = parse_double(key, value);
    else if (key == "margin_hi") margin_hi = parse_double(key, value);
    else if (key == "claim_prob") claim_prob = parse_double(key, value);
    else if (key == "claim_margin_lo") claim_margin_lo = parse_double(key, value);
    else if (key == "claim_margin_hi") claim_margin_hi = parse_double(key, value);
    else if (key == "logit_noise") logit_noise = parse_double(key, value);
    else throw std::invalid_argument("config: unknown key `" + key + "`");
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "# model\n";
    os << "classes = " << classes << "\n";
    os << "embed_dim = " << embed_dim << "\n";
    os << "feature_dim = " << feature_dim << "\n";
    os << "query_dim = " << query_dim << "\n";
    os << "context_tokens = " << context_tokens << "\n";
    os << "heads = " << heads << "\n";
    os << "ffn_hidden = " << ffn_hidden << "\n";
    os << "tau_init = " << fmt(tau_init) << "\n";
    os << "align = " << align_mode_name(align) << "\n";
    os << "# loss\n";
    os << "lambda_pixel = " << fmt(lambda_pixel) << "\n";
    os << "lambda_mask = " << fmt(lambda_mask) << "\n";
    os << "# optimizer\n";
    os << "lr = " << fmt(lr) << "\n";
    os << "weight_decay = " << fmt(weight_decay) << "\n";
    os << "beta1 = " << fmt(beta1) << "\n";
    os << "beta2 = " << fmt(beta2) << "\n";
    os << "adam_eps = " << fmt(adam_eps) << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "iters = " << iters << "\n";
    os << "# fusion\n";
    os << "alpha = " << fmt(alpha) << "\n";
    os << "beta = " << fmt(beta) << "\n";
    os << "gamma = " << fmt(gamma) << "\n";
    os << "raw_sim = " << (raw_sim ? "true" : "false") << "\n";
    os << "sources = " << sources_name(sources) << "\n";
    os << "renormalize_sources = " << (renormalize_sources ? "true" : "false") << "\n";
    os << "component_threshold = " << fmt(component_threshold) << "\n";
    os << "# synth\n";
    os << "seed = " << seed << "\n";
    os << "scenes = " << scenes << "\n";
    os << "train_fraction = " << fmt(train_fraction) << "\n";
    os << "grid_h = " << grid_h << "\n";
    os << "grid_w = " << grid_w << "\n";
    os << "stride = " << stride << "\n";
    os << "queries = " << queries << "\n";
    os << "ood_prototypes = " << ood_prototypes << "\n";
    os << "noise_sigma = " << fmt(noise_sigma) << "\n";
    os << "blob_min_radius = " << fmt(blob_min_radius) << "\n";
    os << "blob_max_radius = " << fmt(blob_max_radius) << "\n";
    os << "max_blobs = " << max_blobs << "\n";
    os << "margin_lo = " << fmt(margin_lo) << "\n";
    os << "margin_hi = " << fmt(margin_hi) << "\n";
    os << "claim_prob = " << fmt(claim_prob) << "\n";
    os << "claim_margin_lo = " << fmt(claim_margin_lo) << "\n";
    os << "claim_margin_hi = " << fmt(claim_margin_hi) << "\n";
    os << "logit_noise = " << fmt(logit_noise) << "\n";
    return os.str();
}

void RunConfig::validate() const {
    if (classes < 1) throw std::invalid_argument("config: classes must be >= 1");
    if (embed_dim < 2) throw std::invalid_argument("config: embed_dim must be >= 2");
    if (context_tokens < 1) throw std::invalid_argument("config: context_tokens must be >= 1");
    if (heads == 0 || embed_dim % heads != 0) {
        throw std::invalid_argument("config: embed_dim must be divisible by heads");
    }
    if (tau_init <= 0.0) throw std::invalid_argument("config: tau_init must be > 0");
    if (lambda_pixel < 0.0 || lambda_mask < 0.0) {
        throw std::invalid_argument("config: lambda weights must be >= 0");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("config: train_fraction must be in (0, 1)");
    }
    if (stride < 1) throw std::invalid_argument("config: stride must be >= 1");
    if (queries < 1) throw std::invalid_argument("config: queries must be >= 1");
    if (ood_prototypes < 1) throw std::invalid_argument("config: ood_prototypes must be >= 1");
    if (!sources.any()) throw std::invalid_argument("config: at least one score source required");
    if (blob_min_radius > blob_max_radius) {
        throw std::invalid_argument("config: blob_min_radius > blob_max_radius");
    }
    if (batch_size == 0) throw std::invalid_argument("config: batch_size must be >= 1");
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = line;
        if (auto hash = t.find('#'); hash != std::string::npos) t = t.substr(0, hash);
        const auto notspace = t.find_first_not_of(" \t\r\n");
        if (notspace == std::string::npos) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": expected `key = value`");
        }
        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r\n");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r\n");
            return s.substr(b, e - b + 1);
        };
        cfg.set(strip(t.substr(0, eq)), strip(t.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    return parse_config_text(read_text_file(path), path.string());
}

}  // namespace vla
