#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppinet/denoise.hpp"
#include "ppinet/errors.hpp"
#include "ppinet/geometry.hpp"
#include "ppinet/handdraw.hpp"
#include "ppinet/numcore/autodiff.hpp"
#include "ppinet/numcore/tensor.hpp"

namespace ppinet {

struct ModelConfig {
    int image = 128;
    int patch = 16;
    int embed_dim = 64;
    int enc_layers = 2;
    int dec_layers = 2;
    int heads = 4;
    int ffn_dim = 256;
    int n_queries = 20;
    int n_kinds = kNumKinds;
    // predict parameters as a logit offset from each query's own reference parameters
    bool refine = false;
    // with refine: update the references after every decoder layer
    bool iterative = false;

    int tokens() const { return (image / patch) * (image / patch); }
    int patch_dim() const { return patch * patch; }

    static ModelConfig tiny() { return {}; }
    static ModelConfig full() { return {128, 16, 256, 6, 6, 8, 1024, 20, kNumKinds, false, false}; }

    void validate() const {
        if (image != kImageSize) throw Error("model image size must be 128");
        if (patch <= 0 || image % patch != 0) throw Error("patch must divide the image size");
        if (embed_dim <= 0 || embed_dim % 4 != 0) throw Error("embed_dim must be a positive multiple of 4");
        if (heads <= 0 || embed_dim % heads != 0) throw Error("embed_dim must be divisible by heads");
        if (n_queries < 1 || n_kinds != kNumKinds) throw Error("invalid query/kind count");
        if (enc_layers < 0 || dec_layers < 1 || ffn_dim < 1) throw Error("invalid layer sizes");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"image", c.image},         {"patch", c.patch},         {"embed_dim", c.embed_dim},
            {"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers}, {"heads", c.heads},
            {"ffn_dim", c.ffn_dim},     {"n_queries", c.n_queries}, {"n_kinds", c.n_kinds},
            {"refine", c.refine}, {"iterative", c.iterative}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.image = j.value("image", c.image);
    c.patch = j.value("patch", c.patch);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.heads = j.value("heads", c.heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.n_queries = j.value("n_queries", c.n_queries);
    c.n_kinds = j.value("n_kinds", c.n_kinds);
    c.refine = j.value("refine", c.refine);
    c.iterative = j.value("iterative", c.iterative);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// positional encodings

inline constexpr double kPeTemperature = 20.0;

/// Interleaved sin/cos of x at dim/4 geometric frequencies 2*pi / 20^(4i/dim); length dim/2.
template <class T>
std::vector<T> sinusoidal_pe(double x, int dim) {
    const int nf = dim / 4;
    std::vector<T> out(static_cast<std::size_t>(2 * nf));
    for (int i = 0; i < nf; ++i) {
        const double w = 2.0 * std::numbers::pi / std::pow(kPeTemperature, 4.0 * i / dim);
        out[2 * i] = static_cast<T>(std::sin(x * w));
        out[2 * i + 1] = static_cast<T>(std::cos(x * w));
    }
    return out;
}

/// Fixed 2-D encoding of the patch grid: PE(row center) ++ PE(column center), tokens x D.
template <class T>
nc::Matrix<T> patch_position_encoding(const ModelConfig& cfg) {
    const int side = cfg.image / cfg.patch;
    const int half = cfg.embed_dim / 2;
    nc::Matrix<T> pe(cfg.tokens(), cfg.embed_dim);
    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
            const auto py = sinusoidal_pe<T>((r + 0.5) / side, cfg.embed_dim);
            const auto px = sinusoidal_pe<T>((c + 0.5) / side, cfg.embed_dim);
            for (int i = 0; i < half; ++i) {
                pe(r * side + c, i) = py[i];
                pe(r * side + c, half + i) = px[i];
            }
        }
    }
    return pe;
}

/// Differentiable PE of every entry of an M x 6 parameter matrix, concatenated per row
/// into M x (6 * D/2) = M x 3D.
template <class T>
nc::Var<T> param_position_encoding(nc::Var<T> params, int dim) {
    auto* g = params.graph;
    const int nf = dim / 4, half = dim / 2;
    const Eigen::Index rows = params.rows(), np = params.cols();
    std::vector<double> freq(nf);
    for (int i = 0; i < nf; ++i) freq[i] = 2.0 * std::numbers::pi / std::pow(kPeTemperature, 4.0 * i / dim);
    nc::Matrix<T> out(rows, np * half);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index p = 0; p < np; ++p)
            for (int i = 0; i < nf; ++i) {
                const T a = params.value()(r, p) * static_cast<T>(freq[i]);
                out(r, p * half + 2 * i) = std::sin(a);
                out(r, p * half + 2 * i + 1) = std::cos(a);
            }
    const bool rg = params.requires_grad();
    const int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, params, self, freq, nf, half] {
        const auto& go = g->grad(self);
        const auto& y = g->value(self);
        auto& gp = g->grad(params.id);
        for (Eigen::Index r = 0; r < go.rows(); ++r)
            for (Eigen::Index p = 0; p < gp.cols(); ++p) {
                T acc = 0;
                for (int i = 0; i < nf; ++i) {
                    const T w = static_cast<T>(freq[i]);
                    acc += go(r, p * half + 2 * i) * w * y(r, p * half + 2 * i + 1);
                    acc -= go(r, p * half + 2 * i + 1) * w * y(r, p * half + 2 * i);
                }
                gp(r, p) += acc;
            }
    });
}

// ---------------------------------------------------------------------------
// parameters

namespace detail {

template <class T>
nc::Matrix<T> trunc_normal(Eigen::Index r, Eigen::Index c, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    nc::Matrix<T> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        double z;
        do z = n(rng);
        while (std::abs(z) > 2.0);
        m.data()[i] = static_cast<T>(sigma * z);
    }
    return m;
}

template <class T>
void add_linear(nc::ParameterStore<T>& s, const std::string& name, int in, int out, std::mt19937_64& rng) {
    s.add(name + ".w", {in, out}, trunc_normal<T>(in, out, 0.02, rng));
    s.add(name + ".b", {out}, nc::Matrix<T>::Zero(1, out));
}

template <class T>
void add_norm(nc::ParameterStore<T>& s, const std::string& name, int dim) {
    s.add(name + ".g", {dim}, nc::Matrix<T>::Ones(1, dim));
    s.add(name + ".b", {dim}, nc::Matrix<T>::Zero(1, dim));
}

template <class T>
void add_attention(nc::ParameterStore<T>& s, const std::string& name, int dim, std::mt19937_64& rng) {
    for (const char* p : {".q", ".k", ".v", ".o"}) add_linear(s, name + p, dim, dim, rng);
}

}  // namespace detail

inline double inverse_sigmoid(double p) {
    p = std::clamp(p, 1e-5, 1.0 - 1e-5);
    return std::log(p / (1.0 - p));
}

/// Fresh parameters: truncated normal (sigma 0.02) weights, zero biases, unit norm gains,
/// matching-query anchors spread uniformly over the unit square.
template <class T>
nc::ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    nc::ParameterStore<T> s;
    const int d = cfg.embed_dim;
    detail::add_linear(s, "patch_embed", cfg.patch_dim(), d, rng);
    for (int l = 0; l < cfg.enc_layers; ++l) {
        const std::string p = "enc." + std::to_string(l);
        detail::add_norm(s, p + ".ln1", d);
        detail::add_attention(s, p + ".attn", d, rng);
        detail::add_norm(s, p + ".ln2", d);
        detail::add_linear(s, p + ".ffn1", d, cfg.ffn_dim, rng);
        detail::add_linear(s, p + ".ffn2", cfg.ffn_dim, d, rng);
    }
    detail::add_norm(s, "enc.norm", d);
    // rows 0..3: kinds, row 4: "unknown" label of the matching part
    s.add("label_embed", {kNumKinds + 1, d - 1}, detail::trunc_normal<T>(kNumKinds + 1, d - 1, 0.02, rng));
    {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        nc::Matrix<T> anchors(cfg.n_queries, kNumParams);
        for (Eigen::Index i = 0; i < anchors.size(); ++i)
            anchors.data()[i] = static_cast<T>(inverse_sigmoid(u(rng)));
        s.add("query_anchor", {cfg.n_queries, kNumParams}, std::move(anchors));
    }
    detail::add_linear(s, "pos_mlp1", 3 * d, d, rng);
    detail::add_linear(s, "pos_mlp2", d, d, rng);
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const std::string p = "dec." + std::to_string(l);
        detail::add_norm(s, p + ".ln1", d);
        detail::add_attention(s, p + ".self", d, rng);
        detail::add_norm(s, p + ".ln2", d);
        detail::add_attention(s, p + ".cross", d, rng);
        detail::add_norm(s, p + ".ln3", d);
        detail::add_linear(s, p + ".ffn1", d, cfg.ffn_dim, rng);
        detail::add_linear(s, p + ".ffn2", cfg.ffn_dim, d, rng);
    }
    detail::add_norm(s, "dec.norm", d);
    detail::add_linear(s, "type_head", d, kNumKinds, rng);
    // start every kind at probability 0.01 so the focal loss is not swamped by negatives
    s.get("type_head.b").value.setConstant(static_cast<T>(-std::log(99.0)));
    detail::add_linear(s, "param_head1", d, d, rng);
    detail::add_linear(s, "param_head2", d, d, rng);
    detail::add_linear(s, "param_head3", d, kNumParams, rng);
    return s;
}

// ---------------------------------------------------------------------------
// forward

enum class Mode { Train, Infer };

/// Denoise-part inputs of one image: noised labels/params of P groups plus the mask A.
struct DenoiseInput {
    DenoiseGroups groups;
    nc::MaskMatrix mask;
};

/// Builds the decoder inputs of image `i` of a denoise batch.
inline DenoiseInput make_denoise_input(const DenoiseBatch& batch, std::size_t i, int n_queries,
                                       bool separate_groups = true) {
    DenoiseInput in;
    in.groups = batch.images.at(i);
    in.mask = build_attention_mask(batch.groups, batch.group_size, n_queries,
                                   batch.groups > 0 ? in.groups.active : -1, separate_groups);
    return in;
}

template <class T>
struct ForwardOutput {
    nc::Var<T> logits;  // rows x 4
    nc::Var<T> params;  // rows x 6, in [0,1]
    int denoise_rows = 0;
    int n_queries = 0;
};

/// Image as ink in [0,1] (1 = stroke), split into row-major 16x16 patches, one per row.
template <class T>
nc::Matrix<T> patchify(const RasterImage& img, const ModelConfig& cfg) {
    if (img.pixels.size() != static_cast<std::size_t>(cfg.image * cfg.image))
        throw BadImageShapeError("image must be 128x128");
    const int side = cfg.image / cfg.patch;
    nc::Matrix<T> out(cfg.tokens(), cfg.patch_dim());
    for (int pr = 0; pr < side; ++pr)
        for (int pc = 0; pc < side; ++pc)
            for (int y = 0; y < cfg.patch; ++y)
                for (int x = 0; x < cfg.patch; ++x) {
                    const int r = pr * cfg.patch + y, c = pc * cfg.patch + x;
                    out(pr * side + pc, y * cfg.patch + x) =
                        static_cast<T>(1.0 - img.pixels[r * cfg.image + c] / 255.0);
                }
    return out;
}

template <class T>
class Model {
public:
    Model(ModelConfig cfg, nc::ParameterStore<T>& store) : cfg_(cfg), store_(&store) {
        cfg_.validate();
        patch_pe_ = patch_position_encoding<T>(cfg_);
    }

    const ModelConfig& config() const { return cfg_; }
    nc::ParameterStore<T>& store() { return *store_; }

    /// Tokens x D: linear patch embedding plus the fixed 2-D position encoding.
    nc::Var<T> patchify_embed(nc::Graph<T>& g, const RasterImage& img) {
        auto x = nc::linear(g.constant(patchify<T>(img, cfg_)), p(g, "patch_embed.w"), p(g, "patch_embed.b"));
        return nc::add(x, g.constant(patch_pe_));
    }

    /// V = MLP(PE(params)) for an M x 6 parameter matrix with entries in [0,1].
    nc::Var<T> positional_query(nc::Graph<T>& g, nc::Var<T> params) {
        auto pe = param_position_encoding(params, cfg_.embed_dim);
        auto h = nc::relu(nc::linear(pe, p(g, "pos_mlp1.w"), p(g, "pos_mlp1.b")));
        return nc::relu(nc::linear(h, p(g, "pos_mlp2.w"), p(g, "pos_mlp2.b")));
    }

    nc::Var<T> encode(nc::Graph<T>& g, const RasterImage& img) {
        auto x = patchify_embed(g, img);
        for (int l = 0; l < cfg_.enc_layers; ++l) {
            const std::string pre = "enc." + std::to_string(l);
            auto h = norm(g, pre + ".ln1", x);
            x = nc::add(x, attention(g, pre + ".attn", h, h, h, nullptr));
            x = nc::add(x, ffn(g, pre, norm(g, pre + ".ln2", x)));
        }
        return norm(g, "enc.norm", x);
    }

    /// Decoder over [denoise rows; matching rows]; heads applied per row.
    ForwardOutput<T> forward(nc::Graph<T>& g, const RasterImage& img, const DenoiseInput* dn, Mode mode) {
        if (mode == Mode::Train && !dn) throw ModeMismatchError("training forward needs a denoise input");
        if (mode == Mode::Infer && dn) throw ModeMismatchError("inference forward takes no denoise input");
        const int n = cfg_.n_queries;
        const int dn_rows = dn ? dn->groups.groups * dn->groups.group_size : 0;
        const int m = dn_rows + n;
        if (dn && (dn->mask.rows() != m || dn->mask.cols() != m))
            throw MaskShapeMismatchError("attention mask must be (P*G + N) square");

        auto memory = encode(g, img);
        auto memory_k = nc::add(memory, g.constant(patch_pe_));

        // content queries: label embedding with the denoise indicator in the last column
        std::vector<int> labels(m, kNumKinds);
        nc::Matrix<T> indicator = nc::Matrix<T>::Zero(m, 1);
        nc::Matrix<T> dn_params(dn_rows, kNumParams);
        for (int i = 0; i < dn_rows; ++i) {
            const auto& slot = dn->groups.slots[i];
            labels[i] = slot.padding() ? kNumKinds : slot.label;
            indicator(i, 0) = T(1);
            for (int c = 0; c < kNumParams; ++c) {
                const double v = slot.params[c];
                if (!(v >= 0.0 && v <= 1.0)) throw ParamOutOfRangeError("denoise params must lie in [0,1]");
                dn_params(i, c) = static_cast<T>(v);
            }
        }
        auto tgt = nc::concat_cols<T>({nc::gather_rows(p(g, "label_embed"), labels), g.constant(indicator)});

        auto anchor_logits = p(g, "query_anchor");
        auto anchors = nc::sigmoid(anchor_logits);
        auto query_params = dn_rows > 0 ? nc::concat_rows<T>({g.constant(dn_params), anchors}) : anchors;
        auto pos = positional_query(g, query_params);
        nc::Var<T> ref = anchor_logits;  // reference parameters in logit space
        if (cfg_.refine && dn_rows > 0) {
            nc::Matrix<T> dn_logits = dn_params.unaryExpr([](T v) { return static_cast<T>(inverse_sigmoid(v)); });
            ref = nc::concat_rows<T>({g.constant(std::move(dn_logits)), anchor_logits});
        }

        const nc::MaskMatrix* mask = dn ? &dn->mask : nullptr;
        for (int l = 0; l < cfg_.dec_layers; ++l) {
            const std::string pre = "dec." + std::to_string(l);
            auto h = norm(g, pre + ".ln1", tgt);
            auto qk = nc::add(h, pos);
            tgt = nc::add(tgt, attention(g, pre + ".self", qk, qk, h, mask));
            h = norm(g, pre + ".ln2", tgt);
            tgt = nc::add(tgt, attention(g, pre + ".cross", nc::add(h, pos), memory_k, memory, nullptr));
            tgt = nc::add(tgt, ffn(g, pre, norm(g, pre + ".ln3", tgt)));
            if (cfg_.refine && cfg_.iterative && l + 1 < cfg_.dec_layers) {
                // move each query's reference by the shared head and re-encode its position
                ref = nc::add(ref, param_delta(g, norm(g, "dec.norm", tgt)));
                pos = positional_query(g, nc::sigmoid(ref));
            }
        }
        auto out = norm(g, "dec.norm", tgt);

        ForwardOutput<T> r;
        r.logits = nc::linear(out, p(g, "type_head.w"), p(g, "type_head.b"));
        auto delta = param_delta(g, out);
        if (cfg_.refine) delta = nc::add(delta, ref);
        r.params = nc::sigmoid(delta);
        r.denoise_rows = dn_rows;
        r.n_queries = n;
        return r;
    }

private:
    nc::Var<T> p(nc::Graph<T>& g, const std::string& name) { return g.param(store_->get(name)); }

    nc::Var<T> param_delta(nc::Graph<T>& g, nc::Var<T> x) {
        auto h1 = nc::relu(nc::linear(x, p(g, "param_head1.w"), p(g, "param_head1.b")));
        auto h2 = nc::relu(nc::linear(h1, p(g, "param_head2.w"), p(g, "param_head2.b")));
        return nc::linear(h2, p(g, "param_head3.w"), p(g, "param_head3.b"));
    }

    nc::Var<T> norm(nc::Graph<T>& g, const std::string& name, nc::Var<T> x) {
        return nc::layer_norm(x, p(g, name + ".g"), p(g, name + ".b"));
    }

    nc::Var<T> attention(nc::Graph<T>& g, const std::string& name, nc::Var<T> q_in, nc::Var<T> k_in,
                         nc::Var<T> v_in, const nc::MaskMatrix* mask) {
        auto q = nc::linear(q_in, p(g, name + ".q.w"), p(g, name + ".q.b"));
        auto k = nc::linear(k_in, p(g, name + ".k.w"), p(g, name + ".k.b"));
        auto v = nc::linear(v_in, p(g, name + ".v.w"), p(g, name + ".v.b"));
        auto a = nc::multi_head_attention(q, k, v, cfg_.heads, mask);
        return nc::linear(a, p(g, name + ".o.w"), p(g, name + ".o.b"));
    }

    nc::Var<T> ffn(nc::Graph<T>& g, const std::string& pre, nc::Var<T> x) {
        auto h = nc::relu(nc::linear(x, p(g, pre + ".ffn1.w"), p(g, pre + ".ffn1.b")));
        return nc::linear(h, p(g, pre + ".ffn2.w"), p(g, pre + ".ffn2.b"));
    }

    ModelConfig cfg_;
    nc::ParameterStore<T>* store_;
    nc::Matrix<T> patch_pe_;
};

// ---------------------------------------------------------------------------
// decoded rows

/// One decoder output row in double precision.
struct DecoderRow {
    std::array<double, kNumKinds> logits{};
    std::array<double, kNumKinds> probs{};
    ParamVector params{};

    int argmax_kind() const {
        return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    }
    double confidence() const { return *std::max_element(probs.begin(), probs.end()); }
};

using DecoderOutput = std::vector<DecoderRow>;

template <class T>
DecoderOutput decode_rows(const ForwardOutput<T>& f, int first, int count) {
    DecoderOutput out;
    out.reserve(count);
    for (int r = first; r < first + count; ++r) {
        DecoderRow row;
        for (int c = 0; c < kNumKinds; ++c) {
            row.logits[c] = static_cast<double>(f.logits.value()(r, c));
            row.probs[c] = nc::stable_sigmoid(row.logits[c]);
        }
        for (int c = 0; c < kNumParams; ++c) row.params[c] = static_cast<double>(f.params.value()(r, c));
        out.push_back(row);
    }
    return out;
}

/// The N matching rows.
template <class T>
DecoderOutput matching_rows(const ForwardOutput<T>& f) {
    return decode_rows(f, f.denoise_rows, f.n_queries);
}

}  // namespace ppinet
