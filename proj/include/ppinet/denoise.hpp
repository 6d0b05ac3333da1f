#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "ppinet/dataset.hpp"
#include "ppinet/geometry.hpp"
#include "ppinet/numcore/tensor.hpp"

namespace ppinet {

struct DenoiseConfig {
    double gamma = 0.4;   // label flip ratio
    double lambda = 0.3;  // parameter noise ratio
    int groups = 3;       // 0 disables denoising
    // ablation switches
    bool label_noise = true;
    bool param_noise = true;
    bool attention_mask = true;
};

/// Each label is flipped with probability gamma to one of the other three kinds.
inline std::vector<PrimitiveKind> flip_labels(const std::vector<PrimitiveKind>& kinds, double gamma,
                                              std::mt19937_64& rng) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("flip_labels: gamma must be in [0,1]");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> other(1, kNumKinds - 1);
    std::vector<PrimitiveKind> out;
    out.reserve(kinds.size());
    for (auto k : kinds) {
        const bool flip = u(rng) < gamma;
        const int shift = other(rng);
        out.push_back(flip ? kind_from_index((kind_index(k) + shift) % kNumKinds) : k);
    }
    return out;
}

inline std::vector<PrimitiveKind> flip_labels(const std::vector<PrimitiveKind>& kinds, double gamma,
                                              std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return flip_labels(kinds, gamma, rng);
}

/// (params + lambda * noise) masked by the kind, then clamped to [0,1].
inline ParamVector noise_params_with(const ParamVector& params, PrimitiveKind kind, double lambda,
                                     const ParamVector& noise) {
    const auto m = param_mask(kind);
    ParamVector out{};
    for (int i = 0; i < kNumParams; ++i)
        out[i] = m[i] ? std::clamp(params[i] + lambda * noise[i], 0.0, 1.0) : 0.0;
    return out;
}

inline ParamVector noise_params(const ParamVector& params, PrimitiveKind kind, double lambda,
                                std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    ParamVector noise{};
    for (auto& n : noise) n = normal(rng);
    return noise_params_with(params, kind, lambda, noise);
}

inline ParamVector noise_params(const ParamVector& params, PrimitiveKind kind, double lambda,
                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return noise_params(params, kind, lambda, rng);
}

/// One denoise query; gt_index < 0 marks padding.
struct DenoiseSlot {
    int label = -1;  // noised kind index, -1 for padding
    ParamVector params{};
    int gt_index = -1;

    bool padding() const { return gt_index < 0; }
};

/// The P groups of one image, each padded to the batch group size G.
struct DenoiseGroups {
    int groups = 0;
    int group_size = 0;
    int active = 0;                  // GT objects of this image
    std::vector<DenoiseSlot> slots;  // groups * group_size, group-major

    const DenoiseSlot& slot(int group, int s) const { return slots[group * group_size + s]; }
};

struct DenoiseBatch {
    int groups = 0;
    int group_size = 0;
    std::vector<DenoiseGroups> images;
};

inline DenoiseGroups build_image_groups(const Sketch& sketch, int groups, int group_size,
                                        const DenoiseConfig& cfg, std::mt19937_64& rng) {
    const int k = static_cast<int>(sketch.primitives.size());
    if (k > group_size) throw SizeError("denoise group smaller than ground-truth count");
    DenoiseGroups out{groups, group_size, k, {}};
    out.slots.resize(static_cast<std::size_t>(groups) * group_size);
    std::vector<PrimitiveKind> kinds;
    for (const auto& p : sketch.primitives) kinds.push_back(p.kind);
    for (int g = 0; g < groups; ++g) {
        const auto labels = cfg.label_noise ? flip_labels(kinds, cfg.gamma, rng) : kinds;
        for (int s = 0; s < k; ++s) {
            const auto& gt = sketch.primitives[s];
            auto& slot = out.slots[g * group_size + s];
            slot.label = kind_index(labels[s]);
            slot.params = cfg.param_noise ? noise_params(gt.params, gt.kind, cfg.lambda, rng) : gt.params;
            slot.gt_index = s;
        }
    }
    return out;
}

/// Independently noised copies of every GT object, P groups per image, padded to the
/// largest GT count of the batch.
inline DenoiseBatch build_groups(const std::vector<Sketch>& batch, const DenoiseConfig& cfg,
                                 std::uint64_t seed) {
    DenoiseBatch out;
    if (cfg.groups <= 0) {
        out.images.resize(batch.size());
        return out;
    }
    int g = 0;
    for (const auto& s : batch) g = std::max(g, static_cast<int>(s.primitives.size()));
    out.groups = cfg.groups;
    out.group_size = g;
    std::mt19937_64 rng(seed);
    for (const auto& s : batch) out.images.push_back(build_image_groups(s, cfg.groups, g, cfg, rng));
    return out;
}

/// Attention mask of side P*G + N; denoise rows/cols first, matching last.
/// Entry 1 means the row query cannot see the column query. Slots at index >= active
/// within a group are padding and are blocked in both directions. With
/// `separate_groups` false only padding is blocked (the no-mask ablation).
inline nc::MaskMatrix build_attention_mask(int groups, int group_size, int n_queries, int active = -1,
                                           bool separate_groups = true) {
    if (groups < 0 || n_queries < 1 || (groups > 0 && group_size < 1))
        throw Error("build_attention_mask: invalid sizes");
    if (active < 0) active = group_size;
    const int dn = groups * group_size;
    const int w = dn + n_queries;
    nc::MaskMatrix a = nc::MaskMatrix::Zero(w, w);
    auto group_of = [&](int i) { return i < dn ? i / group_size : -1; };
    auto is_pad = [&](int i) { return i < dn && (i % group_size) >= active; };
    for (int i = 0; i < w; ++i) {
        for (int j = 0; j < w; ++j) {
            bool blocked = false;
            if (is_pad(i) || is_pad(j)) {
                blocked = true;
            } else if (separate_groups) {
                const int gi = group_of(i), gj = group_of(j);
                if (gi < 0 && gj >= 0) blocked = true;               // matching cannot see denoise
                if (gi >= 0 && gj >= 0 && gi != gj) blocked = true;  // groups cannot see each other
            }
            a(i, j) = blocked ? 1 : 0;
        }
    }
    return a;
}

}  // namespace ppinet
