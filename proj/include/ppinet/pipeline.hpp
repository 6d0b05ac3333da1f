#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppinet/assignment.hpp"
#include "ppinet/dataset.hpp"
#include "ppinet/denoise.hpp"
#include "ppinet/handdraw.hpp"
#include "ppinet/metrics.hpp"
#include "ppinet/model.hpp"
#include "ppinet/numcore/optim.hpp"

namespace ppinet {

enum class Regimen { Precise, Handdrawn, HanddrawnAffine };

inline std::string regimen_name(Regimen r) {
    switch (r) {
        case Regimen::Precise: return "precise";
        case Regimen::Handdrawn: return "handdrawn";
        case Regimen::HanddrawnAffine: return "handdrawn+affine";
    }
    return "";
}

inline Regimen regimen_from_name(const std::string& s) {
    if (s == "precise") return Regimen::Precise;
    if (s == "handdrawn") return Regimen::Handdrawn;
    if (s == "handdrawn+affine") return Regimen::HanddrawnAffine;
    throw Error("unknown regimen '" + s + "'");
}

struct TrainConfig {
    Regimen regimen = Regimen::Precise;
    int epochs = 10;
    long max_steps = 0;  // overrides epochs when > 0
    int batch_size = 32;
    ModelConfig model = ModelConfig::tiny();
    DenoiseConfig denoise;
    CostWeights weights;
    double peak_lr = 3e-5;
    double warmup_fraction = 0.3;
    double div_factor = 25.0;
    double final_div = 1e4;
    double weight_decay = 1e-4;
    double grad_clip = 0.1;  // global norm, 0 disables
    int validate_every = 200;
    int log_every = 10;
    NoiseConfig noise;
    AffineConfig affine;
    std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"regimen", regimen_name(c.regimen)},
            {"epochs", c.epochs},
            {"max_steps", c.max_steps},
            {"batch_size", c.batch_size},
            {"model", to_json(c.model)},
            {"denoise",
             {{"gamma", c.denoise.gamma},
              {"lambda", c.denoise.lambda},
              {"groups", c.denoise.groups},
              {"label_noise", c.denoise.label_noise},
              {"param_noise", c.denoise.param_noise},
              {"attention_mask", c.denoise.attention_mask}}},
            {"weights", {{"cls", c.weights.cls}, {"param", c.weights.param}, {"cd", c.weights.cd}}},
            {"peak_lr", c.peak_lr},
            {"warmup_fraction", c.warmup_fraction},
            {"div_factor", c.div_factor},
            {"final_div", c.final_div},
            {"weight_decay", c.weight_decay},
            {"grad_clip", c.grad_clip},
            {"validate_every", c.validate_every},
            {"log_every", c.log_every},
            {"seed", c.seed}};
}

/// Missing keys keep their defaults. "model" is "tiny", "full" or an object.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("regimen")) c.regimen = regimen_from_name(j["regimen"].get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("model")) {
        const auto& m = j["model"];
        if (m.is_string()) {
            const auto name = m.get<std::string>();
            if (name == "tiny") c.model = ModelConfig::tiny();
            else if (name == "full") c.model = ModelConfig::full();
            else throw Error("unknown model config '" + name + "'");
        } else {
            c.model = model_config_from_json(m);
        }
    }
    if (j.contains("denoise")) {
        const auto& d = j["denoise"];
        c.denoise.gamma = d.value("gamma", c.denoise.gamma);
        c.denoise.lambda = d.value("lambda", c.denoise.lambda);
        c.denoise.groups = d.value("groups", c.denoise.groups);
        c.denoise.label_noise = d.value("label_noise", c.denoise.label_noise);
        c.denoise.param_noise = d.value("param_noise", c.denoise.param_noise);
        c.denoise.attention_mask = d.value("attention_mask", c.denoise.attention_mask);
    }
    if (j.contains("weights")) {
        const auto& w = j["weights"];
        c.weights.cls = w.value("cls", c.weights.cls);
        c.weights.param = w.value("param", c.weights.param);
        c.weights.cd = w.value("cd", c.weights.cd);
    }
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.div_factor = j.value("div_factor", c.div_factor);
    c.final_div = j.value("final_div", c.final_div);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.validate_every = j.value("validate_every", c.validate_every);
    c.log_every = j.value("log_every", c.log_every);
    c.seed = j.value("seed", c.seed);
    if (c.batch_size < 1) throw Error("batch_size must be >= 1");
    if (c.denoise.groups < 0) throw Error("denoise groups must be >= 0");
    c.model.validate();
    return c;
}

// ---------------------------------------------------------------------------
// checkpoints: "PPIN", u32 version, u32 length + model config JSON, u32 count, then per
// array: u32 name length, name, u32 rank, u32 extents, little-endian float32 values

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& s, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(s, v);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw CheckpointFormatError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::string encode_checkpoint(const ModelConfig& cfg, const nc::ParameterStore<float>& store) {
    std::string s = "PPIN";
    detail::put_u32(s, kCheckpointVersion);
    const std::string cj = to_json(cfg).dump();
    detail::put_u32(s, static_cast<std::uint32_t>(cj.size()));
    s += cj;
    detail::put_u32(s, static_cast<std::uint32_t>(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& p = store[i];
        detail::put_u32(s, static_cast<std::uint32_t>(p.name.size()));
        s += p.name;
        detail::put_u32(s, static_cast<std::uint32_t>(p.extents.size()));
        for (int e : p.extents) detail::put_u32(s, static_cast<std::uint32_t>(e));
        for (Eigen::Index k = 0; k < p.value.size(); ++k) detail::put_f32(s, p.value.data()[k]);
    }
    return s;
}

struct Checkpoint {
    ModelConfig config;
    nc::ParameterStore<float> store;
};

/// Parses a checkpoint. When `expected` is given, a different stored config is rejected.
inline Checkpoint decode_checkpoint(const std::string& bytes, const std::optional<ModelConfig>& expected = {}) {
    detail::Reader r{bytes};
    if (r.bytes(4) != "PPIN") throw CheckpointFormatError("not a checkpoint (bad magic)");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw VersionMismatchError("checkpoint version " + std::to_string(version) + " is not supported");
    Checkpoint ck;
    const auto clen = r.u32();
    try {
        ck.config = model_config_from_json(nlohmann::json::parse(r.bytes(clen)));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointFormatError(std::string("bad config block: ") + e.what());
    }
    if (expected && !(*expected == ck.config)) throw ConfigMismatchError("checkpoint was written for a different model config");
    auto reference = init_parameters<float>(ck.config, 0);
    const auto count = r.u32();
    if (count != reference.size()) throw ConfigMismatchError("checkpoint parameter count does not match its config");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u32());
        const auto rank = r.u32();
        if (rank > 4) throw CheckpointFormatError("bad rank");
        std::vector<int> extents;
        for (std::uint32_t k = 0; k < rank; ++k) extents.push_back(static_cast<int>(r.u32()));
        if (!reference.contains(name)) throw ConfigMismatchError("unexpected parameter '" + name + "'");
        const auto& ref = reference.get(name);
        if (ref.extents != extents) throw ConfigMismatchError("shape mismatch for '" + name + "'");
        nc::Matrix<float> value(ref.value.rows(), ref.value.cols());
        for (Eigen::Index k = 0; k < value.size(); ++k) value.data()[k] = r.f32();
        ck.store.add(name, extents, std::move(value));
    }
    if (r.pos != bytes.size()) throw CheckpointFormatError("trailing bytes after checkpoint");
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                            const nc::ParameterStore<float>& store) {
    write_text_file(path, encode_checkpoint(cfg, store));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = {}) {
    return decode_checkpoint(read_text_file(path), expected);
}

// ---------------------------------------------------------------------------
// inference

/// Runs the matching part only; N rows per image.
inline DecoderOutput infer(const ModelConfig& cfg, nc::ParameterStore<float>& store, const RasterImage& img) {
    Model<float> m(cfg, store);
    nc::Graph<float> g(false);
    return matching_rows(m.forward(g, img, nullptr, Mode::Infer));
}

inline Predictor make_predictor(const ModelConfig& cfg, nc::ParameterStore<float>& store) {
    return [&cfg, &store](const RasterImage& img) { return infer(cfg, store, img); };
}

/// A kept query: its argmax-kind primitive (params masked to the kind) and confidence.
struct Detection {
    Primitive primitive;
    double confidence = 0.0;
};

/// Queries with confidence strictly above `threshold`, in query order.
inline std::vector<Detection> detect(const DecoderOutput& rows, double threshold = EvalThresholds{}.tau_con) {
    std::vector<Detection> out;
    for (const auto& r : rows)
        if (r.confidence() > threshold) out.push_back({predicted_primitive(r), r.confidence()});
    return out;
}

inline nlohmann::json to_json(const Detection& d) {
    return {{"kind", std::string(kind_name(d.primitive.kind))}, {"params", d.primitive.params}, {"confidence", d.confidence}};
}

// ---------------------------------------------------------------------------
// training

/// One training image source per sketch: a precise render or its pre-rendered variants.
struct TrainSample {
    Sketch sketch;
    std::vector<RasterImage> renders;
};

inline std::vector<TrainSample> prepare_samples(const std::vector<Sketch>& sketches, Regimen regimen,
                                                const NoiseConfig& noise, std::uint64_t seed) {
    std::vector<TrainSample> out;
    out.reserve(sketches.size());
    for (const auto& s : sketches) {
        TrainSample t{s, {}};
        if (regimen == Regimen::Precise) t.renders.push_back(render_precise(s));
        else t.renders = render_hand_samples(s, noise, seed);
        out.push_back(std::move(t));
    }
    return out;
}

struct StepStats {
    long step = 0;  // 1-based count of completed steps
    double lr = 0.0;
    double loss = 0.0;
    double match_cls = 0.0, match_param = 0.0, match_cd = 0.0;
    double dn_cls = 0.0, dn_param = 0.0, dn_cd = 0.0;
    double grad_norm = 0.0;
};

inline nlohmann::json to_json(const StepStats& s) {
    return {{"step", s.step},           {"lr", s.lr},           {"loss", s.loss},
            {"match_cls", s.match_cls}, {"match_param", s.match_param}, {"match_cd", s.match_cd},
            {"dn_cls", s.dn_cls},       {"dn_param", s.dn_param},   {"dn_cd", s.dn_cd},
            {"grad_norm", s.grad_norm}};
}

struct TrainResult {
    nc::ParameterStore<float> store;       // final weights
    nc::ParameterStore<float> best_store;  // best validation mean CD (final when no validation)
    long steps = 0;
    long best_step = 0;
    double best_val_cd = std::numeric_limits<double>::infinity();
    std::vector<nlohmann::json> history;  // JSON lines: step records and validation records
};

/// Called after each step; return false to stop early.
using StepCallback = std::function<bool(const StepStats&, nc::ParameterStore<float>&)>;

inline long planned_steps(const TrainConfig& cfg, std::size_t n_samples) {
    if (cfg.max_steps > 0) return cfg.max_steps;
    const long per_epoch = static_cast<long>((n_samples + cfg.batch_size - 1) / cfg.batch_size);
    return std::max<long>(1, per_epoch * cfg.epochs);
}

/// One optimizer step over `batch`; gradients accumulate in `store`.
inline StepStats train_step(const TrainConfig& cfg, nc::ParameterStore<float>& store,
                            const std::vector<const Sketch*>& sketches, const std::vector<const RasterImage*>& images,
                            std::uint64_t step_seed, double lr) {
    Model<float> model(cfg.model, store);
    std::vector<Sketch> batch;
    for (const auto* s : sketches) batch.push_back(*s);
    const auto dn = build_groups(batch, cfg.denoise, step_seed);
    double k_total = 0.0;
    for (const auto& s : batch) k_total += static_cast<double>(s.primitives.size());

    StepStats st;
    store.zero_grad();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        nc::Graph<float> g;
        auto in = make_denoise_input(dn, i, cfg.model.n_queries, cfg.denoise.attention_mask);
        auto f = model.forward(g, *images[i], &in, Mode::Train);
        const auto a = match_predictions(f, batch[i].primitives, cfg.weights);
        auto loss = set_loss(f, batch[i].primitives, a, &in.groups, cfg.weights, k_total);
        const double v = static_cast<double>(loss.total.scalar());
        if (!std::isfinite(v)) throw NonFiniteLossError("training loss became non-finite");
        st.loss += v;
        st.match_cls += loss.match.cls.scalar();
        st.match_param += loss.match.param.scalar();
        st.match_cd += loss.match.cd.scalar();
        if (loss.denoise) {
            st.dn_cls += loss.denoise->cls.scalar();
            st.dn_param += loss.denoise->param.scalar();
            st.dn_cd += loss.denoise->cd.scalar();
        }
        g.backward(loss.total);
    }
    st.grad_norm = cfg.grad_clip > 0.0 ? nc::clip_grad_norm(store, cfg.grad_clip) : nc::grad_norm(store);
    if (!std::isfinite(st.grad_norm)) throw NonFiniteLossError("gradient became non-finite");
    nc::adamw_step(store, lr, nc::AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    st.lr = lr;
    return st;
}

/// Full training run. Deterministic for a fixed config, data and seed.
inline TrainResult train(const TrainConfig& cfg, const std::vector<TrainSample>& data,
                         const std::vector<EvalSample>& validation = {}, const StepCallback& on_step = {}) {
    if (data.empty()) throw Error("train: empty training set");
    TrainResult res;
    res.store = init_parameters<float>(cfg.model, detail::mix_seed(cfg.seed, 1));
    const long total = planned_steps(cfg, data.size());
    nc::OneCycleConfig oc{cfg.peak_lr, total, cfg.warmup_fraction, cfg.div_factor, cfg.final_div};

    std::mt19937_64 order_rng(detail::mix_seed(cfg.seed, 2));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> pick(data.size(), 0);  // this epoch's render per sample
    std::size_t cursor = data.size();
    long epoch = -1;

    auto validate = [&](long step) {
        if (validation.empty()) return;
        const auto report = evaluate(make_predictor(cfg.model, res.store), validation);
        res.history.push_back({{"step", step},
                               {"val_type_acc", report.type_acc},
                               {"val_mean_cd", report.mean_cd},
                               {"val_precision", report.precision},
                               {"val_recall", report.recall}});
        if (report.mean_cd < res.best_val_cd) {
            res.best_val_cd = report.mean_cd;
            res.best_step = step;
            res.best_store = res.store.cast<float>();
        }
    };

    for (long step = 0; step < total; ++step) {
        std::vector<const Sketch*> sketches;
        std::vector<RasterImage> images;
        for (int b = 0; b < cfg.batch_size && b < static_cast<int>(data.size()); ++b) {
            if (cursor >= data.size()) {
                ++epoch;
                std::shuffle(order.begin(), order.end(), order_rng);
                for (std::size_t i = 0; i < data.size(); ++i)
                    pick[i] = std::uniform_int_distribution<std::size_t>(0, data[i].renders.size() - 1)(order_rng);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            sketches.push_back(&data[idx].sketch);
            const auto& img = data[idx].renders[pick[idx]];
            if (cfg.regimen == Regimen::HanddrawnAffine)
                images.push_back(affine_augment(img, cfg.affine, detail::mix_seed(detail::mix_seed(cfg.seed, 3), step * 1000 + b)));
            else
                images.push_back(img);
        }
        std::vector<const RasterImage*> ptrs;
        for (const auto& im : images) ptrs.push_back(&im);
        auto st = train_step(cfg, res.store, sketches, ptrs, detail::mix_seed(detail::mix_seed(cfg.seed, 4), step),
                             nc::onecycle_lr(step, oc));
        st.step = step + 1;
        res.steps = st.step;
        if (cfg.log_every > 0 && (st.step % cfg.log_every == 0 || st.step == total)) {
            auto j = to_json(st);
            j["epoch"] = epoch;
            res.history.push_back(j);
        }
        if (cfg.validate_every > 0 && st.step % cfg.validate_every == 0) validate(st.step);
        if (on_step && !on_step(st, res.store)) break;
    }
    if (!validation.empty() && (cfg.validate_every <= 0 || res.steps % cfg.validate_every != 0)) validate(res.steps);
    if (res.best_store.size() == 0) {
        res.best_store = res.store.cast<float>();
        res.best_step = res.steps;
    }
    return res;
}

/// Writes history records as JSON lines.
inline std::string history_jsonl(const std::vector<nlohmann::json>& history) {
    std::string s;
    for (const auto& h : history) s += h.dump() + "\n";
    return s;
}

}  // namespace ppinet
