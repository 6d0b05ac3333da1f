#include <gtest/gtest.h>

#include <filesystem>

#include "ppinet/pipeline.hpp"

using namespace ppinet;

namespace {

TrainConfig small_config(int groups = 3) {
    TrainConfig c;
    c.batch_size = 2;
    c.max_steps = 3;
    c.peak_lr = 1e-3;
    c.denoise.groups = groups;
    c.log_every = 1;
    c.validate_every = 0;
    c.seed = 5;
    return c;
}

std::vector<TrainSample> small_data() {
    return prepare_samples(generate_corpus(40, 4), Regimen::Precise, NoiseConfig{}, 1);
}

std::vector<double> losses(const TrainResult& r) {
    std::vector<double> out;
    for (const auto& h : r.history)
        if (h.contains("loss")) out.push_back(h["loss"].get<double>());
    return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto cfg = ModelConfig::tiny();
    const auto store = init_parameters<float>(cfg, 3);
    const auto bytes = encode_checkpoint(cfg, store);
    const auto ck = decode_checkpoint(bytes);
    EXPECT_EQ(ck.config, cfg);
    EXPECT_EQ(encode_checkpoint(ck.config, ck.store), bytes);
    for (std::size_t i = 0; i < store.size(); ++i) EXPECT_EQ(ck.store[i].value, store[i].value);

    const auto path = std::filesystem::temp_directory_path() / "ppinet_ck_test.ckpt";
    save_checkpoint(path, cfg, store);
    EXPECT_EQ(encode_checkpoint(cfg, load_checkpoint(path, cfg).store), bytes);
    std::filesystem::remove(path);
    EXPECT_THROW(load_checkpoint(path), IoError);
}

TEST(Checkpoint, CorruptInputsAreRejected) {
    const auto cfg = ModelConfig::tiny();
    const auto bytes = encode_checkpoint(cfg, init_parameters<float>(cfg, 1));
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointFormatError);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, 10)), CheckpointFormatError);
    EXPECT_THROW(decode_checkpoint(bytes + "x"), CheckpointFormatError);
    EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), CheckpointFormatError);
    auto bumped = bytes;
    bumped[4] = 9;
    EXPECT_THROW(decode_checkpoint(bumped), VersionMismatchError);
}

TEST(Checkpoint, ConfigMismatch) {
    const auto tiny = ModelConfig::tiny();
    const auto bytes = encode_checkpoint(tiny, init_parameters<float>(tiny, 1));
    EXPECT_THROW(decode_checkpoint(bytes, ModelConfig::full()), ConfigMismatchError);
    auto other = tiny;
    other.refine = true;
    EXPECT_THROW(decode_checkpoint(bytes, other), ConfigMismatchError);
    EXPECT_NO_THROW(decode_checkpoint(bytes, tiny));
}

TEST(TrainConfig, JsonRoundTripAndRegimenNames) {
    auto c = small_config();
    c.regimen = Regimen::HanddrawnAffine;
    c.model.refine = true;
    const auto back = train_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
    for (auto r : {Regimen::Precise, Regimen::Handdrawn, Regimen::HanddrawnAffine})
        EXPECT_EQ(regimen_from_name(regimen_name(r)), r);
    EXPECT_THROW(regimen_from_name("sketchy"), Error);
}

TEST(Train, PlannedSteps) {
    TrainConfig c;
    c.batch_size = 32;
    c.epochs = 3;
    EXPECT_EQ(planned_steps(c, 100), 12);
    c.max_steps = 7;
    EXPECT_EQ(planned_steps(c, 100), 7);
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
    const auto data = small_data();
    const auto cfg = small_config();
    const auto a = train(cfg, data), b = train(cfg, data);
    EXPECT_EQ(a.steps, 3);
    EXPECT_EQ(encode_checkpoint(cfg.model, a.best_store), encode_checkpoint(cfg.model, b.best_store));
    EXPECT_EQ(history_jsonl(a.history), history_jsonl(b.history));
    auto other = cfg;
    other.seed = 6;
    EXPECT_NE(encode_checkpoint(cfg.model, train(other, data).store), encode_checkpoint(cfg.model, a.store));
}

TEST(Train, DenoiseGroupsChangeTheLossCurve) {
    const auto data = small_data();
    const auto with = train(small_config(3), data), without = train(small_config(0), data);
    const auto lw = losses(with), lo = losses(without);
    ASSERT_EQ(lw.size(), 3u);
    ASSERT_EQ(lo.size(), 3u);
    EXPECT_NE(lw, lo);
    for (const auto& h : without.history)
        if (h.contains("dn_cls")) EXPECT_EQ(h["dn_cls"].get<double>(), 0.0);
    bool dn_seen = false;
    for (const auto& h : with.history)
        if (h.contains("dn_cls")) dn_seen |= h["dn_cls"].get<double>() > 0.0;
    EXPECT_TRUE(dn_seen);
}

TEST(Train, ValidationKeepsBestStoreAndCallbackStops) {
    const auto data = small_data();
    auto cfg = small_config();
    cfg.max_steps = 4;
    cfg.validate_every = 2;
    std::vector<EvalSample> val;
    for (const auto& d : data) val.push_back({d.renders[0], d.sketch});
    const auto r = train(cfg, data, val);
    EXPECT_TRUE(r.best_step == 2 || r.best_step == 4);
    EXPECT_TRUE(std::isfinite(r.best_val_cd));
    int calls = 0;
    const auto stopped = train(cfg, data, {}, [&](const StepStats&, nc::ParameterStore<float>&) { return ++calls < 2; });
    EXPECT_EQ(stopped.steps, 2);
}

TEST(Infer, ReturnsMatchingQueriesOnly) {
    const auto cfg = ModelConfig::tiny();
    auto store = init_parameters<float>(cfg, 4);
    const auto rows = infer(cfg, store, render_precise(generate_sketch(2)));
    ASSERT_EQ(rows.size(), 20u);
    for (const auto& r : rows)
        for (double v : r.params) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    EXPECT_EQ(rows.size(), infer(cfg, store, RasterImage{}).size());
}

TEST(Detect, ThresholdAndMasking) {
    DecoderOutput rows(3);
    rows[0].probs = {0.2, 0.9, 0.1, 0.1};
    rows[0].params = {0.5, 0.5, 0.2, 0.7, 0.7, 0.7};
    rows[1].probs = {0.5, 0.1, 0.1, 0.1};
    rows[2].probs = {0.1, 0.1, 0.1, 0.51};
    rows[2].params = {0.3, 0.4, 0.9, 0.9, 0.9, 0.9};
    const auto d = detect(rows);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d[0].primitive, Primitive(PrimitiveKind::Circle, {0.5, 0.5, 0.2, 0, 0, 0}));
    EXPECT_DOUBLE_EQ(d[0].confidence, 0.9);
    EXPECT_EQ(d[1].primitive.params, (ParamVector{0.3, 0.4, 0, 0, 0, 0}));
    for (const auto& x : detect(rows, 0.2)) EXPECT_GT(x.confidence, 0.2);
    EXPECT_EQ(detect(rows, -1.0).size(), 3u);
    EXPECT_EQ(to_json(d[0])["kind"], "circle");
}
