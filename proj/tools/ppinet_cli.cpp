// ppinet command line: data generation, rendering, training, evaluation, ablation,
// inference, export and the HTTP service.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ppinet/dataset.hpp"
#include "ppinet/export.hpp"
#include "ppinet/handdraw.hpp"
#include "ppinet/metrics.hpp"
#include "ppinet/pipeline.hpp"
#include "ppinet/png_io.hpp"
#include "ppinet/service.hpp"

namespace fs = std::filesystem;
using namespace ppinet;

namespace {

struct UsageError : Error {
    using Error::Error;
};

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        std::cout.flush();
    } else {
        write_text_file(path, text);
    }
}

std::vector<Sketch> load_sketches(const std::string& path) {
    auto res = load_corpus(path);
    if (res.skipped > 0) std::cerr << "skipped " << res.skipped << " records in " << path << "\n";
    return std::move(res.sketches);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::size_t count = 2000;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
    fs::create_directories(a.out);
    const auto sketches = generate_corpus(a.seed, a.count);
    std::vector<Sketch> parts[3];
    for (const auto& s : sketches) parts[static_cast<int>(assign_split(s.id, a.seed))].push_back(s);
    save_corpus(fs::path(a.out) / "corpus.json", sketches);
    save_corpus(fs::path(a.out) / "train.json", parts[0]);
    save_corpus(fs::path(a.out) / "val.json", parts[1]);
    save_corpus(fs::path(a.out) / "test.json", parts[2]);
    std::cout << nlohmann::json{{"count", sketches.size()},
                                {"train", parts[0].size()},
                                {"val", parts[1].size()},
                                {"test", parts[2].size()}}
                     .dump()
              << "\n";
    return 0;
}

struct RenderArgs {
    std::string corpus, out, mode = "hand";
    int samples = 5;
    std::uint64_t seed = 0;
};

int cmd_render(const RenderArgs& a) {
    const auto sketches = load_sketches(a.corpus);
    NoiseConfig noise;
    noise.samples_per_sketch = a.samples;
    const RenderMode mode = a.mode == "precise" ? RenderMode::Precise : RenderMode::Hand;
    for (const auto& s : sketches) write_render_set(a.out, s, mode, noise, a.seed);
    std::cout << nlohmann::json{{"sketches", sketches.size()}, {"mode", a.mode}}.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train / ablate

struct TrainArgs {
    std::string config, train, val, out = "model.ckpt", history, regimen;
    std::optional<long> max_steps;
    std::optional<int> epochs, batch_size, groups;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
};

TrainConfig resolve_config(const TrainArgs& a) {
    TrainConfig cfg;
    if (!a.config.empty()) cfg = train_config_from_json(nlohmann::json::parse(read_text_file(a.config)));
    if (!a.regimen.empty()) cfg.regimen = regimen_from_name(a.regimen);
    if (a.max_steps) cfg.max_steps = *a.max_steps;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.batch_size) cfg.batch_size = *a.batch_size;
    if (a.groups) cfg.denoise.groups = *a.groups;
    if (a.lr) cfg.peak_lr = *a.lr;
    if (a.seed) cfg.seed = *a.seed;
    cfg.model.validate();
    return cfg;
}

std::vector<EvalSample> eval_samples(const std::vector<Sketch>& sketches, Regimen regimen,
                                     const NoiseConfig& noise, std::uint64_t seed) {
    std::vector<EvalSample> out;
    for (const auto& s : sketches) {
        // validation looks at the first hand-drawn variant for the noisy regimens
        RasterImage img = regimen == Regimen::Precise ? render_precise(s) : render_hand_samples(s, noise, seed).front();
        out.push_back({std::move(img), s});
    }
    return out;
}

TrainResult run_training(const TrainConfig& cfg, const std::vector<Sketch>& train_set,
                         const std::vector<Sketch>& val_set) {
    const auto data = prepare_samples(train_set, cfg.regimen, cfg.noise, cfg.seed);
    const auto val = eval_samples(val_set, cfg.regimen, cfg.noise, detail::mix_seed(cfg.seed, 5));
    const long total = planned_steps(cfg, data.size());
    return train(cfg, data, val, [&](const StepStats& st, const nc::ParameterStore<float>&) {
        if (cfg.log_every > 0 && (st.step % cfg.log_every == 0 || st.step == total))
            std::cerr << "step " << st.step << "/" << total << " loss " << st.loss << " lr " << st.lr << "\n";
        return true;
    });
}

int cmd_train(const TrainArgs& a) {
    if (a.train.empty()) throw UsageError("--train is required");
    const auto cfg = resolve_config(a);
    const auto train_set = load_sketches(a.train);
    const auto val_set = a.val.empty() ? std::vector<Sketch>{} : load_sketches(a.val);
    const auto res = run_training(cfg, train_set, val_set);
    save_checkpoint(a.out, cfg.model, res.best_store);
    if (!a.history.empty()) write_text_file(a.history, history_jsonl(res.history));
    nlohmann::json summary{{"checkpoint", a.out}, {"steps", res.steps}, {"best_step", res.best_step}};
    if (std::isfinite(res.best_val_cd)) summary["best_val_cd"] = res.best_val_cd;
    std::cout << summary.dump() << "\n";
    return 0;
}

struct AblateArgs {
    TrainArgs train;
    std::string eval_corpus, out;
    std::vector<int> groups;
    bool components = false, mask = false;
};

int cmd_ablate(const AblateArgs& a) {
    if (a.train.train.empty() || a.eval_corpus.empty()) throw UsageError("--train and --eval are required");
    if (a.groups.empty() && !a.components && !a.mask) throw UsageError("choose at least one of --groups, --components, --mask");
    const auto base = resolve_config(a.train);
    const auto train_set = load_sketches(a.train.train);
    const auto val_set = a.train.val.empty() ? std::vector<Sketch>{} : load_sketches(a.train.val);
    const auto test = eval_samples(load_sketches(a.eval_corpus), base.regimen, base.noise, detail::mix_seed(base.seed, 6));

    auto run = [&](const TrainConfig& cfg) {
        auto res = run_training(cfg, train_set, val_set);
        return to_json(evaluate(make_predictor(cfg.model, res.best_store), test));
    };
    nlohmann::json out = nlohmann::json::object();
    if (!a.groups.empty()) {
        nlohmann::json sweep = nlohmann::json::object();
        for (int g : a.groups) {
            if (g < 0) throw UsageError("group counts must be non-negative");
            auto cfg = base;
            cfg.denoise.groups = g;
            sweep[std::to_string(g)] = run(cfg);
        }
        out["groups"] = sweep;
    }
    if (a.components) {
        nlohmann::json sweep = nlohmann::json::object();
        const std::pair<const char*, std::pair<bool, bool>> variants[] = {
            {"label_only", {true, false}}, {"param_only", {false, true}}, {"label+param", {true, true}}};
        for (const auto& [name, flags] : variants) {
            auto cfg = base;
            if (cfg.denoise.groups == 0) cfg.denoise.groups = 3;
            cfg.denoise.label_noise = flags.first;
            cfg.denoise.param_noise = flags.second;
            sweep[name] = run(cfg);
        }
        out["components"] = sweep;
    }
    if (a.mask) {
        nlohmann::json sweep = nlohmann::json::object();
        for (bool on : {false, true}) {
            auto cfg = base;
            if (cfg.denoise.groups == 0) cfg.denoise.groups = 3;
            cfg.denoise.attention_mask = on;
            sweep[on ? "mask" : "no_mask"] = run(cfg);
        }
        out["mask"] = sweep;
    }
    write_output(a.out, out.dump(1) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string checkpoint, corpus, predictions, images, render = "precise", out, csv;
    bool oracle = false;
    int sample = 0;
    double tau_con = 0.5, tau_cd = 0.4;
    std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
    const int sources = !a.checkpoint.empty() + !a.predictions.empty() + a.oracle;
    if (sources != 1) throw UsageError("give exactly one of --checkpoint, --predictions, --oracle");
    const auto sketches = load_sketches(a.corpus);
    const EvalThresholds t{a.tau_con, a.tau_cd};

    std::vector<ImageEval> rows;
    if (a.checkpoint.empty()) {
        std::map<std::string, DecoderOutput> given;
        if (!a.predictions.empty()) {
            const auto j = nlohmann::json::parse(read_text_file(a.predictions));
            if (!j.is_array()) throw SchemaError(-1, "predictions must be an array");
            for (const auto& rec : j) {
                DecoderOutput out;
                for (const auto& r : rec.at("rows")) out.push_back(decoder_row_from_json(r));
                given[rec.at("id").get<std::string>()] = std::move(out);
            }
        }
        for (const auto& s : sketches) {
            DecoderOutput preds;
            if (a.oracle) {
                preds = oracle_rows(s, ModelConfig::tiny().n_queries);
            } else {
                auto it = given.find(s.id);
                if (it == given.end()) throw SchemaError(-1, "no predictions for " + s.id);
                preds = it->second;
            }
            rows.push_back(evaluate_image(s.id, preds, s.primitives, t));
        }
    } else {
        auto ck = load_checkpoint(a.checkpoint);
        const auto predict = make_predictor(ck.config, ck.store);
        for (const auto& s : sketches) {
            RasterImage img;
            if (!a.images.empty()) {
                const auto dir = render_dir(a.images, s);
                img = read_png(fs::exists(dir / "precise.png") && a.render == "precise"
                                   ? dir / "precise.png"
                                   : dir / ("s" + std::to_string(a.sample) + ".png"));
            } else if (a.render == "precise") {
                img = render_precise(s);
            } else {
                const auto imgs = render_hand_samples(s, NoiseConfig{}, a.seed);
                img = imgs.at(static_cast<std::size_t>(a.sample));
            }
            rows.push_back(evaluate_image(s.id, predict(img), s.primitives, t));
        }
    }
    const auto report = aggregate(std::move(rows), t);
    write_output(a.out, to_json(report).dump(1) + "\n");
    if (!a.csv.empty()) write_text_file(a.csv, to_csv(report));
    return 0;
}

// ---------------------------------------------------------------------------
// infer / export / serve

struct InferArgs {
    std::string checkpoint, image, out;
    double threshold = 0.5;
    bool all = false;
    std::uint64_t seed = 0;
};

int cmd_infer(const InferArgs& a) {
    auto ck = load_checkpoint(a.checkpoint);
    const auto rows = infer(ck.config, ck.store, read_png(a.image));
    nlohmann::json prims = nlohmann::json::array();
    // confidences are >= 0, so -1 keeps every query
    for (const auto& d : detect(rows, a.all ? -1.0 : a.threshold)) prims.push_back(to_json(d));
    write_output(a.out, nlohmann::json{{"primitives", prims}}.dump(1) + "\n");
    return 0;
}

struct ExportArgs {
    std::string input, format = "dxf", out;
    double scale = kDefaultExportScale;
    std::uint64_t seed = 0;
};

int cmd_export(const ExportArgs& a) {
    const auto j = nlohmann::json::parse(read_text_file(a.input));
    // accepts an infer response, a bare primitive array, or a sketch record
    const nlohmann::json& arr = j.is_array() ? j : j.at("primitives");
    const auto prims = detail::primitives_from_json(arr);
    std::vector<std::string> warnings;
    std::string text;
    if (a.format == "dxf") text = to_dxf(prims, a.scale, &warnings);
    else if (a.format == "svg") text = to_svg(prims, a.scale, &warnings);
    else throw UsageError("format must be dxf or svg");
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    write_output(a.out, text);
    return 0;
}

struct ServeArgs {
    std::string checkpoint, host = "127.0.0.1", static_dir;
    int port = 8080;
    std::uint64_t seed = 0;
};

int cmd_serve(const ServeArgs& a) {
    Service service;
    httplib::Server server;
    ServeOptions opt{a.host, a.port, {}};
    if (!a.static_dir.empty()) opt.static_dir = a.static_dir;
    // load after binding so /api/health reports 503 while the weights come in
    std::thread loader;
    auto on_bound = [&](int port) {
        std::cerr << "listening on " << a.host << ":" << port << "\n";
        loader = std::thread([&] {
            server.wait_until_ready();
            try {
                service.load_file(a.checkpoint);
                std::cerr << "model loaded from " << a.checkpoint << "\n";
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                server.stop();
            }
        });
    };
    const bool ok = run_server(service, opt, server, on_bound);
    if (loader.joinable()) loader.join();
    return ok && service.ready() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ppinet: primitive inference for CAD sketches"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic sketch corpus with splits");
    gen->add_option("--count", gd.count, "number of sketches")->capture_default_str();
    gen->add_option("--seed", gd.seed, "first sketch seed, also the split seed")->capture_default_str();
    gen->add_option("--out", gd.out, "output directory")->required();

    RenderArgs rd;
    auto* ren = app.add_subcommand("render", "render a corpus to PNG images");
    ren->add_option("--corpus", rd.corpus, "corpus JSON")->required()->check(CLI::ExistingFile);
    ren->add_option("--mode", rd.mode, "precise or hand")->check(CLI::IsMember({"precise", "hand"}))->capture_default_str();
    ren->add_option("--samples", rd.samples, "hand-drawn samples per sketch")->check(CLI::PositiveNumber)->capture_default_str();
    ren->add_option("--seed", rd.seed)->capture_default_str();
    ren->add_option("--out", rd.out, "output directory")->required();

    auto add_train_opts = [](CLI::App* c, TrainArgs& t) {
        c->add_option("--config", t.config, "training config JSON")->check(CLI::ExistingFile);
        c->add_option("--train", t.train, "training corpus JSON")->check(CLI::ExistingFile);
        c->add_option("--val", t.val, "validation corpus JSON")->check(CLI::ExistingFile);
        c->add_option("--regimen", t.regimen)->check(CLI::IsMember({"precise", "handdrawn", "handdrawn+affine"}));
        c->add_option("--max-steps", t.max_steps)->check(CLI::NonNegativeNumber);
        c->add_option("--epochs", t.epochs)->check(CLI::PositiveNumber);
        c->add_option("--batch-size", t.batch_size)->check(CLI::PositiveNumber);
        c->add_option("--lr", t.lr, "peak learning rate")->check(CLI::PositiveNumber);
        c->add_option("--seed", t.seed);
    };

    TrainArgs tr;
    auto* trn = app.add_subcommand("train", "train a model and save the best checkpoint");
    add_train_opts(trn, tr);
    trn->add_option("--groups", tr.groups, "denoise groups")->check(CLI::NonNegativeNumber);
    trn->add_option("--out", tr.out, "checkpoint path")->capture_default_str();
    trn->add_option("--history", tr.history, "metric history (JSON lines)");

    EvalArgs ev;
    auto* evl = app.add_subcommand("eval", "evaluate a checkpoint or prediction file on a corpus");
    evl->add_option("--corpus", ev.corpus, "corpus JSON")->required()->check(CLI::ExistingFile);
    evl->add_option("--checkpoint", ev.checkpoint)->check(CLI::ExistingFile);
    evl->add_option("--predictions", ev.predictions, "per-image decoder rows")->check(CLI::ExistingFile);
    evl->add_flag("--oracle", ev.oracle, "score the ground truth against itself");
    evl->add_option("--images", ev.images, "rendered image directory (default: render on the fly)");
    evl->add_option("--render", ev.render)->check(CLI::IsMember({"precise", "hand"}))->capture_default_str();
    evl->add_option("--sample", ev.sample, "hand-drawn sample index")->check(CLI::Range(0, 4))->capture_default_str();
    evl->add_option("--tau-con", ev.tau_con)->capture_default_str();
    evl->add_option("--tau-cd", ev.tau_cd)->capture_default_str();
    evl->add_option("--seed", ev.seed)->capture_default_str();
    evl->add_option("--out", ev.out, "report path (default stdout)");
    evl->add_option("--csv", ev.csv, "per-image CSV path");

    AblateArgs ab;
    auto* abl = app.add_subcommand("ablate", "train and evaluate denoising variants");
    add_train_opts(abl, ab.train);
    abl->add_option("--eval", ab.eval_corpus, "evaluation corpus JSON")->check(CLI::ExistingFile);
    abl->add_option("--groups", ab.groups, "denoise group counts, e.g. 0,1,3")->delimiter(',');
    abl->add_flag("--components", ab.components, "label-only / param-only / both");
    abl->add_flag("--mask", ab.mask, "with and without the attention mask");
    abl->add_option("--out", ab.out, "report path (default stdout)");

    InferArgs in;
    auto* inf = app.add_subcommand("infer", "detect primitives in one image");
    inf->add_option("--checkpoint", in.checkpoint)->required()->check(CLI::ExistingFile);
    inf->add_option("--image", in.image, "128x128 grayscale PNG")->required()->check(CLI::ExistingFile);
    inf->add_option("--threshold", in.threshold)->capture_default_str();
    inf->add_flag("--all", in.all, "keep every query");
    inf->add_option("--seed", in.seed);
    inf->add_option("--out", in.out);

    ExportArgs ex;
    auto* exp = app.add_subcommand("export", "convert primitives JSON to DXF or SVG");
    exp->add_option("--input", ex.input, "primitives JSON")->required()->check(CLI::ExistingFile);
    exp->add_option("--format", ex.format)->check(CLI::IsMember({"dxf", "svg"}))->capture_default_str();
    exp->add_option("--scale", ex.scale, "output units per normalized unit")->check(CLI::PositiveNumber)->capture_default_str();
    exp->add_option("--seed", ex.seed);
    exp->add_option("--out", ex.out);

    ServeArgs sv;
    auto* srv = app.add_subcommand("serve", "run the HTTP inference service");
    srv->add_option("--checkpoint", sv.checkpoint)->required()->check(CLI::ExistingFile);
    srv->add_option("--host", sv.host)->capture_default_str();
    srv->add_option("--port", sv.port)->check(CLI::Range(0, 65535))->capture_default_str();
    srv->add_option("--static", sv.static_dir, "directory served under /")->check(CLI::ExistingDirectory);
    srv->add_option("--seed", sv.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) return cmd_gen_data(gd);
        if (*ren) return cmd_render(rd);
        if (*trn) return cmd_train(tr);
        if (*evl) return cmd_eval(ev);
        if (*abl) return cmd_ablate(ab);
        if (*inf) return cmd_infer(in);
        if (*exp) return cmd_export(ex);
        if (*srv) return cmd_serve(sv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
