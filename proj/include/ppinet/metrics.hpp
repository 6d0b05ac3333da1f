#pragma once

#include <array>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppinet/assignment.hpp"
#include "ppinet/dataset.hpp"
#include "ppinet/geometry.hpp"
#include "ppinet/handdraw.hpp"
#include "ppinet/model.hpp"

namespace ppinet {

struct EvalThresholds {
    double tau_con = 0.50;
    double tau_cd = 0.40;
};

struct MatchedPair {
    int gt = -1;
    int query = -1;
    PrimitiveKind gt_kind = PrimitiveKind::Line;
    PrimitiveKind pred_kind = PrimitiveKind::Line;
    double confidence = 0.0;
    double cd = 0.0;
};

struct EvalMatch {
    Assignment assignment;
    std::vector<MatchedPair> pairs;  // one per GT, in GT order
    std::vector<int> unmatched_queries;
};

/// Prediction read as a primitive of its most probable kind.
inline Primitive predicted_primitive(const DecoderRow& row) {
    return Primitive(kind_from_index(row.argmax_kind()), row.params);
}

/// Assignment minimizing the summed chamfer distance; predictions are sampled under their
/// argmax kind, GT objects under their own kind.
inline EvalMatch eval_match(const DecoderOutput& preds, const std::vector<Primitive>& gts) {
    const auto n = static_cast<Eigen::Index>(preds.size()), k = static_cast<Eigen::Index>(gts.size());
    if (k > n) throw SizeError("eval_match: more ground-truth primitives than predictions");
    std::vector<PointSet> ps;
    for (const auto& p : preds) ps.push_back(sample_points(predicted_primitive(p)));
    Eigen::MatrixXd c(k, n);
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto g = sample_points(gts[j]);
        for (Eigen::Index i = 0; i < n; ++i) c(j, i) = chamfer(ps[i], g);
    }
    EvalMatch out;
    out.assignment = hungarian(c);
    std::vector<char> used(preds.size(), 0);
    for (Eigen::Index j = 0; j < k; ++j) {
        const int q = out.assignment.query_of[j];
        used[q] = 1;
        MatchedPair mp;
        mp.gt = static_cast<int>(j);
        mp.query = q;
        mp.gt_kind = gts[j].kind;
        mp.pred_kind = kind_from_index(preds[q].argmax_kind());
        mp.confidence = preds[q].confidence();
        mp.cd = c(j, q);
        out.pairs.push_back(mp);
    }
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (!used[i]) out.unmatched_queries.push_back(static_cast<int>(i));
    return out;
}

inline double type_accuracy(const std::vector<MatchedPair>& pairs) {
    if (pairs.empty()) return 0.0;
    int ok = 0;
    for (const auto& p : pairs) ok += p.pred_kind == p.gt_kind;
    return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

/// Matched-pair counts follow the three defined cells; unmatched items are kept apart.
struct DetectionCounts {
    long tp = 0;
    long fp = 0;            // matched, confident, far
    long fn = 0;            // matched, unconfident, far
    long fp_unmatched = 0;  // confident prediction with no GT
    long fn_unmatched = 0;  // GT with no prediction

    long total_fp() const { return fp + fp_unmatched; }
    long total_fn() const { return fn + fn_unmatched; }

    DetectionCounts& operator+=(const DetectionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        fp_unmatched += o.fp_unmatched;
        fn_unmatched += o.fn_unmatched;
        return *this;
    }
    bool operator==(const DetectionCounts&) const = default;
};

inline DetectionCounts tp_fp_fn(const std::vector<MatchedPair>& pairs,
                                const std::vector<double>& unmatched_pred_confidence, long unmatched_gts,
                                const EvalThresholds& t = {}) {
    DetectionCounts c;
    for (const auto& p : pairs) {
        const bool confident = p.confidence > t.tau_con;
        const bool unconfident = p.confidence < t.tau_con;
        if (confident && p.cd < t.tau_cd) ++c.tp;
        else if (confident && p.cd > t.tau_cd) ++c.fp;
        else if (unconfident && p.cd > t.tau_cd) ++c.fn;
    }
    for (double conf : unmatched_pred_confidence)
        if (conf > t.tau_con) ++c.fp_unmatched;
    c.fn_unmatched = unmatched_gts;
    return c;
}

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
};

/// Ratios over the totals (matched plus unmatched); 0 when a denominator is 0.
inline PrecisionRecall precision_recall(const DetectionCounts& c) {
    PrecisionRecall pr;
    const long dp = c.tp + c.total_fp(), dr = c.tp + c.total_fn();
    pr.precision = dp > 0 ? static_cast<double>(c.tp) / static_cast<double>(dp) : 0.0;
    pr.recall = dr > 0 ? static_cast<double>(c.tp) / static_cast<double>(dr) : 0.0;
    return pr;
}

struct ImageEval {
    std::string id;
    int k = 0;
    int correct = 0;
    double cd_sum = 0.0;
    DetectionCounts counts;
    std::array<double, kNumKinds> kind_cd_sum{};
    std::array<int, kNumKinds> kind_count{};
};

inline ImageEval evaluate_image(const std::string& id, const DecoderOutput& preds,
                                const std::vector<Primitive>& gts, const EvalThresholds& t = {}) {
    ImageEval e;
    e.id = id;
    e.k = static_cast<int>(gts.size());
    long missing = 0;
    std::vector<MatchedPair> pairs;
    std::vector<double> extra;
    if (gts.size() > preds.size()) {
        // more GT than predictions: match what fits, the rest are unmatched GT
        const std::vector<Primitive> head(gts.begin(), gts.begin() + static_cast<long>(preds.size()));
        missing = static_cast<long>(gts.size() - preds.size());
        pairs = eval_match(preds, head).pairs;
    } else {
        const auto m = eval_match(preds, gts);
        pairs = m.pairs;
        for (int q : m.unmatched_queries) extra.push_back(preds[q].confidence());
    }
    for (const auto& p : pairs) {
        e.correct += p.pred_kind == p.gt_kind;
        e.cd_sum += p.cd;
        e.kind_cd_sum[kind_index(p.gt_kind)] += p.cd;
        e.kind_count[kind_index(p.gt_kind)] += 1;
    }
    e.counts = tp_fp_fn(pairs, extra, missing, t);
    return e;
}

struct KindReport {
    double mean_cd = 0.0;
    int count = 0;
    bool absent = true;
};

struct EvalReport {
    long images = 0;
    long primitives = 0;
    double type_acc = 0.0;
    double mean_cd = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    DetectionCounts counts;
    std::array<KindReport, kNumKinds> per_kind{};
    EvalThresholds thresholds;
    std::vector<ImageEval> rows;
};

/// Corpus aggregate: type accuracy and CD are weighted by each image's GT count.
inline EvalReport aggregate(std::vector<ImageEval> rows, const EvalThresholds& t = {}) {
    EvalReport r;
    r.thresholds = t;
    long correct = 0, matched = 0;
    double cd = 0.0;
    std::array<double, kNumKinds> ksum{};
    std::array<int, kNumKinds> kcount{};
    for (const auto& e : rows) {
        ++r.images;
        r.primitives += e.k;
        correct += e.correct;
        cd += e.cd_sum;
        for (int k = 0; k < kNumKinds; ++k) {
            ksum[k] += e.kind_cd_sum[k];
            kcount[k] += e.kind_count[k];
            matched += e.kind_count[k];
        }
        r.counts += e.counts;
    }
    r.type_acc = r.primitives > 0 ? static_cast<double>(correct) / static_cast<double>(r.primitives) : 0.0;
    r.mean_cd = matched > 0 ? cd / static_cast<double>(matched) : 0.0;
    const auto pr = precision_recall(r.counts);
    r.precision = pr.precision;
    r.recall = pr.recall;
    for (int k = 0; k < kNumKinds; ++k) {
        r.per_kind[k].count = kcount[k];
        r.per_kind[k].absent = kcount[k] == 0;
        r.per_kind[k].mean_cd = kcount[k] > 0 ? ksum[k] / kcount[k] : 0.0;
    }
    r.rows = std::move(rows);
    return r;
}

using Predictor = std::function<DecoderOutput(const RasterImage&)>;

struct EvalSample {
    RasterImage image;
    Sketch sketch;
};

/// Runs the predictor over every sample in order and aggregates.
inline EvalReport evaluate(const Predictor& predict, const std::vector<EvalSample>& corpus,
                           const EvalThresholds& t = {}) {
    std::vector<ImageEval> rows;
    rows.reserve(corpus.size());
    for (const auto& s : corpus) rows.push_back(evaluate_image(s.sketch.id, predict(s.image), s.sketch.primitives, t));
    return aggregate(std::move(rows), t);
}

inline nlohmann::json to_json(const DetectionCounts& c) {
    return {{"tp", c.tp},
            {"fp", c.total_fp()},
            {"fn", c.total_fn()},
            {"fp_matched", c.fp},
            {"fn_matched", c.fn},
            {"fp_unmatched", c.fp_unmatched},
            {"fn_unmatched", c.fn_unmatched}};
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json kinds = nlohmann::json::object();
    for (auto k : kAllKinds) {
        const auto& kr = r.per_kind[kind_index(k)];
        kinds[std::string(kind_name(k))] = {{"mean_cd", kr.mean_cd}, {"count", kr.count}, {"absent", kr.absent}};
    }
    return {{"images", r.images},
            {"primitives", r.primitives},
            {"type_acc", r.type_acc},
            {"mean_cd", r.mean_cd},
            {"precision", r.precision},
            {"recall", r.recall},
            {"counts", to_json(r.counts)},
            {"per_kind", kinds},
            {"thresholds", {{"tau_con", r.thresholds.tau_con}, {"tau_cd", r.thresholds.tau_cd}}}};
}

/// One line per image, for ablation tables.
inline std::string to_csv(const EvalReport& r) {
    std::ostringstream os;
    os.precision(9);
    os << "id,k,correct,cd_sum,tp,fp,fn,fp_unmatched,fn_unmatched\n";
    for (const auto& e : r.rows)
        os << e.id << ',' << e.k << ',' << e.correct << ',' << e.cd_sum << ',' << e.counts.tp << ','
           << e.counts.fp << ',' << e.counts.fn << ',' << e.counts.fp_unmatched << ',' << e.counts.fn_unmatched
           << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// prediction files: [{"id": ..., "rows": [{"probs": [4], "params": [6]}, ...]}, ...]

inline nlohmann::json to_json(const DecoderRow& r) { return {{"probs", r.probs}, {"params", r.params}}; }

inline DecoderRow decoder_row_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("probs") || !j.contains("params")) throw SchemaError(-1, "row needs 'probs' and 'params'");
    DecoderRow r;
    const auto probs = j["probs"].get<std::vector<double>>();
    const auto params = j["params"].get<std::vector<double>>();
    if (probs.size() != kNumKinds || params.size() != kNumParams) throw SchemaError(-1, "row has wrong sizes");
    for (int k = 0; k < kNumKinds; ++k) {
        if (!(probs[k] >= 0.0 && probs[k] <= 1.0)) throw SchemaError(-1, "probabilities must lie in [0,1]");
        r.probs[k] = probs[k];
        const double p = std::clamp(probs[k], 1e-12, 1.0 - 1e-12);
        r.logits[k] = std::log(p / (1.0 - p));
    }
    for (int c = 0; c < kNumParams; ++c) r.params[c] = params[c];
    return r;
}

/// Rows that reproduce the ground truth with full confidence, padded with empty rows.
inline DecoderOutput oracle_rows(const Sketch& s, int n_queries) {
    DecoderOutput out;
    for (const auto& p : s.primitives) {
        DecoderRow r;
        r.probs[kind_index(p.kind)] = 1.0;
        r.params = p.params;
        out.push_back(r);
    }
    while (static_cast<int>(out.size()) < n_queries) out.push_back(DecoderRow{});
    return out;
}

}  // namespace ppinet
