#include "drc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drc/common.hpp"

namespace drc {

using nlohmann::json;

long long ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0LL);
}

long long ConfusionMatrix::support(int cls) const {
    long long s = 0;
    for (int j = 0; j < k(); ++j) s += at(cls, j);
    return s;
}

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& truth,
                          const std::vector<std::string>& classes) {
    if (predicted.size() != truth.size())
        throw DataError("confusion: prediction/truth length mismatch");
    const int k = int(classes.size());
    ConfusionMatrix cm;
    cm.classes = classes;
    cm.counts.assign(std::size_t(k) * std::size_t(k), 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= k || predicted[i] < 0 || predicted[i] >= k)
            throw DataError("confusion: label outside [0," + std::to_string(k) + ") at row " +
                            std::to_string(i));
        ++cm.at(truth[i], predicted[i]);
    }
    return cm;
}

Prf1 prf1(const ConfusionMatrix& cm, int cls) {
    if (cls < 0 || cls >= cm.k()) throw DataError("prf1: class index out of range");
    long long tp = cm.at(cls, cls), fp = 0, fn = 0;
    for (int j = 0; j < cm.k(); ++j) {
        if (j == cls) continue;
        fp += cm.at(j, cls);
        fn += cm.at(cls, j);
    }
    Prf1 r;
    if (tp + fp > 0) r.precision = double(tp) / double(tp + fp);
    else r.zero_denominator = true;
    if (tp + fn > 0) r.recall = double(tp) / double(tp + fn);
    else r.zero_denominator = true;
    if (2 * tp + fp + fn > 0) r.f1 = double(2 * tp) / double(2 * tp + fp + fn);
    else r.zero_denominator = true;
    return r;
}

AggMode agg_mode_from_string(const std::string& s) {
    if (s == "micro") return AggMode::micro;
    if (s == "macro") return AggMode::macro;
    if (s == "weighted") return AggMode::weighted;
    throw ConfigError("unknown aggregation mode '" + s + "'");
}

double aggregate(const std::vector<double>& per_class, const std::vector<long long>& supports,
                 AggMode mode) {
    if (mode == AggMode::micro)
        throw ConfigError("micro aggregation needs pooled counts; use micro_f1");
    if (per_class.empty()) throw ConfigError("aggregate: no values");
    if (per_class.size() != supports.size())
        throw ConfigError("aggregate: values/supports size mismatch");
    if (mode == AggMode::macro) {
        double s = 0.0;
        for (double v : per_class) s += v;
        return s / double(per_class.size());
    }
    long long total = 0;
    for (long long s : supports) total += s;
    if (total <= 0) throw ConfigError("aggregate: zero total support");
    double s = 0.0;
    for (std::size_t i = 0; i < per_class.size(); ++i)
        s += per_class[i] * double(supports[i]);
    return s / double(total);
}

PooledCounts pool_counts(const ConfusionMatrix& cm) {
    PooledCounts p;
    for (int c = 0; c < cm.k(); ++c) {
        p.tp += cm.at(c, c);
        for (int j = 0; j < cm.k(); ++j) {
            if (j == c) continue;
            p.fp += cm.at(j, c);
            p.fn += cm.at(c, j);
        }
    }
    return p;
}

double micro_f1(const PooledCounts& p) {
    const long long den = 2 * p.tp + p.fp + p.fn;
    if (den <= 0) throw ConfigError("micro_f1: zero total support");
    return double(2 * p.tp) / double(den);
}

std::pair<RocCurve, double> roc_auc(const std::vector<double>& scores,
                                    const std::vector<int>& truth) {
    if (scores.size() != truth.size())
        throw DataError("roc_auc: score/truth length mismatch");
    long long n_pos = 0, n_neg = 0;
    for (int t : truth) (t ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw DataError("roc_auc: AUC undefined, truth contains a single class");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    RocCurve curve;
    curve.points.emplace_back(0.0, 0.0);
    double auc = 0.0;
    long long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        // Collapse the tie group at this threshold.
        const double cut = scores[order[i]];
        long long dtp = 0, dfp = 0;
        while (i < order.size() && scores[order[i]] == cut) {
            (truth[order[i]] ? dtp : dfp)++;
            ++i;
        }
        const double fpr0 = double(fp) / double(n_neg);
        const double tpr0 = double(tp) / double(n_pos);
        tp += dtp;
        fp += dfp;
        const double fpr1 = double(fp) / double(n_neg);
        const double tpr1 = double(tp) / double(n_pos);
        auc += (fpr1 - fpr0) * (tpr0 + tpr1) * 0.5;
        curve.points.emplace_back(fpr1, tpr1);
        curve.thresholds.push_back(cut);
    }
    return {std::move(curve), auc};
}

MulticlassAuc multiclass_auc(const Tensor& probabilities, const std::vector<int>& truth,
                             int num_classes) {
    if (probabilities.rank() != 2 || probabilities.dim(1) != num_classes)
        throw ShapeError("multiclass_auc: expected (n," + std::to_string(num_classes) +
                         ") probabilities, got " + probabilities.shape_str());
    const int n = probabilities.dim(0);
    if (int(truth.size()) != n)
        throw DataError("multiclass_auc: truth length mismatch");
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int c = 0; c < num_classes; ++c) s += probabilities.at(i, c);
        if (std::abs(s - 1.0) > 1e-6)
            throw DataError("multiclass_auc: probability row " + std::to_string(i) +
                            " sums to " + std::to_string(s));
    }

    MulticlassAuc out;
    out.per_class.assign(std::size_t(num_classes),
                         std::numeric_limits<double>::quiet_NaN());
    std::vector<double> defined;
    std::vector<long long> defined_support;
    for (int c = 0; c < num_classes; ++c) {
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<int> binary(static_cast<std::size_t>(n));
        long long pos = 0;
        for (int i = 0; i < n; ++i) {
            scores[std::size_t(i)] = probabilities.at(i, c);
            binary[std::size_t(i)] = truth[std::size_t(i)] == c ? 1 : 0;
            pos += binary[std::size_t(i)];
        }
        if (pos == 0 || pos == n) {
            out.warnings.push_back("class " + std::to_string(c) +
                                   ": OvR AUC undefined (absent from truth), skipped in "
                                   "macro/weighted");
            continue;
        }
        out.per_class[std::size_t(c)] = roc_auc(scores, binary).second;
        defined.push_back(out.per_class[std::size_t(c)]);
        defined_support.push_back(pos);
    }
    if (!defined.empty()) {
        out.macro = aggregate(defined, defined_support, AggMode::macro);
        out.weighted = aggregate(defined, defined_support, AggMode::weighted);
    }

    // Micro: one binary problem over the flattened (row, class) indicators.
    std::vector<double> flat_scores;
    std::vector<int> flat_truth;
    flat_scores.reserve(std::size_t(n) * std::size_t(num_classes));
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < num_classes; ++c) {
            flat_scores.push_back(probabilities.at(i, c));
            flat_truth.push_back(truth[std::size_t(i)] == c ? 1 : 0);
        }
    if (n > 0) out.micro = roc_auc(flat_scores, flat_truth).second;
    return out;
}

MetricsReport evaluate_predictions(const Tensor& probabilities,
                                   const std::vector<int>& truth,
                                   const std::vector<std::string>& classes) {
    const int k = int(classes.size());
    if (probabilities.rank() != 2 || probabilities.dim(1) != k)
        throw ShapeError("evaluate: expected (n," + std::to_string(k) +
                         ") probabilities, got " + probabilities.shape_str());
    const int n = probabilities.dim(0);
    if (int(truth.size()) != n) throw DataError("evaluate: truth length mismatch");

    std::vector<int> preds(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int arg = 0;
        for (int c = 1; c < k; ++c)
            if (probabilities.at(i, c) > probabilities.at(i, arg)) arg = c;
        preds[std::size_t(i)] = arg;
    }

    MetricsReport r;
    r.classes = classes;
    r.cm = confusion(preds, truth, classes);
    std::vector<double> precisions, recalls, f1s;
    std::vector<long long> supports;
    for (int c = 0; c < k; ++c) {
        r.per_class.push_back(prf1(r.cm, c));
        precisions.push_back(r.per_class.back().precision);
        recalls.push_back(r.per_class.back().recall);
        f1s.push_back(r.per_class.back().f1);
        supports.push_back(r.cm.support(c));
    }

    r.f1_micro = micro_f1(pool_counts(r.cm));
    r.f1_macro = aggregate(f1s, supports, AggMode::macro);
    r.f1_weighted = aggregate(f1s, supports, AggMode::weighted);
    r.accuracy = n > 0 ? double([&] {
        long long correct = 0;
        for (int c = 0; c < k; ++c) correct += r.cm.at(c, c);
        return correct;
    }()) / double(n)
                       : 0.0;

    MulticlassAuc auc = multiclass_auc(probabilities, truth, k);
    r.per_class_auc = auc.per_class;
    r.auc_micro = auc.micro;
    r.auc_macro = auc.macro;
    r.auc_weighted = auc.weighted;
    r.warnings = auc.warnings;

    // Headline values are the macro variants by definition.
    r.recall = aggregate(recalls, supports, AggMode::macro);
    r.precision = aggregate(precisions, supports, AggMode::macro);
    r.f1 = r.f1_macro;
    r.auc_roc = r.auc_macro;

    for (int c = 0; c < k; ++c) {
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<int> binary(static_cast<std::size_t>(n));
        long long pos = 0;
        for (int i = 0; i < n; ++i) {
            scores[std::size_t(i)] = probabilities.at(i, c);
            binary[std::size_t(i)] = truth[std::size_t(i)] == c ? 1 : 0;
            pos += binary[std::size_t(i)];
        }
        if (pos == 0 || pos == n) {
            r.roc.emplace_back(); // undefined: empty curve
            continue;
        }
        r.roc.push_back(roc_auc(scores, binary).first);
    }
    return r;
}

namespace {

json nan_to_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

double null_to_nan(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j.get<double>();
}

} // namespace

// Fractions only; the CLI multiplies by 100 for table display.
json MetricsReport::to_json() const {
    json per = json::object();
    for (int c = 0; c < int(classes.size()); ++c) {
        per[classes[std::size_t(c)]] = {
            {"precision", per_class[std::size_t(c)].precision},
            {"recall", per_class[std::size_t(c)].recall},
            {"f1", per_class[std::size_t(c)].f1},
            {"auc", nan_to_null(per_class_auc[std::size_t(c)])},
            {"zero_denominator", per_class[std::size_t(c)].zero_denominator}};
    }
    json roc_obj = json::object();
    for (int c = 0; c < int(classes.size()); ++c) {
        json pts = json::array();
        for (auto& [fpr, tpr] : roc[std::size_t(c)].points) pts.push_back({fpr, tpr});
        roc_obj[classes[std::size_t(c)]] = pts;
    }
    return json{
        {"classes", classes},
        {"confusion", cm.counts},
        {"per_class", per},
        {"aggregates",
         {{"f1", {{"micro", f1_micro}, {"macro", f1_macro}, {"weighted", f1_weighted}}},
          {"auc", {{"micro", auc_micro}, {"macro", auc_macro}, {"weighted", auc_weighted}}}}},
        {"headline",
         {{"recall", recall}, {"precision", precision}, {"auc_roc", auc_roc}, {"f1", f1}}},
        {"accuracy", accuracy},
        {"roc", roc_obj},
        {"warnings", warnings}};
}

MetricsReport MetricsReport::from_json(const json& j) {
    MetricsReport r;
    r.classes = j.at("classes").get<std::vector<std::string>>();
    r.cm.classes = r.classes;
    r.cm.counts = j.at("confusion").get<std::vector<long long>>();
    for (const auto& cls : r.classes) {
        const json& p = j.at("per_class").at(cls);
        Prf1 v;
        v.precision = p.at("precision").get<double>();
        v.recall = p.at("recall").get<double>();
        v.f1 = p.at("f1").get<double>();
        v.zero_denominator = p.at("zero_denominator").get<bool>();
        r.per_class.push_back(v);
        r.per_class_auc.push_back(null_to_nan(p.at("auc")));
    }
    r.f1_micro = j.at("aggregates").at("f1").at("micro").get<double>();
    r.f1_macro = j.at("aggregates").at("f1").at("macro").get<double>();
    r.f1_weighted = j.at("aggregates").at("f1").at("weighted").get<double>();
    r.auc_micro = j.at("aggregates").at("auc").at("micro").get<double>();
    r.auc_macro = j.at("aggregates").at("auc").at("macro").get<double>();
    r.auc_weighted = j.at("aggregates").at("auc").at("weighted").get<double>();
    r.recall = j.at("headline").at("recall").get<double>();
    r.precision = j.at("headline").at("precision").get<double>();
    r.auc_roc = j.at("headline").at("auc_roc").get<double>();
    r.f1 = j.at("headline").at("f1").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    for (const auto& cls : r.classes) {
        RocCurve curve;
        for (const auto& pt : j.at("roc").at(cls))
            curve.points.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
        r.roc.push_back(std::move(curve));
    }
    if (j.contains("warnings"))
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

} // namespace drc
