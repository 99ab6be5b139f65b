#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "drc/tensor.hpp"

namespace drc {

// Rows are target classes, columns predicted classes.
struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<long long> counts; // K*K row-major

    int k() const { return int(classes.size()); }
    long long& at(int target, int predicted) { return counts[std::size_t(target) * classes.size() + std::size_t(predicted)]; }
    long long at(int target, int predicted) const { return counts[std::size_t(target) * classes.size() + std::size_t(predicted)]; }
    long long total() const;
    long long support(int cls) const; // row sum
};

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& truth,
                          const std::vector<std::string>& classes);

struct Prf1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool zero_denominator = false; // some ratio had an empty denominator -> 0
};

// precision = TP/(TP+FP), recall = TP/(TP+FN), F1 = 2TP/(2TP+FP+FN); empty
// denominators yield 0 with the flag set.
Prf1 prf1(const ConfusionMatrix& cm, int cls);

enum class AggMode { micro, macro, weighted };

AggMode agg_mode_from_string(const std::string& s);

// macro = unweighted mean, weighted = support-weighted mean. Zero total
// support is an error.
double aggregate(const std::vector<double>& per_class, const std::vector<long long>& supports,
                 AggMode mode);

// micro aggregation works on pooled counts, not per-class values.
struct PooledCounts {
    long long tp = 0, fp = 0, fn = 0;
};
PooledCounts pool_counts(const ConfusionMatrix& cm);
double micro_f1(const PooledCounts& pooled);

struct RocCurve {
    std::vector<std::pair<double, double>> points; // (fpr, tpr), (0,0) .. (1,1)
    std::vector<double> thresholds;                // descending distinct cuts
};

// Descending-threshold sweep with tie groups collapsed; AUC is the
// trapezoidal integral and equals P(score_pos > score_neg) + 0.5 P(tie).
// Requires at least one positive and one negative.
std::pair<RocCurve, double> roc_auc(const std::vector<double>& scores,
                                    const std::vector<int>& truth);

// One-vs-rest multi-class AUC. Classes absent from the truth have undefined
// OvR AUC: macro/weighted skip them (recording a warning), micro is
// unaffected.
struct MulticlassAuc {
    std::vector<double> per_class; // NaN where undefined
    double macro = 0.0;
    double micro = 0.0;
    double weighted = 0.0;
    std::vector<std::string> warnings;
};
MulticlassAuc multiclass_auc(const Tensor& probabilities, const std::vector<int>& truth,
                             int num_classes);

struct MetricsReport {
    std::vector<std::string> classes;
    ConfusionMatrix cm;
    std::vector<Prf1> per_class;
    std::vector<double> per_class_auc; // NaN where undefined
    // Aggregates (micro / macro / weighted).
    double f1_micro = 0.0, f1_macro = 0.0, f1_weighted = 0.0;
    double auc_micro = 0.0, auc_macro = 0.0, auc_weighted = 0.0;
    // Headline values are the macro variants.
    double recall = 0.0, precision = 0.0, f1 = 0.0, auc_roc = 0.0;
    double accuracy = 0.0;
    std::vector<RocCurve> roc; // per class; empty curve where undefined
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

// Full evaluation of probability rows against integer labels.
MetricsReport evaluate_predictions(const Tensor& probabilities,
                                   const std::vector<int>& truth,
                                   const std::vector<std::string>& classes);

} // namespace drc
