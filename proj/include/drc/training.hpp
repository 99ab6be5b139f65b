#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "drc/classifier.hpp"
#include "drc/datasets.hpp"
#include "drc/metrics.hpp"
#include "drc/preprocess.hpp"

namespace drc {

struct TrainConfig {
    double learning_rate = 0.001;
    double momentum = 0.9;
    int epochs = 30;
    int batch_size = 16;
    double l2_coefficient = 1e-4;
    std::uint64_t seed = 0;
    AugmentationSpec augmentation;
    bool freeze_backbones = false;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainHistory {
    struct Epoch {
        double loss = 0.0;     // mean over batches
        double accuracy = 0.0; // over augmented training batches
        double seconds = 0.0;
    };
    std::vector<Epoch> epochs;

    // history.csv: epoch,loss,acc,seconds
    void write_csv(const std::filesystem::path& path) const;
    static TrainHistory read_csv(const std::filesystem::path& path);
};

// Categorical cross-entropy on probability rows: mean over rows of
// -sum_c y_c log(p_c + 1e-12), plus l2_coefficient * l2_term.
double cross_entropy_loss(const Tensor& probs, const Tensor& onehot, double l2_term,
                          double l2_coefficient);

// In-graph data term (the L2 gradient is applied directly to kernel grads).
nn::Var cross_entropy_node(nn::Tape& t, nn::Var probs, const Tensor& onehot);

// Loads one manifest sample as a preprocessed (denoised if configured, then
// normalized) grid at native resolution. Virtual so tests can synthesize
// images without touching disk.
class SampleLoader {
public:
    struct Options {
        std::optional<DenoiseMethod> denoise; // off by default
        DenoiseParams denoise_params;
    };

    SampleLoader() = default;
    explicit SampleLoader(Options options) : options(std::move(options)) {}
    virtual ~SampleLoader() = default;

    virtual Tensor load_grid(const ImageSampleRef& sample) const;

    Options options;
};

// SGD with momentum: v <- m*v - lr*g; theta <- theta + v. Kernel gradients
// include the 2*lambda*theta L2 term. Updated parameters are snapped back to
// the float32 grid the archives store.
struct SgdState {
    std::vector<Tensor> velocity;
};
void sgd_step(const std::vector<nn::Parameter*>& params, SgdState& state, double lr,
              double momentum, double l2_coefficient);

struct StepResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

// One optimization step on an assembled batch; exposed for the optimizer
// contract tests.
StepResult train_step(Classifier& model, const Tensor& images,
                      const std::vector<int>& labels,
                      const std::vector<nn::Parameter*>& trainable, SgdState& state,
                      const TrainConfig& config);

// Full training loop: per-epoch reshuffle seeded from (seed, epoch),
// preprocessing + augmentation per batch, SGD steps, loss/accuracy history.
// `train_ids` null trains on the whole manifest.
TrainHistory fit(Classifier& model, const DatasetManifest& manifest,
                 const std::vector<std::string>* train_ids, const TrainConfig& config,
                 const SampleLoader& loader);

// Deterministic evaluation-mode probabilities for the given ids (manifest
// order if null).
Tensor predict_probs(Classifier& model, const DatasetManifest& manifest,
                     const std::vector<std::string>* ids, const SampleLoader& loader,
                     int batch_size = 32);

MetricsReport evaluate_model(Classifier& model, const DatasetManifest& manifest,
                             const std::vector<std::string>* ids,
                             const SampleLoader& loader);

using ModelFactory = std::function<std::unique_ptr<Classifier>(std::uint64_t init_seed)>;

struct CrossValResult {
    struct Fold {
        MetricsReport report;
        TrainHistory history;
    };
    std::vector<Fold> folds;
    ConfusionMatrix combined_cm; // summed fold counts

    struct Row {
        std::string metric;
        std::vector<double> fold_values;
        double mean = 0.0;
        double sd = 0.0; // sample sd; 0 for a single fold
    };
    std::vector<Row> summary; // Table-3-shaped rows, fractions
};

// Independently initializes, trains, and evaluates one model per fold; folds
// may run in parallel (jobs > 1) without changing any result.
CrossValResult cross_validate(const DatasetManifest& manifest, const SplitPlan& plan,
                              const ModelFactory& factory, const TrainConfig& config,
                              const SampleLoader& loader, int jobs = 1);

} // namespace drc
