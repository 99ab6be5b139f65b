#include "drc/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "drc/image_io.hpp"
#include "drc/rng.hpp"

namespace drc {

using nlohmann::json;
using nn::Tape;
using nn::Var;

namespace {
constexpr double kLogClamp = 1e-12;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (l2_coefficient < 0.0) throw ConfigError("l2_coefficient must be nonnegative");
    augmentation.validate();
}

json TrainConfig::to_json() const {
    return json{{"learning_rate", learning_rate},
                {"momentum", momentum},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"l2_coefficient", l2_coefficient},
                {"seed", seed},
                {"freeze_backbones", freeze_backbones},
                {"augmentation",
                 {{"rotation_degrees", augmentation.rotation_degrees},
                  {"width_shift_px", augmentation.width_shift_px},
                  {"height_shift_px", augmentation.height_shift_px},
                  {"zca_whitening", augmentation.zca_whitening},
                  {"zca_epsilon", augmentation.zca_epsilon}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", 0.001);
    c.momentum = j.value("momentum", 0.9);
    c.epochs = j.value("epochs", 30);
    c.batch_size = j.value("batch_size", 16);
    c.l2_coefficient = j.value("l2_coefficient", 1e-4);
    c.seed = j.value("seed", std::uint64_t(0));
    c.freeze_backbones = j.value("freeze_backbones", false);
    if (j.contains("augmentation")) {
        const json& a = j.at("augmentation");
        c.augmentation.rotation_degrees = a.value("rotation_degrees", 15.0);
        c.augmentation.width_shift_px = a.value("width_shift_px", 20);
        c.augmentation.height_shift_px = a.value("height_shift_px", 20);
        c.augmentation.zca_whitening = a.value("zca_whitening", false);
        c.augmentation.zca_epsilon = a.value("zca_epsilon", 1e-6);
    }
    c.validate();
    return c;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "epoch,loss,acc,seconds\n";
    out.precision(17);
    for (std::size_t e = 0; e < epochs.size(); ++e)
        out << e << ',' << epochs[e].loss << ',' << epochs[e].accuracy << ','
            << epochs[e].seconds << '\n';
}

TrainHistory TrainHistory::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "epoch,loss,acc,seconds")
        throw DataError("history " + path.string() + ": bad header");
    TrainHistory h;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Epoch e;
        int idx;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &idx, &e.loss, &e.accuracy,
                        &e.seconds) != 4)
            throw DataError("history " + path.string() + ": malformed row '" + line + "'");
        h.epochs.push_back(e);
    }
    return h;
}

double cross_entropy_loss(const Tensor& probs, const Tensor& onehot, double l2_term,
                          double l2_coefficient) {
    if (!probs.same_shape(onehot))
        throw ShapeError("cross_entropy: probs " + probs.shape_str() + " vs labels " +
                         onehot.shape_str());
    const int n = probs.dim(0), k = probs.dim(1);
    if (n == 0) return l2_coefficient * l2_term;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (int c = 0; c < k; ++c) row_sum += probs.at(i, c);
        if (std::abs(row_sum - 1.0) > 1e-6)
            throw DataError("cross_entropy: probability row " + std::to_string(i) +
                            " sums to " + std::to_string(row_sum));
        for (int c = 0; c < k; ++c)
            if (onehot.at(i, c) != 0.0)
                sum -= onehot.at(i, c) * std::log(probs.at(i, c) + kLogClamp);
    }
    return sum / double(n) + l2_coefficient * l2_term;
}

Var cross_entropy_node(Tape& t, Var probs, const Tensor& onehot) {
    const Tensor& p = t.value(probs);
    if (!p.same_shape(onehot))
        throw ShapeError("cross_entropy: probs " + p.shape_str() + " vs labels " +
                         onehot.shape_str());
    const int n = p.dim(0), k = p.dim(1);
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < k; ++c)
            if (onehot.at(i, c) != 0.0) sum -= onehot.at(i, c) * std::log(p.at(i, c) + kLogClamp);
    const double value = n > 0 ? sum / double(n) : 0.0;
    if (!t.grad_enabled()) return t.push(Tensor::scalar(value), nullptr);
    auto labels = std::make_shared<Tensor>(onehot);
    return t.push(Tensor::scalar(value), [probs, labels, n, k](Tape& tp, const Tensor& g) {
        const Tensor& p = tp.value(probs);
        Tensor& dp = tp.grad(probs);
        const double scale = g[0] / double(n);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < k; ++c)
                if (labels->at(i, c) != 0.0)
                    dp.at(i, c) -= scale * labels->at(i, c) / (p.at(i, c) + kLogClamp);
    });
}

Tensor SampleLoader::load_grid(const ImageSampleRef& sample) const {
    Tensor img = load_image_gray(sample.path);
    if (options.denoise) img = denoise(img, *options.denoise, options.denoise_params);
    return normalize(img);
}

void sgd_step(const std::vector<nn::Parameter*>& params, SgdState& state, double lr,
              double momentum, double l2_coefficient) {
    if (state.velocity.size() != params.size()) {
        state.velocity.clear();
        for (auto* p : params) state.velocity.emplace_back(p->value.shape());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        nn::Parameter& p = *params[i];
        p.ensure_grad();
        Tensor& v = state.velocity[i];
        const double l2 = p.is_kernel ? 2.0 * l2_coefficient : 0.0;
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j] + l2 * p.value[j];
            v[j] = momentum * v[j] - lr * g;
            p.value[j] = nn::to_f32(p.value[j] + v[j]);
        }
    }
}

namespace {

Tensor one_hot(const std::vector<int>& labels, int k) {
    Tensor t({int(labels.size()), k});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw DataError("label index " + std::to_string(labels[i]) + " out of range");
        t.at(int(i), labels[i]) = 1.0;
    }
    return t;
}

Tensor stack_grids(const std::vector<Tensor>& grids, int size) {
    Tensor batch({int(grids.size()), size, size, 3});
    for (std::size_t i = 0; i < grids.size(); ++i) {
        const Tensor& g = grids[i];
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double v = g.at(y, x);
                for (int c = 0; c < 3; ++c) batch.at(int(i), y, x, c) = v;
            }
    }
    return batch;
}

int argmax_row(const Tensor& probs, int row) {
    int arg = 0;
    for (int c = 1; c < probs.dim(1); ++c)
        if (probs.at(row, c) > probs.at(row, arg)) arg = c;
    return arg;
}

std::vector<const ImageSampleRef*> resolve_ids(const DatasetManifest& manifest,
                                               const std::vector<std::string>* ids) {
    std::vector<const ImageSampleRef*> out;
    if (!ids) {
        for (const auto& s : manifest.samples) out.push_back(&s);
        return out;
    }
    std::map<std::string, const ImageSampleRef*> index;
    for (const auto& s : manifest.samples) index[s.id] = &s;
    for (const auto& id : *ids) {
        auto it = index.find(id);
        if (it == index.end()) throw DataError("id '" + id + "' not in manifest");
        out.push_back(it->second);
    }
    return out;
}

bool is_backbone_param(const std::string& name) {
    return !(name.rfind("head.", 0) == 0 || name.rfind("fc.", 0) == 0 ||
             name.rfind("block", 0) == 0 || name.rfind("proj", 0) == 0);
}

} // namespace

StepResult train_step(Classifier& model, const Tensor& images,
                      const std::vector<int>& labels,
                      const std::vector<nn::Parameter*>& trainable, SgdState& state,
                      const TrainConfig& config) {
    for (auto* p : trainable) p->zero_grad();
    Tape tape(true);
    Var in = tape.leaf(images);
    Var probs = model.forward(tape, in, /*training=*/true);
    const Tensor onehot = one_hot(labels, model.num_classes());
    Var loss_node = cross_entropy_node(tape, probs, onehot);

    StepResult result;
    result.loss = tape.value(loss_node)[0] + config.l2_coefficient * model.l2_sum();
    const Tensor& p = tape.value(probs);
    int correct = 0;
    for (int i = 0; i < p.dim(0); ++i)
        if (argmax_row(p, i) == labels[std::size_t(i)]) ++correct;
    result.accuracy = p.dim(0) > 0 ? double(correct) / p.dim(0) : 0.0;

    tape.backward(loss_node);
    sgd_step(trainable, state, config.learning_rate, config.momentum,
             config.l2_coefficient);
    return result;
}

TrainHistory fit(Classifier& model, const DatasetManifest& manifest,
                 const std::vector<std::string>* train_ids, const TrainConfig& config,
                 const SampleLoader& loader) {
    config.validate();
    if (model.num_classes() != int(manifest.classes.size()))
        throw ConfigError("model expects " + std::to_string(model.num_classes()) +
                          " classes, manifest has " +
                          std::to_string(manifest.classes.size()));
    auto samples = resolve_ids(manifest, train_ids);
    if (samples.empty()) throw ConfigError("fit: empty training set");

    std::vector<nn::Parameter*> trainable;
    for (auto* p : model.parameters())
        if (!config.freeze_backbones || !is_backbone_param(p->name)) trainable.push_back(p);

    const int size = model.input_size();
    SgdState state;
    TrainHistory history;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(fan_out(config.seed, "shuffle", std::uint64_t(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int batches = 0;
        long long correct_weight = 0;

        for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + std::size_t(config.batch_size));
            std::vector<Tensor> grids;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                const ImageSampleRef& ref = *samples[order[i]];
                Tensor grid = resize_bilinear(loader.load_grid(ref), size, size);
                // One independent augmentation stream per (sample, epoch), so
                // batch composition cannot perturb another sample's draws.
                Rng aug_rng(fan_out(config.seed, "augment." + ref.id, std::uint64_t(epoch)));
                grids.push_back(augment(grid, config.augmentation, aug_rng));
                labels.push_back(manifest.class_index(ref.label));
            }
            if (config.augmentation.zca_whitening)
                zca_whiten(grids, config.augmentation.zca_epsilon);

            StepResult step = train_step(model, stack_grids(grids, size), labels,
                                         trainable, state, config);
            if (!std::isfinite(step.loss))
                throw NumericError("training loss is not finite at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batches) + ", lr " +
                                   std::to_string(config.learning_rate));
            loss_sum += step.loss;
            ++batches;
            correct_weight += (long long)std::lround(step.accuracy * double(end - start));
        }

        TrainHistory::Epoch e;
        e.loss = loss_sum / double(batches);
        e.accuracy = double(correct_weight) / double(samples.size());
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(e);
    }
    return history;
}

Tensor predict_probs(Classifier& model, const DatasetManifest& manifest,
                     const std::vector<std::string>* ids, const SampleLoader& loader,
                     int batch_size) {
    auto samples = resolve_ids(manifest, ids);
    const int size = model.input_size();
    Tensor probs({int(samples.size()), model.num_classes()});
    for (std::size_t start = 0; start < samples.size(); start += std::size_t(batch_size)) {
        const std::size_t end = std::min(samples.size(), start + std::size_t(batch_size));
        std::vector<Tensor> grids;
        for (std::size_t i = start; i < end; ++i)
            grids.push_back(resize_bilinear(loader.load_grid(*samples[i]), size, size));
        Tape tape(false);
        Var out = model.forward(tape, tape.leaf(stack_grids(grids, size)), /*training=*/false);
        const Tensor& p = tape.value(out);
        for (std::size_t i = start; i < end; ++i)
            for (int c = 0; c < model.num_classes(); ++c)
                probs.at(int(i), c) = p.at(int(i - start), c);
    }
    return probs;
}

MetricsReport evaluate_model(Classifier& model, const DatasetManifest& manifest,
                             const std::vector<std::string>* ids,
                             const SampleLoader& loader) {
    if (model.num_classes() != int(manifest.classes.size()))
        throw ConfigError("model/manifest class count mismatch");
    auto samples = resolve_ids(manifest, ids);
    std::vector<int> truth;
    for (auto* s : samples) truth.push_back(manifest.class_index(s->label));
    Tensor probs = predict_probs(model, manifest, ids, loader);
    return evaluate_predictions(probs, truth, manifest.classes);
}

namespace {

CrossValResult::Row make_row(const std::string& metric, std::vector<double> values) {
    CrossValResult::Row row;
    row.metric = metric;
    row.fold_values = std::move(values);
    const std::size_t k = row.fold_values.size();
    for (double v : row.fold_values) row.mean += v;
    row.mean /= double(k);
    if (k > 1) {
        double ss = 0.0;
        for (double v : row.fold_values) ss += (v - row.mean) * (v - row.mean);
        row.sd = std::sqrt(ss / double(k - 1));
    }
    return row;
}

} // namespace

CrossValResult cross_validate(const DatasetManifest& manifest, const SplitPlan& plan,
                              const ModelFactory& factory, const TrainConfig& config,
                              const SampleLoader& loader, int jobs) {
    if (plan.folds.empty()) throw ConfigError("cross_validate: no folds");
    const int n_folds = int(plan.folds.size());

    CrossValResult result;
    result.folds.resize(std::size_t(n_folds));
    std::vector<std::string> errors(static_cast<std::size_t>(n_folds));

    std::atomic<int> next{0};
    auto run_fold = [&](int k) {
        try {
            auto model = factory(fan_out(config.seed, "fold-init", std::uint64_t(k)));
            TrainConfig fold_cfg = config;
            fold_cfg.seed = fan_out(config.seed, "fold-train", std::uint64_t(k));
            result.folds[std::size_t(k)].history =
                fit(*model, manifest, &plan.folds[std::size_t(k)].train_ids, fold_cfg, loader);
            result.folds[std::size_t(k)].report = evaluate_model(
                *model, manifest, &plan.folds[std::size_t(k)].test_ids, loader);
        } catch (const std::exception& e) {
            errors[std::size_t(k)] = e.what();
        }
    };

    const int workers = std::clamp(jobs, 1, n_folds);
    if (workers <= 1) {
        for (int k = 0; k < n_folds; ++k) run_fold(k);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int k = next.fetch_add(1); k < n_folds; k = next.fetch_add(1)) run_fold(k);
            });
        for (auto& th : pool) th.join();
    }
    for (int k = 0; k < n_folds; ++k)
        if (!errors[std::size_t(k)].empty())
            throw DataError("fold " + std::to_string(k) + " failed: " + errors[std::size_t(k)]);

    result.combined_cm.classes = manifest.classes;
    result.combined_cm.counts.assign(manifest.classes.size() * manifest.classes.size(), 0);
    for (const auto& fold : result.folds)
        for (std::size_t i = 0; i < fold.report.cm.counts.size(); ++i)
            result.combined_cm.counts[i] += fold.report.cm.counts[i];

    auto column = [&](auto getter) {
        std::vector<double> v;
        for (const auto& fold : result.folds) v.push_back(getter(fold.report));
        return v;
    };
    result.summary = {
        make_row("Recall", column([](const MetricsReport& r) { return r.recall; })),
        make_row("Precision", column([](const MetricsReport& r) { return r.precision; })),
        make_row("AUC-ROC", column([](const MetricsReport& r) { return r.auc_roc; })),
        make_row("AUC-ROC macro", column([](const MetricsReport& r) { return r.auc_macro; })),
        make_row("AUC-ROC micro", column([](const MetricsReport& r) { return r.auc_micro; })),
        make_row("AUC-ROC weighted",
                 column([](const MetricsReport& r) { return r.auc_weighted; })),
        make_row("F1", column([](const MetricsReport& r) { return r.f1; })),
        make_row("F1 macro", column([](const MetricsReport& r) { return r.f1_macro; })),
        make_row("F1 micro", column([](const MetricsReport& r) { return r.f1_micro; })),
        make_row("F1 weighted", column([](const MetricsReport& r) { return r.f1_weighted; })),
    };
    return result;
}

} // namespace drc
