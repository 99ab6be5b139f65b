#include "drc/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "drc/heatmaps.hpp"
#include "drc/image_io.hpp"
#include "drc/rng.hpp"

namespace drc {

using nlohmann::json;
namespace fs = std::filesystem;

json RunConfig::to_json() const {
    return json{{"dataset", dataset},
                {"manifest", manifest_path},
                {"sources_root", sources_root},
                {"folds", folds},
                {"train_fraction", train_fraction},
                {"stratified", stratified},
                {"model", model},
                {"train", train.to_json()},
                {"output_dir", output_dir},
                {"seed", seed}};
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    c.dataset = j.value("dataset", std::string("DXR4"));
    c.manifest_path = j.value("manifest", std::string());
    c.sources_root = j.value("sources_root", std::string());
    c.folds = j.value("folds", 4);
    c.train_fraction = j.value("train_fraction", 0.7);
    c.stratified = j.value("stratified", false);
    c.model = j.value("model", json::object());
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    c.output_dir = j.value("output_dir", std::string());
    c.seed = j.value("seed", std::uint64_t(0));
    return c;
}

namespace {

fs::path resolve_output(const std::string& path) {
    fs::path p(path);
    if (p.is_relative()) {
        if (const char* root = std::getenv("DENRESCOV_OUTPUT_ROOT"))
            return fs::path(root) / p;
    }
    return p;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

std::vector<std::string> read_id_list(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ids.push_back(line);
    if (ids.empty()) throw DataError("id list " + path + " is empty");
    return ids;
}

// Builds a model from a config json ("kind": fusion | resnet50 | densenet121
// | stub); class count always comes from the manifest.
std::unique_ptr<Classifier> build_model(json config, int num_classes,
                                        std::uint64_t init_seed) {
    const std::string kind = config.value("kind", std::string("fusion"));
    if (kind == "fusion") {
        config["kind"] = "fusion";
        config["num_classes"] = num_classes;
        if (!config.contains("backbone_scale")) config["backbone_scale"] = "1/1";
        if (!config.contains("input_size")) config["input_size"] = 224;
        if (!config.contains("fusion_mode")) config["fusion_mode"] = "concat_channels";
        return std::make_unique<FusionModel>(FusionModelConfig::from_json(config),
                                             init_seed);
    }
    if (kind == "resnet50" || kind == "densenet121") {
        BackboneConfig bc;
        bc.kind = backbone_kind_from_string(kind);
        bc.input_size = config.value("input_size", 224);
        bc.channel_scale = Rational::parse(config.value("channel_scale", std::string("1/1")));
        bc.pretrained = config.value("pretrained", false);
        return std::make_unique<BackboneClassifier>(bc, num_classes, init_seed);
    }
    if (kind == "stub")
        return std::make_unique<StubClassifier>(num_classes, config.value("input_size", 64),
                                                config.value("constant_class", 0));
    throw ConfigError("unknown model kind '" + kind + "'");
}

void apply_pretrained(Classifier& model, const json& model_config,
                      const std::string& resnet_weights,
                      const std::string& densenet_weights) {
    if (!model_config.value("pretrained", false)) return;
    if (auto* fusion = dynamic_cast<FusionModel*>(&model)) {
        if (resnet_weights.empty() || densenet_weights.empty())
            throw ConfigError("pretrained fusion model needs --resnet-weights and "
                              "--densenet-weights archives");
        const int nr = load_pretrained(fusion->resnet(), WeightArchive::load(resnet_weights));
        const int nd =
            load_pretrained(fusion->densenet(), WeightArchive::load(densenet_weights));
        std::cout << "loaded " << nr << " resnet tensors, " << nd << " densenet tensors\n";
        return;
    }
    if (auto* single = dynamic_cast<BackboneClassifier*>(&model)) {
        const bool is_res = single->backbone().config().kind == BackboneKind::resnet50;
        const std::string& path = is_res ? resnet_weights : densenet_weights;
        if (path.empty())
            throw ConfigError(std::string("pretrained model needs --") +
                              (is_res ? "resnet" : "densenet") + "-weights");
        const int n = load_pretrained(single->backbone(), WeightArchive::load(path));
        std::cout << "loaded " << n << " backbone tensors\n";
    }
}

void write_classes(const fs::path& model_dir, const std::vector<std::string>& classes) {
    std::ofstream out(model_dir / "classes.json");
    if (!out) throw DataError("cannot write " + (model_dir / "classes.json").string());
    out << json(classes).dump() << '\n';
}

std::vector<std::string> read_classes(const fs::path& model_dir, int num_classes) {
    const fs::path p = model_dir / "classes.json";
    if (fs::exists(p))
        return read_json_file(p.string()).get<std::vector<std::string>>();
    std::vector<std::string> names;
    for (int c = 0; c < num_classes; ++c) names.push_back("class" + std::to_string(c));
    return names;
}

SampleLoader make_loader(const std::string& denoise_method) {
    SampleLoader::Options opts;
    if (!denoise_method.empty())
        opts.denoise = denoise_method_from_string(denoise_method);
    return SampleLoader(opts);
}

// Loads and preprocesses one image file the same way evaluation does.
Tensor load_single_image(const std::string& path, const SampleLoader& loader, int size) {
    ImageSampleRef ref;
    ref.id = fs::path(path).stem().string();
    ref.path = path;
    Tensor grid = resize_bilinear(loader.load_grid(ref), size, size);
    Tensor img({size, size, 3});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = grid.at(y, x);
    return img;
}

std::string format_pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
    return buf;
}

} // namespace

std::string format_summary_table(const CrossValResult& result, const std::string& title) {
    const std::size_t k = result.folds.size();
    std::ostringstream os;
    os << title << '\n';
    os << std::left;
    os.width(20);
    os << "Metric (%)";
    for (std::size_t i = 0; i < k; ++i) {
        os.width(12);
        os << ("CV#" + std::to_string(i + 1));
    }
    os << "Average\n";
    for (const auto& row : result.summary) {
        os.width(20);
        os << row.metric;
        double lo = row.fold_values[0], hi = row.fold_values[0];
        for (double v : row.fold_values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (double v : row.fold_values) {
            std::string cell = format_pct(v);
            if (k > 1 && hi > lo) {
                if (v == hi) cell += "^max";
                else if (v == lo) cell += "^min";
            }
            os.width(12);
            os << cell;
        }
        os << format_pct(row.mean) << " +- " << format_pct(row.sd) << '\n';
    }
    return os.str();
}

namespace {

int cmd_prepare(const std::string& dataset, const std::string& sources_root,
                const std::string& s1, const std::string& s2, const std::string& s3,
                std::uint64_t seed, const std::string& out) {
    SourceDirs dirs;
    if (!sources_root.empty()) {
        dirs = {fs::path(sources_root) / "source1", fs::path(sources_root) / "source2",
                fs::path(sources_root) / "source3"};
    } else {
        dirs = {s1, s2, s3};
    }
    const DatasetName name = dataset_name_from_string(dataset);
    for (const auto* dir : {&dirs.source1, &dirs.source2, &dirs.source3})
        if (!dir->empty() && !fs::exists(*dir))
            throw DataError("source directory does not exist: " + dir->string());

    DatasetManifest manifest = compose_dataset(name, dirs, seed);
    const fs::path out_path = resolve_output(out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    write_manifest(out_path, manifest);
    std::cout << "wrote " << manifest.samples.size() << " samples to " << out_path.string()
              << '\n';
    for (const auto& [cls, count] : class_counts(manifest))
        std::cout << "  " << cls << ": " << count << '\n';
    return exit_code::ok;
}

int cmd_split(const std::string& manifest_path, int folds, double fraction,
              std::uint64_t seed, bool stratified, const std::string& out_dir) {
    DatasetManifest manifest = read_manifest(manifest_path);
    SplitPlan plan = monte_carlo_split(manifest, folds, fraction, seed, stratified);
    const fs::path dir = resolve_output(out_dir);
    write_split(dir, plan);
    std::cout << "wrote " << folds << " folds to " << dir.string() << '\n';
    return exit_code::ok;
}

int cmd_train(const std::string& manifest_path, const std::string& ids_path,
              const std::string& model_config_path, const std::string& train_config_path,
              std::uint64_t seed, const std::string& denoise, const std::string& out_dir,
              const std::string& resnet_weights, const std::string& densenet_weights) {
    DatasetManifest manifest = read_manifest(manifest_path);
    json model_cfg =
        model_config_path.empty() ? json::object() : read_json_file(model_config_path);
    TrainConfig train_cfg = train_config_path.empty()
                                ? TrainConfig{}
                                : TrainConfig::from_json(read_json_file(train_config_path));
    train_cfg.seed = fan_out(seed, "train");
    train_cfg.validate();

    std::optional<std::vector<std::string>> ids;
    if (!ids_path.empty()) ids = read_id_list(ids_path);

    auto model = build_model(model_cfg, int(manifest.classes.size()), fan_out(seed, "init"));
    apply_pretrained(*model, model_cfg, resnet_weights, densenet_weights);

    SampleLoader loader = make_loader(denoise);
    TrainHistory history = fit(*model, manifest, ids ? &*ids : nullptr, train_cfg, loader);

    const fs::path dir = resolve_output(out_dir);
    save_model(dir, *model);
    write_classes(dir, manifest.classes);
    history.write_csv(dir / "history.csv");
    {
        std::ofstream out(dir / "train_config.json");
        out << train_cfg.to_json().dump(2) << '\n';
    }
    std::cout << "trained " << history.epochs.size() << " epochs; final loss "
              << history.epochs.back().loss << ", accuracy "
              << history.epochs.back().accuracy << '\n'
              << "model saved to " << dir.string() << '\n';
    return exit_code::ok;
}

int cmd_crossval(const std::string& manifest_path, int folds, double fraction,
                 std::uint64_t seed, bool stratified, const std::string& model_config_path,
                 const std::string& train_config_path, const std::string& denoise,
                 bool stub, int jobs, const std::string& out_dir) {
    DatasetManifest manifest = read_manifest(manifest_path);
    json model_cfg =
        model_config_path.empty() ? json::object() : read_json_file(model_config_path);
    if (stub) model_cfg = json{{"kind", "stub"}, {"input_size", model_cfg.value("input_size", 64)}};
    TrainConfig train_cfg = train_config_path.empty()
                                ? TrainConfig{}
                                : TrainConfig::from_json(read_json_file(train_config_path));
    train_cfg.seed = seed;
    train_cfg.validate();

    SplitPlan plan = monte_carlo_split(manifest, folds, fraction, seed, stratified);
    SampleLoader loader = make_loader(denoise);
    const int num_classes = int(manifest.classes.size());
    auto factory = [&](std::uint64_t init_seed) {
        return build_model(model_cfg, num_classes, init_seed);
    };

    CrossValResult result = cross_validate(manifest, plan, factory, train_cfg, loader, jobs);

    const fs::path dir = resolve_output(out_dir);
    write_split(dir, plan);
    for (std::size_t k = 0; k < result.folds.size(); ++k) {
        std::ofstream out(dir / ("fold" + std::to_string(k) + "_report.json"));
        if (!out) throw DataError("cannot write fold report in " + dir.string());
        out << result.folds[k].report.to_json().dump(2) << '\n';
        result.folds[k].history.write_csv(dir /
                                          ("fold" + std::to_string(k) + "_history.csv"));
    }
    {
        json combined{{"classes", result.combined_cm.classes},
                      {"confusion", result.combined_cm.counts}};
        std::ofstream out(dir / "combined_confusion.json");
        out << combined.dump(2) << '\n';
    }
    const std::string title = "Classification performance over " +
                              std::to_string(result.folds.size()) + " cross-validation sets (" +
                              manifest.name + ")";
    const std::string table = format_summary_table(result, title);
    {
        std::ofstream out(dir / "summary.txt", std::ios::binary);
        out << table;
    }
    std::cout << table;
    return exit_code::ok;
}

int cmd_evaluate(const std::string& model_dir, const std::string& manifest_path,
                 const std::string& ids_path, const std::string& denoise,
                 const std::string& out) {
    auto model = load_model(resolve_output(model_dir));
    DatasetManifest manifest = read_manifest(manifest_path);
    std::optional<std::vector<std::string>> ids;
    if (!ids_path.empty()) ids = read_id_list(ids_path);
    SampleLoader loader = make_loader(denoise);
    MetricsReport report = evaluate_model(*model, manifest, ids ? &*ids : nullptr, loader);
    if (!out.empty()) {
        const fs::path out_path = resolve_output(out);
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        std::ofstream f(out_path);
        if (!f) throw DataError("cannot write " + out_path.string());
        f << report.to_json().dump(2) << '\n';
    }
    std::cout << "accuracy " << format_pct(report.accuracy) << "%, F1 "
              << format_pct(report.f1) << "%, AUC-ROC " << format_pct(report.auc_roc)
              << "%\n";
    return exit_code::ok;
}

int cmd_infer(const std::string& model_dir, const std::string& image_path,
              const std::string& denoise) {
    auto model = load_model(resolve_output(model_dir));
    const std::vector<std::string> classes =
        read_classes(resolve_output(model_dir), model->num_classes());
    SampleLoader loader = make_loader(denoise);
    Tensor img = load_single_image(image_path, loader, model->input_size());

    Tensor batch({1, model->input_size(), model->input_size(), 3});
    for (std::size_t i = 0; i < img.size(); ++i) batch[i] = img[i];
    nn::Tape tape(false);
    const Tensor& probs =
        tape.value(model->forward(tape, tape.leaf(std::move(batch)), false));

    std::vector<int> order(std::size_t(model->num_classes()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs.at(0, a) > probs.at(0, b); });
    for (int c : order) {
        char line[128];
        std::snprintf(line, sizeof line, "%s: %.6f", classes[std::size_t(c)].c_str(),
                      probs.at(0, c));
        std::cout << line << '\n';
    }
    return exit_code::ok;
}

int cmd_heatmap(const std::string& model_dir, const std::string& image_path,
                const std::string& denoise, const std::string& out_dir,
                const std::string& check_path, std::string image_id) {
    auto loaded = load_model(resolve_output(model_dir));
    auto* fusion = dynamic_cast<FusionModel*>(loaded.get());
    if (!fusion)
        throw ConfigError("heatmap extraction needs a fusion model checkpoint");
    if (image_id.empty()) image_id = fs::path(image_path).stem().string();

    SampleLoader loader = make_loader(denoise);
    Tensor img = load_single_image(image_path, loader, fusion->input_size());
    HeatmapStack stack = extract_heatmaps(*fusion, img, image_id);

    // Overlay base: the raw [0,1] image without normalization.
    Tensor raw = resize_bilinear(load_image_gray(image_path), fusion->input_size(),
                                 fusion->input_size());

    const fs::path dir = resolve_output(out_dir);
    fs::create_directories(dir);
    for (const auto& [name, map] : stack.maps)
        render_overlay(raw, map, dir / (image_id + "." + name + ".png"));
    std::cout << "wrote " << stack.maps.size() << " overlays to " << dir.string() << '\n';

    if (!check_path.empty()) {
        auto annotations = read_annotations(check_path);
        auto it = annotations.find(image_id);
        if (it == annotations.end())
            throw DataError("no annotations for image id '" + image_id + "' in " +
                            check_path);
        const Tensor& map = stack.at("global_concat");
        for (const auto& circle : it->second) {
            CircleCheckResult r = circle_check(map, circle);
            char line[160];
            std::snprintf(line, sizeof line, "circle (%.1f,%.1f,r=%.1f) %s: %s (mean=%.4f)",
                          circle.cx, circle.cy, circle.radius,
                          circle.label.empty() ? "-" : circle.label.c_str(),
                          r.detected ? "detected" : "not detected", r.mean_inside);
            std::cout << line << '\n';
        }
    }
    return exit_code::ok;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Dual-backbone (ResNet-50 + DenseNet-121) fusion network for chest "
                 "X-ray classification"};
    app.require_subcommand(1);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "Compose a DXR1..DXR4 dataset manifest");
    std::string dataset = "DXR4", sources_root, s1, s2, s3, out = "manifest.csv";
    std::uint64_t seed = 0;
    prepare->add_option("--dataset", dataset, "DXR1..DXR4");
    prepare->add_option("--sources", sources_root, "root containing source1/2/3");
    prepare->add_option("--source1", s1, "pediatric pneumonia cohort dir");
    prepare->add_option("--source2", s2, "COVID-19 cohort dir");
    prepare->add_option("--source3", s3, "tuberculosis cohort dir");
    prepare->add_option("--seed", seed, "global seed");
    prepare->add_option("--out", out, "manifest CSV path");

    // split
    auto* split = app.add_subcommand("split", "Write Monte Carlo train/test folds");
    std::string manifest_path, split_out = "splits";
    int folds = 4;
    double fraction = 0.7;
    bool stratified = false;
    split->add_option("--manifest", manifest_path)->required();
    split->add_option("--folds", folds);
    split->add_option("--train-fraction", fraction);
    split->add_option("--seed", seed);
    split->add_flag("--stratified", stratified);
    split->add_option("--out-dir", split_out);

    // train
    auto* train = app.add_subcommand("train", "Train a model on a manifest");
    std::string ids_path, model_config_path, train_config_path, denoise;
    std::string model_out = "model", resnet_weights, densenet_weights;
    train->add_option("--manifest", manifest_path)->required();
    train->add_option("--ids", ids_path, "train id list (one per line)");
    train->add_option("--model-config", model_config_path, "model config JSON");
    train->add_option("--train-config", train_config_path, "training config JSON");
    train->add_option("--seed", seed);
    train->add_option("--denoise", denoise,
                      "binomial_deconv | landweber | curvature_anisotropic_diffusion");
    train->add_option("--resnet-weights", resnet_weights, "pretrained archive dir");
    train->add_option("--densenet-weights", densenet_weights, "pretrained archive dir");
    train->add_option("--out", model_out, "output model directory");

    // crossval
    auto* crossval = app.add_subcommand("crossval", "Monte Carlo cross-validation");
    std::string cv_out = "crossval", run_config_path;
    bool stub = false;
    int jobs = 1;
    crossval->add_option("--config", run_config_path, "run config JSON (flags override)");
    crossval->add_option("--manifest", manifest_path);
    crossval->add_option("--folds", folds);
    crossval->add_option("--train-fraction", fraction);
    crossval->add_option("--seed", seed);
    crossval->add_flag("--stratified", stratified);
    crossval->add_option("--model-config", model_config_path);
    crossval->add_option("--train-config", train_config_path);
    crossval->add_option("--denoise", denoise);
    crossval->add_flag("--stub", stub, "constant stub classifier (pipeline checks)");
    crossval->add_option("--jobs", jobs, "parallel folds");
    crossval->add_option("--out-dir", cv_out);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a model on a manifest");
    std::string model_dir, report_out;
    evaluate->add_option("--model", model_dir)->required();
    evaluate->add_option("--manifest", manifest_path)->required();
    evaluate->add_option("--ids", ids_path, "id list restricting the evaluation");
    evaluate->add_option("--denoise", denoise);
    evaluate->add_option("--out", report_out, "report.json path");

    // infer
    auto* infer = app.add_subcommand("infer", "Class probabilities for one image");
    std::string image_path;
    infer->add_option("--model", model_dir)->required();
    infer->add_option("--image", image_path)->required();
    infer->add_option("--denoise", denoise);

    // heatmap
    auto* heatmap = app.add_subcommand("heatmap", "Write layer heatmap overlays");
    std::string heat_out = "heatmaps", check_path, image_id;
    heatmap->add_option("--model", model_dir)->required();
    heatmap->add_option("--image", image_path)->required();
    heatmap->add_option("--denoise", denoise);
    heatmap->add_option("--out-dir", heat_out);
    heatmap->add_option("--check", check_path, "annotations.json with circles");
    heatmap->add_option("--image-id", image_id, "id used in annotations and filenames");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_code::ok : exit_code::config_error;
    }

    try {
        if (prepare->parsed())
            return cmd_prepare(dataset, sources_root, s1, s2, s3, seed, out);
        if (split->parsed())
            return cmd_split(manifest_path, folds, fraction, seed, stratified, split_out);
        if (train->parsed())
            return cmd_train(manifest_path, ids_path, model_config_path, train_config_path,
                             seed, denoise, model_out, resnet_weights, densenet_weights);
        if (crossval->parsed()) {
            if (!run_config_path.empty()) {
                RunConfig rc = RunConfig::from_json(read_json_file(run_config_path));
                if (manifest_path.empty()) manifest_path = rc.manifest_path;
                if (crossval->count("--folds") == 0) folds = rc.folds;
                if (crossval->count("--train-fraction") == 0) fraction = rc.train_fraction;
                if (crossval->count("--seed") == 0) seed = rc.seed;
                if (crossval->count("--stratified") == 0) stratified = rc.stratified;
                if (cv_out == "crossval" && !rc.output_dir.empty()) cv_out = rc.output_dir;
            }
            if (manifest_path.empty())
                throw ConfigError("crossval needs --manifest (or a --config with one)");
            return cmd_crossval(manifest_path, folds, fraction, seed, stratified,
                                model_config_path, train_config_path, denoise, stub, jobs,
                                cv_out);
        }
        if (evaluate->parsed())
            return cmd_evaluate(model_dir, manifest_path, ids_path, denoise, report_out);
        if (infer->parsed()) return cmd_infer(model_dir, image_path, denoise);
        if (heatmap->parsed())
            return cmd_heatmap(model_dir, image_path, denoise, heat_out, check_path,
                               image_id);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_code::config_error;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return exit_code::numeric_failure;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_code::data_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code::data_error;
    }
    return exit_code::config_error;
}

} // namespace drc
