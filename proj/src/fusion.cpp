#include "drc/fusion.hpp"

#include <cmath>
#include <fstream>

#include "drc/rng.hpp"

namespace drc {

using nlohmann::json;
using nn::Tape;
using nn::Var;

std::string to_string(FusionMode m) {
    return m == FusionMode::concat_channels ? "concat_channels" : "project_add";
}

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "concat_channels") return FusionMode::concat_channels;
    if (s == "project_add") return FusionMode::project_add;
    throw ConfigError("unknown fusion mode '" + s + "'");
}

void FusionModelConfig::validate() const {
    BackboneConfig probe{BackboneKind::resnet50, input_size, backbone_scale, pretrained};
    probe.validate();
    if (num_classes < 2)
        throw ConfigError("num_classes must be >= 2, got " + std::to_string(num_classes));
    if (conv_block_channels < 1) throw ConfigError("conv_block_channels must be >= 1");
    if (head_hidden < 1) throw ConfigError("head_hidden must be >= 1");
    if (l2_coefficient < 0.0) throw ConfigError("l2_coefficient must be nonnegative");
}

json FusionModelConfig::to_json() const {
    return json{{"kind", "fusion"},
                {"backbone_scale", backbone_scale.str()},
                {"input_size", input_size},
                {"num_classes", num_classes},
                {"fusion_mode", to_string(fusion_mode)},
                {"conv_block_channels", conv_block_channels},
                {"head_hidden", head_hidden},
                {"pretrained", pretrained},
                {"l2_coefficient", l2_coefficient}};
}

FusionModelConfig FusionModelConfig::from_json(const json& j) {
    FusionModelConfig c;
    c.backbone_scale = Rational::parse(j.at("backbone_scale").get<std::string>());
    c.input_size = j.at("input_size").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
    c.conv_block_channels = j.value("conv_block_channels", 512);
    c.head_hidden = j.value("head_hidden", 512);
    c.pretrained = j.value("pretrained", false);
    c.l2_coefficient = j.value("l2_coefficient", 1e-4);
    c.validate();
    return c;
}

ConvBlock::ConvBlock(const std::string& name, int in_channels, int out_channels,
                     int input_spatial, int target_spatial)
    : out_channels_(out_channels) {
    int n = 0;
    int s = input_spatial;
    while (s > target_spatial && s % 2 == 0) {
        s /= 2;
        ++n;
    }
    if (s != target_spatial || n < 1)
        throw ConfigError("conv block '" + name + "': input spatial " +
                          std::to_string(input_spatial) +
                          " is not a power-of-two multiple of " +
                          std::to_string(target_spatial));
    reps_.reserve(std::size_t(n));
    int ch = in_channels;
    for (int i = 0; i < n; ++i) {
        const std::string rep = name + "." + std::to_string(i);
        reps_.push_back(Rep{nn::Conv2d(rep + ".conv", ch, out_channels, 3, 1, 1, false),
                            nn::BatchNorm2d(rep + ".bn", out_channels)});
        ch = out_channels;
    }
}

Var ConvBlock::operator()(Tape& t, Var x, bool training) {
    for (auto& rep : reps_) {
        x = rep.conv(t, x);
        x = rep.bn(t, x, training);
        x = nn::relu(t, x);
        x = nn::avg_pool(t, x, 2, 2);
    }
    return x;
}

void ConvBlock::collect(std::vector<nn::Parameter*>& ps,
                        std::vector<nn::NamedTensor>& ts) {
    for (auto& rep : reps_) {
        ps.push_back(&rep.conv.weight);
        ts.push_back({rep.conv.weight.name, &rep.conv.weight.value, true});
        ps.push_back(&rep.bn.gamma);
        ps.push_back(&rep.bn.beta);
        ts.push_back({rep.bn.gamma.name, &rep.bn.gamma.value, true});
        ts.push_back({rep.bn.beta.name, &rep.bn.beta.value, true});
        ts.push_back({rep.bn.name + ".running_mean", &rep.bn.running_mean, false});
        ts.push_back({rep.bn.name + ".running_var", &rep.bn.running_var, false});
    }
}

Var fuse_stage(Tape& t, Var res_tap, Var des_tap, FusionMode mode,
               nn::Conv2d* projection) {
    const Tensor& r = t.value(res_tap);
    const Tensor& d = t.value(des_tap);
    if (r.dim(1) != d.dim(1) || r.dim(2) != d.dim(2))
        throw ShapeError("fuse_stage: spatial mismatch " + r.shape_str() + " vs " +
                         d.shape_str());
    if (mode == FusionMode::concat_channels)
        return nn::concat_channels(t, {res_tap, des_tap});
    if (!projection)
        throw ConfigError("fuse_stage: project_add mode needs a projection");
    return nn::add(t, (*projection)(t, des_tap), res_tap);
}

FusionModel::FusionModel(const FusionModelConfig& config, std::uint64_t init_seed)
    : config_(config) {
    config_.validate();
    const BackboneConfig res_cfg{BackboneKind::resnet50, config_.input_size,
                                 config_.backbone_scale, config_.pretrained};
    const BackboneConfig des_cfg{BackboneKind::densenet121, config_.input_size,
                                 config_.backbone_scale, config_.pretrained};
    resnet_ = build_backbone(res_cfg, init_seed, "resnet.");
    densenet_ = build_backbone(des_cfg, init_seed, "densenet.");

    block_channels_ = config_.backbone_scale.apply(config_.conv_block_channels,
                                                   "conv block");
    head_hidden_ = config_.backbone_scale.apply(config_.head_hidden, "head");

    if (config_.fusion_mode == FusionMode::project_add) {
        projections_.reserve(4);
        for (int k = 1; k <= 4; ++k)
            projections_.push_back(std::make_unique<nn::Conv2d>(
                "proj" + std::to_string(k), densenet_->tap_channels(k),
                resnet_->tap_channels(k), 1, 1, 0, false));
    }

    const int target = config_.input_size / 32;
    block_a_ = std::make_unique<ConvBlock>("blockA", fused_channels(1), block_channels_,
                                           config_.input_size / 4, target);
    block_b_ = std::make_unique<ConvBlock>("blockB", fused_channels(2), block_channels_,
                                           config_.input_size / 8, target);
    block_c_ = std::make_unique<ConvBlock>("blockC", fused_channels(3), block_channels_,
                                           config_.input_size / 16, target);

    fc1_ = std::make_unique<nn::Linear>("head.fc1", global_concat_channels(), head_hidden_);
    fc2_ = std::make_unique<nn::Linear>("head.fc2", head_hidden_, config_.num_classes);

    Rng rng(fan_out(init_seed, "init.fusion"));
    std::vector<nn::Parameter*> own;
    std::vector<nn::NamedTensor> ts;
    for (auto& p : projections_) own.push_back(&p->weight);
    block_a_->collect(own, ts);
    block_b_->collect(own, ts);
    block_c_->collect(own, ts);
    own.push_back(&fc1_->weight);
    own.push_back(&fc2_->weight);
    nn::init_kernels(own, rng);
}

int FusionModel::fused_channels(int stage) const {
    const int res = resnet_->tap_channels(stage);
    const int des = densenet_->tap_channels(stage);
    return config_.fusion_mode == FusionMode::concat_channels ? res + des : res;
}

int FusionModel::global_concat_channels() const {
    return 3 * block_channels_ + fused_channels(4);
}

nn::Conv2d* FusionModel::projection(int stage) {
    if (projections_.empty()) return nullptr;
    return projections_[std::size_t(stage - 1)].get();
}

Var FusionModel::forward(Tape& t, Var images, bool training) {
    return forward_traced(t, images, training, nullptr);
}

Var FusionModel::forward_traced(Tape& t, Var images, bool training, ForwardTrace* trace) {
    check_image_batch(t.value(images), config_.input_size);

    StageTaps res = resnet_->forward(t, images, training);
    StageTaps des = densenet_->forward(t, images, training);

    Var fused[4];
    for (int k = 0; k < 4; ++k)
        fused[k] = fuse_stage(t, res.tap[k], des.tap[k], config_.fusion_mode,
                              projection(k + 1));

    Var a_out = (*block_a_)(t, fused[0], training);
    Var b_out = (*block_b_)(t, fused[1], training);
    Var c_out = (*block_c_)(t, fused[2], training);

    Var a_concat = nn::concat_channels(t, {a_out, b_out});
    Var b_concat = nn::concat_channels(t, {c_out, fused[3]});
    Var global_concat = nn::concat_channels(t, {a_concat, b_concat});

    if (trace) {
        const char* tap_names[4] = {"new56", "new28", "new14", "new7"};
        for (int k = 0; k < 4; ++k)
            trace->maps.emplace_back(tap_names[k], t.value(fused[k]));
        trace->maps.emplace_back("convA", t.value(a_out));
        trace->maps.emplace_back("convB", t.value(b_out));
        trace->maps.emplace_back("convC", t.value(c_out));
        trace->maps.emplace_back("a_concat", t.value(a_concat));
        trace->maps.emplace_back("b_concat", t.value(b_concat));
        trace->maps.emplace_back("global_concat", t.value(global_concat));
    }

    Var pooled = nn::global_avg_pool(t, global_concat);
    Var hidden = nn::relu(t, (*fc1_)(t, pooled));
    return nn::softmax(t, (*fc2_)(t, hidden));
}

std::vector<nn::Parameter*> FusionModel::parameters() {
    std::vector<nn::Parameter*> ps = resnet_->parameters();
    for (auto* p : densenet_->parameters()) ps.push_back(p);
    std::vector<nn::NamedTensor> ts;
    for (auto& proj : projections_) ps.push_back(&proj->weight);
    block_a_->collect(ps, ts);
    block_b_->collect(ps, ts);
    block_c_->collect(ps, ts);
    for (nn::Linear* fc : {fc1_.get(), fc2_.get()}) {
        ps.push_back(&fc->weight);
        if (fc->bias) ps.push_back(&*fc->bias);
    }
    return ps;
}

std::vector<nn::NamedTensor> FusionModel::named_tensors() {
    std::vector<nn::NamedTensor> ts = resnet_->named_tensors();
    for (auto& nt : densenet_->named_tensors()) ts.push_back(nt);
    std::vector<nn::Parameter*> ps;
    for (auto& proj : projections_)
        ts.push_back({proj->weight.name, &proj->weight.value, true});
    block_a_->collect(ps, ts);
    block_b_->collect(ps, ts);
    block_c_->collect(ps, ts);
    for (nn::Linear* fc : {fc1_.get(), fc2_.get()}) {
        ts.push_back({fc->weight.name, &fc->weight.value, true});
        if (fc->bias) ts.push_back({fc->bias->name, &fc->bias->value, true});
    }
    return ts;
}

json FusionModel::config_json() const { return config_.to_json(); }

StubClassifier::StubClassifier(int num_classes, int input_size, int constant_class)
    : num_classes_(num_classes), input_size_(input_size), constant_class_(constant_class) {
    if (num_classes < 2) throw ConfigError("stub classifier needs >= 2 classes");
    if (constant_class < 0 || constant_class >= num_classes)
        throw ConfigError("stub constant class out of range");
}

Var StubClassifier::forward(Tape& t, Var images, bool /*training*/) {
    check_image_batch(t.value(images), input_size_);
    const int n = t.value(images).dim(0);
    Tensor probs({n, num_classes_});
    for (int i = 0; i < n; ++i) probs.at(i, constant_class_) = 1.0;
    return t.leaf(std::move(probs));
}

json StubClassifier::config_json() const {
    return json{{"kind", "stub"},
                {"num_classes", num_classes_},
                {"input_size", input_size_},
                {"constant_class", constant_class_}};
}

void save_model(const std::filesystem::path& dir, Classifier& model) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream cfg(dir / "config.json");
        if (!cfg) throw DataError("cannot write " + (dir / "config.json").string());
        cfg << model.config_json().dump(2) << '\n';
    }
    WeightArchive::from_named_tensors(model.named_tensors(), "checkpoint").save(dir);
}

std::unique_ptr<Classifier> load_model(const std::filesystem::path& dir) {
    std::ifstream cfg_file(dir / "config.json");
    if (!cfg_file) throw DataError("cannot open " + (dir / "config.json").string());
    json cfg;
    try {
        cfg_file >> cfg;
    } catch (const json::exception& e) {
        throw DataError("malformed config.json in " + dir.string() + ": " + e.what());
    }

    const std::string kind = cfg.at("kind").get<std::string>();
    std::unique_ptr<Classifier> model;
    if (kind == "fusion") {
        model = std::make_unique<FusionModel>(FusionModelConfig::from_json(cfg));
    } else if (kind == "resnet50" || kind == "densenet121") {
        BackboneConfig bc;
        bc.kind = backbone_kind_from_string(kind);
        bc.input_size = cfg.at("input_size").get<int>();
        bc.channel_scale = Rational::parse(cfg.at("channel_scale").get<std::string>());
        bc.pretrained = cfg.value("pretrained", false);
        model = std::make_unique<BackboneClassifier>(bc, cfg.at("num_classes").get<int>(), 0);
    } else if (kind == "stub") {
        return std::make_unique<StubClassifier>(cfg.at("num_classes").get<int>(),
                                                cfg.at("input_size").get<int>(),
                                                cfg.value("constant_class", 0));
    } else {
        throw ConfigError("unknown model kind '" + kind + "' in " + dir.string());
    }

    load_named_tensors_exact(model->named_tensors(), WeightArchive::load(dir),
                             "model checkpoint");
    return model;
}

} // namespace drc
