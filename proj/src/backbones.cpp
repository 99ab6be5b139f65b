#include "drc/backbones.hpp"

#include <utility>

#include "drc/rng.hpp"

namespace drc {

using nn::BatchNorm2d;
using nn::Conv2d;
using nn::Tape;
using nn::Var;

std::string to_string(BackboneKind k) {
    return k == BackboneKind::resnet50 ? "resnet50" : "densenet121";
}

BackboneKind backbone_kind_from_string(const std::string& s) {
    if (s == "resnet50") return BackboneKind::resnet50;
    if (s == "densenet121") return BackboneKind::densenet121;
    throw ConfigError("unknown backbone kind '" + s + "'");
}

int Rational::apply(int width, const char* what) const {
    if (den <= 0 || num <= 0)
        throw ConfigError("channel scale must be a positive rational");
    const long long scaled = (long long)width * num;
    if (scaled % den != 0)
        throw ConfigError("channel scale " + str() + " does not divide " +
                          std::string(what) + " width " + std::to_string(width));
    const long long v = scaled / den;
    if (v < 1)
        throw ConfigError("channel scale " + str() + " collapses " + std::string(what) +
                          " width " + std::to_string(width) + " to zero");
    return int(v);
}

Rational Rational::parse(const std::string& s) {
    const auto slash = s.find('/');
    if (slash == std::string::npos) return Rational{std::stoi(s), 1};
    return Rational{std::stoi(s.substr(0, slash)), std::stoi(s.substr(slash + 1))};
}

void BackboneConfig::validate() const {
    if (input_size < 32 || input_size % 32 != 0)
        throw ConfigError("input_size must be a positive multiple of 32 (five "
                          "downsampling stages), got " +
                          std::to_string(input_size));
    if (channel_scale.num <= 0 || channel_scale.den <= 0 ||
        channel_scale.num > channel_scale.den)
        throw ConfigError("channel_scale must lie in (0,1], got " + channel_scale.str());
    if (pretrained && !channel_scale.is_one())
        throw ConfigError("pretrained weights require channel_scale = 1");
}

void Backbone::check_input(const Tensor& in) const {
    if (in.rank() != 4 || in.dim(3) != 3 || in.dim(1) != config_.input_size ||
        in.dim(2) != config_.input_size)
        throw ShapeError("backbone input must be (n," + std::to_string(config_.input_size) +
                         "," + std::to_string(config_.input_size) + ",3), got " +
                         in.shape_str());
}

namespace {

void collect_conv(Conv2d& c, std::vector<nn::Parameter*>& ps,
                  std::vector<nn::NamedTensor>& ts);
void collect_norm(BatchNorm2d& b, std::vector<nn::Parameter*>& ps,
                  std::vector<nn::NamedTensor>& ts);

} // namespace

ResidualUnit::ResidualUnit(const std::string& name, int in_ch, int mid, int out,
                           int stride)
    : conv1(name + ".conv1", in_ch, mid, 1, 1, 0, false),
      conv2(name + ".conv2", mid, mid, 3, stride, 1, false),
      conv3(name + ".conv3", mid, out, 1, 1, 0, false),
      bn1(name + ".bn1", mid), bn2(name + ".bn2", mid), bn3(name + ".bn3", out) {
    if (stride != 1 || in_ch != out) {
        down_conv.emplace(name + ".downsample.0", in_ch, out, 1, stride, 0, false);
        down_bn.emplace(name + ".downsample.1", out);
    }
}

Var ResidualUnit::operator()(Tape& t, Var x, bool training) {
    Var y = nn::relu(t, bn1(t, conv1(t, x), training));
    y = nn::relu(t, bn2(t, conv2(t, y), training));
    y = bn3(t, conv3(t, y), training);
    Var skip = x;
    if (down_conv) skip = (*down_bn)(t, (*down_conv)(t, x), training);
    return nn::relu(t, nn::add(t, y, skip));
}

void ResidualUnit::collect(std::vector<nn::Parameter*>& ps,
                           std::vector<nn::NamedTensor>& ts) {
    collect_conv(conv1, ps, ts);
    collect_norm(bn1, ps, ts);
    collect_conv(conv2, ps, ts);
    collect_norm(bn2, ps, ts);
    collect_conv(conv3, ps, ts);
    collect_norm(bn3, ps, ts);
    if (down_conv) {
        collect_conv(*down_conv, ps, ts);
        collect_norm(*down_bn, ps, ts);
    }
}

namespace {

void collect_conv(Conv2d& c, std::vector<nn::Parameter*>& ps,
                  std::vector<nn::NamedTensor>& ts) {
    ps.push_back(&c.weight);
    ts.push_back({c.weight.name, &c.weight.value, true});
    if (c.bias) {
        ps.push_back(&*c.bias);
        ts.push_back({c.bias->name, &c.bias->value, true});
    }
}

void collect_norm(BatchNorm2d& b, std::vector<nn::Parameter*>& ps,
                  std::vector<nn::NamedTensor>& ts) {
    ps.push_back(&b.gamma);
    ps.push_back(&b.beta);
    ts.push_back({b.gamma.name, &b.gamma.value, true});
    ts.push_back({b.beta.name, &b.beta.value, true});
    ts.push_back({b.name + ".running_mean", &b.running_mean, false});
    ts.push_back({b.name + ".running_var", &b.running_var, false});
}

// ---------------------------------------------------------------------------
// ResNet-50

class ResNet50Backbone final : public Backbone {
public:
    ResNet50Backbone(const BackboneConfig& config, const std::string& prefix)
        : Backbone(config, prefix),
          stem_conv_(prefix + "conv1", 3, config.channel_scale.apply(64, "stem"), 7, 2, 3,
                     false),
          stem_bn_(prefix + "bn1", config.channel_scale.apply(64, "stem")) {
        static constexpr int kMid[4] = {64, 128, 256, 512};
        static constexpr int kOut[4] = {256, 512, 1024, 2048};
        static constexpr int kUnits[4] = {3, 4, 6, 3};
        const Rational s = config.channel_scale;
        int in_ch = s.apply(64, "stem");
        for (int stage = 0; stage < 4; ++stage) {
            const int mid = s.apply(kMid[stage], "bottleneck");
            const int out = s.apply(kOut[stage], "stage output");
            tap_channels_[stage] = out;
            stages_[stage].reserve(std::size_t(kUnits[stage]));
            for (int unit = 0; unit < kUnits[stage]; ++unit) {
                const int stride = (unit == 0 && stage > 0) ? 2 : 1;
                stages_[stage].emplace_back(prefix + "layer" + std::to_string(stage + 1) +
                                                "." + std::to_string(unit),
                                            in_ch, mid, out, stride);
                in_ch = out;
            }
        }
    }

    StageTaps forward(Tape& t, Var input, bool training) override {
        check_input(t.value(input));
        Var x = nn::relu(t, stem_bn_(t, stem_conv_(t, input), training));
        x = nn::max_pool(t, x, 3, 2, 1);
        StageTaps taps;
        for (int stage = 0; stage < 4; ++stage) {
            for (auto& unit : stages_[stage]) x = unit(t, x, training);
            taps.tap[stage] = x;
        }
        return taps;
    }

    std::vector<nn::Parameter*> parameters() override {
        std::vector<nn::Parameter*> ps;
        std::vector<nn::NamedTensor> ts;
        collect(ps, ts);
        return ps;
    }

    std::vector<nn::NamedTensor> named_tensors() override {
        std::vector<nn::Parameter*> ps;
        std::vector<nn::NamedTensor> ts;
        collect(ps, ts);
        return ts;
    }

private:
    void collect(std::vector<nn::Parameter*>& ps, std::vector<nn::NamedTensor>& ts) {
        collect_conv(stem_conv_, ps, ts);
        collect_norm(stem_bn_, ps, ts);
        for (auto& stage : stages_)
            for (auto& unit : stage) unit.collect(ps, ts);
    }

    Conv2d stem_conv_;
    BatchNorm2d stem_bn_;
    std::vector<ResidualUnit> stages_[4];
};

// ---------------------------------------------------------------------------
// DenseNet-121

// BN -> ReLU -> 1x1 bottleneck -> BN -> ReLU -> 3x3; emits `growth` channels
// that the block concatenates onto its running feature stack.
struct DenseLayer {
    BatchNorm2d norm1;
    Conv2d conv1;
    BatchNorm2d norm2;
    Conv2d conv2;

    DenseLayer(const std::string& name, int in_ch, int growth)
        : norm1(name + ".norm1", in_ch),
          conv1(name + ".conv1", in_ch, 4 * growth, 1, 1, 0, false),
          norm2(name + ".norm2", 4 * growth),
          conv2(name + ".conv2", 4 * growth, growth, 3, 1, 1, false) {}

    Var operator()(Tape& t, Var x, bool training) {
        Var y = conv1(t, nn::relu(t, norm1(t, x, training)));
        return conv2(t, nn::relu(t, norm2(t, y, training)));
    }

    void collect(std::vector<nn::Parameter*>& ps, std::vector<nn::NamedTensor>& ts) {
        collect_norm(norm1, ps, ts);
        collect_conv(conv1, ps, ts);
        collect_norm(norm2, ps, ts);
        collect_conv(conv2, ps, ts);
    }
};

// BN -> ReLU -> 1x1 halving conv -> 2x2 average pool.
struct DenseTransition {
    BatchNorm2d norm;
    Conv2d conv;

    DenseTransition(const std::string& name, int in_ch, int out_ch)
        : norm(name + ".norm", in_ch), conv(name + ".conv", in_ch, out_ch, 1, 1, 0, false) {}

    Var operator()(Tape& t, Var x, bool training) {
        return nn::avg_pool(t, conv(t, nn::relu(t, norm(t, x, training))), 2, 2);
    }

    void collect(std::vector<nn::Parameter*>& ps, std::vector<nn::NamedTensor>& ts) {
        collect_norm(norm, ps, ts);
        collect_conv(conv, ps, ts);
    }
};

class DenseNet121Backbone final : public Backbone {
public:
    DenseNet121Backbone(const BackboneConfig& config, const std::string& prefix)
        : Backbone(config, prefix),
          stem_conv_(prefix + "conv0", 3, config.channel_scale.apply(64, "stem"), 7, 2, 3,
                     false),
          stem_bn_(prefix + "norm0", config.channel_scale.apply(64, "stem")) {
        static constexpr int kLayers[4] = {6, 12, 24, 16};
        const Rational s = config.channel_scale;
        const int growth = s.apply(32, "growth rate");
        int ch = s.apply(64, "stem");
        for (int b = 0; b < 4; ++b) {
            blocks_[b].reserve(std::size_t(kLayers[b]));
            for (int l = 0; l < kLayers[b]; ++l) {
                blocks_[b].emplace_back(prefix + "denseblock" + std::to_string(b + 1) +
                                            ".denselayer" + std::to_string(l + 1),
                                        ch, growth);
                ch += growth;
            }
            tap_channels_[b] = ch;
            if (b < 3) {
                // Compression 0.5; exact because every block output is a
                // multiple of the growth rate.
                const int out = ch / 2;
                transitions_.emplace_back(prefix + "transition" + std::to_string(b + 1),
                                          ch, out);
                ch = out;
            }
        }
        final_norm_.emplace(prefix + "norm5", ch);
    }

    StageTaps forward(Tape& t, Var input, bool training) override {
        check_input(t.value(input));
        Var x = nn::relu(t, stem_bn_(t, stem_conv_(t, input), training));
        x = nn::max_pool(t, x, 3, 2, 1);
        StageTaps taps;
        for (int b = 0; b < 4; ++b) {
            for (auto& layer : blocks_[b]) {
                Var y = layer(t, x, training);
                x = nn::concat_channels(t, {x, y});
            }
            if (b < 3) {
                taps.tap[b] = x;
                x = transitions_[std::size_t(b)](t, x, training);
            } else {
                // The final block passes the closing norm before it is exposed
                // as tap 4.
                x = nn::relu(t, (*final_norm_)(t, x, training));
                taps.tap[b] = x;
            }
        }
        return taps;
    }

    std::vector<nn::Parameter*> parameters() override {
        std::vector<nn::Parameter*> ps;
        std::vector<nn::NamedTensor> ts;
        collect(ps, ts);
        return ps;
    }

    std::vector<nn::NamedTensor> named_tensors() override {
        std::vector<nn::Parameter*> ps;
        std::vector<nn::NamedTensor> ts;
        collect(ps, ts);
        return ts;
    }

private:
    void collect(std::vector<nn::Parameter*>& ps, std::vector<nn::NamedTensor>& ts) {
        collect_conv(stem_conv_, ps, ts);
        collect_norm(stem_bn_, ps, ts);
        for (int b = 0; b < 4; ++b) {
            for (auto& layer : blocks_[b]) layer.collect(ps, ts);
            if (b < 3) transitions_[std::size_t(b)].collect(ps, ts);
        }
        collect_norm(*final_norm_, ps, ts);
    }

    Conv2d stem_conv_;
    BatchNorm2d stem_bn_;
    std::vector<DenseLayer> blocks_[4];
    std::vector<DenseTransition> transitions_;
    std::optional<BatchNorm2d> final_norm_;
};

} // namespace

std::unique_ptr<Backbone> build_backbone(const BackboneConfig& config,
                                         std::uint64_t init_seed,
                                         const std::string& name_prefix) {
    config.validate();
    std::unique_ptr<Backbone> net;
    if (config.kind == BackboneKind::resnet50)
        net = std::make_unique<ResNet50Backbone>(config, name_prefix);
    else
        net = std::make_unique<DenseNet121Backbone>(config, name_prefix);
    Rng rng(fan_out(init_seed, "init." + name_prefix + to_string(config.kind)));
    nn::init_kernels(net->parameters(), rng);
    return net;
}

BackboneClassifier::BackboneClassifier(const BackboneConfig& config, int num_classes,
                                       std::uint64_t init_seed)
    : num_classes_(num_classes) {
    if (num_classes < 2)
        throw ConfigError("classifier needs at least 2 classes, got " +
                          std::to_string(num_classes));
    backbone_ = build_backbone(config, init_seed);
    fc_ = std::make_unique<nn::Linear>("fc", backbone_->tap_channels(4), num_classes);
    Rng rng(fan_out(init_seed, "init.head"));
    nn::init_kernels({&fc_->weight}, rng);
}

nn::Var BackboneClassifier::forward(Tape& t, Var images, bool training) {
    check_image_batch(t.value(images), input_size());
    StageTaps taps = backbone_->forward(t, images, training);
    Var pooled = nn::global_avg_pool(t, taps.tap[3]);
    return nn::softmax(t, (*fc_)(t, pooled));
}

std::vector<nn::Parameter*> BackboneClassifier::parameters() {
    auto ps = backbone_->parameters();
    ps.push_back(&fc_->weight);
    if (fc_->bias) ps.push_back(&*fc_->bias);
    return ps;
}

std::vector<nn::NamedTensor> BackboneClassifier::named_tensors() {
    auto ts = backbone_->named_tensors();
    ts.push_back({fc_->weight.name, &fc_->weight.value, true});
    if (fc_->bias) ts.push_back({fc_->bias->name, &fc_->bias->value, true});
    return ts;
}

nlohmann::json BackboneClassifier::config_json() const {
    const BackboneConfig& c = backbone_->config();
    return nlohmann::json{{"kind", to_string(c.kind)},
                          {"input_size", c.input_size},
                          {"channel_scale", c.channel_scale.str()},
                          {"pretrained", c.pretrained},
                          {"num_classes", num_classes_}};
}

std::unique_ptr<BackboneClassifier> backbone_classifier(const BackboneConfig& config,
                                                        int num_classes,
                                                        std::uint64_t init_seed) {
    return std::make_unique<BackboneClassifier>(config, num_classes, init_seed);
}

void check_image_batch(const Tensor& batch, int input_size) {
    if (batch.rank() != 4 || batch.dim(3) != 3 || batch.dim(1) != input_size ||
        batch.dim(2) != input_size)
        throw ShapeError("expected image batch (n," + std::to_string(input_size) + "," +
                         std::to_string(input_size) + ",3), got " + batch.shape_str());
    if (!batch.all_finite()) throw DataError("image batch contains non-finite values");
}

} // namespace drc
