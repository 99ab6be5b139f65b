#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drc/classifier.hpp"
#include "drc/nn/layers.hpp"

namespace drc {

enum class BackboneKind { resnet50, densenet121 };

std::string to_string(BackboneKind k);
BackboneKind backbone_kind_from_string(const std::string& s);

// Exact channel scale. 1/1 is the full network; smaller values shrink every
// stage width proportionally (tiny mode for desk-scale tests).
struct Rational {
    int num = 1;
    int den = 1;

    int apply(int width, const char* what) const;
    double as_double() const { return double(num) / double(den); }
    bool is_one() const { return num == den; }
    std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
    static Rational parse(const std::string& s);
};

struct BackboneConfig {
    BackboneKind kind = BackboneKind::resnet50;
    int input_size = 224;
    Rational channel_scale{1, 1};
    bool pretrained = false;

    void validate() const;
};

// The four stage outputs, a 56/28/14/7 pyramid at full scale.
struct StageTaps {
    nn::Var tap[4];
};

class Backbone {
public:
    virtual ~Backbone() = default;

    virtual StageTaps forward(nn::Tape& tape, nn::Var input, bool training) = 0;
    virtual std::vector<nn::Parameter*> parameters() = 0;
    virtual std::vector<nn::NamedTensor> named_tensors() = 0;

    const BackboneConfig& config() const { return config_; }
    int tap_channels(int k) const { return tap_channels_[k - 1]; } // k = 1..4
    int tap_spatial(int k) const { return config_.input_size >> (k + 1); }
    const std::string& name_prefix() const { return prefix_; }

protected:
    Backbone(BackboneConfig config, std::string prefix)
        : config_(config), prefix_(std::move(prefix)) {}
    void check_input(const Tensor& in) const;

    BackboneConfig config_;
    std::string prefix_;
    int tap_channels_[4] = {0, 0, 0, 0};
};

// Builds a freshly initialized backbone; `name_prefix` namespaces its tensors
// (the fusion model labels its two as "resnet." and "densenet.").
std::unique_ptr<Backbone> build_backbone(const BackboneConfig& config,
                                         std::uint64_t init_seed = 0,
                                         const std::string& name_prefix = "");

// ResNet bottleneck: 1x1 -> 3x3 (carries the stage stride) -> 1x1 with batch
// norm after each conv; the skip (identity, or a projected shortcut when
// shape changes) is added before the closing ReLU. With the transform zeroed
// and an identity skip the unit passes nonnegative input through unchanged.
struct ResidualUnit {
    nn::Conv2d conv1, conv2, conv3;
    nn::BatchNorm2d bn1, bn2, bn3;
    std::optional<nn::Conv2d> down_conv;
    std::optional<nn::BatchNorm2d> down_bn;

    ResidualUnit(const std::string& name, int in_ch, int mid, int out, int stride);
    nn::Var operator()(nn::Tape& t, nn::Var x, bool training);
    void collect(std::vector<nn::Parameter*>& ps, std::vector<nn::NamedTensor>& ts);
};

// Backbone + global average pooling + softmax classification head; the
// standalone baseline usable in the same training pipeline as the fusion
// model.
class BackboneClassifier : public Classifier {
public:
    BackboneClassifier(const BackboneConfig& config, int num_classes,
                       std::uint64_t init_seed);

    nn::Var forward(nn::Tape& tape, nn::Var images, bool training) override;
    int num_classes() const override { return num_classes_; }
    int input_size() const override { return backbone_->config().input_size; }
    std::vector<nn::Parameter*> parameters() override;
    std::vector<nn::NamedTensor> named_tensors() override;
    nlohmann::json config_json() const override;

    Backbone& backbone() { return *backbone_; }

private:
    std::unique_ptr<Backbone> backbone_;
    int num_classes_;
    std::unique_ptr<nn::Linear> fc_;
};

std::unique_ptr<BackboneClassifier> backbone_classifier(const BackboneConfig& config,
                                                        int num_classes,
                                                        std::uint64_t init_seed = 0);

} // namespace drc
