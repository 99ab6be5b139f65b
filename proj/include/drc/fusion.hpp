#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "drc/backbones.hpp"
#include "drc/classifier.hpp"
#include "drc/weights.hpp"

namespace drc {

// How the two backbones' stage outputs are combined. concat_channels stacks
// them along the channel axis; project_add pushes the DenseNet tap through a
// 1x1 projection onto the ResNet channel count and adds.
enum class FusionMode { concat_channels, project_add };

std::string to_string(FusionMode m);
FusionMode fusion_mode_from_string(const std::string& s);

struct FusionModelConfig {
    Rational backbone_scale{1, 1};
    int input_size = 224;
    int num_classes = 4;
    FusionMode fusion_mode = FusionMode::concat_channels;
    int conv_block_channels = 512; // full-scale width, scaled like the backbones
    int head_hidden = 512;         // ditto
    bool pretrained = false;
    double l2_coefficient = 1e-4;

    void validate() const;
    nlohmann::json to_json() const;
    static FusionModelConfig from_json(const nlohmann::json& j);
};

// Reduction stack bringing one fused tap down to the 7x7 (scaled) grid:
// log2(input/target) repetitions of [3x3 conv, stride 1, size-preserving ->
// batch norm -> ReLU -> 2x2 average pool, stride 2]. Every repetition emits
// out_channels channels.
class ConvBlock {
public:
    ConvBlock(const std::string& name, int in_channels, int out_channels,
              int input_spatial, int target_spatial);

    nn::Var operator()(nn::Tape& t, nn::Var x, bool training);
    int repetitions() const { return int(reps_.size()); }
    int out_channels() const { return out_channels_; }
    void collect(std::vector<nn::Parameter*>& ps, std::vector<nn::NamedTensor>& ts);

private:
    struct Rep {
        nn::Conv2d conv;
        nn::BatchNorm2d bn;
    };
    std::vector<Rep> reps_;
    int out_channels_;
};

// Combines one pair of same-resolution taps. `projection` is required (and
// only used) in project_add mode.
nn::Var fuse_stage(nn::Tape& t, nn::Var res_tap, nn::Var des_tap, FusionMode mode,
                   nn::Conv2d* projection = nullptr);

// The dual-backbone fusion network: ResNet-50 and DenseNet-121 taps fused at
// all four stages, three reduction blocks, the two-level concat hierarchy,
// and a pooled FC head.
class FusionModel : public Classifier {
public:
    FusionModel(const FusionModelConfig& config, std::uint64_t init_seed = 0);

    nn::Var forward(nn::Tape& t, nn::Var images, bool training) override;
    nn::Var forward_traced(nn::Tape& t, nn::Var images, bool training,
                           ForwardTrace* trace) override;

    int num_classes() const override { return config_.num_classes; }
    int input_size() const override { return config_.input_size; }
    std::vector<nn::Parameter*> parameters() override;
    std::vector<nn::NamedTensor> named_tensors() override;
    nlohmann::json config_json() const override;

    const FusionModelConfig& config() const { return config_; }
    Backbone& resnet() { return *resnet_; }
    Backbone& densenet() { return *densenet_; }
    nn::Conv2d* projection(int stage); // 1-based; null in concat mode

    // Channel count entering the head: 2*block + block + channels(F4).
    int global_concat_channels() const;
    int fused_channels(int stage) const; // 1-based
    int block_channels() const { return block_channels_; }

private:
    FusionModelConfig config_;
    std::unique_ptr<Backbone> resnet_;
    std::unique_ptr<Backbone> densenet_;
    std::vector<std::unique_ptr<nn::Conv2d>> projections_;
    std::unique_ptr<ConvBlock> block_a_, block_b_, block_c_;
    std::unique_ptr<nn::Linear> fc1_, fc2_;
    int block_channels_ = 0;
    int head_hidden_ = 0;
};

// Fixed-output classifier for pipeline and reporting tests: always predicts
// `constant_class` with probability one.
class StubClassifier : public Classifier {
public:
    StubClassifier(int num_classes, int input_size, int constant_class = 0);

    nn::Var forward(nn::Tape& t, nn::Var images, bool training) override;
    int num_classes() const override { return num_classes_; }
    int input_size() const override { return input_size_; }
    std::vector<nn::Parameter*> parameters() override { return {}; }
    std::vector<nn::NamedTensor> named_tensors() override { return {}; }
    nlohmann::json config_json() const override;

private:
    int num_classes_, input_size_, constant_class_;
};

// Checkpoint = weight archive + sidecar config.json. A save -> load round
// trip reproduces forward outputs bit-exactly (parameters live on the
// float32 grid).
void save_model(const std::filesystem::path& dir, Classifier& model);
std::unique_ptr<Classifier> load_model(const std::filesystem::path& dir);

} // namespace drc
