#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drc/nn/graph.hpp"
#include "drc/nn/layers.hpp"

namespace drc {

// Named activation snapshots taken during a forward pass, keyed by the layer
// names the heatmap pipeline understands.
struct ForwardTrace {
    std::vector<std::pair<std::string, Tensor>> maps;
};

// Anything the training / evaluation / inference pipeline can drive: the
// fusion network, the single-backbone baselines, and the constant stub used
// in reporting tests.
class Classifier {
public:
    virtual ~Classifier() = default;

    // images: (n, input_size, input_size, 3) -> class probabilities (n, k).
    virtual nn::Var forward(nn::Tape& tape, nn::Var images, bool training) = 0;

    // Same as forward; models with named intermediate layers fill `trace`.
    virtual nn::Var forward_traced(nn::Tape& tape, nn::Var images, bool training,
                                   ForwardTrace* /*trace*/) {
        return forward(tape, images, training);
    }

    virtual int num_classes() const = 0;
    virtual int input_size() const = 0;
    virtual std::vector<nn::Parameter*> parameters() = 0;
    virtual std::vector<nn::NamedTensor> named_tensors() = 0;
    virtual nlohmann::json config_json() const = 0;

    // Sum of squared kernel entries (conv + FC weights, no biases or norm
    // parameters); the L2 penalty term of the loss.
    double l2_sum() {
        double s = 0.0;
        for (nn::Parameter* p : parameters())
            if (p->is_kernel)
                for (std::size_t i = 0; i < p->value.size(); ++i)
                    s += p->value[i] * p->value[i];
        return s;
    }
};

// Shared entry check for classifier forwards.
void check_image_batch(const Tensor& batch, int input_size);

} // namespace drc
