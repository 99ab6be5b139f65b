#pragma once

#include <optional>
#include <string>
#include <vector>

#include "drc/nn/graph.hpp"
#include "drc/rng.hpp"

namespace drc::nn {

// 2-D convolution over NHWC maps. Weight layout (kh, kw, cin, cout); bias is
// optional (backbone convs run bias-free, normalization provides the shift).
class Conv2d {
public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel,
           int stride, int pad, bool with_bias);

    Var operator()(Tape& t, Var x);

    int in_channels() const { return in_channels_; }
    int out_channels() const { return out_channels_; }

    Parameter weight;
    std::optional<Parameter> bias;

private:
    int in_channels_, out_channels_, kernel_, stride_, pad_;
};

// Spatial batch normalization with running statistics for inference.
class BatchNorm2d {
public:
    BatchNorm2d(std::string name, int channels);

    Var operator()(Tape& t, Var x, bool training);

    Parameter gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.9;
    double eps = 1e-5;
    std::string name;

private:
    int channels_;
};

class Linear {
public:
    Linear(std::string name, int in_features, int out_features, bool with_bias = true);

    Var operator()(Tape& t, Var x);

    Parameter weight; // (in, out)
    std::optional<Parameter> bias;

private:
    int in_features_, out_features_;
};

Var relu(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var concat_channels(Tape& t, const std::vector<Var>& xs);
Var max_pool(Tape& t, Var x, int kernel, int stride, int pad);
Var avg_pool(Tape& t, Var x, int kernel, int stride);
Var global_avg_pool(Tape& t, Var x); // (N,H,W,C) -> (N,C)
Var softmax(Tape& t, Var x);         // row-wise over (N,C)

// Fills every kernel-flagged parameter with fan-in-scaled normal draws
// (std = sqrt(2/fan_in)); draws are made in float32 so freshly built models
// sit exactly on the float32 grid the weight archive stores.
void init_kernels(const std::vector<Parameter*>& params, Rng& rng);

// Snaps a value to the nearest float32. Parameters live on this grid so a
// save/load round trip through the float32 archive is bit-exact.
inline double to_f32(double v) { return double(float(v)); }

} // namespace drc::nn
