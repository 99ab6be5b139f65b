#pragma once

#include <vector>

#include "drc/rng.hpp"
#include "drc/tensor.hpp"

namespace drc {

enum class DenoiseMethod { binomial_deconv, landweber, curvature_anisotropic_diffusion };

std::string to_string(DenoiseMethod m);
DenoiseMethod denoise_method_from_string(const std::string& s);

struct DenoiseParams {
    int iterations = 0;      // 0 = method default (3 / 10 / 5)
    double tau = 1.0;        // Landweber relaxation, stable in (0, 2)
    double time_step = 0.0625;
    double conductance = 3.0;
    bool identity_blur = false; // test hook: blur operator A = identity
};

// Deconvolution methods model the blur as a 3x3 binomial kernel; Landweber
// iterates x <- x + tau * A^T(b - A x). Curvature anisotropic diffusion runs
// an explicit conductance-modulated curvature-flow update.
Tensor denoise(const Tensor& image, DenoiseMethod method, const DenoiseParams& params = {});

// Zero mean, unit standard deviation. Degenerate inputs (sigma < 1e-12) map
// to all zeros instead of dividing.
Tensor normalize(const Tensor& image);

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// Bilinear resample to (size, size) replicated onto 3 channels, the shape the
// backbones consume.
Tensor resize_to_input(const Tensor& image, int size);

// Rotation about the image center (degrees, bilinear, zero fill) and integer
// shifts (zero fill). Exposed for the augmentation pipeline and its tests.
Tensor rotate_about_center(const Tensor& image, double degrees);
Tensor shift_image(const Tensor& image, int shift_x, int shift_y);

struct AugmentationSpec {
    double rotation_degrees = 15.0; // uniform angle in [-r, +r]
    int width_shift_px = 20;        // uniform integer shift in [-w, +w]
    int height_shift_px = 20;
    bool zca_whitening = false;
    double zca_epsilon = 1e-6;

    bool geometric_identity() const {
        return rotation_degrees == 0.0 && width_shift_px == 0 && height_shift_px == 0;
    }
    void validate() const;
};

// Per-sample geometric augmentation: rotation, then shifts, drawn from `rng`
// in that order. A zeroed spec is the exact identity. ZCA runs per batch, see
// zca_whiten.
Tensor augment(const Tensor& image, const AugmentationSpec& spec, Rng& rng);

// In-place ZCA whitening of a batch of same-shape grids: per-feature
// centering, then rotation into the eigenbasis of the batch covariance with
// eigenvalues damped by epsilon. Uses the Gram-matrix route so cost scales
// with batch size, not pixel count.
void zca_whiten(std::vector<Tensor>& batch, double epsilon);

} // namespace drc
