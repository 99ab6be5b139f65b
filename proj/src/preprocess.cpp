#include "drc/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "drc/common.hpp"

namespace drc {

namespace {

void require_grid(const Tensor& img, const char* who) {
    if (img.rank() != 2 || img.size() == 0)
        throw DataError(std::string(who) + ": expected a nonempty 2-D grid, got " +
                        img.shape_str());
    if (!img.all_finite())
        throw DataError(std::string(who) + ": non-finite pixels");
}

double at_clamped(const Tensor& img, int y, int x) {
    y = std::clamp(y, 0, img.dim(0) - 1);
    x = std::clamp(x, 0, img.dim(1) - 1);
    return img.at(y, x);
}

// 3x3 binomial blur with replicated borders; the blur model A shared by both
// deconvolution methods. Symmetric, so A^T = A.
Tensor binomial_blur(const Tensor& img) {
    static const double k[3] = {0.25, 0.5, 0.25};
    const int h = img.dim(0), w = img.dim(1);
    Tensor tmp({h, w}), out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            tmp.at(y, x) = k[0] * at_clamped(img, y, x - 1) + k[1] * img.at(y, x) +
                           k[2] * at_clamped(img, y, x + 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(y, x) = k[0] * at_clamped(tmp, y - 1, x) + k[1] * tmp.at(y, x) +
                           k[2] * at_clamped(tmp, y + 1, x);
    return out;
}

Tensor apply_blur(const Tensor& img, bool identity) {
    return identity ? img : binomial_blur(img);
}

// Van Cittert iteration: x <- x + (b - A x).
Tensor binomial_deconv(const Tensor& b, const DenoiseParams& p) {
    const int iters = p.iterations > 0 ? p.iterations : 3;
    Tensor x = b;
    for (int i = 0; i < iters; ++i) {
        Tensor ax = apply_blur(x, p.identity_blur);
        for (std::size_t j = 0; j < x.size(); ++j) x[j] += b[j] - ax[j];
    }
    return x;
}

Tensor landweber(const Tensor& b, const DenoiseParams& p) {
    // The binomial blur has unit spectral radius, so the iteration is stable
    // exactly for tau in (0, 2).
    if (!(p.tau > 0.0) || !(p.tau < 2.0))
        throw NumericError("landweber: tau=" + std::to_string(p.tau) +
                           " outside the stable range (0, 2) for the binomial blur");
    const int iters = p.iterations > 0 ? p.iterations : 10;
    Tensor x = b;
    for (int i = 0; i < iters; ++i) {
        Tensor ax = apply_blur(x, p.identity_blur);
        for (std::size_t j = 0; j < ax.size(); ++j) ax[j] = b[j] - ax[j];
        Tensor corr = apply_blur(ax, p.identity_blur); // A^T residual
        for (std::size_t j = 0; j < x.size(); ++j) x[j] += p.tau * corr[j];
    }
    if (!x.all_finite()) throw NumericError("landweber: iteration diverged");
    return x;
}

// Conductance-modulated curvature flow:
//   u_t = c(|grad u|) * (u_xx u_y^2 - 2 u_x u_y u_xy + u_yy u_x^2) / |grad u|^2
// with c(g) = exp(-(g/K)^2). Constant regions have zero flow.
Tensor curvature_diffusion(const Tensor& b, const DenoiseParams& p) {
    const int iters = p.iterations > 0 ? p.iterations : 5;
    const double dt = p.time_step;
    const double k2 = p.conductance * p.conductance;
    const int h = b.dim(0), w = b.dim(1);
    Tensor u = b;
    for (int it = 0; it < iters; ++it) {
        Tensor next = u;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double ux = 0.5 * (at_clamped(u, y, x + 1) - at_clamped(u, y, x - 1));
                const double uy = 0.5 * (at_clamped(u, y + 1, x) - at_clamped(u, y - 1, x));
                const double uxx = at_clamped(u, y, x + 1) - 2.0 * u.at(y, x) +
                                   at_clamped(u, y, x - 1);
                const double uyy = at_clamped(u, y + 1, x) - 2.0 * u.at(y, x) +
                                   at_clamped(u, y - 1, x);
                const double uxy = 0.25 * (at_clamped(u, y + 1, x + 1) -
                                           at_clamped(u, y + 1, x - 1) -
                                           at_clamped(u, y - 1, x + 1) +
                                           at_clamped(u, y - 1, x - 1));
                const double g2 = ux * ux + uy * uy;
                if (g2 < 1e-30) continue;
                const double curv = (uxx * uy * uy - 2.0 * ux * uy * uxy + uyy * ux * ux) / g2;
                next.at(y, x) += dt * std::exp(-g2 / k2) * curv;
            }
        u = std::move(next);
    }
    if (!u.all_finite()) throw NumericError("curvature diffusion: update diverged");
    return u;
}

} // namespace

std::string to_string(DenoiseMethod m) {
    switch (m) {
    case DenoiseMethod::binomial_deconv: return "binomial_deconv";
    case DenoiseMethod::landweber: return "landweber";
    case DenoiseMethod::curvature_anisotropic_diffusion:
        return "curvature_anisotropic_diffusion";
    }
    return "?";
}

DenoiseMethod denoise_method_from_string(const std::string& s) {
    if (s == "binomial_deconv") return DenoiseMethod::binomial_deconv;
    if (s == "landweber") return DenoiseMethod::landweber;
    if (s == "curvature_anisotropic_diffusion")
        return DenoiseMethod::curvature_anisotropic_diffusion;
    throw ConfigError("unknown denoise method '" + s + "'");
}

Tensor denoise(const Tensor& image, DenoiseMethod method, const DenoiseParams& params) {
    require_grid(image, "denoise");
    switch (method) {
    case DenoiseMethod::binomial_deconv: return binomial_deconv(image, params);
    case DenoiseMethod::landweber: return landweber(image, params);
    case DenoiseMethod::curvature_anisotropic_diffusion:
        return curvature_diffusion(image, params);
    }
    throw ConfigError("denoise: bad method");
}

Tensor normalize(const Tensor& image) {
    require_grid(image, "normalize");
    const double mean = image.mean();
    double var = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double d = image[i] - mean;
        var += d * d;
    }
    const double sigma = std::sqrt(var / double(image.size()));
    Tensor out(image.shape());
    if (sigma < 1e-12) return out; // blank image -> zeros, not NaN
    for (std::size_t i = 0; i < image.size(); ++i) out[i] = (image[i] - mean) / sigma;
    return out;
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    require_grid(image, "resize");
    if (out_h < 1 || out_w < 1) throw ConfigError("resize: target must be positive");
    const int h = image.dim(0), w = image.dim(1);
    Tensor out({out_h, out_w});
    const double sy = double(h) / out_h, sx = double(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(h - 1));
        const int y0 = int(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(w - 1));
            const int x0 = int(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            out.at(y, x) = (1 - wy) * ((1 - wx) * image.at(y0, x0) + wx * image.at(y0, x1)) +
                           wy * ((1 - wx) * image.at(y1, x0) + wx * image.at(y1, x1));
        }
    }
    return out;
}

Tensor resize_to_input(const Tensor& image, int size) {
    Tensor flat = resize_bilinear(image, size, size);
    Tensor out({size, size, 3});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = flat.at(y, x);
    return out;
}

Tensor rotate_about_center(const Tensor& image, double degrees) {
    require_grid(image, "rotate");
    if (degrees == 0.0) return image;
    const int h = image.dim(0), w = image.dim(1);
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            // Inverse map: sample the source at the back-rotated position.
            const double dy = y - cy, dx = x - cx;
            const double sy = cy + (c * dy + s * dx);
            const double sx = cx + (-s * dy + c * dx);
            if (sy < 0.0 || sy > h - 1 || sx < 0.0 || sx > w - 1) continue; // zero fill
            const int y0 = int(sy), x0 = int(sx);
            const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            const double wy = sy - y0, wx = sx - x0;
            out.at(y, x) =
                (1 - wy) * ((1 - wx) * image.at(y0, x0) + wx * image.at(y0, x1)) +
                wy * ((1 - wx) * image.at(y1, x0) + wx * image.at(y1, x1));
        }
    return out;
}

Tensor shift_image(const Tensor& image, int shift_x, int shift_y) {
    require_grid(image, "shift");
    if (shift_x == 0 && shift_y == 0) return image;
    const int h = image.dim(0), w = image.dim(1);
    Tensor out({h, w});
    for (int y = 0; y < h; ++y) {
        const int sy = y - shift_y;
        if (sy < 0 || sy >= h) continue;
        for (int x = 0; x < w; ++x) {
            const int sx = x - shift_x;
            if (sx < 0 || sx >= w) continue;
            out.at(y, x) = image.at(sy, sx);
        }
    }
    return out;
}

void AugmentationSpec::validate() const {
    if (rotation_degrees < 0.0 || width_shift_px < 0 || height_shift_px < 0)
        throw ConfigError("augmentation ranges must be nonnegative");
    if (zca_epsilon <= 0.0) throw ConfigError("zca_epsilon must be positive");
}

Tensor augment(const Tensor& image, const AugmentationSpec& spec, Rng& rng) {
    spec.validate();
    require_grid(image, "augment");
    if (spec.geometric_identity()) return image;
    // Fixed draw order keeps streams reproducible: angle, then x, then y.
    const double angle = spec.rotation_degrees > 0.0
                             ? rng.uniform(-spec.rotation_degrees, spec.rotation_degrees)
                             : 0.0;
    const int dx = spec.width_shift_px > 0
                       ? int(rng.uniform_int(-spec.width_shift_px, spec.width_shift_px))
                       : 0;
    const int dy = spec.height_shift_px > 0
                       ? int(rng.uniform_int(-spec.height_shift_px, spec.height_shift_px))
                       : 0;
    return shift_image(rotate_about_center(image, angle), dx, dy);
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n*n).
// Eigenvectors land in the columns of v.
void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, int n) {
    v.assign(std::size_t(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[std::size_t(i) * n + i] = 1.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[std::size_t(p) * n + q] * a[std::size_t(p) * n + q];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[std::size_t(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[std::size_t(p) * n + p];
                const double aqq = a[std::size_t(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a[std::size_t(i) * n + p];
                    const double aiq = a[std::size_t(i) * n + q];
                    a[std::size_t(i) * n + p] = c * aip - s * aiq;
                    a[std::size_t(i) * n + q] = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a[std::size_t(p) * n + i];
                    const double aqi = a[std::size_t(q) * n + i];
                    a[std::size_t(p) * n + i] = c * api - s * aqi;
                    a[std::size_t(q) * n + i] = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = v[std::size_t(i) * n + p];
                    const double viq = v[std::size_t(i) * n + q];
                    v[std::size_t(i) * n + p] = c * vip - s * viq;
                    v[std::size_t(i) * n + q] = s * vip + c * viq;
                }
            }
    }
}

} // namespace

void zca_whiten(std::vector<Tensor>& batch, double epsilon) {
    if (batch.empty()) return;
    if (epsilon <= 0.0) throw ConfigError("zca_whiten: epsilon must be positive");
    const int n = int(batch.size());
    const std::size_t dim = batch[0].size();
    for (const Tensor& t : batch)
        if (t.size() != dim)
            throw ShapeError("zca_whiten: batch images must share one shape");

    // Center per feature.
    std::vector<double> mean(dim, 0.0);
    for (const Tensor& t : batch)
        for (std::size_t j = 0; j < dim; ++j) mean[j] += t[j];
    for (double& m : mean) m /= n;
    std::vector<std::vector<double>> xc{std::size_t(n), std::vector<double>(dim)};
    for (int i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) xc[std::size_t(i)][j] = batch[std::size_t(i)][j] - mean[j];

    // Gram matrix G = Xc Xc^T / n shares the covariance spectrum; its
    // eigenvectors give the data-space principal directions without forming
    // the dim x dim covariance.
    std::vector<double> gram(std::size_t(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) s += xc[std::size_t(i)][k] * xc[std::size_t(j)][k];
            gram[std::size_t(i) * n + j] = gram[std::size_t(j) * n + i] = s / n;
        }
    std::vector<double> vecs;
    jacobi_eigen(gram, vecs, n);

    // Whitened rows: x_i = sum_k w_k * <coefficients> with w_k shaped by the
    // damped eigenvalue. Rank-deficient directions carry no data and drop out.
    for (auto& t : batch) t.fill(0.0);
    std::vector<double> u(dim);
    for (int k = 0; k < n; ++k) {
        const double s = gram[std::size_t(k) * n + k]; // eigenvalue after rotation
        if (s < 1e-14) continue;
        // Principal direction u_k = Xc^T v_k / sqrt(n s).
        const double inv_norm = 1.0 / std::sqrt(double(n) * s);
        for (std::size_t j = 0; j < dim; ++j) u[j] = 0.0;
        for (int i = 0; i < n; ++i) {
            const double vik = vecs[std::size_t(i) * n + k];
            if (vik == 0.0) continue;
            for (std::size_t j = 0; j < dim; ++j) u[j] += vik * xc[std::size_t(i)][j];
        }
        for (std::size_t j = 0; j < dim; ++j) u[j] *= inv_norm;
        // Projection of row i on u_k is sqrt(n s) * v_ik; damp by 1/sqrt(s+eps).
        const double damp = 1.0 / std::sqrt(s + epsilon);
        for (int i = 0; i < n; ++i) {
            const double coeff = std::sqrt(double(n) * s) * vecs[std::size_t(i) * n + k] * damp;
            if (coeff == 0.0) continue;
            Tensor& t = batch[std::size_t(i)];
            for (std::size_t j = 0; j < dim; ++j) t[j] += coeff * u[j];
        }
    }
}

} // namespace drc
