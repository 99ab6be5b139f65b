#include "drc/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace drc::nn {

namespace {

void require_rank(const Tensor& x, int rank, const char* who) {
    if (x.rank() != rank)
        throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) +
                         " input, got " + x.shape_str());
}

int conv_out_dim(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

// Gathers the receptive fields of one sample into a (oh*ow, kh*kw*cin) patch
// matrix. Out-of-bounds taps contribute zeros.
void im2col(const double* x, int h, int w, int c, int kernel, int stride, int pad,
            int oh, int ow, double* cols) {
    const int patch = kernel * kernel * c;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* dst = cols + (std::size_t(oy) * ow + ox) * patch;
            for (int ky = 0; ky < kernel; ++ky) {
                const int iy = oy * stride + ky - pad;
                for (int kx = 0; kx < kernel; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                        const double* src = x + (std::size_t(iy) * w + ix) * c;
                        std::copy(src, src + c, dst);
                    } else {
                        std::fill(dst, dst + c, 0.0);
                    }
                    dst += c;
                }
            }
        }
    }
}

// Scatter-adds a patch-matrix gradient back onto the input gradient.
void col2im_add(const double* cols, int h, int w, int c, int kernel, int stride,
                int pad, int oh, int ow, double* dx) {
    const int patch = kernel * kernel * c;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const double* src = cols + (std::size_t(oy) * ow + ox) * patch;
            for (int ky = 0; ky < kernel; ++ky) {
                const int iy = oy * stride + ky - pad;
                for (int kx = 0; kx < kernel; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                        double* dst = dx + (std::size_t(iy) * w + ix) * c;
                        for (int i = 0; i < c; ++i) dst[i] += src[i];
                    }
                    src += c;
                }
            }
        }
    }
}

} // namespace

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel,
               int stride, int pad, bool with_bias)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel),
      stride_(stride), pad_(pad) {
    if (in_channels < 1 || out_channels < 1)
        throw ConfigError("conv '" + name + "': channel counts must be positive");
    weight.name = name + ".weight";
    weight.value = Tensor({kernel, kernel, in_channels, out_channels});
    weight.is_kernel = true;
    if (with_bias) {
        bias.emplace();
        bias->name = name + ".bias";
        bias->value = Tensor({out_channels});
    }
}

Var Conv2d::operator()(Tape& t, Var x) {
    const Tensor& in = t.value(x);
    require_rank(in, 4, "conv");
    if (in.dim(3) != in_channels_)
        throw ShapeError("conv '" + weight.name + "': expected " +
                         std::to_string(in_channels_) + " input channels, got " +
                         std::to_string(in.dim(3)));
    const int n = in.dim(0), h = in.dim(1), w = in.dim(2);
    const int oh = conv_out_dim(h, kernel_, stride_, pad_);
    const int ow = conv_out_dim(w, kernel_, stride_, pad_);
    if (oh < 1 || ow < 1)
        throw ShapeError("conv '" + weight.name + "': input " + in.shape_str() +
                         " too small for kernel " + std::to_string(kernel_));
    const int patch = kernel_ * kernel_ * in_channels_;
    const int area = oh * ow;

    Tensor out({n, oh, ow, out_channels_});
    std::vector<double> cols(std::size_t(area) * patch);
    for (int i = 0; i < n; ++i) {
        im2col(in.data() + std::size_t(i) * h * w * in_channels_, h, w, in_channels_,
               kernel_, stride_, pad_, oh, ow, cols.data());
        gemm_nn(cols.data(), weight.value.data(),
                out.data() + std::size_t(i) * area * out_channels_, area,
                out_channels_, patch);
    }
    if (bias) {
        double* o = out.data();
        for (std::size_t r = 0; r < std::size_t(n) * area; ++r, o += out_channels_)
            for (int cidx = 0; cidx < out_channels_; ++cidx) o[cidx] += bias->value[cidx];
    }

    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);

    auto* self = this;
    const int kernel = kernel_, stride = stride_, pad = pad_;
    return t.push(std::move(out), [self, x, n, h, w, oh, ow, kernel, stride,
                                   pad](Tape& tp, const Tensor& gout) {
        const Tensor& in = tp.value(x);
        const int cin = self->in_channels_, cout = self->out_channels_;
        const int patch = kernel * kernel * cin;
        const int area = oh * ow;
        self->weight.ensure_grad();
        Tensor& dx = tp.grad(x);
        std::vector<double> cols(std::size_t(area) * patch);
        std::vector<double> dcols(std::size_t(area) * patch);
        for (int i = 0; i < n; ++i) {
            const double* gslice = gout.data() + std::size_t(i) * area * cout;
            im2col(in.data() + std::size_t(i) * h * w * cin, h, w, cin, kernel, stride,
                   pad, oh, ow, cols.data());
            gemm_tn(cols.data(), gslice, self->weight.grad.data(), patch, cout, area,
                    /*accumulate=*/true);
            gemm_nt(gslice, self->weight.value.data(), dcols.data(), area, patch, cout);
            col2im_add(dcols.data(), h, w, cin, kernel, stride, pad, oh, ow,
                       dx.data() + std::size_t(i) * h * w * cin);
        }
        if (self->bias) {
            self->bias->ensure_grad();
            const double* g = gout.data();
            for (std::size_t r = 0; r < std::size_t(n) * area; ++r, g += cout)
                for (int cidx = 0; cidx < cout; ++cidx) self->bias->grad[cidx] += g[cidx];
        }
    });
}

BatchNorm2d::BatchNorm2d(std::string layer_name, int channels)
    : name(std::move(layer_name)), channels_(channels) {
    gamma.name = name + ".weight";
    gamma.value = Tensor({channels}, 1.0);
    beta.name = name + ".bias";
    beta.value = Tensor({channels});
    running_mean = Tensor({channels});
    running_var = Tensor({channels}, 1.0);
}

Var BatchNorm2d::operator()(Tape& t, Var x, bool training) {
    const Tensor& in = t.value(x);
    require_rank(in, 4, "batchnorm");
    if (in.dim(3) != channels_)
        throw ShapeError("batchnorm '" + name + "': channel mismatch");
    const int n = in.dim(0), h = in.dim(1), w = in.dim(2), c = channels_;
    const std::size_t rows = std::size_t(n) * h * w;

    Tensor out(in.shape());
    std::vector<double> mean(c, 0.0), inv_std(c, 0.0);

    if (training && rows > 0) {
        std::vector<double> var(c, 0.0);
        const double* p = in.data();
        for (std::size_t r = 0; r < rows; ++r, p += c)
            for (int i = 0; i < c; ++i) mean[i] += p[i];
        for (int i = 0; i < c; ++i) mean[i] /= double(rows);
        p = in.data();
        for (std::size_t r = 0; r < rows; ++r, p += c)
            for (int i = 0; i < c; ++i) {
                const double d = p[i] - mean[i];
                var[i] += d * d;
            }
        for (int i = 0; i < c; ++i) var[i] /= double(rows);
        for (int i = 0; i < c; ++i) {
            running_mean[i] = momentum * running_mean[i] + (1.0 - momentum) * mean[i];
            running_var[i] = momentum * running_var[i] + (1.0 - momentum) * var[i];
            inv_std[i] = 1.0 / std::sqrt(var[i] + eps);
        }
    } else {
        for (int i = 0; i < c; ++i) {
            mean[i] = running_mean[i];
            inv_std[i] = 1.0 / std::sqrt(running_var[i] + eps);
        }
    }

    // xhat is kept for the backward pass.
    auto xhat = std::make_shared<Tensor>(in.shape());
    {
        const double* p = in.data();
        double* q = xhat->data();
        double* o = out.data();
        for (std::size_t r = 0; r < rows; ++r, p += c, q += c, o += c)
            for (int i = 0; i < c; ++i) {
                q[i] = (p[i] - mean[i]) * inv_std[i];
                o[i] = gamma.value[i] * q[i] + beta.value[i];
            }
    }

    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);

    auto* self = this;
    auto inv = std::make_shared<std::vector<double>>(std::move(inv_std));
    return t.push(std::move(out), [self, x, xhat, inv, training, rows,
                                   c](Tape& tp, const Tensor& gout) {
        self->gamma.ensure_grad();
        self->beta.ensure_grad();
        Tensor& dx = tp.grad(x);
        const double* g = gout.data();
        const double* q = xhat->data();
        std::vector<double> sum_g(c, 0.0), sum_gq(c, 0.0);
        for (std::size_t r = 0; r < rows; ++r, g += c, q += c)
            for (int i = 0; i < c; ++i) {
                sum_g[i] += g[i];
                sum_gq[i] += g[i] * q[i];
            }
        for (int i = 0; i < c; ++i) {
            self->gamma.grad[i] += sum_gq[i];
            self->beta.grad[i] += sum_g[i];
        }
        g = gout.data();
        q = xhat->data();
        double* d = dx.data();
        if (training && rows > 0) {
            const double inv_rows = 1.0 / double(rows);
            for (std::size_t r = 0; r < rows; ++r, g += c, q += c, d += c)
                for (int i = 0; i < c; ++i)
                    d[i] += self->gamma.value[i] * (*inv)[i] *
                            (g[i] - sum_g[i] * inv_rows - q[i] * sum_gq[i] * inv_rows);
        } else {
            for (std::size_t r = 0; r < rows; ++r, g += c, d += c)
                for (int i = 0; i < c; ++i) d[i] += self->gamma.value[i] * (*inv)[i] * g[i];
        }
    });
}

Linear::Linear(std::string name, int in_features, int out_features, bool with_bias)
    : in_features_(in_features), out_features_(out_features) {
    weight.name = name + ".weight";
    weight.value = Tensor({in_features, out_features});
    weight.is_kernel = true;
    if (with_bias) {
        bias.emplace();
        bias->name = name + ".bias";
        bias->value = Tensor({out_features});
    }
}

Var Linear::operator()(Tape& t, Var x) {
    const Tensor& in = t.value(x);
    require_rank(in, 2, "linear");
    if (in.dim(1) != in_features_)
        throw ShapeError("linear '" + weight.name + "': expected " +
                         std::to_string(in_features_) + " features, got " +
                         std::to_string(in.dim(1)));
    const int n = in.dim(0);
    Tensor out({n, out_features_});
    gemm_nn(in.data(), weight.value.data(), out.data(), n, out_features_, in_features_);
    if (bias)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_features_; ++j) out.at(i, j) += bias->value[j];

    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);

    auto* self = this;
    return t.push(std::move(out), [self, x, n](Tape& tp, const Tensor& gout) {
        const Tensor& in = tp.value(x);
        self->weight.ensure_grad();
        gemm_tn(in.data(), gout.data(), self->weight.grad.data(), self->in_features_,
                self->out_features_, n, /*accumulate=*/true);
        Tensor& dx = tp.grad(x);
        gemm_nt(gout.data(), self->weight.value.data(), dx.data(), n, self->in_features_,
                self->out_features_, /*accumulate=*/true);
        if (self->bias) {
            self->bias->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < self->out_features_; ++j)
                    self->bias->grad[j] += gout.at(i, j);
        }
    });
}

Var relu(Tape& t, Var x) {
    const Tensor& in = t.value(x);
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);
    return t.push(std::move(out), [x](Tape& tp, const Tensor& gout) {
        const Tensor& in = tp.value(x);
        Tensor& dx = tp.grad(x);
        for (std::size_t i = 0; i < in.size(); ++i)
            if (in[i] > 0.0) dx[i] += gout[i];
    });
}

Var add(Tape& t, Var a, Var b) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (!va.same_shape(vb))
        throw ShapeError("add: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    Tensor out(va.shape());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);
    return t.push(std::move(out), [a, b](Tape& tp, const Tensor& gout) {
        Tensor& da = tp.grad(a);
        Tensor& db = tp.grad(b);
        for (std::size_t i = 0; i < gout.size(); ++i) {
            da[i] += gout[i];
            db[i] += gout[i];
        }
    });
}

Var concat_channels(Tape& t, const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const Tensor& first = t.value(xs[0]);
    require_rank(first, 4, "concat");
    const int n = first.dim(0), h = first.dim(1), w = first.dim(2);
    int total_c = 0;
    for (Var v : xs) {
        const Tensor& xi = t.value(v);
        require_rank(xi, 4, "concat");
        if (xi.dim(0) != n || xi.dim(1) != h || xi.dim(2) != w)
            throw ShapeError("concat: spatial mismatch " + xi.shape_str() + " vs " +
                             first.shape_str());
        total_c += xi.dim(3);
    }
    Tensor out({n, h, w, total_c});
    const std::size_t rows = std::size_t(n) * h * w;
    int offset = 0;
    for (Var v : xs) {
        const Tensor& xi = t.value(v);
        const int c = xi.dim(3);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(xi.data() + r * c, xi.data() + (r + 1) * c,
                      out.data() + r * total_c + offset);
        offset += c;
    }
    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);
    auto parts = std::make_shared<std::vector<Var>>(xs);
    return t.push(std::move(out), [parts, rows, total_c](Tape& tp, const Tensor& gout) {
        int offset = 0;
        for (Var v : *parts) {
            Tensor& dx = tp.grad(v);
            const int c = dx.dim(3);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = gout.data() + r * total_c + offset;
                double* d = dx.data() + r * c;
                for (int i = 0; i < c; ++i) d[i] += g[i];
            }
            offset += c;
        }
    });
}

Var max_pool(Tape& t, Var x, int kernel, int stride, int pad) {
    const Tensor& in = t.value(x);
    require_rank(in, 4, "max_pool");
    const int n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3);
    const int oh = conv_out_dim(h, kernel, stride, pad);
    const int ow = conv_out_dim(w, kernel, stride, pad);
    Tensor out({n, oh, ow, c});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (int i = 0; i < n; ++i)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int ch = 0; ch < c; ++ch) {
                    double best = -1e300;
                    std::size_t best_idx = 0;
                    for (int ky = 0; ky < kernel; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= w) continue;
                            const std::size_t idx =
                                ((std::size_t(i) * h + iy) * w + ix) * c + ch;
                            if (in[idx] > best) {
                                best = in[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    const std::size_t oidx = ((std::size_t(i) * oh + oy) * ow + ox) * c + ch;
                    out[oidx] = best;
                    (*argmax)[oidx] = best_idx;
                }
    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);
    return t.push(std::move(out), [x, argmax](Tape& tp, const Tensor& gout) {
        Tensor& dx = tp.grad(x);
        for (std::size_t i = 0; i < gout.size(); ++i) dx[(*argmax)[i]] += gout[i];
    });
}

Var avg_pool(Tape& t, Var x, int kernel, int stride) {
    const Tensor& in = t.value(x);
    require_rank(in, 4, "avg_pool");
    const int n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3);
    const int oh = (h - kernel) / stride + 1;
    const int ow = (w - kernel) / stride + 1;
    if (oh < 1 || ow < 1)
        throw ShapeError("avg_pool: input " + in.shape_str() + " smaller than kernel");
    const double inv = 1.0 / double(kernel * kernel);
    Tensor out({n, oh, ow, c});
    for (int i = 0; i < n; ++i)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double* o = out.data() + ((std::size_t(i) * oh + oy) * ow + ox) * c;
                for (int ky = 0; ky < kernel; ++ky)
                    for (int kx = 0; kx < kernel; ++kx) {
                        const double* p =
                            in.data() +
                            ((std::size_t(i) * h + oy * stride + ky) * w + ox * stride + kx) * c;
                        for (int ch = 0; ch < c; ++ch) o[ch] += p[ch];
                    }
                for (int ch = 0; ch < c; ++ch) o[ch] *= inv;
            }
    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);
    return t.push(std::move(out), [x, kernel, stride, inv](Tape& tp, const Tensor& gout) {
        Tensor& dx = tp.grad(x);
        const int n = dx.dim(0), h = dx.dim(1), w = dx.dim(2), c = dx.dim(3);
        const int oh = gout.dim(1), ow = gout.dim(2);
        (void)n;
        for (int i = 0; i < gout.dim(0); ++i)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double* g = gout.data() + ((std::size_t(i) * oh + oy) * ow + ox) * c;
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx) {
                            double* d = dx.data() +
                                        ((std::size_t(i) * h + oy * stride + ky) * w +
                                         ox * stride + kx) *
                                            c;
                            for (int ch = 0; ch < c; ++ch) d[ch] += g[ch] * inv;
                        }
                }
    });
}

Var global_avg_pool(Tape& t, Var x) {
    const Tensor& in = t.value(x);
    require_rank(in, 4, "global_avg_pool");
    const int n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3);
    const double inv = (h * w) > 0 ? 1.0 / double(h * w) : 0.0;
    Tensor out({n, c});
    for (int i = 0; i < n; ++i) {
        double* o = out.data() + std::size_t(i) * c;
        const double* p = in.data() + std::size_t(i) * h * w * c;
        for (int r = 0; r < h * w; ++r, p += c)
            for (int ch = 0; ch < c; ++ch) o[ch] += p[ch];
        for (int ch = 0; ch < c; ++ch) o[ch] *= inv;
    }
    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);
    return t.push(std::move(out), [x, inv](Tape& tp, const Tensor& gout) {
        Tensor& dx = tp.grad(x);
        const int h = dx.dim(1), w = dx.dim(2), c = dx.dim(3);
        for (int i = 0; i < gout.dim(0); ++i) {
            const double* g = gout.data() + std::size_t(i) * c;
            double* d = dx.data() + std::size_t(i) * h * w * c;
            for (int r = 0; r < h * w; ++r, d += c)
                for (int ch = 0; ch < c; ++ch) d[ch] += g[ch] * inv;
        }
    });
}

Var softmax(Tape& t, Var x) {
    const Tensor& in = t.value(x);
    require_rank(in, 2, "softmax");
    const int n = in.dim(0), c = in.dim(1);
    Tensor out(in.shape());
    for (int i = 0; i < n; ++i) {
        const double* p = in.data() + std::size_t(i) * c;
        double* o = out.data() + std::size_t(i) * c;
        double m = p[0];
        for (int j = 1; j < c; ++j) m = std::max(m, p[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            o[j] = std::exp(p[j] - m);
            sum += o[j];
        }
        for (int j = 0; j < c; ++j) o[j] /= sum;
    }
    if (!t.grad_enabled()) return t.push(std::move(out), nullptr);
    auto probs = std::make_shared<Tensor>(out);
    return t.push(std::move(out), [x, probs](Tape& tp, const Tensor& gout) {
        Tensor& dx = tp.grad(x);
        const int n = gout.dim(0), c = gout.dim(1);
        for (int i = 0; i < n; ++i) {
            const double* g = gout.data() + std::size_t(i) * c;
            const double* p = probs->data() + std::size_t(i) * c;
            double* d = dx.data() + std::size_t(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += g[j] * p[j];
            for (int j = 0; j < c; ++j) d[j] += p[j] * (g[j] - dot);
        }
    });
}

void init_kernels(const std::vector<Parameter*>& params, Rng& rng) {
    for (Parameter* p : params) {
        if (!p->is_kernel) continue;
        const auto& shape = p->value.shape();
        const int cout = shape.back();
        const double fan_in = double(p->value.size()) / double(cout);
        const double std_dev = std::sqrt(2.0 / fan_in);
        for (std::size_t i = 0; i < p->value.size(); ++i)
            p->value[i] = to_f32(rng.normal() * std_dev);
    }
}

} // namespace drc::nn
