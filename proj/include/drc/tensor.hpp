#pragma once

#include <cassert>
#include <cstddef>
#include <string>
#include <vector>

#include "drc/common.hpp"

namespace drc {

// Dense row-major tensor of doubles. Feature maps use NHWC order; kernels use
// (kh, kw, cin, cout); matrices are (rows, cols).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(numel_of(shape_), 0.0);
    }
    Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
        data_.assign(numel_of(shape_), fill);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor scalar(double v) {
        Tensor t({1});
        t.data_[0] = v;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return int(shape_.size()); }
    int dim(int i) const { return shape_[std::size_t(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int i, int j) { return data_[std::size_t(i) * shape_[1] + j]; }
    double at(int i, int j) const { return data_[std::size_t(i) * shape_[1] + j]; }
    double& at(int i, int j, int k) {
        return data_[(std::size_t(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const {
        return data_[(std::size_t(i) * shape_[1] + j) * shape_[2] + k];
    }
    double& at(int n, int h, int w, int c) {
        return data_[((std::size_t(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    double at(int n, int h, int w, int c) const {
        return data_[((std::size_t(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) { data_.assign(data_.size(), v); }

    Tensor reshaped(std::vector<int> shape) const {
        if (numel_of(shape) != data_.size())
            throw ShapeError("reshape: element count mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    bool all_finite() const;
    double min() const;
    double max() const;
    double sum() const;
    double mean() const;

    static std::size_t numel_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= std::size_t(d);
        }
        return shape.empty() ? 0 : n;
    }

    static std::string shape_str(const std::vector<int>& shape);
    std::string shape_str() const { return shape_str(shape_); }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// All variants compute C(M,N) with inner dimension K; accumulate=false
// overwrites C, true adds into it. Loop order is fixed, so results are
// bit-reproducible run to run.
// C = A(M,K) * B(K,N)
void gemm_nn(const double* a, const double* b, double* c, int m, int n, int k,
             bool accumulate = false);
// C = A(K,M)^T * B(K,N)
void gemm_tn(const double* a, const double* b, double* c, int m, int n, int k,
             bool accumulate = false);
// C = A(M,K) * B(N,K)^T
void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k,
             bool accumulate = false);

} // namespace drc
