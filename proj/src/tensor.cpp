#include "drc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace drc {

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::min() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double v : data_) m = std::min(m, v);
    return m;
}

double Tensor::max() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double v : data_) m = std::max(m, v);
    return m;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / double(data_.size()); }

std::string Tensor::shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

void gemm_nn(const double* a, const double* b, double* c, int m, int n, int k,
             bool accumulate) {
    if (!accumulate) std::fill(c, c + std::size_t(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + std::size_t(i) * k;
        double* crow = c + std::size_t(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + std::size_t(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int n, int k,
             bool accumulate) {
    if (!accumulate) std::fill(c, c + std::size_t(m) * n, 0.0);
    for (int p = 0; p < k; ++p) {
        const double* arow = a + std::size_t(p) * m;
        const double* brow = b + std::size_t(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + std::size_t(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k,
             bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + std::size_t(i) * k;
        double* crow = c + std::size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + std::size_t(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            if (accumulate)
                crow[j] += s;
            else
                crow[j] = s;
        }
    }
}

} // namespace drc
