// SPDX-License-Identifier: Apache-2.0
//
// turbomimo — learned-MMSE channel estimation for 2D massive antenna arrays
// Copyright (C) 2026 turbomimo contributors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except
// in compliance with the License. You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under
// the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace turbomimo {

using cdouble = std::complex<double>;

// Dense row-major complex matrix. This is the only matrix container in the
// library; all sizes occurring here are small (at most a few hundred rows),
// so simple contiguous storage and naive kernels are both adequate and easy
// to audit.
class ComplexMatrix {
  public:
    ComplexMatrix() = default;

    ComplexMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, cdouble(0.0, 0.0)) {}

    ComplexMatrix(std::size_t rows, std::size_t cols, std::vector<cdouble> entries)
        : rows_(rows), cols_(cols), data_(std::move(entries)) {
        if (data_.size() != rows_ * cols_)
            throw std::invalid_argument("ComplexMatrix: entry count does not match rows x cols");
    }

    static ComplexMatrix identity(std::size_t n) {
        ComplexMatrix I(n, n);
        for (std::size_t i = 0; i < n; ++i)
            I(i, i) = 1.0;
        return I;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    cdouble &operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const cdouble &operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    cdouble *data() { return data_.data(); }
    const cdouble *data() const { return data_.data(); }

    ComplexMatrix transpose() const {
        ComplexMatrix T(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j)
                T(j, i) = (*this)(i, j);
        return T;
    }

    ComplexMatrix conj_transpose() const {
        ComplexMatrix T(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j)
                T(j, i) = std::conj((*this)(i, j));
        return T;
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (const cdouble &v : data_)
            s += std::norm(v);
        return std::sqrt(s);
    }

    double max_abs() const {
        double s = 0.0;
        for (const cdouble &v : data_)
            s = std::max(s, std::abs(v));
        return s;
    }

    // Largest deviation from Hermitian symmetry, max_ij |A(i,j) - conj(A(j,i))|.
    double hermitian_defect() const {
        if (rows_ != cols_)
            return std::numeric_limits<double>::infinity();
        double d = 0.0;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = i; j < cols_; ++j)
                d = std::max(d, std::abs((*this)(i, j) - std::conj((*this)(j, i))));
        return d;
    }

    bool is_hermitian(double tol = 1e-12) const { return rows_ == cols_ && hermitian_defect() <= tol; }

    ComplexMatrix &operator+=(const ComplexMatrix &b) {
        check_same_shape(b, "operator+=");
        for (std::size_t k = 0; k < data_.size(); ++k)
            data_[k] += b.data_[k];
        return *this;
    }

    ComplexMatrix &operator-=(const ComplexMatrix &b) {
        check_same_shape(b, "operator-=");
        for (std::size_t k = 0; k < data_.size(); ++k)
            data_[k] -= b.data_[k];
        return *this;
    }

    ComplexMatrix &operator*=(cdouble s) {
        for (cdouble &v : data_)
            v *= s;
        return *this;
    }

    friend ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix &b) { return a += b; }
    friend ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix &b) { return a -= b; }
    friend ComplexMatrix operator*(ComplexMatrix a, cdouble s) { return a *= s; }
    friend ComplexMatrix operator*(cdouble s, ComplexMatrix a) { return a *= s; }

    friend ComplexMatrix operator*(const ComplexMatrix &a, const ComplexMatrix &b) {
        if (a.cols_ != b.rows_)
            throw std::invalid_argument("ComplexMatrix: inner dimensions do not match in product");
        ComplexMatrix c(a.rows_, b.cols_);
        for (std::size_t i = 0; i < a.rows_; ++i)
            for (std::size_t k = 0; k < a.cols_; ++k) {
                const cdouble aik = a(i, k);
                if (aik == cdouble(0.0, 0.0))
                    continue;
                const cdouble *brow = &b.data_[k * b.cols_];
                cdouble *crow = &c.data_[i * c.cols_];
                for (std::size_t j = 0; j < b.cols_; ++j)
                    crow[j] += aik * brow[j];
            }
        return c;
    }

  private:
    void check_same_shape(const ComplexMatrix &b, const char *op) const {
        if (rows_ != b.rows_ || cols_ != b.cols_)
            throw std::invalid_argument(std::string("ComplexMatrix: shape mismatch in ") + op);
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<cdouble> data_;
};

namespace detail {

// C += sign * A B for row-major real blocks: A is m x k, B is k x n, C m x n.
// The split-complex kernels express complex products as four of these; plain
// contiguous double loops vectorize far better than interleaved complex math.
inline void gemm_acc(double *C, const double *A, const double *B, std::size_t m, std::size_t k,
                     std::size_t n, double sign) {
    for (std::size_t i = 0; i < m; ++i) {
        const double *arow = A + i * k;
        double *crow = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = sign * arow[p];
            const double *brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += a * brow[j];
        }
    }
}

// Splits a matrix into real/imaginary planes, row-major.
inline void split_planes(const ComplexMatrix &m, std::vector<double> &re, std::vector<double> &im) {
    re.resize(m.size());
    im.resize(m.size());
    const cdouble *p = m.data();
    for (std::size_t k = 0; k < m.size(); ++k) {
        re[k] = p[k].real();
        im[k] = p[k].imag();
    }
}

// C = A B into a preallocated result (no temporary); C must already have the
// product's shape. Lets hot loops reuse buffers instead of allocating.
inline void mul_into(ComplexMatrix &c, const ComplexMatrix &a, const ComplexMatrix &b) {
    if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols())
        throw std::invalid_argument("mul_into: dimension mismatch");
    std::fill(c.data(), c.data() + c.size(), cdouble(0.0, 0.0));
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        cdouble *crow = c.data() + i * n;
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const cdouble aik = a(i, k);
            const cdouble *brow = b.data() + k * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += aik * brow[j];
        }
    }
}

}  // namespace detail

// Kronecker product, dims (rA*rB) x (cA*cB).
inline ComplexMatrix kron(const ComplexMatrix &a, const ComplexMatrix &b) {
    ComplexMatrix c(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t ia = 0; ia < a.rows(); ++ia)
        for (std::size_t ja = 0; ja < a.cols(); ++ja) {
            const cdouble s = a(ia, ja);
            if (s == cdouble(0.0, 0.0))
                continue;
            for (std::size_t ib = 0; ib < b.rows(); ++ib)
                for (std::size_t jb = 0; jb < b.cols(); ++jb)
                    c(ia * b.rows() + ib, ja * b.cols() + jb) = s * b(ib, jb);
        }
    return c;
}

// Column-major stacking (column 1 first); the convention that makes
// vec(A X B^T) = (B kron A) vec(X) hold.
inline std::vector<cdouble> vec(const ComplexMatrix &a) {
    std::vector<cdouble> v(a.rows() * a.cols());
    std::size_t k = 0;
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i)
            v[k++] = a(i, j);
    return v;
}

// Inverse of vec: reshape a column-major stacked vector back into a matrix.
inline ComplexMatrix unvec(const std::vector<cdouble> &v, std::size_t rows, std::size_t cols) {
    if (v.size() != rows * cols)
        throw std::invalid_argument("unvec: vector length does not match rows x cols");
    ComplexMatrix a(rows, cols);
    std::size_t k = 0;
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i)
            a(i, j) = v[k++];
    return a;
}

// Matrix-vector product A x.
inline std::vector<cdouble> matvec(const ComplexMatrix &a, const std::vector<cdouble> &x) {
    if (a.cols() != x.size())
        throw std::invalid_argument("matvec: dimension mismatch");
    std::vector<cdouble> y(a.rows(), cdouble(0.0, 0.0));
    for (std::size_t i = 0; i < a.rows(); ++i) {
        cdouble s(0.0, 0.0);
        for (std::size_t j = 0; j < a.cols(); ++j)
            s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

// Hermitian inner product x^H y.
inline cdouble vdot(const std::vector<cdouble> &x, const std::vector<cdouble> &y) {
    if (x.size() != y.size())
        throw std::invalid_argument("vdot: length mismatch");
    cdouble s(0.0, 0.0);
    for (std::size_t k = 0; k < x.size(); ++k)
        s += std::conj(x[k]) * y[k];
    return s;
}

}  // namespace turbomimo
