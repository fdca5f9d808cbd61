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
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "turbomimo/complex_matrix.hpp"

namespace turbomimo {

// Eigenvalues below this (absolute) threshold may be clamped to zero when a
// positive-semidefinite result is required; anything more negative is treated
// as a genuine PSD violation.
inline constexpr double kPsdClampThreshold = -1e-10;

// Default subinterval count for the angular-correlation quadrature. The
// Laplacian angular envelope has a cusp at zero and becomes extremely narrow
// for spreads of a fraction of a degree, so a fine composite-Simpson grid is
// needed before doubling the node count stops moving the result below 1e-8.
inline constexpr std::size_t kDefaultQuadratureNodes = 16384;

struct EigResult {
    std::vector<double> values;  // real eigenvalues, sorted descending
    ComplexMatrix vectors;       // unitary; column k pairs with values[k]
};

// Hermitian eigendecomposition by cyclic Jacobi rotations. Sizes in this
// library stay at or below a few hundred, where Jacobi is robust, simple and
// fully accurate.
inline EigResult hermitian_eig(const ComplexMatrix &a_in, double symmetry_tol = 1e-9) {
    const std::size_t n = a_in.rows();
    if (n == 0 || a_in.cols() != n)
        throw std::invalid_argument("hermitian_eig: matrix must be square and nonempty");
    const double scale = std::max(1.0, a_in.frobenius_norm());
    if (a_in.hermitian_defect() > symmetry_tol * scale)
        throw std::invalid_argument("hermitian_eig: input is not Hermitian within tolerance");

    // Work on the exactly Hermitian part so roundoff asymmetry cannot drift.
    ComplexMatrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            a(i, j) = 0.5 * (a_in(i, j) + std::conj(a_in(j, i)));

    ComplexMatrix v = ComplexMatrix::identity(n);
    const double stop = 1e-14 * scale;
    const int max_sweeps = 60;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                off += std::norm(a(i, j));
        if (std::sqrt(off) <= stop)
            break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double r = std::abs(a(p, q));
                if (r <= 1e-300)
                    continue;
                const cdouble phase = a(p, q) / r;
                const double app = std::real(a(p, p));
                const double aqq = std::real(a(q, q));
                const double tau = (aqq - app) / (2.0 * r);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                const cdouble sp = s * phase;             // s e^{+i alpha}
                const cdouble sm = s * std::conj(phase);  // s e^{-i alpha}

                // Row update A <- J^H A.
                for (std::size_t k = 0; k < n; ++k) {
                    const cdouble apk = a(p, k);
                    const cdouble aqk = a(q, k);
                    a(p, k) = c * apk - sp * aqk;
                    a(q, k) = sm * apk + c * aqk;
                }
                // Column update A <- A J, and eigenvector accumulation V <- V J.
                for (std::size_t k = 0; k < n; ++k) {
                    const cdouble akp = a(k, p);
                    const cdouble akq = a(k, q);
                    a(k, p) = c * akp - sm * akq;
                    a(k, q) = sp * akp + c * akq;
                    const cdouble vkp = v(k, p);
                    const cdouble vkq = v(k, q);
                    v(k, p) = c * vkp - sm * vkq;
                    v(k, q) = sp * vkp + c * vkq;
                }
                a(p, q) = cdouble(0.0, 0.0);
                a(q, p) = cdouble(0.0, 0.0);
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i)
        diag[i] = std::real(a(i, i));
    std::stable_sort(order.begin(), order.end(),
                     [&diag](std::size_t x, std::size_t y) { return diag[x] > diag[y]; });

    EigResult res;
    res.values.resize(n);
    res.vectors = ComplexMatrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        res.values[k] = diag[order[k]];
        for (std::size_t i = 0; i < n; ++i)
            res.vectors(i, k) = v(i, order[k]);
    }
    return res;
}

// Applies a real scalar function to the eigenvalues of a Hermitian matrix:
// returns V diag(fn(lambda)) V^H. The result is Hermitian by construction.
inline ComplexMatrix hermitian_spectral_map(const ComplexMatrix &a,
                                            const std::function<double(double)> &fn) {
    const EigResult eig = hermitian_eig(a);
    const std::size_t n = a.rows();
    ComplexMatrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double f = fn(eig.values[k]);
        if (f == 0.0)
            continue;
        for (std::size_t i = 0; i < n; ++i) {
            const cdouble fvik = f * eig.vectors(i, k);
            for (std::size_t j = 0; j < n; ++j)
                out(i, j) += fvik * std::conj(eig.vectors(j, k));
        }
    }
    // Snap the unavoidable last-bit asymmetry so downstream Hermitian checks
    // see an exactly Hermitian matrix.
    for (std::size_t i = 0; i < n; ++i) {
        out(i, i) = cdouble(std::real(out(i, i)), 0.0);
        for (std::size_t j = i + 1; j < n; ++j) {
            const cdouble m = 0.5 * (out(i, j) + std::conj(out(j, i)));
            out(i, j) = m;
            out(j, i) = std::conj(m);
        }
    }
    return out;
}

// Principal square root of a Hermitian PSD matrix. Eigenvalues in
// [kPsdClampThreshold, 0) are treated as roundoff and clamped to zero;
// anything lower is rejected.
inline ComplexMatrix hermitian_sqrt(const ComplexMatrix &a) {
    return hermitian_spectral_map(a, [](double lambda) {
        if (lambda < kPsdClampThreshold)
            throw std::invalid_argument("hermitian_sqrt: matrix is not positive semidefinite");
        return lambda > 0.0 ? std::sqrt(lambda) : 0.0;
    });
}

// General complex matrix inverse by Gauss-Jordan elimination with partial
// pivoting. Used as an independent cross-check for the spectral-domain
// filters and for small closed-form systems.
inline ComplexMatrix inverse(const ComplexMatrix &a) {
    const std::size_t n = a.rows();
    if (n == 0 || a.cols() != n)
        throw std::invalid_argument("inverse: matrix must be square and nonempty");
    ComplexMatrix w = a;
    ComplexMatrix inv = ComplexMatrix::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        double best = std::abs(w(col, col));
        for (std::size_t r = col + 1; r < n; ++r) {
            const double m = std::abs(w(r, col));
            if (m > best) {
                best = m;
                piv = r;
            }
        }
        if (best < 1e-14 * std::max(1.0, a.frobenius_norm()))
            throw std::invalid_argument("inverse: matrix is singular to working precision");
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(w(piv, j), w(col, j));
                std::swap(inv(piv, j), inv(col, j));
            }
        }
        const cdouble d = w(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            w(col, j) /= d;
            inv(col, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col)
                continue;
            const cdouble f = w(r, col);
            if (f == cdouble(0.0, 0.0))
                continue;
            for (std::size_t j = 0; j < n; ++j) {
                w(r, j) -= f * w(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

// Composite-Simpson quadrature of a complex-valued integrand over an angular
// interval. `nodes` counts subintervals and is rounded up to the next even
// number; the caller-facing default kDefaultQuadratureNodes satisfies a
// doubling-stability requirement of 1e-8 for the correlation integrands used
// in this library.
template <typename F>
cdouble integrate_periodic(F &&f, double lower, double upper,
                           std::size_t nodes = kDefaultQuadratureNodes) {
    if (nodes < 2)
        throw std::invalid_argument("integrate_periodic: at least 2 subintervals required");
    if (!(lower < upper))
        throw std::invalid_argument("integrate_periodic: lower bound must be below upper bound");
    if (nodes % 2 != 0)
        ++nodes;
    const double h = (upper - lower) / static_cast<double>(nodes);
    cdouble acc = f(lower) + f(upper);
    for (std::size_t k = 1; k < nodes; ++k) {
        const double x = lower + h * static_cast<double>(k);
        acc += (k % 2 == 1 ? 4.0 : 2.0) * f(x);
    }
    return acc * (h / 3.0);
}

}  // namespace turbomimo
