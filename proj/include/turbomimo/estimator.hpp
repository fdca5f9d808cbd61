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

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "turbomimo/channel.hpp"
#include "turbomimo/complex_matrix.hpp"
#include "turbomimo/numerics.hpp"
#include "turbomimo/parallel.hpp"

namespace turbomimo {

// Vertical/horizontal weighting matrices used by the subspace estimators.
// sigma2 records the noise variance the pair was built (or trained) for, in
// the same per-complex-element units as ChannelBatch::N0.
struct FilterPair {
    ComplexMatrix W_v;  // M x M
    ComplexMatrix W_h;  // N x N
    double sigma2 = 0.0;
    enum class Source { closed_form, learned } source = Source::closed_form;
};

// MMSE shrinkage filter W = R (R + sigma2 I)^-1, evaluated in the eigenbasis
// of R so the result is exactly Hermitian with eigenvalues in [0, 1). For
// sigma2 = 0 the expression degenerates to the orthogonal projection onto
// range(R) (pseudo-inverse limit); `degenerate` reports when that path was
// taken.
inline ComplexMatrix genie_filter(const ComplexMatrix &R, double sigma2,
                                  bool *degenerate = nullptr) {
    if (sigma2 < 0.0 || !std::isfinite(sigma2))
        throw std::invalid_argument("genie_filter: noise variance must be finite and >= 0");
    if (degenerate)
        *degenerate = (sigma2 == 0.0);
    if (sigma2 == 0.0) {
        const double rank_tol = 1e-12 * std::max(1.0, R.frobenius_norm());
        return hermitian_spectral_map(R, [rank_tol](double lambda) {
            if (lambda < kPsdClampThreshold)
                throw std::invalid_argument("genie_filter: covariance is not positive semidefinite");
            return lambda > rank_tol ? 1.0 : 0.0;
        });
    }
    return hermitian_spectral_map(R, [sigma2](double lambda) {
        if (lambda < kPsdClampThreshold)
            throw std::invalid_argument("genie_filter: covariance is not positive semidefinite");
        const double l = lambda > 0.0 ? lambda : 0.0;
        return l / (l + sigma2);
    });
}

// Per-subspace MMSE filters W_v = R_v (R_v + sigma2 I)^-1 and likewise for
// W_h. Row energies of both filters lie in [0, 1] (shrinkage property).
inline FilterPair subspace_filters(const CovarianceSet &cov, double sigma2) {
    if (!(sigma2 > 0.0))
        throw std::invalid_argument("subspace_filters: noise variance must be positive");
    FilterPair fp;
    fp.W_v = genie_filter(cov.R_v, sigma2);
    fp.W_h = genie_filter(cov.R_h, sigma2);
    fp.sigma2 = sigma2;
    fp.source = FilterPair::Source::closed_form;
    return fp;
}

// Arithmetic-mean combining of the two subspace estimates:
// 0.5 * (W_v Y + Y W_h^T). In vectorized form this is
// 0.5 (I_N kron W_v + W_h kron I_M) vec(Y).
inline ComplexMatrix estimate_arithmetic(const FilterPair &fp, const ComplexMatrix &Y) {
    if (fp.W_v.cols() != Y.rows() || fp.W_h.cols() != Y.cols())
        throw std::invalid_argument("estimate_arithmetic: filter/observation dimension mismatch");
    ComplexMatrix est = fp.W_v * Y;
    const ComplexMatrix horiz = Y * fp.W_h.transpose();
    est += horiz;
    est *= cdouble(0.5, 0.0);
    return est;
}

// Hermitian square-root factors for geometric-mean combining. Learned filters
// are only approximately Hermitian, so they are symmetrized first; a filter
// that is still indefinite afterwards is rejected.
struct GeometricFactors {
    ComplexMatrix S_v;  // W_v^0.5
    ComplexMatrix S_h;  // W_h^0.5
};

inline GeometricFactors geometric_factors(const FilterPair &fp) {
    auto principal_root = [&fp](const ComplexMatrix &W, const char *name) {
        ComplexMatrix sym(W.rows(), W.cols());
        for (std::size_t i = 0; i < W.rows(); ++i)
            for (std::size_t j = 0; j < W.cols(); ++j)
                sym(i, j) = 0.5 * (W(i, j) + std::conj(W(j, i)));
        try {
            return hermitian_sqrt(sym);
        } catch (const std::invalid_argument &) {
            throw std::invalid_argument(
                std::string("geometric_factors: ") + name +
                " is not positive semidefinite after symmetrization; geometric combining "
                "requires a PSD filter");
        }
    };
    GeometricFactors gf;
    gf.S_v = principal_root(fp.W_v, "W_v");
    gf.S_h = principal_root(fp.W_h, "W_h");
    return gf;
}

inline ComplexMatrix estimate_geometric(const GeometricFactors &gf, const ComplexMatrix &Y) {
    if (gf.S_v.cols() != Y.rows() || gf.S_h.cols() != Y.cols())
        throw std::invalid_argument("estimate_geometric: filter/observation dimension mismatch");
    return gf.S_v * Y * gf.S_h.transpose();
}

// Geometric-mean combining W_v^0.5 Y (W_h^0.5)^T; in vectorized form
// (W_h^0.5 kron W_v^0.5) vec(Y).
inline ComplexMatrix estimate_geometric(const FilterPair &fp, const ComplexMatrix &Y) {
    return estimate_geometric(geometric_factors(fp), Y);
}

// Least-squares baseline: with unit-power pilots the observation itself.
inline ComplexMatrix estimate_ls(const ComplexMatrix &Y) { return Y; }

// Full-array MMSE estimate unvec(W vec(Y)) for a given MN x MN filter.
inline ComplexMatrix apply_full_filter(const ComplexMatrix &W, const ComplexMatrix &Y) {
    if (W.rows() != Y.rows() * Y.cols() || W.cols() != W.rows())
        throw std::invalid_argument("apply_full_filter: filter/observation dimension mismatch");
    return unvec(matvec(W, vec(Y)), Y.rows(), Y.cols());
}

// Closed-form stand-in for a full-array learned estimator: the genie MMSE
// filter of the full covariance applied to vec(Y). Intended for small arrays
// (it rebuilds the MN x MN filter on every call).
inline ComplexMatrix ordinary_oracle(const ComplexMatrix &R_full, double sigma2,
                                     const ComplexMatrix &Y) {
    return apply_full_filter(genie_filter(R_full, sigma2), Y);
}

// Normalized mean-square error over a batch, in dB:
// 10 log10( sum_k ||est_k - truth_k||_F^2 / sum_k ||truth_k||_F^2 ).
// Perfect estimates are clamped at -300 dB. Deterministic for any worker
// count (fixed-block partial sums combined in order).
inline double nmse(const std::vector<ComplexMatrix> &estimates,
                   const std::vector<ComplexMatrix> &truths) {
    if (estimates.size() != truths.size() || truths.empty())
        throw std::invalid_argument("nmse: batch sizes must match and be nonempty");
    struct Acc {
        double err = 0.0;
        double pow = 0.0;
    };
    const Acc total = parallel_block_reduce<Acc>(
        truths.size(), Acc{},
        [&](std::size_t lo, std::size_t hi) {
            Acc a;
            for (std::size_t k = lo; k < hi; ++k) {
                const ComplexMatrix &e = estimates[k];
                const ComplexMatrix &t = truths[k];
                if (e.rows() != t.rows() || e.cols() != t.cols())
                    throw std::invalid_argument("nmse: estimate/truth dimension mismatch");
                for (std::size_t n = 0; n < t.size(); ++n) {
                    a.err += std::norm(e.data()[n] - t.data()[n]);
                    a.pow += std::norm(t.data()[n]);
                }
            }
            return a;
        },
        [](Acc a, const Acc &b) {
            a.err += b.err;
            a.pow += b.pow;
            return a;
        });
    if (total.pow <= 0.0)
        throw std::invalid_argument("nmse: truth batch has zero power");
    const double ratio = total.err / total.pow;
    return ratio < 1e-30 ? -300.0 : 10.0 * std::log10(ratio);
}

inline double nmse(const ComplexMatrix &estimate, const ComplexMatrix &truth) {
    return nmse(std::vector<ComplexMatrix>{estimate}, std::vector<ComplexMatrix>{truth});
}

// Relative complexity of one full-array learned estimator versus the two
// subspace estimators: M^4 N^4 / (M N^4 + N M^4).
inline double cost_saving(std::size_t M, std::size_t N) {
    if (M < 1 || N < 1)
        throw std::invalid_argument("cost_saving: M and N must be at least 1");
    const double m = static_cast<double>(M);
    const double n = static_cast<double>(N);
    return (m * m * m * m) * (n * n * n * n) / (m * n * n * n * n + n * m * m * m * m);
}

// ---------------------------------------------------------------------------
// Deviation of the combined subspace estimators from the full genie filter,
// measured through the quadratic (Gram) forms
//   D_a = (1/MN) || (0.5(A + B) - W) y ||^2,   A = I_N kron W_v, B = W_h kron I_M
//   D_g = (1/MN) || (A^0.5 B^0.5  - W) y ||^2
// together with the decomposition matrices
//   L = (A^0.5 - B^0.5)^2, P = A + B - 2W, Q = 2 (A^0.5 B^0.5 - W).
// Because A and B commute and all factors are Hermitian, the anticommutator
// identity X^2 - Y^2 = ((X-Y)(X+Y) + (X+Y)(X-Y)) / 2 with X - Y = L/2 and
// X + Y = (P + Q)/2 gives the exact difference
//   D_a - D_g = (1 / 4MN) Re{ y^H L (P + Q) y }.
// ---------------------------------------------------------------------------
struct DeviationReport {
    double D_a = 0.0;
    double D_g = 0.0;
    double difference = 0.0;              // D_a - D_g
    double decomposition_value = 0.0;     // (1/4MN) Re{y^H L (P+Q) y}
    double decomposition_residual = 0.0;  // |difference - decomposition_value|
    ComplexMatrix L;
    ComplexMatrix P;
    ComplexMatrix Q;
};

inline DeviationReport deviation_metrics(const FilterPair &fp, const ComplexMatrix &W_genie,
                                         const ComplexMatrix &Y) {
    const std::size_t M = Y.rows();
    const std::size_t N = Y.cols();
    const std::size_t MN = M * N;
    if (MN > kMaxFullCovarianceDim)
        throw std::invalid_argument("deviation_metrics: MN too large for full-operator analysis");
    if (fp.W_v.rows() != M || fp.W_h.rows() != N || W_genie.rows() != MN || W_genie.cols() != MN)
        throw std::invalid_argument("deviation_metrics: dimension mismatch");

    const GeometricFactors gf = geometric_factors(fp);
    const ComplexMatrix I_M = ComplexMatrix::identity(M);
    const ComplexMatrix I_N = ComplexMatrix::identity(N);
    const ComplexMatrix A = kron(I_N, fp.W_v);
    const ComplexMatrix B = kron(fp.W_h, I_M);
    const ComplexMatrix A05 = kron(I_N, gf.S_v);
    const ComplexMatrix B05 = kron(gf.S_h, I_M);
    const ComplexMatrix G = kron(gf.S_h, gf.S_v);

    const std::vector<cdouble> y = vec(Y);
    const double inv_mn = 1.0 / static_cast<double>(MN);

    auto gram = [&](const ComplexMatrix &op) {
        const std::vector<cdouble> r = matvec(op, y);
        double s = 0.0;
        for (const cdouble &v : r)
            s += std::norm(v);
        return s * inv_mn;
    };

    DeviationReport rep;
    {
        ComplexMatrix Ma = A + B;
        Ma *= cdouble(0.5, 0.0);
        Ma -= W_genie;
        rep.D_a = gram(Ma);
    }
    {
        ComplexMatrix Mg = G;
        Mg -= W_genie;
        rep.D_g = gram(Mg);
    }
    rep.difference = rep.D_a - rep.D_g;

    ComplexMatrix D = A05;
    D -= B05;
    rep.L = D * D;
    rep.P = A + B;
    rep.P -= W_genie;
    rep.P -= W_genie;
    rep.Q = G;
    rep.Q -= W_genie;
    rep.Q *= cdouble(2.0, 0.0);

    ComplexMatrix PQ = rep.P + rep.Q;
    const std::vector<cdouble> u = matvec(PQ, y);
    const std::vector<cdouble> w = matvec(rep.L, u);
    rep.decomposition_value = std::real(vdot(y, w)) * inv_mn * 0.25;
    rep.decomposition_residual = std::abs(rep.difference - rep.decomposition_value);
    return rep;
}

// ---------------------------------------------------------------------------
// Post-combining noise diagnostics. For element (i,j) with row energies
//   x = sum_m |W_v(i,m)|^2,  y = sum_n |W_h(j,n)|^2,  d = Re{W_v(i,i) conj(W_h(j,j))},
// the arithmetic-combined noise variance predicted from the filter entries is
//   VAR[Z_a(i,j)] = sigma^2 ((x + y)/2 + d),  sigma^2 = N0/2 per dimension,
// bracketed by rho N0 / 4 < VAR <= N0 with rho = x + y. The normalized
// variance z = VAR/sigma^2 satisfies z = (x+y)/2 + d, and combining is
// "effective" for an element when additionally z < 2x and z < 2y (the
// single-subspace noise levels).
// ---------------------------------------------------------------------------
struct VarianceReport {
    std::size_t M = 0;
    std::size_t N = 0;
    double N0 = 0.0;
    double sigma2 = 0.0;          // N0 / 2, per real dimension
    std::vector<double> var_a;    // measured noise-pathway variance, row-major M x N
    std::vector<double> var_v;    // measured, vertical filter only
    std::vector<double> var_h;    // measured, horizontal filter only
    std::vector<double> x;        // W_v row energy, per element
    std::vector<double> y;        // W_h row energy, per element
    std::vector<double> d;        // diagonal cross term, per element
    std::vector<double> z;        // predicted VAR / sigma^2, per element
    std::vector<double> rho;      // x + y, per element
    std::vector<double> lower;    // rho N0 / 4, per element
    double upper = 0.0;           // N0
    std::vector<bool> effective;  // z < 2x and z < 2y
    double z_identity_residual = 0.0;  // max |z - ((x+y)/2 + d)| over elements
    double fraction_in_bracket = 0.0;  // measured var_a within (lower, upper]
    double fraction_effective = 0.0;
};

inline VarianceReport variance_diagnostics(const FilterPair &fp, const ChannelBatch &batch) {
    const std::size_t M = batch.M;
    const std::size_t N = batch.N;
    if (fp.W_v.rows() != M || fp.W_h.rows() != N)
        throw std::invalid_argument("variance_diagnostics: filter/batch dimension mismatch");
    if (batch.K == 0)
        throw std::invalid_argument("variance_diagnostics: empty batch");

    VarianceReport rep;
    rep.M = M;
    rep.N = N;
    rep.N0 = batch.N0;
    rep.sigma2 = 0.5 * batch.N0;
    rep.upper = batch.N0;
    const std::size_t E = M * N;
    rep.var_a.assign(E, 0.0);
    rep.var_v.assign(E, 0.0);
    rep.var_h.assign(E, 0.0);

    // Measured variances come from the noise pathway alone: the filters are
    // applied to the pure noise Z = Y - H of each paired observation.
    struct Acc {
        std::vector<double> a, v, h;
    };
    Acc init;
    init.a.assign(E, 0.0);
    init.v.assign(E, 0.0);
    init.h.assign(E, 0.0);
    const Acc sum = parallel_block_reduce<Acc>(
        batch.K, init,
        [&](std::size_t lo, std::size_t hi) {
            Acc acc;
            acc.a.assign(E, 0.0);
            acc.v.assign(E, 0.0);
            acc.h.assign(E, 0.0);
            for (std::size_t k = lo; k < hi; ++k) {
                ComplexMatrix Z = batch.Y[k];
                Z -= batch.H[k];
                const ComplexMatrix zv = fp.W_v * Z;
                const ComplexMatrix zh = Z * fp.W_h.transpose();
                for (std::size_t e = 0; e < E; ++e) {
                    acc.v[e] += std::norm(zv.data()[e]);
                    acc.h[e] += std::norm(zh.data()[e]);
                    acc.a[e] += std::norm(0.5 * (zv.data()[e] + zh.data()[e]));
                }
            }
            return acc;
        },
        [E](Acc a, const Acc &b) {
            for (std::size_t e = 0; e < E; ++e) {
                a.a[e] += b.a[e];
                a.v[e] += b.v[e];
                a.h[e] += b.h[e];
            }
            return a;
        });
    const double inv_k = 1.0 / static_cast<double>(batch.K);
    for (std::size_t e = 0; e < E; ++e) {
        rep.var_a[e] = sum.a[e] * inv_k;
        rep.var_v[e] = sum.v[e] * inv_k;
        rep.var_h[e] = sum.h[e] * inv_k;
    }

    // Predicted coordinates from the realized filter entries.
    std::vector<double> row_energy_v(M, 0.0), row_energy_h(N, 0.0);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t m = 0; m < M; ++m)
            row_energy_v[i] += std::norm(fp.W_v(i, m));
    for (std::size_t j = 0; j < N; ++j)
        for (std::size_t n = 0; n < N; ++n)
            row_energy_h[j] += std::norm(fp.W_h(j, n));

    rep.x.assign(E, 0.0);
    rep.y.assign(E, 0.0);
    rep.d.assign(E, 0.0);
    rep.z.assign(E, 0.0);
    rep.rho.assign(E, 0.0);
    rep.lower.assign(E, 0.0);
    rep.effective.assign(E, false);
    std::size_t n_bracket = 0, n_effective = 0;
    double max_resid = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t e = i * N + j;
            const double x = row_energy_v[i];
            const double y = row_energy_h[j];
            const double d = std::real(fp.W_v(i, i) * std::conj(fp.W_h(j, j)));
            // Predicted variance straight from the per-term sum, then z via
            // normalization; the algebraic identity z = (x+y)/2 + d is
            // re-derived so the report can expose its floating-point residual.
            const double var_pred =
                0.5 * rep.sigma2 * x + 0.5 * rep.sigma2 * y + rep.sigma2 * d;
            const double z = rep.sigma2 > 0.0 ? var_pred / rep.sigma2 : 0.0;
            rep.x[e] = x;
            rep.y[e] = y;
            rep.d[e] = d;
            rep.z[e] = z;
            rep.rho[e] = x + y;
            rep.lower[e] = 0.25 * rep.rho[e] * rep.N0;
            max_resid = std::max(max_resid, std::abs(z - (0.5 * (x + y) + d)));
            const bool eff = (z < 2.0 * x) && (z < 2.0 * y);
            rep.effective[e] = eff;
            if (eff)
                ++n_effective;
            if (rep.var_a[e] > rep.lower[e] && rep.var_a[e] <= rep.upper)
                ++n_bracket;
        }
    }
    rep.z_identity_residual = max_resid;
    rep.fraction_in_bracket = static_cast<double>(n_bracket) / static_cast<double>(E);
    rep.fraction_effective = static_cast<double>(n_effective) / static_cast<double>(E);
    return rep;
}

}  // namespace turbomimo
