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
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "turbomimo/complex_matrix.hpp"
#include "turbomimo/numerics.hpp"
#include "turbomimo/parallel.hpp"
#include "turbomimo/rng.hpp"

namespace turbomimo {

inline constexpr double kPi = 3.14159265358979323846264338327950288;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// Geometry and angular statistics of an M x N rectangular antenna panel.
// Angles are radians; spacing is in wavelengths (half wavelength by default).
struct SpatialConfig {
    std::size_t M = 8;                  // vertical element count
    std::size_t N = 16;                 // horizontal element count
    double spacing = 0.5;               // element spacing in wavelengths
    double spread_v = kPi / 180.0;      // vertical angular spread (rho_v)
    double spread_h = kPi / 90.0;       // horizontal angular spread (rho_h)
    double doa_v = deg2rad(50.0);       // vertical direction of arrival (phi)
    double doa_h = deg2rad(20.0);       // horizontal direction of arrival (theta)
    std::size_t quadrature_nodes = kDefaultQuadratureNodes;

    void validate() const {
        if (M < 1 || N < 1)
            throw std::invalid_argument("SpatialConfig: M and N must be at least 1");
        if (!(spacing > 0.0))
            throw std::invalid_argument("SpatialConfig: spacing must be positive");
        if (!(spread_v > 0.0) || !(spread_h > 0.0))
            throw std::invalid_argument("SpatialConfig: angular spreads must be positive");
        if (!(doa_h > -kPi / 2.0 && doa_h < kPi / 2.0))
            throw std::invalid_argument("SpatialConfig: horizontal DoA must lie in (-pi/2, pi/2)");
        if (!(doa_v > 0.0 && doa_v < kPi))
            throw std::invalid_argument("SpatialConfig: vertical DoA must lie in (0, pi)");
        if (quadrature_nodes < 2)
            throw std::invalid_argument("SpatialConfig: quadrature node count must be at least 2");
    }
};

// Spatial correlation between elements i and j of a uniform linear array under
// a truncated-Laplacian power angular distribution:
//
//   r(i,j) = 1/(sqrt(2) rho) * Int_{-pi}^{pi} exp(-sqrt(2)|p|/rho) *
//            exp(+1i * 2*pi * (j-i) * spacing * sin(doa + p)) dp
//
// The element distance enters only through spacing-in-wavelengths, and the
// signed index difference makes r(i,j) = conj(r(j,i)), so the resulting
// covariance matrices are Hermitian Toeplitz.
inline cdouble spatial_correlation(std::size_t i, std::size_t j, double spread, double doa,
                                   double spacing,
                                   std::size_t nodes = kDefaultQuadratureNodes) {
    if (!(spread > 0.0))
        throw std::invalid_argument("spatial_correlation: spread must be positive");
    const double b = 2.0 * kPi * spacing *
                     (static_cast<double>(j) - static_cast<double>(i));
    const double inv_rho = std::sqrt(2.0) / spread;
    const cdouble integral = integrate_periodic(
        [b, inv_rho, doa](double p) {
            const double mag = std::exp(-std::abs(p) * inv_rho);
            const double phase = b * std::sin(doa + p);
            return cdouble(mag * std::cos(phase), mag * std::sin(phase));
        },
        -kPi, kPi, nodes);
    return integral / (std::sqrt(2.0) * spread);
}

// Vertical/horizontal covariance factors, plus (optionally) the full
// Kronecker-model covariance R_full = R_h kron R_v of the vectorized array.
struct CovarianceSet {
    ComplexMatrix R_v;                    // M x M
    ComplexMatrix R_h;                    // N x N
    std::optional<ComplexMatrix> R_full;  // MN x MN when requested
};

namespace detail {

// Hermitian Toeplitz covariance from one row of lag correlations.
inline ComplexMatrix toeplitz_covariance(std::size_t L, double spread, double doa, double spacing,
                                         std::size_t nodes) {
    std::vector<cdouble> lag(L);
    for (std::size_t k = 0; k < L; ++k)
        lag[k] = spatial_correlation(0, k, spread, doa, spacing, nodes);
    ComplexMatrix R(L, L);
    for (std::size_t i = 0; i < L; ++i) {
        R(i, i) = cdouble(std::real(lag[0]), 0.0);
        for (std::size_t j = i + 1; j < L; ++j) {
            R(i, j) = lag[j - i];
            R(j, i) = std::conj(lag[j - i]);
        }
    }
    return R;
}

}  // namespace detail

inline constexpr std::size_t kMaxFullCovarianceDim = 4096;

inline CovarianceSet build_covariances(const SpatialConfig &cfg, bool include_full = false) {
    cfg.validate();
    CovarianceSet cov;
    cov.R_v = detail::toeplitz_covariance(cfg.M, cfg.spread_v, cfg.doa_v, cfg.spacing,
                                          cfg.quadrature_nodes);
    cov.R_h = detail::toeplitz_covariance(cfg.N, cfg.spread_h, cfg.doa_h, cfg.spacing,
                                          cfg.quadrature_nodes);
    if (include_full) {
        if (cfg.M * cfg.N > kMaxFullCovarianceDim)
            throw std::invalid_argument(
                "build_covariances: full covariance requested for MN > 4096 (memory guard)");
        cov.R_full = kron(cov.R_h, cov.R_v);
    }
    return cov;
}

// A batch of K channel realizations with paired noisy observations.
// N0 is the complex per-element noise power (two real dimensions of
// variance N0/2 each).
struct ChannelBatch {
    std::size_t K = 0;
    std::size_t M = 0;
    std::size_t N = 0;
    std::vector<ComplexMatrix> H;
    std::vector<ComplexMatrix> Y;
    double N0 = 0.0;
    double snr_db = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

// Substream tags so channel fading and additive noise can be redrawn
// independently from the same user seed.
inline constexpr std::uint64_t kStreamChannel = 0x48;  // fading draws
inline constexpr std::uint64_t kStreamNoise = 0x5A;    // additive noise draws

}  // namespace detail

// Draws K correlated Rayleigh channels H = S_v H_w S_h^T from precomputed
// Hermitian square roots S_v, S_h of the covariance factors. H_w entries are
// i.i.d. circularly-symmetric complex Gaussian with unit power. Sample k+
// sample_offset is a pure function of the seed, enabling streamed generation.
inline std::vector<ComplexMatrix> sample_channels_from_roots(const ComplexMatrix &sqrt_R_v,
                                                             const ComplexMatrix &sqrt_R_h,
                                                             std::size_t K, std::uint64_t seed,
                                                             std::uint64_t sample_offset = 0) {
    if (K < 1)
        throw std::invalid_argument("sample_channels: K must be at least 1");
    const std::size_t M = sqrt_R_v.rows();
    const std::size_t N = sqrt_R_h.rows();
    const RandomStream stream(seed, detail::kStreamChannel);

    // Split-complex planes of the left root and of the right root transposed;
    // the per-matrix products A hw_k B^T then run batched across each worker
    // block as four real matrix products per stage.
    std::vector<double> a_re, a_im;
    detail::split_planes(sqrt_R_v, a_re, a_im);
    std::vector<double> bt_re(N * N), bt_im(N * N);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            bt_re[i * N + j] = sqrt_R_h(j, i).real();
            bt_im[i * N + j] = sqrt_R_h(j, i).imag();
        }

    std::vector<ComplexMatrix> out(K);
    parallel_block_for(K, [&](std::size_t lo, std::size_t hi) {
        const std::size_t nb = hi - lo;
        const std::size_t W = N * nb;  // width of the horizontally stacked block
        std::vector<double> hw_re(M * W), hw_im(M * W);
        for (std::size_t k = lo; k < hi; ++k) {
            const std::uint64_t base = (sample_offset + k) * static_cast<std::uint64_t>(M * N);
            const std::size_t col0 = (k - lo) * N;
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < N; ++j) {
                    const cdouble z = stream.cnormal(base + i * N + j);
                    hw_re[i * W + col0 + j] = z.real();
                    hw_im[i * W + col0 + j] = z.imag();
                }
        }
        // Stage 1: C = A HW with every matrix side by side, (M x M)(M x W).
        std::vector<double> c_re(M * W, 0.0), c_im(M * W, 0.0);
        detail::gemm_acc(c_re.data(), a_re.data(), hw_re.data(), M, M, W, 1.0);
        detail::gemm_acc(c_re.data(), a_im.data(), hw_im.data(), M, M, W, -1.0);
        detail::gemm_acc(c_im.data(), a_re.data(), hw_im.data(), M, M, W, 1.0);
        detail::gemm_acc(c_im.data(), a_im.data(), hw_re.data(), M, M, W, 1.0);
        // Repack to matrices stacked vertically for the right product.
        std::vector<double> v_re(nb * M * N), v_im(nb * M * N);
        for (std::size_t k = 0; k < nb; ++k)
            for (std::size_t i = 0; i < M; ++i) {
                const std::size_t src = i * W + k * N;
                const std::size_t dst = (k * M + i) * N;
                for (std::size_t j = 0; j < N; ++j) {
                    v_re[dst + j] = c_re[src + j];
                    v_im[dst + j] = c_im[src + j];
                }
            }
        // Stage 2: O = V B^T, ((nb M) x N)(N x N).
        std::vector<double> o_re(nb * M * N, 0.0), o_im(nb * M * N, 0.0);
        detail::gemm_acc(o_re.data(), v_re.data(), bt_re.data(), nb * M, N, N, 1.0);
        detail::gemm_acc(o_re.data(), v_im.data(), bt_im.data(), nb * M, N, N, -1.0);
        detail::gemm_acc(o_im.data(), v_re.data(), bt_im.data(), nb * M, N, N, 1.0);
        detail::gemm_acc(o_im.data(), v_im.data(), bt_re.data(), nb * M, N, N, 1.0);
        for (std::size_t k = lo; k < hi; ++k) {
            out[k] = ComplexMatrix(M, N);
            cdouble *dst = out[k].data();
            const double *src_re = o_re.data() + (k - lo) * M * N;
            const double *src_im = o_im.data() + (k - lo) * M * N;
            for (std::size_t e = 0; e < M * N; ++e)
                dst[e] = cdouble(src_re[e], src_im[e]);
        }
    });
    return out;
}

inline std::vector<ComplexMatrix> sample_channels(const CovarianceSet &cov, std::size_t K,
                                                  std::uint64_t seed) {
    return sample_channels_from_roots(hermitian_sqrt(cov.R_v), hermitian_sqrt(cov.R_h), K, seed);
}

// Adds white complex Gaussian noise at per-element power N0 = 10^(-snr_db/10).
// The unit-power channel convention makes the LS estimator's NMSE equal
// -snr_db. snr_db = +infinity yields a noiseless batch.
inline ChannelBatch observe(std::vector<ComplexMatrix> H, double snr_db, std::uint64_t seed,
                            std::uint64_t sample_offset = 0) {
    if (H.empty())
        throw std::invalid_argument("observe: empty channel list");
    if (std::isnan(snr_db))
        throw std::invalid_argument("observe: snr_db must not be NaN");
    ChannelBatch batch;
    batch.K = H.size();
    batch.M = H.front().rows();
    batch.N = H.front().cols();
    batch.snr_db = snr_db;
    batch.N0 = std::isinf(snr_db) && snr_db > 0 ? 0.0 : std::pow(10.0, -snr_db / 10.0);
    batch.seed = seed;
    batch.Y.resize(batch.K);
    const double amp = std::sqrt(batch.N0);
    const RandomStream stream(seed, detail::kStreamNoise);
    const std::size_t M = batch.M, N = batch.N;
    parallel_block_for(batch.K, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k) {
            ComplexMatrix y = H[k];
            if (amp > 0.0) {
                const std::uint64_t base =
                    (sample_offset + k) * static_cast<std::uint64_t>(M * N);
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t j = 0; j < N; ++j)
                        y(i, j) += amp * stream.cnormal(base + i * N + j);
            }
            batch.Y[k] = std::move(y);
        }
    });
    batch.H = std::move(H);
    return batch;
}

// The two 1D views of an observation: columns of Y are the vertical slices,
// columns of Y^T are the horizontal slices.
struct SubspaceViews {
    ComplexMatrix vertical;    // M x N, columns are M-vectors
    ComplexMatrix horizontal;  // N x M, columns are N-vectors
};

inline SubspaceViews stack_subspaces(const ComplexMatrix &Y) {
    return SubspaceViews{Y, Y.transpose()};
}

// ---------------------------------------------------------------------------
// Batch file format: fixed header followed by row-major interleaved
// (real, imag) doubles for all H matrices, then all Y matrices. Native
// little-endian byte order.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kBatchMagic[8] = {'T', 'M', 'B', 'A', 'T', 'C', 'H', '\0'};
inline constexpr std::uint32_t kBatchVersion = 1;

struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f)
            std::fclose(f);
    }
};

inline void write_exact(std::FILE *f, const void *p, std::size_t bytes, const char *what) {
    if (std::fwrite(p, 1, bytes, f) != bytes)
        throw std::runtime_error(std::string("write failed: ") + what);
}

inline void read_exact(std::FILE *f, void *p, std::size_t bytes, const char *what) {
    if (std::fread(p, 1, bytes, f) != bytes)
        throw std::runtime_error(std::string("read failed: ") + what);
}

inline void write_matrices(std::FILE *f, const std::vector<ComplexMatrix> &ms, const char *what) {
    std::vector<double> buf;
    for (const ComplexMatrix &m : ms) {
        buf.resize(2 * m.size());
        for (std::size_t k = 0; k < m.size(); ++k) {
            buf[2 * k] = std::real(m.data()[k]);
            buf[2 * k + 1] = std::imag(m.data()[k]);
        }
        write_exact(f, buf.data(), buf.size() * sizeof(double), what);
    }
}

inline void read_matrices(std::FILE *f, std::vector<ComplexMatrix> &ms, std::size_t K,
                          std::size_t M, std::size_t N, const char *what) {
    ms.assign(K, ComplexMatrix(M, N));
    std::vector<double> buf(2 * M * N);
    for (ComplexMatrix &m : ms) {
        read_exact(f, buf.data(), buf.size() * sizeof(double), what);
        for (std::size_t k = 0; k < m.size(); ++k) {
            m.data()[k] = cdouble(buf[2 * k], buf[2 * k + 1]);
            if (!std::isfinite(buf[2 * k]) || !std::isfinite(buf[2 * k + 1]))
                throw std::runtime_error(std::string("non-finite value in batch file: ") + what);
        }
    }
}

}  // namespace detail

inline void write_batch(const std::string &path, const ChannelBatch &batch) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f)
        throw std::runtime_error("write_batch: cannot open " + path);
    detail::write_exact(f.get(), detail::kBatchMagic, sizeof(detail::kBatchMagic), "magic");
    const std::uint32_t version = detail::kBatchVersion;
    const std::uint32_t m32 = static_cast<std::uint32_t>(batch.M);
    const std::uint32_t n32 = static_cast<std::uint32_t>(batch.N);
    const std::uint64_t k64 = batch.K;
    detail::write_exact(f.get(), &version, sizeof(version), "version");
    detail::write_exact(f.get(), &m32, sizeof(m32), "M");
    detail::write_exact(f.get(), &n32, sizeof(n32), "N");
    detail::write_exact(f.get(), &k64, sizeof(k64), "K");
    detail::write_exact(f.get(), &batch.N0, sizeof(batch.N0), "N0");
    detail::write_exact(f.get(), &batch.seed, sizeof(batch.seed), "seed");
    detail::write_matrices(f.get(), batch.H, "H data");
    detail::write_matrices(f.get(), batch.Y, "Y data");
}

inline ChannelBatch read_batch(const std::string &path) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f)
        throw std::runtime_error("read_batch: cannot open " + path);
    char magic[8];
    detail::read_exact(f.get(), magic, sizeof(magic), "magic");
    if (std::memcmp(magic, detail::kBatchMagic, sizeof(magic)) != 0)
        throw std::runtime_error("read_batch: not a channel batch file: " + path);
    std::uint32_t version = 0, m32 = 0, n32 = 0;
    std::uint64_t k64 = 0;
    ChannelBatch batch;
    detail::read_exact(f.get(), &version, sizeof(version), "version");
    if (version != detail::kBatchVersion)
        throw std::runtime_error("read_batch: unsupported version in " + path);
    detail::read_exact(f.get(), &m32, sizeof(m32), "M");
    detail::read_exact(f.get(), &n32, sizeof(n32), "N");
    detail::read_exact(f.get(), &k64, sizeof(k64), "K");
    detail::read_exact(f.get(), &batch.N0, sizeof(batch.N0), "N0");
    detail::read_exact(f.get(), &batch.seed, sizeof(batch.seed), "seed");
    if (m32 == 0 || n32 == 0 || k64 == 0 || !std::isfinite(batch.N0) || batch.N0 < 0.0)
        throw std::runtime_error("read_batch: invalid header in " + path);
    batch.M = m32;
    batch.N = n32;
    batch.K = k64;
    batch.snr_db = batch.N0 > 0.0 ? -10.0 * std::log10(batch.N0)
                                  : std::numeric_limits<double>::infinity();
    detail::read_matrices(f.get(), batch.H, batch.K, batch.M, batch.N, "H data");
    detail::read_matrices(f.get(), batch.Y, batch.K, batch.M, batch.N, "Y data");
    return batch;
}

}  // namespace turbomimo
