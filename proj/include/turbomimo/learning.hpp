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
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "turbomimo/channel.hpp"
#include "turbomimo/complex_matrix.hpp"
#include "turbomimo/estimator.hpp"
#include "turbomimo/numerics.hpp"
#include "turbomimo/rng.hpp"

namespace turbomimo {

// Which 1D view of the observations a model estimates.
enum class Subspace : std::uint8_t { vertical = 0, horizontal = 1 };

inline const char *subspace_name(Subspace s) {
    return s == Subspace::vertical ? "vertical" : "horizontal";
}

// ---------------------------------------------------------------------------
// Slice handling: a SliceBlock is a packed list of equal-length complex
// vectors (columns of Y for the vertical subspace, rows for the horizontal).
// ---------------------------------------------------------------------------
struct SliceBlock {
    std::size_t L = 0;
    std::size_t count = 0;
    std::vector<cdouble> data;  // slice s occupies [s*L, (s+1)*L)

    const cdouble *slice(std::size_t s) const { return data.data() + s * L; }
    cdouble *slice(std::size_t s) { return data.data() + s * L; }
};

inline SliceBlock gather_slices(const std::vector<ComplexMatrix> &mats, Subspace which,
                                std::size_t first, std::size_t last) {
    SliceBlock b;
    last = std::min(last, mats.size());
    if (first >= last)
        return b;
    const std::size_t M = mats[first].rows();
    const std::size_t N = mats[first].cols();
    b.L = which == Subspace::vertical ? M : N;
    b.count = (last - first) * (which == Subspace::vertical ? N : M);
    b.data.resize(b.L * b.count);
    std::size_t s = 0;
    for (std::size_t k = first; k < last; ++k) {
        const ComplexMatrix &m = mats[k];
        if (which == Subspace::vertical) {
            for (std::size_t j = 0; j < N; ++j, ++s) {
                cdouble *dst = b.slice(s);
                for (std::size_t i = 0; i < M; ++i)
                    dst[i] = m(i, j);
            }
        } else {
            for (std::size_t i = 0; i < M; ++i, ++s) {
                cdouble *dst = b.slice(s);
                for (std::size_t j = 0; j < N; ++j)
                    dst[j] = m(i, j);
            }
        }
    }
    return b;
}

inline SliceBlock gather_slices(const std::vector<ComplexMatrix> &mats, Subspace which) {
    return gather_slices(mats, which, 0, mats.size());
}

namespace detail {

// Split-complex planes of a slice block: real and imaginary parts in separate
// contiguous arrays, slice-major. The slice kernels below then run as plain
// real fused-multiply-add loops over contiguous doubles, which the compiler
// vectorizes far better than interleaved complex arithmetic.
struct SplitPlanes {
    std::size_t L = 0;
    std::size_t count = 0;
    std::vector<double> re, im;

    void load(const SliceBlock &b) {
        L = b.L;
        count = b.count;
        re.resize(b.data.size());
        im.resize(b.data.size());
        const cdouble *p = b.data.data();
        for (std::size_t k = 0; k < b.data.size(); ++k) {
            re[k] = p[k].real();
            im[k] = p[k].imag();
        }
    }
};

// Applies the filter W to every slice: F(s,:) = W y_s, written as four real
// products F = Y W^T on the split planes (W^T planes passed in, row-major).
inline void filter_slices(const SplitPlanes &Y, const std::vector<double> &wt_re,
                          const std::vector<double> &wt_im, std::vector<double> &f_re,
                          std::vector<double> &f_im) {
    const std::size_t L = Y.L;
    f_re.assign(Y.re.size(), 0.0);
    f_im.assign(Y.im.size(), 0.0);
    gemm_acc(f_re.data(), Y.re.data(), wt_re.data(), Y.count, L, L, 1.0);
    gemm_acc(f_re.data(), Y.im.data(), wt_im.data(), Y.count, L, L, -1.0);
    gemm_acc(f_im.data(), Y.im.data(), wt_re.data(), Y.count, L, L, 1.0);
    gemm_acc(f_im.data(), Y.re.data(), wt_im.data(), Y.count, L, L, 1.0);
}

// Transposed split planes of a square filter: wt(j,i) = W(i,j).
inline void split_filter_t(const ComplexMatrix &W, std::vector<double> &wt_re,
                           std::vector<double> &wt_im) {
    const std::size_t L = W.rows();
    wt_re.resize(L * L);
    wt_im.resize(L * L);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
            wt_re[j * L + i] = W(i, j).real();
            wt_im[j * L + i] = W(i, j).imag();
        }
}

// Accumulates sum_s a_s b_s^H over split planes into L x L planes:
// acc_re(i,j) += ar(i) br(j) + ai(i) bi(j), acc_im(i,j) += ai(i) br(j) - ar(i) bi(j).
inline void outer_conj_acc(const SplitPlanes &A, const SplitPlanes &B, std::vector<double> &acc_re,
                           std::vector<double> &acc_im) {
    const std::size_t L = A.L;
    acc_re.assign(L * L, 0.0);
    acc_im.assign(L * L, 0.0);
    for (std::size_t s = 0; s < A.count; ++s) {
        const double *ar = A.re.data() + s * L;
        const double *ai = A.im.data() + s * L;
        const double *br = B.re.data() + s * L;
        const double *bi = B.im.data() + s * L;
        for (std::size_t i = 0; i < L; ++i) {
            const double xr = ar[i];
            const double xi = ai[i];
            double *rr = acc_re.data() + i * L;
            double *ri = acc_im.data() + i * L;
            for (std::size_t j = 0; j < L; ++j) {
                rr[j] += xr * br[j] + xi * bi[j];
                ri[j] += xi * br[j] - xr * bi[j];
            }
        }
    }
}

}  // namespace detail

// Sample covariance (1/count) sum_s v_s v_s^H; Hermitian PSD by construction.
inline ComplexMatrix sample_covariance(const SliceBlock &slices) {
    if (slices.count == 0 || slices.L == 0)
        throw std::invalid_argument("sample_covariance: at least one slice required");
    const std::size_t L = slices.L;
    detail::SplitPlanes Y;
    Y.load(slices);
    std::vector<double> acc_re, acc_im;
    detail::outer_conj_acc(Y, Y, acc_re, acc_im);
    const double inv = 1.0 / static_cast<double>(slices.count);
    ComplexMatrix R(L, L);
    for (std::size_t i = 0; i < L; ++i) {
        R(i, i) = cdouble(acc_re[i * L + i] * inv, 0.0);
        for (std::size_t j = i + 1; j < L; ++j) {
            R(i, j) = cdouble(acc_re[i * L + j] * inv, acc_im[i * L + j] * inv);
            R(j, i) = std::conj(R(i, j));
        }
    }
    return R;
}

inline ComplexMatrix sample_covariance(const std::vector<std::vector<cdouble>> &slices) {
    if (slices.empty())
        throw std::invalid_argument("sample_covariance: at least one slice required");
    SliceBlock b;
    b.L = slices.front().size();
    b.count = slices.size();
    b.data.reserve(b.L * b.count);
    for (const auto &v : slices) {
        if (v.size() != b.L)
            throw std::invalid_argument("sample_covariance: slices must share one length");
        b.data.insert(b.data.end(), v.begin(), v.end());
    }
    return sample_covariance(b);
}

// ---------------------------------------------------------------------------
// Real encoding of an L x L complex matrix as a length-2L^2 vector:
// real parts in row-major order, then imaginary parts in row-major order.
// ---------------------------------------------------------------------------
inline std::vector<double> encode(const ComplexMatrix &R) {
    const std::size_t L2 = R.rows() * R.cols();
    std::vector<double> x(2 * L2);
    for (std::size_t k = 0; k < L2; ++k) {
        x[k] = std::real(R.data()[k]);
        x[L2 + k] = std::imag(R.data()[k]);
    }
    return x;
}

inline ComplexMatrix decode(const std::vector<double> &x, std::size_t L) {
    if (x.size() != 2 * L * L)
        throw std::invalid_argument("decode: vector length does not match 2 L^2");
    ComplexMatrix R(L, L);
    const std::size_t L2 = L * L;
    for (std::size_t k = 0; k < L2; ++k)
        R.data()[k] = cdouble(x[k], x[L2 + k]);
    return R;
}

// ---------------------------------------------------------------------------
// Model and optimizer configuration.
// ---------------------------------------------------------------------------
struct TrainConfig {
    double lr = 0.009;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::size_t window = 256;      // observations per sample-covariance input
    std::size_t batch_size = 1;    // windows consumed per optimizer step
    std::size_t max_steps = 780;   // ~2e5 observations at the defaults
    double convergence_eps = 0.1;  // relative filter-proximity tolerance
    std::size_t patience = 100;    // plateau steps before an early stop
    // Fraction of the final steps whose parameters are averaged into the
    // returned model. Averaging the tail of the Adam trajectory removes most
    // of the stochastic-gradient jitter around the optimum.
    double tail_average_fraction = 0.25;

    void validate() const {
        if (!(lr > 0.0))
            throw std::invalid_argument("TrainConfig: learning rate must be positive");
        if (!(0.0 < beta1 && beta1 < beta2 && beta2 < 1.0))
            throw std::invalid_argument("TrainConfig: need 0 < beta1 < beta2 < 1");
        if (window < 1 || batch_size < 1 || max_steps < 1)
            throw std::invalid_argument("TrainConfig: window, batch_size, max_steps must be >= 1");
        if (!(tail_average_fraction >= 0.0 && tail_average_fraction < 1.0))
            throw std::invalid_argument("TrainConfig: tail_average_fraction must lie in [0, 1)");
    }
};

struct TrainedMeta {
    Subspace subspace = Subspace::vertical;
    double doa_lo = 0.0, doa_hi = 0.0;  // radians; equal for dedicated training
    double spread = 0.0;                // radians
    double snr_lo_db = 0.0, snr_hi_db = 0.0;
    std::size_t iteration = 0;          // position in a refinement chain
    double residual_var = 0.0;          // mean per-element residual after this stage
    double effective_snr_db = 0.0;      // -10 log10(residual_var)
    double final_loss = 0.0;            // per-slice training loss at the end
    bool converged = false;             // residual-below-noise criterion reached
};

// Two dense layers of width 2L^2 with a ReLU in between, mapping the encoded
// sample covariance of a window to the encoded L x L filter matrix.
struct NnModel {
    std::size_t L = 0;
    std::vector<double> W1, b1, W2, b2;  // row-major [out * dim + in]
    // Adam accumulators, one pair per parameter block.
    std::vector<double> mW1, vW1, mb1, vb1, mW2, vW2, mb2, vb2;
    std::uint64_t adam_t = 0;
    TrainedMeta meta;

    std::size_t dim() const { return 2 * L * L; }
};

// Identity-plus-noise initialization: the target map is a perturbation of
// "shrink the input covariance toward a filter", so starting at the identity
// converges quickly and reliably. Biases start at zero.
inline NnModel make_model(std::size_t L, std::uint64_t seed) {
    if (L < 1)
        throw std::invalid_argument("make_model: L must be at least 1");
    NnModel m;
    m.L = L;
    const std::size_t d = m.dim();
    m.W1.assign(d * d, 0.0);
    m.W2.assign(d * d, 0.0);
    m.b1.assign(d, 0.0);
    m.b2.assign(d, 0.0);
    const RandomStream init(seed, 0x4E4E);  // model-initialization stream
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double perturb = 0.01 * init.normal(i * d + j);
            m.W1[i * d + j] = (i == j ? 1.0 : 0.0) + perturb;
            m.W2[i * d + j] = (i == j ? 1.0 : 0.0) + 0.01 * init.normal(d * d + i * d + j);
        }
    }
    m.mW1.assign(d * d, 0.0);
    m.vW1.assign(d * d, 0.0);
    m.mW2.assign(d * d, 0.0);
    m.vW2.assign(d * d, 0.0);
    m.mb1.assign(d, 0.0);
    m.vb1.assign(d, 0.0);
    m.mb2.assign(d, 0.0);
    m.vb2.assign(d, 0.0);
    return m;
}

namespace detail {

struct ForwardTrace {
    std::vector<double> x;   // encoded input
    std::vector<double> a1;  // pre-activation of layer 1
    std::vector<double> h;   // ReLU output
    std::vector<double> o;   // output layer pre-decode
};

inline void dense_forward(const std::vector<double> &W, const std::vector<double> &b,
                          const std::vector<double> &in, std::vector<double> &out) {
    const std::size_t d = b.size();
    out.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double *row = W.data() + i * d;
        double acc = b[i];
        for (std::size_t j = 0; j < d; ++j)
            acc += row[j] * in[j];
        out[i] = acc;
    }
}

inline ForwardTrace forward_trace(const NnModel &m, const ComplexMatrix &R_hat) {
    if (R_hat.rows() != m.L || R_hat.cols() != m.L)
        throw std::invalid_argument("forward: covariance dimension does not match model");
    ForwardTrace t;
    t.x = encode(R_hat);
    dense_forward(m.W1, m.b1, t.x, t.a1);
    t.h = t.a1;
    for (double &v : t.h)
        v = v > 0.0 ? v : 0.0;
    dense_forward(m.W2, m.b2, t.h, t.o);
    return t;
}

}  // namespace detail

// Forward pass: decode(W2 relu(W1 encode(R) + b1) + b2). No output activation.
inline ComplexMatrix forward(const NnModel &m, const ComplexMatrix &R_hat) {
    return decode(detail::forward_trace(m, R_hat).o, m.L);
}

struct Gradients {
    std::vector<double> W1, b1, W2, b2;
};

// Mean-squared slice error of the filter produced from R_hat, plus exact
// gradients for every parameter block.
//
// loss = (1/S) sum_s || W y_s - h_s ||^2 with W = forward(model, R_hat).
// The complex filter gradient is G = (2/S) sum_s e_s y_s^H; its real and
// imaginary parts, laid out like encode(), seed the backward pass through the
// output layer, the ReLU and the input layer.
inline double loss_and_grad(const NnModel &m, const SliceBlock &Y_slices,
                            const SliceBlock &H_slices, const ComplexMatrix &R_hat,
                            Gradients &grads) {
    if (Y_slices.count == 0 || Y_slices.count != H_slices.count || Y_slices.L != H_slices.L)
        throw std::invalid_argument("loss_and_grad: observation/label slices must pair up");
    if (Y_slices.L != m.L)
        throw std::invalid_argument("loss_and_grad: slice length does not match model");

    const std::size_t L = m.L;
    const std::size_t L2 = L * L;
    const std::size_t d = m.dim();
    const detail::ForwardTrace t = detail::forward_trace(m, R_hat);
    const ComplexMatrix W = decode(t.o, L);

    // Slice errors E(s,:) = W y_s - h_s and the complex gradient
    // G = sum_s e_s y_s^H, both computed on split-complex planes.
    detail::SplitPlanes Y, E;
    Y.load(Y_slices);
    std::vector<double> wt_re, wt_im;
    detail::split_filter_t(W, wt_re, wt_im);
    detail::filter_slices(Y, wt_re, wt_im, E.re, E.im);
    E.L = L;
    E.count = Y.count;
    double loss = 0.0;
    {
        const cdouble *hp = H_slices.data.data();
        for (std::size_t k = 0; k < E.re.size(); ++k) {
            const double er = E.re[k] - hp[k].real();
            const double ei = E.im[k] - hp[k].imag();
            E.re[k] = er;
            E.im[k] = ei;
            loss += er * er + ei * ei;
        }
    }
    std::vector<double> g_re, g_im;
    detail::outer_conj_acc(E, Y, g_re, g_im);

    const double inv_s = 1.0 / static_cast<double>(Y_slices.count);
    loss *= inv_s;
    if (!std::isfinite(loss))
        throw std::runtime_error("loss_and_grad: non-finite loss; training aborted");

    // d loss / d o, laid out exactly like encode().
    std::vector<double> go(d);
    for (std::size_t k = 0; k < L2; ++k) {
        go[k] = 2.0 * inv_s * g_re[k];
        go[L2 + k] = 2.0 * inv_s * g_im[k];
    }

    grads.W2.assign(d * d, 0.0);
    grads.b2 = go;
    for (std::size_t i = 0; i < d; ++i) {
        const double gi = go[i];
        if (gi == 0.0)
            continue;
        double *row = grads.W2.data() + i * d;
        for (std::size_t j = 0; j < d; ++j)
            row[j] = gi * t.h[j];
    }

    std::vector<double> d1(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        if (t.a1[j] <= 0.0)
            continue;  // ReLU gate closed
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            acc += m.W2[i * d + j] * go[i];
        d1[j] = acc;
    }
    grads.b1 = d1;
    grads.W1.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const double gi = d1[i];
        if (gi == 0.0)
            continue;
        double *row = grads.W1.data() + i * d;
        for (std::size_t j = 0; j < d; ++j)
            row[j] = gi * t.x[j];
    }
    return loss;
}

// One Adam update with bias-corrected moments.
inline void adam_step(NnModel &m, const Gradients &g, const TrainConfig &cfg) {
    m.adam_t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(m.adam_t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(m.adam_t));
    auto update = [&](std::vector<double> &p, std::vector<double> &mom, std::vector<double> &vel,
                      const std::vector<double> &grad) {
        for (std::size_t k = 0; k < p.size(); ++k) {
            mom[k] = cfg.beta1 * mom[k] + (1.0 - cfg.beta1) * grad[k];
            vel[k] = cfg.beta2 * vel[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            p[k] -= cfg.lr * (mom[k] / bc1) / (std::sqrt(vel[k] / bc2) + cfg.eps_adam);
        }
    };
    update(m.W1, m.mW1, m.vW1, g.W1);
    update(m.b1, m.mb1, m.vb1, g.b1);
    update(m.W2, m.mW2, m.vW2, g.W2);
    update(m.b2, m.mb2, m.vb2, g.b2);
}

// ---------------------------------------------------------------------------
// Training. A WindowSource fills one window of paired (H, Y) observations for
// a given step index; sources encapsulate dedicated vs. universal parameter
// draws and any upstream denoising prefix.
// ---------------------------------------------------------------------------
using WindowSource =
    std::function<void(std::size_t step, std::vector<ComplexMatrix> &H, std::vector<ComplexMatrix> &Y)>;

// Trains one subspace model against a window source. Per step: draw a window,
// form the Y-based sample covariance (the only statistic available at
// inference time), run forward/backward, take an Adam step. The returned
// parameters are the tail average over the last tail_average_fraction of the
// executed steps. Deterministic given (seed, cfg).
inline NnModel train_subspace(const WindowSource &source, Subspace which, std::size_t L,
                              const TrainConfig &cfg, std::uint64_t seed) {
    cfg.validate();
    NnModel m = make_model(L, seed);
    m.meta.subspace = which;

    const std::size_t tail_start =
        cfg.tail_average_fraction > 0.0
            ? static_cast<std::size_t>(
                  std::floor(static_cast<double>(cfg.max_steps) * (1.0 - cfg.tail_average_fraction)))
            : cfg.max_steps;
    std::vector<double> avgW1, avgb1, avgW2, avgb2;
    std::size_t avg_count = 0;

    Gradients grads, gbuf;
    std::vector<ComplexMatrix> Hw, Yw;
    double loss_ema = 0.0;
    double noise_ema = 0.0;
    double best_ema = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    double last_loss = 0.0;
    std::size_t executed = 0;

    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
        // Each window in the batch keeps its own sample covariance: windows may
        // sit at different operating points, and the covariance input is what
        // lets the model tell them apart. Gradients are averaged across the
        // batch before the optimizer step.
        double step_loss = 0.0;
        double noise_energy = 0.0;
        std::size_t slice_count = 0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            source(step * cfg.batch_size + b, Hw, Yw);
            const SliceBlock ys = gather_slices(Yw, which);
            const SliceBlock hs = gather_slices(Hw, which);
            const ComplexMatrix R_hat = sample_covariance(ys);
            Gradients &target = b == 0 ? grads : gbuf;
            step_loss += loss_and_grad(m, ys, hs, R_hat, target);
            if (b > 0) {
                for (std::size_t k = 0; k < grads.W1.size(); ++k)
                    grads.W1[k] += gbuf.W1[k];
                for (std::size_t k = 0; k < grads.b1.size(); ++k) {
                    grads.b1[k] += gbuf.b1[k];
                    grads.b2[k] += gbuf.b2[k];
                }
                for (std::size_t k = 0; k < grads.W2.size(); ++k)
                    grads.W2[k] += gbuf.W2[k];
            }
            for (std::size_t k = 0; k < ys.data.size(); ++k)
                noise_energy += std::norm(ys.data[k] - hs.data[k]);
            slice_count += ys.count;
        }
        if (cfg.batch_size > 1) {
            const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
            step_loss *= inv_b;
            for (double &g : grads.W1)
                g *= inv_b;
            for (double &g : grads.b1)
                g *= inv_b;
            for (double &g : grads.W2)
                g *= inv_b;
            for (double &g : grads.b2)
                g *= inv_b;
        }
        last_loss = step_loss;
        adam_step(m, grads, cfg);
        ++executed;

        // Residual-vs-noise bookkeeping for the convergence criterion: the
        // filter output should not exceed the raw per-slice noise energy.
        noise_energy /= static_cast<double>(slice_count);
        const double blend = step == 0 ? 1.0 : 0.02;
        loss_ema += blend * (last_loss - loss_ema);
        noise_ema += blend * (noise_energy - noise_ema);

        if (step >= tail_start) {
            if (avg_count == 0) {
                avgW1 = m.W1;
                avgb1 = m.b1;
                avgW2 = m.W2;
                avgb2 = m.b2;
            } else {
                for (std::size_t k = 0; k < avgW1.size(); ++k)
                    avgW1[k] += m.W1[k];
                for (std::size_t k = 0; k < avgb1.size(); ++k) {
                    avgb1[k] += m.b1[k];
                    avgb2[k] += m.b2[k];
                }
                for (std::size_t k = 0; k < avgW2.size(); ++k)
                    avgW2[k] += m.W2[k];
            }
            ++avg_count;

            // Early stop only once the loss has genuinely plateaued while the
            // residual already sits below the noise energy; the tail average
            // then covers the plateau.
            if (loss_ema < best_ema * (1.0 - 1e-4)) {
                best_ema = loss_ema;
                since_best = 0;
            } else if (++since_best >= cfg.patience && loss_ema <= noise_ema &&
                       avg_count >= cfg.patience) {
                break;
            }
        }
    }

    if (avg_count > 0) {
        const double inv = 1.0 / static_cast<double>(avg_count);
        for (std::size_t k = 0; k < avgW1.size(); ++k) {
            m.W1[k] = avgW1[k] * inv;
            m.W2[k] = avgW2[k] * inv;
        }
        for (std::size_t k = 0; k < avgb1.size(); ++k) {
            m.b1[k] = avgb1[k] * inv;
            m.b2[k] = avgb2[k] * inv;
        }
    }
    m.meta.final_loss = loss_ema;
    m.meta.converged = loss_ema <= noise_ema || executed < cfg.max_steps;
    return m;
}

// Window source for one fixed propagation scenario: every window draws fresh
// channels and noise at the configured DoAs, spreads and SNR.
inline WindowSource make_dedicated_source(const SpatialConfig &cfg, double snr_db,
                                          std::size_t window, std::uint64_t seed) {
    cfg.validate();
    if (window < 1)
        throw std::invalid_argument("make_dedicated_source: window must be at least 1");
    const CovarianceSet cov = build_covariances(cfg);
    auto sqrt_v = std::make_shared<ComplexMatrix>(hermitian_sqrt(cov.R_v));
    auto sqrt_h = std::make_shared<ComplexMatrix>(hermitian_sqrt(cov.R_h));
    return [sqrt_v, sqrt_h, snr_db, window, seed](std::size_t step, std::vector<ComplexMatrix> &H,
                                                  std::vector<ComplexMatrix> &Y) {
        const std::uint64_t window_seed = mix64(seed + kGoldenGamma * (step + 1));
        H = sample_channels_from_roots(*sqrt_v, *sqrt_h, window, window_seed);
        ChannelBatch b = observe(std::move(H), snr_db, window_seed);
        H = std::move(b.H);
        Y = std::move(b.Y);
    };
}

// Parameter space for universal training: the subspace's own DoA range plus
// an SNR range, both sampled uniformly per window.
struct UniversalSpace {
    double doa_lo = 0.0;  // radians
    double doa_hi = 0.0;
    double snr_lo_db = 0.0;
    double snr_hi_db = 0.0;
};

// Memoizes the matrix square roots of one-dimensional array covariances on a
// fixed angle grid, so parameter-range training touches each distinct angle's
// eigendecomposition once.
struct AngleSqrtCache {
    std::size_t L = 0;
    double spread = 0.0;
    double spacing = 0.5;
    std::size_t nodes = kDefaultQuadratureNodes;
    double grid_deg = 0.25;
    std::map<long, ComplexMatrix> cache;

    AngleSqrtCache(std::size_t L_, double spread_, double spacing_, std::size_t nodes_,
                   double grid_deg_ = 0.25)
        : L(L_), spread(spread_), spacing(spacing_), nodes(nodes_), grid_deg(grid_deg_) {
        if (L < 1 || !(spread > 0.0) || !(grid_deg > 0.0))
            throw std::invalid_argument("AngleSqrtCache: invalid parameters");
    }

    const ComplexMatrix &at_angle(double angle_rad) {
        const long idx = std::lround(rad2deg(angle_rad) / grid_deg);
        auto it = cache.find(idx);
        if (it == cache.end()) {
            const double snapped = deg2rad(static_cast<double>(idx) * grid_deg);
            it = cache
                     .emplace(idx, hermitian_sqrt(detail::toeplitz_covariance(L, spread, snapped,
                                                                              spacing, nodes)))
                     .first;
        }
        return it->second;
    }
};

namespace detail {

// Uniform draw from the discrete 1 dB SNR training grid spanning [lo, hi].
inline double draw_grid_snr(const RandomStream &draw, std::uint64_t index, double lo, double hi) {
    const auto levels = static_cast<std::size_t>(std::floor(hi - lo + 1e-9)) + 1;
    std::size_t level = static_cast<std::size_t>(draw.uniform01_open(index) * levels);
    level = std::min(level, levels - 1);
    return lo + static_cast<double>(level);
}

}  // namespace detail

// Window source spanning a parameter range: per window, the subspace's own
// DoA is drawn uniformly from the configured interval and the SNR is drawn
// from a discrete 1 dB training grid spanning [snr_lo_db, snr_hi_db], so
// off-grid SNR values exercise true generalization at evaluation time. Only
// the varied array factor depends on the drawn angle, so its matrix square
// root is cached on a fine angle grid (draws snap to the nearest grid point)
// while the fixed factor is computed once.
inline WindowSource make_universal_source(const SpatialConfig &base, Subspace which,
                                          const UniversalSpace &space, std::size_t window,
                                          std::uint64_t seed, double angle_grid_deg = 0.25) {
    base.validate();
    if (window < 1)
        throw std::invalid_argument("make_universal_source: window must be at least 1");
    if (!(space.doa_lo <= space.doa_hi) || !(space.snr_lo_db <= space.snr_hi_db))
        throw std::invalid_argument("make_universal_source: empty parameter range");
    if (!(angle_grid_deg > 0.0))
        throw std::invalid_argument("make_universal_source: angle grid must be positive");

    const bool vary_vertical = which == Subspace::vertical;
    auto fixed_sqrt = std::make_shared<ComplexMatrix>(hermitian_sqrt(detail::toeplitz_covariance(
        vary_vertical ? base.N : base.M, vary_vertical ? base.spread_h : base.spread_v,
        vary_vertical ? base.doa_h : base.doa_v, base.spacing, base.quadrature_nodes)));
    auto cache = std::make_shared<AngleSqrtCache>(
        vary_vertical ? base.M : base.N, vary_vertical ? base.spread_v : base.spread_h,
        base.spacing, base.quadrature_nodes, angle_grid_deg);

    return [=](std::size_t step, std::vector<ComplexMatrix> &H, std::vector<ComplexMatrix> &Y) {
        const std::uint64_t window_seed = mix64(seed + kGoldenGamma * (step + 1));
        const RandomStream draw(window_seed, 0x5550);  // per-window parameter draws
        const double angle = draw.uniform_range(0, space.doa_lo, space.doa_hi);
        const double snr_db = detail::draw_grid_snr(draw, 1, space.snr_lo_db, space.snr_hi_db);
        const ComplexMatrix &varied = cache->at_angle(angle);
        const ComplexMatrix &sqrt_v = vary_vertical ? varied : *fixed_sqrt;
        const ComplexMatrix &sqrt_h = vary_vertical ? *fixed_sqrt : varied;
        H = sample_channels_from_roots(sqrt_v, sqrt_h, window, window_seed);
        ChannelBatch b = observe(std::move(H), snr_db, window_seed);
        H = std::move(b.H);
        Y = std::move(b.Y);
    };
}

// Trains one subspace model for a single fixed scenario (DoA pair and SNR).
inline NnModel train_dedicated(const SpatialConfig &scfg, double snr_db, Subspace which,
                               const TrainConfig &cfg, std::uint64_t seed) {
    cfg.validate();
    const WindowSource source = make_dedicated_source(scfg, snr_db, cfg.window, seed);
    const std::size_t L = which == Subspace::vertical ? scfg.M : scfg.N;
    NnModel m = train_subspace(source, which, L, cfg, seed);
    const double doa = which == Subspace::vertical ? scfg.doa_v : scfg.doa_h;
    m.meta.doa_lo = doa;
    m.meta.doa_hi = doa;
    m.meta.spread = which == Subspace::vertical ? scfg.spread_v : scfg.spread_h;
    m.meta.snr_lo_db = snr_db;
    m.meta.snr_hi_db = snr_db;
    m.meta.residual_var = std::pow(10.0, -snr_db / 10.0);
    m.meta.effective_snr_db = snr_db;
    return m;
}

// Trains one subspace model over a whole parameter range. Covering a range
// needs more optimizer steps than a single scenario; callers pass a
// TrainConfig whose max_steps reflects that (the harness doubles the
// dedicated budget).
inline NnModel train_universal(const SpatialConfig &base, Subspace which,
                               const UniversalSpace &space, const TrainConfig &cfg,
                               std::uint64_t seed) {
    cfg.validate();
    const WindowSource source = make_universal_source(base, which, space, cfg.window, seed);
    const std::size_t L = which == Subspace::vertical ? base.M : base.N;
    NnModel m = train_subspace(source, which, L, cfg, seed);
    m.meta.doa_lo = space.doa_lo;
    m.meta.doa_hi = space.doa_hi;
    m.meta.spread = which == Subspace::vertical ? base.spread_v : base.spread_h;
    m.meta.snr_lo_db = space.snr_lo_db;
    m.meta.snr_hi_db = space.snr_hi_db;
    const double mid_snr = 0.5 * (space.snr_lo_db + space.snr_hi_db);
    m.meta.residual_var = std::pow(10.0, -mid_snr / 10.0);
    m.meta.effective_snr_db = mid_snr;
    return m;
}

// ---------------------------------------------------------------------------
// Convergence predicates.
// ---------------------------------------------------------------------------
struct ConvergenceReport {
    double residual_per_slice = 0.0;      // E ||W y - h||^2 on fresh windows
    double noise_energy_per_slice = 0.0;  // E ||y - h||^2 on the same windows
    bool residual_ok = false;             // residual <= noise energy
    double filter_distance_rel = -1.0;    // ||W_bar - W_ref||_F / ||W_ref||_F (-1: no reference)
    bool filter_ok = true;
    std::vector<double> row_energies;     // of the window-averaged filter
    double max_row_energy = 0.0;
    bool rows_ok = false;                 // all row energies <= 1 + slack
    bool converged = false;
    ComplexMatrix mean_filter;            // forward output averaged over windows
};

inline constexpr double kRowEnergySlack = 0.05;

// Evaluates the convergence conditions on fresh data: per-slice residual not
// above the raw noise energy, optional Frobenius proximity to a closed-form
// reference filter, and row energies of the averaged filter at most 1 (with
// training slack).
inline ConvergenceReport convergence_check(const NnModel &m, const WindowSource &source,
                                           Subspace which, std::size_t n_windows = 20,
                                           const ComplexMatrix *reference = nullptr,
                                           double eps_rel = 0.1) {
    if (n_windows == 0)
        throw std::invalid_argument("convergence_check: need at least one window");
    ConvergenceReport rep;
    std::vector<ComplexMatrix> H, Y;
    ComplexMatrix wsum(m.L, m.L);
    double res = 0.0, noise = 0.0;
    std::size_t slices = 0;
    for (std::size_t w = 0; w < n_windows; ++w) {
        source(w, H, Y);
        const SliceBlock ys = gather_slices(Y, which);
        const SliceBlock hs = gather_slices(H, which);
        const ComplexMatrix W = forward(m, sample_covariance(ys));
        wsum += W;
        for (std::size_t s = 0; s < ys.count; ++s) {
            const cdouble *yv = ys.slice(s);
            const cdouble *hv = hs.slice(s);
            for (std::size_t i = 0; i < m.L; ++i) {
                cdouble acc(0.0, 0.0);
                for (std::size_t j = 0; j < m.L; ++j)
                    acc += W(i, j) * yv[j];
                res += std::norm(acc - hv[i]);
                noise += std::norm(yv[i] - hv[i]);
            }
        }
        slices += ys.count;
    }
    rep.residual_per_slice = res / static_cast<double>(slices);
    rep.noise_energy_per_slice = noise / static_cast<double>(slices);
    rep.residual_ok = rep.residual_per_slice <= rep.noise_energy_per_slice;

    rep.mean_filter = wsum * cdouble(1.0 / static_cast<double>(n_windows), 0.0);
    rep.row_energies.assign(m.L, 0.0);
    for (std::size_t i = 0; i < m.L; ++i) {
        for (std::size_t j = 0; j < m.L; ++j)
            rep.row_energies[i] += std::norm(rep.mean_filter(i, j));
        rep.max_row_energy = std::max(rep.max_row_energy, rep.row_energies[i]);
    }
    rep.rows_ok = rep.max_row_energy <= 1.0 + kRowEnergySlack;

    if (reference) {
        ComplexMatrix diff = rep.mean_filter;
        diff -= *reference;
        rep.filter_distance_rel = diff.frobenius_norm() / reference->frobenius_norm();
        rep.filter_ok = rep.filter_distance_rel < eps_rel;
    }
    rep.converged = rep.residual_ok && rep.rows_ok && rep.filter_ok;
    return rep;
}

// ---------------------------------------------------------------------------
// Model persistence: fixed header + four parameter blocks of 8-byte floats.
// ---------------------------------------------------------------------------
namespace detail {

inline constexpr char kModelMagic[8] = {'T', 'M', 'N', 'N', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

}  // namespace detail

inline void save_model(const std::string &path, const NnModel &m) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f)
        throw std::runtime_error("save_model: cannot open " + path);
    detail::write_exact(f.get(), detail::kModelMagic, sizeof(detail::kModelMagic), "magic");
    const std::uint32_t version = detail::kModelVersion;
    const std::uint32_t L32 = static_cast<std::uint32_t>(m.L);
    const std::uint32_t iter32 = static_cast<std::uint32_t>(m.meta.iteration);
    const std::uint8_t sub = static_cast<std::uint8_t>(m.meta.subspace);
    const std::uint8_t conv = m.meta.converged ? 1 : 0;
    const std::uint8_t pad[2] = {0, 0};
    detail::write_exact(f.get(), &version, sizeof(version), "version");
    detail::write_exact(f.get(), &L32, sizeof(L32), "L");
    detail::write_exact(f.get(), &iter32, sizeof(iter32), "iteration");
    detail::write_exact(f.get(), &sub, sizeof(sub), "subspace");
    detail::write_exact(f.get(), &conv, sizeof(conv), "converged");
    detail::write_exact(f.get(), pad, sizeof(pad), "padding");
    const double header_doubles[8] = {m.meta.snr_lo_db, m.meta.snr_hi_db, m.meta.doa_lo,
                                      m.meta.doa_hi,    m.meta.spread,    m.meta.residual_var,
                                      m.meta.effective_snr_db, m.meta.final_loss};
    detail::write_exact(f.get(), header_doubles, sizeof(header_doubles), "meta");
    auto dump = [&](const std::vector<double> &v, const char *what) {
        detail::write_exact(f.get(), v.data(), v.size() * sizeof(double), what);
    };
    dump(m.W1, "W1");
    dump(m.b1, "b1");
    dump(m.W2, "W2");
    dump(m.b2, "b2");
}

inline NnModel load_model(const std::string &path) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f)
        throw std::runtime_error("load_model: cannot open " + path);
    char magic[8];
    detail::read_exact(f.get(), magic, sizeof(magic), "magic");
    if (std::memcmp(magic, detail::kModelMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_model: not a model file: " + path);
    std::uint32_t version = 0, L32 = 0, iter32 = 0;
    std::uint8_t sub = 0, conv = 0, pad[2];
    detail::read_exact(f.get(), &version, sizeof(version), "version");
    if (version != detail::kModelVersion)
        throw std::runtime_error("load_model: unsupported version in " + path);
    detail::read_exact(f.get(), &L32, sizeof(L32), "L");
    detail::read_exact(f.get(), &iter32, sizeof(iter32), "iteration");
    detail::read_exact(f.get(), &sub, sizeof(sub), "subspace");
    detail::read_exact(f.get(), &conv, sizeof(conv), "converged");
    detail::read_exact(f.get(), pad, sizeof(pad), "padding");
    if (L32 == 0 || L32 > 256 || sub > 1)
        throw std::runtime_error("load_model: invalid header in " + path);
    double header_doubles[8];
    detail::read_exact(f.get(), header_doubles, sizeof(header_doubles), "meta");

    NnModel m = make_model(L32, 0);
    m.meta.snr_lo_db = header_doubles[0];
    m.meta.snr_hi_db = header_doubles[1];
    m.meta.doa_lo = header_doubles[2];
    m.meta.doa_hi = header_doubles[3];
    m.meta.spread = header_doubles[4];
    m.meta.residual_var = header_doubles[5];
    m.meta.effective_snr_db = header_doubles[6];
    m.meta.final_loss = header_doubles[7];
    m.meta.iteration = iter32;
    m.meta.subspace = static_cast<Subspace>(sub);
    m.meta.converged = conv != 0;
    auto slurp = [&](std::vector<double> &v, const char *what) {
        detail::read_exact(f.get(), v.data(), v.size() * sizeof(double), what);
        for (double x : v)
            if (!std::isfinite(x))
                throw std::runtime_error(std::string("load_model: non-finite parameter in ") + what);
    };
    slurp(m.W1, "W1");
    slurp(m.b1, "b1");
    slurp(m.W2, "W2");
    slurp(m.b2, "b2");
    return m;
}

}  // namespace turbomimo
