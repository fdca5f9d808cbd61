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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "turbomimo/channel.hpp"
#include "turbomimo/estimator.hpp"
#include "turbomimo/learning.hpp"

// Covered tests:
// - Slice gathering and real-vector encode/decode round trips
// - Sample covariance hand oracle and Hermitian-by-construction property
// - Model initialization: identity-plus-noise layout, zero biases, determinism
// - Forward pass with hand-set weights
// - Backpropagated gradients against central finite differences (all blocks)
// - Adam update hand formula for the first step
// - Short dedicated training run: loss decrease, convergence report against
//   the closed-form filter, determinism
// - Universal window source: per-window parameter draws, discrete SNR grid,
//   angle-grid snapping in the covariance-root cache
// - Model save/load round trip and corrupt-file rejection

using namespace turbomimo;

namespace {

SpatialConfig small_config() {
    SpatialConfig cfg;
    cfg.M = 4;
    cfg.N = 6;
    return cfg;
}

}  // namespace

TEST_CASE("gather_slices splits columns and rows", "[learning]") {
    // 2 x 3 matrix with distinct entries: vertical slices are columns,
    // horizontal slices are rows.
    ComplexMatrix A(2, 3, {{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}, {6, 0}});
    const std::vector<ComplexMatrix> mats{A, A};

    const SliceBlock v = gather_slices(mats, Subspace::vertical);
    REQUIRE(v.L == 2);
    REQUIRE(v.count == 6);  // 3 columns per matrix
    REQUIRE(v.slice(0)[0] == cdouble(1, 0));
    REQUIRE(v.slice(0)[1] == cdouble(4, 0));
    REQUIRE(v.slice(2)[0] == cdouble(3, 0));
    REQUIRE(v.slice(2)[1] == cdouble(6, 0));

    const SliceBlock h = gather_slices(mats, Subspace::horizontal);
    REQUIRE(h.L == 3);
    REQUIRE(h.count == 4);  // 2 rows per matrix
    REQUIRE(h.slice(1)[0] == cdouble(4, 0));
    REQUIRE(h.slice(1)[2] == cdouble(6, 0));
}

TEST_CASE("sample_covariance hand oracle", "[learning]") {
    // Two length-2 slices: R = (y1 y1^H + y2 y2^H) / 2.
    SliceBlock b;
    b.L = 2;
    b.count = 2;
    b.data = {cdouble(1, 1), cdouble(2, 0), cdouble(0, -1), cdouble(1, 1)};
    const ComplexMatrix R = sample_covariance(b);

    // Entry (0,0): (|1+i|^2 + |{-i}|^2)/2 = (2 + 1)/2.
    REQUIRE(R(0, 0).real() == Catch::Approx(1.5).epsilon(1e-14));
    // Entry (0,1): ((1+i)*2 + (-i)(1-i)) / 2 = (2+2i + (-1-i))/2 = (1+i)/2.
    REQUIRE(R(0, 1).real() == Catch::Approx(0.5).epsilon(1e-14));
    REQUIRE(R(0, 1).imag() == Catch::Approx(0.5).epsilon(1e-14));
    REQUIRE(R.hermitian_defect() < 1e-15);
}

TEST_CASE("encode/decode round trip", "[learning]") {
    ComplexMatrix R(3, 3);
    for (std::size_t k = 0; k < R.size(); ++k)
        R.data()[k] = cdouble(0.1 * static_cast<double>(k) - 0.3,
                              -0.2 * static_cast<double>(k) + 0.5);
    const std::vector<double> x = encode(R);
    REQUIRE(x.size() == 18);
    // Layout: real parts row-major first, then imaginary parts.
    REQUIRE(x[0] == R(0, 0).real());
    REQUIRE(x[9] == R(0, 0).imag());
    REQUIRE(x[4] == R(1, 1).real());

    const ComplexMatrix back = decode(x, 3);
    for (std::size_t k = 0; k < R.size(); ++k)
        REQUIRE(back.data()[k] == R.data()[k]);

    REQUIRE_THROWS_AS(decode(std::vector<double>(5, 0.0), 3), std::invalid_argument);
}

TEST_CASE("make_model initializes near identity with zero biases", "[learning]") {
    const NnModel m = make_model(4, 99);
    const std::size_t d = m.dim();
    REQUIRE(d == 32);
    double off_max = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double w = m.W1[i * d + j];
            if (i == j) {
                REQUIRE(w == Catch::Approx(1.0).margin(0.06));
            } else {
                off_max = std::max(off_max, std::abs(w));
            }
        }
        REQUIRE(m.b1[i] == 0.0);
        REQUIRE(m.b2[i] == 0.0);
    }
    // Off-diagonal noise has standard deviation 0.01.
    REQUIRE(off_max < 0.06);
    REQUIRE(off_max > 1e-4);

    // Deterministic in the seed, different across seeds.
    const NnModel m2 = make_model(4, 99);
    const NnModel m3 = make_model(4, 100);
    REQUIRE(m.W1 == m2.W1);
    REQUIRE(m.W1 != m3.W1);
}

TEST_CASE("forward pass with hand-set weights", "[learning]") {
    // Exact identity weights and zero biases: the network computes
    // decode(relu(encode(R))), i.e. negative real/imaginary parts clamp to 0.
    NnModel m = make_model(2, 1);
    const std::size_t d = m.dim();
    std::fill(m.W1.begin(), m.W1.end(), 0.0);
    std::fill(m.W2.begin(), m.W2.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        m.W1[i * d + i] = 1.0;
        m.W2[i * d + i] = 1.0;
    }
    ComplexMatrix R(2, 2, {{0.5, -0.25}, {-1.0, 2.0}, {3.0, 0.0}, {-0.125, -4.0}});
    const ComplexMatrix W = forward(m, R);
    REQUIRE(W(0, 0) == cdouble(0.5, 0.0));
    REQUIRE(W(0, 1) == cdouble(0.0, 2.0));
    REQUIRE(W(1, 0) == cdouble(3.0, 0.0));
    REQUIRE(W(1, 1) == cdouble(0.0, 0.0));

    // Output layer bias passes straight through a zeroed network.
    std::fill(m.W1.begin(), m.W1.end(), 0.0);
    std::fill(m.W2.begin(), m.W2.end(), 0.0);
    m.b2[0] = 7.0;
    m.b2[d / 2 + 1] = -3.0;
    const ComplexMatrix Wb = forward(m, R);
    REQUIRE(Wb(0, 0) == cdouble(7.0, 0.0));
    REQUIRE(Wb(0, 1) == cdouble(0.0, -3.0));
}

TEST_CASE("gradients match central finite differences", "[learning]") {
    const std::size_t L = 2;
    NnModel m = make_model(L, 5);
    // Perturb biases away from zero so their gradient paths are exercised.
    RandomStream rng(5, 0xFD);
    for (std::size_t i = 0; i < m.dim(); ++i) {
        m.b1[i] = 0.05 * rng.normal(i);
        m.b2[i] = 0.05 * rng.normal(100 + i);
    }

    // A small window of correlated slices with noise.
    SpatialConfig cfg;
    cfg.M = 2;
    cfg.N = 2;
    const CovarianceSet cov = build_covariances(cfg);
    const ChannelBatch batch = observe(sample_channels(cov, 8, 3), 0.0, 3);
    const SliceBlock ys = gather_slices(batch.Y, Subspace::vertical);
    const SliceBlock hs = gather_slices(batch.H, Subspace::vertical);
    const ComplexMatrix R_hat = sample_covariance(ys);

    Gradients g;
    loss_and_grad(m, ys, hs, R_hat, g);

    const double eps = 1e-6;
    auto fd_check = [&](std::vector<double> &param, const std::vector<double> &grad) {
        for (std::size_t k = 0; k < param.size(); ++k) {
            const double keep = param[k];
            param[k] = keep + eps;
            Gradients scratch;
            const double up = loss_and_grad(m, ys, hs, R_hat, scratch);
            param[k] = keep - eps;
            const double dn = loss_and_grad(m, ys, hs, R_hat, scratch);
            param[k] = keep;
            const double fd = (up - dn) / (2.0 * eps);
            const double scale = std::max({1.0, std::abs(fd), std::abs(grad[k])});
            REQUIRE(std::abs(grad[k] - fd) / scale < 1e-4);
        }
    };
    fd_check(m.W1, g.W1);
    fd_check(m.b1, g.b1);
    fd_check(m.W2, g.W2);
    fd_check(m.b2, g.b2);
}

TEST_CASE("adam_step first-update hand formula", "[learning]") {
    NnModel m = make_model(1, 7);
    TrainConfig cfg;
    const double p0 = m.W1[0];

    Gradients g;
    const std::size_t d = m.dim();
    g.W1.assign(d * d, 0.0);
    g.b1.assign(d, 0.0);
    g.W2.assign(d * d, 0.0);
    g.b2.assign(d, 0.0);
    const double grad = 0.37;
    g.W1[0] = grad;

    adam_step(m, g, cfg);

    // First step: m1 = (1-b1) g, v1 = (1-b2) g^2; bias correction divides the
    // same factors back out, so the update is lr * g / (|g| + eps).
    const double expect = p0 - cfg.lr * grad / (std::abs(grad) + cfg.eps_adam);
    REQUIRE(m.W1[0] == Catch::Approx(expect).epsilon(1e-12));
    REQUIRE(m.adam_t == 1);
    // Untouched parameters with zero gradient stay put.
    REQUIRE(m.W1[1] == Catch::Approx(make_model(1, 7).W1[1]).epsilon(1e-15));
}

TEST_CASE("dedicated training approaches the closed-form filter", "[learning]") {
    SpatialConfig cfg = small_config();
    const double snr_db = 0.0;
    TrainConfig tcfg;
    tcfg.max_steps = 150;
    tcfg.window = 128;

    const NnModel m = train_dedicated(cfg, snr_db, Subspace::vertical, tcfg, 11);
    REQUIRE(m.meta.subspace == Subspace::vertical);
    REQUIRE(m.meta.snr_lo_db == snr_db);
    REQUIRE(m.meta.doa_lo == cfg.doa_v);
    REQUIRE(m.meta.effective_snr_db == snr_db);

    // Fresh evaluation windows from the same scenario.
    const WindowSource eval_source = make_dedicated_source(cfg, snr_db, 128, 777);
    const CovarianceSet cov = build_covariances(cfg);
    const double N0 = std::pow(10.0, -snr_db / 10.0);
    const ComplexMatrix W_ref = genie_filter(cov.R_v, N0);

    const ConvergenceReport rep =
        convergence_check(m, eval_source, Subspace::vertical, 20, &W_ref, 0.35);
    REQUIRE(rep.residual_ok);         // beats raw observations
    REQUIRE(rep.rows_ok);             // shrinkage-like row energies
    REQUIRE(rep.filter_distance_rel >= 0.0);
    REQUIRE(rep.filter_ok);           // near the closed-form filter already at 150 steps
    REQUIRE(rep.converged);

    // Determinism: same seed and config reproduce the parameters exactly.
    const NnModel m2 = train_dedicated(cfg, snr_db, Subspace::vertical, tcfg, 11);
    REQUIRE(m.W1 == m2.W1);
    REQUIRE(m.b2 == m2.b2);

    // Bad configuration is rejected.
    TrainConfig bad;
    bad.max_steps = 0;
    REQUIRE_THROWS_AS(train_dedicated(cfg, snr_db, Subspace::vertical, bad, 1),
                      std::invalid_argument);
}

TEST_CASE("universal source draws per-window parameters", "[learning]") {
    SpatialConfig cfg = small_config();
    UniversalSpace space;
    space.doa_lo = deg2rad(10.0);
    space.doa_hi = deg2rad(30.0);
    space.snr_lo_db = 0.0;
    space.snr_hi_db = 15.0;

    const WindowSource src = make_universal_source(cfg, Subspace::horizontal, space, 64, 5);
    std::vector<ComplexMatrix> H1, Y1, H2, Y2, H1b, Y1b;
    src(0, H1, Y1);
    src(1, H2, Y2);
    src(0, H1b, Y1b);
    REQUIRE(H1.size() == 64);

    // Same step reproduces bit-identical windows; different steps differ.
    double same = 0.0, diff = 0.0;
    for (std::size_t k = 0; k < H1.size(); ++k)
        for (std::size_t e = 0; e < H1[k].size(); ++e) {
            same += std::abs(H1[k].data()[e] - H1b[k].data()[e]);
            diff += std::abs(H1[k].data()[e] - H2[k].data()[e]);
        }
    REQUIRE(same == 0.0);
    REQUIRE(diff > 1.0);

    // The horizontal sample covariance varies across windows (angle draws).
    const ComplexMatrix Ra = sample_covariance(gather_slices(H1, Subspace::horizontal));
    const ComplexMatrix Rb = sample_covariance(gather_slices(H2, Subspace::horizontal));
    ComplexMatrix d = Ra;
    d -= Rb;
    REQUIRE(d.frobenius_norm() > 0.1);

    UniversalSpace empty = space;
    empty.doa_hi = space.doa_lo - 0.1;
    REQUIRE_THROWS_AS(make_universal_source(cfg, Subspace::horizontal, empty, 64, 5),
                      std::invalid_argument);
}

TEST_CASE("SNR training grid is discrete at 1 dB", "[learning]") {
    RandomStream draw(123, 0x5550);
    bool seen_lo = false, seen_hi = false;
    for (std::uint64_t i = 0; i < 2000; ++i) {
        const double snr = detail::draw_grid_snr(draw, i, 0.0, 15.0);
        REQUIRE(snr >= 0.0);
        REQUIRE(snr <= 15.0);
        REQUIRE(snr == std::floor(snr));  // integer levels only
        seen_lo = seen_lo || snr == 0.0;
        seen_hi = seen_hi || snr == 15.0;
    }
    REQUIRE(seen_lo);
    REQUIRE(seen_hi);

    // Degenerate range collapses to a single level.
    REQUIRE(detail::draw_grid_snr(draw, 0, 5.0, 5.0) == 5.0);
}

TEST_CASE("angle cache snaps to its grid", "[learning]") {
    AngleSqrtCache cache(4, kPi / 90.0, 0.5, 2048, 0.25);
    const ComplexMatrix &a = cache.at_angle(deg2rad(20.0));
    const ComplexMatrix &b = cache.at_angle(deg2rad(20.07));  // snaps to 20.0
    const ComplexMatrix &c = cache.at_angle(deg2rad(20.25));
    REQUIRE(cache.cache.size() == 2);
    ComplexMatrix dab = a;
    dab -= b;
    REQUIRE(dab.frobenius_norm() == 0.0);
    ComplexMatrix dac = a;
    dac -= c;
    REQUIRE(dac.frobenius_norm() > 1e-6);

    REQUIRE_THROWS_AS(AngleSqrtCache(0, 0.1, 0.5, 64), std::invalid_argument);
}

TEST_CASE("model files round-trip and reject corruption", "[learning]") {
    SpatialConfig cfg = small_config();
    TrainConfig tcfg;
    tcfg.max_steps = 10;
    tcfg.window = 32;
    NnModel m = train_dedicated(cfg, 5.0, Subspace::horizontal, tcfg, 9);
    m.meta.iteration = 3;
    m.meta.residual_var = 0.123;

    const std::string path = "test_model_roundtrip.tmnn";
    save_model(path, m);
    const NnModel back = load_model(path);
    std::remove(path.c_str());

    REQUIRE(back.L == m.L);
    REQUIRE(back.W1 == m.W1);
    REQUIRE(back.b1 == m.b1);
    REQUIRE(back.W2 == m.W2);
    REQUIRE(back.b2 == m.b2);
    REQUIRE(back.meta.subspace == m.meta.subspace);
    REQUIRE(back.meta.iteration == 3);
    REQUIRE(back.meta.residual_var == m.meta.residual_var);
    REQUIRE(back.meta.snr_lo_db == m.meta.snr_lo_db);
    REQUIRE(back.meta.converged == m.meta.converged);

    const std::string bad = "test_model_corrupt.tmnn";
    {
        std::ofstream out(bad, std::ios::binary);
        out << "not a model";
    }
    REQUIRE_THROWS_AS(load_model(bad), std::runtime_error);
    std::remove(bad.c_str());
    REQUIRE_THROWS_AS(load_model("missing_model_file.tmnn"), std::runtime_error);
}
