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

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "turbomimo/channel.hpp"
#include "turbomimo/estimator.hpp"
#include "turbomimo/learning.hpp"
#include "turbomimo/parallel.hpp"
#include "turbomimo/turbo.hpp"

namespace turbomimo {

inline constexpr const char *kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Experiment configuration. Loaded from a JSON file; angles are written in
// degrees for readability and converted to radians internally.
// ---------------------------------------------------------------------------
struct NamedSector {
    std::string name;
    SectorSpace space;
};

struct ExperimentConfig {
    SpatialConfig spatial;
    std::vector<double> snr_grid_db = {0.0, 5.0, 10.0, 15.0};
    std::vector<std::string> estimators = {"ls",         "v_only",    "h_only",
                                           "arithmetic", "geometric", "genie"};
    std::size_t turbo_iterations = 4;
    TrainConfig train;
    std::vector<NamedSector> universal_spaces;  // for the universal comparison
    std::optional<SectorSpace> universal_space; // for turbo_universal rows / spot checks
    std::size_t k_eval = 50000;
    std::uint64_t seed = 1;
    std::string out_dir = "results";

    void validate() const {
        spatial.validate();
        train.validate();
        if (snr_grid_db.empty())
            throw std::invalid_argument("ExperimentConfig: snr grid must be nonempty");
        if (k_eval < 1000)
            throw std::invalid_argument("ExperimentConfig: K_eval must be at least 1000");
        // turbo_iterations == 0 is legal: the chain degenerates to a single
        // trained pass (stage 0) with no refinement stages.
        static const std::vector<std::string> known = {
            "ls",        "v_only", "h_only",          "arithmetic",
            "geometric", "genie",  "turbo_dedicated", "turbo_universal"};
        for (const std::string &e : estimators)
            if (std::find(known.begin(), known.end(), e) == known.end())
                throw std::invalid_argument("ExperimentConfig: unknown estimator '" + e + "'");
    }
};

namespace detail {

inline SectorSpace parse_sector(const nlohmann::json &j) {
    SectorSpace s;
    s.phi_lo = deg2rad(j.at("phi_lo_deg").get<double>());
    s.phi_hi = deg2rad(j.at("phi_hi_deg").get<double>());
    s.theta_lo = deg2rad(j.at("theta_lo_deg").get<double>());
    s.theta_hi = deg2rad(j.at("theta_hi_deg").get<double>());
    s.snr_lo_db = j.at("snr_lo_db").get<double>();
    s.snr_hi_db = j.at("snr_hi_db").get<double>();
    return s;
}

inline nlohmann::json sector_to_json(const SectorSpace &s) {
    return {{"phi_lo_deg", rad2deg(s.phi_lo)},   {"phi_hi_deg", rad2deg(s.phi_hi)},
            {"theta_lo_deg", rad2deg(s.theta_lo)}, {"theta_hi_deg", rad2deg(s.theta_hi)},
            {"snr_lo_db", s.snr_lo_db},          {"snr_hi_db", s.snr_hi_db}};
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json &j) {
    ExperimentConfig cfg;
    if (j.contains("spatial")) {
        const auto &s = j.at("spatial");
        cfg.spatial.M = s.value("M", cfg.spatial.M);
        cfg.spatial.N = s.value("N", cfg.spatial.N);
        cfg.spatial.spacing = s.value("spacing", cfg.spatial.spacing);
        if (s.contains("spread_v_deg"))
            cfg.spatial.spread_v = deg2rad(s.at("spread_v_deg").get<double>());
        if (s.contains("spread_h_deg"))
            cfg.spatial.spread_h = deg2rad(s.at("spread_h_deg").get<double>());
        if (s.contains("doa_v_deg"))
            cfg.spatial.doa_v = deg2rad(s.at("doa_v_deg").get<double>());
        if (s.contains("doa_h_deg"))
            cfg.spatial.doa_h = deg2rad(s.at("doa_h_deg").get<double>());
        cfg.spatial.quadrature_nodes = s.value("quadrature_nodes", cfg.spatial.quadrature_nodes);
    }
    if (j.contains("snr_grid_db"))
        cfg.snr_grid_db = j.at("snr_grid_db").get<std::vector<double>>();
    if (j.contains("estimators"))
        cfg.estimators = j.at("estimators").get<std::vector<std::string>>();
    cfg.turbo_iterations = j.value("turbo_iterations", cfg.turbo_iterations);
    if (j.contains("train")) {
        const auto &t = j.at("train");
        cfg.train.lr = t.value("lr", cfg.train.lr);
        cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
        cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
        cfg.train.eps_adam = t.value("eps_adam", cfg.train.eps_adam);
        cfg.train.window = t.value("window", cfg.train.window);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.max_steps = t.value("max_steps", cfg.train.max_steps);
        cfg.train.convergence_eps = t.value("convergence_eps", cfg.train.convergence_eps);
        cfg.train.patience = t.value("patience", cfg.train.patience);
        cfg.train.tail_average_fraction =
            t.value("tail_average_fraction", cfg.train.tail_average_fraction);
    }
    if (j.contains("universal_space"))
        cfg.universal_space = detail::parse_sector(j.at("universal_space"));
    if (j.contains("universal_spaces"))
        for (const auto &u : j.at("universal_spaces"))
            cfg.universal_spaces.push_back({u.at("name").get<std::string>(), detail::parse_sector(u)});
    cfg.k_eval = j.value("k_eval", cfg.k_eval);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out", cfg.out_dir);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("load_config: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return parse_config(j);
}

// Canonical JSON serialization (alphabetical keys) used for hashing.
inline nlohmann::json config_to_json(const ExperimentConfig &cfg) {
    nlohmann::json j;
    j["spatial"] = {{"M", cfg.spatial.M},
                    {"N", cfg.spatial.N},
                    {"spacing", cfg.spatial.spacing},
                    {"spread_v_deg", rad2deg(cfg.spatial.spread_v)},
                    {"spread_h_deg", rad2deg(cfg.spatial.spread_h)},
                    {"doa_v_deg", rad2deg(cfg.spatial.doa_v)},
                    {"doa_h_deg", rad2deg(cfg.spatial.doa_h)},
                    {"quadrature_nodes", cfg.spatial.quadrature_nodes}};
    j["snr_grid_db"] = cfg.snr_grid_db;
    j["estimators"] = cfg.estimators;
    j["turbo_iterations"] = cfg.turbo_iterations;
    j["train"] = {{"lr", cfg.train.lr},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"eps_adam", cfg.train.eps_adam},
                  {"window", cfg.train.window},
                  {"batch_size", cfg.train.batch_size},
                  {"max_steps", cfg.train.max_steps},
                  {"convergence_eps", cfg.train.convergence_eps},
                  {"patience", cfg.train.patience},
                  {"tail_average_fraction", cfg.train.tail_average_fraction}};
    if (cfg.universal_space)
        j["universal_space"] = detail::sector_to_json(*cfg.universal_space);
    if (!cfg.universal_spaces.empty()) {
        nlohmann::json arr = nlohmann::json::array();
        for (const NamedSector &u : cfg.universal_spaces) {
            nlohmann::json e = detail::sector_to_json(u.space);
            e["name"] = u.name;
            arr.push_back(std::move(e));
        }
        j["universal_spaces"] = std::move(arr);
    }
    j["k_eval"] = cfg.k_eval;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out_dir;
    return j;
}

// FNV-1a over the canonical serialization; the 16-hex-digit result tags every
// emitted row so reports are traceable to their exact configuration.
inline std::string config_hash(const ExperimentConfig &cfg) {
    const std::string s = config_to_json(cfg).dump();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------
struct ReportRow {
    std::string estimator;
    double snr_db = 0.0;
    int iteration = -1;  // -1: not an iterative row
    double nmse_db = 0.0;
    double nmse_linear = 0.0;
    bool has_variance = false;
    double var_a = 0.0;
    double rho = 0.0;
    double effective_fraction = 0.0;
};

struct ExperimentReport {
    std::string run_id;  // config hash
    std::uint64_t seed = 0;
    std::vector<ReportRow> rows;
    std::vector<std::string> notes;              // ordering annotations, warnings
    std::map<std::string, double> margins_db;    // universal-vs-dedicated losses
    std::string csv_path;
};

namespace detail {

inline std::string format_row(const ExperimentReport &rep, const ReportRow &r) {
    char buf[256];
    std::string iter = r.iteration >= 0 ? std::to_string(r.iteration) : "";
    if (r.has_variance) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.2f,%s,%.6f,%.10e,%.10e,%.6f,%.6f",
                      rep.run_id.c_str(), r.estimator.c_str(), r.snr_db, iter.c_str(), r.nmse_db,
                      r.nmse_linear, r.var_a, r.rho, r.effective_fraction);
    } else {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.2f,%s,%.6f,%.10e,,,", rep.run_id.c_str(),
                      r.estimator.c_str(), r.snr_db, iter.c_str(), r.nmse_db, r.nmse_linear);
    }
    return buf;
}

}  // namespace detail

inline void write_report_csv(const ExperimentReport &rep, const std::string &path) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path().empty()
                                            ? "."
                                            : std::filesystem::path(path).parent_path().string());
    std::ofstream out(path, std::ios::binary);  // binary: byte-stable newlines
    if (!out)
        throw std::runtime_error("write_report_csv: cannot open " + path);
    out << "# run_id=" << rep.run_id << " seed=" << rep.seed << " version=" << kVersion << "\n";
    out << "run_id,estimator,snr_db,iteration,nmse_db,nmse_linear,var_a,rho,effective_fraction\n";
    for (const ReportRow &r : rep.rows)
        out << detail::format_row(rep, r) << "\n";
    for (const std::string &n : rep.notes)
        out << "# " << n << "\n";
}

// ---------------------------------------------------------------------------
// Shared evaluation plumbing.
// ---------------------------------------------------------------------------
namespace detail {

struct EvalBatch {
    std::vector<ComplexMatrix> H;
    std::vector<ComplexMatrix> Y;
    double N0 = 0.0;
};

inline EvalBatch make_eval_batch(const ExperimentConfig &cfg, const CovarianceSet &cov,
                                 double snr_db, std::uint64_t salt) {
    EvalBatch b;
    const std::uint64_t seed = mix64(cfg.seed + kGoldenGamma * salt);
    std::vector<ComplexMatrix> H = sample_channels(cov, cfg.k_eval, seed);
    ChannelBatch cb = observe(std::move(H), snr_db, seed);
    b.H = std::move(cb.H);
    b.Y = std::move(cb.Y);
    b.N0 = cb.N0;
    return b;
}

inline double nmse_linear_of(double nmse_db) { return std::pow(10.0, nmse_db / 10.0); }

inline ReportRow make_row(const std::string &estimator, double snr_db, int iteration,
                          double nmse_db) {
    ReportRow r;
    r.estimator = estimator;
    r.snr_db = snr_db;
    r.iteration = iteration;
    r.nmse_db = nmse_db;
    r.nmse_linear = nmse_linear_of(nmse_db);
    return r;
}

}  // namespace detail

// Trains (or reuses) a dedicated chain for one SNR point. `entries` counts
// chain stages; reported iteration i is the output after stage i.
inline ModelChain obtain_dedicated_chain(const ExperimentConfig &cfg, double snr_db,
                                         std::size_t entries, std::ostream *log = nullptr) {
    if (log)
        *log << "training dedicated chain (" << entries << " stages) at " << snr_db << " dB\n";
    return turbo_train(cfg.spatial, snr_db, entries, cfg.train,
                       mix64(cfg.seed + kGoldenGamma * 0xDED));
}

// Universal chains get twice the dedicated step budget and batched gradient
// steps: covering a parameter range needs more optimizer steps than a single
// operating point, and averaging gradients over several independently drawn
// operating points per step keeps the optimizer tracking the
// covariance-to-filter mapping instead of drifting toward a range-average
// filter.
inline constexpr std::size_t kUniversalBatch = 8;

inline ModelChain obtain_universal_chain(const ExperimentConfig &cfg, const SectorSpace &space,
                                         std::size_t entries, std::uint64_t salt,
                                         std::ostream *log = nullptr) {
    TrainConfig ucfg = cfg.train;
    ucfg.max_steps *= 2;
    ucfg.batch_size = std::max(ucfg.batch_size, kUniversalBatch);
    if (log)
        *log << "training universal chain (" << entries << " stages, " << ucfg.max_steps
             << " steps/model, batch " << ucfg.batch_size << ")\n";
    return turbo_train(cfg.spatial, space, entries, ucfg, mix64(cfg.seed + kGoldenGamma * salt));
}

// ---------------------------------------------------------------------------
// Experiment runners.
// ---------------------------------------------------------------------------

// NMSE of each configured estimator at each SNR grid point, with the
// closed-form ordering annotated. Writes <out>/nmse_vs_snr.csv.
inline ExperimentReport run_nmse_vs_snr(const ExperimentConfig &cfg, std::ostream *log = nullptr) {
    cfg.validate();
    ExperimentReport rep;
    rep.run_id = config_hash(cfg);
    rep.seed = cfg.seed;

    const bool need_full =
        std::find(cfg.estimators.begin(), cfg.estimators.end(), "genie") != cfg.estimators.end();
    const CovarianceSet cov = build_covariances(cfg.spatial, need_full);

    std::optional<ModelChain> universal_chain;
    if (std::find(cfg.estimators.begin(), cfg.estimators.end(), "turbo_universal") !=
        cfg.estimators.end()) {
        if (!cfg.universal_space)
            throw std::invalid_argument("run_nmse_vs_snr: turbo_universal requires universal_space");
        universal_chain =
            obtain_universal_chain(cfg, *cfg.universal_space, cfg.turbo_iterations + 1, 0x113, log);
    }

    for (std::size_t si = 0; si < cfg.snr_grid_db.size(); ++si) {
        const double snr_db = cfg.snr_grid_db[si];
        const detail::EvalBatch batch = detail::make_eval_batch(cfg, cov, snr_db, 0x9000 + si);
        const double N0 = batch.N0;
        std::map<std::string, double> measured;

        FilterPair fp;
        bool have_fp = false;
        auto ensure_fp = [&]() {
            if (!have_fp) {
                fp = subspace_filters(cov, N0);
                have_fp = true;
            }
        };

        for (const std::string &est : cfg.estimators) {
            ReportRow row;
            if (est == "ls") {
                row = detail::make_row(est, snr_db, -1, nmse(batch.Y, batch.H));
            } else if (est == "v_only" || est == "h_only" || est == "arithmetic" ||
                       est == "geometric") {
                ensure_fp();
                std::vector<ComplexMatrix> ests;
                ests.reserve(batch.Y.size());
                if (est == "v_only") {
                    for (const ComplexMatrix &y : batch.Y)
                        ests.push_back(fp.W_v * y);
                } else if (est == "h_only") {
                    for (const ComplexMatrix &y : batch.Y)
                        ests.push_back(y * fp.W_h.transpose());
                } else if (est == "arithmetic") {
                    for (const ComplexMatrix &y : batch.Y)
                        ests.push_back(estimate_arithmetic(fp, y));
                } else {
                    const GeometricFactors gf = geometric_factors(fp);
                    for (const ComplexMatrix &y : batch.Y)
                        ests.push_back(estimate_geometric(gf, y));
                }
                row = detail::make_row(est, snr_db, -1, nmse(ests, batch.H));
                if (est == "arithmetic") {
                    ChannelBatch vb;
                    vb.H = batch.H;
                    vb.Y = batch.Y;
                    vb.N0 = N0;
                    vb.K = batch.H.size();
                    vb.M = cfg.spatial.M;
                    vb.N = cfg.spatial.N;
                    const VarianceReport vr = variance_diagnostics(fp, vb);
                    row.has_variance = true;
                    double var_sum = 0.0, rho_sum = 0.0;
                    for (double v : vr.var_a)
                        var_sum += v;
                    for (double v : vr.rho)
                        rho_sum += v;
                    row.var_a = var_sum / static_cast<double>(vr.var_a.size());
                    row.rho = rho_sum / static_cast<double>(vr.rho.size());
                    row.effective_fraction = vr.fraction_effective;
                }
            } else if (est == "genie") {
                std::vector<ComplexMatrix> ests;
                ests.reserve(batch.Y.size());
                const ComplexMatrix W = genie_filter(*cov.R_full, N0);
                for (const ComplexMatrix &y : batch.Y)
                    ests.push_back(apply_full_filter(W, y));
                row = detail::make_row(est, snr_db, -1, nmse(ests, batch.H));
            } else if (est == "turbo_dedicated") {
                const ModelChain chain =
                    obtain_dedicated_chain(cfg, snr_db, cfg.turbo_iterations + 1, log);
                const InferenceResult res = turbo_infer(chain, batch.Y, snr_db, &batch.H);
                row = detail::make_row(est, snr_db, static_cast<int>(chain.iterations.size()) - 1,
                                       res.trace.back().nmse_db);
            } else if (est == "turbo_universal") {
                const InferenceResult res = turbo_infer(*universal_chain, batch.Y, snr_db, &batch.H);
                if (!res.warning.empty())
                    rep.notes.push_back(res.warning);
                row = detail::make_row(est, snr_db,
                                       static_cast<int>(universal_chain->iterations.size()) - 1,
                                       res.trace.back().nmse_db);
            } else {
                continue;
            }
            measured[est] = row.nmse_db;
            rep.rows.push_back(std::move(row));
        }

        // Ordering annotation for the closed-form family.
        const double slack = 0.1;
        auto has = [&](const char *k) { return measured.count(k) != 0; };
        std::ostringstream note;
        note << "snr=" << snr_db << " ordering:";
        bool ok = true;
        if (has("genie") && has("geometric"))
            ok &= measured["genie"] <= measured["geometric"] + slack;
        if (has("geometric") && has("arithmetic"))
            ok &= measured["geometric"] <= measured["arithmetic"] + slack;
        if (has("arithmetic") && has("v_only") && has("h_only"))
            ok &= measured["arithmetic"] <=
                  std::min(measured["v_only"], measured["h_only"]) + slack;
        if (has("v_only") && has("ls"))
            ok &= std::min(measured["v_only"], measured["h_only"]) <= measured["ls"] + slack;
        if (has("ls"))
            ok &= std::abs(measured["ls"] + snr_db) <= slack;
        note << (ok ? " ok" : " VIOLATED");
        rep.notes.push_back(note.str());
    }

    rep.csv_path = (std::filesystem::path(cfg.out_dir) / "nmse_vs_snr.csv").string();
    write_report_csv(rep, rep.csv_path);
    return rep;
}

// Per-iteration NMSE of a dedicated chain at each SNR grid point, plus the
// genie reference. Iteration i means the output after chain stage i, so a
// config asking for I iterations yields stages 0..I (I+1 trained stages).
// Writes <out>/nmse_vs_iteration.csv.
inline ExperimentReport run_nmse_vs_iteration(const ExperimentConfig &cfg,
                                              std::ostream *log = nullptr) {
    cfg.validate();
    ExperimentReport rep;
    rep.run_id = config_hash(cfg);
    rep.seed = cfg.seed;
    const CovarianceSet cov = build_covariances(cfg.spatial, true);

    for (std::size_t si = 0; si < cfg.snr_grid_db.size(); ++si) {
        const double snr_db = cfg.snr_grid_db[si];
        const ModelChain chain = obtain_dedicated_chain(cfg, snr_db, cfg.turbo_iterations + 1, log);
        if (chain.truncated && log)
            *log << "note: " << chain.diagnostic << "\n";
        const detail::EvalBatch batch = detail::make_eval_batch(cfg, cov, snr_db, 0xA000 + si);

        const ComplexMatrix W = genie_filter(*cov.R_full, batch.N0);
        std::vector<ComplexMatrix> genie_est;
        genie_est.reserve(batch.Y.size());
        for (const ComplexMatrix &y : batch.Y)
            genie_est.push_back(apply_full_filter(W, y));
        rep.rows.push_back(detail::make_row("genie", snr_db, -1, nmse(genie_est, batch.H)));

        const InferenceResult res = turbo_infer(chain, batch.Y, snr_db, &batch.H);
        for (const InferenceTraceRow &t : res.trace) {
            ReportRow row = detail::make_row("turbo_dedicated", snr_db,
                                             static_cast<int>(t.iteration), t.nmse_db);
            row.has_variance = true;
            row.var_a = t.residual_var;
            row.rho = 0.0;
            row.effective_fraction = 0.0;
            rep.rows.push_back(std::move(row));
        }
    }

    rep.csv_path = (std::filesystem::path(cfg.out_dir) / "nmse_vs_iteration.csv").string();
    write_report_csv(rep, rep.csv_path);
    return rep;
}

// Dedicated chain versus universal chains at the first SNR grid point.
// Margins (universal minus dedicated, at the final common iteration) land in
// report.margins_db keyed by space name. Writes <out>/universal_comparison.csv.
inline ExperimentReport run_universal_comparison(const ExperimentConfig &cfg,
                                                 std::ostream *log = nullptr) {
    cfg.validate();
    if (cfg.universal_spaces.empty())
        throw std::invalid_argument("run_universal_comparison: configure universal_spaces");
    ExperimentReport rep;
    rep.run_id = config_hash(cfg);
    rep.seed = cfg.seed;
    const double snr_db = cfg.snr_grid_db.front();
    const CovarianceSet cov = build_covariances(cfg.spatial, true);
    const detail::EvalBatch batch = detail::make_eval_batch(cfg, cov, snr_db, 0xB000);

    const ComplexMatrix W = genie_filter(*cov.R_full, batch.N0);
    std::vector<ComplexMatrix> genie_est;
    genie_est.reserve(batch.Y.size());
    for (const ComplexMatrix &y : batch.Y)
        genie_est.push_back(apply_full_filter(W, y));
    rep.rows.push_back(detail::make_row("genie", snr_db, -1, nmse(genie_est, batch.H)));

    const std::size_t entries = cfg.turbo_iterations + 1;
    const ModelChain ded = obtain_dedicated_chain(cfg, snr_db, entries, log);
    const InferenceResult ded_res = turbo_infer(ded, batch.Y, snr_db, &batch.H);
    for (const InferenceTraceRow &t : ded_res.trace)
        rep.rows.push_back(detail::make_row("turbo_dedicated", snr_db,
                                            static_cast<int>(t.iteration), t.nmse_db));
    const double ded_final = ded_res.trace.back().nmse_db;

    std::uint64_t salt = 0x200;
    for (const NamedSector &sector : cfg.universal_spaces) {
        const ModelChain uni = obtain_universal_chain(cfg, sector.space, entries, salt++, log);
        if (uni.truncated && log)
            *log << "note (" << sector.name << "): " << uni.diagnostic << "\n";
        const InferenceResult res = turbo_infer(uni, batch.Y, snr_db, &batch.H);
        const std::string label = "turbo_universal_" + sector.name;
        for (const InferenceTraceRow &t : res.trace)
            rep.rows.push_back(
                detail::make_row(label, snr_db, static_cast<int>(t.iteration), t.nmse_db));
        const double margin = res.trace.back().nmse_db - ded_final;
        rep.margins_db[sector.name] = margin;
        std::ostringstream note;
        note << "loss_vs_dedicated " << sector.name << " = " << margin << " dB";
        rep.notes.push_back(note.str());
    }

    rep.csv_path = (std::filesystem::path(cfg.out_dir) / "universal_comparison.csv").string();
    write_report_csv(rep, rep.csv_path);
    return rep;
}

// Residual-distribution tracking across chain iterations at the first SNR
// grid point. Iteration 0 is the raw observation noise; iteration i >= 1 is
// the output of chain stage i-1. Emits one histogram CSV per iteration plus a
// summary trace, and returns the per-iteration reports.
inline std::vector<PdfReport> run_pdf_tracking(const ExperimentConfig &cfg,
                                               std::ostream *log = nullptr) {
    cfg.validate();
    const double snr_db = cfg.snr_grid_db.front();
    const CovarianceSet cov = build_covariances(cfg.spatial);
    const ModelChain chain = obtain_dedicated_chain(cfg, snr_db, cfg.turbo_iterations + 1, log);
    const detail::EvalBatch batch = detail::make_eval_batch(cfg, cov, snr_db, 0xC000);

    std::vector<PdfReport> reports;
    std::vector<ComplexMatrix> cur = batch.Y;
    reports.push_back(residual_pdf(cur, batch.H));
    for (const ChainEntry &e : chain.iterations) {
        cur = apply_pair(*e.model_v, *e.model_h, cur, chain.window);
        reports.push_back(residual_pdf(cur, batch.H));
    }

    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    std::ofstream trace(fs::path(cfg.out_dir) / "pdf_trace.csv", std::ios::binary);
    trace << "iteration,variance,excess_kurtosis,max_abs_deviation,normality_z\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%zu,%.10e,%.6f,%.6f,%.6f", i, reports[i].variance,
                      reports[i].excess_kurtosis, reports[i].max_abs_deviation,
                      reports[i].normality_z);
        trace << buf << "\n";
        std::ostringstream name;
        name << "pdf_iter" << i << ".csv";
        std::ofstream out(fs::path(cfg.out_dir) / name.str(), std::ios::binary);
        out << "bin_center,empirical_density,fitted_density\n";
        for (std::size_t b = 0; b < reports[i].bin_centers.size(); ++b) {
            std::snprintf(buf, sizeof(buf), "%.8f,%.8f,%.8f", reports[i].bin_centers[b],
                          reports[i].empirical_density[b], reports[i].fitted_density[b]);
            out << buf << "\n";
        }
    }
    return reports;
}

}  // namespace turbomimo
