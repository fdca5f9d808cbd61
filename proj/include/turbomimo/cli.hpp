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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "turbomimo/harness.hpp"

namespace turbomimo {

namespace detail {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitCheckFailed = 3;

struct CliOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    unsigned threads = 1;
    bool paper_scale = false;
    bool check = false;
};

inline void add_common_flags(CLI::App *cmd, CliOptions &opt, bool config_required = false) {
    auto *c = cmd->add_option("--config", opt.config_path, "experiment config (JSON)");
    if (config_required)
        c->required();
    cmd->add_option("--seed", opt.seed, "override the config seed");
    cmd->add_option("--out", opt.out_dir, "output directory (overrides config)");
    cmd->add_option("--threads", opt.threads, "worker thread cap")->default_val(1u);
    cmd->add_flag("--paper-scale", opt.paper_scale,
                  "full-size training budget instead of the fast desk-scale default");
}

// Table-scale training consumes 5e5 observation slices; at the default window
// of 256 that is 1953 optimizer steps (desk default: 780 = 2e5 slices).
inline ExperimentConfig resolve_config(const CliOptions &opt) {
    ExperimentConfig cfg;
    if (!opt.config_path.empty()) {
        std::ifstream probe(opt.config_path);
        if (!probe)
            throw CLI::ValidationError("--config", "cannot open " + opt.config_path);
        cfg = load_config(opt.config_path);
    }
    if (opt.seed)
        cfg.seed = *opt.seed;
    if (opt.out_dir)
        cfg.out_dir = *opt.out_dir;
    if (opt.paper_scale) {
        cfg.train.max_steps =
            (500000 + cfg.train.window * cfg.train.batch_size - 1) / (cfg.train.window * cfg.train.batch_size);
    }
    set_max_threads(opt.threads == 0 ? 1 : opt.threads);
    return cfg;
}

inline int check_failed(const std::string &what) {
    std::cerr << "check failed: " << what << "\n";
    return kExitCheckFailed;
}

}  // namespace detail

// Entry point behind the command-line tool; returns the process exit code
// (0 success, 1 usage error, 2 runtime failure, 3 --check violation).
inline int cli_main(int argc, const char *const *argv) {
    using detail::CliOptions;
    CLI::App app{"simulation and training tool for learned 2D-array channel estimation"};
    app.require_subcommand(1);

    CliOptions opt;
    double snr_db = 0.0;
    bool universal = false;
    std::size_t batch_k = 10000;
    std::size_t cost_m = 8, cost_n = 16;
    std::string chain_dir;

    CLI::App *cmd_train = app.add_subcommand("train", "train one dedicated subspace model pair");
    detail::add_common_flags(cmd_train, opt);
    cmd_train->add_option("--snr", snr_db, "training SNR in dB")->default_val(0.0);

    CLI::App *cmd_turbo = app.add_subcommand("turbo-train", "train an iterative refinement chain");
    detail::add_common_flags(cmd_turbo, opt);
    cmd_turbo->add_option("--snr", snr_db, "training SNR in dB (dedicated chains)")->default_val(0.0);
    cmd_turbo->add_flag("--universal", universal, "train across the config's universal_space");

    CLI::App *cmd_eval = app.add_subcommand("eval", "evaluate a stored chain on fresh data");
    detail::add_common_flags(cmd_eval, opt, /*config_required=*/true);
    cmd_eval->add_option("--chain", chain_dir, "chain directory")->required();
    cmd_eval->add_option("--snr", snr_db, "evaluation SNR in dB")->default_val(0.0);
    cmd_eval->add_flag("--check", opt.check, "assert per-iteration monotonicity");

    CLI::App *cmd_sweep = app.add_subcommand("sweep", "NMSE versus SNR for the configured estimators");
    detail::add_common_flags(cmd_sweep, opt);
    cmd_sweep->add_flag("--check", opt.check, "assert the estimator ordering properties");

    CLI::App *cmd_pdf = app.add_subcommand("pdf", "track residual distributions across iterations");
    detail::add_common_flags(cmd_pdf, opt);
    cmd_pdf->add_flag("--check", opt.check, "assert shrinking variance and Gaussian residuals");

    CLI::App *cmd_cost = app.add_subcommand("cost", "print the subspace complexity saving factor");
    cmd_cost->add_option("--m", cost_m, "vertical elements")->default_val(8);
    cmd_cost->add_option("--n", cost_n, "horizontal elements")->default_val(16);

    CLI::App *cmd_export = app.add_subcommand("export-batch", "write a binary channel/observation batch");
    detail::add_common_flags(cmd_export, opt);
    cmd_export->add_option("--snr", snr_db, "SNR in dB")->default_val(0.0);
    cmd_export->add_option("--k", batch_k, "number of samples")->default_val(10000);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? detail::kExitOk : detail::kExitUsage;
    }

    try {
        namespace fs = std::filesystem;
        if (cmd_cost->parsed()) {
            const double eta = cost_saving(cost_m, cost_n);
            std::printf("M=%zu N=%zu complexity saving O(M^4 N^4)/O(M N^4 + N M^4) = %.1f\n",
                        cost_m, cost_n, eta);
            return detail::kExitOk;
        }

        const ExperimentConfig cfg = detail::resolve_config(opt);

        if (cmd_train->parsed()) {
            fs::create_directories(cfg.out_dir);
            const NnModel mv = train_dedicated(cfg.spatial, snr_db, Subspace::vertical, cfg.train,
                                               mix64(cfg.seed + kGoldenGamma));
            const NnModel mh = train_dedicated(cfg.spatial, snr_db, Subspace::horizontal, cfg.train,
                                               mix64(cfg.seed + 2 * kGoldenGamma));
            save_model((fs::path(cfg.out_dir) / "model_v.tmnn").string(), mv);
            save_model((fs::path(cfg.out_dir) / "model_h.tmnn").string(), mh);
            std::printf("trained pair at %.2f dB: vertical loss %.6f, horizontal loss %.6f\n",
                        snr_db, mv.meta.final_loss, mh.meta.final_loss);
            return detail::kExitOk;
        }

        if (cmd_turbo->parsed()) {
            ModelChain chain;
            if (universal) {
                if (!cfg.universal_space)
                    throw std::invalid_argument("turbo-train --universal needs universal_space in the config");
                chain = obtain_universal_chain(cfg, *cfg.universal_space, cfg.turbo_iterations + 1,
                                               0x117, &std::cout);
            } else {
                chain = obtain_dedicated_chain(cfg, snr_db, cfg.turbo_iterations + 1, &std::cout);
            }
            const std::string dir =
                (fs::path(cfg.out_dir) / (universal ? "chain_universal" : "chain_dedicated")).string();
            save_chain(dir, chain);
            std::printf("chain with %zu stages saved to %s\n", chain.iterations.size(), dir.c_str());
            if (chain.truncated)
                std::printf("note: %s\n", chain.diagnostic.c_str());
            return detail::kExitOk;
        }

        if (cmd_eval->parsed()) {
            const ModelChain chain = load_chain(chain_dir);
            const CovarianceSet cov = build_covariances(cfg.spatial);
            const detail::EvalBatch batch = detail::make_eval_batch(cfg, cov, snr_db, 0xE7A1);
            const InferenceResult res = turbo_infer(chain, batch.Y, snr_db, &batch.H);
            if (!res.warning.empty())
                std::cout << "warning: " << res.warning << "\n";
            fs::create_directories(cfg.out_dir);
            std::ofstream out(fs::path(cfg.out_dir) / "eval_trace.csv", std::ios::binary);
            out << "iteration,nmse_db,residual_var\n";
            char buf[96];
            for (const InferenceTraceRow &t : res.trace) {
                std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.10e", t.iteration, t.nmse_db,
                              t.residual_var);
                out << buf << "\n";
            }
            std::printf("final NMSE %.3f dB after %zu stages (started at stage %zu)\n",
                        res.trace.back().nmse_db, res.trace.size(), res.start_index);
            if (opt.check) {
                for (std::size_t i = 1; i < res.trace.size(); ++i)
                    if (res.trace[i].nmse_db > res.trace[i - 1].nmse_db + 0.05)
                        return detail::check_failed("NMSE increased at stage " +
                                                    std::to_string(res.trace[i].iteration));
            }
            return detail::kExitOk;
        }

        if (cmd_sweep->parsed()) {
            const ExperimentReport rep = run_nmse_vs_snr(cfg, &std::cout);
            std::printf("wrote %s (%zu rows)\n", rep.csv_path.c_str(), rep.rows.size());
            for (const std::string &n : rep.notes)
                std::cout << n << "\n";
            if (opt.check)
                for (const std::string &n : rep.notes)
                    if (n.find("VIOLATED") != std::string::npos)
                        return detail::check_failed(n);
            return detail::kExitOk;
        }

        if (cmd_pdf->parsed()) {
            const std::vector<PdfReport> reports = run_pdf_tracking(cfg, &std::cout);
            std::printf("wrote %zu histogram files to %s\n", reports.size(), cfg.out_dir.c_str());
            if (opt.check) {
                const double n0 = std::pow(10.0, -cfg.snr_grid_db.front() / 10.0);
                if (std::abs(reports.front().variance - 0.5 * n0) > 0.02 * 0.5 * n0)
                    return detail::check_failed("raw-noise variance off the expected N0/2");
                for (std::size_t i = 1; i < reports.size(); ++i)
                    if (!(reports[i].variance < reports[i - 1].variance))
                        return detail::check_failed("residual variance did not shrink at iteration " +
                                                    std::to_string(i));
                for (const PdfReport &r : reports)
                    if (std::abs(r.excess_kurtosis) >= 0.1)
                        return detail::check_failed("residuals failed the Gaussianity check");
            }
            return detail::kExitOk;
        }

        if (cmd_export->parsed()) {
            const CovarianceSet cov = build_covariances(cfg.spatial);
            const std::uint64_t seed = mix64(cfg.seed + kGoldenGamma * 0xEB);
            std::vector<ComplexMatrix> H = sample_channels(cov, batch_k, seed);
            ChannelBatch batch = observe(std::move(H), snr_db, seed);
            batch.seed = seed;
            fs::create_directories(cfg.out_dir);
            char name[64];
            std::snprintf(name, sizeof(name), "batch_%.2fdB.tmb", snr_db);
            const std::string path = (fs::path(cfg.out_dir) / name).string();
            write_batch(path, batch);
            std::printf("wrote %zu samples to %s\n", batch.K, path.c_str());
            return detail::kExitOk;
        }

        std::cerr << "no subcommand selected\n";
        return detail::kExitUsage;
    } catch (const CLI::Error &e) {
        std::cerr << e.what() << "\n";
        return detail::kExitUsage;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return detail::kExitRuntime;
    }
}

}  // namespace turbomimo
