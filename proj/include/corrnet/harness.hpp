#pragma once

// Run orchestration behind the CLI: resolved flat configs, run directories
// with manifests, sweep grids, and report aggregation.

#include <cstdint>
#include <string>
#include <vector>

#include "corrnet/config.hpp"
#include "corrnet/net.hpp"
#include "corrnet/report.hpp"
#include "corrnet/synth.hpp"
#include "corrnet/trainer.hpp"

namespace corrnet {

// Full key set with defaults for one subcommand; single source of truth for
// the flat schema. Every run digest is computed over this resolved form.
FlatConfig default_flat_config(const std::string& command);

// Overlays user entries onto the command defaults; rejects unknown keys.
FlatConfig resolve_config(const std::string& command, const FlatConfig& user);

SynthConfig synth_config_from(const FlatConfig& cfg);
TrainConfig train_config_from(const FlatConfig& cfg);
MlpSpec corrector_spec_from(const FlatConfig& cfg, std::size_t dim);
MlpSpec encoder_spec_from(const FlatConfig& cfg, std::size_t dim);
MlpSpec reader_spec_from(const FlatConfig& cfg, std::size_t in_dim, std::size_t vocab);

std::vector<std::uint64_t> parse_u64_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

// Seed for sweep cell `index` under `master_seed` (cells own disjoint streams).
std::uint64_t cell_seed(std::uint64_t master_seed, std::size_t index);

// Each run_* resolves cfg, executes, and writes into out_dir:
// manifest.json, config.resolved, and the command's data files.
RunManifest run_synth_gen(const FlatConfig& cfg, const std::string& out_dir);
RunManifest run_train_corrector(const FlatConfig& cfg, const std::string& out_dir);
RunManifest run_train_joint(const FlatConfig& cfg, const std::string& out_dir);
RunManifest run_train_rlm(const FlatConfig& cfg, const std::string& out_dir);
RunManifest run_sweep_capacity(const FlatConfig& cfg, const std::string& out_dir);
RunManifest run_sweep_fraction(const FlatConfig& cfg, const std::string& out_dir);
RunManifest run_check_theory(const FlatConfig& cfg, const std::string& out_dir);

// Small-encoder warp: trains a corrector from a small encoder's table toward
// a large encoder's table with uniformly sampled targets per query, then
// scores neighbor-precision overlap against the large table.
struct WarpResult {
  double precision_corrected = 0.0;
  double precision_uncorrected = 0.0;
  std::size_t k = 0;
  double final_corrector_loss = 0.0;
};
WarpResult small_approximates_large(const FlatConfig& cfg);

RunManifest run_eval(const std::string& task_dir, const std::string& f_path,
                     const std::string& g_path, const std::vector<std::size_t>& ks,
                     const std::string& out_dir);

int run_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// Quantiles with linear interpolation on sorted data; q in [0, 1].
double quantile(std::vector<double> values, double q);

int cli_dispatch(const std::vector<std::string>& args);

}  // namespace corrnet
