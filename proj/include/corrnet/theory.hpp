#pragma once

// Numeric checks of the staleness / distribution-distance / risk relations:
// the softmax total-variation bound at the logit level, the bounded-loss
// risk-gap inequality, and a parameter-perturbation Lipschitz probe.

#include <cstdint>
#include <span>
#include <vector>

#include "corrnet/matrix.hpp"
#include "corrnet/net.hpp"
#include "corrnet/rng.hpp"
#include "corrnet/synth.hpp"

namespace corrnet {

struct BoundCheckRecord {
  std::uint64_t instance_seed = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs - lhs
  bool pass = false;   // slack >= -1e-12
};

BoundCheckRecord make_bound_record(std::uint64_t instance_seed, double lhs, double rhs);

struct BoundSweep {
  std::vector<BoundCheckRecord> records;
  std::size_t n_pass = 0;
  double min_slack = 0.0;
  bool all_pass = false;
};

BoundSweep summarize_records(std::vector<BoundCheckRecord> records);

// lhs = tv(softmax(beta a), softmax(beta b)); rhs = (1/2) ||beta a - beta b||_1.
BoundCheckRecord check_softmax_tv_bound(std::span<const double> logits_a,
                                        std::span<const double> logits_b, double beta,
                                        std::uint64_t instance_seed = 0);

// Randomized instances with varying length, scale and temperature.
BoundSweep run_tv_bound_sweep(std::size_t instances, std::size_t max_len, std::uint64_t seed);

// Bounded per-target loss 1 - exp(-||true_row - approx_row||^2), in [0, 1).
// lhs = |risk under P - risk under Q| with both risks exact sums over all
// targets; rhs = tv(P, Q). P scores the probe against true_targets, Q against
// approx_targets.
BoundCheckRecord check_risk_gap(const EmbeddingMatrix& true_targets,
                                const EmbeddingMatrix& approx_targets,
                                std::span<const double> probe, double beta,
                                std::uint64_t instance_seed = 0);

// One record per probe row of the task, Q given by approx_targets
// (e.g. the stale table or a corrected table).
BoundSweep run_risk_gap_sweep(const EmbeddingMatrix& true_targets,
                              const EmbeddingMatrix& approx_targets,
                              const EmbeddingMatrix& probes, double beta);

struct PerturbationCell {
  std::size_t direction = 0;
  double u_norm = 0.0;
  double mean_l1_gap = 0.0;  // mean over targets of ||g(y) - g_pert(y)||_1
  double mean_tv = 0.0;      // mean over probes of tv(P, P_pert)
  double ratio = 0.0;        // mean_l1_gap / u_norm (0 at u_norm 0)
};

struct PerturbationSweep {
  std::vector<PerturbationCell> cells;
  double l_hat = 0.0;  // max ratio over all cells
};

// Perturbs every parameter of g along random unit directions in flattened
// parameter space, scaled to each requested norm.
PerturbationSweep staleness_perturbation_sweep(const MlpNet& g, const EmbeddingMatrix& raw_inputs,
                                               const EmbeddingMatrix& probes,
                                               std::span<const double> u_norms,
                                               std::size_t n_directions, double beta,
                                               std::uint64_t seed);

}  // namespace corrnet
