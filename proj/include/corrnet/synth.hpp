#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "corrnet/matrix.hpp"
#include "corrnet/net.hpp"
#include "corrnet/rng.hpp"

namespace corrnet {

struct SynthConfig {
  std::size_t n_targets = 4096;
  std::size_t dim = 8;
  std::size_t n_mixture_components = 20;
  double mean_scale = 3.0;       // std of component means
  double component_scale = 1.0;  // std within a component
  std::size_t drift_width = 64;  // hidden width of the drift MLP
  std::size_t drift_depth = 2;   // hidden layers of the drift MLP
  double drift_variance_scale = 0.1;
  double beta = 20.0;
  std::size_t probe_count = 256;
  std::size_t n_queries = 2048;
  double label_noise = 0.05;
  std::size_t vocab_size = 16;     // RLM answer vocabulary
  double answer_scale = 0.25;      // std of ground-truth answer weights
  double answer_query_weight = 1.0;  // scales the query half of the answer map
  std::uint64_t seed = 0;

  void validate() const;
  MlpSpec drift_spec() const;  // residual, hidden = drift_depth x drift_width
};

// One synthetic problem instance. Embedding-space fields serve the isolated
// corrector experiments; raw-feature fields serve the joint and RLM loops,
// where encoders own the embedding spaces.
struct SynthTask {
  EmbeddingMatrix stale_targets;  // g'
  EmbeddingMatrix true_targets;   // g = drift(g')
  EmbeddingMatrix queries;        // f(x) directly (isolated mode)
  EmbeddingMatrix probes;         // held-out queries for KL metrics
  std::vector<std::size_t> labels;

  EmbeddingMatrix raw_targets;  // y features (joint / RLM)
  EmbeddingMatrix raw_queries;  // x features, labeled
  EmbeddingMatrix eval_queries;
  std::vector<std::size_t> raw_labels;
  std::vector<std::size_t> eval_labels;

  EmbeddingMatrix answer_weights;  // vocab x 2D ground-truth reader
  std::vector<std::size_t> train_answers;
  std::vector<std::size_t> eval_gold;
  std::size_t vocab_size = 0;

  double beta = 20.0;
  double staleness_kl = 0.0;  // realized KL(P || P_g') at generation (isolated mode)
};

// Mixture-of-Gaussians sample: component means ~ Normal(0, mean_scale^2 I),
// equal weights, targets ~ Normal(mean, component_scale^2 I).
EmbeddingMatrix gen_targets(const SynthConfig& config, Rng& rng);

struct DriftResult {
  MlpNet drift;
  EmbeddingMatrix true_targets;
  double staleness_kl = 0.0;
};

// Randomly initialized residual drift MLP applied to the stale targets;
// drift_variance_scale 0 gives the exact identity. Reports the realized
// staleness KL(P || P_g') averaged over the probe set.
DriftResult gen_drift(const SynthConfig& config, Rng& rng, const EmbeddingMatrix& stale,
                      const EmbeddingMatrix& probes);

struct QuerySet {
  EmbeddingMatrix queries;
  std::vector<std::size_t> labels;
};

// query_i = targets.row(label_i) + label_noise * Normal(0, I).
QuerySet gen_queries(const EmbeddingMatrix& targets, std::size_t m, double label_noise, Rng& rng);

// Uniform directions on the unit sphere.
EmbeddingMatrix gen_unit_sphere(std::size_t count, std::size_t dim, Rng& rng);

struct CircleProfile {
  double rotation = 0.0;
  double warp_amplitude = 0.0;
  int warp_frequency = 3;
};

// 2-D task: stale targets evenly spaced on the unit circle, true targets at
// warped angles theta + rotation + amplitude * sin(frequency * theta).
SynthTask gen_unit_circle_toy(std::size_t n_targets, const CircleProfile& profile, Rng& rng,
                              std::size_t probe_count = 256, double beta = 20.0);

// Ground-truth reader log P*(a | x, y) = <w_a, concat(x, y)> over raw
// features; samples one training answer per labeled query from
// P*(. | x, y_label) and sets eval golds to the argmax answer.
void gen_rlm_answers(SynthTask& task, std::size_t vocab_size, double answer_scale, Rng& rng,
                     double query_weight = 1.0);

// Section-style builders.
SynthTask make_isolated_task(const SynthConfig& config);
SynthTask make_retrieval_task(const SynthConfig& config, bool with_answers);

// Task serialization: a directory of checkpoint-format matrices plus a flat
// text manifest (names, shapes, seed, config digest).
void save_task(const SynthTask& task, const std::string& dir,
               const std::string& config_digest);
SynthTask load_task(const std::string& dir);

}  // namespace corrnet
