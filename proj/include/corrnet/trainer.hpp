#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "corrnet/buffer.hpp"
#include "corrnet/net.hpp"
#include "corrnet/softmax_approx.hpp"
#include "corrnet/synth.hpp"

namespace corrnet {

enum class CorrectorLossKind { mse, ce };
enum class BufferPolicy { never, every_r };
enum class JointBaseline { stale, exhaustive };
enum class RlmArm { corrector, frozen, exhaustive };

struct TrainConfig {
  std::uint64_t steps = 2000;
  std::size_t batch_size = 128;
  std::size_t k_hard = 64;
  std::size_t k_uniform = 64;
  bool include_uniform = true;
  bool share_negatives = true;
  SubsetMode subset_mode = SubsetMode::topk;
  double beta = 1.0;
  CorrectorLossKind corrector_loss = CorrectorLossKind::ce;
  double corrector_weight = 10.0;
  BufferPolicy buffer_policy = BufferPolicy::never;
  std::uint64_t refresh_every = 500;
  double encoder_lr = 1e-3;
  double corrector_lr = 0.03;
  double reader_lr = 1e-3;
  double encoder_init_scale = 1.0;
  std::uint64_t eval_every = 200;
  std::uint64_t metric_cadence = 1;
  std::uint64_t seed = 0;

  // isolated corrector training
  double sample_fraction = 1.0;
  std::size_t isolated_queries = 64;
  std::size_t isolated_k_hard = 32;
  std::size_t isolated_k_uniform = 32;
  std::uint64_t max_epochs = 1000;
  std::uint64_t patience = 100;

  // RLM
  std::size_t rlm_k = 32;
  std::size_t rlm_batch = 32;

  void validate() const;
};

struct StepRecord {
  std::uint64_t step = 0;
  double task_loss = 0.0;
  double corrector_loss = 0.0;
  double staleness_l1 = 0.0;
  double kl_ph = 0.0;
  double kl_pgp = 0.0;
};

struct EvalRecord {
  std::uint64_t step = 0;
  std::map<std::size_t, double> recall;
  double answer_accuracy = -1.0;  // RLM only; -1 when not applicable
  std::uint64_t reembed_counter = 0;
};

struct RunReport {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  double final_task_loss = 0.0;
  double final_corrector_loss = 0.0;
  double final_kl_ph = 0.0;
  double final_kl_pgp = 0.0;
  double final_staleness_l1 = 0.0;
  std::map<std::size_t, double> final_recall;
  double final_answer_accuracy = -1.0;
  std::uint64_t reembed_counter = 0;
  std::uint64_t epochs_ran = 0;  // isolated loop
  std::uint64_t best_epoch = 0;  // isolated loop
};

struct IsolatedResult {
  MlpNet corrector;
  RunReport report;
};

struct JointResult {
  MlpNet f;
  MlpNet g;
  MlpNet corrector;  // uninitialized in baseline runs
  TargetBuffer buffer;
  RunReport report;
  bool has_corrector = false;
};

struct RlmResult {
  MlpNet f;
  MlpNet g;
  MlpNet reader;
  MlpNet corrector;
  TargetBuffer buffer;
  RunReport report;
};

// Corrector-only training on a generated task (fixed f(x), g(y), g'(y)).
// Collects a training set of (query, pool-restricted subset) examples once
// under the stale scorer (the identity-initialized corrector scores the
// same), then runs full-batch Adam epochs with the configured loss and the
// patience stopping rule. Final KLs are measured over the probe set against
// full-support brute force.
IsolatedResult train_corrector_isolated(const SynthTask& task, const MlpSpec& corrector_spec,
                                        double sample_fraction, const TrainConfig& config);

// Joint dual-encoder + corrector training over raw features. Per step:
// minibatch, corrected scores over the whole buffer, per-example subset
// (hard + uniform + label, optionally shared across the batch as a union),
// fresh g on the subset only (never written back), task CE into the
// encoders, corrector loss into the corrector, buffer policy applied before
// the step.
JointResult train_joint(const SynthTask& task, const MlpSpec& f_spec, const MlpSpec& g_spec,
                        const MlpSpec& corrector_spec, const TrainConfig& config);

// Reference arms: same loop shape and identical random stream, no corrector.
// stale never refreshes; exhaustive refreshes every refresh_every steps.
JointResult train_joint_baseline(const SynthTask& task, const MlpSpec& f_spec,
                                 const MlpSpec& g_spec, const TrainConfig& config,
                                 JointBaseline baseline);

// Toy retrieval-augmented LM training: reader NLL on the marginal answer
// likelihood, perplexity-distillation CE for the retriever, corrector CE for
// the corrector; subsets are per-example (not shared), top-k only.
RlmResult train_rlm(const SynthTask& task, const MlpSpec& f_spec, const MlpSpec& g_spec,
                    const MlpSpec& reader_spec, const MlpSpec& corrector_spec,
                    const TrainConfig& config, RlmArm arm);

// Brute-force recall@k of labeled queries against a fresh target table.
std::map<std::size_t, double> evaluate_recall(const EmbeddingMatrix& target_table,
                                              const EmbeddingMatrix& queries,
                                              const std::vector<std::size_t>& labels,
                                              const std::vector<std::size_t>& ks);

// Encodes eval queries/targets with the trained nets first.
std::map<std::size_t, double> evaluate_recall(const MlpNet& f, const MlpNet& g,
                                              const SynthTask& task,
                                              const std::vector<std::size_t>& ks);

}  // namespace corrnet
