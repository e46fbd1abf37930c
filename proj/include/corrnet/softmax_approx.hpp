#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "corrnet/buffer.hpp"
#include "corrnet/matrix.hpp"
#include "corrnet/net.hpp"
#include "corrnet/rng.hpp"

namespace corrnet {

enum class ScorerKind { true_encoder, stale_buffer, corrected };
enum class SubsetMode { topk, gumbel };

// A source of target embeddings. true_encoder is either a fresh encoder over
// raw target features or a directly generated table (synthetic tasks);
// stale_buffer reads the cache; corrected applies the corrector to the cache.
struct Scorer {
  ScorerKind kind = ScorerKind::true_encoder;
  const MlpNet* encoder = nullptr;
  const EmbeddingMatrix* targets_raw = nullptr;
  const EmbeddingMatrix* table = nullptr;
  const TargetBuffer* buffer = nullptr;
  const MlpNet* corrector = nullptr;

  static Scorer true_net(const MlpNet& g, const EmbeddingMatrix& raw);
  static Scorer true_table(const EmbeddingMatrix& table);
  static Scorer stale(const TargetBuffer& b);
  static Scorer corrected_scorer(const MlpNet& h, const TargetBuffer& b);

  void validate() const;
  std::size_t n_targets() const;
  std::size_t dim() const;
  // Materializes the N x D embedding table under this scorer.
  EmbeddingMatrix embed_all() const;
};

struct TruncatedDistribution {
  std::size_t input_index = 0;
  std::vector<std::size_t> subset;  // sorted, unique, global target ids
  std::vector<double> logits;       // raw scores; beta applied in probs
  std::vector<double> probs;
  double beta = 1.0;

  // Position of a global target id in `subset`; throws if absent.
  std::size_t position_of(std::size_t target_id) const;
};

// ---- Table-level operations (the scorer-level ones materialize and defer
// ---- here; trainers that already hold a materialized table use these).

std::vector<double> full_distribution_table(const EmbeddingMatrix& table,
                                            std::span<const double> x, double beta);

std::vector<std::size_t> select_subset_table(const EmbeddingMatrix& table,
                                             std::span<const double> x, double beta,
                                             std::size_t k_hard, std::size_t k_uniform,
                                             SubsetMode mode, std::optional<std::size_t> label,
                                             Rng& rng);

TruncatedDistribution truncated_softmax_table(const EmbeddingMatrix& table,
                                              std::span<const double> x,
                                              std::span<const std::size_t> subset, double beta,
                                              std::size_t input_index = 0);

// ---- Scorer-level operations.

std::vector<double> full_distribution(const Scorer& scorer, std::span<const double> x,
                                      double beta);

// Union of k_hard hard candidates (top-k or Gumbel-Max over the scorer),
// k_uniform uniform draws without replacement, and the label if given;
// deduplicated and sorted; never refilled after dedup. Draw order: hard
// candidates first, then uniform, then label.
std::vector<std::size_t> select_subset(const Scorer& scorer, std::span<const double> x,
                                       double beta, std::size_t k_hard, std::size_t k_uniform,
                                       SubsetMode mode, std::optional<std::size_t> label,
                                       Rng& rng);

TruncatedDistribution truncated_softmax(const Scorer& scorer, std::span<const double> x,
                                        std::span<const std::size_t> subset, double beta,
                                        std::size_t input_index = 0);

// ---- Losses. Each returns the gradients with respect to the embedding rows
// ---- that feed it; callers backpropagate those through the owning nets, so
// ---- the stop-gradient split is decided entirely by what the caller does.

struct TaskLossResult {
  double loss = 0.0;
  std::vector<double> dlogits;   // beta * (P - onehot), per subset member
  std::vector<double> f_grad;    // gradient w.r.t. the query embedding
  EmbeddingMatrix g_rows_grad;   // gradient w.r.t. the fresh subset rows
};

// -log P(label | x) under p_true. g_rows are the fresh embeddings of
// p_true.subset in order; label is a global target id and must be in the
// subset.
TaskLossResult task_loss_ce(const TruncatedDistribution& p_true, std::span<const double> f_x,
                            const EmbeddingMatrix& g_rows, std::size_t label);

struct MseLossResult {
  double loss = 0.0;
  EmbeddingMatrix corrected_grad;
};

// Mean over rows of the squared Euclidean gap between fresh and corrected
// rows (squared convention, averaged).
MseLossResult corrector_loss_mse(const EmbeddingMatrix& g_rows,
                                 const EmbeddingMatrix& corrected_rows);

struct CorrectorCeResult {
  double loss = 0.0;
  std::vector<double> dlogits;   // beta * (P_h - P), per subset member
  EmbeddingMatrix corrected_grad;
};

// KL(p_true || p_h) over a shared subset, computed in log space. p_true is
// treated as a constant; the gradient flows into the corrected rows only.
CorrectorCeResult corrector_loss_ce(const TruncatedDistribution& p_true,
                                    const TruncatedDistribution& p_h,
                                    std::span<const double> f_x);

}  // namespace corrnet
