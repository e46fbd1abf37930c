#include "corrnet/softmax_approx.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "corrnet/kernels.hpp"

namespace corrnet {

Scorer Scorer::true_net(const MlpNet& g, const EmbeddingMatrix& raw) {
  Scorer s;
  s.kind = ScorerKind::true_encoder;
  s.encoder = &g;
  s.targets_raw = &raw;
  return s;
}

Scorer Scorer::true_table(const EmbeddingMatrix& table) {
  Scorer s;
  s.kind = ScorerKind::true_encoder;
  s.table = &table;
  return s;
}

Scorer Scorer::stale(const TargetBuffer& b) {
  Scorer s;
  s.kind = ScorerKind::stale_buffer;
  s.buffer = &b;
  return s;
}

Scorer Scorer::corrected_scorer(const MlpNet& h, const TargetBuffer& b) {
  Scorer s;
  s.kind = ScorerKind::corrected;
  s.corrector = &h;
  s.buffer = &b;
  return s;
}

void Scorer::validate() const {
  switch (kind) {
    case ScorerKind::true_encoder:
      if (table) return;
      if (!encoder || !targets_raw) {
        throw std::invalid_argument("Scorer: true_encoder needs an encoder + raw targets or a table");
      }
      return;
    case ScorerKind::stale_buffer:
      if (!buffer) throw std::invalid_argument("Scorer: stale_buffer needs a buffer");
      return;
    case ScorerKind::corrected:
      if (!corrector || !buffer) {
        throw std::invalid_argument("Scorer: corrected needs a corrector and a buffer");
      }
      if (corrector->spec().in_dim != buffer->embeddings.dim ||
          corrector->spec().out_dim != buffer->embeddings.dim) {
        throw std::invalid_argument("Scorer: corrected requires corrector in_dim = out_dim = " +
                                    std::to_string(buffer->embeddings.dim));
      }
      return;
  }
  throw std::logic_error("Scorer: bad kind");
}

std::size_t Scorer::n_targets() const {
  switch (kind) {
    case ScorerKind::true_encoder:
      return table ? table->rows : targets_raw->rows;
    case ScorerKind::stale_buffer:
    case ScorerKind::corrected:
      return buffer->embeddings.rows;
  }
  return 0;
}

std::size_t Scorer::dim() const {
  switch (kind) {
    case ScorerKind::true_encoder:
      return table ? table->dim : encoder->spec().out_dim;
    case ScorerKind::stale_buffer:
    case ScorerKind::corrected:
      return buffer->embeddings.dim;
  }
  return 0;
}

EmbeddingMatrix Scorer::embed_all() const {
  validate();
  switch (kind) {
    case ScorerKind::true_encoder:
      return table ? *table : encoder->forward(*targets_raw);
    case ScorerKind::stale_buffer:
      return buffer->embeddings;
    case ScorerKind::corrected:
      return corrector->forward(buffer->embeddings);
  }
  throw std::logic_error("Scorer: bad kind");
}

std::size_t TruncatedDistribution::position_of(std::size_t target_id) const {
  auto it = std::lower_bound(subset.begin(), subset.end(), target_id);
  if (it == subset.end() || *it != target_id) {
    throw std::invalid_argument("TruncatedDistribution: target " + std::to_string(target_id) +
                                " not in subset");
  }
  return static_cast<std::size_t>(it - subset.begin());
}

std::vector<double> full_distribution_table(const EmbeddingMatrix& table,
                                            std::span<const double> x, double beta) {
  if (table.rows == 0) throw std::invalid_argument("full_distribution: empty target set");
  const std::vector<double> scores = matvec_scores(table, x);
  return softmax(scores, beta);
}

std::vector<std::size_t> select_subset_table(const EmbeddingMatrix& table,
                                             std::span<const double> x, double beta,
                                             std::size_t k_hard, std::size_t k_uniform,
                                             SubsetMode mode, std::optional<std::size_t> label,
                                             Rng& rng) {
  const std::size_t n = table.rows;
  if (k_hard + k_uniform > n) {
    throw std::invalid_argument("select_subset: k_hard + k_uniform = " +
                                std::to_string(k_hard + k_uniform) + " exceeds N = " +
                                std::to_string(n));
  }
  if (label && *label >= n) {
    throw std::invalid_argument("select_subset: label " + std::to_string(*label) +
                                " out of range");
  }
  std::vector<std::size_t> out;
  out.reserve(k_hard + k_uniform + 1);
  if (k_hard > 0) {
    const std::vector<double> scores = matvec_scores(table, x);
    std::vector<std::size_t> hard;
    if (mode == SubsetMode::topk) {
      hard = top_k(scores, k_hard);
    } else {
      hard = gumbel_max_sample(scores, beta, k_hard, rng);
    }
    out.insert(out.end(), hard.begin(), hard.end());
  }
  if (k_uniform > 0) {
    const std::vector<std::size_t> uni = sample_without_replacement(n, k_uniform, rng);
    out.insert(out.end(), uni.begin(), uni.end());
  }
  if (label) out.push_back(*label);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

TruncatedDistribution truncated_softmax_table(const EmbeddingMatrix& table,
                                              std::span<const double> x,
                                              std::span<const std::size_t> subset, double beta,
                                              std::size_t input_index) {
  if (subset.empty()) throw std::invalid_argument("truncated_softmax: empty subset");
  TruncatedDistribution d;
  d.input_index = input_index;
  d.beta = beta;
  d.subset.assign(subset.begin(), subset.end());
  for (std::size_t i = 0; i + 1 < d.subset.size(); ++i) {
    if (d.subset[i] >= d.subset[i + 1]) {
      throw std::invalid_argument("truncated_softmax: subset must be sorted and unique");
    }
  }
  if (d.subset.back() >= table.rows) {
    throw std::out_of_range("truncated_softmax: subset index " + std::to_string(d.subset.back()) +
                            " out of range for " + table.shape_str());
  }
  d.logits.resize(d.subset.size());
  for (std::size_t i = 0; i < d.subset.size(); ++i) {
    const double* row = table.row(d.subset[i]);
    double acc = 0.0;
    for (std::size_t j = 0; j < table.dim; ++j) acc += x[j] * row[j];
    d.logits[i] = acc;
  }
  d.probs = softmax(d.logits, beta);
  return d;
}

std::vector<double> full_distribution(const Scorer& scorer, std::span<const double> x,
                                      double beta) {
  const EmbeddingMatrix table = scorer.embed_all();
  return full_distribution_table(table, x, beta);
}

std::vector<std::size_t> select_subset(const Scorer& scorer, std::span<const double> x,
                                       double beta, std::size_t k_hard, std::size_t k_uniform,
                                       SubsetMode mode, std::optional<std::size_t> label,
                                       Rng& rng) {
  const EmbeddingMatrix table = scorer.embed_all();
  return select_subset_table(table, x, beta, k_hard, k_uniform, mode, label, rng);
}

TruncatedDistribution truncated_softmax(const Scorer& scorer, std::span<const double> x,
                                        std::span<const std::size_t> subset, double beta,
                                        std::size_t input_index) {
  const EmbeddingMatrix table = scorer.embed_all();
  return truncated_softmax_table(table, x, subset, beta, input_index);
}

TaskLossResult task_loss_ce(const TruncatedDistribution& p_true, std::span<const double> f_x,
                            const EmbeddingMatrix& g_rows, std::size_t label) {
  const std::size_t n = p_true.subset.size();
  if (g_rows.rows != n || g_rows.dim != f_x.size()) {
    throw std::invalid_argument("task_loss_ce: g_rows " + g_rows.shape_str() +
                                " does not match subset size " + std::to_string(n) +
                                " and query dim " + std::to_string(f_x.size()));
  }
  const std::size_t pos = p_true.position_of(label);

  TaskLossResult r;
  const std::vector<double> logp = log_softmax(p_true.logits, p_true.beta);
  r.loss = -logp[pos];
  r.dlogits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.dlogits[i] = p_true.beta * (std::exp(logp[i]) - (i == pos ? 1.0 : 0.0));
  }
  const std::size_t d = f_x.size();
  r.f_grad.assign(d, 0.0);
  r.g_rows_grad = EmbeddingMatrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* g = g_rows.row(i);
    double* gg = r.g_rows_grad.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      r.f_grad[j] += r.dlogits[i] * g[j];
      gg[j] = r.dlogits[i] * f_x[j];
    }
  }
  return r;
}

MseLossResult corrector_loss_mse(const EmbeddingMatrix& g_rows,
                                 const EmbeddingMatrix& corrected_rows) {
  if (!g_rows.same_shape(corrected_rows)) {
    throw std::invalid_argument("corrector_loss_mse: shape mismatch: " + g_rows.shape_str() +
                                " vs " + corrected_rows.shape_str());
  }
  if (g_rows.rows == 0) throw std::invalid_argument("corrector_loss_mse: empty batch");
  MseLossResult r;
  r.corrected_grad = EmbeddingMatrix(g_rows.rows, g_rows.dim);
  const double inv = 1.0 / static_cast<double>(g_rows.rows);
  for (std::size_t i = 0; i < g_rows.rows; ++i) {
    for (std::size_t j = 0; j < g_rows.dim; ++j) {
      const double diff = corrected_rows.at(i, j) - g_rows.at(i, j);
      r.loss += diff * diff * inv;
      r.corrected_grad.at(i, j) = 2.0 * diff * inv;
    }
  }
  return r;
}

CorrectorCeResult corrector_loss_ce(const TruncatedDistribution& p_true,
                                    const TruncatedDistribution& p_h,
                                    std::span<const double> f_x) {
  if (p_true.subset != p_h.subset) {
    throw std::invalid_argument("corrector_loss_ce: subsets differ");
  }
  if (p_true.input_index != p_h.input_index) {
    throw std::invalid_argument("corrector_loss_ce: input index mismatch");
  }
  if (p_true.beta != p_h.beta) {
    throw std::invalid_argument("corrector_loss_ce: beta mismatch");
  }
  const std::size_t n = p_true.subset.size();
  CorrectorCeResult r;
  const std::vector<double> lp = log_softmax(p_true.logits, p_true.beta);
  const std::vector<double> lh = log_softmax(p_h.logits, p_h.beta);
  r.dlogits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = std::exp(lp[i]);
    r.loss += pi * (lp[i] - lh[i]);
    r.dlogits[i] = p_true.beta * (std::exp(lh[i]) - pi);
  }
  const std::size_t d = f_x.size();
  r.corrected_grad = EmbeddingMatrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = r.corrected_grad.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = r.dlogits[i] * f_x[j];
  }
  return r;
}

}  // namespace corrnet
