#include "corrnet/buffer.hpp"

#include <cmath>
#include <stdexcept>

namespace corrnet {

TargetBuffer init_from_encoder(const MlpNet& g, const EmbeddingMatrix& targets_raw) {
  TargetBuffer buf;
  if (targets_raw.rows == 0) {
    buf.embeddings = EmbeddingMatrix(0, g.spec().out_dim);
    return buf;
  }
  buf.embeddings = g.forward(targets_raw);
  require_finite(buf.embeddings, "init_from_encoder");
  buf.last_refresh_step.assign(targets_raw.rows, 0);
  buf.reembed_counter = targets_raw.rows;
  return buf;
}

TargetBuffer buffer_from_matrix(EmbeddingMatrix embeddings) {
  require_finite(embeddings, "buffer_from_matrix");
  TargetBuffer buf;
  buf.last_refresh_step.assign(embeddings.rows, 0);
  buf.reembed_counter = embeddings.rows;
  buf.embeddings = std::move(embeddings);
  return buf;
}

void refresh(TargetBuffer& buffer, const MlpNet& g, const EmbeddingMatrix& targets_raw,
             std::span<const std::size_t> rows, std::uint64_t step) {
  if (targets_raw.rows != buffer.embeddings.rows) {
    throw std::invalid_argument("refresh: raw targets " + targets_raw.shape_str() +
                                " do not match buffer " + buffer.embeddings.shape_str());
  }
  if (rows.empty()) return;
  for (std::size_t r : rows) {
    if (r >= buffer.embeddings.rows) {
      throw std::out_of_range("refresh: row " + std::to_string(r) + " out of range for buffer " +
                              buffer.embeddings.shape_str());
    }
  }
  const EmbeddingMatrix raw_rows = gather_rows(targets_raw, rows);
  const EmbeddingMatrix fresh = g.forward(raw_rows);
  require_finite(fresh, "refresh");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double* dst = buffer.embeddings.row(rows[i]);
    const double* src = fresh.row(i);
    for (std::size_t j = 0; j < fresh.dim; ++j) dst[j] = src[j];
    buffer.last_refresh_step[rows[i]] = step;
  }
  buffer.reembed_counter += rows.size();
}

void refresh_all(TargetBuffer& buffer, const MlpNet& g, const EmbeddingMatrix& targets_raw,
                 std::uint64_t step) {
  std::vector<std::size_t> rows(buffer.embeddings.rows);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  refresh(buffer, g, targets_raw, rows, step);
}

StalenessReport staleness_l1(const EmbeddingMatrix& stale, const EmbeddingMatrix& fresh) {
  if (!stale.same_shape(fresh)) {
    throw std::invalid_argument("staleness_l1: shape mismatch: " + stale.shape_str() + " vs " +
                                fresh.shape_str());
  }
  StalenessReport rep;
  rep.per_row_l1.assign(stale.rows, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(stale.rows); ++r) {
    const auto rr = static_cast<std::size_t>(r);
    double acc = 0.0;
    for (std::size_t j = 0; j < stale.dim; ++j) {
      acc += std::abs(stale.at(rr, j) - fresh.at(rr, j));
    }
    rep.per_row_l1[rr] = acc;
  }
  for (double v : rep.per_row_l1) {
    rep.mean += v;
    rep.max = std::max(rep.max, v);
  }
  if (!rep.per_row_l1.empty()) rep.mean /= static_cast<double>(rep.per_row_l1.size());
  return rep;
}

StalenessReport staleness_l1(const TargetBuffer& buffer, const MlpNet& g,
                             const EmbeddingMatrix& targets_raw) {
  const EmbeddingMatrix fresh = g.forward(targets_raw);
  return staleness_l1(buffer.embeddings, fresh);
}

}  // namespace corrnet
