#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "corrnet/matrix.hpp"
#include "corrnet/net.hpp"

namespace corrnet {

// Cache of target embeddings. reembed_counter counts every row encoding the
// owner performs, including the initial pass; it is the run's cost metric.
struct TargetBuffer {
  EmbeddingMatrix embeddings;
  std::vector<std::uint64_t> last_refresh_step;
  std::uint64_t reembed_counter = 0;
};

struct StalenessReport {
  std::vector<double> per_row_l1;
  double mean = 0.0;
  double max = 0.0;
};

// One full encoding pass at step 0; reembed_counter = N.
TargetBuffer init_from_encoder(const MlpNet& g, const EmbeddingMatrix& targets_raw);

// Adopts precomputed embeddings (synthetic tasks where g' is generated
// directly). Counted as one initial pass.
TargetBuffer buffer_from_matrix(EmbeddingMatrix embeddings);

// Re-encodes the listed rows with the current g.
void refresh(TargetBuffer& buffer, const MlpNet& g, const EmbeddingMatrix& targets_raw,
             std::span<const std::size_t> rows, std::uint64_t step);
void refresh_all(TargetBuffer& buffer, const MlpNet& g, const EmbeddingMatrix& targets_raw,
                 std::uint64_t step);

StalenessReport staleness_l1(const TargetBuffer& buffer, const MlpNet& g,
                             const EmbeddingMatrix& targets_raw);

// ||B_y - fresh_y||_1 per row against an explicit fresh matrix.
StalenessReport staleness_l1(const EmbeddingMatrix& stale, const EmbeddingMatrix& fresh);

}  // namespace corrnet
