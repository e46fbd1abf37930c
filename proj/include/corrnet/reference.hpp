#pragma once

// Plain serial scalar-loop implementations, kept as an independent reference
// for the OpenMP kernels. Tests compare the two code paths; the benchmark
// times them against each other. The library itself never calls these.

#include <cstddef>
#include <span>
#include <vector>

#include "corrnet/matrix.hpp"

namespace corrnet::refimpl {

EmbeddingMatrix matmul_scores(const EmbeddingMatrix& inputs, const EmbeddingMatrix& targets);

// Direct exp/sum evaluation in extended precision, no max shift.
std::vector<double> softmax(std::span<const double> logits, double beta);

// Full stable sort by (score desc, index asc), then first k.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

// Extended-precision scalar sums.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double tv_distance(std::span<const double> p, std::span<const double> q);

// Single affine layer: out = batch * W^T + b, scalar loops.
// w is [fan_out x fan_in] row-major.
EmbeddingMatrix linear_forward(const EmbeddingMatrix& batch, std::span<const double> w,
                               std::span<const double> b, std::size_t fan_in,
                               std::size_t fan_out);

}  // namespace corrnet::refimpl
