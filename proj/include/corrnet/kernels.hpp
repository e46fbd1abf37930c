#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "corrnet/matrix.hpp"
#include "corrnet/rng.hpp"

namespace corrnet {

// Score matrix: out(i,j) = <inputs.row(i), targets.row(j)>.
// Rows are distributed across threads; every entry is accumulated in
// ascending coordinate order by a single owner thread.
EmbeddingMatrix matmul_scores(const EmbeddingMatrix& inputs, const EmbeddingMatrix& targets);

// scores(j) = <x, targets.row(j)>.
std::vector<double> matvec_scores(const EmbeddingMatrix& targets, std::span<const double> x);

// Max-shifted log(sum(exp(z))), ascending accumulation.
double log_sum_exp(std::span<const double> z);

std::vector<double> softmax(std::span<const double> logits, double beta);
std::vector<double> log_softmax(std::span<const double> logits, double beta);

// Indices of the k largest scores; ties broken by smaller index.
// Output sorted by (score desc, index asc); length min(k, N).
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

// Perturbs beta*logits with iid standard Gumbel noise (one draw per entry,
// ascending index order) and returns the top k perturbed indices. k = 1
// draws exactly from softmax(beta * logits).
std::vector<std::size_t> gumbel_max_sample(std::span<const double> logits, double beta,
                                           std::size_t k, Rng& rng);

// k distinct uniform indices from [0, n), in draw order (Floyd's algorithm).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

double kl_divergence(std::span<const double> p, std::span<const double> q);
double tv_distance(std::span<const double> p, std::span<const double> q);

// KL(softmax(beta*za) || softmax(beta*zb)) evaluated in log space, so it
// stays finite when beta is large enough to underflow the probabilities.
double kl_between_softmax(std::span<const double> za, std::span<const double> zb, double beta);

}  // namespace corrnet
