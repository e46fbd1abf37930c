#include "corrnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace corrnet {

EmbeddingMatrix matmul_scores(const EmbeddingMatrix& inputs, const EmbeddingMatrix& targets) {
  if (inputs.dim != targets.dim) {
    throw std::invalid_argument("matmul_scores: dim mismatch: inputs " + inputs.shape_str() +
                                " vs targets " + targets.shape_str());
  }
  EmbeddingMatrix out(inputs.rows, targets.rows);
  const std::size_t d = inputs.dim;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(inputs.rows); ++i) {
    const double* a = inputs.row(static_cast<std::size_t>(i));
    double* o = out.row(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < targets.rows; ++j) {
      const double* b = targets.row(j);
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += a[t] * b[t];
      o[j] = acc;
    }
  }
  return out;
}

std::vector<double> matvec_scores(const EmbeddingMatrix& targets, std::span<const double> x) {
  if (targets.dim != x.size()) {
    throw std::invalid_argument("matvec_scores: dim mismatch: targets " + targets.shape_str() +
                                " vs vector length " + std::to_string(x.size()));
  }
  std::vector<double> out(targets.rows);
  const std::size_t d = targets.dim;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(targets.rows); ++j) {
    const double* b = targets.row(static_cast<std::size_t>(j));
    double acc = 0.0;
    for (std::size_t t = 0; t < d; ++t) acc += x[t] * b[t];
    out[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  double m = z[0];
  for (std::size_t i = 1; i < z.size(); ++i) m = std::max(m, z[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += std::exp(z[i] - m);
  return m + std::log(s);
}

static void check_softmax_args(std::span<const double> logits, double beta, const char* who) {
  if (logits.empty()) throw std::invalid_argument(std::string(who) + ": empty logits");
  if (!(beta > 0.0)) throw std::invalid_argument(std::string(who) + ": beta must be positive");
  require_finite(logits, who);
}

std::vector<double> softmax(std::span<const double> logits, double beta) {
  check_softmax_args(logits, beta, "softmax");
  const std::size_t n = logits.size();
  double m = beta * logits[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, beta * logits[i]);
  std::vector<double> out(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(beta * logits[i] - m);
    s += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= s;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits, double beta) {
  check_softmax_args(logits, beta, "log_softmax");
  const std::size_t n = logits.size();
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = beta * logits[i];
  const double lse = log_sum_exp(z);
  for (std::size_t i = 0; i < n; ++i) z[i] -= lse;
  return z;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  if (k == 0) throw std::invalid_argument("top_k: k must be at least 1");
  if (scores.empty()) throw std::invalid_argument("top_k: empty scores");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t kk = std::min(k, scores.size());
  auto better = [&scores](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(), better);
  idx.resize(kk);
  return idx;
}

std::vector<std::size_t> gumbel_max_sample(std::span<const double> logits, double beta,
                                           std::size_t k, Rng& rng) {
  if (k > logits.size()) {
    throw std::invalid_argument("gumbel_max_sample: k = " + std::to_string(k) +
                                " exceeds N = " + std::to_string(logits.size()));
  }
  if (k == 0) throw std::invalid_argument("gumbel_max_sample: k must be at least 1");
  check_softmax_args(logits, beta, "gumbel_max_sample");
  std::vector<double> perturbed(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    perturbed[i] = beta * logits[i] + rng.next_gumbel();
  }
  return top_k(perturbed, k);
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) {
    throw std::invalid_argument("sample_without_replacement: k = " + std::to_string(k) +
                                " exceeds n = " + std::to_string(n));
  }
  // Floyd's algorithm: k draws total, no retry loop.
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    auto t = static_cast<std::size_t>(rng.next_below(j + 1));
    if (std::find(out.begin(), out.end(), t) != out.end()) {
      out.push_back(j);
    } else {
      out.push_back(t);
    }
  }
  return out;
}

static void check_prob_pair(std::span<const double> p, std::span<const double> q, const char* who) {
  if (p.size() != q.size()) {
    throw std::invalid_argument(std::string(who) + ": length mismatch: " + std::to_string(p.size()) +
                                " vs " + std::to_string(q.size()));
  }
  if (p.empty()) throw std::invalid_argument(std::string(who) + ": empty input");
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  check_prob_pair(p, q, "kl_divergence");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
    throw std::invalid_argument("kl_divergence: inputs not normalized (sums " + std::to_string(sp) +
                                ", " + std::to_string(sq) + ")");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) {
      throw std::invalid_argument("kl_divergence: support violation at index " + std::to_string(i));
    }
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  check_prob_pair(p, q, "tv_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

double kl_between_softmax(std::span<const double> za, std::span<const double> zb, double beta) {
  if (za.size() != zb.size()) {
    throw std::invalid_argument("kl_between_softmax: length mismatch: " + std::to_string(za.size()) +
                                " vs " + std::to_string(zb.size()));
  }
  const std::vector<double> la = log_softmax(za, beta);
  const std::vector<double> lb = log_softmax(zb, beta);
  double acc = 0.0;
  for (std::size_t i = 0; i < la.size(); ++i) {
    acc += std::exp(la[i]) * (la[i] - lb[i]);
  }
  return acc;
}

}  // namespace corrnet
