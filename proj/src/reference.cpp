#include "corrnet/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace corrnet::refimpl {

EmbeddingMatrix matmul_scores(const EmbeddingMatrix& inputs, const EmbeddingMatrix& targets) {
  if (inputs.dim != targets.dim) {
    throw std::invalid_argument("refimpl::matmul_scores: dim mismatch");
  }
  EmbeddingMatrix out(inputs.rows, targets.rows);
  for (std::size_t i = 0; i < inputs.rows; ++i) {
    for (std::size_t j = 0; j < targets.rows; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < inputs.dim; ++t) {
        acc += inputs.at(i, t) * targets.at(j, t);
      }
      out.at(i, j) = acc;
    }
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits, double beta) {
  if (logits.empty()) throw std::invalid_argument("refimpl::softmax: empty logits");
  long double z = 0.0L;
  std::vector<long double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(beta) * static_cast<long double>(logits[i]));
    z += e[i];
  }
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<double>(e[i] / z);
  }
  return out;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  if (k == 0) throw std::invalid_argument("refimpl::top_k: k must be at least 1");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  idx.resize(std::min(k, scores.size()));
  return idx;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("refimpl::kl_divergence: length mismatch");
  long double acc = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw std::invalid_argument("refimpl::kl_divergence: support violation");
    acc += static_cast<long double>(p[i]) *
           std::log(static_cast<long double>(p[i]) / static_cast<long double>(q[i]));
  }
  return static_cast<double>(acc);
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("refimpl::tv_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

EmbeddingMatrix linear_forward(const EmbeddingMatrix& batch, std::span<const double> w,
                               std::span<const double> b, std::size_t fan_in,
                               std::size_t fan_out) {
  if (batch.dim != fan_in || w.size() != fan_in * fan_out || b.size() != fan_out) {
    throw std::invalid_argument("refimpl::linear_forward: shape mismatch");
  }
  EmbeddingMatrix out(batch.rows, fan_out);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t o = 0; o < fan_out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < fan_in; ++i) {
        acc += batch.at(r, i) * w[o * fan_in + i];
      }
      out.at(r, o) = acc;
    }
  }
  return out;
}

}  // namespace corrnet::refimpl
