#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace corrnet {

// Row-major dense matrix of doubles. Rows are embedding vectors.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t r, std::size_t d) : rows(r), dim(d), data(r * d, 0.0) {}

  double* row(std::size_t i) { return data.data() + i * dim; }
  const double* row(std::size_t i) const { return data.data() + i * dim; }
  std::span<double> row_span(std::size_t i) { return {row(i), dim}; }
  std::span<const double> row_span(std::size_t i) const { return {row(i), dim}; }

  double& at(std::size_t i, std::size_t j) { return data[i * dim + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * dim + j]; }

  bool same_shape(const EmbeddingMatrix& o) const { return rows == o.rows && dim == o.dim; }
  bool all_finite() const;
  std::string shape_str() const;
};

// Throws std::invalid_argument naming `what` if any entry is non-finite.
void require_finite(const EmbeddingMatrix& m, const std::string& what);
void require_finite(std::span<const double> v, const std::string& what);

// Rows of `src` selected by `idx`, in order.
EmbeddingMatrix gather_rows(const EmbeddingMatrix& src, std::span<const std::size_t> idx);

}  // namespace corrnet
