#include "corrnet/matrix.hpp"

#include <cmath>
#include <stdexcept>

namespace corrnet {

bool EmbeddingMatrix::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string EmbeddingMatrix::shape_str() const {
  return "[" + std::to_string(rows) + " x " + std::to_string(dim) + "]";
}

void require_finite(const EmbeddingMatrix& m, const std::string& what) {
  if (!m.all_finite()) {
    throw std::invalid_argument(what + ": non-finite entry in " + m.shape_str() + " matrix");
  }
}

void require_finite(std::span<const double> v, const std::string& what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw std::invalid_argument(what + ": non-finite entry at index " + std::to_string(i));
    }
  }
}

EmbeddingMatrix gather_rows(const EmbeddingMatrix& src, std::span<const std::size_t> idx) {
  EmbeddingMatrix out(idx.size(), src.dim);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= src.rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) +
                              " out of range for " + src.shape_str());
    }
    const double* s = src.row(idx[i]);
    double* d = out.row(i);
    for (std::size_t j = 0; j < src.dim; ++j) d[j] = s[j];
  }
  return out;
}

}  // namespace corrnet
