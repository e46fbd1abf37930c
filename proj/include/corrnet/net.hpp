#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "corrnet/matrix.hpp"
#include "corrnet/rng.hpp"

namespace corrnet {

// Residual ReLU MLP. hidden may be empty (a single affine map). The residual
// connection spans the whole net: the input is added to the final affine
// output, which requires in_dim == out_dim.
struct MlpSpec {
  std::size_t in_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t out_dim = 0;
  bool residual = false;

  void validate() const;
  // (fan_in, fan_out) of each affine layer, input to output.
  std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const;
};

enum class InitMode { he_normal, zero_residual };

struct Layer {
  std::size_t fan_in = 0, fan_out = 0;
  std::vector<double> w;   // [fan_out x fan_in] row-major
  std::vector<double> b;   // [fan_out]
  std::vector<double> gw;  // gradient accumulators
  std::vector<double> gb;
};

struct ParamTensor {
  std::span<double> p;
  std::span<double> g;
  std::string name;
};

// Activations recorded by forward() for the matching backward() call.
struct ForwardCache {
  std::uint64_t epoch = 0;           // net epoch at forward time
  EmbeddingMatrix input;
  std::vector<EmbeddingMatrix> pre;  // affine output of each layer
  std::vector<EmbeddingMatrix> act;  // input to each layer: act[0] = input, act[l] = relu(pre[l-1])
};

class MlpNet {
 public:
  MlpNet() = default;

  // he_normal: weights ~ Normal(0, variance_scale * 2 / fan_in), biases 0.
  // zero_residual: he_normal hidden layers, final layer all zero, so a
  // residual net computes the identity map exactly.
  static MlpNet init(const MlpSpec& spec, InitMode mode, Rng& rng, double variance_scale = 1.0);

  const MlpSpec& spec() const { return spec_; }
  std::size_t parameter_count() const;
  std::uint64_t epoch() const { return epoch_; }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Flat parameter/gradient views in checkpoint order (per layer: w then b).
  std::vector<ParamTensor> param_tensors();

  EmbeddingMatrix forward(const EmbeddingMatrix& batch, ForwardCache* cache = nullptr) const;

  // Accumulates parameter gradients; returns the gradient w.r.t. the batch.
  // The cache must come from a forward() on this net at the current epoch.
  EmbeddingMatrix backward(const ForwardCache& cache, const EmbeddingMatrix& out_grad);

  void zero_grads();
  bool grads_all_zero() const;

  // Any parameter mutation must bump the epoch; forward caches from before
  // the mutation become invalid.
  void bump_epoch() { ++epoch_; }

  // For checkpoint loading.
  static MlpNet from_layers(const MlpSpec& spec, std::vector<Layer> layers);

 private:
  MlpSpec spec_;
  std::vector<Layer> layers_;
  std::uint64_t epoch_ = 0;
};

}  // namespace corrnet
