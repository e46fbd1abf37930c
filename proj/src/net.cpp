#include "corrnet/net.hpp"

#include <cmath>
#include <stdexcept>

namespace corrnet {

void MlpSpec::validate() const {
  if (in_dim == 0 || out_dim == 0) {
    throw std::invalid_argument("MlpSpec: in_dim and out_dim must be positive");
  }
  for (std::size_t h : hidden) {
    if (h == 0) throw std::invalid_argument("MlpSpec: hidden dims must be positive");
  }
  if (residual && in_dim != out_dim) {
    throw std::invalid_argument("MlpSpec: residual requires in_dim == out_dim (got " +
                                std::to_string(in_dim) + " vs " + std::to_string(out_dim) + ")");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> MlpSpec::layer_shapes() const {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::size_t prev = in_dim;
  for (std::size_t h : hidden) {
    shapes.emplace_back(prev, h);
    prev = h;
  }
  shapes.emplace_back(prev, out_dim);
  return shapes;
}

MlpNet MlpNet::init(const MlpSpec& spec, InitMode mode, Rng& rng, double variance_scale) {
  spec.validate();
  if (mode == InitMode::zero_residual && !spec.residual) {
    throw std::invalid_argument("MlpNet::init: zero_residual requires a residual spec");
  }
  if (variance_scale < 0.0) {
    throw std::invalid_argument("MlpNet::init: variance_scale must be nonnegative");
  }
  MlpNet net;
  net.spec_ = spec;
  const auto shapes = spec.layer_shapes();
  net.layers_.resize(shapes.size());
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    Layer& layer = net.layers_[l];
    layer.fan_in = shapes[l].first;
    layer.fan_out = shapes[l].second;
    layer.w.assign(layer.fan_in * layer.fan_out, 0.0);
    layer.b.assign(layer.fan_out, 0.0);
    layer.gw.assign(layer.w.size(), 0.0);
    layer.gb.assign(layer.b.size(), 0.0);
    const bool zero_this = (mode == InitMode::zero_residual && l + 1 == shapes.size());
    if (!zero_this) {
      const double sd = std::sqrt(variance_scale * 2.0 / static_cast<double>(layer.fan_in));
      for (double& w : layer.w) w = sd * rng.next_gaussian();
    }
  }
  return net;
}

MlpNet MlpNet::from_layers(const MlpSpec& spec, std::vector<Layer> layers) {
  spec.validate();
  const auto shapes = spec.layer_shapes();
  if (layers.size() != shapes.size()) {
    throw std::invalid_argument("MlpNet::from_layers: layer count mismatch");
  }
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    if (layers[l].fan_in != shapes[l].first || layers[l].fan_out != shapes[l].second ||
        layers[l].w.size() != shapes[l].first * shapes[l].second ||
        layers[l].b.size() != shapes[l].second) {
      throw std::invalid_argument("MlpNet::from_layers: layer " + std::to_string(l) +
                                  " shape mismatch");
    }
    layers[l].gw.assign(layers[l].w.size(), 0.0);
    layers[l].gb.assign(layers[l].b.size(), 0.0);
  }
  MlpNet net;
  net.spec_ = spec;
  net.layers_ = std::move(layers);
  return net;
}

std::size_t MlpNet::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.w.size() + l.b.size();
  return n;
}

std::vector<ParamTensor> MlpNet::param_tensors() {
  std::vector<ParamTensor> out;
  out.reserve(layers_.size() * 2);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    out.push_back({layers_[l].w, layers_[l].gw, "layer" + std::to_string(l) + ".w"});
    out.push_back({layers_[l].b, layers_[l].gb, "layer" + std::to_string(l) + ".b"});
  }
  return out;
}

void MlpNet::zero_grads() {
  for (Layer& l : layers_) {
    std::fill(l.gw.begin(), l.gw.end(), 0.0);
    std::fill(l.gb.begin(), l.gb.end(), 0.0);
  }
}

bool MlpNet::grads_all_zero() const {
  for (const Layer& l : layers_) {
    for (double g : l.gw) {
      if (g != 0.0) return false;
    }
    for (double g : l.gb) {
      if (g != 0.0) return false;
    }
  }
  return true;
}

// out(r,o) = b[o] + sum_i in(r,i) * w[o*fan_in+i], bias first, ascending i.
// Runs against a transposed weight copy so the inner loop walks contiguous
// memory across independent outputs; per-element operation order is the same.
static void affine_forward(const EmbeddingMatrix& in, const Layer& layer, EmbeddingMatrix& out) {
  std::vector<double> wt(layer.fan_in * layer.fan_out);
  for (std::size_t o = 0; o < layer.fan_out; ++o) {
    for (std::size_t i = 0; i < layer.fan_in; ++i) {
      wt[i * layer.fan_out + o] = layer.w[o * layer.fan_in + i];
    }
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(in.rows); ++r) {
    const double* x = in.row(static_cast<std::size_t>(r));
    double* y = out.row(static_cast<std::size_t>(r));
    for (std::size_t o = 0; o < layer.fan_out; ++o) y[o] = layer.b[o];
    for (std::size_t i = 0; i < layer.fan_in; ++i) {
      const double xi = x[i];
      const double* wtrow = wt.data() + i * layer.fan_out;
      for (std::size_t o = 0; o < layer.fan_out; ++o) y[o] += xi * wtrow[o];
    }
  }
}

EmbeddingMatrix MlpNet::forward(const EmbeddingMatrix& batch, ForwardCache* cache) const {
  if (layers_.empty()) throw std::logic_error("MlpNet::forward: uninitialized net");
  if (batch.dim != spec_.in_dim) {
    throw std::invalid_argument("MlpNet::forward: batch dim " + std::to_string(batch.dim) +
                                " does not match in_dim " + std::to_string(spec_.in_dim));
  }
  if (cache) {
    cache->epoch = epoch_;
    cache->input = batch;
    cache->pre.clear();
    cache->act.clear();
    cache->act.push_back(batch);
  }
  EmbeddingMatrix cur = batch;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    EmbeddingMatrix next(cur.rows, layers_[l].fan_out);
    affine_forward(cur, layers_[l], next);
    if (cache) cache->pre.push_back(next);
    if (l + 1 < layers_.size()) {
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(next.data.size()); ++i) {
        if (next.data[static_cast<std::size_t>(i)] < 0.0) next.data[static_cast<std::size_t>(i)] = 0.0;
      }
      if (cache) cache->act.push_back(next);
    }
    cur = std::move(next);
  }
  if (spec_.residual) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cur.data.size()); ++i) {
      cur.data[static_cast<std::size_t>(i)] += batch.data[static_cast<std::size_t>(i)];
    }
  }
  return cur;
}

EmbeddingMatrix MlpNet::backward(const ForwardCache& cache, const EmbeddingMatrix& out_grad) {
  if (layers_.empty()) throw std::logic_error("MlpNet::backward: uninitialized net");
  if (cache.epoch != epoch_) {
    throw std::logic_error("MlpNet::backward: stale forward cache (net epoch " +
                           std::to_string(epoch_) + ", cache epoch " + std::to_string(cache.epoch) +
                           ")");
  }
  if (cache.pre.size() != layers_.size() || cache.act.size() != layers_.size()) {
    throw std::logic_error("MlpNet::backward: cache does not match net layout");
  }
  if (out_grad.rows != cache.input.rows || out_grad.dim != spec_.out_dim) {
    throw std::invalid_argument("MlpNet::backward: out_grad shape " + out_grad.shape_str() +
                                " does not match forward batch");
  }

  EmbeddingMatrix d = out_grad;  // gradient w.r.t. pre-activation of current layer
  for (std::size_t li = layers_.size(); li-- > 0;) {
    Layer& layer = layers_[li];
    const EmbeddingMatrix& in_act = cache.act[li];
    const std::size_t rows = d.rows;

    // dW(o,i) = sum_r d(r,o) * act(r,i); each (o,i) owned by one thread, each
    // accumulated ascending r into a local row before landing in gw.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t o = 0; o < static_cast<std::ptrdiff_t>(layer.fan_out); ++o) {
      const auto oo = static_cast<std::size_t>(o);
      double* gw = layer.gw.data() + oo * layer.fan_in;
      std::vector<double> acc(layer.fan_in, 0.0);
      double gb = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double dro = d.at(r, oo);
        const double* arow = in_act.row(r);
        for (std::size_t i = 0; i < layer.fan_in; ++i) acc[i] += dro * arow[i];
        gb += dro;
      }
      for (std::size_t i = 0; i < layer.fan_in; ++i) gw[i] += acc[i];
      layer.gb[oo] += gb;
    }

    EmbeddingMatrix d_in(rows, layer.fan_in);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
      const auto rr = static_cast<std::size_t>(r);
      double* din = d_in.row(rr);
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        const double dro = d.at(rr, o);
        const double* wrow = layer.w.data() + o * layer.fan_in;
        for (std::size_t i = 0; i < layer.fan_in; ++i) din[i] += dro * wrow[i];
      }
    }
    if (li > 0) {
      // ReLU mask from the previous layer's pre-activations; derivative at 0 is 0.
      const EmbeddingMatrix& pre_prev = cache.pre[li - 1];
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(d_in.data.size()); ++i) {
        const auto ii = static_cast<std::size_t>(i);
        if (pre_prev.data[ii] <= 0.0) d_in.data[ii] = 0.0;
      }
    }
    d = std::move(d_in);
  }

  if (spec_.residual) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(d.data.size()); ++i) {
      d.data[static_cast<std::size_t>(i)] += out_grad.data[static_cast<std::size_t>(i)];
    }
  }
  return d;
}

}  // namespace corrnet
