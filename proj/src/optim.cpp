#include "corrnet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace corrnet {

AdamState make_adam(std::size_t n_params, double lr) {
  AdamState s;
  s.lr = lr;
  s.m.assign(n_params, 0.0);
  s.v.assign(n_params, 0.0);
  return s;
}

static void check_grads_finite(std::span<const double> grads, const std::string& tensor_name) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw std::runtime_error("optimizer: non-finite gradient in tensor '" + tensor_name +
                               "' at index " + std::to_string(i));
    }
  }
}

// One tensor's worth of the current step; assumes state.step already bumped.
static void adam_apply(std::span<double> params, std::span<double> grads, AdamState& s,
                       std::size_t offset, const std::string& tensor_name) {
  if (params.size() != grads.size() || offset + params.size() > s.m.size()) {
    throw std::invalid_argument("adam_step: shape mismatch for tensor '" + tensor_name + "'");
  }
  check_grads_finite(grads, tensor_name);
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = s.m[offset + i];
    double& v = s.v[offset + i];
    const double g = grads[i];
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    params[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    grads[i] = 0.0;
  }
}

void adam_step(std::span<double> params, std::span<double> grads, AdamState& state,
               const std::string& tensor_name) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: state sized for " + std::to_string(state.m.size()) +
                                " params, got " + std::to_string(params.size()));
  }
  state.step += 1;
  adam_apply(params, grads, state, 0, tensor_name);
}

void adam_step(MlpNet& net, AdamState& state) {
  if (state.m.size() != net.parameter_count() || state.v.size() != net.parameter_count()) {
    throw std::invalid_argument("adam_step: state does not match net parameter count");
  }
  state.step += 1;
  std::size_t offset = 0;
  for (ParamTensor& t : net.param_tensors()) {
    adam_apply(t.p, t.g, state, offset, t.name);
    offset += t.p.size();
  }
  net.bump_epoch();
}

void sgd_step(std::span<double> params, std::span<double> grads, double lr,
              const std::string& tensor_name) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("sgd_step: shape mismatch for tensor '" + tensor_name + "'");
  }
  check_grads_finite(grads, tensor_name);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= lr * grads[i];
    grads[i] = 0.0;
  }
}

void sgd_step(MlpNet& net, double lr) {
  for (ParamTensor& t : net.param_tensors()) {
    sgd_step(t.p, t.g, lr, t.name);
  }
  net.bump_epoch();
}

}  // namespace corrnet
