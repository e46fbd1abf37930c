#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "corrnet/net.hpp"

namespace corrnet {

struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
};

AdamState make_adam(std::size_t n_params, double lr);

// Standard bias-corrected Adam. Increments the step once, applies the update,
// and zeroes the gradients. state.m/v must match params in length.
void adam_step(std::span<double> params, std::span<double> grads, AdamState& state,
               const std::string& tensor_name = "params");

// Applies one Adam step across every tensor of the net (checkpoint order:
// per layer w then b, addressed as one flat buffer), then bumps the net
// epoch. The state must be sized to net.parameter_count().
void adam_step(MlpNet& net, AdamState& state);

// p <- p - lr * g; zeroes the gradients.
void sgd_step(std::span<double> params, std::span<double> grads, double lr,
              const std::string& tensor_name = "params");
void sgd_step(MlpNet& net, double lr);

}  // namespace corrnet
