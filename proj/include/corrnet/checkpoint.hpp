#pragma once

// Binary checkpoints. All integers and doubles little-endian; round-trips
// are bit-exact.
//
//   CORRNET1  u32 layer count, u32 residual flag (0/1); per layer:
//             u32 fan_in, u32 fan_out,
//             f64 weights row-major [fan_out x fan_in], f64 biases.
//   CORRBUF1  u64 rows, u32 dim, f64 embeddings row-major,
//             u64 per-row last refresh step, u64 reembed counter.
//   CORROPT1  u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//             u64 n, f64 m[n], f64 v[n].
//   CORRMAT1  u64 rows, u32 dim, f64 data row-major.

#include <string>

#include "corrnet/buffer.hpp"
#include "corrnet/net.hpp"
#include "corrnet/optim.hpp"

namespace corrnet {

void save_net(const MlpNet& net, const std::string& path);
MlpNet load_net(const std::string& path);

void save_buffer(const TargetBuffer& buffer, const std::string& path);
TargetBuffer load_buffer(const std::string& path);

void save_adam(const AdamState& state, const std::string& path);
AdamState load_adam(const std::string& path);

void save_matrix(const EmbeddingMatrix& m, const std::string& path);
EmbeddingMatrix load_matrix(const std::string& path);

}  // namespace corrnet
