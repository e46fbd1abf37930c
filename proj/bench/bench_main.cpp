// Compares the parallel kernels against the serial reference implementation
// on retrieval-shaped workloads and checks they agree on every output.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "corrnet/kernels.hpp"
#include "corrnet/matrix.hpp"
#include "corrnet/net.hpp"
#include "corrnet/parallel.hpp"
#include "corrnet/reference.hpp"
#include "corrnet/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_per_call(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t n = 4096;
  std::size_t dim = 64;
  std::size_t batch = 128;
  int reps = 20;
  if (argc > 1) n = std::stoul(argv[1]);
  if (argc > 2) dim = std::stoul(argv[2]);
  if (argc > 3) batch = std::stoul(argv[3]);
  if (argc > 4) reps = std::stoi(argv[4]);

  corrnet::Rng rng(123);
  corrnet::EmbeddingMatrix targets(n, dim);
  for (double& v : targets.data) v = rng.next_gaussian();
  corrnet::EmbeddingMatrix queries(batch, dim);
  for (double& v : queries.data) v = rng.next_gaussian();

  std::printf("threads: %d, targets: %zu, dim: %zu, batch: %zu, reps: %d\n",
              corrnet::thread_count(), n, dim, batch, reps);
  std::printf("%-22s %12s %12s %9s %12s\n", "kernel", "parallel(s)", "serial(s)", "speedup",
              "max|diff|");

  corrnet::EmbeddingMatrix scores_par;
  corrnet::EmbeddingMatrix scores_ser;
  const double t_mm_par = seconds_per_call(
      [&] { scores_par = corrnet::matmul_scores(queries, targets); }, reps);
  const double t_mm_ser = seconds_per_call(
      [&] { scores_ser = corrnet::refimpl::matmul_scores(queries, targets); }, reps);
  std::printf("%-22s %12.6f %12.6f %8.2fx %12.3e\n", "matmul_scores", t_mm_par, t_mm_ser,
              t_mm_ser / t_mm_par, max_abs_diff(scores_par.data, scores_ser.data));

  std::vector<double> sm_par, sm_ser;
  const double beta = 20.0;
  const double t_sm_par = seconds_per_call(
      [&] {
        for (std::size_t q = 0; q < batch; ++q) {
          sm_par = corrnet::softmax(scores_par.row_span(q), beta);
        }
      },
      reps);
  const double t_sm_ser = seconds_per_call(
      [&] {
        for (std::size_t q = 0; q < batch; ++q) {
          sm_ser = corrnet::refimpl::softmax(scores_par.row_span(q), beta);
        }
      },
      reps);
  std::printf("%-22s %12.6f %12.6f %8.2fx %12.3e\n", "softmax", t_sm_par, t_sm_ser,
              t_sm_ser / t_sm_par, max_abs_diff(sm_par, sm_ser));

  std::vector<std::size_t> tk_par, tk_ser;
  const double t_tk_par = seconds_per_call(
      [&] {
        for (std::size_t q = 0; q < batch; ++q) {
          tk_par = corrnet::top_k(scores_par.row_span(q), 64);
        }
      },
      reps);
  const double t_tk_ser = seconds_per_call(
      [&] {
        for (std::size_t q = 0; q < batch; ++q) {
          tk_ser = corrnet::refimpl::top_k(scores_par.row_span(q), 64);
        }
      },
      reps);
  bool tk_equal = tk_par == tk_ser;
  std::printf("%-22s %12.6f %12.6f %8.2fx %12s\n", "top_k", t_tk_par, t_tk_ser,
              t_tk_ser / t_tk_par, tk_equal ? "exact" : "MISMATCH");

  corrnet::MlpSpec spec;
  spec.in_dim = dim;
  spec.out_dim = dim;
  spec.hidden = {64, 64};
  spec.residual = true;
  corrnet::Rng net_rng(7);
  const corrnet::MlpNet net = corrnet::MlpNet::init(spec, corrnet::InitMode::he_normal, net_rng);
  corrnet::EmbeddingMatrix fwd;
  const double t_fwd = seconds_per_call([&] { fwd = net.forward(targets); }, reps);
  std::printf("%-22s %12.6f %12s %9s %12s\n", "mlp_forward", t_fwd, "-", "-", "-");

  const bool mm_exact = scores_par.data == scores_ser.data;
  std::printf("\nmatmul parallel/serial bitwise equal: %s\n", mm_exact ? "yes" : "NO");
  return mm_exact && tk_equal ? 0 : 1;
}
