#include "corrnet/theory.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "corrnet/kernels.hpp"

namespace corrnet {

BoundCheckRecord make_bound_record(std::uint64_t instance_seed, double lhs, double rhs) {
  BoundCheckRecord r;
  r.instance_seed = instance_seed;
  r.lhs = lhs;
  r.rhs = rhs;
  r.slack = rhs - lhs;
  r.pass = r.slack >= -1e-12;
  return r;
}

BoundSweep summarize_records(std::vector<BoundCheckRecord> records) {
  BoundSweep s;
  s.records = std::move(records);
  s.min_slack = std::numeric_limits<double>::infinity();
  for (const BoundCheckRecord& r : s.records) {
    if (r.pass) ++s.n_pass;
    if (r.slack < s.min_slack) s.min_slack = r.slack;
  }
  if (s.records.empty()) s.min_slack = 0.0;
  s.all_pass = s.n_pass == s.records.size();
  return s;
}

BoundCheckRecord check_softmax_tv_bound(std::span<const double> logits_a,
                                        std::span<const double> logits_b, double beta,
                                        std::uint64_t instance_seed) {
  if (logits_a.size() != logits_b.size()) {
    throw std::invalid_argument("check_softmax_tv_bound: length mismatch");
  }
  const std::vector<double> pa = softmax(logits_a, beta);
  const std::vector<double> pb = softmax(logits_b, beta);
  const double lhs = tv_distance(pa, pb);
  double l1 = 0.0;
  for (std::size_t i = 0; i < logits_a.size(); ++i) {
    l1 += std::abs(beta * logits_a[i] - beta * logits_b[i]);
  }
  return make_bound_record(instance_seed, lhs, 0.5 * l1);
}

BoundSweep run_tv_bound_sweep(std::size_t instances, std::size_t max_len, std::uint64_t seed) {
  if (max_len < 2) throw std::invalid_argument("run_tv_bound_sweep: max_len must be at least 2");
  Rng master(seed);
  std::vector<BoundCheckRecord> records;
  records.reserve(instances);
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng = master.split(i + 1);
    const std::size_t len = 2 + static_cast<std::size_t>(rng.next_below(max_len - 1));
    const double scale = std::exp(3.0 * (rng.next_double() - 0.5));
    const double pert = std::exp(4.0 * (rng.next_double() - 0.75));
    const double beta = std::exp(rng.next_double() * std::log(400.0)) * 0.1;
    std::vector<double> a(len), b(len);
    for (std::size_t j = 0; j < len; ++j) {
      a[j] = scale * rng.next_gaussian();
      b[j] = a[j] + pert * rng.next_gaussian();
    }
    records.push_back(check_softmax_tv_bound(a, b, beta, i + 1));
  }
  return summarize_records(std::move(records));
}

BoundCheckRecord check_risk_gap(const EmbeddingMatrix& true_targets,
                                const EmbeddingMatrix& approx_targets,
                                std::span<const double> probe, double beta,
                                std::uint64_t instance_seed) {
  if (!true_targets.same_shape(approx_targets)) {
    throw std::invalid_argument("check_risk_gap: target shape mismatch " +
                                true_targets.shape_str() + " vs " + approx_targets.shape_str());
  }
  if (probe.size() != true_targets.dim) {
    throw std::invalid_argument("check_risk_gap: probe dim mismatch");
  }
  const std::vector<double> zt = matvec_scores(true_targets, probe);
  const std::vector<double> za = matvec_scores(approx_targets, probe);
  const std::vector<double> p = softmax(zt, beta);
  const std::vector<double> q = softmax(za, beta);
  double risk_p = 0.0, risk_q = 0.0;
  for (std::size_t y = 0; y < true_targets.rows; ++y) {
    double gap2 = 0.0;
    const double* tr = true_targets.row(y);
    const double* ar = approx_targets.row(y);
    for (std::size_t j = 0; j < true_targets.dim; ++j) {
      const double d = tr[j] - ar[j];
      gap2 += d * d;
    }
    const double loss = 1.0 - std::exp(-gap2);
    risk_p += p[y] * loss;
    risk_q += q[y] * loss;
  }
  return make_bound_record(instance_seed, std::abs(risk_p - risk_q), tv_distance(p, q));
}

BoundSweep run_risk_gap_sweep(const EmbeddingMatrix& true_targets,
                              const EmbeddingMatrix& approx_targets,
                              const EmbeddingMatrix& probes, double beta) {
  std::vector<BoundCheckRecord> records;
  records.reserve(probes.rows);
  for (std::size_t i = 0; i < probes.rows; ++i) {
    records.push_back(
        check_risk_gap(true_targets, approx_targets, probes.row_span(i), beta, i + 1));
  }
  return summarize_records(std::move(records));
}

PerturbationSweep staleness_perturbation_sweep(const MlpNet& g, const EmbeddingMatrix& raw_inputs,
                                               const EmbeddingMatrix& probes,
                                               std::span<const double> u_norms,
                                               std::size_t n_directions, double beta,
                                               std::uint64_t seed) {
  if (n_directions == 0) {
    throw std::invalid_argument("staleness_perturbation_sweep: need at least 1 direction");
  }
  const EmbeddingMatrix base = g.forward(raw_inputs);
  const std::size_t n_params = g.parameter_count();
  Rng master(seed);

  PerturbationSweep sweep;
  for (std::size_t d = 0; d < n_directions; ++d) {
    Rng rng = master.split(d + 1);
    std::vector<double> dir(n_params);
    double norm2 = 0.0;
    for (double& v : dir) {
      v = rng.next_gaussian();
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : dir) v *= inv;

    for (const double u : u_norms) {
      if (u < 0.0) throw std::invalid_argument("staleness_perturbation_sweep: negative norm");
      MlpNet pert = g;
      std::size_t off = 0;
      for (ParamTensor& t : pert.param_tensors()) {
        for (std::size_t j = 0; j < t.p.size(); ++j) t.p[j] += u * dir[off + j];
        off += t.p.size();
      }
      pert.bump_epoch();
      const EmbeddingMatrix moved = pert.forward(raw_inputs);

      double l1 = 0.0;
      for (std::size_t r = 0; r < base.rows; ++r) {
        const double* a = base.row(r);
        const double* b = moved.row(r);
        for (std::size_t j = 0; j < base.dim; ++j) l1 += std::abs(a[j] - b[j]);
      }
      const double mean_l1 = base.rows ? l1 / static_cast<double>(base.rows) : 0.0;

      double tv_acc = 0.0;
      for (std::size_t pidx = 0; pidx < probes.rows; ++pidx) {
        const std::vector<double> zb = matvec_scores(base, probes.row_span(pidx));
        const std::vector<double> zm = matvec_scores(moved, probes.row_span(pidx));
        tv_acc += tv_distance(softmax(zb, beta), softmax(zm, beta));
      }
      PerturbationCell cell;
      cell.direction = d;
      cell.u_norm = u;
      cell.mean_l1_gap = mean_l1;
      cell.mean_tv = probes.rows ? tv_acc / static_cast<double>(probes.rows) : 0.0;
      cell.ratio = u > 0.0 ? mean_l1 / u : 0.0;
      if (cell.ratio > sweep.l_hat) sweep.l_hat = cell.ratio;
      sweep.cells.push_back(cell);
    }
  }
  return sweep;
}

}  // namespace corrnet
