#include "corrnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "corrnet/kernels.hpp"
#include "corrnet/optim.hpp"

namespace corrnet {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be at least 1");
  if (!(beta > 0.0)) throw std::invalid_argument("TrainConfig: beta must be positive");
  if (buffer_policy == BufferPolicy::every_r && refresh_every == 0) {
    throw std::invalid_argument("TrainConfig: refresh_every must be at least 1");
  }
  if (corrector_weight < 0.0) {
    throw std::invalid_argument("TrainConfig: corrector_weight must be nonnegative");
  }
  if (metric_cadence == 0 || eval_every == 0) {
    throw std::invalid_argument("TrainConfig: cadences must be at least 1");
  }
  if (rlm_batch == 0 || rlm_k == 0 || isolated_queries == 0) {
    throw std::invalid_argument("TrainConfig: counts must be at least 1");
  }
  if (!(encoder_init_scale > 0.0) || !std::isfinite(encoder_init_scale)) {
    throw std::invalid_argument("TrainConfig: encoder_init_scale must be positive and finite");
  }
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::size_t position_in(const std::vector<std::size_t>& sorted, std::size_t id) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), id);
  if (it == sorted.end() || *it != id) {
    throw std::logic_error("trainer: id " + std::to_string(id) + " missing from union");
  }
  return static_cast<std::size_t>(it - sorted.begin());
}

std::vector<std::size_t> sorted_union(const std::vector<std::vector<std::size_t>>& sets) {
  std::vector<std::size_t> u;
  for (const auto& s : sets) u.insert(u.end(), s.begin(), s.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

TruncatedDistribution make_truncated(const std::vector<std::size_t>& subset,
                                     std::vector<double> logits, double beta,
                                     std::size_t input_index) {
  TruncatedDistribution d;
  d.input_index = input_index;
  d.subset = subset;
  d.logits = std::move(logits);
  d.probs = softmax(d.logits, beta);
  d.beta = beta;
  return d;
}

// Mean KLs of the true distribution against corrected/stale tables over a
// set of query embeddings, full support, log space.
struct KlPair {
  double kl_ph = kNan;
  double kl_pgp = kNan;
};

KlPair mean_kls(const EmbeddingMatrix& fresh_table, const EmbeddingMatrix* corrected_table,
                const EmbeddingMatrix& stale_table, const EmbeddingMatrix& queries,
                std::span<const std::size_t> rows, double beta) {
  KlPair out;
  double klh = 0.0, klg = 0.0;
  for (std::size_t r : rows) {
    const std::vector<double> zt = matvec_scores(fresh_table, queries.row_span(r));
    const std::vector<double> zs = matvec_scores(stale_table, queries.row_span(r));
    klg += kl_between_softmax(zt, zs, beta);
    if (corrected_table) {
      const std::vector<double> zh = matvec_scores(*corrected_table, queries.row_span(r));
      klh += kl_between_softmax(zt, zh, beta);
    }
  }
  const double inv = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
  out.kl_pgp = klg * inv;
  if (corrected_table) out.kl_ph = klh * inv;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Isolated corrector training (fixed embedding-space task).
// ---------------------------------------------------------------------------

IsolatedResult train_corrector_isolated(const SynthTask& task, const MlpSpec& corrector_spec,
                                        double sample_fraction, const TrainConfig& config) {
  config.validate();
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw std::invalid_argument("train_corrector_isolated: sample_fraction must be in (0, 1]");
  }
  const EmbeddingMatrix& stale = task.stale_targets;
  const EmbeddingMatrix& truth = task.true_targets;
  if (stale.rows == 0 || !stale.same_shape(truth)) {
    throw std::invalid_argument("train_corrector_isolated: task needs matching stale/true targets");
  }
  if (task.queries.rows == 0 || task.queries.dim != stale.dim) {
    throw std::invalid_argument("train_corrector_isolated: task needs queries of target dim");
  }
  corrector_spec.validate();
  if (corrector_spec.in_dim != stale.dim || corrector_spec.out_dim != stale.dim) {
    throw std::invalid_argument("train_corrector_isolated: corrector must map D to D");
  }
  const std::size_t n = stale.rows;
  const std::size_t d = stale.dim;
  const double beta = config.beta;

  Rng master(config.seed);
  Rng rng_pool = master.split(10);
  Rng rng_collect = master.split(11);
  Rng rng_subsets = master.split(12);
  Rng rng_init = master.split(13);

  // Target pool restricted to the training fraction.
  const auto pool_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(sample_fraction * static_cast<double>(n)));
  std::vector<std::size_t> pool;
  if (pool_size >= n) {
    pool.resize(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
  } else {
    pool = sample_without_replacement(n, pool_size, rng_pool);
    std::sort(pool.begin(), pool.end());
  }

  // Collected training examples: a query plus a pool-restricted subset,
  // selected once under the stale scores (the identity-initialized corrector
  // scores identically at collection time).
  const std::size_t nq = std::min(config.isolated_queries, task.queries.rows);
  const std::vector<std::size_t> qidx =
      sample_without_replacement(task.queries.rows, nq, rng_collect);
  const EmbeddingMatrix pool_stale = gather_rows(stale, pool);
  const std::size_t kh = std::min(config.isolated_k_hard, pool.size());
  const std::size_t ku = std::min(config.isolated_k_uniform, pool.size() - kh);
  if (kh + ku == 0) {
    throw std::invalid_argument("train_corrector_isolated: empty training subsets");
  }

  std::vector<std::vector<std::size_t>> subsets(nq);
  for (std::size_t i = 0; i < nq; ++i) {
    const std::vector<std::size_t> local =
        select_subset_table(pool_stale, task.queries.row_span(qidx[i]), beta, kh, ku,
                            config.subset_mode, std::nullopt, rng_subsets);
    subsets[i].reserve(local.size());
    for (std::size_t l : local) subsets[i].push_back(pool[l]);
  }
  const std::vector<std::size_t> uni = sorted_union(subsets);
  const EmbeddingMatrix stale_u = gather_rows(stale, uni);
  const EmbeddingMatrix truth_u = gather_rows(truth, uni);

  struct Example {
    std::vector<double> query;
    std::vector<std::size_t> pos;     // positions in the union
    std::vector<double> true_probs;   // P over the subset (softmax of fixed logits)
    std::vector<double> true_logp;
  };
  std::vector<Example> examples(nq);
  for (std::size_t i = 0; i < nq; ++i) {
    Example& e = examples[i];
    const auto q = task.queries.row_span(qidx[i]);
    e.query.assign(q.begin(), q.end());
    e.pos.reserve(subsets[i].size());
    std::vector<double> logits(subsets[i].size());
    for (std::size_t j = 0; j < subsets[i].size(); ++j) {
      const std::size_t p = position_in(uni, subsets[i][j]);
      e.pos.push_back(p);
      double acc = 0.0;
      const double* row = truth_u.row(p);
      for (std::size_t t = 0; t < d; ++t) acc += e.query[t] * row[t];
      logits[j] = acc;
    }
    e.true_logp = log_softmax(logits, beta);
    e.true_probs.resize(e.true_logp.size());
    for (std::size_t j = 0; j < e.true_logp.size(); ++j) e.true_probs[j] = std::exp(e.true_logp[j]);
  }

  MlpNet h = MlpNet::init(corrector_spec, InitMode::zero_residual, rng_init);
  AdamState adam = make_adam(h.parameter_count(), config.corrector_lr);

  const double staleness_mean = staleness_l1(stale, truth).mean;
  std::vector<std::size_t> probe_rows(task.probes.rows);
  std::iota(probe_rows.begin(), probe_rows.end(), std::size_t{0});
  auto probe_kls = [&](const MlpNet& net) {
    const EmbeddingMatrix corrected_full = net.forward(stale);
    return mean_kls(truth, &corrected_full, stale, task.probes, probe_rows, beta);
  };

  RunReport report;
  report.reembed_counter = n;  // the single initial pass that filled the cache
  double best_loss = std::numeric_limits<double>::infinity();
  std::uint64_t best_epoch = 0;
  double last_loss = kNan;

  const double inv_nq = nq ? 1.0 / static_cast<double>(nq) : 0.0;
  for (std::uint64_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    ForwardCache cache;
    const EmbeddingMatrix corrected_u = h.forward(stale_u, &cache);
    EmbeddingMatrix grad_u(uni.size(), d);
    double loss = 0.0;

    for (const Example& e : examples) {
      const std::size_t s = e.pos.size();
      std::vector<double> h_logits(s);
      for (std::size_t j = 0; j < s; ++j) {
        const double* row = corrected_u.row(e.pos[j]);
        double acc = 0.0;
        for (std::size_t t = 0; t < d; ++t) acc += e.query[t] * row[t];
        h_logits[j] = acc;
      }
      if (config.corrector_loss == CorrectorLossKind::ce) {
        const std::vector<double> lh = log_softmax(h_logits, beta);
        for (std::size_t j = 0; j < s; ++j) {
          loss += e.true_probs[j] * (e.true_logp[j] - lh[j]) * inv_nq;
          const double dlogit = beta * (std::exp(lh[j]) - e.true_probs[j]) * inv_nq;
          double* grow = grad_u.row(e.pos[j]);
          for (std::size_t t = 0; t < d; ++t) grow[t] += dlogit * e.query[t];
        }
      } else {
        const double inv_s = 1.0 / static_cast<double>(s);
        for (std::size_t j = 0; j < s; ++j) {
          const double* crow = corrected_u.row(e.pos[j]);
          const double* trow = truth_u.row(e.pos[j]);
          double* grow = grad_u.row(e.pos[j]);
          for (std::size_t t = 0; t < d; ++t) {
            const double diff = crow[t] - trow[t];
            loss += diff * diff * inv_s * inv_nq;
            grow[t] += 2.0 * diff * inv_s * inv_nq;
          }
        }
      }
    }
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train_corrector_isolated: diverged at epoch " +
                               std::to_string(epoch));
    }
    last_loss = loss;
    report.epochs_ran = epoch;

    StepRecord rec;
    rec.step = epoch;
    rec.task_loss = kNan;
    rec.corrector_loss = loss;
    rec.staleness_l1 = staleness_mean;
    rec.kl_ph = kNan;
    rec.kl_pgp = kNan;
    if (epoch % config.eval_every == 0) {
      const KlPair kls = probe_kls(h);
      rec.kl_ph = kls.kl_ph;
      rec.kl_pgp = kls.kl_pgp;
    }
    report.steps.push_back(rec);

    if (loss < best_loss) {
      best_loss = loss;
      best_epoch = epoch;
    }

    h.backward(cache, grad_u);
    adam_step(h, adam);

    if (epoch - best_epoch >= config.patience) break;
  }

  report.best_epoch = best_epoch;
  const KlPair final_kls = probe_kls(h);
  report.final_corrector_loss = last_loss;
  report.final_kl_ph = final_kls.kl_ph;
  report.final_kl_pgp = final_kls.kl_pgp;
  report.final_staleness_l1 = staleness_mean;
  report.final_task_loss = kNan;

  IsolatedResult out;
  out.corrector = std::move(h);
  out.report = std::move(report);
  return out;
}

// ---------------------------------------------------------------------------
// Joint training (Algorithm 1 shape) and its reference baselines.
// ---------------------------------------------------------------------------

namespace {

struct JointSetup {
  MlpNet f, g, h;
  bool has_corrector = false;
  TargetBuffer buffer;
};

void check_retrieval_task(const SynthTask& task) {
  if (task.raw_targets.rows == 0 || task.raw_queries.rows == 0 || task.raw_labels.empty()) {
    throw std::invalid_argument("trainer: task lacks raw targets/queries/labels");
  }
  if (task.eval_queries.rows == 0 || task.eval_labels.empty()) {
    throw std::invalid_argument("trainer: task lacks eval queries");
  }
}

void check_encoder_specs(const SynthTask& task, const MlpSpec& f_spec, const MlpSpec& g_spec) {
  f_spec.validate();
  g_spec.validate();
  if (f_spec.in_dim != task.raw_queries.dim || g_spec.in_dim != task.raw_targets.dim) {
    throw std::invalid_argument("trainer: encoder in_dims do not match raw feature dims");
  }
  if (f_spec.out_dim != g_spec.out_dim) {
    throw std::invalid_argument("trainer: encoder out_dims differ");
  }
}

JointResult joint_core(const SynthTask& task, const MlpSpec& f_spec, const MlpSpec& g_spec,
                       const MlpSpec* corrector_spec, const TrainConfig& config,
                       BufferPolicy policy) {
  config.validate();
  check_retrieval_task(task);
  check_encoder_specs(task, f_spec, g_spec);
  const std::size_t demb = f_spec.out_dim;
  if (corrector_spec) {
    corrector_spec->validate();
    if (corrector_spec->in_dim != demb || corrector_spec->out_dim != demb) {
      throw std::invalid_argument("trainer: corrector must map the embedding dim to itself");
    }
  }
  const std::size_t n = task.raw_targets.rows;
  const std::size_t m = task.raw_queries.rows;
  const std::size_t b_sz = config.batch_size;
  const double beta = config.beta;
  const std::size_t ku = config.include_uniform ? config.k_uniform : 0;
  if (config.k_hard + ku > n) {
    throw std::invalid_argument("trainer: k_hard + k_uniform exceeds the target count");
  }

  Rng master(config.seed);
  Rng rng_f = master.split(21);
  Rng rng_g = master.split(22);
  Rng rng_h = master.split(23);
  Rng loop = master.split(24);

  JointResult result;
  result.f = MlpNet::init(f_spec, InitMode::he_normal, rng_f, config.encoder_init_scale);
  result.g = MlpNet::init(g_spec, InitMode::he_normal, rng_g, config.encoder_init_scale);
  if (corrector_spec) {
    result.corrector = MlpNet::init(*corrector_spec, InitMode::zero_residual, rng_h);
    result.has_corrector = true;
  }
  result.buffer = init_from_encoder(result.g, task.raw_targets);

  MlpNet& f = result.f;
  MlpNet& g = result.g;
  MlpNet* h = result.has_corrector ? &result.corrector : nullptr;
  TargetBuffer& buffer = result.buffer;

  AdamState adam_f = make_adam(f.parameter_count(), config.encoder_lr);
  AdamState adam_g = make_adam(g.parameter_count(), config.encoder_lr);
  AdamState adam_h = h ? make_adam(h->parameter_count(), config.corrector_lr) : AdamState{};

  RunReport& report = result.report;
  const std::vector<std::size_t> ks = {1, 5, 10, 20, 100};

  for (std::uint64_t step = 1; step <= config.steps; ++step) {
    if (policy == BufferPolicy::every_r && step % config.refresh_every == 0) {
      refresh_all(buffer, g, task.raw_targets, step);
    }

    std::vector<std::size_t> idx(b_sz);
    for (std::size_t b = 0; b < b_sz; ++b) {
      idx[b] = static_cast<std::size_t>(loop.next_below(m));
    }
    const EmbeddingMatrix raw_q = gather_rows(task.raw_queries, idx);
    ForwardCache f_cache;
    const EmbeddingMatrix f_x = f.forward(raw_q, &f_cache);

    EmbeddingMatrix corrected_table;
    const EmbeddingMatrix* table = &buffer.embeddings;
    if (h) {
      corrected_table = h->forward(buffer.embeddings);
      table = &corrected_table;
    }

    std::vector<std::vector<std::size_t>> subsets(b_sz);
    for (std::size_t b = 0; b < b_sz; ++b) {
      subsets[b] = select_subset_table(*table, f_x.row_span(b), beta, config.k_hard, ku,
                                       config.subset_mode, task.raw_labels[idx[b]], loop);
    }
    std::vector<std::size_t> uni = sorted_union(subsets);
    if (config.share_negatives) {
      for (std::size_t b = 0; b < b_sz; ++b) subsets[b] = uni;
    }

    const EmbeddingMatrix raw_u = gather_rows(task.raw_targets, uni);
    ForwardCache g_cache;
    const EmbeddingMatrix g_u = g.forward(raw_u, &g_cache);
    const EmbeddingMatrix stale_u = gather_rows(buffer.embeddings, uni);
    ForwardCache h_cache;
    EmbeddingMatrix corrected_u;
    if (h) corrected_u = h->forward(stale_u, &h_cache);

    EmbeddingMatrix f_grad(b_sz, demb);
    EmbeddingMatrix gu_grad(uni.size(), demb);
    EmbeddingMatrix cu_grad(uni.size(), demb);
    double task_sum = 0.0, corr_sum = 0.0;
    const double inv_b = 1.0 / static_cast<double>(b_sz);

    for (std::size_t b = 0; b < b_sz; ++b) {
      const std::vector<std::size_t>& sub = subsets[b];
      std::vector<std::size_t> pos(sub.size());
      for (std::size_t j = 0; j < sub.size(); ++j) pos[j] = position_in(uni, sub[j]);

      std::vector<double> logits_true(sub.size());
      EmbeddingMatrix g_rows(sub.size(), demb);
      for (std::size_t j = 0; j < sub.size(); ++j) {
        const double* row = g_u.row(pos[j]);
        double* out = g_rows.row(j);
        double acc = 0.0;
        for (std::size_t t = 0; t < demb; ++t) {
          acc += f_x.at(b, t) * row[t];
          out[t] = row[t];
        }
        logits_true[j] = acc;
      }
      const TruncatedDistribution pt = make_truncated(sub, std::move(logits_true), beta, b);
      const TaskLossResult tr = task_loss_ce(pt, f_x.row_span(b), g_rows, task.raw_labels[idx[b]]);
      task_sum += tr.loss;
      for (std::size_t t = 0; t < demb; ++t) f_grad.at(b, t) += tr.f_grad[t] * inv_b;
      for (std::size_t j = 0; j < sub.size(); ++j) {
        double* grow = gu_grad.row(pos[j]);
        const double* trow = tr.g_rows_grad.row(j);
        for (std::size_t t = 0; t < demb; ++t) grow[t] += trow[t] * inv_b;
      }

      if (h) {
        std::vector<double> logits_h(sub.size());
        for (std::size_t j = 0; j < sub.size(); ++j) {
          const double* row = corrected_u.row(pos[j]);
          double acc = 0.0;
          for (std::size_t t = 0; t < demb; ++t) acc += f_x.at(b, t) * row[t];
          logits_h[j] = acc;
        }
        const TruncatedDistribution ph = make_truncated(sub, std::move(logits_h), beta, b);
        EmbeddingMatrix grad_rows;
        double closs = 0.0;
        if (config.corrector_loss == CorrectorLossKind::ce) {
          CorrectorCeResult cr = corrector_loss_ce(pt, ph, f_x.row_span(b));
          closs = cr.loss;
          grad_rows = std::move(cr.corrected_grad);
        } else {
          EmbeddingMatrix c_rows(sub.size(), demb);
          for (std::size_t j = 0; j < sub.size(); ++j) {
            const double* row = corrected_u.row(pos[j]);
            double* out = c_rows.row(j);
            for (std::size_t t = 0; t < demb; ++t) out[t] = row[t];
          }
          MseLossResult mr = corrector_loss_mse(g_rows, c_rows);
          closs = mr.loss;
          grad_rows = std::move(mr.corrected_grad);
        }
        corr_sum += closs;
        const double w = config.corrector_weight * inv_b;
        for (std::size_t j = 0; j < sub.size(); ++j) {
          double* crow = cu_grad.row(pos[j]);
          const double* grow = grad_rows.row(j);
          for (std::size_t t = 0; t < demb; ++t) crow[t] += grow[t] * w;
        }
      }
    }

    const double task_mean = task_sum * inv_b;
    const double corr_mean = h ? corr_sum * inv_b : kNan;
    if (!std::isfinite(task_mean) || (h && !std::isfinite(corr_mean))) {
      throw std::runtime_error("train_joint: diverged at step " + std::to_string(step));
    }

    // Metrics describe the pre-update state of this step.
    if (step % config.metric_cadence == 0 || step == config.steps) {
      const EmbeddingMatrix fresh = g.forward(task.raw_targets);
      std::vector<std::size_t> batch_rows(b_sz);
      std::iota(batch_rows.begin(), batch_rows.end(), std::size_t{0});
      const KlPair kls =
          mean_kls(fresh, h ? &corrected_table : nullptr, buffer.embeddings, f_x, batch_rows, beta);
      StepRecord rec;
      rec.step = step;
      rec.task_loss = task_mean;
      rec.corrector_loss = corr_mean;
      rec.staleness_l1 = staleness_l1(buffer.embeddings, fresh).mean;
      rec.kl_ph = kls.kl_ph;
      rec.kl_pgp = kls.kl_pgp;
      report.steps.push_back(rec);
    }

    // Theta update (encoders), then Psi (corrector), per the two update lines.
    g.backward(g_cache, gu_grad);
    adam_step(g, adam_g);
    f.backward(f_cache, f_grad);
    adam_step(f, adam_f);
    if (h) {
      if (!h->grads_all_zero()) {
        throw std::logic_error("train_joint: corrector gradients touched by the task loss");
      }
      h->backward(h_cache, cu_grad);
      adam_step(*h, adam_h);
    }

    if (step % config.eval_every == 0 || step == config.steps) {
      EvalRecord ev;
      ev.step = step;
      ev.recall = evaluate_recall(f, g, task, ks);
      ev.reembed_counter = buffer.reembed_counter;
      report.evals.push_back(ev);
    }
  }

  if (!report.steps.empty()) {
    const StepRecord& last = report.steps.back();
    report.final_task_loss = last.task_loss;
    report.final_corrector_loss = last.corrector_loss;
    report.final_staleness_l1 = last.staleness_l1;
    report.final_kl_ph = last.kl_ph;
    report.final_kl_pgp = last.kl_pgp;
  }
  if (!report.evals.empty()) report.final_recall = report.evals.back().recall;
  report.reembed_counter = buffer.reembed_counter;
  return result;
}

}  // namespace

JointResult train_joint(const SynthTask& task, const MlpSpec& f_spec, const MlpSpec& g_spec,
                        const MlpSpec& corrector_spec, const TrainConfig& config) {
  return joint_core(task, f_spec, g_spec, &corrector_spec, config, config.buffer_policy);
}

JointResult train_joint_baseline(const SynthTask& task, const MlpSpec& f_spec,
                                 const MlpSpec& g_spec, const TrainConfig& config,
                                 JointBaseline baseline) {
  const BufferPolicy policy =
      baseline == JointBaseline::stale ? BufferPolicy::never : BufferPolicy::every_r;
  return joint_core(task, f_spec, g_spec, nullptr, config, policy);
}

// ---------------------------------------------------------------------------
// Toy RLM training (Algorithm 2 shape).
// ---------------------------------------------------------------------------

namespace {

// log P(. | y, x) rows for (query, doc) pairs through the reader.
std::vector<double> row_log_softmax(const EmbeddingMatrix& logits, std::size_t row) {
  return log_softmax(logits.row_span(row), 1.0);
}

double answer_accuracy(const MlpNet& f, const MlpNet& g, const MlpNet& reader,
                       const SynthTask& task, std::size_t k) {
  const EmbeddingMatrix fresh = g.forward(task.raw_targets);
  const EmbeddingMatrix q_emb = f.forward(task.eval_queries);
  const std::size_t vocab = task.vocab_size;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < task.eval_queries.rows; ++i) {
    const std::vector<double> scores = matvec_scores(fresh, q_emb.row_span(i));
    const std::vector<std::size_t> sub = top_k(scores, k);
    std::vector<double> lpt(sub.size());
    for (std::size_t j = 0; j < sub.size(); ++j) lpt[j] = scores[sub[j]];
    lpt = log_softmax(lpt, task.beta);

    EmbeddingMatrix reader_in(sub.size(), task.raw_queries.dim + task.raw_targets.dim);
    for (std::size_t j = 0; j < sub.size(); ++j) {
      double* row = reader_in.row(j);
      const double* x = task.eval_queries.row(i);
      const double* y = task.raw_targets.row(sub[j]);
      std::size_t t = 0;
      for (std::size_t a = 0; a < task.raw_queries.dim; ++a) row[t++] = x[a];
      for (std::size_t a = 0; a < task.raw_targets.dim; ++a) row[t++] = y[a];
    }
    const EmbeddingMatrix rl = reader.forward(reader_in);
    std::vector<std::vector<double>> lr(sub.size());
    for (std::size_t j = 0; j < sub.size(); ++j) lr[j] = row_log_softmax(rl, j);
    // log P_LM(a) = LSE_j (log Ptilde_j + log P(a | y_j, x)).
    std::vector<double> log_lm(vocab);
    std::vector<double> terms(sub.size());
    for (std::size_t a = 0; a < vocab; ++a) {
      for (std::size_t j = 0; j < sub.size(); ++j) terms[j] = lpt[j] + lr[j][a];
      log_lm[a] = log_sum_exp(terms);
    }
    std::size_t pred = 0;
    for (std::size_t a = 1; a < vocab; ++a) {
      if (log_lm[a] > log_lm[pred]) pred = a;
    }
    if (pred == task.eval_gold[i]) ++hits;
  }
  return task.eval_queries.rows
             ? static_cast<double>(hits) / static_cast<double>(task.eval_queries.rows)
             : 0.0;
}

}  // namespace

RlmResult train_rlm(const SynthTask& task, const MlpSpec& f_spec, const MlpSpec& g_spec,
                    const MlpSpec& reader_spec, const MlpSpec& corrector_spec,
                    const TrainConfig& config, RlmArm arm) {
  config.validate();
  check_retrieval_task(task);
  check_encoder_specs(task, f_spec, g_spec);
  if (task.vocab_size < 2 || task.train_answers.size() != task.raw_queries.rows ||
      task.eval_gold.size() != task.eval_queries.rows) {
    throw std::invalid_argument("train_rlm: task lacks a generated answer model");
  }
  reader_spec.validate();
  const std::size_t d2 = task.raw_queries.dim + task.raw_targets.dim;
  if (reader_spec.in_dim != d2 || reader_spec.out_dim != task.vocab_size) {
    throw std::invalid_argument("train_rlm: reader must map concat features to the vocab");
  }
  corrector_spec.validate();
  const std::size_t demb = f_spec.out_dim;
  if (corrector_spec.in_dim != demb || corrector_spec.out_dim != demb) {
    throw std::invalid_argument("train_rlm: corrector must map the embedding dim to itself");
  }
  const std::size_t n = task.raw_targets.rows;
  if (config.rlm_k > n) throw std::invalid_argument("train_rlm: rlm_k exceeds target count");

  const BufferPolicy policy =
      arm == RlmArm::exhaustive ? BufferPolicy::every_r : BufferPolicy::never;
  const double enc_lr = arm == RlmArm::frozen ? 0.0 : config.encoder_lr;
  const double corr_lr = arm == RlmArm::corrector ? config.corrector_lr : 0.0;

  Rng master(config.seed);
  Rng rng_f = master.split(21);
  Rng rng_g = master.split(22);
  Rng rng_h = master.split(23);
  Rng rng_reader = master.split(27);
  Rng loop = master.split(24);

  RlmResult result;
  result.f = MlpNet::init(f_spec, InitMode::he_normal, rng_f, config.encoder_init_scale);
  result.g = MlpNet::init(g_spec, InitMode::he_normal, rng_g, config.encoder_init_scale);
  result.corrector = MlpNet::init(corrector_spec, InitMode::zero_residual, rng_h);
  result.reader = MlpNet::init(reader_spec, InitMode::he_normal, rng_reader);
  result.buffer = init_from_encoder(result.g, task.raw_targets);

  MlpNet& f = result.f;
  MlpNet& g = result.g;
  MlpNet& h = result.corrector;
  MlpNet& reader = result.reader;
  TargetBuffer& buffer = result.buffer;

  AdamState adam_f = make_adam(f.parameter_count(), enc_lr);
  AdamState adam_g = make_adam(g.parameter_count(), enc_lr);
  AdamState adam_h = make_adam(h.parameter_count(), corr_lr);
  AdamState adam_r = make_adam(reader.parameter_count(), config.reader_lr);

  RunReport& report = result.report;
  const std::vector<std::size_t> ks = {1, 5, 10, 20, 100};
  const std::size_t b_sz = config.rlm_batch;
  const std::size_t m = task.raw_queries.rows;
  const double beta = config.beta;
  const std::size_t vocab = task.vocab_size;

  for (std::uint64_t step = 1; step <= config.steps; ++step) {
    if (policy == BufferPolicy::every_r && step % config.refresh_every == 0) {
      refresh_all(buffer, g, task.raw_targets, step);
    }

    std::vector<std::size_t> idx(b_sz);
    for (std::size_t b = 0; b < b_sz; ++b) {
      idx[b] = static_cast<std::size_t>(loop.next_below(m));
    }
    const EmbeddingMatrix raw_q = gather_rows(task.raw_queries, idx);
    ForwardCache f_cache;
    const EmbeddingMatrix f_x = f.forward(raw_q, &f_cache);

    const EmbeddingMatrix corrected_table = h.forward(buffer.embeddings);

    // Per-example subsets, not shared, hard candidates only.
    std::vector<std::vector<std::size_t>> subsets(b_sz);
    for (std::size_t b = 0; b < b_sz; ++b) {
      subsets[b] = select_subset_table(corrected_table, f_x.row_span(b), beta, config.rlm_k, 0,
                                       config.subset_mode, std::nullopt, loop);
    }
    const std::vector<std::size_t> uni = sorted_union(subsets);

    const EmbeddingMatrix raw_u = gather_rows(task.raw_targets, uni);
    ForwardCache g_cache;
    const EmbeddingMatrix g_u = g.forward(raw_u, &g_cache);
    const EmbeddingMatrix stale_u = gather_rows(buffer.embeddings, uni);
    ForwardCache h_cache;
    const EmbeddingMatrix corrected_u = h.forward(stale_u, &h_cache);

    // Reader forward over every (query, retrieved doc) pair.
    std::vector<std::size_t> row_start(b_sz + 1, 0);
    for (std::size_t b = 0; b < b_sz; ++b) row_start[b + 1] = row_start[b] + subsets[b].size();
    EmbeddingMatrix reader_in(row_start[b_sz], d2);
    for (std::size_t b = 0; b < b_sz; ++b) {
      for (std::size_t j = 0; j < subsets[b].size(); ++j) {
        double* row = reader_in.row(row_start[b] + j);
        const double* x = task.raw_queries.row(idx[b]);
        const double* y = task.raw_targets.row(subsets[b][j]);
        std::size_t t = 0;
        for (std::size_t a = 0; a < task.raw_queries.dim; ++a) row[t++] = x[a];
        for (std::size_t a = 0; a < task.raw_targets.dim; ++a) row[t++] = y[a];
      }
    }
    ForwardCache reader_cache;
    const EmbeddingMatrix reader_logits = reader.forward(reader_in, &reader_cache);

    EmbeddingMatrix f_grad(b_sz, demb);
    EmbeddingMatrix gu_grad(uni.size(), demb);
    EmbeddingMatrix cu_grad(uni.size(), demb);
    EmbeddingMatrix reader_grad(row_start[b_sz], vocab);
    double reader_sum = 0.0, retr_sum = 0.0, corr_sum = 0.0;
    const double inv_b = 1.0 / static_cast<double>(b_sz);

    for (std::size_t b = 0; b < b_sz; ++b) {
      const std::vector<std::size_t>& sub = subsets[b];
      const std::size_t s = sub.size();
      const std::size_t answer = task.train_answers[idx[b]];
      std::vector<std::size_t> pos(s);
      for (std::size_t j = 0; j < s; ++j) pos[j] = position_in(uni, sub[j]);

      std::vector<double> logits_true(s), logits_h(s);
      for (std::size_t j = 0; j < s; ++j) {
        double acc_t = 0.0, acc_h = 0.0;
        const double* gr = g_u.row(pos[j]);
        const double* cr = corrected_u.row(pos[j]);
        for (std::size_t t = 0; t < demb; ++t) {
          acc_t += f_x.at(b, t) * gr[t];
          acc_h += f_x.at(b, t) * cr[t];
        }
        logits_true[j] = acc_t;
        logits_h[j] = acc_h;
      }
      const std::vector<double> lpt = log_softmax(logits_true, beta);
      const std::vector<double> lph = log_softmax(logits_h, beta);

      // Reader terms.
      std::vector<std::vector<double>> lr(s);
      std::vector<double> joint(s);
      for (std::size_t j = 0; j < s; ++j) {
        lr[j] = row_log_softmax(reader_logits, row_start[b] + j);
        joint[j] = lpt[j] + lr[j][answer];
      }
      const double log_plm = log_sum_exp(joint);
      reader_sum += -log_plm;

      // Perplexity distillation: P_a normalizes the reader likelihoods.
      std::vector<double> la(s);
      for (std::size_t j = 0; j < s; ++j) la[j] = lr[j][answer];
      const double lse_a = log_sum_exp(la);

      double retr_b = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        const double alpha = std::exp(joint[j] - log_plm);  // posterior weight
        const double pa = std::exp(la[j] - lse_a);          // soft-relevance label
        const double ptj = std::exp(lpt[j]);
        const double phj = std::exp(lph[j]);

        // Reader NLL gradient, averaged with the retriever loss (0.5 each).
        double* rg = reader_grad.row(row_start[b] + j);
        for (std::size_t a = 0; a < vocab; ++a) {
          rg[a] = alpha * (std::exp(lr[j][a]) - (a == answer ? 1.0 : 0.0)) * 0.5 * inv_b;
        }

        retr_b += -pa * lpt[j];
        const double dl_true = beta * (ptj - pa) * 0.5 * inv_b;
        const double* gr = g_u.row(pos[j]);
        double* ggrow = gu_grad.row(pos[j]);
        for (std::size_t t = 0; t < demb; ++t) {
          f_grad.at(b, t) += dl_true * gr[t];
          ggrow[t] += dl_true * f_x.at(b, t);
        }

        corr_sum += ptj * (lpt[j] - lph[j]) * inv_b;
        const double dl_h = beta * (phj - ptj) * config.corrector_weight * inv_b;
        double* cgrow = cu_grad.row(pos[j]);
        for (std::size_t t = 0; t < demb; ++t) cgrow[t] += dl_h * f_x.at(b, t);
      }
      retr_sum += retr_b;
    }

    const double task_mean = 0.5 * (reader_sum + retr_sum) * inv_b;
    if (!std::isfinite(task_mean) || !std::isfinite(corr_sum)) {
      throw std::runtime_error("train_rlm: diverged at step " + std::to_string(step));
    }

    if (step % config.metric_cadence == 0 || step == config.steps) {
      const EmbeddingMatrix fresh = g.forward(task.raw_targets);
      std::vector<std::size_t> batch_rows(b_sz);
      std::iota(batch_rows.begin(), batch_rows.end(), std::size_t{0});
      const KlPair kls =
          mean_kls(fresh, &corrected_table, buffer.embeddings, f_x, batch_rows, beta);
      StepRecord rec;
      rec.step = step;
      rec.task_loss = task_mean;
      rec.corrector_loss = corr_sum * inv_b;
      rec.staleness_l1 = staleness_l1(buffer.embeddings, fresh).mean;
      rec.kl_ph = kls.kl_ph;
      rec.kl_pgp = kls.kl_pgp;
      report.steps.push_back(rec);
    }

    // Theta covers the retriever and the reader; Psi is the corrector.
    g.backward(g_cache, gu_grad);
    adam_step(g, adam_g);
    f.backward(f_cache, f_grad);
    adam_step(f, adam_f);
    reader.backward(reader_cache, reader_grad);
    adam_step(reader, adam_r);
    if (!h.grads_all_zero()) {
      throw std::logic_error("train_rlm: corrector gradients touched by the task losses");
    }
    h.backward(h_cache, cu_grad);
    adam_step(h, adam_h);

    if (step % config.eval_every == 0 || step == config.steps) {
      EvalRecord ev;
      ev.step = step;
      ev.recall = evaluate_recall(f, g, task, ks);
      ev.answer_accuracy = answer_accuracy(f, g, reader, task, config.rlm_k);
      ev.reembed_counter = buffer.reembed_counter;
      report.evals.push_back(ev);
    }
  }

  if (!report.steps.empty()) {
    const StepRecord& last = report.steps.back();
    report.final_task_loss = last.task_loss;
    report.final_corrector_loss = last.corrector_loss;
    report.final_staleness_l1 = last.staleness_l1;
    report.final_kl_ph = last.kl_ph;
    report.final_kl_pgp = last.kl_pgp;
  }
  if (!report.evals.empty()) {
    report.final_recall = report.evals.back().recall;
    report.final_answer_accuracy = report.evals.back().answer_accuracy;
  }
  report.reembed_counter = buffer.reembed_counter;
  return result;
}

// ---------------------------------------------------------------------------
// Recall evaluation.
// ---------------------------------------------------------------------------

std::map<std::size_t, double> evaluate_recall(const EmbeddingMatrix& target_table,
                                              const EmbeddingMatrix& queries,
                                              const std::vector<std::size_t>& labels,
                                              const std::vector<std::size_t>& ks) {
  if (queries.rows != labels.size()) {
    throw std::invalid_argument("evaluate_recall: query/label count mismatch");
  }
  std::map<std::size_t, double> out;
  if (queries.rows == 0) {
    for (std::size_t k : ks) out[k] = 0.0;
    return out;
  }
  std::vector<std::size_t> ranks(queries.rows, 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(queries.rows); ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const std::vector<double> scores = matvec_scores(target_table, queries.row_span(ii));
    const std::size_t label = labels[ii];
    const double sl = scores[label];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (scores[j] > sl || (scores[j] == sl && j < label)) ++rank;
    }
    ranks[ii] = rank;
  }
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (std::size_t r : ranks) {
      if (r < k) ++hits;
    }
    out[k] = static_cast<double>(hits) / static_cast<double>(queries.rows);
  }
  return out;
}

std::map<std::size_t, double> evaluate_recall(const MlpNet& f, const MlpNet& g,
                                              const SynthTask& task,
                                              const std::vector<std::size_t>& ks) {
  const EmbeddingMatrix fresh = g.forward(task.raw_targets);
  const EmbeddingMatrix q_emb = f.forward(task.eval_queries);
  return evaluate_recall(fresh, q_emb, task.eval_labels, ks);
}

}  // namespace corrnet
