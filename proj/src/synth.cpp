#include "corrnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "corrnet/checkpoint.hpp"
#include "corrnet/kernels.hpp"

namespace corrnet {

void SynthConfig::validate() const {
  if (n_targets == 0 || dim == 0 || n_mixture_components == 0) {
    throw std::invalid_argument("SynthConfig: counts must be at least 1");
  }
  if (mean_scale < 0.0 || component_scale < 0.0 || drift_variance_scale < 0.0 ||
      label_noise < 0.0 || answer_scale < 0.0 || answer_query_weight < 0.0) {
    throw std::invalid_argument("SynthConfig: scales must be nonnegative");
  }
  if (!(beta > 0.0)) throw std::invalid_argument("SynthConfig: beta must be positive");
  if (probe_count == 0 || n_queries == 0) {
    throw std::invalid_argument("SynthConfig: probe_count and n_queries must be at least 1");
  }
}

MlpSpec SynthConfig::drift_spec() const {
  MlpSpec s;
  s.in_dim = dim;
  s.out_dim = dim;
  s.hidden.assign(drift_depth, drift_width);
  s.residual = true;
  return s;
}

EmbeddingMatrix gen_targets(const SynthConfig& config, Rng& rng) {
  config.validate();
  EmbeddingMatrix means(config.n_mixture_components, config.dim);
  for (double& v : means.data) v = config.mean_scale * rng.next_gaussian();
  EmbeddingMatrix out(config.n_targets, config.dim);
  for (std::size_t i = 0; i < config.n_targets; ++i) {
    const auto c = static_cast<std::size_t>(rng.next_below(config.n_mixture_components));
    double* row = out.row(i);
    const double* mu = means.row(c);
    for (std::size_t j = 0; j < config.dim; ++j) {
      row[j] = mu[j] + config.component_scale * rng.next_gaussian();
    }
  }
  return out;
}

static double mean_kl_over_probes(const EmbeddingMatrix& true_table,
                                  const EmbeddingMatrix& approx_table,
                                  const EmbeddingMatrix& probes, double beta) {
  double acc = 0.0;
  for (std::size_t p = 0; p < probes.rows; ++p) {
    const std::vector<double> zt = matvec_scores(true_table, probes.row_span(p));
    const std::vector<double> za = matvec_scores(approx_table, probes.row_span(p));
    acc += kl_between_softmax(zt, za, beta);
  }
  return probes.rows ? acc / static_cast<double>(probes.rows) : 0.0;
}

DriftResult gen_drift(const SynthConfig& config, Rng& rng, const EmbeddingMatrix& stale,
                      const EmbeddingMatrix& probes) {
  const MlpSpec spec = config.drift_spec();
  if (!spec.residual || spec.in_dim != stale.dim || spec.out_dim != stale.dim) {
    throw std::invalid_argument("gen_drift: drift spec must be residual with in = out = " +
                                std::to_string(stale.dim));
  }
  DriftResult r;
  r.drift = MlpNet::init(spec, InitMode::he_normal, rng, config.drift_variance_scale);
  r.true_targets = r.drift.forward(stale);
  require_finite(r.true_targets, "gen_drift");
  r.staleness_kl = mean_kl_over_probes(r.true_targets, stale, probes, config.beta);
  return r;
}

QuerySet gen_queries(const EmbeddingMatrix& targets, std::size_t m, double label_noise,
                     Rng& rng) {
  if (m == 0) throw std::invalid_argument("gen_queries: m must be at least 1");
  if (targets.rows == 0) throw std::invalid_argument("gen_queries: empty target set");
  QuerySet qs;
  qs.queries = EmbeddingMatrix(m, targets.dim);
  qs.labels.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto label = static_cast<std::size_t>(rng.next_below(targets.rows));
    qs.labels[i] = label;
    double* row = qs.queries.row(i);
    const double* t = targets.row(label);
    for (std::size_t j = 0; j < targets.dim; ++j) {
      row[j] = t[j] + label_noise * rng.next_gaussian();
    }
  }
  return qs;
}

EmbeddingMatrix gen_unit_sphere(std::size_t count, std::size_t dim, Rng& rng) {
  EmbeddingMatrix out(count, dim);
  for (std::size_t i = 0; i < count; ++i) {
    double* row = out.row(i);
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      row[j] = rng.next_gaussian();
      norm2 += row[j] * row[j];
    }
    const double norm = std::sqrt(norm2);
    if (norm < 1e-12) {
      for (std::size_t j = 0; j < dim; ++j) row[j] = (j == 0) ? 1.0 : 0.0;
    } else {
      for (std::size_t j = 0; j < dim; ++j) row[j] /= norm;
    }
  }
  return out;
}

SynthTask gen_unit_circle_toy(std::size_t n_targets, const CircleProfile& profile, Rng& rng,
                              std::size_t probe_count, double beta) {
  if (n_targets < 2) throw std::invalid_argument("gen_unit_circle_toy: need at least 2 targets");
  SynthTask task;
  task.beta = beta;
  task.stale_targets = EmbeddingMatrix(n_targets, 2);
  task.true_targets = EmbeddingMatrix(n_targets, 2);
  const double two_pi = 6.283185307179586476925286766559;
  for (std::size_t i = 0; i < n_targets; ++i) {
    const double theta = two_pi * static_cast<double>(i) / static_cast<double>(n_targets);
    task.stale_targets.at(i, 0) = std::cos(theta);
    task.stale_targets.at(i, 1) = std::sin(theta);
    const double warped = theta + profile.rotation +
                          profile.warp_amplitude * std::sin(profile.warp_frequency * theta);
    task.true_targets.at(i, 0) = std::cos(warped);
    task.true_targets.at(i, 1) = std::sin(warped);
  }
  task.probes = EmbeddingMatrix(probe_count, 2);
  for (std::size_t i = 0; i < probe_count; ++i) {
    const double theta = two_pi * rng.next_double();
    task.probes.at(i, 0) = std::cos(theta);
    task.probes.at(i, 1) = std::sin(theta);
  }
  task.queries = task.probes;
  task.staleness_kl = mean_kl_over_probes(task.true_targets, task.stale_targets, task.probes, beta);
  return task;
}

static std::vector<double> concat_features(std::span<const double> x, std::span<const double> y) {
  std::vector<double> z;
  z.reserve(x.size() + y.size());
  z.insert(z.end(), x.begin(), x.end());
  z.insert(z.end(), y.begin(), y.end());
  return z;
}

static std::vector<double> answer_logits(const EmbeddingMatrix& weights,
                                         std::span<const double> x, std::span<const double> y) {
  const std::vector<double> z = concat_features(x, y);
  return matvec_scores(weights, z);
}

static std::size_t sample_categorical(std::span<const double> logits, Rng& rng) {
  const std::vector<double> probs = softmax(logits, 1.0);
  const double u = rng.next_double();
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  return probs.size() - 1;
}

static std::size_t argmax_index(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void gen_rlm_answers(SynthTask& task, std::size_t vocab_size, double answer_scale, Rng& rng,
                     double query_weight) {
  if (vocab_size < 2) throw std::invalid_argument("gen_rlm_answers: vocab_size must be at least 2");
  if (task.raw_labels.empty() || task.raw_queries.rows == 0) {
    throw std::invalid_argument("gen_rlm_answers: task has no labeled raw queries");
  }
  if (query_weight < 0.0) {
    throw std::invalid_argument("gen_rlm_answers: query_weight must be nonnegative");
  }
  const std::size_t dim_q = task.raw_queries.dim;
  const std::size_t d2 = dim_q + task.raw_targets.dim;
  task.answer_weights = EmbeddingMatrix(vocab_size, d2);
  for (double& v : task.answer_weights.data) v = answer_scale * rng.next_gaussian();
  if (query_weight != 1.0) {
    for (std::size_t a = 0; a < vocab_size; ++a) {
      double* row = task.answer_weights.row(a);
      for (std::size_t j = 0; j < dim_q; ++j) row[j] *= query_weight;
    }
  }
  task.vocab_size = vocab_size;

  task.train_answers.resize(task.raw_queries.rows);
  for (std::size_t i = 0; i < task.raw_queries.rows; ++i) {
    const std::vector<double> logits =
        answer_logits(task.answer_weights, task.raw_queries.row_span(i),
                      task.raw_targets.row_span(task.raw_labels[i]));
    task.train_answers[i] = sample_categorical(logits, rng);
  }
  task.eval_gold.resize(task.eval_queries.rows);
  for (std::size_t i = 0; i < task.eval_queries.rows; ++i) {
    const std::vector<double> logits =
        answer_logits(task.answer_weights, task.eval_queries.row_span(i),
                      task.raw_targets.row_span(task.eval_labels[i]));
    task.eval_gold[i] = argmax_index(logits);
  }
}

SynthTask make_isolated_task(const SynthConfig& config) {
  config.validate();
  Rng master(config.seed);
  Rng rng_targets = master.split(1);
  Rng rng_drift = master.split(2);
  Rng rng_probes = master.split(3);
  Rng rng_queries = master.split(4);

  SynthTask task;
  task.beta = config.beta;
  task.stale_targets = gen_targets(config, rng_targets);
  task.probes = gen_unit_sphere(config.probe_count, config.dim, rng_probes);
  DriftResult drift = gen_drift(config, rng_drift, task.stale_targets, task.probes);
  task.true_targets = std::move(drift.true_targets);
  task.staleness_kl = drift.staleness_kl;
  task.queries = gen_unit_sphere(config.n_queries, config.dim, rng_queries);
  return task;
}

SynthTask make_retrieval_task(const SynthConfig& config, bool with_answers) {
  config.validate();
  Rng master(config.seed);
  Rng rng_targets = master.split(1);
  Rng rng_train = master.split(4);
  Rng rng_eval = master.split(5);
  Rng rng_answers = master.split(6);

  SynthTask task;
  task.beta = config.beta;
  // Unit-norm targets make max-inner-product coincide with nearest neighbor,
  // so a query built as target-plus-noise is labeled by its argmax.
  task.raw_targets = gen_unit_sphere(config.n_targets, config.dim, rng_targets);
  QuerySet train = gen_queries(task.raw_targets, config.n_queries, config.label_noise, rng_train);
  task.raw_queries = std::move(train.queries);
  task.raw_labels = std::move(train.labels);
  const std::size_t n_eval = std::max<std::size_t>(1, config.n_queries / 4);
  QuerySet ev = gen_queries(task.raw_targets, n_eval, config.label_noise, rng_eval);
  task.eval_queries = std::move(ev.queries);
  task.eval_labels = std::move(ev.labels);
  if (with_answers) {
    gen_rlm_answers(task, config.vocab_size, config.answer_scale, rng_answers,
                    config.answer_query_weight);
  }
  return task;
}

// ---- serialization ----

namespace {

EmbeddingMatrix indices_to_matrix(const std::vector<std::size_t>& v) {
  EmbeddingMatrix m(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m.at(i, 0) = static_cast<double>(v[i]);
  return m;
}

std::vector<std::size_t> matrix_to_indices(const EmbeddingMatrix& m) {
  std::vector<std::size_t> v(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double d = m.at(i, 0);
    if (d < 0.0 || d != std::floor(d)) {
      throw std::runtime_error("load_task: non-index value in index matrix");
    }
    v[i] = static_cast<std::size_t>(d);
  }
  return v;
}

}  // namespace

void save_task(const SynthTask& task, const std::string& dir, const std::string& config_digest) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::map<std::string, const EmbeddingMatrix*> mats = {
      {"stale_targets", &task.stale_targets}, {"true_targets", &task.true_targets},
      {"queries", &task.queries},             {"probes", &task.probes},
      {"raw_targets", &task.raw_targets},     {"raw_queries", &task.raw_queries},
      {"eval_queries", &task.eval_queries},   {"answer_weights", &task.answer_weights},
  };
  const EmbeddingMatrix labels = indices_to_matrix(task.labels);
  const EmbeddingMatrix raw_labels = indices_to_matrix(task.raw_labels);
  const EmbeddingMatrix eval_labels = indices_to_matrix(task.eval_labels);
  const EmbeddingMatrix train_answers = indices_to_matrix(task.train_answers);
  const EmbeddingMatrix eval_gold = indices_to_matrix(task.eval_gold);
  mats["labels"] = &labels;
  mats["raw_labels"] = &raw_labels;
  mats["eval_labels"] = &eval_labels;
  mats["train_answers"] = &train_answers;
  mats["eval_gold"] = &eval_gold;

  std::ofstream manifest(fs::path(dir) / "task.manifest");
  if (!manifest) throw std::runtime_error("save_task: cannot write manifest in " + dir);
  manifest << "format = corrnet-task/1\n";
  manifest << "config_digest = " << config_digest << "\n";
  manifest << "beta = " << task.beta << "\n";
  manifest << "staleness_kl = " << task.staleness_kl << "\n";
  manifest << "vocab_size = " << task.vocab_size << "\n";
  for (const auto& [name, mat] : mats) {
    if (mat->rows == 0) continue;
    save_matrix(*mat, (fs::path(dir) / (name + ".mat")).string());
    manifest << name << " = " << mat->rows << "x" << mat->dim << "\n";
  }
}

SynthTask load_task(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "task.manifest");
  if (!manifest) throw std::runtime_error("load_task: no task.manifest in " + dir);
  SynthTask task;
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(manifest, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
    };
    trim(key);
    trim(val);
    kv[key] = val;
  }
  if (kv["format"] != "corrnet-task/1") {
    throw std::runtime_error("load_task: unsupported task format in " + dir);
  }
  task.beta = std::stod(kv.at("beta"));
  task.staleness_kl = std::stod(kv.at("staleness_kl"));
  task.vocab_size = static_cast<std::size_t>(std::stoull(kv.at("vocab_size")));

  auto load_mat = [&](const char* name, EmbeddingMatrix& into) {
    if (!kv.count(name)) return;
    into = load_matrix((fs::path(dir) / (std::string(name) + ".mat")).string());
  };
  load_mat("stale_targets", task.stale_targets);
  load_mat("true_targets", task.true_targets);
  load_mat("queries", task.queries);
  load_mat("probes", task.probes);
  load_mat("raw_targets", task.raw_targets);
  load_mat("raw_queries", task.raw_queries);
  load_mat("eval_queries", task.eval_queries);
  load_mat("answer_weights", task.answer_weights);
  EmbeddingMatrix tmp;
  load_mat("labels", tmp);
  if (tmp.rows) task.labels = matrix_to_indices(tmp);
  tmp = EmbeddingMatrix();
  load_mat("raw_labels", tmp);
  if (tmp.rows) task.raw_labels = matrix_to_indices(tmp);
  tmp = EmbeddingMatrix();
  load_mat("eval_labels", tmp);
  if (tmp.rows) task.eval_labels = matrix_to_indices(tmp);
  tmp = EmbeddingMatrix();
  load_mat("train_answers", tmp);
  if (tmp.rows) task.train_answers = matrix_to_indices(tmp);
  tmp = EmbeddingMatrix();
  load_mat("eval_gold", tmp);
  if (tmp.rows) task.eval_gold = matrix_to_indices(tmp);
  return task;
}

}  // namespace corrnet
