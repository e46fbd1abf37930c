#include "corrnet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "corrnet/checkpoint.hpp"
#include "corrnet/kernels.hpp"
#include "corrnet/theory.hpp"
#include "corrnet/version.hpp"

namespace corrnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
const std::vector<std::size_t> kRecallKs = {1, 5, 10, 20, 100};

void add_synth_keys(FlatConfig& c) {
  const SynthConfig sc;
  set_u64(c, "n_targets", sc.n_targets);
  set_u64(c, "dim", sc.dim);
  set_u64(c, "components", sc.n_mixture_components);
  set_double(c, "mean_scale", sc.mean_scale);
  set_double(c, "component_scale", sc.component_scale);
  set_u64(c, "drift_width", sc.drift_width);
  set_u64(c, "drift_depth", sc.drift_depth);
  set_double(c, "drift_scale", sc.drift_variance_scale);
  set_double(c, "beta", sc.beta);
  set_u64(c, "probe_count", sc.probe_count);
  set_u64(c, "n_queries", sc.n_queries);
  set_double(c, "label_noise", sc.label_noise);
  set_u64(c, "vocab_size", sc.vocab_size);
  set_double(c, "answer_scale", sc.answer_scale);
  set_double(c, "answer_query_weight", sc.answer_query_weight);
}

void add_corrector_keys(FlatConfig& c) {
  const TrainConfig tc;
  set_u64(c, "corrector_width", 64);
  set_u64(c, "corrector_depth", 2);
  set_double(c, "corrector_lr", tc.corrector_lr);
  c["corrector_loss"] = "ce";
}

void add_isolated_keys(FlatConfig& c) {
  const TrainConfig tc;
  set_double(c, "sample_fraction", tc.sample_fraction);
  set_u64(c, "isolated_queries", 512);
  set_u64(c, "isolated_k_hard", 8);
  set_u64(c, "isolated_k_uniform", 8);
  set_u64(c, "max_epochs", tc.max_epochs);
  set_u64(c, "patience", tc.patience);
  set_u64(c, "eval_every", tc.eval_every);
  c["subset_mode"] = "topk";
}

void add_joint_keys(FlatConfig& c) {
  const TrainConfig tc;
  set_u64(c, "steps", tc.steps);
  set_u64(c, "batch_size", tc.batch_size);
  set_u64(c, "k_hard", tc.k_hard);
  set_u64(c, "k_uniform", tc.k_uniform);
  set_bool(c, "include_uniform", tc.include_uniform);
  set_bool(c, "share_negatives", tc.share_negatives);
  c["subset_mode"] = "topk";
  set_double(c, "corrector_weight", tc.corrector_weight);
  c["buffer_policy"] = "never";
  set_u64(c, "refresh_every", tc.refresh_every);
  set_double(c, "encoder_lr", tc.encoder_lr);
  set_double(c, "encoder_init_scale", tc.encoder_init_scale);
  set_u64(c, "eval_every", tc.eval_every);
  set_u64(c, "metric_cadence", tc.metric_cadence);
  set_u64(c, "encoder_width", 32);
  set_u64(c, "encoder_depth", 1);
}

void add_rlm_keys(FlatConfig& c) {
  const TrainConfig tc;
  set_u64(c, "steps", tc.steps);
  set_u64(c, "rlm_batch", tc.rlm_batch);
  set_u64(c, "rlm_k", tc.rlm_k);
  c["subset_mode"] = "topk";
  set_double(c, "corrector_weight", tc.corrector_weight);
  set_u64(c, "refresh_every", tc.refresh_every);
  set_double(c, "encoder_lr", tc.encoder_lr);
  set_double(c, "encoder_init_scale", tc.encoder_init_scale);
  set_double(c, "reader_lr", tc.reader_lr);
  set_u64(c, "eval_every", tc.eval_every);
  set_u64(c, "metric_cadence", tc.metric_cadence);
  set_u64(c, "encoder_width", 32);
  set_u64(c, "encoder_depth", 1);
  set_u64(c, "reader_width", 0);
  set_u64(c, "reader_depth", 0);
}

}  // namespace

FlatConfig default_flat_config(const std::string& command) {
  FlatConfig c;
  c["command"] = command;
  if (command == "synth-gen") {
    add_synth_keys(c);
    c["kind"] = "isolated";
    set_u64(c, "circle_targets", 256);
    set_double(c, "circle_rotation", 0.3);
    set_double(c, "circle_warp", 0.5);
    set_u64(c, "circle_freq", 3);
  } else if (command == "train-corrector") {
    add_synth_keys(c);
    add_corrector_keys(c);
    add_isolated_keys(c);
  } else if (command == "train-joint") {
    add_synth_keys(c);
    add_corrector_keys(c);
    add_joint_keys(c);
    c["corrector_loss"] = "ce";
    c["arm"] = "corrector";
  } else if (command == "train-rlm") {
    add_synth_keys(c);
    add_corrector_keys(c);
    add_rlm_keys(c);
    c["arm"] = "corrector";
  } else if (command == "sweep-capacity") {
    add_synth_keys(c);
    add_isolated_keys(c);
    const TrainConfig tc;
    set_double(c, "corrector_lr", tc.corrector_lr);
    c["corrector_loss"] = "ce";
    c["widths"] = "8,16,32,64";
    c["depths"] = "0,1,2";
    c["drift_scales"] = "0.2,0.3";
    set_u64(c, "seeds_per_cell", 10);
    c.erase("drift_scale");
  } else if (command == "sweep-fraction") {
    add_synth_keys(c);
    add_isolated_keys(c);
    const TrainConfig tc;
    set_double(c, "corrector_lr", tc.corrector_lr);
    c["corrector_loss"] = "ce";
    set_u64(c, "corrector_depth", 2);
    c["fractions"] = "0.01,0.1,1.0";
    c["fraction_widths"] = "8,64";
    set_double(c, "drift_low", 0.2);
    set_double(c, "drift_high", 0.3);
    set_u64(c, "seeds_per_cell", 5);
    c.erase("drift_scale");
  } else if (command == "check-theory") {
    add_synth_keys(c);
    set_u64(c, "tv_instances", 1000);
    set_u64(c, "tv_max_len", 64);
    set_u64(c, "perturb_inputs", 512);
    set_u64(c, "perturb_probes", 128);
    set_u64(c, "perturb_directions", 10);
    c["perturb_norms"] = "0,0.05,0.1,0.2,0.4";
    set_u64(c, "perturb_width", 32);
    set_u64(c, "perturb_depth", 1);
  } else if (command == "warp") {
    const SynthConfig sc;
    set_u64(c, "n_targets", sc.n_targets);
    set_u64(c, "dim", sc.dim);
    set_u64(c, "components", sc.n_mixture_components);
    set_double(c, "mean_scale", sc.mean_scale);
    set_double(c, "component_scale", sc.component_scale);
    set_double(c, "beta", 1.0);
    set_u64(c, "warp_small_width", 16);
    set_u64(c, "warp_small_depth", 1);
    set_u64(c, "warp_large_width", 64);
    set_u64(c, "warp_large_depth", 2);
    set_u64(c, "warp_queries", 64);
    set_u64(c, "warp_eval_queries", 256);
    set_u64(c, "warp_samples", 32);
    set_u64(c, "warp_k", 10);
    set_u64(c, "corrector_width", 32);
    set_u64(c, "corrector_depth", 1);
    const TrainConfig tc;
    set_double(c, "corrector_lr", tc.corrector_lr);
    c["corrector_loss"] = "ce";
    set_u64(c, "max_epochs", tc.max_epochs);
    set_u64(c, "patience", tc.patience);
  } else if (command == "eval") {
    c["ks"] = "1,5,10,20,100";
  } else {
    throw std::invalid_argument("unknown command: " + command);
  }
  return c;
}

FlatConfig resolve_config(const std::string& command, const FlatConfig& user) {
  FlatConfig out = default_flat_config(command);
  for (const auto& [k, v] : user) {
    if (k == "out") continue;
    if (k == "command") {
      if (v != command) {
        throw std::invalid_argument("config command is " + v + ", expected " + command);
      }
      continue;
    }
    if (k != "seed" && !out.count(k)) {
      throw std::invalid_argument("unknown config key: " + k);
    }
    out[k] = v;
  }
  if (!out.count("seed")) {
    throw std::invalid_argument("missing required flag --seed");
  }
  return out;
}

SynthConfig synth_config_from(const FlatConfig& cfg) {
  SynthConfig d;
  SynthConfig sc;
  sc.n_targets = get_u64(cfg, "n_targets", d.n_targets);
  sc.dim = get_u64(cfg, "dim", d.dim);
  sc.n_mixture_components = get_u64(cfg, "components", d.n_mixture_components);
  sc.mean_scale = get_double(cfg, "mean_scale", d.mean_scale);
  sc.component_scale = get_double(cfg, "component_scale", d.component_scale);
  sc.drift_width = get_u64(cfg, "drift_width", d.drift_width);
  sc.drift_depth = get_u64(cfg, "drift_depth", d.drift_depth);
  sc.drift_variance_scale = get_double(cfg, "drift_scale", d.drift_variance_scale);
  sc.beta = get_double(cfg, "beta", d.beta);
  sc.probe_count = get_u64(cfg, "probe_count", d.probe_count);
  sc.n_queries = get_u64(cfg, "n_queries", d.n_queries);
  sc.label_noise = get_double(cfg, "label_noise", d.label_noise);
  sc.vocab_size = get_u64(cfg, "vocab_size", d.vocab_size);
  sc.answer_scale = get_double(cfg, "answer_scale", d.answer_scale);
  sc.answer_query_weight = get_double(cfg, "answer_query_weight", d.answer_query_weight);
  sc.seed = get_u64(cfg, "seed", 0);
  return sc;
}

namespace {

SubsetMode subset_mode_from(const std::string& s) {
  if (s == "topk") return SubsetMode::topk;
  if (s == "gumbel") return SubsetMode::gumbel;
  throw std::invalid_argument("subset_mode must be topk or gumbel, got " + s);
}

CorrectorLossKind corrector_loss_from(const std::string& s) {
  if (s == "ce") return CorrectorLossKind::ce;
  if (s == "mse") return CorrectorLossKind::mse;
  throw std::invalid_argument("corrector_loss must be ce or mse, got " + s);
}

BufferPolicy buffer_policy_from(const std::string& s) {
  if (s == "never") return BufferPolicy::never;
  if (s == "every_r") return BufferPolicy::every_r;
  throw std::invalid_argument("buffer_policy must be never or every_r, got " + s);
}

}  // namespace

TrainConfig train_config_from(const FlatConfig& cfg) {
  TrainConfig d;
  TrainConfig tc;
  tc.steps = get_u64(cfg, "steps", d.steps);
  tc.batch_size = get_u64(cfg, "batch_size", d.batch_size);
  tc.k_hard = get_u64(cfg, "k_hard", d.k_hard);
  tc.k_uniform = get_u64(cfg, "k_uniform", d.k_uniform);
  tc.include_uniform = get_bool(cfg, "include_uniform", d.include_uniform);
  tc.share_negatives = get_bool(cfg, "share_negatives", d.share_negatives);
  tc.subset_mode = subset_mode_from(get_string(cfg, "subset_mode", "topk"));
  tc.beta = get_double(cfg, "beta", SynthConfig{}.beta);
  tc.corrector_loss = corrector_loss_from(get_string(cfg, "corrector_loss", "ce"));
  tc.corrector_weight = get_double(cfg, "corrector_weight", d.corrector_weight);
  tc.buffer_policy = buffer_policy_from(get_string(cfg, "buffer_policy", "never"));
  tc.refresh_every = get_u64(cfg, "refresh_every", d.refresh_every);
  tc.encoder_lr = get_double(cfg, "encoder_lr", d.encoder_lr);
  tc.encoder_init_scale = get_double(cfg, "encoder_init_scale", d.encoder_init_scale);
  tc.corrector_lr = get_double(cfg, "corrector_lr", d.corrector_lr);
  tc.reader_lr = get_double(cfg, "reader_lr", d.reader_lr);
  tc.eval_every = get_u64(cfg, "eval_every", d.eval_every);
  tc.metric_cadence = get_u64(cfg, "metric_cadence", d.metric_cadence);
  tc.seed = get_u64(cfg, "seed", 0);
  tc.sample_fraction = get_double(cfg, "sample_fraction", d.sample_fraction);
  tc.isolated_queries = get_u64(cfg, "isolated_queries", d.isolated_queries);
  tc.isolated_k_hard = get_u64(cfg, "isolated_k_hard", d.isolated_k_hard);
  tc.isolated_k_uniform = get_u64(cfg, "isolated_k_uniform", d.isolated_k_uniform);
  tc.max_epochs = get_u64(cfg, "max_epochs", d.max_epochs);
  tc.patience = get_u64(cfg, "patience", d.patience);
  tc.rlm_k = get_u64(cfg, "rlm_k", d.rlm_k);
  tc.rlm_batch = get_u64(cfg, "rlm_batch", d.rlm_batch);
  return tc;
}

namespace {

MlpSpec square_spec(std::size_t dim, std::size_t width, std::size_t depth) {
  MlpSpec s;
  s.in_dim = dim;
  s.out_dim = dim;
  s.hidden.assign(depth, width);
  s.residual = true;
  return s;
}

}  // namespace

MlpSpec corrector_spec_from(const FlatConfig& cfg, std::size_t dim) {
  return square_spec(dim, get_u64(cfg, "corrector_width", 64), get_u64(cfg, "corrector_depth", 2));
}

MlpSpec encoder_spec_from(const FlatConfig& cfg, std::size_t dim) {
  return square_spec(dim, get_u64(cfg, "encoder_width", 32), get_u64(cfg, "encoder_depth", 1));
}

MlpSpec reader_spec_from(const FlatConfig& cfg, std::size_t in_dim, std::size_t vocab) {
  MlpSpec s;
  s.in_dim = in_dim;
  s.out_dim = vocab;
  s.hidden.assign(get_u64(cfg, "reader_depth", 0), get_u64(cfg, "reader_width", 0));
  s.residual = false;
  return s;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    FlatConfig one{{"x", item}};
    out.push_back(get_u64(one, "x", 0));
  }
  if (out.empty()) throw std::invalid_argument("empty list: " + text);
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    FlatConfig one{{"x", item}};
    out.push_back(get_double(one, "x", 0.0));
  }
  if (out.empty()) throw std::invalid_argument("empty list: " + text);
  return out;
}

std::uint64_t cell_seed(std::uint64_t master_seed, std::size_t index) {
  Rng master(master_seed);
  return master.split(index + 1).next_u64();
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return kNan;
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile: q out of [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

// ---------------------------------------------------------------------------
// Run scaffolding.
// ---------------------------------------------------------------------------

namespace {

RunManifest begin_run(const std::string& command, const FlatConfig& resolved,
                      const std::string& out_dir) {
  fs::create_directories(out_dir);
  RunManifest m;
  m.command = command;
  m.artifact_version = kVersion;
  m.config = resolved;
  m.config_digest = config_digest(resolved);
  m.cell_digest = cell_digest(resolved);
  m.seed = get_u64(resolved, "seed", 0);
  m.started_utc = utc_timestamp();
  m.status = "running";
  save_config_file(resolved, (fs::path(out_dir) / "config.resolved").string());
  write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

void finish_run(RunManifest& m, const std::string& out_dir) {
  m.finished_utc = utc_timestamp();
  m.status = "ok";
  write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
}

void fail_run(RunManifest& m, const std::string& out_dir, const std::string& error) {
  m.finished_utc = utc_timestamp();
  m.status = "failed";
  m.error = error;
  write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
}

template <typename Body>
RunManifest scaffolded(const std::string& command, const FlatConfig& user,
                       const std::string& out_dir, Body body) {
  const FlatConfig resolved = resolve_config(command, user);
  RunManifest m = begin_run(command, resolved, out_dir);
  try {
    body(resolved, m);
  } catch (const std::exception& e) {
    fail_run(m, out_dir, e.what());
    throw;
  }
  finish_run(m, out_dir);
  return m;
}

struct SummaryRow {
  std::vector<std::string> header;
  std::vector<std::string> row;

  void put(const std::string& k, const std::string& v) {
    header.push_back(k);
    row.push_back(v);
  }
  void put_metric(RunManifest& m, const std::string& k, double v) {
    put(k, csv_double(v));
    m.metrics[k] = v;
  }
  void write(const std::string& out_dir) const {
    write_summary_csv((fs::path(out_dir) / "summary.csv").string(), header, row);
  }
};

SummaryRow summary_start(const RunManifest& m) {
  SummaryRow s;
  s.put("command", m.command);
  s.put("config_digest", m.config_digest);
  s.put("cell_digest", m.cell_digest);
  s.put("seed", std::to_string(m.seed));
  return s;
}

void put_recall_metrics(SummaryRow& s, RunManifest& m, const std::map<std::size_t, double>& recall) {
  for (const std::size_t k : kRecallKs) {
    const auto it = recall.find(k);
    s.put_metric(m, "recall_" + std::to_string(k), it == recall.end() ? kNan : it->second);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Single runs.
// ---------------------------------------------------------------------------

RunManifest run_synth_gen(const FlatConfig& cfg, const std::string& out_dir) {
  return scaffolded("synth-gen", cfg, out_dir, [&](const FlatConfig& rc, RunManifest& m) {
    const SynthConfig sc = synth_config_from(rc);
    const std::string kind = get_string(rc, "kind", "isolated");
    SynthTask task;
    if (kind == "isolated") {
      task = make_isolated_task(sc);
    } else if (kind == "retrieval") {
      task = make_retrieval_task(sc, false);
    } else if (kind == "rlm") {
      task = make_retrieval_task(sc, true);
    } else if (kind == "circle") {
      CircleProfile profile;
      profile.rotation = get_double(rc, "circle_rotation", 0.3);
      profile.warp_amplitude = get_double(rc, "circle_warp", 0.5);
      profile.warp_frequency = static_cast<int>(get_u64(rc, "circle_freq", 3));
      Rng rng(sc.seed);
      task = gen_unit_circle_toy(get_u64(rc, "circle_targets", 256), profile, rng, sc.probe_count,
                                 sc.beta);
    } else {
      throw std::invalid_argument("kind must be isolated, retrieval, rlm or circle, got " + kind);
    }
    save_task(task, (fs::path(out_dir) / "task").string(), m.config_digest);
    SummaryRow s = summary_start(m);
    s.put("kind", kind);
    s.put_metric(m, "staleness_kl", task.staleness_kl);
    s.put_metric(m, "n_targets", static_cast<double>(std::max(task.stale_targets.rows,
                                                              task.raw_targets.rows)));
    s.write(out_dir);
  });
}

RunManifest run_train_corrector(const FlatConfig& cfg, const std::string& out_dir) {
  return scaffolded("train-corrector", cfg, out_dir, [&](const FlatConfig& rc, RunManifest& m) {
    const SynthConfig sc = synth_config_from(rc);
    const TrainConfig tc = train_config_from(rc);
    const MlpSpec corr_spec = corrector_spec_from(rc, sc.dim);
    const SynthTask task = make_isolated_task(sc);
    IsolatedResult res = train_corrector_isolated(task, corr_spec, tc.sample_fraction, tc);

    write_steps_csv((fs::path(out_dir) / "steps.csv").string(), res.report.steps);
    save_net(res.corrector, (fs::path(out_dir) / "corrector.net").string());

    SummaryRow s = summary_start(m);
    s.put_metric(m, "param_count", static_cast<double>(res.corrector.parameter_count()));
    s.put_metric(m, "staleness_kl", task.staleness_kl);
    s.put_metric(m, "final_corrector_loss", res.report.final_corrector_loss);
    s.put_metric(m, "final_kl_ph", res.report.final_kl_ph);
    s.put_metric(m, "final_kl_pgp", res.report.final_kl_pgp);
    s.put_metric(m, "epochs_ran", static_cast<double>(res.report.epochs_ran));
    s.put_metric(m, "best_epoch", static_cast<double>(res.report.best_epoch));
    s.put_metric(m, "reembed_counter", static_cast<double>(res.report.reembed_counter));
    s.write(out_dir);
  });
}

RunManifest run_train_joint(const FlatConfig& cfg, const std::string& out_dir) {
  return scaffolded("train-joint", cfg, out_dir, [&](const FlatConfig& rc, RunManifest& m) {
    const SynthConfig sc = synth_config_from(rc);
    TrainConfig tc = train_config_from(rc);
    const std::string arm = get_string(rc, "arm", "corrector");
    const SynthTask task = make_retrieval_task(sc, false);
    const MlpSpec enc_spec = encoder_spec_from(rc, sc.dim);

    JointResult res;
    if (arm == "corrector") {
      res = train_joint(task, enc_spec, enc_spec, corrector_spec_from(rc, sc.dim), tc);
    } else if (arm == "stale") {
      res = train_joint_baseline(task, enc_spec, enc_spec, tc, JointBaseline::stale);
    } else if (arm == "exhaustive") {
      res = train_joint_baseline(task, enc_spec, enc_spec, tc, JointBaseline::exhaustive);
    } else {
      throw std::invalid_argument("arm must be corrector, stale or exhaustive, got " + arm);
    }

    write_steps_csv((fs::path(out_dir) / "steps.csv").string(), res.report.steps);
    write_evals_jsonl((fs::path(out_dir) / "evals.jsonl").string(), res.report.evals);
    save_net(res.f, (fs::path(out_dir) / "f.net").string());
    save_net(res.g, (fs::path(out_dir) / "g.net").string());
    if (res.has_corrector) {
      save_net(res.corrector, (fs::path(out_dir) / "corrector.net").string());
    }
    save_buffer(res.buffer, (fs::path(out_dir) / "buffer.buf").string());

    SummaryRow s = summary_start(m);
    s.put("arm", arm);
    s.put_metric(m, "final_task_loss", res.report.final_task_loss);
    s.put_metric(m, "final_corrector_loss", res.report.final_corrector_loss);
    s.put_metric(m, "final_staleness_l1", res.report.final_staleness_l1);
    s.put_metric(m, "final_kl_ph", res.report.final_kl_ph);
    s.put_metric(m, "final_kl_pgp", res.report.final_kl_pgp);
    put_recall_metrics(s, m, res.report.final_recall);
    s.put_metric(m, "reembed_counter", static_cast<double>(res.report.reembed_counter));
    s.write(out_dir);
  });
}

RunManifest run_train_rlm(const FlatConfig& cfg, const std::string& out_dir) {
  return scaffolded("train-rlm", cfg, out_dir, [&](const FlatConfig& rc, RunManifest& m) {
    const SynthConfig sc = synth_config_from(rc);
    const TrainConfig tc = train_config_from(rc);
    const std::string arm = get_string(rc, "arm", "corrector");
    RlmArm rlm_arm;
    if (arm == "corrector") rlm_arm = RlmArm::corrector;
    else if (arm == "frozen") rlm_arm = RlmArm::frozen;
    else if (arm == "exhaustive") rlm_arm = RlmArm::exhaustive;
    else throw std::invalid_argument("arm must be corrector, frozen or exhaustive, got " + arm);

    const SynthTask task = make_retrieval_task(sc, true);
    const MlpSpec enc_spec = encoder_spec_from(rc, sc.dim);
    const MlpSpec reader_spec = reader_spec_from(rc, 2 * sc.dim, task.vocab_size);
    RlmResult res = train_rlm(task, enc_spec, enc_spec, reader_spec,
                              corrector_spec_from(rc, sc.dim), tc, rlm_arm);

    write_steps_csv((fs::path(out_dir) / "steps.csv").string(), res.report.steps);
    write_evals_jsonl((fs::path(out_dir) / "evals.jsonl").string(), res.report.evals);
    save_net(res.f, (fs::path(out_dir) / "f.net").string());
    save_net(res.g, (fs::path(out_dir) / "g.net").string());
    save_net(res.reader, (fs::path(out_dir) / "reader.net").string());
    save_net(res.corrector, (fs::path(out_dir) / "corrector.net").string());
    save_buffer(res.buffer, (fs::path(out_dir) / "buffer.buf").string());

    SummaryRow s = summary_start(m);
    s.put("arm", arm);
    s.put_metric(m, "final_task_loss", res.report.final_task_loss);
    s.put_metric(m, "final_corrector_loss", res.report.final_corrector_loss);
    s.put_metric(m, "final_staleness_l1", res.report.final_staleness_l1);
    s.put_metric(m, "answer_accuracy", res.report.final_answer_accuracy);
    put_recall_metrics(s, m, res.report.final_recall);
    s.put_metric(m, "reembed_counter", static_cast<double>(res.report.reembed_counter));
    s.write(out_dir);
  });
}

// ---------------------------------------------------------------------------
// Sweeps.
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kCapacityHeader = {
    "width",     "depth",      "drift_scale", "seed",        "param_count",
    "staleness_kl", "kl_pgp",  "kl_ph",       "final_loss",  "epochs_ran",
    "best_epoch",   "status",  "config_digest", "cell_digest"};

// Keys owned by the sweep driver itself, not forwarded to cells.
FlatConfig cell_base_config(const FlatConfig& resolved, const std::vector<std::string>& axis_keys) {
  FlatConfig base = resolved;
  base.erase("command");
  base.erase("seed");
  for (const std::string& k : axis_keys) base.erase(k);
  return base;
}

}  // namespace

RunManifest run_sweep_capacity(const FlatConfig& cfg, const std::string& out_dir) {
  return scaffolded("sweep-capacity", cfg, out_dir, [&](const FlatConfig& rc, RunManifest& m) {
    const std::vector<std::uint64_t> widths = parse_u64_list(get_string(rc, "widths", ""));
    const std::vector<std::uint64_t> depths = parse_u64_list(get_string(rc, "depths", ""));
    const std::vector<double> scales = parse_double_list(get_string(rc, "drift_scales", ""));
    const std::uint64_t reps = get_u64(rc, "seeds_per_cell", 10);
    const std::uint64_t master = get_u64(rc, "seed", 0);
    const FlatConfig base =
        cell_base_config(rc, {"widths", "depths", "drift_scales", "seeds_per_cell"});

    CsvWriter csv((fs::path(out_dir) / "capacity.csv").string(), kCapacityHeader);
    std::size_t task_idx = 0;
    std::size_t n_failed = 0;
    std::size_t n_cells = 0;
    for (const double scale : scales) {
      for (std::uint64_t rep = 0; rep < reps; ++rep) {
        const std::uint64_t seed = cell_seed(master, task_idx++);
        FlatConfig task_cfg = base;
        set_double(task_cfg, "drift_scale", scale);
        set_u64(task_cfg, "seed", seed);
        set_u64(task_cfg, "corrector_width", widths.front());
        set_u64(task_cfg, "corrector_depth", depths.front());
        const SynthTask task =
            make_isolated_task(synth_config_from(resolve_config("train-corrector", task_cfg)));

        for (const std::uint64_t w : widths) {
          for (const std::uint64_t d : depths) {
            FlatConfig cell_user = task_cfg;
            set_u64(cell_user, "corrector_width", w);
            set_u64(cell_user, "corrector_depth", d);
            const FlatConfig cell = resolve_config("train-corrector", cell_user);
            ++n_cells;
            std::vector<std::string> row = {
                std::to_string(w), std::to_string(d), format_double(scale), std::to_string(seed)};
            try {
              const TrainConfig tc = train_config_from(cell);
              const MlpSpec spec = corrector_spec_from(cell, task.stale_targets.dim);
              IsolatedResult res = train_corrector_isolated(task, spec, tc.sample_fraction, tc);
              row.push_back(std::to_string(res.corrector.parameter_count()));
              row.push_back(csv_double(task.staleness_kl));
              row.push_back(csv_double(res.report.final_kl_pgp));
              row.push_back(csv_double(res.report.final_kl_ph));
              row.push_back(csv_double(res.report.final_corrector_loss));
              row.push_back(std::to_string(res.report.epochs_ran));
              row.push_back(std::to_string(res.report.best_epoch));
              row.push_back("ok");
            } catch (const std::exception& e) {
              (void)e;
              for (int i = 0; i < 7; ++i) row.push_back("");
              row.push_back("failed");
              ++n_failed;
            }
            row.push_back(config_digest(cell));
            row.push_back(cell_digest(cell));
            csv.row(row);
          }
        }
      }
    }
    SummaryRow s = summary_start(m);
    s.put_metric(m, "n_cells", static_cast<double>(n_cells));
    s.put_metric(m, "n_failed", static_cast<double>(n_failed));
    s.write(out_dir);
  });
}

RunManifest run_sweep_fraction(const FlatConfig& cfg, const std::string& out_dir) {
  return scaffolded("sweep-fraction", cfg, out_dir, [&](const FlatConfig& rc, RunManifest& m) {
    const std::vector<double> fractions = parse_double_list(get_string(rc, "fractions", ""));
    const std::vector<std::uint64_t> widths = parse_u64_list(get_string(rc, "fraction_widths", ""));
    const std::uint64_t reps = get_u64(rc, "seeds_per_cell", 5);
    const std::uint64_t master = get_u64(rc, "seed", 0);
    const std::vector<std::pair<std::string, double>> panels = {
        {"low", get_double(rc, "drift_low", 0.1)}, {"high", get_double(rc, "drift_high", 0.3)}};
    const FlatConfig base = cell_base_config(
        rc, {"fractions", "fraction_widths", "drift_low", "drift_high", "seeds_per_cell"});

    CsvWriter csv((fs::path(out_dir) / "fraction.csv").string(),
                  {"panel", "drift_scale", "width", "fraction", "seed", "param_count",
                   "staleness_kl", "kl_pgp", "kl_ph", "final_loss", "epochs_ran", "status",
                   "config_digest", "cell_digest"});
    std::size_t task_idx = 0;
    std::size_t n_failed = 0;
    std::size_t n_cells = 0;
    for (const auto& [panel, scale] : panels) {
      for (std::uint64_t rep = 0; rep < reps; ++rep) {
        const std::uint64_t seed = cell_seed(master, task_idx++);
        FlatConfig task_cfg = base;
        set_double(task_cfg, "drift_scale", scale);
        set_u64(task_cfg, "seed", seed);
        set_u64(task_cfg, "corrector_width", widths.front());
        set_double(task_cfg, "sample_fraction", 1.0);
        const SynthTask task =
            make_isolated_task(synth_config_from(resolve_config("train-corrector", task_cfg)));

        for (const std::uint64_t w : widths) {
          for (const double f : fractions) {
            FlatConfig cell_user = task_cfg;
            set_u64(cell_user, "corrector_width", w);
            set_double(cell_user, "sample_fraction", f);
            const FlatConfig cell = resolve_config("train-corrector", cell_user);
            ++n_cells;
            std::vector<std::string> row = {panel, format_double(scale), std::to_string(w),
                                            format_double(f), std::to_string(seed)};
            try {
              const TrainConfig tc = train_config_from(cell);
              const MlpSpec spec = corrector_spec_from(cell, task.stale_targets.dim);
              IsolatedResult res = train_corrector_isolated(task, spec, tc.sample_fraction, tc);
              row.push_back(std::to_string(res.corrector.parameter_count()));
              row.push_back(csv_double(task.staleness_kl));
              row.push_back(csv_double(res.report.final_kl_pgp));
              row.push_back(csv_double(res.report.final_kl_ph));
              row.push_back(csv_double(res.report.final_corrector_loss));
              row.push_back(std::to_string(res.report.epochs_ran));
              row.push_back("ok");
            } catch (const std::exception& e) {
              (void)e;
              for (int i = 0; i < 6; ++i) row.push_back("");
              row.push_back("failed");
              ++n_failed;
            }
            row.push_back(config_digest(cell));
            row.push_back(cell_digest(cell));
            csv.row(row);
          }
        }
      }
    }
    SummaryRow s = summary_start(m);
    s.put_metric(m, "n_cells", static_cast<double>(n_cells));
    s.put_metric(m, "n_failed", static_cast<double>(n_failed));
    s.write(out_dir);
  });
}

// ---------------------------------------------------------------------------
// Theory checks.
// ---------------------------------------------------------------------------

RunManifest run_check_theory(const FlatConfig& cfg, const std::string& out_dir) {
  return scaffolded("check-theory", cfg, out_dir, [&](const FlatConfig& rc, RunManifest& m) {
    Rng master(get_u64(rc, "seed", 0));
    const std::uint64_t tv_seed = master.split(31).next_u64();
    const std::uint64_t perturb_net_seed = master.split(33).next_u64();
    const std::uint64_t perturb_dir_seed = master.split(34).next_u64();

    const BoundSweep tv =
        run_tv_bound_sweep(get_u64(rc, "tv_instances", 1000), get_u64(rc, "tv_max_len", 64),
                           tv_seed);
    {
      CsvWriter csv((fs::path(out_dir) / "theory_tv.csv").string(),
                    {"instance_seed", "lhs", "rhs", "slack", "pass"});
      for (const BoundCheckRecord& r : tv.records) {
        csv.row({std::to_string(r.instance_seed), csv_double(r.lhs), csv_double(r.rhs),
                 csv_double(r.slack), r.pass ? "1" : "0"});
      }
    }

    const SynthConfig sc = synth_config_from(rc);
    const SynthTask task = make_isolated_task(sc);
    const BoundSweep risk =
        run_risk_gap_sweep(task.true_targets, task.stale_targets, task.probes, sc.beta);
    {
      CsvWriter csv((fs::path(out_dir) / "theory_risk.csv").string(),
                    {"instance_seed", "lhs", "rhs", "slack", "pass"});
      for (const BoundCheckRecord& r : risk.records) {
        csv.row({std::to_string(r.instance_seed), csv_double(r.lhs), csv_double(r.rhs),
                 csv_double(r.slack), r.pass ? "1" : "0"});
      }
    }

    const std::size_t dim = sc.dim;
    Rng net_rng(perturb_net_seed);
    const MlpNet g = MlpNet::init(
        square_spec(dim, get_u64(rc, "perturb_width", 32), get_u64(rc, "perturb_depth", 1)),
        InitMode::he_normal, net_rng);
    Rng data_rng(master.split(35).next_u64());
    const EmbeddingMatrix inputs =
        gen_unit_sphere(get_u64(rc, "perturb_inputs", 512), dim, data_rng);
    const EmbeddingMatrix probes =
        gen_unit_sphere(get_u64(rc, "perturb_probes", 128), dim, data_rng);
    const std::vector<double> norms = parse_double_list(get_string(rc, "perturb_norms", "0"));
    const PerturbationSweep pert = staleness_perturbation_sweep(
        g, inputs, probes, norms, get_u64(rc, "perturb_directions", 10), sc.beta,
        perturb_dir_seed);
    {
      CsvWriter csv((fs::path(out_dir) / "theory_perturbation.csv").string(),
                    {"direction", "u_norm", "mean_l1_gap", "mean_tv", "ratio"});
      for (const PerturbationCell& c : pert.cells) {
        csv.row({std::to_string(c.direction), csv_double(c.u_norm), csv_double(c.mean_l1_gap),
                 csv_double(c.mean_tv), csv_double(c.ratio)});
      }
    }

    SummaryRow s = summary_start(m);
    s.put_metric(m, "tv_instances", static_cast<double>(tv.records.size()));
    s.put_metric(m, "tv_pass", static_cast<double>(tv.n_pass));
    s.put_metric(m, "tv_min_slack", tv.min_slack);
    s.put_metric(m, "risk_instances", static_cast<double>(risk.records.size()));
    s.put_metric(m, "risk_pass", static_cast<double>(risk.n_pass));
    s.put_metric(m, "risk_min_slack", risk.min_slack);
    s.put_metric(m, "l_hat", pert.l_hat);
    s.write(out_dir);
    std::cout << "tv " << tv.n_pass << "/" << tv.records.size() << " risk " << risk.n_pass << "/"
              << risk.records.size() << " l_hat " << format_double(pert.l_hat) << "\n";
  });
}

// ---------------------------------------------------------------------------
// Small-to-large warp.
// ---------------------------------------------------------------------------

namespace {

double neighbor_precision(const EmbeddingMatrix& truth_table, const EmbeddingMatrix& test_table,
                          const EmbeddingMatrix& queries, std::size_t k) {
  if (queries.rows == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < queries.rows; ++i) {
    std::vector<std::size_t> a = top_k(matvec_scores(truth_table, queries.row_span(i)), k);
    std::vector<std::size_t> b = top_k(matvec_scores(test_table, queries.row_span(i)), k);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> inter;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    acc += static_cast<double>(inter.size()) / static_cast<double>(a.size());
  }
  return acc / static_cast<double>(queries.rows);
}

}  // namespace

WarpResult small_approximates_large(const FlatConfig& cfg) {
  const FlatConfig rc = resolve_config("warp", cfg);
  SynthConfig cloud;
  cloud.n_targets = get_u64(rc, "n_targets", cloud.n_targets);
  cloud.dim = get_u64(rc, "dim", cloud.dim);
  cloud.n_mixture_components = get_u64(rc, "components", cloud.n_mixture_components);
  cloud.mean_scale = get_double(rc, "mean_scale", cloud.mean_scale);
  cloud.component_scale = get_double(rc, "component_scale", cloud.component_scale);
  const double beta = get_double(rc, "beta", 1.0);

  Rng master(get_u64(rc, "seed", 0));
  Rng rng_targets = master.split(41);
  Rng rng_small = master.split(42);
  Rng rng_large = master.split(43);
  Rng rng_queries = master.split(44);
  Rng rng_eval = master.split(45);

  const EmbeddingMatrix raw = gen_targets(cloud, rng_targets);
  const MlpNet small = MlpNet::init(
      square_spec(cloud.dim, get_u64(rc, "warp_small_width", 16), get_u64(rc, "warp_small_depth", 1)),
      InitMode::he_normal, rng_small);
  const MlpNet large = MlpNet::init(
      square_spec(cloud.dim, get_u64(rc, "warp_large_width", 64), get_u64(rc, "warp_large_depth", 2)),
      InitMode::he_normal, rng_large);
  const std::size_t n_train_q = get_u64(rc, "warp_queries", 64);
  const std::size_t n_eval_q = get_u64(rc, "warp_eval_queries", 256);

  SynthTask wtask;
  wtask.beta = beta;
  wtask.stale_targets = small.forward(raw);
  wtask.true_targets = large.forward(raw);
  wtask.queries = gen_unit_sphere(n_train_q, cloud.dim, rng_queries);
  wtask.probes = gen_unit_sphere(n_eval_q, cloud.dim, rng_eval);

  TrainConfig tc;
  tc.beta = beta;
  tc.seed = master.split(46).next_u64();
  tc.corrector_lr = get_double(rc, "corrector_lr", tc.corrector_lr);
  tc.corrector_loss = corrector_loss_from(get_string(rc, "corrector_loss", "ce"));
  tc.max_epochs = get_u64(rc, "max_epochs", tc.max_epochs);
  tc.patience = get_u64(rc, "patience", tc.patience);
  tc.isolated_queries = n_train_q;
  tc.isolated_k_hard = 0;
  tc.isolated_k_uniform = get_u64(rc, "warp_samples", 32);
  tc.eval_every = tc.max_epochs + 1;  // final probe metrics only
  const MlpSpec corr_spec = square_spec(cloud.dim, get_u64(rc, "corrector_width", 32),
                                        get_u64(rc, "corrector_depth", 1));
  IsolatedResult res = train_corrector_isolated(wtask, corr_spec, 1.0, tc);

  const EmbeddingMatrix corrected = res.corrector.forward(wtask.stale_targets);
  WarpResult out;
  out.k = get_u64(rc, "warp_k", 10);
  out.precision_corrected = neighbor_precision(wtask.true_targets, corrected, wtask.probes, out.k);
  out.precision_uncorrected =
      neighbor_precision(wtask.true_targets, wtask.stale_targets, wtask.probes, out.k);
  out.final_corrector_loss = res.report.final_corrector_loss;
  return out;
}

// ---------------------------------------------------------------------------
// Eval and report.
// ---------------------------------------------------------------------------

RunManifest run_eval(const std::string& task_dir, const std::string& f_path,
                     const std::string& g_path, const std::vector<std::size_t>& ks,
                     const std::string& out_dir) {
  const SynthTask task = load_task(task_dir);
  const MlpNet f = load_net(f_path);
  const MlpNet g = load_net(g_path);
  const std::map<std::size_t, double> recall = evaluate_recall(f, g, task, ks);

  RunManifest m;
  m.command = "eval";
  m.artifact_version = kVersion;
  m.config["command"] = "eval";
  m.config["task"] = task_dir;
  m.config["f"] = f_path;
  m.config["g"] = g_path;
  m.config_digest = config_digest(m.config);
  m.cell_digest = cell_digest(m.config);
  m.started_utc = utc_timestamp();
  for (const auto& [k, v] : recall) {
    m.metrics["recall_" + std::to_string(k)] = v;
    std::cout << "recall@" << k << " = " << format_double(v) << "\n";
  }
  m.status = "ok";
  m.finished_utc = utc_timestamp();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    CsvWriter csv((fs::path(out_dir) / "eval.csv").string(), {"k", "recall"});
    for (const auto& [k, v] : recall) csv.row({std::to_string(k), csv_double(v)});
    write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  }
  return m;
}

namespace {

struct ReportGroup {
  std::string key;         // cell digest or sweep axis key
  std::string command;
  std::string label;
  std::size_t n_runs = 0;
  std::size_t n_failed = 0;
  std::map<std::string, std::vector<double>> values;
  FlatConfig config;  // sans seed, for collision checks (manifest groups)
  bool has_config = false;
};

bool numeric_cell(const std::string& s, double& out) {
  if (s.empty()) return false;
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

void ingest_sweep_csv(const std::string& path, const std::vector<std::string>& axis_cols,
                      const std::string& command, std::map<std::string, ReportGroup>& groups) {
  const CsvTable table = read_csv(path);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < table.header.size(); ++i) col[table.header[i]] = i;
  for (const std::string& a : axis_cols) {
    if (!col.count(a)) throw std::runtime_error(path + ": missing column " + a);
  }
  if (!col.count("cell_digest") || !col.count("status")) {
    throw std::runtime_error(path + ": missing cell_digest/status columns");
  }
  for (const auto& row : table.rows) {
    const std::string key = row[col.at("cell_digest")];
    ReportGroup& g = groups[key];
    if (g.key.empty()) {
      g.key = key;
      g.command = command;
      std::string label;
      for (const std::string& a : axis_cols) {
        if (!label.empty()) label += ",";
        label += a + "=" + row[col.at(a)];
      }
      g.label = label;
    }
    ++g.n_runs;
    if (row[col.at("status")] != "ok") {
      ++g.n_failed;
      continue;
    }
    for (const auto& [name, idx] : col) {
      if (name == "seed" || name == "status" || name == "config_digest" ||
          name == "cell_digest") {
        continue;
      }
      if (std::find(axis_cols.begin(), axis_cols.end(), name) != axis_cols.end()) continue;
      double v = 0.0;
      if (numeric_cell(row[idx], v)) g.values[name].push_back(v);
    }
  }
}

FlatConfig config_sans_seed(const FlatConfig& cfg) {
  FlatConfig out = cfg;
  out.erase("seed");
  out.erase("out");
  return out;
}

}  // namespace

int run_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw std::invalid_argument("report: no run directories given");
  std::map<std::string, ReportGroup> groups;
  for (const std::string& dir : run_dirs) {
    const RunManifest m = read_manifest((fs::path(dir) / "manifest.json").string());
    if (m.command == "sweep-capacity") {
      ingest_sweep_csv((fs::path(dir) / "capacity.csv").string(),
                       {"width", "depth", "drift_scale"}, m.command, groups);
      continue;
    }
    if (m.command == "sweep-fraction") {
      ingest_sweep_csv((fs::path(dir) / "fraction.csv").string(),
                       {"panel", "drift_scale", "width", "fraction"}, m.command, groups);
      continue;
    }
    ReportGroup& g = groups[m.cell_digest];
    if (g.key.empty()) {
      g.key = m.cell_digest;
      g.command = m.command;
      g.label = m.command + ":" + m.cell_digest.substr(0, 8);
      g.config = config_sans_seed(m.config);
      g.has_config = true;
    } else if (g.has_config && config_sans_seed(m.config) != g.config) {
      throw std::runtime_error("report: digest collision with differing configs for cell " +
                               m.cell_digest);
    }
    ++g.n_runs;
    if (m.status != "ok") {
      ++g.n_failed;
      continue;
    }
    for (const auto& [k, v] : m.metrics) {
      if (!std::isnan(v)) g.values[k].push_back(v);
    }
  }

  std::set<std::string> metric_names;
  for (const auto& [key, g] : groups) {
    for (const auto& [name, vals] : g.values) metric_names.insert(name);
  }
  std::vector<std::string> header = {"cell", "command", "label", "n_runs", "n_failed"};
  for (const std::string& name : metric_names) {
    header.push_back(name + "_median");
    header.push_back(name + "_q25");
    header.push_back(name + "_q75");
  }

  fs::create_directories(out_dir);
  CsvWriter csv((fs::path(out_dir) / "aggregate.csv").string(), header);
  json plot;
  plot["cells"] = json::array();
  for (const auto& [key, g] : groups) {
    std::vector<std::string> row = {g.key, g.command, g.label, std::to_string(g.n_runs),
                                    std::to_string(g.n_failed)};
    json jc;
    jc["cell"] = g.key;
    jc["command"] = g.command;
    jc["label"] = g.label;
    jc["n_runs"] = g.n_runs;
    jc["n_failed"] = g.n_failed;
    if (g.has_config) {
      jc["config"] = json::object();
      for (const auto& [k, v] : g.config) jc["config"][k] = v;
    }
    jc["metrics"] = json::object();
    for (const std::string& name : metric_names) {
      const auto it = g.values.find(name);
      if (it == g.values.end() || it->second.empty()) {
        row.push_back("");
        row.push_back("");
        row.push_back("");
        continue;
      }
      const double med = quantile(it->second, 0.5);
      const double q25 = quantile(it->second, 0.25);
      const double q75 = quantile(it->second, 0.75);
      row.push_back(csv_double(med));
      row.push_back(csv_double(q25));
      row.push_back(csv_double(q75));
      jc["metrics"][name] = {{"median", med}, {"q25", q25}, {"q75", q75},
                             {"values", it->second}};
    }
    csv.row(row);
    plot["cells"].push_back(jc);
  }
  std::ofstream pj((fs::path(out_dir) / "plot.json").string());
  if (!pj) throw std::runtime_error("cannot write plot.json");
  pj << plot.dump(2) << "\n";
  std::cout << "aggregated " << groups.size() << " cells from " << run_dirs.size()
            << " run dirs\n";
  return 0;
}

// ---------------------------------------------------------------------------
// CLI.
// ---------------------------------------------------------------------------

namespace {

struct FlagBinding {
  std::map<std::string, std::string> values;
  std::vector<std::pair<CLI::Option*, std::string>> bound;

  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& desc) {
    CLI::Option* opt = cmd->add_option(flag, values[key], desc);
    bound.emplace_back(opt, key);
  }
};

struct CommandState {
  CLI::App* cmd = nullptr;
  std::string config_path;
  std::string out_dir;
  std::string seed_str;
  std::vector<std::string> sets;
  FlagBinding flags;
  CLI::Option* seed_opt = nullptr;

  FlatConfig collect() const {
    FlatConfig user;
    if (!config_path.empty()) user = load_config_file(config_path);
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("--set expects key=value, got " + kv);
      }
      user[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    FlatConfig merged = user;
    for (const auto& [opt, key] : flags.bound) {
      if (opt->count() > 0) merged[key] = flags.values.at(key);
    }
    if (seed_opt->count() > 0) merged["seed"] = seed_str;
    return merged;
  }
};

CommandState* make_command(CLI::App& app, std::vector<std::unique_ptr<CommandState>>& states,
                           const std::string& name, const std::string& desc) {
  auto state = std::make_unique<CommandState>();
  state->cmd = app.add_subcommand(name, desc);
  state->cmd->add_option("--config", state->config_path, "config file (flat key = value)");
  state->cmd->add_option("--out", state->out_dir, "output directory")
      ->default_val("runs/" + name);
  state->seed_opt = state->cmd->add_option("--seed", state->seed_str, "master random seed");
  state->cmd->add_option("--set", state->sets, "override any config key (key=value)");
  states.push_back(std::move(state));
  return states.back().get();
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"target corrector network experiments"};
  app.require_subcommand(0, 1);

  std::vector<std::unique_ptr<CommandState>> states;

  CommandState* synth = make_command(app, states, "synth-gen", "generate a synthetic task");
  synth->flags.add(synth->cmd, "--kind", "kind", "isolated | retrieval | rlm | circle");
  synth->flags.add(synth->cmd, "--n-targets", "n_targets", "target count");
  synth->flags.add(synth->cmd, "--dim", "dim", "embedding dimension");
  synth->flags.add(synth->cmd, "--drift-scale", "drift_scale", "drift init variance scale");
  synth->flags.add(synth->cmd, "--beta", "beta", "softmax inverse temperature");

  CommandState* corr = make_command(app, states, "train-corrector", "isolated corrector training");
  corr->flags.add(corr->cmd, "--drift-scale", "drift_scale", "drift init variance scale");
  corr->flags.add(corr->cmd, "--corrector-width", "corrector_width", "hidden width");
  corr->flags.add(corr->cmd, "--corrector-depth", "corrector_depth", "hidden layers");
  corr->flags.add(corr->cmd, "--corrector-lr", "corrector_lr", "corrector learning rate");
  corr->flags.add(corr->cmd, "--corrector-loss", "corrector_loss", "ce | mse");
  corr->flags.add(corr->cmd, "--sample-fraction", "sample_fraction", "target fraction (0,1]");
  corr->flags.add(corr->cmd, "--max-epochs", "max_epochs", "epoch cap");
  corr->flags.add(corr->cmd, "--patience", "patience", "early stop patience");

  CommandState* joint = make_command(app, states, "train-joint", "joint dual-encoder training");
  joint->flags.add(joint->cmd, "--arm", "arm", "corrector | stale | exhaustive");
  joint->flags.add(joint->cmd, "--steps", "steps", "training steps");
  joint->flags.add(joint->cmd, "--batch-size", "batch_size", "minibatch size");
  joint->flags.add(joint->cmd, "--k-hard", "k_hard", "hard negatives per query");
  joint->flags.add(joint->cmd, "--k-uniform", "k_uniform", "uniform negatives per query");
  joint->flags.add(joint->cmd, "--refresh-every", "refresh_every", "exhaustive refresh period");
  joint->flags.add(joint->cmd, "--encoder-lr", "encoder_lr", "encoder learning rate");
  joint->flags.add(joint->cmd, "--eval-every", "eval_every", "eval cadence");
  joint->flags.add(joint->cmd, "--metric-cadence", "metric_cadence", "step metric cadence");

  CommandState* rlm = make_command(app, states, "train-rlm", "toy RLM training");
  rlm->flags.add(rlm->cmd, "--arm", "arm", "corrector | frozen | exhaustive");
  rlm->flags.add(rlm->cmd, "--steps", "steps", "training steps");
  rlm->flags.add(rlm->cmd, "--rlm-k", "rlm_k", "retrieved documents per query");
  rlm->flags.add(rlm->cmd, "--rlm-batch", "rlm_batch", "minibatch size");
  rlm->flags.add(rlm->cmd, "--refresh-every", "refresh_every", "exhaustive refresh period");

  CommandState* swc = make_command(app, states, "sweep-capacity", "corrector capacity sweep");
  swc->flags.add(swc->cmd, "--widths", "widths", "comma list of hidden widths");
  swc->flags.add(swc->cmd, "--depths", "depths", "comma list of hidden depths");
  swc->flags.add(swc->cmd, "--drift-scales", "drift_scales", "comma list of drift scales");
  swc->flags.add(swc->cmd, "--seeds-per-cell", "seeds_per_cell", "replicates per cell");

  CommandState* swf = make_command(app, states, "sweep-fraction", "training fraction sweep");
  swf->flags.add(swf->cmd, "--fractions", "fractions", "comma list of sample fractions");
  swf->flags.add(swf->cmd, "--fraction-widths", "fraction_widths", "comma list of widths");
  swf->flags.add(swf->cmd, "--drift-low", "drift_low", "low-staleness panel drift scale");
  swf->flags.add(swf->cmd, "--drift-high", "drift_high", "high-staleness panel drift scale");
  swf->flags.add(swf->cmd, "--seeds-per-cell", "seeds_per_cell", "replicates per cell");

  CommandState* thy = make_command(app, states, "check-theory", "numeric bound checks");
  thy->flags.add(thy->cmd, "--tv-instances", "tv_instances", "random TV bound instances");
  thy->flags.add(thy->cmd, "--perturb-directions", "perturb_directions", "perturbation dirs");
  thy->flags.add(thy->cmd, "--perturb-norms", "perturb_norms", "comma list of norms");

  // eval and report take paths, not a flat config
  CLI::App* ev = app.add_subcommand("eval", "recall of saved encoders on a saved task");
  std::string ev_task, ev_f, ev_g, ev_ks = "1,5,10,20,100", ev_out;
  ev->add_option("--task", ev_task, "task directory")->required();
  ev->add_option("--f", ev_f, "query encoder checkpoint")->required();
  ev->add_option("--g", ev_g, "target encoder checkpoint")->required();
  ev->add_option("--ks", ev_ks, "comma list of cutoffs");
  ev->add_option("--out", ev_out, "optional output directory");

  CLI::App* rep = app.add_subcommand("report", "aggregate run directories");
  std::vector<std::string> rep_dirs;
  std::string rep_out = "runs/report";
  rep->add_option("dirs", rep_dirs, "run directories")->required();
  rep->add_option("--out", rep_out, "output directory");

  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("corrnet");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const std::string& s : full) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (const auto& state : states) {
      if (!state->cmd->parsed()) continue;
      const FlatConfig user = state->collect();
      const std::string name = state->cmd->get_name();
      RunManifest m;
      if (name == "synth-gen") m = run_synth_gen(user, state->out_dir);
      else if (name == "train-corrector") m = run_train_corrector(user, state->out_dir);
      else if (name == "train-joint") m = run_train_joint(user, state->out_dir);
      else if (name == "train-rlm") m = run_train_rlm(user, state->out_dir);
      else if (name == "sweep-capacity") m = run_sweep_capacity(user, state->out_dir);
      else if (name == "sweep-fraction") m = run_sweep_fraction(user, state->out_dir);
      else if (name == "check-theory") m = run_check_theory(user, state->out_dir);
      std::cout << "run " << m.config_digest << " -> " << state->out_dir << " (" << m.status
                << ")\n";
      return 0;
    }
    if (ev->parsed()) {
      std::vector<std::size_t> ks;
      for (const std::uint64_t k : parse_u64_list(ev_ks)) ks.push_back(k);
      run_eval(ev_task, ev_f, ev_g, ks, ev_out);
      return 0;
    }
    if (rep->parsed()) {
      return run_report(rep_dirs, rep_out);
    }
    std::cout << app.help() << "\n";
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace corrnet
