#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "corrnet/checkpoint.hpp"
#include "corrnet/config.hpp"
#include "corrnet/harness.hpp"
#include "corrnet/net.hpp"
#include "corrnet/report.hpp"
#include "corrnet/rng.hpp"
#include "corrnet/synth.hpp"

using namespace corrnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

// small enough that every training-backed case stays in the low seconds
FlatConfig tiny_corrector_config(const std::string& seed) {
  FlatConfig c;
  c["seed"] = seed;
  c["n_targets"] = "64";
  c["dim"] = "4";
  c["components"] = "4";
  c["probe_count"] = "32";
  c["n_queries"] = "32";
  c["drift_scale"] = "0.3";
  c["corrector_width"] = "8";
  c["corrector_depth"] = "1";
  c["isolated_queries"] = "32";
  c["isolated_k_hard"] = "4";
  c["isolated_k_uniform"] = "4";
  c["max_epochs"] = "40";
  c["patience"] = "10";
  c["eval_every"] = "10";
  return c;
}

std::size_t column_index(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (t.header[i] == name) return i;
  }
  throw std::runtime_error("missing column " + name);
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("resolve overlays user keys onto command defaults") {
  const FlatConfig defaults = default_flat_config("train-corrector");
  CHECK(defaults.at("command") == "train-corrector");
  CHECK(defaults.count("corrector_width") == 1);
  CHECK_FALSE(defaults.count("seed"));

  CHECK_THROWS_AS((void)resolve_config("train-corrector", {}), std::invalid_argument);

  FlatConfig user{{"seed", "7"}, {"corrector_width", "16"}};
  const FlatConfig resolved = resolve_config("train-corrector", user);
  CHECK(resolved.at("seed") == "7");
  CHECK(resolved.at("corrector_width") == "16");
  CHECK(resolved.at("corrector_depth") == defaults.at("corrector_depth"));

  user["no_such_key"] = "1";
  CHECK_THROWS_AS((void)resolve_config("train-corrector", user), std::invalid_argument);

  FlatConfig wrong{{"seed", "7"}, {"command", "train-joint"}};
  CHECK_THROWS_AS((void)resolve_config("train-corrector", wrong), std::invalid_argument);
  FlatConfig named{{"seed", "7"}, {"command", "train-corrector"}};
  CHECK(resolve_config("train-corrector", named).at("command") == "train-corrector");
}

TEST_CASE("cell digests group replicates while config digests separate them") {
  const FlatConfig a = resolve_config("train-corrector", {{"seed", "1"}});
  const FlatConfig b = resolve_config("train-corrector", {{"seed", "2"}});
  CHECK(config_digest(a) != config_digest(b));
  CHECK(cell_digest(a) == cell_digest(b));

  const FlatConfig c = resolve_config("train-corrector", {{"seed", "1"}, {"corrector_width", "8"}});
  CHECK(cell_digest(c) != cell_digest(a));
}

TEST_CASE("cell seeds are deterministic and collision free") {
  std::set<std::uint64_t> seen;
  for (std::size_t i = 0; i < 100; ++i) {
    const std::uint64_t s = cell_seed(12345, i);
    CHECK(s == cell_seed(12345, i));
    seen.insert(s);
  }
  CHECK(seen.size() == 100);
  CHECK(cell_seed(12345, 0) != cell_seed(12346, 0));
}

TEST_CASE("quantile interpolates linearly on sorted values") {
  CHECK(std::isnan(quantile({}, 0.5)));
  CHECK_THROWS_AS((void)quantile({1.0}, -0.1), std::invalid_argument);
  CHECK_THROWS_AS((void)quantile({1.0}, 1.1), std::invalid_argument);
  CHECK(quantile({3.0}, 0.0) == 3.0);
  CHECK(quantile({3.0}, 1.0) == 3.0);
  const std::vector<double> v = {4.0, 1.0, 3.0, 2.0};
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 4.0);
  CHECK(quantile(v, 0.5) == 2.5);
  CHECK(quantile(v, 0.25) == 1.75);
}

TEST_CASE("comma lists parse strictly") {
  const std::vector<std::uint64_t> u = parse_u64_list("8,16,");
  CHECK(u == std::vector<std::uint64_t>{8, 16});
  const std::vector<double> d = parse_double_list("0.01,0.1,1.0");
  REQUIRE(d.size() == 3);
  CHECK(d[0] == 0.01);
  CHECK(d[2] == 1.0);
  CHECK_THROWS((void)parse_u64_list(""));
  CHECK_THROWS((void)parse_u64_list("a,b"));
}

TEST_CASE("typed experiment configs read back from the flat form") {
  FlatConfig user = tiny_corrector_config("9");
  user["beta"] = "5";
  user["corrector_lr"] = "0.5";
  const FlatConfig rc = resolve_config("train-corrector", user);

  const SynthConfig sc = synth_config_from(rc);
  CHECK(sc.n_targets == 64);
  CHECK(sc.dim == 4);
  CHECK(sc.n_mixture_components == 4);
  CHECK(sc.beta == 5.0);
  CHECK(sc.seed == 9);

  const TrainConfig tc = train_config_from(rc);
  CHECK(tc.corrector_lr == 0.5);
  CHECK(tc.max_epochs == 40);
  CHECK(tc.patience == 10);
  CHECK(tc.isolated_queries == 32);
  CHECK(tc.seed == 9);

  const MlpSpec corr = corrector_spec_from(rc, sc.dim);
  CHECK(corr.in_dim == 4);
  CHECK(corr.out_dim == 4);
  CHECK(corr.hidden == std::vector<std::size_t>{8});
  CHECK(corr.residual);

  const MlpSpec reader = reader_spec_from(rc, 8, 16);
  CHECK(reader.in_dim == 8);
  CHECK(reader.out_dim == 16);
  CHECK_FALSE(reader.residual);
}

TEST_CASE("a run directory carries manifest, resolved config and summary") {
  TempDir dir("corrnet_h_synth");
  FlatConfig user{{"seed", "3"},       {"n_targets", "32"},   {"dim", "4"},
                  {"components", "4"}, {"probe_count", "16"}, {"n_queries", "16"}};
  const RunManifest m = run_synth_gen(user, dir.sub("run"));
  CHECK(m.status == "ok");
  CHECK(m.command == "synth-gen");
  CHECK(m.metrics.at("n_targets") == 32.0);
  CHECK(m.metrics.count("staleness_kl") == 1);

  const RunManifest back = read_manifest(dir.sub("run") + "/manifest.json");
  CHECK(back.config_digest == m.config_digest);
  CHECK(back.metrics == m.metrics);

  const FlatConfig resolved = load_config_file(dir.sub("run") + "/config.resolved");
  CHECK(resolved == resolve_config("synth-gen", resolved));
  CHECK(config_digest(resolved) == m.config_digest);

  const SynthTask task = load_task(dir.sub("run") + "/task");
  CHECK(task.stale_targets.rows == 32);

  CHECK(fs::exists(dir.sub("run") + "/summary.csv"));
}

TEST_CASE("a failing run leaves a failed manifest behind") {
  TempDir dir("corrnet_h_fail");
  FlatConfig user{{"seed", "3"}, {"kind", "bogus"}};
  CHECK_THROWS_AS((void)run_synth_gen(user, dir.sub("run")), std::invalid_argument);
  const RunManifest m = read_manifest(dir.sub("run") + "/manifest.json");
  CHECK(m.status == "failed");
  CHECK(m.error.find("kind") != std::string::npos);
}

TEST_CASE("re-executing a run from its resolved config reproduces it bit for bit") {
  TempDir dir("corrnet_h_repro");
  const RunManifest first = run_train_corrector(tiny_corrector_config("77"), dir.sub("a"));
  CHECK(first.status == "ok");

  const FlatConfig resolved = load_config_file(dir.sub("a") + "/config.resolved");
  const RunManifest second = run_train_corrector(resolved, dir.sub("b"));

  CHECK(first.metrics == second.metrics);
  CHECK(first.config_digest == second.config_digest);

  std::ifstream sa(dir.sub("a") + "/steps.csv", std::ios::binary);
  std::ifstream sb(dir.sub("b") + "/steps.csv", std::ios::binary);
  const std::string ca((std::istreambuf_iterator<char>(sa)), std::istreambuf_iterator<char>());
  const std::string cb((std::istreambuf_iterator<char>(sb)), std::istreambuf_iterator<char>());
  CHECK(ca == cb);
  CHECK_FALSE(ca.empty());
}

TEST_CASE("capacity sweeps emit one row per cell and aggregate by cell digest") {
  TempDir dir("corrnet_h_sweep");
  FlatConfig user = tiny_corrector_config("55");
  user.erase("corrector_width");
  user.erase("corrector_depth");
  user.erase("drift_scale");
  user["widths"] = "8";
  user["depths"] = "0,1";
  user["drift_scales"] = "0.3";
  user["seeds_per_cell"] = "2";
  user["max_epochs"] = "30";
  const RunManifest m = run_sweep_capacity(user, dir.sub("sweep"));
  CHECK(m.status == "ok");
  CHECK(m.metrics.at("n_cells") == 4.0);
  CHECK(m.metrics.at("n_failed") == 0.0);

  const CsvTable table = read_csv(dir.sub("sweep") + "/capacity.csv");
  CHECK(table.rows.size() == 4);
  const std::size_t status_col = column_index(table, "status");
  for (const auto& row : table.rows) CHECK(row[status_col] == "ok");

  CHECK(run_report({dir.sub("sweep")}, dir.sub("rep")) == 0);
  const CsvTable agg = read_csv(dir.sub("rep") + "/aggregate.csv");
  CHECK(agg.rows.size() == 2);
  const std::size_t runs_col = column_index(agg, "n_runs");
  for (const auto& row : agg.rows) CHECK(row[runs_col] == "2");
  CHECK(fs::exists(dir.sub("rep") + "/plot.json"));
}

TEST_CASE("report medians two replicate runs") {
  TempDir dir("corrnet_h_report");
  const RunManifest a = run_train_corrector(tiny_corrector_config("101"), dir.sub("a"));
  const RunManifest b = run_train_corrector(tiny_corrector_config("102"), dir.sub("b"));
  REQUIRE(a.cell_digest == b.cell_digest);

  CHECK(run_report({dir.sub("a"), dir.sub("b")}, dir.sub("rep")) == 0);
  const CsvTable agg = read_csv(dir.sub("rep") + "/aggregate.csv");
  REQUIRE(agg.rows.size() == 1);
  CHECK(agg.rows[0][column_index(agg, "n_runs")] == "2");
  const double med = std::stod(agg.rows[0][column_index(agg, "final_kl_ph_median")]);
  const double expect =
      0.5 * a.metrics.at("final_kl_ph") + 0.5 * b.metrics.at("final_kl_ph");
  CHECK(med == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("report refuses colliding cell digests with different configs") {
  TempDir dir("corrnet_h_collide");
  RunManifest m1;
  m1.command = "train-corrector";
  m1.config = {{"command", "train-corrector"}, {"seed", "1"}, {"n_targets", "64"}};
  m1.config_digest = "1111111111111111";
  m1.cell_digest = "00000000deadbeef";
  m1.status = "ok";
  m1.metrics["x"] = 1.0;
  RunManifest m2 = m1;
  m2.config = {{"command", "train-corrector"}, {"seed", "2"}, {"n_targets", "128"}};
  m2.config_digest = "2222222222222222";
  fs::create_directories(dir.sub("a"));
  fs::create_directories(dir.sub("b"));
  write_manifest(m1, dir.sub("a") + "/manifest.json");
  write_manifest(m2, dir.sub("b") + "/manifest.json");

  bool threw = false;
  try {
    (void)run_report({dir.sub("a"), dir.sub("b")}, dir.sub("rep"));
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("digest collision") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("warping a small table toward a large one lifts neighbor overlap") {
  FlatConfig user{{"seed", "3"},
                  {"n_targets", "128"},
                  {"dim", "4"},
                  {"components", "8"},
                  {"warp_small_width", "8"},
                  {"warp_large_width", "16"},
                  {"warp_large_depth", "2"},
                  {"corrector_width", "16"},
                  {"corrector_depth", "1"},
                  {"warp_queries", "64"},
                  {"warp_eval_queries", "64"},
                  {"max_epochs", "300"},
                  {"patience", "60"}};
  const WarpResult res = small_approximates_large(user);
  CHECK(res.k == 10);
  CHECK(res.precision_uncorrected >= 0.0);
  CHECK(res.precision_corrected <= 1.0);
  CHECK(res.precision_corrected > res.precision_uncorrected);
  CHECK(std::isfinite(res.final_corrector_loss));
}

TEST_CASE("saved encoders evaluate against a saved task") {
  TempDir dir("corrnet_h_eval");
  FlatConfig user{{"seed", "4"},        {"kind", "retrieval"},  {"n_targets", "64"},
                  {"dim", "4"},         {"components", "4"},    {"probe_count", "16"},
                  {"n_queries", "64"},  {"label_noise", "0.02"}};
  (void)run_synth_gen(user, dir.sub("gen"));

  MlpSpec spec;
  spec.in_dim = 4;
  spec.out_dim = 4;
  spec.hidden = {8};
  spec.residual = true;
  Rng rf(1), rg(2);
  save_net(MlpNet::init(spec, InitMode::he_normal, rf), dir.sub("f.net"));
  save_net(MlpNet::init(spec, InitMode::he_normal, rg), dir.sub("g.net"));

  const RunManifest m =
      run_eval(dir.sub("gen") + "/task", dir.sub("f.net"), dir.sub("g.net"), {1, 5},
               dir.sub("ev"));
  CHECK(m.status == "ok");
  REQUIRE(m.metrics.count("recall_1") == 1);
  REQUIRE(m.metrics.count("recall_5") == 1);
  CHECK(m.metrics.at("recall_1") >= 0.0);
  CHECK(m.metrics.at("recall_5") <= 1.0);
  CHECK(m.metrics.at("recall_1") <= m.metrics.at("recall_5"));

  const CsvTable table = read_csv(dir.sub("ev") + "/eval.csv");
  CHECK(table.rows.size() == 2);
}

TEST_CASE("the cli wires flags and set overrides into runs") {
  TempDir dir("corrnet_h_cli");
  CHECK(cli_dispatch({}) == 0);

  const int rc = cli_dispatch({"synth-gen", "--seed", "5", "--out", dir.sub("run"), "--set",
                               "n_targets=32", "--set", "dim=4", "--set", "components=4", "--set",
                               "probe_count=16", "--set", "n_queries=16"});
  CHECK(rc == 0);
  const RunManifest m = read_manifest(dir.sub("run") + "/manifest.json");
  CHECK(m.status == "ok");
  CHECK(m.seed == 5);
  CHECK(m.metrics.at("n_targets") == 32.0);

  CHECK(cli_dispatch({"synth-gen", "--seed", "5", "--out", dir.sub("bad"), "--set",
                      "bogus_key=1"}) != 0);
  CHECK(cli_dispatch({"--definitely-not-a-flag"}) == 1);
}

}  // TEST_SUITE
