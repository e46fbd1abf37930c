#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "corrnet/buffer.hpp"
#include "corrnet/kernels.hpp"
#include "corrnet/matrix.hpp"
#include "corrnet/net.hpp"
#include "corrnet/reference.hpp"
#include "corrnet/rng.hpp"
#include "corrnet/softmax_approx.hpp"

using namespace corrnet;

namespace {

EmbeddingMatrix random_matrix(std::size_t rows, std::size_t dim, Rng& rng, double scale = 1.0) {
  EmbeddingMatrix m(rows, dim);
  for (double& v : m.data) v = scale * rng.next_gaussian();
  return m;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.next_gaussian();
  return v;
}

std::vector<std::size_t> all_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

// Scalar recomputation of -log P(label | x) over a subset's fresh rows.
double ce_oracle(std::span<const double> f_x, const EmbeddingMatrix& g_rows, double beta,
                 std::size_t label_pos) {
  std::vector<double> logits(g_rows.rows, 0.0);
  for (std::size_t i = 0; i < g_rows.rows; ++i) {
    for (std::size_t d = 0; d < g_rows.dim; ++d) logits[i] += f_x[d] * g_rows.at(i, d);
  }
  const std::vector<double> p = refimpl::softmax(logits, beta);
  return -std::log(p[label_pos]);
}

// Scalar recomputation of KL(p_true || p_h) where p_h comes from the
// corrected rows at the shared subset.
double kl_oracle(const TruncatedDistribution& p_true, std::span<const double> f_x,
                 const EmbeddingMatrix& corrected_rows, double beta) {
  std::vector<double> logits(corrected_rows.rows, 0.0);
  for (std::size_t i = 0; i < corrected_rows.rows; ++i) {
    for (std::size_t d = 0; d < corrected_rows.dim; ++d) {
      logits[i] += f_x[d] * corrected_rows.at(i, d);
    }
  }
  const std::vector<double> ph = refimpl::softmax(logits, beta);
  double acc = 0.0;
  for (std::size_t i = 0; i < ph.size(); ++i) {
    if (p_true.probs[i] > 0.0) acc += p_true.probs[i] * (std::log(p_true.probs[i]) - std::log(ph[i]));
  }
  return acc;
}

}  // namespace

TEST_SUITE("softmax_approx") {

TEST_CASE("full distribution over a single target is the point mass") {
  EmbeddingMatrix table(1, 3);
  table.at(0, 0) = 0.4;
  table.at(0, 1) = -1.0;
  table.at(0, 2) = 2.0;
  Rng rng(1);
  const std::vector<double> x = random_vec(3, rng);
  const std::vector<double> p = full_distribution_table(table, x, 7.0);
  REQUIRE(p.size() == 1);
  CHECK(p[0] == 1.0);
}

TEST_CASE("orthogonal query gives the uniform distribution") {
  // targets live in the first two coordinates, the query in the third
  EmbeddingMatrix table(5, 3);
  Rng rng(2);
  for (std::size_t i = 0; i < 5; ++i) {
    table.at(i, 0) = rng.next_gaussian();
    table.at(i, 1) = rng.next_gaussian();
  }
  const std::vector<double> x = {0.0, 0.0, 3.7};
  const std::vector<double> p = full_distribution_table(table, x, 20.0);
  for (double v : p) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("full distribution normalizes and ranks like raw scores") {
  Rng rng(3);
  const EmbeddingMatrix table = random_matrix(4096, 8, rng);
  const std::vector<double> x = random_vec(8, rng);
  const std::vector<double> p = full_distribution_table(table, x, 20.0);
  REQUIRE(p.size() == 4096);
  const double sum = std::accumulate(p.begin(), p.end(), 0.0);
  CHECK(std::abs(sum - 1.0) <= 1e-12);
  const std::vector<double> scores = matvec_scores(table, x);
  const auto argmax_p = std::max_element(p.begin(), p.end()) - p.begin();
  const auto argmax_s = std::max_element(scores.begin(), scores.end()) - scores.begin();
  CHECK(argmax_p == argmax_s);
  CHECK_THROWS_AS((void)full_distribution_table(EmbeddingMatrix(0, 8), x, 1.0),
                  std::invalid_argument);
}

TEST_CASE("subset with k_hard = N returns every target") {
  Rng rng(4);
  const EmbeddingMatrix table = random_matrix(32, 4, rng);
  const std::vector<double> x = random_vec(4, rng);
  Rng srng(5);
  const std::vector<std::size_t> sub = select_subset_table(table, x, 1.0, 32, 0,
                                                           SubsetMode::topk, std::nullopt, srng);
  CHECK(sub == all_ids(32));
}

TEST_CASE("label joins the subset exactly once") {
  Rng rng(6);
  const EmbeddingMatrix table = random_matrix(16, 4, rng);
  const std::vector<double> x = random_vec(4, rng);
  const std::vector<double> scores = matvec_scores(table, x);
  const std::size_t best = std::max_element(scores.begin(), scores.end()) - scores.begin();

  // label already captured by the hard set: no duplicate
  Rng r1(7);
  std::vector<std::size_t> sub = select_subset_table(table, x, 1.0, 4, 0, SubsetMode::topk,
                                                     best, r1);
  CHECK(std::count(sub.begin(), sub.end(), best) == 1);
  CHECK(sub.size() == 4);

  // label outside the hard set: appended, still unique and sorted
  std::vector<std::size_t> order(16);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t worst = order.back();
  Rng r2(8);
  sub = select_subset_table(table, x, 1.0, 4, 0, SubsetMode::topk, worst, r2);
  CHECK(sub.size() == 5);
  CHECK(std::count(sub.begin(), sub.end(), worst) == 1);
  CHECK(std::is_sorted(sub.begin(), sub.end()));
}

TEST_CASE("hard portion of a top-k subset matches a sort oracle") {
  Rng rng(9);
  const EmbeddingMatrix table = random_matrix(64, 6, rng);
  const std::vector<double> x = random_vec(6, rng);
  Rng srng(10);
  const std::vector<std::size_t> sub = select_subset_table(table, x, 1.0, 8, 0,
                                                           SubsetMode::topk, std::nullopt, srng);
  const std::vector<double> scores = matvec_scores(table, x);
  std::vector<std::size_t> want = refimpl::top_k(scores, 8);
  std::sort(want.begin(), want.end());
  CHECK(sub == want);
}

TEST_CASE("subset request sizes are validated") {
  Rng rng(11);
  const EmbeddingMatrix table = random_matrix(8, 3, rng);
  const std::vector<double> x = random_vec(3, rng);
  Rng srng(12);
  CHECK_THROWS_AS((void)select_subset_table(table, x, 1.0, 6, 3, SubsetMode::topk,
                                            std::nullopt, srng),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)select_subset_table(table, x, 1.0, 2, 2, SubsetMode::topk,
                                            std::size_t{8}, srng),
                  std::invalid_argument);
}

TEST_CASE("gumbel subsets are valid and seed-deterministic") {
  Rng rng(13);
  const EmbeddingMatrix table = random_matrix(50, 5, rng);
  const std::vector<double> x = random_vec(5, rng);
  Rng a(14), b(14), c(15);
  const std::vector<std::size_t> sa =
      select_subset_table(table, x, 2.0, 6, 4, SubsetMode::gumbel, std::size_t{0}, a);
  const std::vector<std::size_t> sb =
      select_subset_table(table, x, 2.0, 6, 4, SubsetMode::gumbel, std::size_t{0}, b);
  const std::vector<std::size_t> sc =
      select_subset_table(table, x, 2.0, 6, 4, SubsetMode::gumbel, std::size_t{0}, c);
  CHECK(sa == sb);
  CHECK(sa != sc);
  CHECK(std::is_sorted(sa.begin(), sa.end()));
  CHECK(std::adjacent_find(sa.begin(), sa.end()) == sa.end());
  CHECK(std::binary_search(sa.begin(), sa.end(), std::size_t{0}));
  CHECK(sa.size() <= 11);
  for (std::size_t id : sa) CHECK(id < 50);
}

TEST_CASE("truncation over the full support reproduces the full softmax") {
  Rng rng(16);
  const std::size_t n = 40, dim = 6;
  const EmbeddingMatrix raw = random_matrix(n, dim, rng);
  Rng net_rng(17);
  const MlpNet g = MlpNet::init({dim, {2 * dim}, dim, true}, InitMode::he_normal, net_rng);
  const MlpNet h = MlpNet::init({dim, {dim}, dim, true}, InitMode::he_normal, net_rng);
  const EmbeddingMatrix fresh = g.forward(raw);
  TargetBuffer buf = buffer_from_matrix(random_matrix(n, dim, rng, 0.8));

  const std::vector<Scorer> scorers = {
      Scorer::true_net(g, raw),
      Scorer::true_table(fresh),
      Scorer::stale(buf),
      Scorer::corrected_scorer(h, buf),
  };
  const std::vector<double> x = random_vec(dim, rng);
  const std::vector<std::size_t> ids = all_ids(n);
  for (const Scorer& sc : scorers) {
    sc.validate();
    REQUIRE(sc.n_targets() == n);
    REQUIRE(sc.dim() == dim);
    const std::vector<double> full = full_distribution(sc, x, 4.0);
    const TruncatedDistribution trunc = truncated_softmax(sc, x, ids, 4.0);
    REQUIRE(trunc.probs.size() == n);
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(std::abs(trunc.probs[i] - full[i]) <= 1e-12);
    }
  }
}

TEST_CASE("singleton subset is a point mass with the raw logit kept") {
  Rng rng(18);
  const EmbeddingMatrix table = random_matrix(10, 4, rng);
  const std::vector<double> x = random_vec(4, rng);
  const std::vector<std::size_t> sub = {7};
  const TruncatedDistribution d = truncated_softmax_table(table, x, sub, 3.0, 42);
  CHECK(d.probs == std::vector<double>{1.0});
  CHECK(d.input_index == 42);
  CHECK(d.beta == 3.0);
  double want = 0.0;
  for (std::size_t k = 0; k < 4; ++k) want += table.at(7, k) * x[k];
  CHECK(d.logits[0] == want);
  CHECK(d.position_of(7) == 0);
  CHECK_THROWS_AS((void)d.position_of(3), std::invalid_argument);
}

TEST_CASE("truncated softmax matches a scalar oracle on a strict subset") {
  Rng rng(19);
  const EmbeddingMatrix table = random_matrix(4096, 8, rng);
  const std::vector<double> x = random_vec(8, rng);
  Rng srng(20);
  std::vector<std::size_t> sub = sample_without_replacement(4096, 128, srng);
  std::sort(sub.begin(), sub.end());
  const double beta = 20.0;
  const TruncatedDistribution d = truncated_softmax_table(table, x, sub, beta);
  REQUIRE(d.subset.size() == 128);
  long double zsum = 0.0L;
  std::vector<long double> num(sub.size());
  double max_logit = -1e300;
  for (std::size_t i = 0; i < sub.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 8; ++k) s += table.at(sub[i], k) * x[k];
    max_logit = std::max(max_logit, beta * s);
    num[i] = static_cast<long double>(beta) * s;
  }
  for (std::size_t i = 0; i < sub.size(); ++i) {
    num[i] = std::exp(num[i] - static_cast<long double>(max_logit));
    zsum += num[i];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < sub.size(); ++i) {
    const double want = static_cast<double>(num[i] / zsum);
    REQUIRE(d.probs[i] == doctest::Approx(want).epsilon(1e-11));
    total += d.probs[i];
  }
  CHECK(std::abs(total - 1.0) <= 1e-12);
}

TEST_CASE("truncated softmax validates its subset") {
  Rng rng(21);
  const EmbeddingMatrix table = random_matrix(8, 3, rng);
  const std::vector<double> x = random_vec(3, rng);
  const std::vector<std::size_t> empty;
  CHECK_THROWS_AS((void)truncated_softmax_table(table, x, empty, 1.0), std::invalid_argument);
  const std::vector<std::size_t> unsorted = {3, 1};
  CHECK_THROWS_AS((void)truncated_softmax_table(table, x, unsorted, 1.0), std::invalid_argument);
  const std::vector<std::size_t> dup = {2, 2, 5};
  CHECK_THROWS_AS((void)truncated_softmax_table(table, x, dup, 1.0), std::invalid_argument);
  const std::vector<std::size_t> oob = {1, 9};
  CHECK_THROWS_AS((void)truncated_softmax_table(table, x, oob, 1.0), std::out_of_range);
}

TEST_CASE("task loss is zero at a point mass and ln k at uniform") {
  // one-hot: a dominant logit at beta 20 drives the loss to ~0
  EmbeddingMatrix rows(3, 2);
  rows.at(0, 0) = 10.0;
  rows.at(1, 0) = -10.0;
  rows.at(2, 0) = -10.0;
  const std::vector<double> x = {1.0, 0.0};
  const std::vector<std::size_t> sub = {0, 1, 2};
  const TruncatedDistribution p = truncated_softmax_table(rows, x, sub, 20.0);
  const TaskLossResult res = task_loss_ce(p, x, rows, 0);
  CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-12));

  // uniform over 4: identical rows make the loss exactly ln 4
  EmbeddingMatrix same(4, 2);
  for (std::size_t i = 0; i < 4; ++i) same.at(i, 1) = 1.5;
  const std::vector<std::size_t> sub4 = {0, 1, 2, 3};
  const std::vector<double> xq = {0.3, 0.9};
  const TruncatedDistribution pu = truncated_softmax_table(same, xq, sub4, 20.0);
  const TaskLossResult ures = task_loss_ce(pu, xq, same, 2);
  CHECK(ures.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("task loss gradients match finite differences") {
  Rng rng(22);
  const double beta = 2.0;
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t m = 6, dim = 4;
    EmbeddingMatrix rows = random_matrix(m, dim, rng, 0.5);
    std::vector<double> x = random_vec(dim, rng, 0.5);
    const std::vector<std::size_t> sub = all_ids(m);
    const std::size_t label = rng.next_below(m);
    const TruncatedDistribution p = truncated_softmax_table(rows, x, sub, beta);
    const TaskLossResult res = task_loss_ce(p, x, rows, label);

    CHECK(res.loss == doctest::Approx(ce_oracle(x, rows, beta, label)).epsilon(1e-12));
    // pulling the label up: its logit gradient is nonpositive
    CHECK(res.dlogits[label] <= 0.0);

    const double eps = 1e-5;
    for (std::size_t d = 0; d < dim; ++d) {
      const double saved = x[d];
      x[d] = saved + eps;
      const double up = ce_oracle(x, rows, beta, label);
      x[d] = saved - eps;
      const double down = ce_oracle(x, rows, beta, label);
      x[d] = saved;
      const double fd = (up - down) / (2.0 * eps);
      REQUIRE(std::abs(res.f_grad[d] - fd) / std::max(std::abs(res.f_grad[d]), 1e-8) <= 1e-4);
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t d = 0; d < dim; ++d) {
        const double saved = rows.at(i, d);
        rows.at(i, d) = saved + eps;
        const double up = ce_oracle(x, rows, beta, label);
        rows.at(i, d) = saved - eps;
        const double down = ce_oracle(x, rows, beta, label);
        rows.at(i, d) = saved;
        const double fd = (up - down) / (2.0 * eps);
        REQUIRE(std::abs(res.g_rows_grad.at(i, d) - fd) /
                    std::max(std::abs(res.g_rows_grad.at(i, d)), 1e-8) <=
                1e-4);
      }
    }
  }
}

TEST_CASE("task loss rejects a label outside the subset") {
  Rng rng(23);
  const EmbeddingMatrix rows = random_matrix(4, 3, rng);
  const std::vector<double> x = random_vec(3, rng);
  const std::vector<std::size_t> sub = {0, 1, 2, 3};
  const TruncatedDistribution p = truncated_softmax_table(rows, x, sub, 1.0);
  CHECK_THROWS_AS((void)task_loss_ce(p, x, rows, 9), std::invalid_argument);
}

TEST_CASE("mse loss identities and scalar oracle") {
  Rng rng(24);
  const EmbeddingMatrix g_rows = random_matrix(5, 3, rng);
  const MseLossResult zero = corrector_loss_mse(g_rows, g_rows);
  CHECK(zero.loss == 0.0);
  for (double v : zero.corrected_grad.data) CHECK(v == 0.0);

  EmbeddingMatrix g1(1, 1), c1(1, 1);
  g1.at(0, 0) = 2.0;
  c1.at(0, 0) = 0.0;
  const MseLossResult one = corrector_loss_mse(g1, c1);
  CHECK(one.loss == doctest::Approx(4.0).epsilon(1e-15));

  // mean over rows of the squared L2 gap
  const EmbeddingMatrix corrected = random_matrix(5, 3, rng);
  const MseLossResult res = corrector_loss_mse(g_rows, corrected);
  double want = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t d = 0; d < 3; ++d) {
      const double gap = g_rows.at(i, d) - corrected.at(i, d);
      want += gap * gap;
    }
  }
  want /= 5.0;
  CHECK(res.loss == doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS((void)corrector_loss_mse(g_rows, EmbeddingMatrix(4, 3)),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)corrector_loss_mse(EmbeddingMatrix(0, 3), EmbeddingMatrix(0, 3)),
                  std::invalid_argument);
}

TEST_CASE("mse gradients match finite differences") {
  Rng rng(25);
  const EmbeddingMatrix g_rows = random_matrix(4, 3, rng);
  EmbeddingMatrix corrected = random_matrix(4, 3, rng);
  const MseLossResult res = corrector_loss_mse(g_rows, corrected);
  const double eps = 1e-5;
  for (std::size_t i = 0; i < corrected.data.size(); ++i) {
    const double saved = corrected.data[i];
    corrected.data[i] = saved + eps;
    const double up = corrector_loss_mse(g_rows, corrected).loss;
    corrected.data[i] = saved - eps;
    const double down = corrector_loss_mse(g_rows, corrected).loss;
    corrected.data[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    REQUIRE(std::abs(res.corrected_grad.data[i] - fd) /
                std::max(std::abs(res.corrected_grad.data[i]), 1e-8) <=
            1e-4);
  }
}

TEST_CASE("corrector ce vanishes when the distributions agree") {
  Rng rng(26);
  const std::size_t n = 12, dim = 4;
  const EmbeddingMatrix table = random_matrix(n, dim, rng);
  const std::vector<double> x = random_vec(dim, rng);
  const std::vector<std::size_t> ids = all_ids(n);
  const TruncatedDistribution p = truncated_softmax_table(table, x, ids, 5.0);
  const CorrectorCeResult res = corrector_loss_ce(p, p, x);
  CHECK(std::abs(res.loss) <= 1e-14);
  for (double v : res.dlogits) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("identity corrector over a fresh cache gives zero corrector ce") {
  Rng rng(27);
  const std::size_t n = 24, dim = 5;
  const EmbeddingMatrix raw = random_matrix(n, dim, rng);
  Rng net_rng(28);
  const MlpNet g = MlpNet::init({dim, {8}, dim, true}, InitMode::he_normal, net_rng);
  const MlpNet h = MlpNet::init({dim, {8, 8}, dim, true}, InitMode::zero_residual, net_rng);
  TargetBuffer buf = init_from_encoder(g, raw);

  const Scorer truth = Scorer::true_net(g, raw);
  const Scorer corr = Scorer::corrected_scorer(h, buf);
  const std::vector<double> x = random_vec(dim, rng);
  const std::vector<std::size_t> ids = all_ids(n);
  const TruncatedDistribution pt = truncated_softmax(truth, x, ids, 20.0);
  const TruncatedDistribution ph = truncated_softmax(corr, x, ids, 20.0);
  const CorrectorCeResult res = corrector_loss_ce(pt, ph, x);
  CHECK(res.loss == 0.0);
}

TEST_CASE("corrector ce equals the kl oracle and its gradients check out") {
  Rng rng(29);
  const double beta = 2.0;
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t m = 7, dim = 3;
    const EmbeddingMatrix g_rows = random_matrix(m, dim, rng, 0.5);
    EmbeddingMatrix corrected = random_matrix(m, dim, rng, 0.5);
    const std::vector<double> x = random_vec(dim, rng, 0.5);
    const std::vector<std::size_t> sub = all_ids(m);
    const TruncatedDistribution pt = truncated_softmax_table(g_rows, x, sub, beta);
    const TruncatedDistribution ph = truncated_softmax_table(corrected, x, sub, beta);
    const CorrectorCeResult res = corrector_loss_ce(pt, ph, x);

    CHECK(res.loss == doctest::Approx(kl_oracle(pt, x, corrected, beta)).epsilon(1e-10));
    CHECK(res.loss == doctest::Approx(kl_divergence(pt.probs, ph.probs)).epsilon(1e-10));
    CHECK(res.loss >= 0.0);

    const double eps = 1e-5;
    for (std::size_t i = 0; i < corrected.data.size(); ++i) {
      const double saved = corrected.data[i];
      corrected.data[i] = saved + eps;
      const double up = kl_oracle(pt, x, corrected, beta);
      corrected.data[i] = saved - eps;
      const double down = kl_oracle(pt, x, corrected, beta);
      corrected.data[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      REQUIRE(std::abs(res.corrected_grad.data[i] - fd) /
                  std::max(std::abs(res.corrected_grad.data[i]), 1e-8) <=
              1e-4);
    }
  }
}

TEST_CASE("corrector ce validates shared structure") {
  Rng rng(30);
  const EmbeddingMatrix table = random_matrix(10, 3, rng);
  const std::vector<double> x = random_vec(3, rng);
  const std::vector<std::size_t> a = {0, 1, 2};
  const std::vector<std::size_t> b = {0, 1, 3};
  const TruncatedDistribution pa = truncated_softmax_table(table, x, a, 2.0);
  const TruncatedDistribution pb = truncated_softmax_table(table, x, b, 2.0);
  CHECK_THROWS_AS((void)corrector_loss_ce(pa, pb, x), std::invalid_argument);
  TruncatedDistribution pa2 = pa;
  pa2.beta = 3.0;
  CHECK_THROWS_AS((void)corrector_loss_ce(pa, pa2, x), std::invalid_argument);
  TruncatedDistribution pa3 = pa;
  pa3.input_index = 5;
  CHECK_THROWS_AS((void)corrector_loss_ce(pa, pa3, x), std::invalid_argument);
}

TEST_CASE("losses keep the gradient paths separate") {
  // the task loss never yields a corrected-row gradient and the corrector ce
  // never yields a query or fresh-row gradient; confirm the exposed gradients
  // reconstruct from dlogits alone
  Rng rng(31);
  const std::size_t m = 5, dim = 3;
  const EmbeddingMatrix rows = random_matrix(m, dim, rng);
  const EmbeddingMatrix corrected = random_matrix(m, dim, rng);
  const std::vector<double> x = random_vec(dim, rng);
  const std::vector<std::size_t> sub = all_ids(m);
  const TruncatedDistribution pt = truncated_softmax_table(rows, x, sub, 2.0);
  const TruncatedDistribution ph = truncated_softmax_table(corrected, x, sub, 2.0);

  const TaskLossResult task = task_loss_ce(pt, x, rows, 2);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      REQUIRE(task.g_rows_grad.at(i, d) ==
              doctest::Approx(task.dlogits[i] * x[d]).epsilon(1e-12));
    }
  }
  const CorrectorCeResult ce = corrector_loss_ce(pt, ph, x);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      REQUIRE(ce.corrected_grad.at(i, d) ==
              doctest::Approx(ce.dlogits[i] * x[d]).epsilon(1e-12));
    }
  }
}

TEST_CASE("scorer validation catches missing pieces") {
  Scorer s;
  s.kind = ScorerKind::stale_buffer;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  Scorer t;
  t.kind = ScorerKind::corrected;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  Scorer u;
  u.kind = ScorerKind::true_encoder;
  CHECK_THROWS_AS(u.validate(), std::invalid_argument);

  Rng rng(32);
  TargetBuffer buf = buffer_from_matrix(random_matrix(4, 3, rng));
  Rng net_rng(33);
  const MlpNet wrong = MlpNet::init({5, {5}, 5, true}, InitMode::he_normal, net_rng);
  CHECK_THROWS_AS(Scorer::corrected_scorer(wrong, buf).validate(), std::invalid_argument);
}

}  // TEST_SUITE softmax_approx
