#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dimo/evaluation.hpp"
#include "gradcheck.hpp"
#include "testutil.hpp"

using namespace dimo;
using dimo::testing::random_tensor;

namespace {

// Sort every item by (score desc, id asc) and scan for the label.
std::size_t sorted_rank(const std::vector<double>& scores, ItemId label) {
  std::vector<ItemId> order(scores.size());
  std::iota(order.begin(), order.end(), ItemId{0});
  std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), label) - order.begin()) + 1;
}

Tensor orthogonal(std::size_t d, std::mt19937_64& rng) {
  Tensor q = random_tensor(d, d, rng);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double p = dot(q.row(i), q.row(k));
      for (std::size_t j = 0; j < d; ++j) q(i, j) -= p * q(k, j);
    }
    const double n = norm(q.row(i));
    for (std::size_t j = 0; j < d; ++j) q(i, j) /= n;
  }
  return q;
}

}  // namespace

TEST(Metrics, PerfectRanking) {
  const std::vector<std::size_t> ranks{1, 1, 1};
  const EvalReport r = metrics_from_ranks(ranks);
  EXPECT_EQ(r.prec_at.at(10), 1.0);
  EXPECT_EQ(r.mrr_at.at(20), 1.0);
}

TEST(Metrics, RanksOneTwoFour) {
  const std::vector<std::size_t> ranks{1, 2, 4};
  const EvalReport r = metrics_from_ranks(ranks, {2, 10});
  EXPECT_NEAR(r.mrr_at.at(10), (1.0 + 0.5 + 0.25) / 3.0, 1e-15);
  EXPECT_NEAR(r.prec_at.at(2), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, RankJustPastCutoffCountsZero) {
  const std::vector<std::size_t> ranks{11};
  const EvalReport r = metrics_from_ranks(ranks, {10});
  EXPECT_EQ(r.prec_at.at(10), 0.0);
  EXPECT_EQ(r.mrr_at.at(10), 0.0);
}

TEST(Metrics, EmptyInputRejected) {
  EXPECT_THROW(metrics_from_ranks(std::vector<std::size_t>{}), DataError);
}

TEST(Metrics, TiesBreakByAscendingId) {
  const std::vector<double> scores{1.0, 2.0, 2.0, 0.5};
  EXPECT_EQ(rank_of(scores, 1), 1u);
  EXPECT_EQ(rank_of(scores, 2), 2u);
  EXPECT_EQ(rank_of(scores, 0), 3u);
}

TEST(Metrics, MatchSortAndScanOnRandomScores) {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 30, sessions = 25;
    std::uniform_int_distribution<int> coarse(0, 6);
    std::vector<ScoredSession> scored;
    for (std::size_t s = 0; s < sessions; ++s) {
      ScoredSession x;
      for (std::size_t i = 0; i < n; ++i) x.scores.push_back(trial % 2 ? coarse(rng) : std::normal_distribution<>()(rng));
      x.label = rng() % n;
      scored.push_back(std::move(x));
    }
    const EvalReport r = rank_metrics(scored);
    for (std::size_t k : {10u, 20u}) {
      double hits = 0, rr = 0;
      for (const auto& x : scored) {
        const std::size_t rank = sorted_rank(x.scores, x.label);
        if (rank <= k) hits += 1, rr += 1.0 / static_cast<double>(rank);
      }
      EXPECT_EQ(r.prec_at.at(k), hits / sessions);
      EXPECT_EQ(r.mrr_at.at(k), rr / sessions);
    }
    EXPECT_LE(r.prec_at.at(10), r.prec_at.at(20));
    EXPECT_LE(r.mrr_at.at(10), r.mrr_at.at(20));
    EXPECT_LE(r.mrr_at.at(20), r.prec_at.at(20));
  }
}

TEST(Disentanglement, IdenticalTablesScoreZero) {
  std::mt19937_64 rng(72);
  const Tensor t = random_tensor(20, 4, rng);
  EXPECT_EQ(disentanglement_score(t, t), 0.0);
}

TEST(Disentanglement, SeparatedClustersScoreTheirDistance) {
  std::mt19937_64 rng(73);
  const std::size_t n = 4000, d = 4;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor a = random_tensor(n, d, rng, sd), b = random_tensor(n, d, rng, sd);
  for (std::size_t i = 0; i < n; ++i) b(i, 0) += 10.0;
  EXPECT_NEAR(disentanglement_score(a, b), 10.0, 0.3);
}

TEST(Disentanglement, InvariantUnderCommonRotation) {
  std::mt19937_64 rng(74);
  const Tensor a = random_tensor(30, 5, rng), b = random_tensor(30, 5, rng, 2.0);
  const Tensor q = orthogonal(5, rng);
  EXPECT_NEAR(disentanglement_score(matmul(a, q), matmul(b, q)), disentanglement_score(a, b), 1e-10);
}

TEST(Disentanglement, ShapeMismatchRejected) {
  EXPECT_THROW(disentanglement_score(Tensor::zeros(3, 2), Tensor::zeros(3, 4)), ShapeError);
}

TEST(Export, ShapeHeaderAndRoundTrip) {
  dimo::testing::TempDir dir;
  std::mt19937_64 rng(75);
  const Tensor ids = random_tensor(3, 2, rng), mo = random_tensor(3, 2, rng);
  const std::vector<std::int64_t> item_ids{7, 8, 9};
  export_embeddings(dir.file("emb"), ids, mo, item_ids);
  const std::string text = dimo::testing::read_text(dir.file("emb/ids.csv"));
  EXPECT_EQ(text.substr(0, text.find('\n')), "id,e0,e1");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  for (const auto& [file, table] : {std::pair{"emb/ids.csv", ids}, std::pair{"emb/modality.csv", mo}}) {
    const EmbeddingCsv back = read_embedding_csv(dir.file(file));
    EXPECT_EQ(back.ids, item_ids);
    ASSERT_EQ(back.table.rows(), 3u);
    ASSERT_EQ(back.table.cols(), 2u);
    for (std::size_t i = 0; i < table.size(); ++i) EXPECT_NEAR(back.table[i], table[i], 1e-12);
  }
}

TEST(Report, JsonAndText) {
  const std::vector<std::size_t> ranks{1, 3};
  EvalReport r = metrics_from_ranks(ranks);
  r.disentanglement_score = 2.5;
  const auto j = report_json(r);
  EXPECT_EQ(j["n_sessions"], 2);
  EXPECT_EQ(j["prec_at"]["10"], 1.0);
  EXPECT_EQ(j["disentanglement_score"], 2.5);
  const std::string text = format_report(r);
  EXPECT_NE(text.find("Prec@10"), std::string::npos);
  EXPECT_NE(text.find("MRR@20"), std::string::npos);
}
