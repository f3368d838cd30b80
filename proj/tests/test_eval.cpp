#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include <set2set/eval.hpp>

#include "oracle.hpp"

using namespace set2set;

namespace {

InteractionDataset fixture(std::size_t users, std::size_t items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<ItemId>> tr(users), va(users), te(users);
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<ItemId> perm(items);
    std::iota(perm.begin(), perm.end(), ItemId{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t nt = 3 + rng() % 10, nv = rng() % 3, ne = rng() % 4;  // some users lack targets
    tr[u].assign(perm.begin(), perm.begin() + nt);
    va[u].assign(perm.begin() + nt, perm.begin() + nt + nv);
    te[u].assign(perm.begin() + nt + nv, perm.begin() + nt + nv + ne);
    for (auto* r : {&tr[u], &va[u], &te[u]}) std::sort(r->begin(), r->end());
  }
  te[0] = {static_cast<ItemId>(items - 1)};
  std::erase(tr[0], static_cast<ItemId>(items - 1));
  std::erase(va[0], static_cast<ItemId>(items - 1));
  InteractionDataset ds;
  ds.num_users = users;
  ds.num_items = items;
  ds.train = ItemLists::from_rows(tr);
  ds.val = ItemLists::from_rows(va);
  ds.test = ItemLists::from_rows(te);
  ds.popularity.assign(items, 0);
  ds.is_split = true;
  return ds;
}

// Coarse embeddings so that score ties actually occur.
EmbeddingModel coarse_model(std::size_t users, std::size_t items, std::uint64_t seed) {
  auto m = init_model(users, items, 4, 1.0, seed);
  for (auto& x : m.user_emb.data()) x = std::round(x * 2) / 2;
  for (auto& x : m.item_emb.data()) x = std::round(x * 2) / 2;
  return m;
}

}  // namespace

TEST(RankCandidates, KnownScores) {
  EmbeddingModel m{1, Matrix(1, 1), Matrix(3, 1)};
  m.user_emb.row(0)[0] = 2.0;
  m.item_emb.row(0)[0] = 1.0;
  m.item_emb.row(1)[0] = 3.0;
  m.item_emb.row(2)[0] = -1.0;
  InteractionDataset ds;
  ds.num_users = 1;
  ds.num_items = 3;
  ds.train = ds.val = ds.test = ItemLists::from_rows(std::vector<std::vector<ItemId>>(1));
  EXPECT_EQ(rank_candidates(m, ds, 0), (std::vector<ItemId>{1, 0, 2}));

  ds.train = ItemLists::from_rows({{1}});
  EXPECT_EQ(rank_candidates(m, ds, 0), (std::vector<ItemId>{0, 2}));
}

TEST(RankCandidates, TiesByAscendingId) {
  EmbeddingModel m{1, Matrix(1, 1), Matrix(4, 1)};
  m.user_emb.row(0)[0] = 1.0;
  for (std::size_t v = 0; v < 4; ++v) m.item_emb.row(v)[0] = v == 2 ? 5.0 : 1.0;
  InteractionDataset ds;
  ds.num_users = 1;
  ds.num_items = 4;
  ds.train = ds.val = ds.test = ItemLists::from_rows(std::vector<std::vector<ItemId>>(1));
  EXPECT_EQ(rank_candidates(m, ds, 0), (std::vector<ItemId>{2, 0, 1, 3}));
}

TEST(Metrics, HitRatio) {
  std::vector<ItemId> ranked{9, 4, 7, 1, 3, 8, 2, 0, 6, 5, 11, 10};
  std::vector<ItemId> all{4, 7}, none{10, 11}, some{2, 4, 11};
  EXPECT_EQ(hr_at_n(ranked, all, 10), 1.0);
  EXPECT_EQ(hr_at_n(ranked, none, 10), 0.0);
  EXPECT_DOUBLE_EQ(hr_at_n(ranked, some, 10), 2.0 / 3.0);
  std::vector<ItemId> many{0, 1, 2, 3, 4};
  EXPECT_EQ(hr_at_n(ranked, many, 2), 0.5);
}

TEST(Metrics, Ndcg) {
  std::vector<ItemId> ranked{5, 3, 8};
  std::vector<ItemId> first{5}, second{3}, outside{9};
  EXPECT_EQ(ndcg_at_n(ranked, first, 3), 1.0);
  EXPECT_NEAR(ndcg_at_n(ranked, second, 3), 0.63092975357145744, 1e-15);
  EXPECT_EQ(ndcg_at_n(ranked, outside, 3), 0.0);
  std::vector<ItemId> two{3, 8};
  EXPECT_NEAR(ndcg_at_n(ranked, two, 3), (1 / std::log2(3.0) + 0.5) / (1 + 1 / std::log2(3.0)), 1e-15);
}

TEST(Metrics, Errors) {
  std::vector<ItemId> ranked{1, 2}, empty;
  std::vector<ItemId> t{1};
  EXPECT_THROW(hr_at_n(ranked, empty, 5), EvalError);
  EXPECT_THROW(ndcg_at_n(ranked, empty, 5), EvalError);
  EXPECT_THROW(ndcg_at_n(ranked, t, 0), ConfigError);
}

// Both denominators grow with N until N reaches |targets|, so monotonicity
// holds from there on (and everywhere for a single target).
TEST(Metrics, MonotoneInCutoff) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 500; ++t) {
    std::vector<ItemId> ranked(40);
    std::iota(ranked.begin(), ranked.end(), ItemId{0});
    std::shuffle(ranked.begin(), ranked.end(), rng);
    std::vector<ItemId> targets{ranked[rng() % 40], ranked[rng() % 40], ranked[rng() % 40]};
    if (t % 2) targets.resize(1);
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    double prev_h = 0, prev_g = 0;
    for (std::size_t n = targets.size(); n <= 40; ++n) {
      const double h = hr_at_n(ranked, targets, n), g = ndcg_at_n(ranked, targets, n);
      EXPECT_GE(h, prev_h);
      EXPECT_GE(g, prev_g);
      EXPECT_LE(h, 1.0);
      EXPECT_LE(g, 1.0 + 1e-15);
      prev_h = h;
      prev_g = g;
    }
  }
}

TEST(Evaluate, MatchesNaiveReference) {
  const std::vector<std::size_t> cutoffs{1, 3, 5, 10, 20};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto ds = fixture(20, 50, seed);
    auto m = seed % 2 ? coarse_model(20, 50, seed + 100) : init_model(20, 50, 6, 0.5, seed + 100);
    for (bool test_split : {false, true}) {
      auto got = evaluate(m, ds, test_split ? Split::test : Split::val, cutoffs);
      auto want = oracle::naive_evaluate(m, ds, test_split, cutoffs);
      ASSERT_EQ(got.num_evaluated_users, want.users);
      for (std::size_t c = 0; c < cutoffs.size(); ++c) {
        EXPECT_NEAR(got.hr[c], want.hr[c], 1e-12);
        EXPECT_NEAR(got.ndcg[c], want.ndcg[c], 1e-12);
      }
      auto threaded = evaluate(m, ds, test_split ? Split::test : Split::val, cutoffs, 3);
      EXPECT_EQ(threaded.hr, got.hr);
      EXPECT_EQ(threaded.ndcg, got.ndcg);
    }
  }
}

TEST(Evaluate, PerfectModel) {
  auto ds = fixture(20, 50, 7);
  EmbeddingModel m{50, Matrix(20, 50), Matrix(50, 50)};
  for (std::size_t v = 0; v < 50; ++v) m.item_emb.row(v)[v] = 1.0;
  for (std::size_t u = 0; u < 20; ++u)
    for (auto v : ds.test.row(u)) m.user_emb.row(u)[v] = 10.0;
  auto r = evaluate(m, ds, Split::test, default_cutoffs());
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) {
    EXPECT_EQ(r.hr[c], 1.0);
    EXPECT_EQ(r.ndcg[c], 1.0);
  }
}

TEST(Evaluate, ValItemsStayAsCandidates) {
  // One user; the val item outscores the test item and pushes it to rank 2.
  EmbeddingModel m{1, Matrix(1, 1), Matrix(4, 1)};
  m.user_emb.row(0)[0] = 1.0;
  const double s[4] = {9.0, 3.0, 5.0, 1.0};
  for (std::size_t v = 0; v < 4; ++v) m.item_emb.row(v)[0] = s[v];
  InteractionDataset ds;
  ds.num_users = 1;
  ds.num_items = 4;
  ds.train = ItemLists::from_rows({{0}});
  ds.val = ItemLists::from_rows({{2}});
  ds.test = ItemLists::from_rows({{1}});
  std::vector<std::size_t> cut{1, 2};
  auto r = evaluate(m, ds, Split::test, cut);
  EXPECT_EQ(r.hr[0], 0.0);
  EXPECT_EQ(r.hr[1], 1.0);
  EXPECT_NEAR(r.ndcg[1], 1 / std::log2(3.0), 1e-15);
}

TEST(Evaluate, PermutationInvariance) {
  auto ds = fixture(20, 50, 3);
  auto m = init_model(20, 50, 8, 0.5, 4);
  std::vector<ItemId> perm(50);
  std::iota(perm.begin(), perm.end(), ItemId{0});
  std::mt19937_64 rng(5);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto remap = [&](const ItemLists& lists) {
    std::vector<std::vector<ItemId>> rows(ds.num_users);
    for (std::size_t u = 0; u < ds.num_users; ++u) {
      for (auto v : lists.row(u)) rows[u].push_back(perm[v]);
      std::sort(rows[u].begin(), rows[u].end());
    }
    return ItemLists::from_rows(rows);
  };
  InteractionDataset pds = ds;
  pds.train = remap(ds.train);
  pds.val = remap(ds.val);
  pds.test = remap(ds.test);
  EmbeddingModel pm = m;
  for (std::size_t v = 0; v < 50; ++v) {
    auto src = m.item_emb.row(v);
    std::copy(src.begin(), src.end(), pm.item_emb.row(perm[v]).begin());
  }
  auto a = evaluate(m, ds, Split::test, default_cutoffs());
  auto b = evaluate(pm, pds, Split::test, default_cutoffs());
  for (std::size_t c = 0; c < a.cutoffs.size(); ++c) {
    EXPECT_NEAR(a.hr[c], b.hr[c], 1e-12);
    EXPECT_NEAR(a.ndcg[c], b.ndcg[c], 1e-12);
  }
}

TEST(Evaluate, NoEvaluableUsers) {
  auto ds = fixture(5, 30, 2);
  ds.test = ItemLists::from_rows(std::vector<std::vector<ItemId>>(5));
  auto m = init_model(5, 30, 4, 0.1, 1);
  EXPECT_THROW(evaluate(m, ds, Split::test, default_cutoffs()), EvalError);
  std::vector<std::size_t> bad{10, 0};
  EXPECT_THROW(evaluate(m, ds, Split::val, bad), ConfigError);
}

TEST(Report, JsonAndTableAgree) {
  auto ds = fixture(20, 50, 9);
  auto m = init_model(20, 50, 8, 0.5, 9);
  auto r = evaluate(m, ds, Split::test, default_cutoffs());
  auto j = to_json(r);
  auto back = report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.hr, r.hr);
  EXPECT_EQ(back.ndcg, r.ndcg);
  EXPECT_EQ(back.num_evaluated_users, r.num_evaluated_users);
  auto table = format_table("test", r);
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) {
    EXPECT_NE(table.find(format_metric(r.hr[c])), std::string::npos);
    EXPECT_NE(table.find(format_metric(r.ndcg[c])), std::string::npos);
  }
  EXPECT_NE(table.find("N=50"), std::string::npos);
}
