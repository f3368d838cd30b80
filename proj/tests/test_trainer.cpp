#include <cmath>

#include <gtest/gtest.h>

#include <set2set/synthetic.hpp>
#include <set2set/trainer.hpp>

using namespace set2set;

namespace {

// 5 users x 8 items; each user observed on 6 items, one val and one test.
InteractionDataset toy() {
  std::vector<std::vector<ItemId>> tr(5), va(5), te(5);
  for (ItemId u = 0; u < 5; ++u) {
    for (ItemId k = 0; k < 8; ++k) {
      const ItemId v = (u + k) % 8;
      if (k < 6) tr[u].push_back(v);
      else if (k == 6) va[u].push_back(v);
      else te[u].push_back(v);
    }
    std::sort(tr[u].begin(), tr[u].end());
  }
  InteractionDataset ds;
  ds.num_users = 5;
  ds.num_items = 8;
  ds.train = ItemLists::from_rows(tr);
  ds.val = ItemLists::from_rows(va);
  ds.test = ItemLists::from_rows(te);
  ds.popularity.assign(8, 0);
  for (auto& r : tr)
    for (auto v : r) ++ds.popularity[v];
  ds.is_split = true;
  return ds;
}

InteractionDataset small_synthetic(std::uint64_t seed = 3) {
  SyntheticConfig sc;
  sc.num_users = 120;
  sc.num_items = 200;
  sc.mean_interactions = 25;
  sc.min_interactions = 8;
  sc.seed = seed;
  return split_dataset(build_dataset(synthetic_interactions(sc), 5), {0.8, 0.1, 0.1}, seed);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 8;
  c.dim = 16;
  c.optimizer.lr = 0.01;
  c.patience = 100;
  return c;
}

}  // namespace

TEST(Train, ToyObjectiveSettles) {
  auto ds = toy();
  TrainConfig c;
  c.epochs = 50;
  c.dim = 8;
  c.optimizer.lr = 0.05;
  c.patience = 1000;
  c.sampler.K = 3;
  auto res = train(ds, c);
  const auto& ep = res.report.epochs;
  ASSERT_EQ(ep.size(), 50u);
  EXPECT_GT(ep.back().objective, ep.front().objective);
  for (std::size_t e = 41; e < 50; ++e) {
    const double prev = ep[e - 1].objective;
    EXPECT_GE(ep[e].objective, prev - 0.05 * std::abs(prev)) << "epoch " << e + 1;
  }
}

TEST(Train, SameSeedSameResult) {
  auto ds = small_synthetic();
  auto c = quick_config();
  auto a = train(ds, c), b = train(ds, c);
  EXPECT_EQ(a.model, b.model);
  ASSERT_TRUE(a.report.best_val_ndcg && b.report.best_val_ndcg);
  EXPECT_EQ(*a.report.best_val_ndcg, *b.report.best_val_ndcg);
  for (std::size_t e = 0; e < a.report.epochs.size(); ++e)
    EXPECT_EQ(a.report.epochs[e].objective, b.report.epochs[e].objective);
}

TEST(Train, WorkerCountDoesNotChangeResult) {
  auto ds = small_synthetic();
  auto c = quick_config();
  c.epochs = 3;
  c.batch_size = 16;
  auto one = train(ds, c);
  c.workers = 3;
  auto three = train(ds, c);
  EXPECT_EQ(one.model, three.model);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  auto ds = small_synthetic();
  auto c = quick_config();
  c.epochs = 4;
  c.optimizer.lr = 0.0;
  auto res = train(ds, c);
  auto init = init_model(ds.num_users, ds.num_items, c.dim, c.init_scale, derive_seed(c.seed, 0x1417, 0));
  EXPECT_EQ(res.model, init);
  const auto& ep = res.report.epochs;
  for (const auto& r : ep) EXPECT_EQ(*r.val_ndcg, *ep.front().val_ndcg);
}

TEST(Train, BprDegenerationParameterIdentical) {
  auto ds = small_synthetic();
  auto c = quick_config();
  c.epochs = 3;
  c.optimizer.l2_reg = 0.0;
  c.sampler.L = 1;
  c.sampler.K = 1;
  c.loss.lambda = 0.0;
  auto set = train(ds, c);
  c.loss.objective = Objective::bpr;
  auto bpr = train(ds, c);
  double worst = 0.0;
  for (std::size_t k = 0; k < set.model.user_emb.data().size(); ++k)
    worst = std::max(worst, std::abs(set.model.user_emb.data()[k] - bpr.model.user_emb.data()[k]));
  for (std::size_t k = 0; k < set.model.item_emb.data().size(); ++k)
    worst = std::max(worst, std::abs(set.model.item_emb.data()[k] - bpr.model.item_emb.data()[k]));
  EXPECT_LE(worst, 1e-12);
}

TEST(Train, EarlyStoppingReturnsBestModel) {
  auto ds = small_synthetic(5);
  auto c = quick_config();
  c.epochs = 30;
  c.optimizer.lr = 0.05;
  c.patience = 2;
  std::vector<EpochRecord> seen;
  auto res = train(ds, c, [&](const EpochRecord& r) { seen.push_back(r); });
  EXPECT_EQ(seen.size(), res.report.epochs.size());
  EXPECT_LE(res.report.best_epoch, res.report.last_epoch);
  const std::size_t cut[] = {10};
  const double returned = evaluate(res.model, ds, Split::val, cut).ndcg[0];
  EXPECT_DOUBLE_EQ(returned, *res.report.best_val_ndcg);
  EXPECT_GE(returned, *res.report.epochs.back().val_ndcg);
  for (const auto& r : res.report.epochs) EXPECT_LE(*r.val_ndcg, returned);
}

TEST(Train, DivergenceReported) {
  auto ds = small_synthetic();
  auto c = quick_config();
  c.optimizer.kind = OptimizerKind::sgd;
  c.optimizer.lr = 1e300;
  try {
    train(ds, c);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergedError& e) {
    EXPECT_EQ(e.epoch(), 1u);
  }
}

TEST(Train, ConfigValidation) {
  auto ds = small_synthetic();
  auto c = quick_config();
  c.patience = 0;
  EXPECT_THROW(train(ds, c), ConfigError);
  c = quick_config();
  c.loss.objective = Objective::bpr;  // L = 2
  EXPECT_THROW(train(ds, c), ConfigError);
  c = quick_config();
  c.sampler.mask_enabled = true;  // loss flag left off
  EXPECT_THROW(train(ds, c), ConfigError);
}

TEST(Train, MaskedAndEasyVariantsRun) {
  auto ds = small_synthetic();
  auto c = quick_config();
  c.epochs = 2;
  c.sampler.L = 4;
  c.sampler.mask_enabled = c.loss.mask_enabled = true;
  EXPECT_NO_THROW(train(ds, c));
  c.loss.objective = Objective::set2set_easy;
  c.sampler.neg_mode = NegativeMode::popularity;
  c.sampler.popularity_smoothing = 1.0;
  EXPECT_NO_THROW(train(ds, c));
}

TEST(Optimizer, RegularizationShrinksNorms) {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    auto m = init_model(3, 4, 6, 0.5, 1);
    OptimizerConfig oc;
    oc.kind = kind;
    oc.lr = 0.01;
    oc.l2_reg = 0.1;
    Optimizer opt(m, oc);
    SparseGradient zero{6, {1}, std::vector<double>(6, 0.0), {0, 2}, std::vector<double>(12, 0.0)};
    auto norm = [](std::span<const double> r) {
      double s = 0;
      for (double x : r) s += x * x;
      return s;
    };
    double prev_u = norm(m.user_emb.row(1)), prev_i = norm(m.item_emb.row(2));
    const double untouched = norm(m.item_emb.row(3));
    for (int t = 0; t < 20; ++t) {
      opt.step(m, zero);
      double nu = norm(m.user_emb.row(1)), ni = norm(m.item_emb.row(2));
      EXPECT_LT(nu, prev_u);
      EXPECT_LT(ni, prev_i);
      prev_u = nu;
      prev_i = ni;
    }
    EXPECT_EQ(norm(m.item_emb.row(3)), untouched);
  }
}

TEST(Probe, LinearFit) {
  std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8};
  EXPECT_NEAR(linear_fit_r2(x, y), 1.0, 1e-15);
  std::vector<double> yn{1, 3, 2, 4};
  EXPECT_NEAR(linear_fit_r2(x, yn), 0.64, 1e-12);
  std::vector<double> one{1};
  EXPECT_THROW(linear_fit_r2(one, one), ShapeError);
}

TEST(Probe, SingleMeasurement) {
  auto ds = small_synthetic();
  auto c = quick_config();
  const std::size_t ks[] = {5};
  auto pts = epoch_time_probe(ds, c, ks, 3);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].K, 5u);
  EXPECT_GT(pts[0].seconds_per_epoch, 0.0);
}

TEST(EpochRecord, JsonLine) {
  EpochRecord r;
  r.epoch = 3;
  r.objective = -0.5;
  r.val_ndcg = 0.25;
  auto j = to_json(r);
  EXPECT_EQ(j["epoch"], 3);
  EXPECT_EQ(j["val_ndcg@10"], 0.25);
  EXPECT_TRUE(j["val_hr@10"].is_null());
}
