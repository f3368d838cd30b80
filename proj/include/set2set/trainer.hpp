#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "log.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "sampling.hpp"

namespace set2set {

struct TrainConfig {
  std::size_t epochs = 50;
  OptimizerConfig optimizer;
  std::size_t eval_every = 1;
  std::size_t patience = 5;
  std::uint64_t seed = 42;
  LossConfig loss;
  SamplerConfig sampler;
  std::size_t dim = 64;
  double init_scale = 0.1;
  // Samples whose gradients are summed into one optimizer step.
  std::size_t batch_size = 1;
  // Threads computing gradients inside a batch; results are reduced in
  // sample order, so the outcome does not depend on this value.
  std::size_t workers = 1;
  // Validation cutoff used for model selection.
  std::size_t select_cutoff = 10;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (select_cutoff < 1) throw ConfigError("select_cutoff must be >= 1");
    optimizer.validate();
    loss.validate();
    sampler.validate();
    if (loss.mask_enabled != sampler.mask_enabled) throw ConfigError("loss and sampler disagree on mask_enabled");
    if (loss.objective == Objective::bpr) {
      if (sampler.L != 1) throw ConfigError("bpr objective needs L = 1");
      if (sampler.mask_enabled) throw ConfigError("bpr objective does not use the mask");
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double objective = 0.0;  // mean per sample
  std::size_t samples = 0;
  std::size_t skipped = 0;
  std::optional<double> val_hr;
  std::optional<double> val_ndcg;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_ndcg;
  std::size_t last_epoch = 0;
  bool stopped_early = false;
};

struct TrainResult {
  EmbeddingModel model;
  TrainReport report;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r, std::size_t cutoff = 10) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["objective"] = r.objective;
  j["samples"] = r.samples;
  j["skipped"] = r.skipped;
  const std::string at = "@" + std::to_string(cutoff);
  j["val_hr" + at] = r.val_hr ? nlohmann::ordered_json(*r.val_hr) : nlohmann::ordered_json(nullptr);
  j["val_ndcg" + at] = r.val_ndcg ? nlohmann::ordered_json(*r.val_ndcg) : nlohmann::ordered_json(nullptr);
  j["seconds"] = r.seconds;
  return j;
}

// Gradient and objective of one drawn sample. A bpr sample with K > 1
// negatives is treated as K independent (pos, neg_j) pairs whose gradients
// are summed.
inline SparseGradient sample_gradient(const SetSample& sample, const EmbeddingModel& model, const LossConfig& cfg,
                                      double& objective) {
  if (cfg.objective != Objective::bpr || sample.neg_items.size() == 1) {
    LossBreakdown b;
    auto g = loss_gradients(sample, model, cfg, &b);
    objective = b.total;
    return g;
  }
  SparseGradient acc;
  acc.dim = model.dim;
  objective = 0.0;
  SetSample pair;
  pair.user = sample.user;
  pair.pos_items = sample.pos_items;
  for (ItemId v : sample.neg_items) {
    pair.neg_items = {v};
    LossBreakdown b;
    acc.add(loss_gradients(pair, model, cfg, &b));
    objective += b.total;
  }
  return acc;
}

struct EpochStats {
  double objective_sum = 0.0;
  std::size_t samples = 0;
  std::size_t skipped = 0;
};

// One pass over the epoch schedule. `epoch` is 0-based and only feeds the
// sampler seed.
inline EpochStats run_epoch(const InteractionDataset& ds, const TrainConfig& cfg, EmbeddingModel& model,
                            Optimizer& opt, const NegativeSampler& negatives, std::size_t epoch) {
  Rng rng(derive_seed(cfg.sampler.seed, 0, epoch));
  auto schedule = epoch_schedule(ds, cfg.sampler.L, rng);
  EpochStats stats;

  std::vector<SetSample> batch;
  std::vector<SparseGradient> grads;
  std::vector<double> objectives;
  batch.reserve(cfg.batch_size);
  for (std::size_t c = 0; c < schedule.size(); c += cfg.batch_size) {
    batch.clear();
    const std::size_t end = std::min(schedule.size(), c + cfg.batch_size);
    for (std::size_t k = c; k < end; ++k) {
      try {
        batch.push_back(draw_sample(ds, schedule.users[k], schedule.chunk(k), cfg.sampler, negatives, rng));
      } catch (const DegenerateUserError& e) {
        ++stats.skipped;
        log::debug("skipping chunk: ", e.what());
      }
    }
    if (batch.empty()) continue;
    grads.assign(batch.size(), SparseGradient{});
    objectives.assign(batch.size(), 0.0);
    auto work = [&](std::size_t b, std::size_t e) {
      for (std::size_t k = b; k < e; ++k) grads[k] = sample_gradient(batch[k], model, cfg.loss, objectives[k]);
    };
    const std::size_t nw = std::min(cfg.workers, batch.size());
    if (nw <= 1) {
      work(0, batch.size());
    } else {
      std::vector<std::exception_ptr> errors(nw);
      std::vector<std::thread> pool;
      const std::size_t step = (batch.size() + nw - 1) / nw;
      for (std::size_t w = 0; w < nw; ++w) {
        const std::size_t b = w * step, e = std::min(batch.size(), b + step);
        pool.emplace_back([&, b, e, w] {
          try {
            work(b, e);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& err : errors)
        if (err) std::rethrow_exception(err);
    }
    for (double o : objectives) stats.objective_sum += o;
    stats.samples += batch.size();
    if (grads.size() == 1) {
      opt.step(model, grads[0]);
    } else {
      SparseGradient acc;
      acc.dim = model.dim;
      for (const auto& g : grads) acc.add(g);
      opt.step(model, acc);
    }
  }
  return stats;
}

inline NegativeSampler make_negative_sampler(const InteractionDataset& ds, const SamplerConfig& sc,
                                             std::vector<double>& weights) {
  if (sc.neg_mode == NegativeMode::popularity) {
    weights = popularity_distribution(ds, sc.popularity_smoothing);
    return NegativeSampler(ds, NegativeMode::popularity, weights);
  }
  return NegativeSampler(ds, NegativeMode::uniform);
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Gradient ascent with validation-based early stopping; returns the model
// from the best validation epoch (or the last epoch when there is no
// validation data).
inline TrainResult train(const InteractionDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  auto model = init_model(ds.num_users, ds.num_items, cfg.dim, cfg.init_scale, derive_seed(cfg.seed, 0x1417, 0));
  Optimizer opt(model, cfg.optimizer);
  std::vector<double> weights;
  auto negatives = make_negative_sampler(ds, cfg.sampler, weights);
  const bool can_validate = ds.val.total() > 0;
  const std::size_t cutoffs[] = {cfg.select_cutoff};

  TrainResult result;
  auto& report = result.report;
  std::optional<EmbeddingModel> best;
  std::size_t bad_evals = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto t0 = std::chrono::steady_clock::now();
    EpochStats stats;
    try {
      stats = run_epoch(ds, cfg, model, opt, negatives, e);
    } catch (const NumericError& err) {
      log::error(err.what());
      throw TrainingDivergedError(e + 1);
    }
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.samples = stats.samples;
    rec.skipped = stats.skipped;
    rec.objective = stats.samples ? stats.objective_sum / static_cast<double>(stats.samples) : 0.0;
    if (!std::isfinite(rec.objective) || !all_finite(model)) throw TrainingDivergedError(e + 1);

    const bool eval_now = can_validate && ((e + 1) % cfg.eval_every == 0 || e + 1 == cfg.epochs);
    bool stop = false;
    if (eval_now) {
      auto r = evaluate(model, ds, Split::val, cutoffs, cfg.workers);
      rec.val_hr = r.hr[0];
      rec.val_ndcg = r.ndcg[0];
      if (!report.best_val_ndcg || r.ndcg[0] > *report.best_val_ndcg) {
        report.best_val_ndcg = r.ndcg[0];
        report.best_epoch = e + 1;
        best = model;
        bad_evals = 0;
      } else if (++bad_evals >= cfg.patience) {
        stop = true;
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);
    report.last_epoch = e + 1;
    if (on_epoch) on_epoch(rec);
    log::info("epoch ", rec.epoch, " objective ", rec.objective,
              rec.val_ndcg ? " val ndcg " + std::to_string(*rec.val_ndcg) : std::string());
    if (stop) {
      report.stopped_early = e + 1 < cfg.epochs;
      break;
    }
  }
  if (best) {
    result.model = std::move(*best);
  } else {
    result.model = std::move(model);
    report.best_epoch = report.last_epoch;
  }
  return result;
}

struct ProbePoint {
  std::size_t K = 0;
  double seconds_per_epoch = 0.0;
};

// Mean wall time of `epochs` timed epochs (after one untimed warm-up) for
// each K, all other settings fixed.
inline std::vector<ProbePoint> epoch_time_probe(const InteractionDataset& ds, TrainConfig cfg,
                                                std::span<const std::size_t> k_values, std::size_t epochs = 3) {
  if (epochs < 1) throw ConfigError("probe needs at least one epoch");
  std::vector<ProbePoint> out;
  for (std::size_t K : k_values) {
    cfg.sampler.K = K;
    cfg.validate();
    auto model = init_model(ds.num_users, ds.num_items, cfg.dim, cfg.init_scale, derive_seed(cfg.seed, 0x1417, 0));
    Optimizer opt(model, cfg.optimizer);
    std::vector<double> weights;
    auto negatives = make_negative_sampler(ds, cfg.sampler, weights);
    run_epoch(ds, cfg, model, opt, negatives, 0);
    auto t0 = std::chrono::steady_clock::now();
    for (std::size_t e = 1; e <= epochs; ++e) run_epoch(ds, cfg, model, opt, negatives, e);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back({K, secs / static_cast<double>(epochs)});
  }
  return out;
}

// Coefficient of determination of the least-squares line through (x, y).
inline double linear_fit_r2(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("linear fit needs two equal-length series of >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ShapeError("linear fit needs at least two distinct x values");
  if (syy == 0.0) return 1.0;
  return (sxy * sxy) / (sxx * syy);
}

}  // namespace set2set
