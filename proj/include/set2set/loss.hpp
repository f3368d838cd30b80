#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "sampling.hpp"

namespace set2set {

// All objectives are reported as values to be maximized.
enum class Objective { bpr, set2set, set2set_easy };

// Which observed-set summary the set-to-set term compares against.
enum class SetSummary { summary, easy };

struct LossConfig {
  Objective objective = Objective::set2set;
  double lambda = 1.0;
  double beta = 0.5;
  bool mask_enabled = false;
  // Floor on every ln F argument; gradients through the floor are zero.
  double f_floor = 1e-12;
  // Keep the D(x_i, x_i) = 0.5 term inside the observed-set summary.
  bool include_self_pairs = true;
  // Divide the observed-set summary by the surviving slot count instead of L.
  bool normalize_by_survivors = false;
  // When false the item-to-set term is dropped from the total (lambda * l3 only).
  bool item_to_set = true;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be finite and > 0");
    if (!(f_floor > 0.0 && f_floor <= 1e-6)) throw ConfigError("f_floor must be in (0, 1e-6]");
  }
};

struct LossBreakdown {
  double l2 = 0.0;
  double l3 = 0.0;
  double total = 0.0;
  std::size_t hard_neg_index = 0;
  std::size_t easy_pos_index = 0;
};

struct Selection {
  double value = 0.0;
  std::size_t index = 0;
};

using MaskView = std::span<const std::uint8_t>;

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

// D(x, y) = sigmoid(x - y).
inline double pref_gain(double x, double y) { return sigmoid(x - y); }

namespace detail {

inline double mask_at(MaskView mask, std::size_t i) { return mask.empty() ? 1.0 : static_cast<double>(mask[i]); }

inline void check_mask(std::size_t L, MaskView mask) {
  if (mask.empty()) return;
  if (mask.size() != L) throw ShapeError("mask length differs from the observed set size");
  std::size_t kept = 0;
  for (auto m : mask) {
    if (m > 1) throw ShapeError("mask entries must be 0 or 1");
    kept += m;
  }
  if (kept < 2) throw ShapeError("mask must keep at least two observed slots");
}

inline std::size_t survivors(std::size_t L, MaskView mask) {
  if (mask.empty()) return L;
  std::size_t kept = 0;
  for (auto m : mask) kept += m;
  return kept;
}

}  // namespace detail

// F(X, y) = sum_i D(x_i, y) * mask_i.
inline double set_compare(std::span<const double> pos, double y, MaskView mask = {}) {
  double f = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) f += pref_gain(pos[i], y) * detail::mask_at(mask, i);
  return f;
}

inline double item_to_set_loss(std::span<const double> pos, std::span<const double> neg, MaskView mask = {},
                               double f_floor = 1e-12) {
  double sum = 0.0;
  for (double y : neg) sum += std::log(std::max(set_compare(pos, y, mask), f_floor));
  return sum;
}

namespace detail {

// ln F of the observed set against its own slot a.
inline double self_log_compare(std::span<const double> pos, std::size_t a, MaskView mask, const LossConfig& cfg) {
  double g = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    if (i == a && !cfg.include_self_pairs) continue;
    g += pref_gain(pos[i], pos[a]) * mask_at(mask, i);
  }
  return std::log(std::max(g, cfg.f_floor));
}

}  // namespace detail

// Average over all L slots of ln F(S+, x_a); the mask acts only inside F.
inline double pos_summary(std::span<const double> pos, MaskView mask = {}, const LossConfig& cfg = {}) {
  double sum = 0.0;
  for (std::size_t a = 0; a < pos.size(); ++a) sum += detail::self_log_compare(pos, a, mask, cfg);
  const double denom = cfg.normalize_by_survivors ? static_cast<double>(detail::survivors(pos.size(), mask))
                                                  : static_cast<double>(pos.size());
  return sum / denom;
}

// max_a ln F(S+, x_a), lowest index on ties.
inline Selection easy_pos_summary(std::span<const double> pos, MaskView mask = {}, const LossConfig& cfg = {}) {
  Selection best{detail::self_log_compare(pos, 0, mask, cfg), 0};
  for (std::size_t a = 1; a < pos.size(); ++a) {
    double v = detail::self_log_compare(pos, a, mask, cfg);
    if (v > best.value) best = {v, a};
  }
  return best;
}

// min_j ln F(S+, y_j), lowest index on ties.
inline Selection hard_neg_summary(std::span<const double> pos, std::span<const double> neg, MaskView mask = {},
                                  double f_floor = 1e-12) {
  Selection best{std::log(std::max(set_compare(pos, neg[0], mask), f_floor)), 0};
  for (std::size_t j = 1; j < neg.size(); ++j) {
    double v = std::log(std::max(set_compare(pos, neg[j], mask), f_floor));
    if (v < best.value) best = {v, j};
  }
  return best;
}

inline double set_to_set_loss(std::span<const double> pos, std::span<const double> neg, double beta,
                              MaskView mask = {}, SetSummary variant = SetSummary::summary,
                              const LossConfig& cfg = {}) {
  const double f_neg = hard_neg_summary(pos, neg, mask, cfg.f_floor).value;
  const double anchor =
      variant == SetSummary::summary ? pos_summary(pos, mask, cfg) : easy_pos_summary(pos, mask, cfg).value;
  return log_sigmoid(f_neg - beta * anchor);
}

// Objective value and its gradient with respect to every score.
struct ScoreGradients {
  LossBreakdown loss;
  std::vector<double> d_pos;
  std::vector<double> d_neg;
};

namespace detail {

inline void check_shapes(std::span<const double> pos, std::span<const double> neg, MaskView mask,
                         const LossConfig& cfg) {
  if (pos.empty() || neg.empty()) throw ShapeError("observed and unobserved sets must be non-empty");
  if (cfg.objective == Objective::bpr) {
    if (pos.size() != 1 || neg.size() != 1) throw ShapeError("bpr objective takes L = K = 1 samples");
    if (!mask.empty()) throw ShapeError("bpr objective takes no mask");
  }
  check_mask(pos.size(), mask);
}

inline ScoreGradients bpr_pass(double x, double y, const LossConfig& cfg, bool want_grad) {
  ScoreGradients out;
  const double d = sigmoid(x - y);
  out.loss.l2 = std::log(std::max(d, cfg.f_floor));
  out.loss.total = out.loss.l2;
  if (want_grad) {
    const double g = d < cfg.f_floor ? 0.0 : sigmoid(y - x);
    out.d_pos = {g};
    out.d_neg = {-g};
  }
  return out;
}

// Single pass computing every term once: the K*L gains feed both the
// item-to-set sum and the hard-negative pick, the L*L gains feed the
// observed-set summary.
inline ScoreGradients set_pass(std::span<const double> pos, std::span<const double> neg, MaskView mask,
                               const LossConfig& cfg, bool want_grad) {
  const std::size_t L = pos.size();
  const std::size_t K = neg.size();
  const bool easy = cfg.objective == Objective::set2set_easy;
  ScoreGradients out;
  auto& loss = out.loss;

  std::vector<double> m(L);
  for (std::size_t i = 0; i < L; ++i) m[i] = mask_at(mask, i);

  // Unobserved side: gains D[j*L + i] = D(x_i, y_j).
  std::vector<double> dn(K * L), fn(K), ln_fn(K);
  for (std::size_t j = 0; j < K; ++j) {
    double f = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      dn[j * L + i] = pref_gain(pos[i], neg[j]);
      f += dn[j * L + i] * m[i];
    }
    fn[j] = f;
    ln_fn[j] = std::log(std::max(f, cfg.f_floor));
    loss.l2 += ln_fn[j];
  }
  std::size_t hard = 0;
  for (std::size_t j = 1; j < K; ++j)
    if (ln_fn[j] < ln_fn[hard]) hard = j;
  loss.hard_neg_index = hard;

  // Observed side: G_a = sum_i m_i D(x_i, x_a).
  std::vector<double> dp(L * L), gp(L), ln_gp(L);
  for (std::size_t a = 0; a < L; ++a) {
    double g = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      dp[a * L + i] = pref_gain(pos[i], pos[a]);
      if (i == a && !cfg.include_self_pairs) continue;
      g += dp[a * L + i] * m[i];
    }
    gp[a] = g;
    ln_gp[a] = std::log(std::max(g, cfg.f_floor));
  }
  const double denom = cfg.normalize_by_survivors ? static_cast<double>(survivors(L, mask)) : static_cast<double>(L);
  double f_pos = 0.0;
  for (double v : ln_gp) f_pos += v;
  f_pos /= denom;
  std::size_t easy_idx = 0;
  for (std::size_t a = 1; a < L; ++a)
    if (ln_gp[a] > ln_gp[easy_idx]) easy_idx = a;
  loss.easy_pos_index = easy_idx;

  const double anchor = easy ? ln_gp[easy_idx] : f_pos;
  const double z = ln_fn[hard] - cfg.beta * anchor;
  loss.l3 = log_sigmoid(z);
  loss.total = (cfg.item_to_set ? loss.l2 : 0.0) + cfg.lambda * loss.l3;
  if (!want_grad) return out;

  out.d_pos.assign(L, 0.0);
  out.d_neg.assign(K, 0.0);

  // d ln F_j scaled by `coef`, flowing to both sides.
  auto push_neg = [&](std::size_t j, double coef) {
    if (coef == 0.0 || fn[j] < cfg.f_floor) return;
    for (std::size_t i = 0; i < L; ++i) {
      const double d = dn[j * L + i];
      const double w = coef * m[i] * d * (1.0 - d) / fn[j];
      out.d_pos[i] += w;
      out.d_neg[j] -= w;
    }
  };
  // d ln G_a scaled by `coef`; the self pair is constant and contributes nothing.
  auto push_pos = [&](std::size_t a, double coef) {
    if (coef == 0.0 || gp[a] < cfg.f_floor) return;
    for (std::size_t i = 0; i < L; ++i) {
      if (i == a) continue;
      const double d = dp[a * L + i];
      const double w = coef * m[i] * d * (1.0 - d) / gp[a];
      out.d_pos[i] += w;
      out.d_pos[a] -= w;
    }
  };

  if (cfg.item_to_set) {
    for (std::size_t j = 0; j < K; ++j) push_neg(j, 1.0);
  }
  const double c = cfg.lambda * sigmoid(-z);
  push_neg(hard, c);
  if (easy) {
    push_pos(easy_idx, -cfg.beta * c);
  } else {
    for (std::size_t a = 0; a < L; ++a) push_pos(a, -cfg.beta * c / denom);
  }
  return out;
}

}  // namespace detail

inline ScoreGradients score_gradients(std::span<const double> pos, std::span<const double> neg, MaskView mask,
                                      const LossConfig& cfg, bool want_grad = true) {
  detail::check_shapes(pos, neg, mask, cfg);
  if (cfg.objective == Objective::bpr) return detail::bpr_pass(pos[0], neg[0], cfg, want_grad);
  return detail::set_pass(pos, neg, mask, cfg, want_grad);
}

inline LossBreakdown total_loss(std::span<const double> pos, std::span<const double> neg, MaskView mask,
                                const LossConfig& cfg) {
  return score_gradients(pos, neg, mask, cfg, false).loss;
}

// Row gradients touched by one or more samples. Rows are kept sorted by id;
// user_grads / item_grads hold dim values per listed row.
struct SparseGradient {
  std::size_t dim = 0;
  std::vector<UserId> users;
  std::vector<double> user_grads;
  std::vector<ItemId> items;
  std::vector<double> item_grads;

  std::span<const double> user_grad(std::size_t k) const {
    return std::span<const double>(user_grads).subspan(k * dim, dim);
  }
  std::span<const double> item_grad(std::size_t k) const {
    return std::span<const double>(item_grads).subspan(k * dim, dim);
  }

  // Index of item v in `items`, or items.size() when absent.
  std::size_t find_item(ItemId v) const {
    auto it = std::lower_bound(items.begin(), items.end(), v);
    return (it != items.end() && *it == v) ? static_cast<std::size_t>(it - items.begin()) : items.size();
  }

  void add(const SparseGradient& other) {
    if (dim == 0) dim = other.dim;
    if (other.dim != dim) throw ShapeError("gradient dimensions differ");
    merge_rows(users, user_grads, other.users, other.user_grads);
    merge_rows(items, item_grads, other.items, other.item_grads);
  }

private:
  void merge_rows(std::vector<std::uint32_t>& ids, std::vector<double>& vals, const std::vector<std::uint32_t>& oids,
                  const std::vector<double>& ovals) {
    std::vector<std::uint32_t> merged_ids;
    std::vector<double> merged_vals;
    merged_ids.reserve(ids.size() + oids.size());
    merged_vals.reserve(vals.size() + ovals.size());
    std::size_t a = 0, b = 0;
    while (a < ids.size() || b < oids.size()) {
      if (b == oids.size() || (a < ids.size() && ids[a] < oids[b])) {
        merged_ids.push_back(ids[a]);
        merged_vals.insert(merged_vals.end(), vals.begin() + a * dim, vals.begin() + (a + 1) * dim);
        ++a;
      } else if (a == ids.size() || oids[b] < ids[a]) {
        merged_ids.push_back(oids[b]);
        merged_vals.insert(merged_vals.end(), ovals.begin() + b * dim, ovals.begin() + (b + 1) * dim);
        ++b;
      } else {
        merged_ids.push_back(ids[a]);
        for (std::size_t k = 0; k < dim; ++k) merged_vals.push_back(vals[a * dim + k] + ovals[b * dim + k]);
        ++a;
        ++b;
      }
    }
    ids = std::move(merged_ids);
    vals = std::move(merged_vals);
  }
};

// Gradient of total_loss with respect to the user row and every item row in
// the sample. The min/max selections are frozen at the forward pass.
inline SparseGradient loss_gradients(const SetSample& sample, const EmbeddingModel& model, const LossConfig& cfg,
                                     LossBreakdown* breakdown = nullptr) {
  const std::size_t dim = model.dim;
  check_user(model, sample.user);
  std::vector<double> pos(sample.pos_items.size()), neg(sample.neg_items.size());
  auto eu = model.user_emb.row(sample.user);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    check_item(model, sample.pos_items[i]);
    pos[i] = dot(eu, model.item_emb.row(sample.pos_items[i]));
  }
  for (std::size_t j = 0; j < neg.size(); ++j) {
    check_item(model, sample.neg_items[j]);
    neg[j] = dot(eu, model.item_emb.row(sample.neg_items[j]));
  }
  auto sg = score_gradients(pos, neg, sample.mask_view(), cfg);
  if (breakdown) *breakdown = sg.loss;

  // Sum score gradients per distinct item; pads and repeated negatives collapse.
  std::vector<std::pair<ItemId, double>> coef;
  coef.reserve(pos.size() + neg.size());
  for (std::size_t i = 0; i < pos.size(); ++i) coef.emplace_back(sample.pos_items[i], sg.d_pos[i]);
  for (std::size_t j = 0; j < neg.size(); ++j) coef.emplace_back(sample.neg_items[j], sg.d_neg[j]);
  std::stable_sort(coef.begin(), coef.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  SparseGradient grad;
  grad.dim = dim;
  grad.users = {sample.user};
  grad.user_grads.assign(dim, 0.0);
  for (std::size_t k = 0; k < coef.size();) {
    const ItemId v = coef[k].first;
    double c = 0.0;
    for (; k < coef.size() && coef[k].first == v; ++k) c += coef[k].second;
    if (!std::isfinite(c)) throw NumericError("score gradient", "non-finite gradient for item " + std::to_string(v));
    auto ev = model.item_emb.row(v);
    grad.items.push_back(v);
    for (std::size_t d = 0; d < dim; ++d) {
      grad.user_grads[d] += c * ev[d];
      grad.item_grads.push_back(c * eu[d]);
    }
  }
  for (double g : grad.user_grads)
    if (!std::isfinite(g)) throw NumericError("user gradient", "non-finite value");
  for (double g : grad.item_grads)
    if (!std::isfinite(g)) throw NumericError("item gradient", "non-finite value");
  return grad;
}

}  // namespace set2set
