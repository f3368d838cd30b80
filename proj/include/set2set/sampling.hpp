#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "error.hpp"

namespace set2set {

using Rng = std::mt19937_64;

enum class NegativeMode { uniform, popularity };

struct SamplerConfig {
  std::size_t L = 2;
  std::size_t K = 5;
  NegativeMode neg_mode = NegativeMode::uniform;
  bool mask_enabled = false;
  double mask_keep_prob = 0.5;
  // Added to every item's train count before normalizing (popularity mode).
  double popularity_smoothing = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (L < 1) throw ConfigError("L must be >= 1");
    if (K < 1) throw ConfigError("K must be >= 1");
    if (mask_enabled && L < 2) throw ConfigError("the adaptive mask needs L >= 2");
    if (!(mask_keep_prob > 0.0 && mask_keep_prob <= 1.0)) throw ConfigError("mask_keep_prob must be in (0, 1]");
    if (!(popularity_smoothing >= 0.0)) throw ConfigError("popularity_smoothing must be >= 0");
  }
};

struct SetSample {
  UserId user = 0;
  std::vector<ItemId> pos_items;
  std::vector<ItemId> neg_items;
  std::optional<std::vector<std::uint8_t>> mask;

  std::span<const std::uint8_t> mask_view() const {
    return mask ? std::span<const std::uint8_t>(*mask) : std::span<const std::uint8_t>();
  }
};

// splitmix64 finalizer over the three inputs; gives independent streams per
// (base seed, worker, epoch).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t worker, std::uint64_t epoch) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ worker) ^ (epoch * 0x632be59bd9b4e019ull));
}

// Draws unobserved items for a user, with replacement. Uniform mode draws
// uniformly over the complement of train(u); popularity mode draws from the
// given weights restricted to that complement.
class NegativeSampler {
public:
  NegativeSampler(const InteractionDataset& ds, NegativeMode mode, std::span<const double> weights = {})
      : ds_(&ds), mode_(mode) {
    if (mode_ == NegativeMode::popularity) {
      if (weights.size() != ds.num_items) throw ConfigError("popularity weights must have num_items entries");
      cumulative_.resize(weights.size());
      double acc = 0.0;
      for (std::size_t v = 0; v < weights.size(); ++v) {
        if (!(weights[v] >= 0.0)) throw ConfigError("popularity weights must be non-negative");
        acc += weights[v];
        cumulative_[v] = acc;
      }
      weights_.assign(weights.begin(), weights.end());
      if (!(acc > 0.0)) throw ConfigError("popularity weights sum to zero");
    }
  }

  NegativeMode mode() const { return mode_; }

  void sample(UserId u, std::size_t K, Rng& rng, std::vector<ItemId>& out) const {
    out.clear();
    auto observed = ds_->train.row(u);
    const std::size_t n_items = ds_->num_items;
    if (observed.size() >= n_items) throw DegenerateUserError(u);
    if (mode_ == NegativeMode::uniform) {
      sample_uniform(observed, K, rng, out);
    } else {
      sample_popularity(u, observed, K, rng, out);
    }
  }

private:
  void sample_uniform(std::span<const ItemId> observed, std::size_t K, Rng& rng, std::vector<ItemId>& out) const {
    const std::size_t n_items = ds_->num_items;
    const std::size_t free = n_items - observed.size();
    if (observed.size() * 2 <= n_items) {
      std::uniform_int_distribution<std::size_t> pick(0, n_items - 1);
      while (out.size() < K) {
        auto v = static_cast<ItemId>(pick(rng));
        if (!std::binary_search(observed.begin(), observed.end(), v)) out.push_back(v);
      }
      return;
    }
    // Dense user: map a uniform rank in the complement to its item id.
    std::uniform_int_distribution<std::size_t> pick(0, free - 1);
    while (out.size() < K) {
      std::size_t v = pick(rng);
      for (auto t : observed) {
        if (t <= v) ++v;
        else break;
      }
      out.push_back(static_cast<ItemId>(v));
    }
  }

  void sample_popularity(UserId u, std::span<const ItemId> observed, std::size_t K, Rng& rng,
                         std::vector<ItemId>& out) const {
    const double total = cumulative_.back();
    double blocked = 0.0;
    for (auto t : observed) blocked += weights_[t];
    const double free_mass = total - blocked;
    if (!(free_mass > total * 1e-12)) throw DegenerateUserError(u);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (free_mass >= 0.25 * total) {
      while (out.size() < K) {
        double x = unit(rng) * total;
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
        if (it == cumulative_.end()) continue;
        auto v = static_cast<ItemId>(it - cumulative_.begin());
        if (!std::binary_search(observed.begin(), observed.end(), v)) out.push_back(v);
      }
      return;
    }
    // Most mass is observed: sample directly from the restricted weights.
    std::vector<ItemId> ids;
    std::vector<double> cum;
    double acc = 0.0;
    for (std::size_t v = 0; v < weights_.size(); ++v) {
      if (weights_[v] <= 0.0 || std::binary_search(observed.begin(), observed.end(), static_cast<ItemId>(v))) continue;
      acc += weights_[v];
      ids.push_back(static_cast<ItemId>(v));
      cum.push_back(acc);
    }
    while (out.size() < K) {
      double x = unit(rng) * acc;
      auto it = std::upper_bound(cum.begin(), cum.end(), x);
      if (it == cum.end()) continue;
      out.push_back(ids[it - cum.begin()]);
    }
  }

  const InteractionDataset* ds_;
  NegativeMode mode_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

inline std::vector<ItemId> sample_unobserved(const InteractionDataset& ds, UserId u, std::size_t K, NegativeMode mode,
                                             Rng& rng, std::span<const double> weights = {}) {
  NegativeSampler sampler(ds, mode, weights);
  std::vector<ItemId> out;
  sampler.sample(u, K, rng, out);
  return out;
}

// One epoch of observed-item chunks. Chunk c belongs to users[c] and holds
// items[c*L .. c*L+L); the last pad_count[c] slots of a chunk are padding
// resampled from train(u).
struct EpochSchedule {
  std::size_t L = 0;
  std::vector<UserId> users;
  std::vector<ItemId> items;
  std::vector<std::uint32_t> pad_count;

  std::size_t size() const { return users.size(); }
  std::span<const ItemId> chunk(std::size_t c) const { return std::span<const ItemId>(items).subspan(c * L, L); }
};

// Shuffles each user's train list, cuts it into ceil(n/L) chunks, pads the
// last short chunk with uniform draws from train(u), then shuffles the order
// of all chunks (and therefore of users).
inline EpochSchedule epoch_schedule(const InteractionDataset& ds, std::size_t L, Rng& rng) {
  if (L < 1) throw ConfigError("L must be >= 1");
  EpochSchedule chunks;
  chunks.L = L;
  std::vector<UserId> user_order(ds.num_users);
  std::iota(user_order.begin(), user_order.end(), UserId{0});
  std::shuffle(user_order.begin(), user_order.end(), rng);

  std::vector<ItemId> buf;
  for (UserId u : user_order) {
    auto row = ds.train.row(u);
    if (row.empty()) continue;
    buf.assign(row.begin(), row.end());
    std::shuffle(buf.begin(), buf.end(), rng);
    const std::size_t n = buf.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t start = 0; start < n; start += L) {
      std::uint32_t pad = 0;
      for (std::size_t k = 0; k < L; ++k) {
        if (start + k < n) {
          chunks.items.push_back(buf[start + k]);
        } else {
          chunks.items.push_back(row[pick(rng)]);
          ++pad;
        }
      }
      chunks.users.push_back(u);
      chunks.pad_count.push_back(pad);
    }
  }

  std::vector<std::size_t> perm(chunks.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  EpochSchedule out;
  out.L = L;
  out.users.reserve(perm.size());
  out.items.reserve(chunks.items.size());
  out.pad_count.reserve(perm.size());
  for (auto c : perm) {
    out.users.push_back(chunks.users[c]);
    auto ch = chunks.chunk(c);
    out.items.insert(out.items.end(), ch.begin(), ch.end());
    out.pad_count.push_back(chunks.pad_count[c]);
  }
  return out;
}

// Bernoulli(keep_prob) per slot; if fewer than two survive, randomly chosen
// masked slots are switched on until exactly two survive.
inline std::vector<std::uint8_t> generate_mask(std::size_t L, double keep_prob, Rng& rng) {
  if (L < 2) throw ConfigError("mask needs L >= 2");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("keep_prob must be in (0, 1]");
  std::vector<std::uint8_t> mask(L, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t kept = 0;
  for (auto& m : mask) {
    m = unit(rng) < keep_prob ? 1 : 0;
    kept += m;
  }
  while (kept < 2) {
    std::vector<std::size_t> off;
    for (std::size_t i = 0; i < L; ++i)
      if (!mask[i]) off.push_back(i);
    std::uniform_int_distribution<std::size_t> pick(0, off.size() - 1);
    mask[off[pick(rng)]] = 1;
    ++kept;
  }
  return mask;
}

// Users with fewer than two train items get no mask even when masking is on.
inline SetSample draw_sample(const InteractionDataset& ds, UserId user, std::span<const ItemId> pos_chunk,
                             const SamplerConfig& config, const NegativeSampler& negatives, Rng& rng) {
  if (pos_chunk.size() != config.L) throw ShapeError("positive chunk size differs from L");
  SetSample s;
  s.user = user;
  s.pos_items.assign(pos_chunk.begin(), pos_chunk.end());
  negatives.sample(user, config.K, rng, s.neg_items);
  if (config.mask_enabled && ds.train.row(user).size() >= 2) {
    s.mask = generate_mask(config.L, config.mask_keep_prob, rng);
  }
  return s;
}

}  // namespace set2set
