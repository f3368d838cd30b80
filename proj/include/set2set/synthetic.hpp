#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include "data.hpp"
#include "error.hpp"

namespace set2set {

// Latent-factor generator for implicit-feedback logs: each user picks items
// without replacement with logit affinity * <p_u, q_v> + popularity bias,
// where the bias follows a Zipf-like law over a random item ranking.
struct SyntheticConfig {
  std::size_t num_users = 943;
  std::size_t num_items = 1682;
  double mean_interactions = 100.0;
  std::size_t min_interactions = 20;
  std::size_t latent_dim = 8;
  double affinity = 4.0;
  double popularity_exponent = 0.8;
  // Extra low-rated rows per user, as a fraction of its positives.
  double noise_fraction = 0.1;
  std::uint64_t seed = 1;
};

// Ratings are 5 for generated positives and 1..3 for noise rows; timestamps
// increase with generation order.
inline std::vector<std::pair<Interaction, double>> synthetic_ratings(const SyntheticConfig& cfg) {
  if (cfg.num_users == 0 || cfg.num_items < 2 || cfg.latent_dim == 0) throw ConfigError("bad synthetic shape");
  if (!(cfg.mean_interactions >= 1.0)) throw ConfigError("mean_interactions must be >= 1");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim)));

  std::vector<double> p(cfg.num_users * cfg.latent_dim), q(cfg.num_items * cfg.latent_dim);
  for (auto& x : p) x = normal(rng);
  for (auto& x : q) x = normal(rng);
  std::vector<std::size_t> rank(cfg.num_items);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> bias(cfg.num_items);
  for (std::size_t v = 0; v < cfg.num_items; ++v) {
    bias[v] = -cfg.popularity_exponent * std::log(static_cast<double>(rank[v]) + 1.0);
  }

  const std::size_t max_n = std::max<std::size_t>(cfg.min_interactions, cfg.num_items / 2);
  const double sigma = 0.8;
  std::lognormal_distribution<double> count_dist(std::log(cfg.mean_interactions) - 0.5 * sigma * sigma, sigma);
  std::extreme_value_distribution<double> gumbel(0.0, 1.0);
  std::uniform_int_distribution<int> low(1, 3);
  std::uniform_int_distribution<std::size_t> any_item(0, cfg.num_items - 1);

  std::vector<std::pair<Interaction, double>> rows;
  std::vector<std::pair<double, ItemId>> keys(cfg.num_items);
  std::int64_t clock = 1'000'000'000;
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    auto n = static_cast<std::size_t>(std::llround(count_dist(rng)));
    n = std::clamp(n, cfg.min_interactions, max_n);
    for (std::size_t v = 0; v < cfg.num_items; ++v) {
      double s = 0.0;
      for (std::size_t d = 0; d < cfg.latent_dim; ++d) s += p[u * cfg.latent_dim + d] * q[v * cfg.latent_dim + d];
      keys[v] = {cfg.affinity * s + bias[v] + gumbel(rng), static_cast<ItemId>(v)};
    }
    std::partial_sort(keys.begin(), keys.begin() + n, keys.end(), std::greater<>());
    std::vector<char> chosen(cfg.num_items, 0);
    for (std::size_t k = 0; k < n; ++k) {
      chosen[keys[k].second] = 1;
      rows.push_back({{static_cast<UserId>(u), keys[k].second, clock++}, 5.0});
    }
    const auto noise = static_cast<std::size_t>(cfg.noise_fraction * static_cast<double>(n));
    for (std::size_t k = 0; k < noise; ++k) {
      auto v = static_cast<ItemId>(any_item(rng));
      if (chosen[v]) continue;
      rows.push_back({{static_cast<UserId>(u), v, clock++}, static_cast<double>(low(rng))});
    }
  }
  return rows;
}

inline std::vector<Interaction> synthetic_interactions(const SyntheticConfig& cfg, double rating_threshold = 4.0) {
  std::vector<Interaction> out;
  for (const auto& [x, r] : synthetic_ratings(cfg))
    if (r >= rating_threshold) out.push_back(x);
  return out;
}

inline void write_ratings(std::ostream& os, const std::vector<std::pair<Interaction, double>>& rows, FileFormat format) {
  const char sep = separator(format);
  for (const auto& [x, r] : rows) {
    os << 'u' << x.user << sep << 'i' << x.item << sep << r;
    if (x.timestamp) os << sep << *x.timestamp;
    os << '\n';
  }
}

}  // namespace set2set
