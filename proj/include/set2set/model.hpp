#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace set2set {

// Row-major dense matrix of doubles.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::span<const double> row(std::size_t i) const { return std::span<const double>(data_).subspan(i * cols_, cols_); }
  std::span<double> row(std::size_t i) { return std::span<double>(data_).subspan(i * cols_, cols_); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) sum += a[k] * b[k];
  return sum;
}

// Inner-product preference model: score(u, v) = <user_emb[u], item_emb[v]>.
// No bias terms.
struct EmbeddingModel {
  std::size_t dim = 0;
  Matrix user_emb;
  Matrix item_emb;

  std::size_t num_users() const { return user_emb.rows(); }
  std::size_t num_items() const { return item_emb.rows(); }

  friend bool operator==(const EmbeddingModel&, const EmbeddingModel&) = default;
};

// Entries i.i.d. Normal(0, init_scale^2), users first then items, from one
// mt19937_64 stream seeded with `seed`.
inline EmbeddingModel init_model(std::size_t num_users, std::size_t num_items, std::size_t dim, double init_scale,
                                 std::uint64_t seed) {
  if (num_users == 0 || num_items == 0) throw ConfigError("model needs at least one user and one item");
  if (dim == 0) throw ConfigError("embedding dimension must be >= 1");
  if (!(init_scale > 0.0) || !std::isfinite(init_scale)) throw ConfigError("init_scale must be > 0");

  EmbeddingModel m{dim, Matrix(num_users, dim), Matrix(num_items, dim)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_scale);
  for (auto& x : m.user_emb.data()) x = normal(rng);
  for (auto& x : m.item_emb.data()) x = normal(rng);
  return m;
}

inline void check_user(const EmbeddingModel& m, std::size_t u) {
  if (u >= m.num_users()) throw IndexError("user id " + std::to_string(u) + " out of range");
}

inline void check_item(const EmbeddingModel& m, std::size_t v) {
  if (v >= m.num_items()) throw IndexError("item id " + std::to_string(v) + " out of range");
}

inline double score(const EmbeddingModel& m, std::size_t u, std::size_t v) {
  check_user(m, u);
  check_item(m, v);
  return dot(m.user_emb.row(u), m.item_emb.row(v));
}

inline void score_all_items(const EmbeddingModel& m, std::size_t u, std::span<double> out) {
  check_user(m, u);
  if (out.size() != m.num_items()) throw ShapeError("score buffer must have num_items entries");
  auto eu = m.user_emb.row(u);
  for (std::size_t v = 0; v < m.num_items(); ++v) out[v] = dot(eu, m.item_emb.row(v));
}

inline std::vector<double> score_all_items(const EmbeddingModel& m, std::size_t u) {
  std::vector<double> out(m.num_items());
  score_all_items(m, u, out);
  return out;
}

inline bool all_finite(const EmbeddingModel& m) {
  for (double x : m.user_emb.data())
    if (!std::isfinite(x)) return false;
  for (double x : m.item_emb.data())
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace set2set
