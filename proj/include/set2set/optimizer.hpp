#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "error.hpp"
#include "loss.hpp"
#include "model.hpp"

namespace set2set {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Applied only to rows touched in a step.
  double l2_reg = 1e-4;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
    if (!(l2_reg >= 0.0)) throw ConfigError("l2_reg must be >= 0");
    if (kind == OptimizerKind::adam) {
      if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("adam betas must be in [0, 1)");
      }
      if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
    }
  }
};

// Sparse ascent on the objective. Each touched row moves along
// grad - l2_reg * row; Adam keeps lazy per-row moments and a global step
// count for bias correction.
class Optimizer {
public:
  Optimizer(const EmbeddingModel& model, const OptimizerConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.kind == OptimizerKind::adam) {
      m_user_ = Matrix(model.num_users(), model.dim);
      v_user_ = Matrix(model.num_users(), model.dim);
      m_item_ = Matrix(model.num_items(), model.dim);
      v_item_ = Matrix(model.num_items(), model.dim);
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }

  void step(EmbeddingModel& model, const SparseGradient& grad) {
    if (grad.dim != model.dim) throw ShapeError("gradient dimension differs from the model");
    ++t_;
    if (cfg_.kind == OptimizerKind::adam) {
      bias1_ = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      bias2_ = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    }
    for (std::size_t k = 0; k < grad.users.size(); ++k) {
      const auto u = grad.users[k];
      if (cfg_.kind == OptimizerKind::adam) {
        update_row(model.user_emb.row(u), grad.user_grad(k), m_user_.row(u), v_user_.row(u));
      } else {
        update_row(model.user_emb.row(u), grad.user_grad(k), {}, {});
      }
    }
    for (std::size_t k = 0; k < grad.items.size(); ++k) {
      const auto v = grad.items[k];
      if (cfg_.kind == OptimizerKind::adam) {
        update_row(model.item_emb.row(v), grad.item_grad(k), m_item_.row(v), v_item_.row(v));
      } else {
        update_row(model.item_emb.row(v), grad.item_grad(k), {}, {});
      }
    }
  }

private:
  void update_row(std::span<double> theta, std::span<const double> ascent, std::span<double> m,
                  std::span<double> v) const {
    for (std::size_t d = 0; d < theta.size(); ++d) {
      // descent direction on -objective + l2/2 |theta|^2
      const double g = -ascent[d] + cfg_.l2_reg * theta[d];
      if (cfg_.kind == OptimizerKind::sgd) {
        theta[d] -= cfg_.lr * g;
      } else {
        m[d] = cfg_.beta1 * m[d] + (1.0 - cfg_.beta1) * g;
        v[d] = cfg_.beta2 * v[d] + (1.0 - cfg_.beta2) * g * g;
        theta[d] -= cfg_.lr * (m[d] / bias1_) / (std::sqrt(v[d] / bias2_) + cfg_.eps);
      }
    }
  }

  OptimizerConfig cfg_;
  Matrix m_user_, v_user_, m_item_, v_item_;
  std::uint64_t t_ = 0;
  double bias1_ = 1.0;
  double bias2_ = 1.0;
};

}  // namespace set2set
