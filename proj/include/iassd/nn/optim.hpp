#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iassd/errors.hpp"
#include "iassd/nn/layers.hpp"

namespace iassd::nn {

/// One-cycle schedule: cosine warm-up from max_lr/div_factor to max_lr over
/// the first pct_start of the steps, then cosine annealing down to
/// max_lr/(div_factor*final_div).
struct OneCycle {
  double max_lr = 0.01;
  std::size_t total_steps = 1;
  double pct_start = 0.4;
  double div_factor = 10.0;
  double final_div = 1e4;

  double lr(std::size_t step) const {
    const double start = max_lr / div_factor;
    const double end = start / final_div;
    const double total = static_cast<double>(std::max<std::size_t>(total_steps, 1));
    const double warm = std::max(1.0, std::floor(pct_start * total));
    const double t = static_cast<double>(std::min(step, total_steps));
    auto cosine = [](double from, double to, double frac) {
      return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    };
    if (t < warm) return cosine(start, max_lr, t / warm);
    const double rest = std::max(1.0, total - warm);
    return cosine(max_lr, end, std::min(1.0, (t - warm) / rest));
  }
};

enum class OptimizerKind { kAdam, kSgd };

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 0.01;
  bool one_cycle = true;
  std::size_t total_steps = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam / SGD over a NamedParams list. Moment buffers follow the parameter
/// order and are part of the checkpoint, so resumed runs continue exactly.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }

  double current_lr() const {
    if (!cfg_.one_cycle) return cfg_.lr;
    return OneCycle{cfg_.lr, cfg_.total_steps}.lr(step_);
  }

  void step(NamedParams& params) {
    for (std::size_t i = 0; i < params.tensors.size(); ++i)
      for (double g : params.tensors[i].grad())
        if (!std::isfinite(g)) throw NumericError("optimizer: non-finite gradient in " + params.names[i]);
    if (m_.empty()) {
      for (const auto& t : params.tensors) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
      }
    }
    if (m_.size() != params.tensors.size()) throw std::invalid_argument("optimizer: parameter list changed");
    const double lr = current_lr();
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      auto w = params.tensors[i].mutable_values();
      auto g = params.tensors[i].grad();
      if (cfg_.kind == OptimizerKind::kSgd) {
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
        continue;
      }
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        const double mh = m[k] / bc1;
        const double vh = v[k] / bc2;
        w[k] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

  // State access for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_step_count(std::size_t s) { step_ = s; }

 private:
  OptimizerConfig cfg_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace iassd::nn
