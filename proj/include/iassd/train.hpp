#pragma once

// Deterministic, resumable training loop for the detector.

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iassd/data_io.hpp"
#include "iassd/detector.hpp"
#include "iassd/errors.hpp"
#include "iassd/nn/checkpoint.hpp"
#include "iassd/nn/optim.hpp"
#include "json.hpp"

namespace iassd {

struct TrainConfig {
  std::size_t steps = 1000;       // 0 leaves the model at its initialization
  double lr = 0.01;
  bool one_cycle = true;
  nn::OptimizerKind optimizer = nn::OptimizerKind::kAdam;
  std::uint64_t seed = 0;         // scene order, augmentation and random layers
  std::uint64_t model_seed = 0;   // parameter initialization
  bool augment = false;
  AugmentConfig augment_config;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (augment) augment_config.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"steps", t.steps},
          {"lr", t.lr},
          {"one_cycle", t.one_cycle},
          {"optimizer", t.optimizer == nn::OptimizerKind::kAdam ? "adam" : "sgd"},
          {"seed", t.seed},
          {"model_seed", t.model_seed},
          {"augment", t.augment}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {},
                                          const std::string& where = "train") {
  using detail::get_or;
  detail::expect_keys(j, {"steps", "lr", "one_cycle", "optimizer", "seed", "model_seed", "augment"}, where);
  TrainConfig t = std::move(base);
  t.steps = get_or(j, "steps", t.steps, where);
  t.lr = get_or(j, "lr", t.lr, where);
  t.one_cycle = get_or(j, "one_cycle", t.one_cycle, where);
  if (j.contains("optimizer")) {
    try {
      t.optimizer = nn::parse_optimizer(get_or<std::string>(j, "optimizer", "adam", where));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ".optimizer: " + e.what());
    }
  }
  t.seed = get_or(j, "seed", t.seed, where);
  t.model_seed = get_or(j, "model_seed", t.model_seed, where);
  t.augment = get_or(j, "augment", t.augment, where);
  t.validate();
  return t;
}

/// One line of the training log.
inline nlohmann::json to_json(std::size_t step, double lr, const nn::LossBreakdown& b) {
  return {{"step", step},         {"lr", lr},           {"total", b.total},         {"sample", b.sample},
          {"cent", b.cent},       {"cls", b.cls},       {"box", b.box},             {"loc", b.loc},
          {"size", b.size},       {"angle_bin", b.angle_bin}, {"angle_res", b.angle_res}, {"corner", b.corner}};
}

class Trainer {
 public:
  Trainer(DetectorConfig model, TrainConfig train, std::vector<LabeledScene> scenes)
      : train_(std::move(train)),
        model_(std::move(model), train_.model_seed),
        opt_(nn::OptimizerConfig{train_.optimizer, train_.lr, train_.one_cycle, train_.steps}),
        scenes_(std::move(scenes)),
        caches_(scenes_.size()) {
    train_.validate();
    if (scenes_.empty()) throw ConfigError("train: no training scenes");
    if (train_.augment) bank_ = build_bank(scenes_);
  }

  const Detector& model() const { return model_; }
  Detector& model() { return model_; }
  const nn::Optimizer& optimizer() const { return opt_; }
  std::size_t step() const { return opt_.step_count(); }
  bool done() const { return step() >= train_.steps; }

  /// Scene used at `step`: a seeded permutation per pass over the data.
  std::size_t scene_for(std::size_t step) const {
    const std::size_t n = scenes_.size();
    const std::size_t epoch = step / n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(Rng::derive(train_.seed, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order[step % n];
  }

  /// One optimizer step; returns the loss breakdown before the update.
  nn::LossBreakdown step_once() {
    const std::size_t s = step();
    const std::size_t idx = scene_for(s);
    const std::uint64_t step_seed = Rng::derive(train_.seed, 1'000'000 + s);
    nn::LossBreakdown b;
    if (train_.augment) {
      const AugmentResult a = augment(scenes_[idx], train_.augment_config, bank_, step_seed);
      b = fit(a.scene, nullptr, step_seed);
    } else {
      b = fit(scenes_[idx], &caches_[idx], step_seed);
    }
    return b;
  }

  /// Runs to completion. `on_step(step, lr, breakdown)` sees every step.
  void run(const std::function<void(std::size_t, double, const nn::LossBreakdown&)>& on_step = {}) {
    while (!done()) {
      const double lr = opt_.current_lr();
      const std::size_t s = step();
      const nn::LossBreakdown b = step_once();
      if (on_step) on_step(s, lr, b);
    }
  }

  nn::Checkpoint checkpoint() const {
    nn::Checkpoint ck;
    model_.save_to(ck);
    ck.scalars = {{"step", opt_.step_count()}, {"train", to_json(train_)}};
    const nn::NamedParams np = model_.parameters();
    const auto& m = opt_.first_moments();
    const auto& v = opt_.second_moments();
    for (std::size_t i = 0; i < m.size(); ++i) {
      ck.buffers.push_back({"optim.m." + np.names[i], np.tensors[i].shape(), m[i]});
      ck.buffers.push_back({"optim.v." + np.names[i], np.tensors[i].shape(), v[i]});
    }
    return ck;
  }

  /// Restores parameters, optimizer moments and the step counter.
  void resume(const nn::Checkpoint& ck) {
    model_ = Detector::load_from(ck);
    const nn::NamedParams np = model_.parameters();
    std::vector<std::vector<double>> m, v;
    for (const std::string& name : np.names) {
      const nn::NamedBuffer* bm = ck.find("optim.m." + name);
      const nn::NamedBuffer* bv = ck.find("optim.v." + name);
      if (!bm || !bv) {
        m.clear();
        v.clear();
        break;
      }
      m.push_back(bm->values);
      v.push_back(bv->values);
    }
    opt_.first_moments() = std::move(m);
    opt_.second_moments() = std::move(v);
    opt_.set_step_count(ck.scalars.value("step", std::size_t{0}));
  }

 private:
  nn::LossBreakdown fit(const LabeledScene& scene, SceneCache* cache, std::uint64_t seed) {
    nn::NamedParams np = model_.parameters();
    np.zero_grad();
    ForwardOutput f = model_.forward(scene.cloud, cache, seed);
    nn::LossTerms terms = model_.loss(f, scene.boxes);
    const nn::LossBreakdown b = terms.snapshot();
    nn::check_finite(b);
    nn::backward(terms.total);
    opt_.step(np);
    return b;
  }

  TrainConfig train_;
  Detector model_;
  nn::Optimizer opt_;
  std::vector<LabeledScene> scenes_;
  std::vector<SceneCache> caches_;
  std::vector<BankEntry> bank_;
};

}  // namespace iassd
