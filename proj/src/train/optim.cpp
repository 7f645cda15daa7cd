#include "avsep/train/optim.hpp"

#include <cmath>
#include <limits>

namespace avsep::train {

void OptimizerConfig::validate() const {
  require(kind == "adam" || kind == "sgd", "optimizer: kind must be adam or sgd, got " + kind);
  require(lr >= 0.0, "optimizer: negative learning rate");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "optimizer: betas must be in [0, 1)");
  require(eps > 0.0, "optimizer: eps must be positive");
  require(patience >= 1, "optimizer: patience must be at least 1");
  require(decay > 0.0 && decay <= 1.0, "optimizer: decay must be in (0, 1]");
}

Optimizer::Optimizer(OptimizerConfig cfg)
    : cfg_(std::move(cfg)), lr_(cfg_.lr), best_(std::numeric_limits<double>::infinity()) {
  cfg_.validate();
}

Optimizer::StepInfo Optimizer::step(const nn::ParamSet& params) {
  const nn::ParamSet train = params.trainable();
  StepInfo info;
  double sq = 0.0;
  for (nn::Param* p : train.items()) {
    nn::check_finite(p->grad, "gradient of " + p->name);
    sq += static_cast<double>(p->grad.squaredNorm());
  }
  info.grad_norm = std::sqrt(sq);
  if (cfg_.clip_norm > 0.0 && info.grad_norm > cfg_.clip_norm) info.clip_scale = cfg_.clip_norm / info.grad_norm;
  const Real scale = static_cast<Real>(info.clip_scale);
  const Real lr = static_cast<Real>(lr_);

  double update_sq = 0.0;
  for (nn::Param* p : train.items()) {
    const Mat g = p->grad * scale;
    Mat update;
    if (cfg_.kind == "sgd") {
      update = g * lr;
    } else {
      Moments& mo = moments_[p->name];
      if (mo.m.rows() != g.rows() || mo.m.cols() != g.cols()) {
        mo.m = Mat::Zero(g.rows(), g.cols());
        mo.v = Mat::Zero(g.rows(), g.cols());
        mo.steps = 0;
      }
      ++mo.steps;
      const Real b1 = static_cast<Real>(cfg_.beta1), b2 = static_cast<Real>(cfg_.beta2);
      mo.m = b1 * mo.m + (1 - b1) * g;
      mo.v = b2 * mo.v + (1 - b2) * g.cwiseAbs2();
      const Real c1 = 1 - static_cast<Real>(std::pow(cfg_.beta1, static_cast<double>(mo.steps)));
      const Real c2 = 1 - static_cast<Real>(std::pow(cfg_.beta2, static_cast<double>(mo.steps)));
      const Real eps = static_cast<Real>(cfg_.eps);
      update = lr * (mo.m / c1).array() / ((mo.v / c2).array().sqrt() + eps);
    }
    update_sq += static_cast<double>(update.squaredNorm());
    p->value -= update;
  }
  info.update_norm = std::sqrt(update_sq);
  return info;
}

bool Optimizer::observe_validation(double loss) {
  if (loss < best_) {
    best_ = loss;
    bad_ = 0;
    return false;
  }
  if (++bad_ < cfg_.patience) return false;
  bad_ = 0;
  const double next = std::max(cfg_.min_lr, lr_ * cfg_.decay);
  const bool changed = next < lr_;
  lr_ = next;
  return changed;
}

}  // namespace avsep::train
