#pragma once

#include <map>
#include <string>

#include "avsep/nn/param.hpp"

namespace avsep::train {

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
  int patience = 2;        // validation checks without improvement before halving
  double decay = 0.5;
  double min_lr = 1e-6;

  void validate() const;
};

// Adam or plain SGD over the trainable members of a ParamSet, with global
// gradient-norm clipping and step-size halving on validation plateaus.
// Moments are kept per parameter name, so groups can be frozen and
// unfrozen between phases.
class Optimizer {
public:
  explicit Optimizer(OptimizerConfig cfg = {});

  struct StepInfo {
    double grad_norm = 0.0;    // before clipping
    double clip_scale = 1.0;
    double update_norm = 0.0;
  };
  StepInfo step(const nn::ParamSet& params);

  // Returns true when the step size was just halved.
  bool observe_validation(double loss);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const OptimizerConfig& config() const { return cfg_; }

  struct Moments {
    Mat m, v;
    long steps = 0;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  double best_validation() const { return best_; }
  int bad_checks() const { return bad_; }
  void restore_schedule(double lr, double best, int bad) {
    lr_ = lr;
    best_ = best;
    bad_ = bad;
  }

private:
  OptimizerConfig cfg_;
  double lr_;
  double best_;
  int bad_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace avsep::train
