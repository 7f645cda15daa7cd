#pragma once

#include <string>

#include "avsep/nn/param.hpp"

namespace avsep::nn {

// Every layer caches what its backward pass needs during forward();
// backward() is valid for the most recent forward() only and accumulates
// into the parameter gradients.

class Linear {
public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, bool bias, Rng& rng);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);

  int in_channels() const { return static_cast<int>(weight_.value.rows()); }
  int out_channels() const { return static_cast<int>(weight_.value.cols()); }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }

private:
  Param weight_;  // in x out
  Param bias_;    // 1 x out
  bool has_bias_ = true;
  Batch x_;
};

// Per-channel temporal convolution, no bias (always followed by a
// pointwise mix and batch norm).
class DepthwiseConv1d {
public:
  DepthwiseConv1d() = default;
  DepthwiseConv1d(const std::string& name, int channels, int kernel, int padding, Rng& rng);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);
  Eigen::Index output_length(Eigen::Index t) const { return t + 2 * padding_ - kernel_ + 1; }

private:
  Param weight_;  // kernel x channels
  int kernel_ = 0;
  int padding_ = 0;
  Batch x_;
};

enum class PadMode { Zero, Circular };

class Conv1d {
public:
  Conv1d() = default;
  Conv1d(const std::string& name, int in, int out, int kernel, int padding, bool bias, Rng& rng,
         PadMode pad_mode = PadMode::Zero);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);
  Eigen::Index output_length(Eigen::Index t) const {
    return pad_mode_ == PadMode::Circular ? t : t + 2 * padding_ - kernel_ + 1;
  }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return static_cast<int>(weight_.value.cols()); }

private:
  Param weight_;  // (kernel * in) x out; rows [k*in, (k+1)*in) hold tap k
  Param bias_;
  int in_ = 0;
  int kernel_ = 0;
  int padding_ = 0;
  bool has_bias_ = false;
  PadMode pad_mode_ = PadMode::Zero;
  Batch x_;
};

// Stride-1/2 convolution: the input is zero-stuffed by two and convolved,
// giving exactly 2T output rows. Computed without materialising the zeros.
class ConvTranspose1d {
public:
  ConvTranspose1d() = default;
  ConvTranspose1d(const std::string& name, int in, int out, int kernel, int padding, Rng& rng);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);

private:
  Param weight_;  // (kernel * in) x out
  int in_ = 0;
  int kernel_ = 0;
  int padding_ = 0;
  Batch x_;
};

// Statistics per channel over every time step of every sequence in the batch.
class BatchNorm1d {
public:
  BatchNorm1d() = default;
  BatchNorm1d(const std::string& name, int channels, double momentum = 0.99, double eps = 1e-5);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);

  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }
  Param& running_mean() { return running_mean_; }
  Param& running_var() { return running_var_; }

private:
  Param gamma_, beta_;
  Param running_mean_, running_var_;
  double momentum_ = 0.99;
  double eps_ = 1e-5;
  Mode last_mode_ = Mode::Eval;
  Batch xhat_;
  RowVec inv_std_;
};

class Relu {
public:
  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet&) {}

private:
  Batch y_;
};

// Output is kept strictly inside (0, 1) even for saturated inputs.
class Sigmoid {
public:
  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet&) {}

private:
  Batch y_;
};

Real sigmoid_open(Real x);

// Depthwise temporal conv followed by a 1x1 channel mix (no bias).
class SeparableConv1d {
public:
  SeparableConv1d() = default;
  SeparableConv1d(const std::string& name, int in, int out, int kernel, int padding, Rng& rng);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);

private:
  DepthwiseConv1d depthwise_;
  Linear pointwise_;
};

// Nearest-neighbour temporal repeat by an integer factor.
Batch upsample_nearest(const Batch& x, int factor);
Batch upsample_nearest_backward(const Batch& dy, int factor);

}  // namespace avsep::nn
