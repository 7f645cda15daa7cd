#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "avsep/nn/layers.hpp"

namespace avsep::nn {

enum class LayerKind { Fc, Conv1d, Conv1dTransposed, BatchNorm, Relu, Sigmoid };

// Integer stride, or the fractional 1/2 that denotes a transposed layer.
struct Stride {
  int num = 1;
  int den = 1;
  static constexpr Stride one() { return {1, 1}; }
  static constexpr Stride half() { return {1, 2}; }
  bool fractional() const { return den > 1; }
};

// One row of a layer table. For conv kinds, `shortcut` means the row
// expands to conv -> batch norm -> ReLU -> residual add.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Fc;
  int filters = 0;
  int kernel = 1;
  Stride stride = Stride::one();
  int padding = 0;
  bool depthwise_separable = false;
  bool shortcut = false;
  bool bias = true;
};

Eigen::Index output_length(const LayerSpec& spec, Eigen::Index t);

// conv -> BN -> ReLU, plus a skip path. The skip is the identity when
// shapes agree, otherwise nearest-neighbour upsampling and a learned 1x1
// projection.
class ResidualBlock {
public:
  using Conv = std::variant<SeparableConv1d, Conv1d, ConvTranspose1d>;

  ResidualBlock() = default;
  ResidualBlock(const LayerSpec& spec, int in_channels, Rng& rng);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);

private:
  Conv conv_;
  BatchNorm1d bn_;
  Relu relu_;
  int upsample_ = 1;
  bool project_ = false;
  Linear projection_;
};

class Layer {
public:
  using Impl = std::variant<Linear, SeparableConv1d, Conv1d, ConvTranspose1d, BatchNorm1d, Relu, Sigmoid, ResidualBlock>;

  Layer() = default;
  Layer(const LayerSpec& spec, int in_channels, Rng& rng);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);

  const LayerSpec& spec() const { return spec_; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  Impl& impl() { return impl_; }

private:
  LayerSpec spec_;
  int in_channels_ = 0;
  int out_channels_ = 0;
  Impl impl_;
};

// Validates input width and parameter finiteness, then runs the layer.
Batch run_layer(Layer& layer, const Batch& x, Mode mode);

class Stack {
public:
  Stack() = default;
  Stack(const std::string& prefix, const std::vector<LayerSpec>& table, int in_channels, Rng& rng);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return layers_.empty() ? in_channels_ : layers_.back().out_channels(); }
  std::vector<Layer>& layers() { return layers_; }
  Eigen::Index output_length(Eigen::Index t) const;

private:
  int in_channels_ = 0;
  std::vector<Layer> layers_;
};

}  // namespace avsep::nn
