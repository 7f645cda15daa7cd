#include "avsep/nn/stack.hpp"

namespace avsep::nn {

Eigen::Index output_length(const LayerSpec& spec, Eigen::Index t) {
  switch (spec.kind) {
    case LayerKind::Conv1d:
      return (t + 2 * spec.padding - spec.kernel) / spec.stride.num + 1;
    case LayerKind::Conv1dTransposed:
      return t * spec.stride.den;
    default:
      return t;
  }
}

namespace {

ResidualBlock::Conv make_conv(const LayerSpec& spec, int in, Rng& rng) {
  if (spec.kind == LayerKind::Conv1dTransposed)
    return ConvTranspose1d(spec.name + ".conv", in, spec.filters, spec.kernel, spec.padding, rng);
  if (spec.depthwise_separable)
    return SeparableConv1d(spec.name + ".conv", in, spec.filters, spec.kernel, spec.padding, rng);
  return Conv1d(spec.name + ".conv", in, spec.filters, spec.kernel, spec.padding, false, rng);
}

}  // namespace

ResidualBlock::ResidualBlock(const LayerSpec& spec, int in_channels, Rng& rng)
    : conv_(make_conv(spec, in_channels, rng)), bn_(spec.name + ".bn", spec.filters) {
  upsample_ = spec.kind == LayerKind::Conv1dTransposed ? spec.stride.den : 1;
  project_ = upsample_ != 1 || in_channels != spec.filters;
  if (project_) projection_ = Linear(spec.name + ".shortcut", in_channels, spec.filters, false, rng);
}

Batch ResidualBlock::forward(const Batch& x, Mode mode) {
  Batch h = std::visit([&](auto& c) { return c.forward(x, mode); }, conv_);
  h = relu_.forward(bn_.forward(h, mode), mode);
  Batch skip = upsample_ > 1 ? upsample_nearest(x, upsample_) : x;
  if (project_) skip = projection_.forward(skip, mode);
  for (std::size_t i = 0; i < h.size(); ++i) {
    require_shape(h[i].rows() == skip[i].rows() && h[i].cols() == skip[i].cols(),
                  "ResidualBlock: shortcut shape does not match the conv path");
    h[i] += skip[i];
  }
  return h;
}

Batch ResidualBlock::backward(const Batch& dy) {
  Batch dx = std::visit([&](auto& c) { return c.backward(bn_.backward(relu_.backward(dy))); }, conv_);
  Batch dskip = project_ ? projection_.backward(dy) : dy;
  if (upsample_ > 1) dskip = upsample_nearest_backward(dskip, upsample_);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dskip[i];
  return dx;
}

void ResidualBlock::collect(ParamSet& ps) {
  std::visit([&](auto& c) { c.collect(ps); }, conv_);
  bn_.collect(ps);
  if (project_) projection_.collect(ps);
}

Layer::Layer(const LayerSpec& spec, int in_channels, Rng& rng) : spec_(spec), in_channels_(in_channels) {
  require(in_channels > 0, "Layer " + spec.name + ": input channel count must be positive");
  switch (spec.kind) {
    case LayerKind::Fc:
      require(spec.filters > 0, "Layer " + spec.name + ": fc needs filters > 0");
      impl_ = Linear(spec.name, in_channels, spec.filters, spec.bias, rng);
      out_channels_ = spec.filters;
      break;
    case LayerKind::Conv1d:
    case LayerKind::Conv1dTransposed: {
      require(spec.filters > 0 && spec.kernel > 0, "Layer " + spec.name + ": conv needs filters and kernel");
      const bool transposed = spec.kind == LayerKind::Conv1dTransposed;
      require(transposed == spec.stride.fractional(),
              "Layer " + spec.name + ": fractional stride is exactly the transposed case");
      require(!transposed || spec.stride.den == 2, "Layer " + spec.name + ": only stride 1/2 is supported");
      require(transposed || spec.stride.num == 1, "Layer " + spec.name + ": only unit integer stride is supported");
      out_channels_ = spec.filters;
      if (spec.shortcut) {
        impl_ = ResidualBlock(spec, in_channels, rng);
      } else if (transposed) {
        impl_ = ConvTranspose1d(spec.name, in_channels, spec.filters, spec.kernel, spec.padding, rng);
      } else if (spec.depthwise_separable) {
        impl_ = SeparableConv1d(spec.name, in_channels, spec.filters, spec.kernel, spec.padding, rng);
      } else {
        impl_ = Conv1d(spec.name, in_channels, spec.filters, spec.kernel, spec.padding, spec.bias, rng);
      }
      break;
    }
    case LayerKind::BatchNorm:
      impl_ = BatchNorm1d(spec.name, in_channels);
      out_channels_ = in_channels;
      break;
    case LayerKind::Relu:
      impl_ = Relu{};
      out_channels_ = in_channels;
      break;
    case LayerKind::Sigmoid:
      impl_ = Sigmoid{};
      out_channels_ = in_channels;
      break;
  }
}

Batch Layer::forward(const Batch& x, Mode mode) {
  return std::visit([&](auto& l) { return l.forward(x, mode); }, impl_);
}

Batch Layer::backward(const Batch& dy) {
  return std::visit([&](auto& l) { return l.backward(dy); }, impl_);
}

void Layer::collect(ParamSet& ps) {
  std::visit([&](auto& l) { l.collect(ps); }, impl_);
}

Batch run_layer(Layer& layer, const Batch& x, Mode mode) {
  for (const Mat& xi : x) {
    require_shape(xi.cols() == layer.in_channels(), "run_layer " + layer.spec().name + ": expected " +
                                                        std::to_string(layer.in_channels()) + " channels, got " +
                                                        std::to_string(xi.cols()));
    require(xi.rows() > 0, "run_layer " + layer.spec().name + ": empty sequence");
  }
  ParamSet ps;
  layer.collect(ps);
  for (const Param* p : ps.items())
    if (!p->value.allFinite()) throw NonFinite("run_layer " + layer.spec().name + ": non-finite parameter " + p->name);
  return layer.forward(x, mode);
}

Stack::Stack(const std::string& prefix, const std::vector<LayerSpec>& table, int in_channels, Rng& rng)
    : in_channels_(in_channels) {
  int c = in_channels;
  layers_.reserve(table.size());
  for (LayerSpec spec : table) {
    spec.name = prefix + "." + spec.name;
    layers_.emplace_back(spec, c, rng);
    c = layers_.back().out_channels();
  }
}

Batch Stack::forward(const Batch& x, Mode mode) {
  Batch h = x;
  for (Layer& l : layers_) {
    h = l.forward(h, mode);
    check_finite(h, l.spec().name);
  }
  return h;
}

Batch Stack::backward(const Batch& dy) {
  Batch g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->backward(g);
  return g;
}

void Stack::collect(ParamSet& ps) {
  for (Layer& l : layers_) l.collect(ps);
}

Eigen::Index Stack::output_length(Eigen::Index t) const {
  for (const Layer& l : layers_) t = nn::output_length(l.spec(), t);
  return t;
}

}  // namespace avsep::nn
