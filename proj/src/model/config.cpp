#include "avsep/model/config.hpp"

#include <cmath>

namespace avsep::model {

using nn::LayerKind;
using nn::LayerSpec;
using nn::Stride;

int ModelConfig::conv_width() const { return static_cast<int>(std::lround(1536.0 / width_scale)); }

void ModelConfig::validate() const {
  require(width_scale >= 1, "model: width_scale must be >= 1");
  require(video_dim > 0 && emb_dim > 0 && freq_bins > 1, "model: dimensions must be positive");
  require(blstm_hidden > 0 && fc_fusion_width > 0 && phase_hidden > 0, "model: widths must be positive");
  require(embedder_min_frames > 0, "model: embedder_min_frames must be positive");
}

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.width_scale = 1;
  c.video_dim = 512;
  c.emb_dim = 256;
  c.freq_bins = 257;
  c.blstm_hidden = 400;
  c.fc_fusion_width = 600;
  c.phase_hidden = 512;
  return c;
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

namespace {

LayerSpec fc(const char* name, int filters, bool bias = true) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::Fc;
  s.filters = filters;
  s.bias = bias;
  return s;
}

LayerSpec simple(const char* name, LayerKind kind) {
  LayerSpec s;
  s.name = name;
  s.kind = kind;
  return s;
}

LayerSpec conv(const char* name, int filters) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::Conv1d;
  s.filters = filters;
  s.kernel = 5;
  s.padding = 2;
  s.depthwise_separable = true;
  s.shortcut = true;
  s.bias = false;
  return s;
}

LayerSpec upconv(const char* name, int filters) {
  LayerSpec s = conv(name, filters);
  s.kind = LayerKind::Conv1dTransposed;
  s.stride = Stride::half();
  s.depthwise_separable = false;
  return s;
}

}  // namespace

std::vector<LayerSpec> video_stream_table(const ModelConfig& cfg) {
  const int c = cfg.conv_width();
  return {fc("fc0", c, false), simple("fc0_bn", LayerKind::BatchNorm), simple("fc0_relu", LayerKind::Relu),
          conv("conv1", c),    conv("conv2", c),    upconv("conv3", c), conv("conv4", c),
          conv("conv5", c),    conv("conv6", c),    upconv("conv7", c), conv("conv8", c),
          conv("conv9", c),    fc("fc10", cfg.emb_dim)};
}

std::vector<LayerSpec> audio_stream_table(const ModelConfig& cfg) {
  const int c = cfg.conv_width();
  return {fc("fc0", c, false), simple("fc0_bn", LayerKind::BatchNorm), simple("fc0_relu", LayerKind::Relu),
          conv("conv1", c),    conv("conv2", c),
          conv("conv3", c),    conv("conv4", c),
          conv("conv5", c),    fc("fc6", cfg.emb_dim)};
}

}  // namespace avsep::model
