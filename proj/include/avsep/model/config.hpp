#pragma once

#include <vector>

#include "avsep/nn/stack.hpp"

namespace avsep::model {

// Layer widths are the full-size table divided by `width_scale`.
struct ModelConfig {
  int width_scale = 16;
  int video_dim = 32;  // per-frame visual feature size
  int emb_dim = 16;    // speaker embedding and stream output width
  int freq_bins = 33;
  int blstm_hidden = 25;
  int fc_fusion_width = 38;
  int phase_hidden = 64;
  int embedder_min_frames = 100;  // 1 s of 10 ms frames
  // Video frames per spectrogram frame is fixed at 1/4 by the two
  // stride-1/2 layers.

  int conv_width() const;
  int embedder_width() const { return 2 * emb_dim; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  static ModelConfig full();
  static ModelConfig toy();
};

// Video stream: fc0, nine residual convs (conv3 and conv7 transposed), fc10.
std::vector<nn::LayerSpec> video_stream_table(const ModelConfig& cfg);

// Noisy-audio stream: fc0, five residual convs, fc6.
std::vector<nn::LayerSpec> audio_stream_table(const ModelConfig& cfg);

}  // namespace avsep::model
