#pragma once

#include <optional>

#include "avsep/data/mixture.hpp"
#include "avsep/model/network.hpp"
#include "avsep/train/loss.hpp"

namespace avsep::train {

// Network-ready view of one MixSample. The mixture is brought to
// `level_rms` before analysis and the target is scaled by the same gain,
// so targets and predictions live on one scale.
struct PreparedSample {
  std::string sample_id;
  double gain = 1.0;
  dsp::Spectrogram mix;
  SpectralTarget target;
  dsp::Waveform target_audio;  // scaled by `gain`
  Mat video;
  std::optional<Mat> enrollment_magnitude;
  RowVec speaker;  // filled by the caller; zero = absent
};

PreparedSample prepare_sample(const data::MixSample& s, const dsp::StftConfig& stft, double level_rms = 0.1);

// Magnitude spectrogram of an enrollment segment; the embedder normalises
// its level itself.
Mat enrollment_magnitude(const dsp::Waveform& w, const dsp::StftConfig& stft);

}  // namespace avsep::train
