#include "avsep/train/sample.hpp"

namespace avsep::train {

PreparedSample prepare_sample(const data::MixSample& s, const dsp::StftConfig& stft, double level_rms) {
  PreparedSample p;
  p.sample_id = s.sample_id;
  const double r = dsp::rms(s.mix.mixture.samples);
  require(r > 0.0, "prepare_sample: silent mixture in " + s.sample_id);
  p.gain = level_rms / r;
  dsp::Waveform mix = s.mix.mixture;
  for (double& x : mix.samples) x *= p.gain;
  p.target_audio = s.mix.target;
  for (double& x : p.target_audio.samples) x *= p.gain;
  p.mix = dsp::stft(mix, stft);
  p.target = SpectralTarget::from(dsp::stft(p.target_audio, stft));
  p.video = s.features.features;
  if (s.enrollment.audio) p.enrollment_magnitude = enrollment_magnitude(*s.enrollment.audio, stft);
  return p;
}

Mat enrollment_magnitude(const dsp::Waveform& w, const dsp::StftConfig& stft) { return dsp::stft(w, stft).magnitude; }

}  // namespace avsep::train
