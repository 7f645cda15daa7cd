#pragma once

#include "avsep/dsp/waveform.hpp"
#include "avsep/matrix.hpp"

namespace avsep::dsp {

enum class WindowKind { Hann };

struct StftConfig {
  int sample_rate = 16000;
  int window_len = 400;  // 25 ms
  int hop_len = 160;     // 10 ms
  int fft_size = 512;
  WindowKind window = WindowKind::Hann;

  int bins() const { return fft_size / 2 + 1; }
  void validate() const;
  bool operator==(const StftConfig&) const = default;

  // 2 kHz, 50/20/64: same 25 ms / 10 ms framing with 33 bins.
  static StftConfig toy() { return {2000, 50, 20, 64, WindowKind::Hann}; }
};

// Magnitude plus unit phase vectors (cos, sin), each T x F.
struct Spectrogram {
  Mat magnitude;
  Mat phase_cos;
  Mat phase_sin;
  StftConfig config;

  Eigen::Index frames() const { return magnitude.rows(); }
  Eigen::Index bins() const { return magnitude.cols(); }
};

std::vector<double> analysis_window(const StftConfig& cfg);

// Number of frames produced for a signal of `n` samples: ceil(n / hop).
Eigen::Index frame_count(std::size_t n, const StftConfig& cfg);

// Center-padded (reflection) STFT; frame t is centred on sample t * hop.
Spectrogram stft(const Waveform& w, const StftConfig& cfg);

// Weighted overlap-add inverse with least-squares window normalisation.
// Output length is frames * hop.
Waveform istft(const Spectrogram& s);

Spectrogram apply_mask(const Spectrogram& noisy, const Mat& mask);

}  // namespace avsep::dsp
