#include "avsep/dsp/stft.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <numbers>

namespace avsep::dsp {

namespace {

// fftw's planner is not thread-safe; execution with the plan's own buffers is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
public:
  explicit RealFft(int n) : n_(n) {
    real_ = fftw_alloc_real(static_cast<std::size_t>(n));
    spec_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    std::lock_guard lock(planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(n, real_, spec_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(n, spec_, real_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(forward_);
      fftw_destroy_plan(inverse_);
    }
    fftw_free(real_);
    fftw_free(spec_);
  }

  double* real() { return real_; }
  fftw_complex* spec() { return spec_; }
  void forward() { fftw_execute(forward_); }
  // Unnormalised: result is n times the true inverse.
  void inverse() { fftw_execute(inverse_); }
  int size() const { return n_; }

private:
  int n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

double padded_sample(const std::vector<double>& x, std::ptrdiff_t i) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  if (i >= 0 && i < n) return x[static_cast<std::size_t>(i)];
  if (n < 2) return 0.0;
  std::ptrdiff_t j = i < 0 ? -i : 2 * (n - 1) - i;
  if (j < 0 || j >= n) return 0.0;  // signal shorter than the pad
  return x[static_cast<std::size_t>(j)];
}

}  // namespace

void StftConfig::validate() const {
  require(sample_rate > 0, "stft: sample_rate must be positive");
  require(hop_len > 0 && hop_len <= window_len, "stft: need 0 < hop_len <= window_len");
  require(window_len <= fft_size, "stft: need window_len <= fft_size");
  require(fft_size > 0 && (fft_size & (fft_size - 1)) == 0, "stft: fft_size must be a power of two");
}

std::vector<double> analysis_window(const StftConfig& cfg) {
  std::vector<double> w(static_cast<std::size_t>(cfg.window_len));
  for (int n = 0; n < cfg.window_len; ++n)
    w[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg.window_len);
  return w;
}

Eigen::Index frame_count(std::size_t n, const StftConfig& cfg) {
  return static_cast<Eigen::Index>((n + static_cast<std::size_t>(cfg.hop_len) - 1) /
                                   static_cast<std::size_t>(cfg.hop_len));
}

Spectrogram stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  require(!w.empty(), "stft: empty waveform");
  const Eigen::Index frames = frame_count(w.size(), cfg);
  const int bins = cfg.bins();
  const int pad = cfg.window_len / 2;
  const auto win = analysis_window(cfg);

  Spectrogram s;
  s.config = cfg;
  s.magnitude.resize(frames, bins);
  s.phase_cos.resize(frames, bins);
  s.phase_sin.resize(frames, bins);

  RealFft fft(cfg.fft_size);
  for (Eigen::Index t = 0; t < frames; ++t) {
    double* buf = fft.real();
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * cfg.hop_len - pad;
    for (int n = 0; n < cfg.window_len; ++n) buf[n] = win[static_cast<std::size_t>(n)] * padded_sample(w.samples, start + n);
    for (int n = cfg.window_len; n < cfg.fft_size; ++n) buf[n] = 0.0;
    fft.forward();
    const fftw_complex* X = fft.spec();
    for (int f = 0; f < bins; ++f) {
      const double re = X[f][0], im = X[f][1];
      const double mag = std::hypot(re, im);
      s.magnitude(t, f) = static_cast<Real>(mag);
      if (mag > 0.0) {
        s.phase_cos(t, f) = static_cast<Real>(re / mag);
        s.phase_sin(t, f) = static_cast<Real>(im / mag);
      } else {
        s.phase_cos(t, f) = 1;
        s.phase_sin(t, f) = 0;
      }
    }
  }
  return s;
}

Waveform istft(const Spectrogram& s) {
  const StftConfig& cfg = s.config;
  cfg.validate();
  const int bins = cfg.bins();
  require(s.magnitude.cols() == bins && s.phase_cos.cols() == bins && s.phase_sin.cols() == bins,
          "istft: spectrogram bin count does not match its config");
  require(s.phase_cos.rows() == s.frames() && s.phase_sin.rows() == s.frames(),
          "istft: magnitude and phase frame counts differ");
  require(s.frames() > 0, "istft: empty spectrogram");

  const Eigen::Index frames = s.frames();
  const int pad = cfg.window_len / 2;
  const auto win = analysis_window(cfg);
  const std::size_t out_len = static_cast<std::size_t>(frames) * cfg.hop_len;
  // accumulation buffers cover the padded extent
  const std::size_t total = out_len + 2 * static_cast<std::size_t>(cfg.window_len);
  std::vector<double> acc(total, 0.0), wsum(total, 0.0);

  RealFft fft(cfg.fft_size);
  const double scale = 1.0 / cfg.fft_size;
  for (Eigen::Index t = 0; t < frames; ++t) {
    fftw_complex* X = fft.spec();
    for (int f = 0; f < bins; ++f) {
      const double m = s.magnitude(t, f);
      X[f][0] = m * s.phase_cos(t, f);
      X[f][1] = m * s.phase_sin(t, f);
    }
    // c2r ignores the imaginary part of DC and Nyquist
    fft.inverse();
    const double* y = fft.real();
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * cfg.hop_len - pad + cfg.window_len;
    for (int n = 0; n < cfg.window_len; ++n) {
      const double wn = win[static_cast<std::size_t>(n)];
      const auto idx = static_cast<std::size_t>(start + n);
      acc[idx] += wn * y[n] * scale;
      wsum[idx] += wn * wn;
    }
  }

  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t idx = i + static_cast<std::size_t>(cfg.window_len);
    out.samples[i] = wsum[idx] > 1e-12 ? acc[idx] / wsum[idx] : 0.0;
  }
  return out;
}

Spectrogram apply_mask(const Spectrogram& noisy, const Mat& mask) {
  require_shape(mask.rows() == noisy.frames() && mask.cols() == noisy.bins(),
                "apply_mask: mask shape does not match spectrogram");
  Spectrogram out = noisy;
  out.magnitude = mask.cwiseProduct(noisy.magnitude);
  return out;
}

}  // namespace avsep::dsp
