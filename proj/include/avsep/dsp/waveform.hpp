#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "avsep/common.hpp"

namespace avsep::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

double rms(const std::vector<double>& x);
double peak(const std::vector<double>& x);

// Reads a RIFF/WAVE PCM file (8/16/24/32-bit integer or 32-bit float, any
// channel count). The result is mono at `target_rate`: channels are averaged
// and other rates are converted by linear interpolation.
Waveform read_wav(const std::filesystem::path& path, int target_rate = 16000);

// Writes 16-bit little-endian PCM, mono, at the waveform's own rate.
// Samples are clipped to [-1, 1] and rounded to the nearest code.
void write_wav(const std::filesystem::path& path, const Waveform& w);

std::vector<double> resample_linear(const std::vector<double>& x, int from_rate, int to_rate);

// Integer-factor rate changes with a Hann-windowed sinc low-pass.
std::vector<double> decimate(const std::vector<double>& x, int factor);
std::vector<double> interpolate(const std::vector<double>& x, int factor);

// Converts between rates whose ratio is an integer in either direction;
// anything else falls back to linear interpolation.
Waveform convert_rate(const Waveform& w, int to_rate);

}  // namespace avsep::dsp
