#pragma once

#include <string>
#include <vector>

#include "avsep/dsp/waveform.hpp"

namespace avsep::eval {

constexpr double kSdrCapDb = 60.0;

// Scale-allowing projection SDR in dB, capped at +60.
double sdr(const dsp::Waveform& reference, const dsp::Waveform& estimate);
double sdr(const std::vector<double>& reference, const std::vector<double>& estimate);

// Minimal edit distance between token sequences.
std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

// 100 * edits / |reference|; can exceed 100.
double wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);

// Pluggable speech-to-tokens interface.
class Transcriber {
public:
  virtual ~Transcriber() = default;
  virtual std::vector<std::string> transcribe(const dsp::Waveform& audio) = 0;
};

// Decodes the toy corpus' syllable symbols from the energy envelope: runs
// above a threshold relative to the loud frames, classified by duration.
// Runs touching either end of the signal are dropped, matching the
// `margin_s` rule used for ground truth.
class EnvelopeDecoder : public Transcriber {
public:
  struct Config {
    double frame_s = 0.005;
    double smooth_s = 0.015;
    double threshold_db = 18.0;    // below the loud reference level
    double reference_quantile = 0.9;
    double silence_rms = 1e-4;     // absolute floor: quieter frames never count
    double merge_gap_s = 0.04;
    double min_run_s = 0.06;
    double margin_s = 0.03;
    double short_max_s = 0.165;    // S below, M up to medium_max_s, L above
    double medium_max_s = 0.255;
  };

  EnvelopeDecoder() = default;
  explicit EnvelopeDecoder(Config cfg) : cfg_(cfg) {}
  std::vector<std::string> transcribe(const dsp::Waveform& audio) override;

private:
  Config cfg_;
};

}  // namespace avsep::eval
