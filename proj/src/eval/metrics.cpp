#include "avsep/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace avsep::eval {

double sdr(const std::vector<double>& reference, const std::vector<double>& estimate) {
  require_shape(reference.size() == estimate.size(), "sdr: reference has " + std::to_string(reference.size()) +
                                                         " samples, estimate " + std::to_string(estimate.size()));
  double rr = 0.0, re = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    rr += reference[i] * reference[i];
    re += reference[i] * estimate[i];
  }
  require(rr > 0.0, "sdr: reference is silent");
  const double alpha = re / rr;
  double target = 0.0, error = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double p = alpha * reference[i];
    target += p * p;
    error += (estimate[i] - p) * (estimate[i] - p);
  }
  if (target <= 0.0) return -kSdrCapDb;
  if (error <= 0.0) return kSdrCapDb;
  return std::clamp(10.0 * std::log10(target / error), -kSdrCapDb, kSdrCapDb);
}

double sdr(const dsp::Waveform& reference, const dsp::Waveform& estimate) {
  return sdr(reference.samples, estimate.samples);
}

std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis) {
  require(!reference.empty(), "wer: empty reference");
  return 100.0 * static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

std::vector<std::string> EnvelopeDecoder::transcribe(const dsp::Waveform& audio) {
  const double rate = audio.sample_rate;
  const std::size_t hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg_.frame_s * rate)));
  const std::size_t n_frames = audio.size() / hop;
  if (n_frames == 0) return {};

  std::vector<double> energy(n_frames, 0.0);
  for (std::size_t f = 0; f < n_frames; ++f) {
    double e = 0.0;
    for (std::size_t i = f * hop; i < (f + 1) * hop; ++i) e += audio.samples[i] * audio.samples[i];
    energy[f] = e / static_cast<double>(hop);
  }
  const int half = static_cast<int>(std::lround(cfg_.smooth_s / cfg_.frame_s / 2.0));
  std::vector<double> smooth(n_frames, 0.0);
  for (std::size_t f = 0; f < n_frames; ++f) {
    double s = 0.0;
    int count = 0;
    for (int d = -half; d <= half; ++d) {
      const long g = static_cast<long>(f) + d;
      if (g < 0 || g >= static_cast<long>(n_frames)) continue;
      s += energy[static_cast<std::size_t>(g)];
      ++count;
    }
    smooth[f] = s / count;
  }

  std::vector<double> sorted = smooth;
  const std::size_t q = std::min(n_frames - 1, static_cast<std::size_t>(cfg_.reference_quantile * n_frames));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(q), sorted.end());
  const double reference = sorted[q];
  const double floor = cfg_.silence_rms * cfg_.silence_rms;
  if (reference <= floor) return {};
  const double threshold = std::max(floor, reference * std::pow(10.0, -cfg_.threshold_db / 10.0));

  std::vector<std::pair<std::size_t, std::size_t>> runs;  // [begin, end) frames
  for (std::size_t f = 0; f < n_frames;) {
    if (smooth[f] <= threshold) {
      ++f;
      continue;
    }
    std::size_t g = f;
    while (g < n_frames && smooth[g] > threshold) ++g;
    const std::size_t merge = static_cast<std::size_t>(std::lround(cfg_.merge_gap_s / cfg_.frame_s));
    if (!runs.empty() && f - runs.back().second < merge)
      runs.back().second = g;
    else
      runs.emplace_back(f, g);
    f = g;
  }

  std::vector<std::string> tokens;
  const double frame = static_cast<double>(hop) / rate;
  const double total = static_cast<double>(n_frames) * frame;
  for (const auto& [b, e] : runs) {
    const double start = static_cast<double>(b) * frame, end = static_cast<double>(e) * frame;
    const double dur = end - start;
    if (dur < cfg_.min_run_s) continue;
    if (start < cfg_.margin_s || end > total - cfg_.margin_s) continue;
    tokens.emplace_back(dur < cfg_.short_max_s ? "S" : dur < cfg_.medium_max_s ? "M" : "L");
  }
  return tokens;
}

}  // namespace avsep::eval
