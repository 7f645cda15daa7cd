#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "avsep/data/corpus.hpp"
#include "avsep/dsp/stft.hpp"

namespace avsep::data {

// ------------------------------------------------------------- mixing

struct Source {
  dsp::Waveform audio;
  int speaker = -1;
};

struct Mixture {
  dsp::Waveform mixture;                  // = target + sum(interferers), exactly
  dsp::Waveform target;                   // scaled constituents
  std::vector<dsp::Waveform> interferers;
  std::vector<double> gains;              // applied to [target, interferers...]
};

// Every non-silent constituent is brought to `level_rms`, summed, and the
// whole set is scaled down if the sum would peak above 0.99.
Mixture make_mixture(const Source& target, const std::vector<Source>& interferers, int k, double level_rms = 0.1);

// ----------------------------------------------------------- occlusion

enum class OcclusionMode { Train, EvalEdges };

struct OcclusionSchedule {
  std::vector<std::uint8_t> flags;  // 1 = occluded video frame
  OcclusionMode mode = OcclusionMode::Train;

  std::size_t size() const { return flags.size(); }
  double fraction() const;
  // Maximal occluded runs as [begin, end) frame ranges.
  std::vector<std::pair<int, int>> runs() const;
  static OcclusionSchedule clear(int n_frames) { return {std::vector<std::uint8_t>(static_cast<std::size_t>(n_frames), 0)}; }
};

struct OcclusionRules {
  int min_run = 15;
  int max_run = 25;
  double tolerance = 0.05;
};

// Train: non-overlapping runs of min_run..max_run frames whose total is
// within `tolerance` of the requested fraction. EvalEdges: a prefix and a
// suffix of round(n * fraction / 2) frames each.
OcclusionSchedule occlusion_schedule(int n_frames, OcclusionMode mode, double occluded_fraction, std::mt19937_64& rng,
                                     const OcclusionRules& rules = {});

// ------------------------------------------------------- visual oracle

enum class OcclusionFill { Distractor, Zeros };

struct OracleConfig {
  dsp::StftConfig stft = dsp::StftConfig::toy();
  int video_dim = 32;
  double floor = 1e-3;      // log(floor + magnitude)
  double level_rms = 0.1;   // source is brought to this level first
  OcclusionFill fill = OcclusionFill::Distractor;
};

struct VideoFeatureTrack {
  Mat features;  // frames x video_dim, 25 frames per second
  std::vector<std::uint8_t> occluded;
  Eigen::Index frames() const { return features.rows(); }
};

// Per video frame: log magnitude of `clean`, averaged over the four
// spectrogram frames it spans and area-pooled from F bins to video_dim.
Mat oracle_features(const dsp::Waveform& clean, const OracleConfig& cfg);

// Area pooling of the columns of m (F) to `out_cols`.
Mat area_pool(const Mat& m, int out_cols);

VideoFeatureTrack visual_feature_oracle(const dsp::Waveform& target, const OcclusionSchedule& schedule,
                                        const dsp::Waveform* distractor, const OracleConfig& cfg);

// ---------------------------------------------------------- enrollment

enum class EnrollmentMode { Train, Pre, SelfPlaceholder, None };

struct Enrollment {
  std::optional<dsp::Waveform> audio;
  std::string utterance_id;
  std::size_t begin = 0;  // sample range inside that utterance
  std::size_t end = 0;
};

// Train: a segment of `length` samples from the target utterance that does
// not overlap [target_begin, target_end). Pre: a segment of a different
// utterance of the same speaker. SelfPlaceholder / None: absent.
Enrollment sample_enrollment(const Corpus& corpus, std::size_t utterance, std::size_t target_begin,
                             std::size_t target_end, EnrollmentMode mode, std::size_t length, double min_s,
                             std::mt19937_64& rng);

// ------------------------------------------------------------- samples

struct MixSample {
  std::string sample_id;
  std::uint64_t seed = 0;
  Mixture mix;
  int target_speaker = -1;
  std::vector<int> interferer_speakers;
  std::string target_utterance;
  std::size_t crop_begin = 0;
  VideoFeatureTrack features;
  OcclusionSchedule occlusion;
  Enrollment enrollment;
  std::vector<std::string> tokens;  // ground-truth syllables of the crop
};

struct SampleRequest {
  int n_speakers = 2;  // 2 or 3 (target plus one or two interferers)
  OcclusionMode occlusion_mode = OcclusionMode::Train;
  double occlusion_fraction = 0.0;
  EnrollmentMode enrollment = EnrollmentMode::None;
};

struct SamplerConfig {
  OracleConfig oracle;
  double crop_s = 2.0;
  double enroll_s = 2.0;
  double min_enroll_s = 1.0;  // the embedder needs at least 1 s
  double level_rms = 0.1;
  double token_margin_s = 0.03;
  OcclusionRules rules;
};

// Draws reproducible samples from one split: sample i depends only on
// (seed, split, i, request).
class MixtureSampler {
public:
  MixtureSampler(const Corpus& corpus, std::string split, SamplerConfig cfg, std::uint64_t seed);

  MixSample draw(std::uint64_t index, const SampleRequest& req) const;

  const SamplerConfig& config() const { return cfg_; }
  std::size_t crop_samples() const;
  int video_frames() const;

private:
  const Corpus* corpus_;
  std::string split_;
  SamplerConfig cfg_;
  std::uint64_t seed_;
  std::vector<std::size_t> pool_;      // utterances of the split
  std::vector<int> speakers_;          // speakers of the split
};

// Copy of `length` samples starting at `begin`.
dsp::Waveform crop(const dsp::Waveform& w, std::size_t begin, std::size_t length);

}  // namespace avsep::data
