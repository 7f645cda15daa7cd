#pragma once

#include <optional>

#include "avsep/model/network.hpp"

namespace avsep::eval {

struct Enhanced {
  dsp::Waveform audio;  // istft of enhanced magnitude and refined phase
  model::NetworkOutput output;
};

// One pass. With an enrollment magnitude the embedder conditions the
// mask; without one the speaker embedding is all zero (video only).
Enhanced enhance(model::EnhancementNet& net, const dsp::Spectrogram& mix, const Mat& video,
                 const std::optional<Mat>& enrollment_magnitude, bool use_video = true);

// Same, with the embedding given directly.
Enhanced enhance_with(model::EnhancementNet& net, const dsp::Spectrogram& mix, const Mat& video,
                      const model::SpeakerEmbedding& speaker, bool use_video = true);

struct SelfEnrolled {
  Enhanced pass1;  // zero embedding
  model::SpeakerEmbedding embedding;  // of pass 1's enhanced magnitude
  Enhanced pass2;
};

// Two passes: video only, then conditioned on the embedding of the first
// pass's enhanced magnitude.
SelfEnrolled self_enroll_enhance(model::EnhancementNet& net, const dsp::Spectrogram& mix, const Mat& video);

// Audio-only permutation-invariant separator: the source estimate that
// best matches `reference` (oracle selection; the network has no cue to
// pick the target itself).
dsp::Waveform pit_best_estimate(model::PitNet& net, const dsp::Spectrogram& mix, const dsp::Waveform& reference);

}  // namespace avsep::eval
