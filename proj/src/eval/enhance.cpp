#include "avsep/eval/enhance.hpp"

#include "avsep/eval/metrics.hpp"

namespace avsep::eval {

namespace {

dsp::Waveform resynthesise(const dsp::Spectrogram& mix, const model::NetworkOutput& out) {
  dsp::Spectrogram s = mix;
  s.magnitude = out.enhanced_magnitude;
  s.phase_cos = out.phase_cos;
  s.phase_sin = out.phase_sin;
  return dsp::istft(s);
}

}  // namespace

Enhanced enhance_with(model::EnhancementNet& net, const dsp::Spectrogram& mix, const Mat& video,
                      const model::SpeakerEmbedding& speaker, bool use_video) {
  if (use_video)
    require_shape(video.rows() * 4 == mix.frames(), "enhance: " + std::to_string(mix.frames()) +
                                                        " spectrogram frames but " + std::to_string(video.rows()) +
                                                        " video frames (need exactly 4x)");
  Enhanced e;
  e.output = net.enhance(mix, video, speaker, use_video);
  e.audio = resynthesise(mix, e.output);
  return e;
}

Enhanced enhance(model::EnhancementNet& net, const dsp::Spectrogram& mix, const Mat& video,
                 const std::optional<Mat>& enrollment_magnitude, bool use_video) {
  const model::SpeakerEmbedding spk = enrollment_magnitude ? net.speaker_embed(*enrollment_magnitude)
                                                           : model::SpeakerEmbedding::absent(net.config().emb_dim);
  return enhance_with(net, mix, video, spk, use_video);
}

SelfEnrolled self_enroll_enhance(model::EnhancementNet& net, const dsp::Spectrogram& mix, const Mat& video) {
  SelfEnrolled r;
  r.pass1 = enhance(net, mix, video, std::nullopt);
  r.embedding = net.speaker_embed(r.pass1.output.enhanced_magnitude);
  r.pass2 = enhance_with(net, mix, video, r.embedding);
  return r;
}

dsp::Waveform pit_best_estimate(model::PitNet& net, const dsp::Spectrogram& mix, const dsp::Waveform& reference) {
  const auto masks = net.forward({mix.magnitude}, nn::Mode::Eval)[0];
  dsp::Waveform best;
  double best_sdr = -INFINITY;
  for (const Mat& m : masks) {
    dsp::Waveform w = dsp::istft(dsp::apply_mask(mix, m));
    const double s = sdr(reference, w);
    if (s > best_sdr) {
      best_sdr = s;
      best = std::move(w);
    }
  }
  return best;
}

}  // namespace avsep::eval
