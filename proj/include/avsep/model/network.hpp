#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avsep/dsp/stft.hpp"
#include "avsep/model/config.hpp"
#include "avsep/nn/lstm.hpp"

namespace avsep::model {

using nn::Batch;
using nn::Mode;
using nn::ParamSet;
using nn::Rng;

// Unit-norm voice summary; the all-zero vector means "no embedding".
struct SpeakerEmbedding {
  RowVec vector;

  static SpeakerEmbedding absent(int dim) { return {RowVec::Zero(dim)}; }
  bool is_absent() const { return vector.size() == 0 || vector.isZero(0); }
};

struct NetworkOutput {
  Mat mask;                // T x F, strictly inside (0, 1)
  Mat enhanced_magnitude;  // mask .* noisy magnitude
  Mat phase_cos;           // T x F unit vectors with phase_sin
  Mat phase_sin;
};

// Input normalised to unit RMS, frequency bins as channels, 1-D temporal
// convs with circular padding, temporal mean pool, projection and L2
// normalisation.
class SpeakerEmbedder {
public:
  SpeakerEmbedder() = default;
  SpeakerEmbedder(const ModelConfig& cfg, Rng& rng);

  // Batch of T_e x F magnitudes -> batch of 1 x emb_dim unit vectors.
  Batch forward(const Batch& mags, Mode mode);
  Batch backward(const Batch& d_emb);
  void collect(ParamSet& ps);

  SpeakerEmbedding embed(const Mat& magnitude);
  int min_frames() const { return min_frames_; }

private:
  std::vector<nn::Conv1d> convs_;
  std::vector<nn::BatchNorm1d> bns_;
  std::vector<nn::Relu> relus_;
  nn::Linear proj_;
  int min_frames_ = 100;
  std::vector<Eigen::Index> lengths_;
  Batch input_;                      // unit-RMS inputs
  std::vector<Real> input_rms_inv_;
  Batch pooled_norm_inv_;  // 1 / ||v|| per sequence
  Batch out_;
};

// Conditioning = video embedding + tiled speaker embedding; BLSTM over
// [conditioning | audio embedding], two ReLU FC layers, FC to F, sigmoid.
class FusionHead {
public:
  FusionHead() = default;
  FusionHead(const ModelConfig& cfg, Rng& rng);

  Batch forward(const Batch& audio_emb, const Batch& video_emb, const std::vector<RowVec>& speaker, Mode mode);
  // Returns d(audio_emb), d(video_emb) and d(speaker) per sequence.
  struct Grads {
    Batch audio;
    Batch video;
    std::vector<RowVec> speaker;
  };
  Grads backward(const Batch& d_mask);
  void collect(ParamSet& ps);

  nn::Blstm& blstm() { return blstm_; }

private:
  int emb_dim_ = 0;
  nn::Blstm blstm_;
  nn::Linear fc1_, fc2_, fc_mask_;
  nn::Relu relu1_, relu2_;
  nn::Sigmoid sigmoid_;
};

// Residual phase refinement: three convs over [cos | sin | magnitude]
// predict an additive correction to the noisy phase, renormalised per bin.
// The last conv starts at zero so the module is the identity at init.
class PhaseNet {
public:
  PhaseNet() = default;
  PhaseNet(const ModelConfig& cfg, Rng& rng);

  struct Input {
    Mat cos, sin, magnitude;
  };
  struct Output {
    Mat cos, sin;
  };
  std::vector<Output> forward(const std::vector<Input>& in, Mode mode);
  // Gradient w.r.t. the refined phase; returns d(magnitude input).
  Batch backward(const std::vector<Output>& d_out);
  void collect(ParamSet& ps);

  nn::Conv1d& last() { return conv3_; }

private:
  int bins_ = 0;
  nn::Conv1d conv1_, conv2_, conv3_;
  nn::Relu relu1_, relu2_;
  std::vector<Output> out_;
  Batch inv_norm_;
};

// Which parts of the network run and which receive gradients.
struct ForwardOptions {
  bool use_video = true;  // false: the video embedding is identically zero
  bool run_phase = true;  // false: refined phase = noisy phase
  bool train_video = false;
  bool train_audio = false;
  bool train_fusion = false;
  bool train_phase = false;
  bool train_embedder = false;

  static ForwardOptions inference(bool use_video = true) {
    ForwardOptions o;
    o.use_video = use_video;
    return o;
  }
  bool any_magnitude_training() const { return train_video || train_audio || train_fusion || train_embedder; }
};

struct EnhanceInput {
  const dsp::Spectrogram* mix = nullptr;
  Mat video_features;  // (T/4) x video_dim; ignored when video is off
  RowVec speaker;      // emb_dim; zero = absent
  // When set and the embedder is trainable, the speaker vector is
  // recomputed from this magnitude inside the graph.
  std::optional<Mat> enrollment_magnitude;
};

struct OutputGrad {
  Mat d_magnitude;  // dL / d enhanced magnitude
  Mat d_cos;        // dL / d refined phase
  Mat d_sin;
};

class EnhancementNet {
public:
  EnhancementNet() = default;
  EnhancementNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  Batch video_stream_forward(const Batch& features, Mode mode);
  Batch audio_stream_forward(const Batch& magnitudes, Mode mode);
  SpeakerEmbedding speaker_embed(const Mat& magnitude);
  Batch fuse_and_mask(const Batch& audio_emb, const Batch& video_emb, const std::vector<RowVec>& speaker, Mode mode);

  std::vector<NetworkOutput> forward(const std::vector<EnhanceInput>& batch, const ForwardOptions& opt);
  void backward(const std::vector<OutputGrad>& grads);

  NetworkOutput enhance(const dsp::Spectrogram& mix, const Mat& video_features, const SpeakerEmbedding& spk,
                        bool use_video = true);

  ParamSet params();
  ParamSet group(const std::string& name);  // video | audio | fusion | phase | embedder
  ParamSet magnitude_params();              // video + audio + fusion

  SpeakerEmbedder& embedder() { return embedder_; }
  nn::Stack& video_stream() { return video_; }
  nn::Stack& audio_stream() { return audio_; }
  FusionHead& fusion() { return fusion_; }
  PhaseNet& phase_net() { return phase_; }

private:
  ModelConfig cfg_;
  nn::Stack video_;
  nn::Stack audio_;
  FusionHead fusion_;
  PhaseNet phase_;
  SpeakerEmbedder embedder_;

  // state of the last forward() for backward()
  ForwardOptions last_opt_;
  std::vector<const dsp::Spectrogram*> last_mix_;
  std::vector<Eigen::Index> embed_index_;  // -1 when the speaker vector was given
  bool ran_phase_ = false;
};

// Audio-only separator with one mask per source, trained with a
// permutation-invariant loss.
class PitNet {
public:
  PitNet() = default;
  PitNet(const ModelConfig& cfg, int sources, std::uint64_t seed);

  // One T x F mask per source for each sequence: result[seq][source].
  std::vector<std::vector<Mat>> forward(const Batch& magnitudes, Mode mode);
  void backward(const std::vector<std::vector<Mat>>& d_masks);
  ParamSet params();
  int sources() const { return sources_; }
  const ModelConfig& config() const { return cfg_; }

private:
  ModelConfig cfg_;
  int sources_ = 2;
  nn::Stack audio_;
  nn::Blstm blstm_;
  nn::Linear fc1_, fc2_, fc_mask_;
  nn::Relu relu1_, relu2_;
  nn::Sigmoid sigmoid_;
};

// Tiles a 1 x D row over T steps.
Mat tile_rows(const RowVec& v, Eigen::Index t);

}  // namespace avsep::model
