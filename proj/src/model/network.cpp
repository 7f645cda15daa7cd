#include "avsep/model/network.hpp"

#include <cmath>

namespace avsep::model {

Mat tile_rows(const RowVec& v, Eigen::Index t) { return v.replicate(t, 1); }

// ------------------------------------------------------- SpeakerEmbedder

SpeakerEmbedder::SpeakerEmbedder(const ModelConfig& cfg, Rng& rng) : min_frames_(cfg.embedder_min_frames) {
  const int width = cfg.embedder_width();
  int in = cfg.freq_bins;
  for (int l = 0; l < 4; ++l) {
    const std::string name = "embedder.conv" + std::to_string(l + 1);
    convs_.emplace_back(name, in, width, 5, 2, false, rng, nn::PadMode::Circular);
    bns_.emplace_back(name + ".bn", width);
    relus_.emplace_back();
    in = width;
  }
  proj_ = nn::Linear("embedder.proj", width, cfg.emb_dim, true, rng);
}

Batch SpeakerEmbedder::forward(const Batch& mags, Mode mode) {
  for (const Mat& m : mags)
    require(m.rows() >= min_frames_, "speaker_embed: enrollment too short (" + std::to_string(m.rows()) +
                                         " frames, need " + std::to_string(min_frames_) + ")");
  // inputs are brought to unit RMS so the embedding ignores overall level
  Batch h;
  input_.clear();
  input_rms_inv_.clear();
  for (const Mat& m : mags) {
    const Real r = std::sqrt(m.squaredNorm() / static_cast<Real>(std::max<Eigen::Index>(1, m.size())));
    const Real inv = r > Real(1e-12) ? Real(1) / r : Real(0);
    input_rms_inv_.push_back(inv);
    h.push_back(m * inv);
  }
  input_ = h;
  for (std::size_t l = 0; l < convs_.size(); ++l) h = relus_[l].forward(bns_[l].forward(convs_[l].forward(h, mode), mode), mode);
  lengths_.clear();
  Batch pooled;
  for (const Mat& hi : h) {
    lengths_.push_back(hi.rows());
    pooled.push_back(hi.colwise().mean());
  }
  Batch v = proj_.forward(pooled, mode);
  pooled_norm_inv_.clear();
  out_.clear();
  for (Mat& vi : v) {
    const Real n = vi.norm();
    const Real inv = n > Real(1e-12) ? Real(1) / n : Real(0);
    Mat yi = vi * inv;
    if (inv == Real(0)) {
      yi.setZero();
      yi(0, 0) = 1;
    }
    pooled_norm_inv_.push_back(Mat::Constant(1, 1, inv));
    out_.push_back(yi);
  }
  return out_;
}

Batch SpeakerEmbedder::backward(const Batch& d_emb) {
  Batch dv;
  for (std::size_t i = 0; i < d_emb.size(); ++i) {
    const Mat& y = out_[i];
    const Real inv = pooled_norm_inv_[i](0, 0);
    dv.push_back((d_emb[i] - y * (y.cwiseProduct(d_emb[i]).sum())) * inv);
  }
  Batch dpool = proj_.backward(dv);
  Batch dh;
  for (std::size_t i = 0; i < dpool.size(); ++i)
    dh.push_back(tile_rows(RowVec(dpool[i] / static_cast<Real>(lengths_[i])), lengths_[i]));
  for (std::size_t l = convs_.size(); l-- > 0;) dh = convs_[l].backward(bns_[l].backward(relus_[l].backward(dh)));
  for (std::size_t i = 0; i < dh.size(); ++i) {
    const Mat& y = input_[i];
    const Real proj = y.cwiseProduct(dh[i]).sum() / static_cast<Real>(std::max<Eigen::Index>(1, y.size()));
    dh[i] = (dh[i] - y * proj) * input_rms_inv_[i];
  }
  return dh;
}

void SpeakerEmbedder::collect(ParamSet& ps) {
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    convs_[l].collect(ps);
    bns_[l].collect(ps);
  }
  proj_.collect(ps);
}

SpeakerEmbedding SpeakerEmbedder::embed(const Mat& magnitude) {
  Batch out = forward({magnitude}, Mode::Eval);
  return {RowVec(out[0])};
}

// ------------------------------------------------------------ FusionHead

FusionHead::FusionHead(const ModelConfig& cfg, Rng& rng)
    : emb_dim_(cfg.emb_dim),
      blstm_("fusion.blstm", 2 * cfg.emb_dim, cfg.blstm_hidden, rng),
      fc1_("fusion.fc1", 2 * cfg.blstm_hidden, cfg.fc_fusion_width, true, rng),
      fc2_("fusion.fc2", cfg.fc_fusion_width, cfg.fc_fusion_width, true, rng),
      fc_mask_("fusion.fc_mask", cfg.fc_fusion_width, cfg.freq_bins, true, rng) {}

Batch FusionHead::forward(const Batch& audio_emb, const Batch& video_emb, const std::vector<RowVec>& speaker,
                          Mode mode) {
  require_shape(audio_emb.size() == video_emb.size() && audio_emb.size() == speaker.size(),
                "fuse_and_mask: batch sizes differ");
  Batch x;
  x.reserve(audio_emb.size());
  for (std::size_t i = 0; i < audio_emb.size(); ++i) {
    const Mat& a = audio_emb[i];
    const Mat& v = video_emb[i];
    require_shape(a.rows() == v.rows(), "fuse_and_mask: audio and video embeddings differ in length (" +
                                            std::to_string(a.rows()) + " vs " + std::to_string(v.rows()) + ")");
    require_shape(a.cols() == emb_dim_ && v.cols() == emb_dim_ && speaker[i].size() == emb_dim_,
                  "fuse_and_mask: embedding width mismatch");
    Mat in(a.rows(), 2 * emb_dim_);
    in.leftCols(emb_dim_) = v;
    in.leftCols(emb_dim_).rowwise() += speaker[i];
    in.rightCols(emb_dim_) = a;
    x.push_back(std::move(in));
  }
  Batch h = blstm_.forward(x, mode);
  nn::check_finite(h, "fusion.blstm");
  h = relu1_.forward(fc1_.forward(h, mode), mode);
  h = relu2_.forward(fc2_.forward(h, mode), mode);
  Batch mask = sigmoid_.forward(fc_mask_.forward(h, mode), mode);
  nn::check_finite(mask, "fusion.fc_mask");
  return mask;
}

FusionHead::Grads FusionHead::backward(const Batch& d_mask) {
  Batch g = fc_mask_.backward(sigmoid_.backward(d_mask));
  g = fc2_.backward(relu2_.backward(g));
  g = fc1_.backward(relu1_.backward(g));
  g = blstm_.backward(g);
  Grads out;
  for (const Mat& gi : g) {
    out.video.push_back(gi.leftCols(emb_dim_));
    out.audio.push_back(gi.rightCols(emb_dim_));
    out.speaker.push_back(gi.leftCols(emb_dim_).colwise().sum());
  }
  return out;
}

void FusionHead::collect(ParamSet& ps) {
  blstm_.collect(ps);
  fc1_.collect(ps);
  fc2_.collect(ps);
  fc_mask_.collect(ps);
}

// -------------------------------------------------------------- PhaseNet

PhaseNet::PhaseNet(const ModelConfig& cfg, Rng& rng)
    : bins_(cfg.freq_bins),
      conv1_("phase.conv1", 3 * cfg.freq_bins, cfg.phase_hidden, 5, 2, true, rng),
      conv2_("phase.conv2", cfg.phase_hidden, cfg.phase_hidden, 5, 2, true, rng),
      conv3_("phase.conv3", cfg.phase_hidden, 2 * cfg.freq_bins, 5, 2, true, rng) {
  conv3_.weight().value.setZero();
  conv3_.bias().value.setZero();
}

std::vector<PhaseNet::Output> PhaseNet::forward(const std::vector<Input>& in, Mode mode) {
  const Eigen::Index F = bins_;
  Batch x;
  for (const Input& p : in) {
    require_shape(p.cos.cols() == F && p.sin.cols() == F && p.magnitude.cols() == F,
                  "phase_refine: expected " + std::to_string(F) + " bins");
    require_shape(p.cos.rows() == p.magnitude.rows() && p.sin.rows() == p.magnitude.rows(),
                  "phase_refine: frame count mismatch");
    const Real worst = ((p.cos.array().square() + p.sin.array().square()) - Real(1)).abs().maxCoeff();
    require(worst <= Real(1e-6), "phase_refine: input phase is not unit-norm");
    Mat xi(p.cos.rows(), 3 * F);
    xi << p.cos, p.sin, p.magnitude;
    x.push_back(std::move(xi));
  }
  Batch r = relu1_.forward(conv1_.forward(x, mode), mode);
  r = relu2_.forward(conv2_.forward(r, mode), mode);
  r = conv3_.forward(r, mode);

  out_.clear();
  inv_norm_.clear();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Mat rc = r[i].leftCols(F), rs = r[i].rightCols(F);
    Mat yc = in[i].cos + rc;
    Mat ys = in[i].sin + rs;
    Mat inv = (yc.array().square() + ys.array().square()).sqrt().matrix();
    for (Eigen::Index k = 0; k < inv.size(); ++k) {
      const Real n = inv.data()[k];
      if (n > Real(1e-12)) {
        inv.data()[k] = Real(1) / n;
        // an untouched bin keeps the input phase bit-exactly
        if (rc.data()[k] == Real(0) && rs.data()[k] == Real(0)) continue;
        yc.data()[k] /= n;
        ys.data()[k] /= n;
      } else {
        inv.data()[k] = 0;
        yc.data()[k] = 1;
        ys.data()[k] = 0;
      }
    }
    out_.push_back({std::move(yc), std::move(ys)});
    inv_norm_.push_back(std::move(inv));
  }
  return out_;
}

Batch PhaseNet::backward(const std::vector<Output>& d_out) {
  const Eigen::Index F = bins_;
  Batch dr;
  for (std::size_t i = 0; i < d_out.size(); ++i) {
    const Output& o = out_[i];
    const Mat& dc = d_out[i].cos;
    const Mat& ds = d_out[i].sin;
    Mat proj = o.cos.cwiseProduct(dc) + o.sin.cwiseProduct(ds);
    Mat d(o.cos.rows(), 2 * F);
    d.leftCols(F) = ((dc - o.cos.cwiseProduct(proj)).array() * inv_norm_[i].array()).matrix();
    d.rightCols(F) = ((ds - o.sin.cwiseProduct(proj)).array() * inv_norm_[i].array()).matrix();
    dr.push_back(std::move(d));
  }
  Batch g = conv3_.backward(dr);
  g = conv2_.backward(relu2_.backward(g));
  g = conv1_.backward(relu1_.backward(g));
  Batch d_mag;
  for (const Mat& gi : g) d_mag.push_back(gi.rightCols(F));
  return d_mag;
}

void PhaseNet::collect(ParamSet& ps) {
  conv1_.collect(ps);
  conv2_.collect(ps);
  conv3_.collect(ps);
}

// -------------------------------------------------------- EnhancementNet

EnhancementNet::EnhancementNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  video_ = nn::Stack("video", video_stream_table(cfg), cfg.video_dim, rng);
  audio_ = nn::Stack("audio", audio_stream_table(cfg), cfg.freq_bins, rng);
  fusion_ = FusionHead(cfg, rng);
  phase_ = PhaseNet(cfg, rng);
  embedder_ = SpeakerEmbedder(cfg, rng);
}

Batch EnhancementNet::video_stream_forward(const Batch& features, Mode mode) {
  for (const Mat& f : features) {
    require(f.rows() > 0, "video_stream_forward: empty feature track");
    require_shape(f.cols() == cfg_.video_dim, "video_stream_forward: expected " + std::to_string(cfg_.video_dim) +
                                                  " feature dims, got " + std::to_string(f.cols()));
    if (!f.allFinite()) throw NonFinite("video_stream_forward: non-finite feature row");
  }
  return video_.forward(features, mode);
}

Batch EnhancementNet::audio_stream_forward(const Batch& magnitudes, Mode mode) {
  for (const Mat& m : magnitudes) {
    require_shape(m.cols() == cfg_.freq_bins, "audio_stream_forward: expected " + std::to_string(cfg_.freq_bins) +
                                                  " bins, got " + std::to_string(m.cols()));
    require(m.rows() > 0 && m.minCoeff() >= 0, "audio_stream_forward: magnitudes must be non-negative");
  }
  return audio_.forward(magnitudes, mode);
}

SpeakerEmbedding EnhancementNet::speaker_embed(const Mat& magnitude) {
  require_shape(magnitude.cols() == cfg_.freq_bins, "speaker_embed: bin count mismatch");
  return embedder_.embed(magnitude);
}

Batch EnhancementNet::fuse_and_mask(const Batch& audio_emb, const Batch& video_emb,
                                    const std::vector<RowVec>& speaker, Mode mode) {
  return fusion_.forward(audio_emb, video_emb, speaker, mode);
}

std::vector<NetworkOutput> EnhancementNet::forward(const std::vector<EnhanceInput>& batch, const ForwardOptions& opt) {
  require(!batch.empty(), "enhance_forward: empty batch");
  auto mode_for = [](bool train) { return train ? Mode::Train : Mode::Eval; };
  last_opt_ = opt;
  last_mix_.clear();

  Batch mags, feats;
  std::vector<RowVec> speakers;
  Batch enroll;
  embed_index_.assign(batch.size(), -1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const EnhanceInput& in = batch[i];
    require(in.mix != nullptr, "enhance_forward: missing mixture");
    require_shape(in.mix->bins() == cfg_.freq_bins, "enhance_forward: spectrogram bins do not match the model");
    if (opt.use_video)
      require_shape(in.video_features.rows() * 4 == in.mix->frames(),
                    "enhance_forward: spectrogram frames (" + std::to_string(in.mix->frames()) +
                        ") must be 4x video frames (" + std::to_string(in.video_features.rows()) + ")");
    require_shape(in.speaker.size() == cfg_.emb_dim, "enhance_forward: speaker embedding width mismatch");
    last_mix_.push_back(in.mix);
    mags.push_back(in.mix->magnitude);
    if (opt.use_video) feats.push_back(in.video_features);
    speakers.push_back(in.speaker);
    if (opt.train_embedder && in.enrollment_magnitude) {
      embed_index_[i] = static_cast<Eigen::Index>(enroll.size());
      enroll.push_back(*in.enrollment_magnitude);
    }
  }
  if (!enroll.empty()) {
    Batch emb = embedder_.forward(enroll, Mode::Train);
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (embed_index_[i] >= 0) speakers[i] = emb[static_cast<std::size_t>(embed_index_[i])];
  }

  Batch audio_emb = audio_stream_forward(mags, mode_for(opt.train_audio));
  Batch video_emb;
  if (opt.use_video) {
    video_emb = video_stream_forward(feats, mode_for(opt.train_video));
  } else {
    for (const Mat& m : mags) video_emb.push_back(Mat::Zero(m.rows(), cfg_.emb_dim));
  }
  Batch masks = fusion_.forward(audio_emb, video_emb, speakers, mode_for(opt.train_fusion));

  std::vector<NetworkOutput> out(batch.size());
  std::vector<PhaseNet::Input> phase_in;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out[i].mask = std::move(masks[i]);
    out[i].enhanced_magnitude = out[i].mask.cwiseProduct(batch[i].mix->magnitude);
    if (opt.run_phase) phase_in.push_back({batch[i].mix->phase_cos, batch[i].mix->phase_sin, out[i].enhanced_magnitude});
  }
  ran_phase_ = opt.run_phase;
  if (opt.run_phase) {
    auto refined = phase_.forward(phase_in, mode_for(opt.train_phase));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out[i].phase_cos = std::move(refined[i].cos);
      out[i].phase_sin = std::move(refined[i].sin);
    }
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out[i].phase_cos = batch[i].mix->phase_cos;
      out[i].phase_sin = batch[i].mix->phase_sin;
    }
  }
  return out;
}

void EnhancementNet::backward(const std::vector<OutputGrad>& grads) {
  require(grads.size() == last_mix_.size(), "enhance backward: batch size mismatch");
  const ForwardOptions& opt = last_opt_;
  const bool magnitude = opt.any_magnitude_training();

  std::vector<Mat> d_enh;
  for (const OutputGrad& g : grads) d_enh.push_back(g.d_magnitude);
  if (ran_phase_ && (opt.train_phase || magnitude)) {
    std::vector<PhaseNet::Output> d_phase;
    for (const OutputGrad& g : grads) d_phase.push_back({g.d_cos, g.d_sin});
    Batch d_mag = phase_.backward(d_phase);
    for (std::size_t i = 0; i < grads.size(); ++i) d_enh[i] += d_mag[i];
  }
  if (!magnitude) return;

  Batch d_mask;
  for (std::size_t i = 0; i < grads.size(); ++i) d_mask.push_back(d_enh[i].cwiseProduct(last_mix_[i]->magnitude));
  FusionHead::Grads fg = fusion_.backward(d_mask);
  if (opt.train_audio) audio_.backward(fg.audio);
  if (opt.use_video && opt.train_video) video_.backward(fg.video);
  if (opt.train_embedder) {
    Batch d_emb;
    for (std::size_t i = 0; i < grads.size(); ++i)
      if (embed_index_[i] >= 0) d_emb.push_back(fg.speaker[i]);
    if (!d_emb.empty()) embedder_.backward(d_emb);
  }
}

NetworkOutput EnhancementNet::enhance(const dsp::Spectrogram& mix, const Mat& video_features,
                                      const SpeakerEmbedding& spk, bool use_video) {
  EnhanceInput in;
  in.mix = &mix;
  in.video_features = video_features;
  in.speaker = spk.vector.size() == 0 ? RowVec(RowVec::Zero(cfg_.emb_dim)) : spk.vector;
  return std::move(forward({in}, ForwardOptions::inference(use_video))[0]);
}

ParamSet EnhancementNet::group(const std::string& name) {
  ParamSet ps;
  if (name == "video")
    video_.collect(ps);
  else if (name == "audio")
    audio_.collect(ps);
  else if (name == "fusion")
    fusion_.collect(ps);
  else if (name == "phase")
    phase_.collect(ps);
  else if (name == "embedder")
    embedder_.collect(ps);
  else
    throw InvalidInput("unknown parameter group: " + name);
  return ps;
}

ParamSet EnhancementNet::magnitude_params() {
  ParamSet ps = group("video");
  ps.append(group("audio"));
  ps.append(group("fusion"));
  return ps;
}

ParamSet EnhancementNet::params() {
  ParamSet ps = magnitude_params();
  ps.append(group("phase"));
  ps.append(group("embedder"));
  return ps;
}

// ---------------------------------------------------------------- PitNet

PitNet::PitNet(const ModelConfig& cfg, int sources, std::uint64_t seed) : cfg_(cfg), sources_(sources) {
  cfg.validate();
  require(sources >= 2 && sources <= 3, "PitNet: sources must be 2 or 3");
  Rng rng(seed);
  audio_ = nn::Stack("pit.audio", audio_stream_table(cfg), cfg.freq_bins, rng);
  blstm_ = nn::Blstm("pit.blstm", cfg.emb_dim, cfg.blstm_hidden, rng);
  fc1_ = nn::Linear("pit.fc1", 2 * cfg.blstm_hidden, cfg.fc_fusion_width, true, rng);
  fc2_ = nn::Linear("pit.fc2", cfg.fc_fusion_width, cfg.fc_fusion_width, true, rng);
  fc_mask_ = nn::Linear("pit.fc_mask", cfg.fc_fusion_width, sources * cfg.freq_bins, true, rng);
}

std::vector<std::vector<Mat>> PitNet::forward(const Batch& magnitudes, Mode mode) {
  for (const Mat& m : magnitudes) require_shape(m.cols() == cfg_.freq_bins, "PitNet: bin count mismatch");
  Batch h = blstm_.forward(audio_.forward(magnitudes, mode), mode);
  h = relu1_.forward(fc1_.forward(h, mode), mode);
  h = relu2_.forward(fc2_.forward(h, mode), mode);
  Batch m = sigmoid_.forward(fc_mask_.forward(h, mode), mode);
  std::vector<std::vector<Mat>> out;
  const Eigen::Index F = cfg_.freq_bins;
  for (const Mat& mi : m) {
    std::vector<Mat> per;
    for (int s = 0; s < sources_; ++s) per.push_back(mi.middleCols(s * F, F));
    out.push_back(std::move(per));
  }
  return out;
}

void PitNet::backward(const std::vector<std::vector<Mat>>& d_masks) {
  const Eigen::Index F = cfg_.freq_bins;
  Batch d;
  for (const auto& per : d_masks) {
    Mat di(per.front().rows(), sources_ * F);
    for (int s = 0; s < sources_; ++s) di.middleCols(s * F, F) = per[static_cast<std::size_t>(s)];
    d.push_back(std::move(di));
  }
  Batch g = fc_mask_.backward(sigmoid_.backward(d));
  g = fc2_.backward(relu2_.backward(g));
  g = fc1_.backward(relu1_.backward(g));
  audio_.backward(blstm_.backward(g));
}

ParamSet PitNet::params() {
  ParamSet ps;
  audio_.collect(ps);
  blstm_.collect(ps);
  fc1_.collect(ps);
  fc2_.collect(ps);
  fc_mask_.collect(ps);
  return ps;
}

}  // namespace avsep::model
