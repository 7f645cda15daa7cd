#include "avsep/data/mixture.hpp"

#include <algorithm>
#include <cmath>

#include "avsep/data/seed.hpp"

namespace avsep::data {

namespace {

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

dsp::Waveform crop(const dsp::Waveform& w, std::size_t begin, std::size_t length) {
  require(begin + length <= w.size(), "crop: range exceeds the waveform");
  dsp::Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(begin + length));
  return out;
}

// ------------------------------------------------------------- mixing

Mixture make_mixture(const Source& target, const std::vector<Source>& interferers, int k, double level_rms) {
  require(k == 1 || k == 2, "make_mixture: k must be 1 or 2");
  require(static_cast<int>(interferers.size()) == k, "make_mixture: expected " + std::to_string(k) + " interferers");
  require(!target.audio.empty(), "make_mixture: empty target");
  for (const Source& s : interferers) {
    require_shape(s.audio.size() == target.audio.size(), "make_mixture: interferer length differs from the target");
    require(s.audio.sample_rate == target.audio.sample_rate, "make_mixture: sample rates differ");
    require(s.speaker < 0 || s.speaker != target.speaker, "make_mixture: interferer has the target's speaker id");
  }
  Mixture m;
  auto level = [&](const dsp::Waveform& w) {
    const double r = dsp::rms(w.samples);
    return r > 0 ? level_rms / r : 0.0;
  };
  m.gains.push_back(level(target.audio));
  for (const Source& s : interferers) m.gains.push_back(level(s.audio));

  const std::size_t n = target.audio.size();
  std::vector<double> sum(n, 0.0);
  auto accumulate = [&](const dsp::Waveform& w, double g) {
    for (std::size_t i = 0; i < n; ++i) sum[i] += g * w.samples[i];
  };
  accumulate(target.audio, m.gains[0]);
  for (std::size_t j = 0; j < interferers.size(); ++j) accumulate(interferers[j].audio, m.gains[j + 1]);
  const double pk = dsp::peak(sum);
  if (pk > 0.99)
    for (double& g : m.gains) g *= 0.99 / pk;

  auto scaled = [&](const dsp::Waveform& w, double g) {
    dsp::Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = g * w.samples[i];
    return out;
  };
  m.target = scaled(target.audio, m.gains[0]);
  for (std::size_t j = 0; j < interferers.size(); ++j) m.interferers.push_back(scaled(interferers[j].audio, m.gains[j + 1]));
  m.mixture = m.target;
  for (const dsp::Waveform& w : m.interferers)
    for (std::size_t i = 0; i < n; ++i) m.mixture.samples[i] += w.samples[i];
  return m;
}

// ----------------------------------------------------------- occlusion

double OcclusionSchedule::fraction() const {
  if (flags.empty()) return 0.0;
  return static_cast<double>(std::count(flags.begin(), flags.end(), 1)) / static_cast<double>(flags.size());
}

std::vector<std::pair<int, int>> OcclusionSchedule::runs() const {
  std::vector<std::pair<int, int>> out;
  const int n = static_cast<int>(flags.size());
  for (int i = 0; i < n;) {
    if (!flags[static_cast<std::size_t>(i)]) {
      ++i;
      continue;
    }
    int j = i;
    while (j < n && flags[static_cast<std::size_t>(j)]) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

OcclusionSchedule occlusion_schedule(int n_frames, OcclusionMode mode, double occluded_fraction, std::mt19937_64& rng,
                                     const OcclusionRules& rules) {
  require(n_frames > 0, "occlusion_schedule: no frames");
  require(occluded_fraction >= 0.0 && occluded_fraction <= 1.0, "occlusion_schedule: fraction must be in [0, 1]");
  OcclusionSchedule s = OcclusionSchedule::clear(n_frames);
  s.mode = mode;
  if (mode == OcclusionMode::EvalEdges) {
    const int side = std::min(n_frames / 2, static_cast<int>(std::lround(n_frames * occluded_fraction / 2.0)));
    for (int i = 0; i < side; ++i) {
      s.flags[static_cast<std::size_t>(i)] = 1;
      s.flags[static_cast<std::size_t>(n_frames - 1 - i)] = 1;
    }
    if (occluded_fraction >= 1.0) std::fill(s.flags.begin(), s.flags.end(), 1);
    return s;
  }
  if (occluded_fraction == 0.0) return s;
  require(n_frames >= rules.max_run, "occlusion_schedule: need at least " + std::to_string(rules.max_run) + " frames in train mode");

  // Choose the occluded total S and the run count k, then compose: k run
  // lengths in [min_run, max_run] summing to S and k + 1 clear gaps (the
  // interior ones non-empty) summing to n - S.
  const int lo = static_cast<int>(std::ceil((occluded_fraction - rules.tolerance) * n_frames - 1e-9));
  const int hi = static_cast<int>(std::floor((occluded_fraction + rules.tolerance) * n_frames + 1e-9));
  std::vector<std::pair<int, int>> options;
  for (int total = std::max(lo, 1); total <= std::min(hi, n_frames); ++total)
    for (int k = 1; k * rules.min_run <= total; ++k)
      if (total <= k * rules.max_run && n_frames - total >= k - 1) options.emplace_back(total, k);
  if (options.empty())
    throw InvalidInput("occlusion_schedule: fraction " + std::to_string(occluded_fraction) +
                       " cannot be met with runs of " + std::to_string(rules.min_run) + "-" +
                       std::to_string(rules.max_run) + " frames in " + std::to_string(n_frames) + " frames");
  const auto [total, k] = options[uniform_index(rng, options.size())];

  std::vector<int> lengths(static_cast<std::size_t>(k), rules.min_run);
  for (int extra = total - k * rules.min_run; extra > 0; --extra) {
    std::size_t j;
    do j = uniform_index(rng, lengths.size());
    while (lengths[j] >= rules.max_run);
    ++lengths[j];
  }
  std::vector<int> gaps(static_cast<std::size_t>(k + 1), 0);
  for (int j = 1; j < k; ++j) gaps[static_cast<std::size_t>(j)] = 1;
  for (int extra = n_frames - total - (k - 1); extra > 0; --extra) ++gaps[uniform_index(rng, gaps.size())];

  int pos = gaps[0];
  for (int j = 0; j < k; ++j) {
    for (int f = 0; f < lengths[static_cast<std::size_t>(j)]; ++f) s.flags[static_cast<std::size_t>(pos + f)] = 1;
    pos += lengths[static_cast<std::size_t>(j)] + gaps[static_cast<std::size_t>(j + 1)];
  }
  return s;
}

// ------------------------------------------------------- visual oracle

Mat area_pool(const Mat& m, int out_cols) {
  require(out_cols > 0, "area_pool: output width must be positive");
  const Eigen::Index in = m.cols();
  // column j of the output averages the input interval [j*in/out, (j+1)*in/out)
  Mat weights = Mat::Zero(in, out_cols);
  const double step = static_cast<double>(in) / out_cols;
  for (int j = 0; j < out_cols; ++j) {
    const double a = j * step, b = (j + 1) * step;
    for (Eigen::Index f = static_cast<Eigen::Index>(std::floor(a)); f < in && f < b; ++f) {
      const double overlap = std::min<double>(b, f + 1) - std::max<double>(a, f);
      if (overlap > 0) weights(f, j) = static_cast<Real>(overlap / step);
    }
  }
  return m * weights;
}

Mat oracle_features(const dsp::Waveform& clean, const OracleConfig& cfg) {
  require(clean.sample_rate == cfg.stft.sample_rate, "visual_feature_oracle: sample rate does not match the STFT");
  dsp::Waveform w = clean;
  const double r = dsp::rms(w.samples);
  if (r > 0)
    for (double& v : w.samples) v *= cfg.level_rms / r;
  const dsp::Spectrogram s = dsp::stft(w, cfg.stft);
  require(s.frames() % 4 == 0, "visual_feature_oracle: spectrogram frames must be a multiple of 4");
  const Eigen::Index frames = s.frames() / 4;
  Mat logmag = (s.magnitude.array() + static_cast<Real>(cfg.floor)).log().matrix();
  Mat per_frame(frames, s.bins());
  for (Eigen::Index j = 0; j < frames; ++j) per_frame.row(j) = logmag.middleRows(4 * j, 4).colwise().mean();
  return area_pool(per_frame, cfg.video_dim);
}

VideoFeatureTrack visual_feature_oracle(const dsp::Waveform& target, const OcclusionSchedule& schedule,
                                        const dsp::Waveform* distractor, const OracleConfig& cfg) {
  VideoFeatureTrack track;
  track.features = oracle_features(target, cfg);
  require_shape(static_cast<Eigen::Index>(schedule.size()) == track.frames(),
                "visual_feature_oracle: schedule has " + std::to_string(schedule.size()) + " frames, track has " +
                    std::to_string(track.frames()));
  track.occluded = schedule.flags;
  const bool any = std::find(schedule.flags.begin(), schedule.flags.end(), 1) != schedule.flags.end();
  if (!any) return track;
  Mat other;
  if (cfg.fill == OcclusionFill::Distractor) {
    require(distractor != nullptr, "visual_feature_oracle: occluded frames need a distractor waveform");
    require_shape(distractor->size() == target.size(), "visual_feature_oracle: distractor length differs");
    other = oracle_features(*distractor, cfg);
  } else {
    other = Mat::Zero(track.frames(), cfg.video_dim);
  }
  for (Eigen::Index j = 0; j < track.frames(); ++j)
    if (schedule.flags[static_cast<std::size_t>(j)]) track.features.row(j) = other.row(j);
  return track;
}

// ---------------------------------------------------------- enrollment

Enrollment sample_enrollment(const Corpus& corpus, std::size_t utterance, std::size_t target_begin,
                             std::size_t target_end, EnrollmentMode mode, std::size_t length, double min_s,
                             std::mt19937_64& rng) {
  require(utterance < corpus.utterances.size(), "sample_enrollment: utterance index out of range");
  const Utterance& u = corpus.utterances[utterance];
  Enrollment e;
  if (mode == EnrollmentMode::SelfPlaceholder || mode == EnrollmentMode::None) return e;
  require(length > 0, "sample_enrollment: enrollment length must be positive");

  if (mode == EnrollmentMode::Train) {
    const std::size_t n = u.audio.size();
    require(static_cast<double>(n) >= 2.0 * min_s * u.audio.sample_rate,
            "sample_enrollment: utterance " + u.id + " is shorter than twice the minimum enrollment length");
    require(target_begin < target_end && target_end <= n, "sample_enrollment: bad target range");
    // valid starts: [0, target_begin - length] and [target_end, n - length]
    // shorten the segment to the larger free side when neither side fits it
    const std::size_t room = std::max(target_begin, n - target_end);
    const auto min_len = static_cast<std::size_t>(std::ceil(min_s * u.audio.sample_rate));
    if (room < length && room >= min_len) length = room;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    if (target_begin >= length) ranges.emplace_back(0, target_begin - length);
    if (n >= target_end + length) ranges.emplace_back(target_end, n - length);
    if (ranges.empty())
      throw InvalidInput("sample_enrollment: no room for a disjoint enrollment segment in " + u.id);
    std::size_t count = 0;
    for (auto& [a, b] : ranges) count += b - a + 1;
    std::size_t pick = uniform_index(rng, count);
    std::size_t start = 0;
    for (auto& [a, b] : ranges) {
      if (pick <= b - a) {
        start = a + pick;
        break;
      }
      pick -= b - a + 1;
    }
    e.audio = crop(u.audio, start, length);
    e.utterance_id = u.id;
    e.begin = start;
    e.end = start + length;
    return e;
  }

  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
    if (i != utterance && corpus.utterances[i].speaker == u.speaker) others.push_back(i);
  if (others.empty()) throw InvalidInput("sample_enrollment: speaker of " + u.id + " has no other utterance");
  const Utterance& o = corpus.utterances[others[uniform_index(rng, others.size())]];
  const std::size_t len = std::min(length, o.audio.size());
  const std::size_t start = uniform_index(rng, o.audio.size() - len + 1);
  e.audio = crop(o.audio, start, len);
  e.utterance_id = o.id;
  e.begin = start;
  e.end = start + len;
  return e;
}

// ------------------------------------------------------------- samples

MixtureSampler::MixtureSampler(const Corpus& corpus, std::string split, SamplerConfig cfg, std::uint64_t seed)
    : corpus_(&corpus), split_(std::move(split)), cfg_(std::move(cfg)), seed_(seed) {
  require(corpus.sample_rate == cfg_.oracle.stft.sample_rate, "MixtureSampler: corpus rate " +
                                                                  std::to_string(corpus.sample_rate) +
                                                                  " does not match the STFT rate");
  require(crop_samples() % static_cast<std::size_t>(4 * cfg_.oracle.stft.hop_len) == 0,
          "MixtureSampler: crop length must be a whole number of video frames");
  for (std::size_t i : corpus.indices(split_))
    if (corpus.utterances[i].audio.size() >= crop_samples()) pool_.push_back(i);
  speakers_ = corpus.speakers_in(split_);
  require(!pool_.empty(), "MixtureSampler: split '" + split_ + "' has no utterance long enough for a crop");
  require(speakers_.size() >= 2, "MixtureSampler: split '" + split_ + "' needs at least two speakers");
}

std::size_t MixtureSampler::crop_samples() const {
  return static_cast<std::size_t>(std::llround(cfg_.crop_s * corpus_->sample_rate));
}

int MixtureSampler::video_frames() const {
  return static_cast<int>(crop_samples() / static_cast<std::size_t>(4 * cfg_.oracle.stft.hop_len));
}

MixSample MixtureSampler::draw(std::uint64_t index, const SampleRequest& req) const {
  require(req.n_speakers == 2 || req.n_speakers == 3, "MixtureSampler: n_speakers must be 2 or 3");
  const Corpus& c = *corpus_;
  const std::size_t len = crop_samples();
  MixSample s;
  s.sample_id = split_ + "-" + std::to_string(index);
  s.seed = derive_seed(seed_, s.sample_id);
  // separate streams so the mixture does not depend on the occlusion or
  // enrollment settings of the request
  std::mt19937_64 mix_rng(s.seed), occ_rng(splitmix64(s.seed ^ 1)), enr_rng(splitmix64(s.seed ^ 2));

  auto utterances_of = [&](int speaker, bool split_only) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < c.utterances.size(); ++i) {
      const Utterance& u = c.utterances[i];
      if (u.speaker == speaker && u.audio.size() >= len && (!split_only || u.split == split_)) out.push_back(i);
    }
    return out;
  };
  auto random_crop = [&](std::size_t utt, std::mt19937_64& rng) {
    const std::size_t start = uniform_index(rng, c.utterances[utt].audio.size() - len + 1);
    return std::make_pair(start, crop(c.utterances[utt].audio, start, len));
  };

  const std::size_t target_utt = pool_[uniform_index(mix_rng, pool_.size())];
  const Utterance& tu = c.utterances[target_utt];
  auto [begin, target_audio] = random_crop(target_utt, mix_rng);
  s.target_speaker = tu.speaker;
  s.target_utterance = tu.id;
  s.crop_begin = begin;

  // two interferer candidates are always drawn so a 2-speaker sample is the
  // 3-speaker sample minus its second interferer
  std::vector<int> others;
  for (int spk : speakers_)
    if (spk != tu.speaker) others.push_back(spk);
  std::shuffle(others.begin(), others.end(), mix_rng);
  std::vector<Source> interferers;
  for (std::size_t j = 0; j < 2 && j < others.size(); ++j) {
    auto pool = utterances_of(others[j], true);
    require(!pool.empty(), "MixtureSampler: speaker without usable utterances");
    const std::size_t u = pool[uniform_index(mix_rng, pool.size())];
    interferers.push_back({random_crop(u, mix_rng).second, others[j]});
  }
  require(static_cast<int>(interferers.size()) >= req.n_speakers - 1,
          "MixtureSampler: not enough speakers in split '" + split_ + "'");
  interferers.resize(static_cast<std::size_t>(req.n_speakers - 1));
  for (const Source& src : interferers) s.interferer_speakers.push_back(src.speaker);
  s.mix = make_mixture({target_audio, tu.speaker}, interferers, req.n_speakers - 1, cfg_.level_rms);

  const double rate = c.sample_rate;
  s.tokens = crop_tokens(tu.syllables, begin / rate, (begin + len) / rate, cfg_.token_margin_s);

  // occlusion and the distractor that fills occluded frames
  s.occlusion = occlusion_schedule(video_frames(), req.occlusion_mode, req.occlusion_fraction, occ_rng, cfg_.rules);
  std::optional<dsp::Waveform> distractor;
  if (s.occlusion.fraction() > 0 && cfg_.oracle.fill == OcclusionFill::Distractor) {
    std::vector<int> free;
    for (int spk : c.speakers_in(""))
      if (spk != tu.speaker &&
          std::find(s.interferer_speakers.begin(), s.interferer_speakers.end(), spk) == s.interferer_speakers.end())
        free.push_back(spk);
    // prefer speakers of this split
    std::vector<int> local;
    for (int spk : free)
      if (std::find(speakers_.begin(), speakers_.end(), spk) != speakers_.end()) local.push_back(spk);
    const std::vector<int>& choose = local.empty() ? free : local;
    require(!choose.empty(), "MixtureSampler: no speaker left to act as the occlusion distractor");
    const int spk = choose[uniform_index(occ_rng, choose.size())];
    auto pool = utterances_of(spk, !local.empty());
    require(!pool.empty(), "MixtureSampler: distractor speaker without usable utterances");
    distractor = random_crop(pool[uniform_index(occ_rng, pool.size())], occ_rng).second;
  }
  s.features = visual_feature_oracle(target_audio, s.occlusion, distractor ? &*distractor : nullptr, cfg_.oracle);

  s.enrollment = sample_enrollment(c, target_utt, begin, begin + len, req.enrollment,
                                   static_cast<std::size_t>(std::llround(cfg_.enroll_s * rate)), cfg_.min_enroll_s,
                                   enr_rng);
  return s;
}

}  // namespace avsep::data
