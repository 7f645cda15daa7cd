#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "avsep/data/mixture.hpp"
#include "avsep/data/seed.hpp"

using namespace avsep;
using namespace avsep::data;

namespace {

const Corpus& toy_corpus() {
  static const Corpus c = generate_corpus(CorpusConfig{}, 2000);
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Projection SDR written out independently of the eval module.
double projection_sdr(const std::vector<double>& ref, const std::vector<double>& est) {
  double rr = 0, re = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    rr += ref[i] * ref[i];
    re += ref[i] * est[i];
  }
  double p = 0, e = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double t = re / rr * ref[i];
    p += t * t;
    e += (est[i] - t) * (est[i] - t);
  }
  return 10 * std::log10(p / e);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Frame-aligned pooled log magnitude of `w`, computed with explicit loops:
// level to 0.1 RMS, log(1e-3 + |X|), mean over each group of four frames,
// then mean over equal-width bin ranges.
Mat envelope_oracle(const dsp::Waveform& w, int dv) {
  dsp::Waveform x = w;
  const double g = 0.1 / dsp::rms(x.samples);
  for (double& s : x.samples) s *= g;
  const dsp::Spectrogram s = dsp::stft(x, dsp::StftConfig::toy());
  const int T = static_cast<int>(s.frames()) / 4, F = static_cast<int>(s.bins());
  Mat out = Mat::Zero(T, dv);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < dv; ++d) {
      const double lo = static_cast<double>(d) * F / dv, hi = static_cast<double>(d + 1) * F / dv;
      double acc = 0;
      for (int f = 0; f < F; ++f) {
        const double overlap = std::max(0.0, std::min(hi, f + 1.0) - std::max(lo, static_cast<double>(f)));
        if (overlap <= 0) continue;
        double m = 0;
        for (int k = 0; k < 4; ++k) m += std::log(1e-3 + s.magnitude(4 * t + k, f)) / 4;
        acc += overlap * m;
      }
      out(t, d) = acc / (hi - lo);
    }
  return out;
}

}  // namespace

TEST_CASE("derived seeds are stable and key dependent") {
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(derive_seed(1, "train-0") == derive_seed(1, "train-0"));
  CHECK(derive_seed(1, "train-0") != derive_seed(1, "train-1"));
  CHECK(derive_seed(1, "train-0") != derive_seed(2, "train-0"));
}

TEST_CASE("speakers sit on distinct f0 grid points") {
  auto s = make_speakers(3, 22);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(s[i].f0_base >= 80.0);
    CHECK(s[i].f0_base <= 300.0);
    for (std::size_t j = 0; j < i; ++j) CHECK(std::abs(s[i].f0_base - s[j].f0_base) >= 10.0 - 1e-9);
  }
  CHECK_THROWS_AS(make_speakers(3, 1), InvalidInput);
  CHECK_THROWS_AS(make_speakers(3, 24), InvalidInput);
}

TEST_CASE("corpus synthesis is deterministic on disk") {
  const auto base = std::filesystem::temp_directory_path() / "avsep_test_data_det";
  std::filesystem::remove_all(base);
  CorpusConfig cfg;
  cfg.seed = 7;
  cfg.n_speakers = 3;
  cfg.utterances_per_speaker = 2;
  cfg.duration_s = 2.0;
  auto a = synth_speaker_corpus(cfg, base / "a");
  auto b = synth_speaker_corpus(cfg, base / "b");
  REQUIRE(a.size() == 6);
  REQUIRE(b.size() == 6);
  CHECK(slurp(base / "a" / "manifest.tsv") == slurp(base / "b" / "manifest.tsv"));
  for (const auto& r : a) {
    CHECK(slurp(base / "a" / r.wav_path) == slurp(base / "b" / r.wav_path));
    auto txt = std::filesystem::path(r.wav_path).replace_extension(".txt");
    CHECK(slurp(base / "a" / txt) == slurp(base / "b" / txt));
  }
  cfg.seed = 8;
  auto c = synth_speaker_corpus(cfg, base / "c");
  CHECK(slurp(base / "a" / a[0].wav_path) != slurp(base / "c" / c[0].wav_path));
  std::filesystem::remove_all(base);
}

TEST_CASE("two speakers with one 8 s utterance each") {
  const auto dir = std::filesystem::temp_directory_path() / "avsep_test_data_small";
  std::filesystem::remove_all(dir);
  CorpusConfig cfg;
  cfg.n_speakers = 2;
  cfg.utterances_per_speaker = 1;
  cfg.duration_s = 8.0;
  auto recs = synth_speaker_corpus(cfg, dir);
  auto back = read_manifest(dir / "manifest.tsv");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].sample_id == recs[i].sample_id);
    CHECK(back[i].duration_s == doctest::Approx(8.0));
    auto w = dsp::read_wav(dir / back[i].wav_path);
    CHECK(w.sample_rate == 16000);
    CHECK(w.size() == 128000);
  }
  CHECK(back[0].speaker_id != back[1].speaker_id);

  Corpus c = load_corpus(dir / "manifest.tsv", 2000);
  CHECK(c.sample_rate == 2000);
  CHECK(c.utterances.size() == 2);
  CHECK(c.utterances[0].audio.size() == 16000);
  CHECK_FALSE(c.utterances[0].syllables.empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest parsing rejects malformed input") {
  const auto dir = std::filesystem::temp_directory_path() / "avsep_test_manifest";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "bad.tsv") << "a\twav/a.wav\t0\t1.0\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "bad.tsv"), InvalidInput);
  {
    std::ofstream(dir / "dup.tsv") << "a\twav/a.wav\t0\t1.0\ttrain\na\twav/b.wav\t1\t1.0\ttrain\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "dup.tsv"), InvalidInput);
  {
    std::ofstream(dir / "missing.tsv") << "a\twav/none.wav\t0\t1.0\ttrain\n";
  }
  CHECK_THROWS_AS(load_corpus(dir / "missing.tsv", 2000), InvalidInput);
  CHECK_THROWS_AS(read_manifest(dir / "absent.tsv"), InvalidInput);
  std::filesystem::remove_all(dir);

  CorpusConfig cfg;
  cfg.n_speakers = 1;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("within-speaker centroid distance is below cross-speaker distance") {
  const Corpus& c = toy_corpus();
  std::map<int, std::vector<double>> by_speaker;
  for (const auto& u : c.utterances) by_speaker[u.speaker].push_back(spectral_centroid(u.audio));
  std::vector<double> within, across;
  for (auto& [s, v] : by_speaker) {
    for (std::size_t i = 1; i < v.size(); ++i) within.push_back(std::abs(v[i] - v[0]));
    for (auto& [s2, v2] : by_speaker)
      if (s2 != s) across.push_back(std::abs(v2[0] - v[0]));
  }
  CHECK(median(within) < median(across));
}

TEST_CASE("corpus splits hold out whole test speakers") {
  const Corpus& c = toy_corpus();
  auto test = c.speakers_in("test"), train = c.speakers_in("train");
  CHECK(test.size() == 5);
  for (int s : test) CHECK(std::find(train.begin(), train.end(), s) == train.end());
  for (int s : train) {
    int val = 0;
    for (const auto& u : c.utterances)
      if (u.speaker == s && u.split == "val") ++val;
    CHECK(val == 1);
  }
  for (const auto& u : c.utterances) {
    CHECK(u.audio.size() == 12000);
    CHECK(dsp::peak(u.audio.samples) <= 0.5 + 1e-9);
  }
}

TEST_CASE("clean speech content stays below the band limit") {
  const auto& u = toy_corpus().utterances[3];
  Utterance hi = render_utterance(toy_corpus().speakers[u.speaker], u.id, 99, 2.0, 16000, 950.0);
  const dsp::Spectrogram s = dsp::stft(hi.audio, dsp::StftConfig{});
  double below = 0, above = 0;
  for (Eigen::Index f = 0; f < s.bins(); ++f) {
    const double hz = 16000.0 * static_cast<double>(f) / 512.0;
    const double e = s.magnitude.col(f).squaredNorm();
    (hz < 1000 ? below : above) += e;
  }
  CHECK(above / below < 1e-5);  // window sidelobes only
}

TEST_CASE("mixing is exact and calibrated") {
  const Corpus& c = toy_corpus();
  const auto test = c.indices("test");
  std::vector<double> sdr2, sdr3;
  MixtureSampler sampler(c, "test", SamplerConfig{}, 11);
  for (std::uint64_t i = 0; i < 100; ++i) {
    for (int k : {2, 3}) {
      SampleRequest req;
      req.n_speakers = k;
      MixSample s = sampler.draw(i, req);
      const Mixture& m = s.mix;
      REQUIRE(m.interferers.size() == static_cast<std::size_t>(k - 1));
      double err = 0;
      for (std::size_t n = 0; n < m.mixture.size(); ++n) {
        double sum = m.target.samples[n];
        for (const auto& w : m.interferers) sum += w.samples[n];
        err = std::max(err, std::abs(sum - m.mixture.samples[n]));
      }
      CHECK(err <= 1e-9);
      CHECK(dsp::peak(m.mixture.samples) <= 0.99 + 1e-12);
      (k == 2 ? sdr2 : sdr3).push_back(projection_sdr(m.target.samples, m.mixture.samples));
    }
  }
  CHECK(std::abs(median(sdr2)) <= 1.0);
  CHECK(std::abs(median(sdr3) + 3.7) <= 1.5);
}

TEST_CASE("mixture of equal-RMS sources is brought to the level") {
  dsp::Waveform a, b;
  a.sample_rate = b.sample_rate = 2000;
  for (int i = 0; i < 400; ++i) {
    a.samples.push_back(std::sin(0.1 * i));
    b.samples.push_back(0.01 * std::cos(0.37 * i));
  }
  Mixture m = make_mixture({a, 0}, {{b, 1}}, 1);
  CHECK(dsp::rms(m.target.samples) == doctest::Approx(0.1));
  CHECK(dsp::rms(m.interferers[0].samples) == doctest::Approx(0.1));

  dsp::Waveform z = b;
  std::fill(z.samples.begin(), z.samples.end(), 0.0);
  Mixture mz = make_mixture({a, 0}, {{z, 1}}, 1);
  CHECK(mz.mixture.samples == mz.target.samples);

  dsp::Waveform loud = a;
  for (double& s : loud.samples) s = s > 0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < loud.size(); i += 50) loud.samples[i] = 40.0;
  Mixture ml = make_mixture({loud, 0}, {{a, 1}}, 1);
  CHECK(dsp::peak(ml.mixture.samples) <= 0.99 + 1e-12);
  CHECK(ml.gains[0] < 0.1);

  CHECK_THROWS_AS(make_mixture({a, 0}, {{b, 1}}, 3), InvalidInput);
  CHECK_THROWS_AS(make_mixture({a, 0}, {{b, 1}}, 2), InvalidInput);
  CHECK_THROWS_AS(make_mixture({a, 0}, {{b, 0}}, 1), InvalidInput);
  dsp::Waveform shorter = b;
  shorter.samples.pop_back();
  CHECK_THROWS_AS(make_mixture({a, 0}, {{shorter, 1}}, 1), ShapeMismatch);
}

TEST_CASE("train-mode occlusion runs are legal") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto s = occlusion_schedule(2000, OcclusionMode::Train, 0.75, rng);
    CHECK(s.size() == 2000);
    CHECK(s.fraction() >= 0.70);
    CHECK(s.fraction() <= 0.80);
    for (auto [b, e] : s.runs()) {
      CHECK(e - b >= 15);
      CHECK(e - b <= 25);
    }
  }
  for (double f : {0.3, 0.5, 0.75}) {
    std::mt19937_64 rng(5);
    auto s = occlusion_schedule(50, OcclusionMode::Train, f, rng);
    CHECK(std::abs(s.fraction() - f) <= 0.05 + 1e-12);
    for (auto [b, e] : s.runs()) {
      CHECK(e - b >= 15);
      CHECK(e - b <= 25);
    }
  }
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(occlusion_schedule(30, OcclusionMode::Train, 0.95, rng), InvalidInput);
  CHECK_THROWS_AS(occlusion_schedule(50, OcclusionMode::Train, 0.1, rng), InvalidInput);
  CHECK_THROWS_AS(occlusion_schedule(20, OcclusionMode::Train, 0.75, rng), InvalidInput);
  CHECK_THROWS_AS(occlusion_schedule(50, OcclusionMode::Train, 1.5, rng), InvalidInput);
}

TEST_CASE("eval-edge occlusion covers a prefix and a suffix") {
  std::mt19937_64 rng(1);
  auto s = occlusion_schedule(200, OcclusionMode::EvalEdges, 0.8, rng);
  for (int i = 0; i < 200; ++i) CHECK(s.flags[static_cast<std::size_t>(i)] == ((i < 80 || i >= 120) ? 1 : 0));
  auto runs = s.runs();
  REQUIRE(runs.size() == 2);
  CHECK(runs[0] == std::make_pair(0, 80));
  CHECK(runs[1] == std::make_pair(120, 200));

  auto q = occlusion_schedule(200, OcclusionMode::EvalEdges, 0.75, rng);
  CHECK(q.runs() == std::vector<std::pair<int, int>>{{0, 75}, {125, 200}});
  for (auto mode : {OcclusionMode::EvalEdges, OcclusionMode::Train}) {
    auto z = occlusion_schedule(200, mode, 0.0, rng);
    CHECK(z.fraction() == 0.0);
    CHECK(z.runs().empty());
  }
  auto full = occlusion_schedule(50, OcclusionMode::EvalEdges, 1.0, rng);
  CHECK(full.fraction() == 1.0);
}

TEST_CASE("visual oracle tracks the clean target and not the occluder") {
  const Corpus& c = toy_corpus();
  MixtureSampler sampler(c, "test", SamplerConfig{}, 3);
  SampleRequest clear;
  MixSample s = sampler.draw(0, clear);
  REQUIRE(s.features.frames() == sampler.video_frames());
  REQUIRE(s.features.features.cols() == 32);
  CHECK(s.features.frames() == static_cast<Eigen::Index>(s.mix.mixture.size() / 80));

  const Mat oracle = envelope_oracle(s.mix.target, 32);
  REQUIRE(oracle.rows() == s.features.frames());
  double worst = 1.0;
  for (Eigen::Index t = 0; t < oracle.rows(); ++t) {
    const Eigen::RowVectorXd a = oracle.row(t), b = s.features.features.row(t);
    worst = std::min(worst, a.dot(b) / (a.norm() * b.norm()));
  }
  CHECK(worst > 0.99);
  CHECK((oracle - s.features.features).cwiseAbs().maxCoeff() < 1e-9);

  // envelope correlation pooled over many samples, per-sample means removed
  std::vector<double> tgt, clear_feat, occ_feat;
  SampleRequest occluded;
  occluded.occlusion_mode = OcclusionMode::EvalEdges;
  occluded.occlusion_fraction = 1.0;
  for (std::uint64_t i = 0; i < 40; ++i) {
    MixSample a = sampler.draw(i, clear), b = sampler.draw(i, occluded);
    REQUIRE(a.mix.target.samples == b.mix.target.samples);
    const Mat env = envelope_oracle(a.mix.target, 32);
    auto centred = [](const Eigen::VectorXd& v) { return Eigen::VectorXd(v.array() - v.mean()); };
    const Eigen::VectorXd e = centred(env.rowwise().mean()), fa = centred(a.features.features.rowwise().mean()),
                          fb = centred(b.features.features.rowwise().mean());
    for (Eigen::Index t = 0; t < e.size(); ++t) {
      tgt.push_back(e[t]);
      clear_feat.push_back(fa[t]);
      occ_feat.push_back(fb[t]);
    }
  }
  CHECK(pearson(tgt, clear_feat) > 0.99);
  CHECK(std::abs(pearson(tgt, occ_feat)) < 0.2);
}

TEST_CASE("zeros fill and schedule length errors") {
  const Corpus& c = toy_corpus();
  SamplerConfig cfg;
  cfg.oracle.fill = OcclusionFill::Zeros;
  MixtureSampler sampler(c, "test", cfg, 3);
  SampleRequest req;
  req.occlusion_mode = OcclusionMode::EvalEdges;
  req.occlusion_fraction = 0.5;
  MixSample s = sampler.draw(1, req);
  for (Eigen::Index t = 0; t < s.features.frames(); ++t) {
    if (s.occlusion.flags[static_cast<std::size_t>(t)])
      CHECK(s.features.features.row(t).isZero(0));
    else
      CHECK_FALSE(s.features.features.row(t).isZero(0));
  }
  auto wrong = OcclusionSchedule::clear(7);
  CHECK_THROWS_AS(visual_feature_oracle(s.mix.target, wrong, nullptr, OracleConfig{}), ShapeMismatch);
  std::mt19937_64 rng(0);
  auto occ = occlusion_schedule(s.features.frames(), OcclusionMode::EvalEdges, 0.5, rng);
  CHECK_THROWS_AS(visual_feature_oracle(s.mix.target, occ, nullptr, OracleConfig{}), InvalidInput);
}

TEST_CASE("enrollment modes") {
  const Corpus& c = toy_corpus();
  MixtureSampler sampler(c, "train", SamplerConfig{}, 5);
  for (std::uint64_t i = 0; i < 30; ++i) {
    SampleRequest req;
    req.enrollment = EnrollmentMode::Train;
    MixSample s = sampler.draw(i, req);
    REQUIRE(s.enrollment.audio.has_value());
    CHECK(s.enrollment.utterance_id == s.target_utterance);
    const std::size_t tb = s.crop_begin, te = s.crop_begin + s.mix.target.size();
    CHECK((s.enrollment.end <= tb || s.enrollment.begin >= te));
    CHECK(s.enrollment.audio->size() == 4000);

    req.enrollment = EnrollmentMode::Pre;
    MixSample p = sampler.draw(i, req);
    REQUIRE(p.enrollment.audio.has_value());
    CHECK(p.enrollment.utterance_id != p.target_utterance);
    CHECK(c.find(p.enrollment.utterance_id).speaker == p.target_speaker);
    CHECK(p.mix.mixture.samples == s.mix.mixture.samples);

    req.enrollment = EnrollmentMode::SelfPlaceholder;
    CHECK_FALSE(sampler.draw(i, req).enrollment.audio.has_value());
  }

  // an utterance shorter than twice the minimum cannot host train enrollment
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(sample_enrollment(c, 0, 0, 2000, EnrollmentMode::Train, 4000, 3.5, rng), InvalidInput);
  // no room on either side of a centred 4 s target
  CHECK_THROWS_AS(sample_enrollment(c, 0, 2000, 10000, EnrollmentMode::Train, 4000, 2.0, rng), InvalidInput);

  Corpus single = c;
  single.utterances.resize(1);
  CHECK_THROWS_AS(sample_enrollment(single, 0, 0, 4000, EnrollmentMode::Pre, 4000, 2.0, rng), InvalidInput);
}

TEST_CASE("samples are reproducible and index dependent") {
  const Corpus& c = toy_corpus();
  MixtureSampler a(c, "train", SamplerConfig{}, 9), b(c, "train", SamplerConfig{}, 9);
  SampleRequest req;
  req.n_speakers = 3;
  req.occlusion_fraction = 0.75;
  req.enrollment = EnrollmentMode::Train;
  MixSample x = a.draw(4, req), y = b.draw(4, req), z = a.draw(5, req);
  CHECK(x.mix.mixture.samples == y.mix.mixture.samples);
  CHECK(x.features.features == y.features.features);
  CHECK(x.occlusion.flags == y.occlusion.flags);
  CHECK(x.enrollment.begin == y.enrollment.begin);
  CHECK(x.sample_id == "train-4");
  CHECK(x.mix.mixture.samples != z.mix.mixture.samples);

  req.n_speakers = 2;
  MixSample two = a.draw(4, req);
  CHECK(two.interferer_speakers[0] == x.interferer_speakers[0]);
  CHECK(two.target_utterance == x.target_utterance);
  CHECK(std::find(x.interferer_speakers.begin(), x.interferer_speakers.end(), x.target_speaker) ==
        x.interferer_speakers.end());
}

TEST_CASE("crop tokens keep whole syllables inside the margin") {
  std::vector<Syllable> syl{{'S', 0.10, 0.22}, {'M', 0.40, 0.61}, {'L', 0.90, 1.20}};
  CHECK(crop_tokens(syl, 0.0, 1.0, 0.03) == std::vector<std::string>{"S", "M"});
  CHECK(crop_tokens(syl, 0.08, 1.3, 0.03) == std::vector<std::string>{"M", "L"});
  CHECK(crop_tokens(syl, 0.5, 0.8, 0.0).empty());
}
