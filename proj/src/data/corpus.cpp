#include "avsep/data/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "avsep/data/seed.hpp"
#include "avsep/dsp/stft.hpp"

namespace avsep::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kRamp = 0.020;

struct SyllableClass {
  char symbol;
  double min_s, max_s;
};
constexpr SyllableClass kClasses[] = {{'S', 0.100, 0.140}, {'M', 0.190, 0.230}, {'L', 0.280, 0.320}};

std::string utterance_name(int speaker, int utt) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "spk%02d_utt%02d", speaker, utt);
  return buf;
}

// Raised-cosine edges, flat-ish top with a gentle arch.
double syllable_envelope(const Syllable& s, double t) {
  if (t <= s.start_s || t >= s.end_s) return 0.0;
  const double into = t - s.start_s, left = s.end_s - t;
  double g = 1.0;
  if (into < kRamp) g *= 0.5 - 0.5 * std::cos(std::numbers::pi * into / kRamp);
  if (left < kRamp) g *= 0.5 - 0.5 * std::cos(std::numbers::pi * left / kRamp);
  const double u = (t - s.start_s) / (s.end_s - s.start_s);
  return g * (0.8 + 0.2 * std::sin(std::numbers::pi * u));
}

dsp::StftConfig analysis_config(int rate) {
  dsp::StftConfig c;
  c.sample_rate = rate;
  c.window_len = std::max(4, static_cast<int>(std::lround(0.025 * rate)));
  c.hop_len = std::max(1, static_cast<int>(std::lround(0.010 * rate)));
  c.fft_size = 1;
  while (c.fft_size < c.window_len) c.fft_size *= 2;
  return c;
}

std::string format_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", s);
  return buf;
}

}  // namespace

void CorpusConfig::validate() const {
  require(n_speakers >= 2, "corpus: need at least 2 speakers");
  require(n_speakers <= 23, "corpus: at most 23 speakers fit the 10 Hz f0 grid in [80, 300] Hz");
  require(utterances_per_speaker >= 1, "corpus: need at least one utterance per speaker");
  require(duration_s >= 1.0, "corpus: utterances must be at least 1 s long");
  require(band_limit_hz > 300.0, "corpus: band limit must exceed the highest f0");
  require(test_stride >= 0 && (test_stride == 0 || (test_offset >= 0 && test_offset < test_stride)),
          "corpus: invalid test split layout");
}

std::vector<std::size_t> Corpus::indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (split.empty() || utterances[i].split == split) out.push_back(i);
  return out;
}

std::vector<int> Corpus::speakers_in(const std::string& split) const {
  std::vector<int> out;
  for (const Utterance& u : utterances)
    if ((split.empty() || u.split == split) && std::find(out.begin(), out.end(), u.speaker) == out.end())
      out.push_back(u.speaker);
  std::sort(out.begin(), out.end());
  return out;
}

const Utterance& Corpus::find(const std::string& id) const {
  for (const Utterance& u : utterances)
    if (u.id == id) return u;
  throw InvalidInput("corpus: no utterance named " + id);
}

std::vector<SpeakerSpec> make_speakers(std::uint64_t seed, int n) {
  require(n >= 2 && n <= 23, "make_speakers: n must be in [2, 23]");
  std::mt19937_64 rng(derive_seed(seed, "speakers"));
  std::vector<int> grid;
  for (int f = 80; f <= 300; f += 10) grid.push_back(f);
  std::shuffle(grid.begin(), grid.end(), rng);
  grid.resize(static_cast<std::size_t>(n));
  std::sort(grid.begin(), grid.end());

  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::vector<SpeakerSpec> out;
  for (int i = 0; i < n; ++i) {
    SpeakerSpec s;
    s.id = i;
    s.f0_base = grid[static_cast<std::size_t>(i)];
    s.f0_range = 0.06 * s.f0_base;
    s.formants = {u(250, 450), u(520, 720), u(780, 900)};
    s.bandwidths = {u(50, 90), u(50, 90), u(50, 90)};
    s.vibrato_rate = u(4.0, 7.0);
    s.vibrato_depth = u(0.005, 0.02);
    s.tilt = u(0.7, 0.9);
    out.push_back(s);
  }
  return out;
}

Utterance render_utterance(const SpeakerSpec& spec, const std::string& id, std::uint64_t seed, double duration_s,
                           int rate, double band_limit_hz) {
  require(rate > 0, "render_utterance: sample rate must be positive");
  const double band = std::min(band_limit_hz, 0.475 * rate);
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  Utterance utt;
  utt.id = id;
  utt.speaker = spec.id;

  // syllable layout
  const double trail = 0.15;
  double t = u(0.15, 0.40);
  std::vector<double> formant_scale, level, pitch_offset;
  while (true) {
    const SyllableClass& c = kClasses[std::uniform_int_distribution<int>(0, 2)(rng)];
    const double dur = u(c.min_s, c.max_s);
    if (t + dur > duration_s - trail) break;
    utt.syllables.push_back({c.symbol, t, t + dur});
    formant_scale.push_back(u(0.9, 1.1));
    level.push_back(u(0.7, 1.0));
    pitch_offset.push_back(u(-0.5, 0.5) * spec.f0_range);
    t += dur + u(0.08, 0.16);
  }

  // f0 random walk at a 1 kHz control rate, reflected inside the range
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * rate));
  const std::size_t n_ctrl = static_cast<std::size_t>(std::ceil(duration_s * 1000.0)) + 2;
  std::vector<double> walk(n_ctrl);
  std::normal_distribution<double> step(0.0, 0.02 * spec.f0_range);
  double w = u(-0.5, 0.5) * spec.f0_range;
  for (double& v : walk) {
    w += step(rng);
    if (w > spec.f0_range) w = 2 * spec.f0_range - w;
    if (w < -spec.f0_range) w = -2 * spec.f0_range - w;
    v = w;
  }
  const int max_harmonics = static_cast<int>(band / 70.0) + 1;
  std::vector<double> phase(static_cast<std::size_t>(max_harmonics));
  for (double& p : phase) p = u(0.0, kTwoPi);
  const double vib_phase = u(0.0, kTwoPi);

  std::vector<double> out(n, 0.0);
  std::size_t syl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ti = static_cast<double>(i) / rate;
    const double c = ti * 1000.0;
    const std::size_t ci = std::min(static_cast<std::size_t>(c), n_ctrl - 2);
    const double frac = c - static_cast<double>(ci);
    while (syl < utt.syllables.size() && utt.syllables[syl].end_s <= ti) ++syl;
    double f0 = spec.f0_base + (1 - frac) * walk[ci] + frac * walk[ci + 1];
    const bool active = syl < utt.syllables.size() && ti > utt.syllables[syl].start_s;
    if (active) f0 += pitch_offset[syl];
    f0 *= 1.0 + spec.vibrato_depth * std::sin(kTwoPi * spec.vibrato_rate * ti + vib_phase);

    double y = 0.0;
    const double env = active ? level[syl] * syllable_envelope(utt.syllables[syl], ti) : 0.0;
    for (int h = 1; h <= max_harmonics; ++h) {
      double& ph = phase[static_cast<std::size_t>(h - 1)];
      const double fh = h * f0;
      ph = std::fmod(ph + kTwoPi * fh / rate, kTwoPi);
      if (env == 0.0 || fh >= band) continue;
      double a = 0.1;
      for (std::size_t j = 0; j < spec.formants.size(); ++j) {
        const double centre = spec.formants[j] * (j < 2 ? formant_scale[syl] : 1.0);
        const double d = (fh - centre) / spec.bandwidths[j];
        a += 1.0 / (1.0 + d * d);
      }
      a *= std::pow(spec.tilt, h - 1);
      if (fh > band - 100.0) a *= 0.5 + 0.5 * std::cos(std::numbers::pi * (fh - (band - 100.0)) / 100.0);
      y += a * std::sin(ph);
    }
    out[i] = env * y;
  }
  const double pk = dsp::peak(out);
  if (pk > 0)
    for (double& v : out) v *= 0.5 / pk;
  utt.audio.samples = std::move(out);
  utt.audio.sample_rate = rate;
  return utt;
}

Corpus generate_corpus(const CorpusConfig& cfg, int rate) {
  cfg.validate();
  Corpus c;
  c.sample_rate = rate;
  c.speakers = make_speakers(cfg.seed, cfg.n_speakers);
  for (const SpeakerSpec& s : c.speakers)
    for (int k = 0; k < cfg.utterances_per_speaker; ++k) {
      const std::string id = utterance_name(s.id, k);
      Utterance u = render_utterance(s, id, derive_seed(cfg.seed, id), cfg.duration_s, rate, cfg.band_limit_hz);
      const bool test = cfg.test_stride > 0 && s.id % cfg.test_stride == cfg.test_offset;
      const bool val = cfg.utterances_per_speaker > 1 && k == cfg.utterances_per_speaker - 1;
      u.split = test ? "test" : val ? "val" : "train";
      c.utterances.push_back(std::move(u));
    }
  return c;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("manifest: cannot open " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    require(fields.size() == 5, "manifest " + path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    ManifestRecord r;
    r.sample_id = fields[0];
    r.wav_path = fields[1];
    r.speaker_id = std::stoi(fields[2]);
    r.duration_s = std::stod(fields[3]);
    r.split = fields[4];
    for (const ManifestRecord& prev : out)
      require(prev.sample_id != r.sample_id, "manifest: duplicate sample_id " + r.sample_id);
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("manifest: cannot write " + path.string());
  for (const ManifestRecord& r : records)
    out << r.sample_id << '\t' << r.wav_path << '\t' << r.speaker_id << '\t' << format_seconds(r.duration_s) << '\t'
        << r.split << '\n';
}

std::vector<Syllable> read_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("transcript: cannot open " + path.string());
  std::vector<Syllable> out;
  Syllable s;
  std::string sym;
  while (in >> sym >> s.start_s >> s.end_s) {
    require(sym.size() == 1, "transcript: bad symbol in " + path.string());
    s.symbol = sym[0];
    out.push_back(s);
  }
  return out;
}

void write_transcript(const std::filesystem::path& path, const std::vector<Syllable>& syllables) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("transcript: cannot write " + path.string());
  for (const Syllable& s : syllables)
    out << s.symbol << ' ' << format_seconds(s.start_s) << ' ' << format_seconds(s.end_s) << '\n';
}

std::vector<ManifestRecord> synth_speaker_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir) {
  Corpus c = generate_corpus(cfg, 16000);
  std::filesystem::create_directories(out_dir / "wav");
  std::vector<ManifestRecord> records;
  for (const Utterance& u : c.utterances) {
    const std::string rel = "wav/" + u.id + ".wav";
    dsp::write_wav(out_dir / rel, u.audio);
    write_transcript(out_dir / ("wav/" + u.id + ".txt"), u.syllables);
    records.push_back({u.id, rel, u.speaker, u.audio.duration_s(), u.split});
  }
  write_manifest(out_dir / "manifest.tsv", records);
  return records;
}

Corpus load_corpus(const std::filesystem::path& manifest, int rate) {
  const auto records = read_manifest(manifest);
  require(!records.empty(), "load_corpus: empty manifest");
  const auto base = manifest.parent_path();
  Corpus c;
  c.sample_rate = rate;
  for (const ManifestRecord& r : records) {
    const auto wav = base / r.wav_path;
    if (!std::filesystem::exists(wav)) throw InvalidInput("load_corpus: missing " + wav.string());
    Utterance u;
    u.id = r.sample_id;
    u.speaker = r.speaker_id;
    u.split = r.split;
    u.audio = dsp::convert_rate(dsp::read_wav(wav, 16000), rate);
    auto txt = wav;
    txt.replace_extension(".txt");
    if (std::filesystem::exists(txt)) u.syllables = read_transcript(txt);
    c.utterances.push_back(std::move(u));
  }
  for (int id : c.speakers_in("")) {
    SpeakerSpec s;
    s.id = id;
    c.speakers.push_back(s);
  }
  return c;
}

std::vector<std::string> crop_tokens(const std::vector<Syllable>& syllables, double start_s, double end_s,
                                     double margin_s) {
  std::vector<std::string> out;
  for (const Syllable& s : syllables)
    if (s.start_s >= start_s + margin_s && s.end_s <= end_s - margin_s) out.emplace_back(1, s.symbol);
  return out;
}

double spectral_centroid(const dsp::Waveform& w) {
  const dsp::StftConfig cfg = analysis_config(w.sample_rate);
  const dsp::Spectrogram s = dsp::stft(w, cfg);
  double num = 0.0, den = 0.0;
  for (Eigen::Index t = 0; t < s.frames(); ++t)
    for (Eigen::Index f = 0; f < s.bins(); ++f) {
      const double p = static_cast<double>(s.magnitude(t, f)) * s.magnitude(t, f);
      num += p * f * static_cast<double>(w.sample_rate) / cfg.fft_size;
      den += p;
    }
  return den > 0 ? num / den : 0.0;
}

}  // namespace avsep::data
