#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avsep/dsp/waveform.hpp"

namespace avsep::data {

// A toy voice: harmonic source around f0_base, shaped by fixed resonances.
struct SpeakerSpec {
  int id = 0;
  double f0_base = 120.0;         // Hz, on a 10 Hz grid inside [80, 300]
  double f0_range = 10.0;         // random-walk half width, Hz
  std::vector<double> formants;   // resonance centres, Hz
  std::vector<double> bandwidths; // resonance half widths, Hz
  double vibrato_rate = 5.0;      // Hz
  double vibrato_depth = 0.01;    // fraction of f0
  double tilt = 0.8;              // per-harmonic amplitude decay
};

// Syllable classes by duration: S 100-140 ms, M 190-230 ms, L 280-320 ms.
struct Syllable {
  char symbol = 'S';
  double start_s = 0.0;
  double end_s = 0.0;
};

struct Utterance {
  std::string id;  // e.g. spk03_utt02
  int speaker = 0;
  std::string split;  // train | val | test
  dsp::Waveform audio;
  std::vector<Syllable> syllables;
};

struct CorpusConfig {
  std::uint64_t seed = 1;
  int n_speakers = 22;
  int utterances_per_speaker = 8;
  double duration_s = 6.0;
  // Every content component stays below this frequency so the corpus can
  // be decimated to a 2 kHz model rate without loss.
  double band_limit_hz = 950.0;
  // Every test_stride-th speaker (by f0 rank, starting at test_offset) is
  // held out entirely; the rest keep one validation utterance each.
  int test_stride = 4;
  int test_offset = 2;

  void validate() const;
};

struct Corpus {
  std::vector<SpeakerSpec> speakers;
  std::vector<Utterance> utterances;
  int sample_rate = 16000;

  std::vector<std::size_t> indices(const std::string& split) const;
  std::vector<int> speakers_in(const std::string& split) const;
  const Utterance& find(const std::string& id) const;
};

std::vector<SpeakerSpec> make_speakers(std::uint64_t seed, int n);

// Deterministic given (spec, utterance seed); `rate` only changes sampling.
Utterance render_utterance(const SpeakerSpec& spec, const std::string& id, std::uint64_t seed, double duration_s,
                           int rate, double band_limit_hz);

// Whole corpus in memory at `rate`.
Corpus generate_corpus(const CorpusConfig& cfg, int rate);

// Manifest row: sample_id, wav_path (relative to the manifest), speaker_id,
// duration_s, split. Tab separated, one record per line, no header.
struct ManifestRecord {
  std::string sample_id;
  std::string wav_path;
  int speaker_id = 0;
  double duration_s = 0.0;
  std::string split;
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

// Transcript sidecar next to each WAV (same stem, .txt): one syllable per
// line as "<symbol> <start_s> <end_s>".
std::vector<Syllable> read_transcript(const std::filesystem::path& path);
void write_transcript(const std::filesystem::path& path, const std::vector<Syllable>& syllables);

// Renders at 16 kHz and writes out_dir/manifest.tsv, out_dir/wav/<id>.wav and
// out_dir/wav/<id>.txt. Returns the manifest records.
std::vector<ManifestRecord> synth_speaker_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

// Loads a manifest and its WAVs, converting audio to `rate`.
Corpus load_corpus(const std::filesystem::path& manifest, int rate);

// Symbols of the syllables lying fully inside [start_s + margin_s, end_s - margin_s].
std::vector<std::string> crop_tokens(const std::vector<Syllable>& syllables, double start_s, double end_s,
                                     double margin_s);

double spectral_centroid(const dsp::Waveform& w);

}  // namespace avsep::data
