#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsep/data/mixture.hpp"
#include "avsep/eval/metrics.hpp"
#include "avsep/model/network.hpp"

namespace avsep::eval {

enum class EnrollUse { Pre, Self, None };

std::string enroll_use_name(EnrollUse e);

// A model and the way it is run during evaluation.
struct EvalVariant {
  std::string name;
  EnrollUse enrollment = EnrollUse::None;
  bool use_video = true;
  std::shared_ptr<const model::EnhancementNet> net;  // exactly one of net / pit
  std::shared_ptr<const model::PitNet> pit;
  std::string checkpoint_digest;  // hex FNV-1a of the checkpoint file
};

struct SweepConfig {
  std::vector<double> fractions = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<int> speakers = {2, 3};
  int samples_per_cell = 100;
  std::uint64_t seed = 1;
  std::string split = "test";
  data::SamplerConfig sampler;
  EnvelopeDecoder::Config decoder;
  int threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

// One evaluated sample. WER fields are NaN when the crop holds no whole
// syllable; `error` is set when transcription failed.
struct SampleRecord {
  std::string sample_id;
  std::string variant;
  int n_speakers = 0;
  double occlusion_fraction = 0.0;
  std::string enrollment;
  std::uint64_t seed = 0;
  double sdr_db = 0.0;
  double mixture_sdr_db = 0.0;
  double wer_pct = 0.0;
  double mixture_wer_pct = 0.0;
  double pass1_sdr_db = 0.0;  // self-enrollment only, else NaN
  std::string error;
};

struct CellSummary {
  std::string variant;
  int n_speakers = 0;
  double occlusion_fraction = 0.0;
  std::string enrollment;
  double median_sdr_db = 0.0;
  double median_wer_pct = 0.0;
  double median_mixture_sdr_db = 0.0;
  double median_mixture_wer_pct = 0.0;
  double median_pass1_sdr_db = 0.0;
  int n_samples = 0;
};

struct EvalReport {
  std::vector<SampleRecord> rows;
  std::vector<CellSummary> cells;
  nlohmann::json config;
  std::string fingerprint;

  const CellSummary& cell(const std::string& variant, int n_speakers, double fraction) const;
};

// Every (variant, speakers, fraction) cell on eval-edge occlusion. Sample i
// of a cell is the same mixture for every variant and fraction.
EvalReport occlusion_sweep(const std::vector<EvalVariant>& variants, const data::Corpus& corpus,
                           const SweepConfig& cfg);

// Medians over rows, grouped by cell in first-appearance order.
std::vector<CellSummary> summarize(const std::vector<SampleRecord>& rows);

double median(std::vector<double> v);  // NaN entries are ignored; NaN when empty

std::string to_csv(const EvalReport& r);
std::string rows_to_csv(const EvalReport& r);
nlohmann::json to_json(const EvalReport& r);

std::string hex64(std::uint64_t v);

}  // namespace avsep::eval
