#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsep/data/corpus.hpp"
#include "avsep/data/mixture.hpp"
#include "avsep/eval/sweep.hpp"
#include "avsep/model/config.hpp"
#include "avsep/train/curriculum.hpp"
#include "avsep/train/embedder.hpp"
#include "avsep/train/pit.hpp"

namespace avsep::cli {

// Thrown for anything the user typed wrong; main() maps it to exit code 1.
class UsageError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

enum class KeyType { Int, Real, Bool, String, RealList, IntList };

struct KeySpec {
  std::string key;      // dotted name, also the long flag
  KeyType type;
  nlohmann::json value; // default; null means "from the variant preset"
  std::string help;
  std::string alias;    // optional short flag, e.g. --speakers
};

// Every tunable of a run, as a flat map of dotted keys. Files and flags
// can only set keys listed in specs().
class RunConfig {
public:
  RunConfig();

  static const std::vector<KeySpec>& specs();

  // Flat JSON object; unknown keys or ill-typed values are usage errors.
  void merge_file(const std::filesystem::path& path);
  void merge(const nlohmann::json& flat);
  void set(const std::string& key, const std::string& text);

  const nlohmann::json& get(const std::string& key) const;
  const nlohmann::json& values() const { return values_; }

  // Module configurations.
  std::uint64_t seed(const std::string& purpose) const;
  data::CorpusConfig corpus() const;
  dsp::StftConfig stft() const;
  model::ModelConfig model() const;
  data::SamplerConfig sampler() const;
  train::EmbedderPretrainConfig embedder() const;
  train::OptimizerConfig optimizer() const;
  train::TrainConfig train(const std::string& variant) const;
  train::PitTrainConfig pit() const;
  eval::SweepConfig sweep() const;

  std::filesystem::path out() const { return get("out").get<std::string>(); }
  int threads() const { return get("threads").get<int>(); }

  // Fills null train.steps* entries from the preset of `variant`.
  void resolve_presets(const std::string& variant);

private:
  nlohmann::json values_;
};

nlohmann::json parse_value(const KeySpec& spec, const std::string& text);

// CVFT: "CVFT", u32 frames, u32 dim, u32 flags, then frames * dim
// little-endian f32, row by row. Flag bit 0: a trailing byte per frame
// holds the occlusion flag.
struct FeatureFile {
  Mat features;
  std::vector<std::uint8_t> occluded;  // empty when absent
};
std::string encode_features(const FeatureFile& f);
FeatureFile decode_features(std::string_view bytes);
void write_features(const std::filesystem::path& path, const FeatureFile& f);
FeatureFile read_features(const std::filesystem::path& path);

// Loads corpus.dir/manifest.tsv at the model rate.
data::Corpus load_run_corpus(const RunConfig& cfg);

// `in.wav` -> `in.enhanced.wav`.
std::filesystem::path enhanced_path(const std::filesystem::path& input);

}  // namespace avsep::cli
