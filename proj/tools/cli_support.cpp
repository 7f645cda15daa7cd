#include "cli_support.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "avsep/data/seed.hpp"
#include "avsep/train/checkpoint.hpp"

namespace avsep::cli {

using nlohmann::json;

namespace {

std::vector<KeySpec> build_specs() {
  const data::CorpusConfig cc;
  const dsp::StftConfig st = dsp::StftConfig::toy();
  const model::ModelConfig mc = model::ModelConfig::toy();
  const data::SamplerConfig sc;
  const train::EmbedderPretrainConfig ec;
  const train::TrainConfig tc = train::TrainConfig::preset("vs");
  const train::OptimizerConfig oc;
  const train::PitTrainConfig pc;
  const eval::SweepConfig ev;
  using K = KeyType;
  return {
      {"seed", K::Int, 1, "master seed; every random stream is derived from it", "--seed"},
      {"out", K::String, "run", "output directory for checkpoints and reports", "--out"},
      {"threads", K::Int, 1, "evaluation worker threads (1 = bit-exact ordering)", "--threads"},

      {"corpus.dir", K::String, "corpus", "directory holding manifest.tsv", "--corpus"},
      {"corpus.speakers", K::Int, cc.n_speakers, "toy speakers to synthesise (2..23)", "--speakers"},
      {"corpus.utterances", K::Int, cc.utterances_per_speaker, "utterances per speaker", ""},
      {"corpus.duration_s", K::Real, cc.duration_s, "utterance length in seconds", ""},
      {"corpus.band_limit_hz", K::Real, cc.band_limit_hz, "highest synthesised frequency", ""},
      {"corpus.test_stride", K::Int, cc.test_stride, "every n-th speaker is held out for testing (0 = none)", ""},
      {"corpus.test_offset", K::Int, cc.test_offset, "first held-out speaker", ""},

      {"stft.rate", K::Int, st.sample_rate, "model sample rate", ""},
      {"stft.window", K::Int, st.window_len, "analysis window length in samples", ""},
      {"stft.hop", K::Int, st.hop_len, "hop length in samples", ""},
      {"stft.fft", K::Int, st.fft_size, "FFT size (bins = fft/2 + 1)", ""},

      {"model.width_scale", K::Int, mc.width_scale, "divide the full-size layer widths by this", ""},
      {"model.video_dim", K::Int, mc.video_dim, "visual feature size per frame", ""},
      {"model.emb_dim", K::Int, mc.emb_dim, "speaker embedding and stream output width", ""},
      {"model.blstm_hidden", K::Int, mc.blstm_hidden, "fusion BLSTM units per direction", ""},
      {"model.fc_fusion_width", K::Int, mc.fc_fusion_width, "fusion fully connected width", ""},
      {"model.phase_hidden", K::Int, mc.phase_hidden, "phase subnetwork channels", ""},
      {"model.embedder_min_frames", K::Int, mc.embedder_min_frames, "shortest enrollment the embedder accepts", ""},

      {"sampler.crop_s", K::Real, sc.crop_s, "training and evaluation crop length", ""},
      {"sampler.enroll_s", K::Real, sc.enroll_s, "enrollment segment length", ""},
      {"sampler.min_enroll_s", K::Real, sc.min_enroll_s, "shortest enrollment used when a crop leaves less room", ""},
      {"sampler.level_rms", K::Real, sc.level_rms, "mixture level fed to the network", ""},
      {"sampler.occlusion_fill", K::String, "distractor", "occluded frames: distractor | zeros", ""},

      {"embedder.steps", K::Int, ec.steps, "speaker classification steps", ""},
      {"embedder.batch", K::Int, ec.batch_size, "crops per step", ""},
      {"embedder.crop_s", K::Real, ec.crop_s, "crop length", ""},
      {"embedder.lr", K::Real, ec.optimizer.lr, "step size", ""},

      {"train.batch", K::Int, tc.batch_size, "mixtures per step", ""},
      {"train.steps1", K::Int, nullptr, "phase 1 steps (default: variant preset)", ""},
      {"train.steps2", K::Int, nullptr, "phase 2 steps (default: variant preset)", ""},
      {"train.steps3", K::Int, nullptr, "phase 3 steps (default: variant preset)", ""},
      {"train.steps4", K::Int, nullptr, "phase 4 steps (default: variant preset)", ""},
      {"train.phase1_three_speaker_fraction", K::Real, tc.phase1_three_speaker_fraction,
       "final share of phase 1 using 3-speaker mixtures", ""},
      {"train.phase2_speakers", K::Int, tc.phase2_speakers, "speakers in phases 2-4 (0 = alternate 2 and 3)", ""},
      {"train.occlusion_fraction", K::Real, tc.occlusion_fraction, "occluded share of frames in occluded samples", ""},
      {"train.occlusion_probability", K::Real, tc.occlusion_probability, "share of samples that get occlusions", ""},
      {"train.embedding_dropout", K::Real, tc.embedding_dropout, "probability of zeroing the speaker embedding", ""},
      {"train.unfreeze_embedder", K::Bool, tc.unfreeze_embedder, "train the embedder in phase 4", ""},
      {"train.phase4_lr_scale", K::Real, tc.phase4_lr_scale, "phase 4 step size relative to optim.lr", ""},
      {"train.val_samples", K::Int, tc.val_samples, "validation mixtures", ""},
      {"train.val_every", K::Int, tc.val_every, "steps between plateau checks (0 = off)", ""},
      {"train.checkpoint_every", K::Int, 200, "steps between checkpoint writes (0 = phase ends only)", ""},

      {"optim.kind", K::String, oc.kind, "adam | sgd", ""},
      {"optim.lr", K::Real, oc.lr, "step size", ""},
      {"optim.beta1", K::Real, oc.beta1, "Adam first-moment decay", ""},
      {"optim.beta2", K::Real, oc.beta2, "Adam second-moment decay", ""},
      {"optim.eps", K::Real, oc.eps, "Adam denominator offset", ""},
      {"optim.clip_norm", K::Real, oc.clip_norm, "global gradient norm limit (0 = off)", ""},
      {"optim.patience", K::Int, oc.patience, "plateau checks before halving the step size", ""},
      {"optim.decay", K::Real, oc.decay, "step size factor on a plateau", ""},
      {"optim.min_lr", K::Real, oc.min_lr, "step size floor", ""},

      {"pit.steps", K::Int, pc.steps, "PIT baseline steps", ""},
      {"pit.batch", K::Int, pc.batch_size, "PIT mixtures per step", ""},
      {"pit.sources", K::Int, pc.sources, "PIT output masks", ""},

      {"eval.fractions", K::RealList, ev.fractions, "sweep occlusion fractions", ""},
      {"eval.speakers", K::IntList, ev.speakers, "sweep speaker counts", ""},
      {"eval.samples", K::Int, ev.samples_per_cell, "mixtures per cell", ""},
      {"eval.split", K::String, ev.split, "corpus split to evaluate on", ""},
      {"eval.fraction", K::Real, 0.0, "occlusion fraction for `evaluate`", ""},
      {"eval.enroll", K::String, "pre,self,none", "enrollment modes evaluated for vs models", ""},
  };
}

const KeySpec& spec_for(const std::string& key) {
  for (const KeySpec& s : RunConfig::specs())
    if (s.key == key) return s;
  throw UsageError("unknown configuration key '" + key + "'");
}

json check_type(const KeySpec& s, const json& v) {
  auto bad = [&] { return UsageError("configuration key '" + s.key + "' has the wrong type: " + v.dump()); };
  if (v.is_null()) {
    if (!s.value.is_null()) throw bad();
    return v;
  }
  switch (s.type) {
    case KeyType::Int:
      if (!v.is_number_integer()) throw bad();
      return v;
    case KeyType::Real:
      if (!v.is_number()) throw bad();
      return v.get<double>();
    case KeyType::Bool:
      if (!v.is_boolean()) throw bad();
      return v;
    case KeyType::String:
      if (!v.is_string()) throw bad();
      return v;
    case KeyType::RealList:
    case KeyType::IntList: {
      if (v.is_string()) return parse_value(s, v.get<std::string>());
      if (!v.is_array() || v.empty()) throw bad();
      json out = json::array();
      for (const json& x : v) {
        if (s.type == KeyType::IntList ? !x.is_number_integer() : !x.is_number()) throw bad();
        out.push_back(s.type == KeyType::IntList ? json(x.get<int>()) : json(x.get<double>()));
      }
      return out;
    }
  }
  return v;
}

int as_int(const json& v) { return v.get<int>(); }

}  // namespace

const std::vector<KeySpec>& RunConfig::specs() {
  static const std::vector<KeySpec> s = build_specs();
  return s;
}

RunConfig::RunConfig() : values_(json::object()) {
  for (const KeySpec& s : specs()) values_[s.key] = s.value;
}

json parse_value(const KeySpec& s, const std::string& text) {
  auto bad = [&] { return UsageError("--" + s.key + ": cannot read '" + text + "'"); };
  try {
    std::size_t used = 0;
    switch (s.type) {
      case KeyType::Int: {
        const long long v = std::stoll(text, &used);
        if (used != text.size()) throw bad();
        return v;
      }
      case KeyType::Real: {
        const double v = std::stod(text, &used);
        if (used != text.size()) throw bad();
        return v;
      }
      case KeyType::Bool:
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw bad();
      case KeyType::String:
        return text;
      case KeyType::RealList:
      case KeyType::IntList: {
        json out = json::array();
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
          KeySpec one = s;
          one.type = s.type == KeyType::IntList ? KeyType::Int : KeyType::Real;
          out.push_back(parse_value(one, item));
        }
        if (out.empty()) throw bad();
        return out;
      }
    }
  } catch (const std::logic_error&) {
    throw bad();
  }
  return nullptr;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file " + path.string() + " must hold a JSON object");
  merge(j);
}

void RunConfig::merge(const json& flat) {
  for (const auto& [k, v] : flat.items()) {
    const KeySpec& s = spec_for(k);
    values_[k] = check_type(s, v);
  }
}

void RunConfig::set(const std::string& key, const std::string& text) { values_[key] = parse_value(spec_for(key), text); }

const json& RunConfig::get(const std::string& key) const {
  spec_for(key);
  return values_.at(key);
}

std::uint64_t RunConfig::seed(const std::string& purpose) const {
  return data::derive_seed(get("seed").get<std::uint64_t>(), purpose);
}

data::CorpusConfig RunConfig::corpus() const {
  data::CorpusConfig c;
  c.seed = get("seed").get<std::uint64_t>();
  c.n_speakers = as_int(get("corpus.speakers"));
  c.utterances_per_speaker = as_int(get("corpus.utterances"));
  c.duration_s = get("corpus.duration_s").get<double>();
  c.band_limit_hz = get("corpus.band_limit_hz").get<double>();
  c.test_stride = as_int(get("corpus.test_stride"));
  c.test_offset = as_int(get("corpus.test_offset"));
  c.validate();
  return c;
}

dsp::StftConfig RunConfig::stft() const {
  dsp::StftConfig s;
  s.sample_rate = as_int(get("stft.rate"));
  s.window_len = as_int(get("stft.window"));
  s.hop_len = as_int(get("stft.hop"));
  s.fft_size = as_int(get("stft.fft"));
  s.validate();
  return s;
}

model::ModelConfig RunConfig::model() const {
  model::ModelConfig m;
  m.width_scale = as_int(get("model.width_scale"));
  m.video_dim = as_int(get("model.video_dim"));
  m.emb_dim = as_int(get("model.emb_dim"));
  m.freq_bins = stft().bins();
  m.blstm_hidden = as_int(get("model.blstm_hidden"));
  m.fc_fusion_width = as_int(get("model.fc_fusion_width"));
  m.phase_hidden = as_int(get("model.phase_hidden"));
  m.embedder_min_frames = as_int(get("model.embedder_min_frames"));
  m.validate();
  return m;
}

data::SamplerConfig RunConfig::sampler() const {
  data::SamplerConfig s;
  s.oracle.stft = stft();
  s.oracle.video_dim = as_int(get("model.video_dim"));
  s.crop_s = get("sampler.crop_s").get<double>();
  s.enroll_s = get("sampler.enroll_s").get<double>();
  s.min_enroll_s = std::min(s.enroll_s, get("sampler.min_enroll_s").get<double>());
  s.level_rms = get("sampler.level_rms").get<double>();
  s.oracle.level_rms = s.level_rms;
  const std::string fill = get("sampler.occlusion_fill").get<std::string>();
  if (fill != "distractor" && fill != "zeros") throw UsageError("sampler.occlusion_fill must be distractor or zeros");
  s.oracle.fill = fill == "zeros" ? data::OcclusionFill::Zeros : data::OcclusionFill::Distractor;
  return s;
}

train::OptimizerConfig RunConfig::optimizer() const {
  train::OptimizerConfig o;
  o.kind = get("optim.kind").get<std::string>();
  o.lr = get("optim.lr").get<double>();
  o.beta1 = get("optim.beta1").get<double>();
  o.beta2 = get("optim.beta2").get<double>();
  o.eps = get("optim.eps").get<double>();
  o.clip_norm = get("optim.clip_norm").get<double>();
  o.patience = as_int(get("optim.patience"));
  o.decay = get("optim.decay").get<double>();
  o.min_lr = get("optim.min_lr").get<double>();
  o.validate();
  return o;
}

train::EmbedderPretrainConfig RunConfig::embedder() const {
  train::EmbedderPretrainConfig e;
  e.steps = as_int(get("embedder.steps"));
  e.batch_size = as_int(get("embedder.batch"));
  e.crop_s = get("embedder.crop_s").get<double>();
  e.seed = seed("embedder");
  e.optimizer.lr = get("embedder.lr").get<double>();
  e.validate();
  return e;
}

void RunConfig::resolve_presets(const std::string& variant) {
  const train::TrainConfig p = train::TrainConfig::preset(variant);
  for (int k = 0; k < 4; ++k) {
    const std::string key = "train.steps" + std::to_string(k + 1);
    if (values_[key].is_null()) values_[key] = p.steps[static_cast<std::size_t>(k)];
  }
}

train::TrainConfig RunConfig::train(const std::string& variant) const {
  train::TrainConfig t = train::TrainConfig::preset(variant);
  t.seed = seed("train");
  t.batch_size = as_int(get("train.batch"));
  for (int k = 0; k < 4; ++k) {
    const json& v = get("train.steps" + std::to_string(k + 1));
    if (!v.is_null()) t.steps[static_cast<std::size_t>(k)] = v.get<int>();
  }
  t.phase1_three_speaker_fraction = get("train.phase1_three_speaker_fraction").get<double>();
  t.phase2_speakers = as_int(get("train.phase2_speakers"));
  t.occlusion_fraction = get("train.occlusion_fraction").get<double>();
  t.occlusion_probability = get("train.occlusion_probability").get<double>();
  t.embedding_dropout = get("train.embedding_dropout").get<double>();
  t.unfreeze_embedder = get("train.unfreeze_embedder").get<bool>();
  t.phase4_lr_scale = get("train.phase4_lr_scale").get<double>();
  t.val_samples = as_int(get("train.val_samples"));
  t.val_every = as_int(get("train.val_every"));
  t.optimizer = optimizer();
  t.sampler = sampler();
  t.validate();
  return t;
}

train::PitTrainConfig RunConfig::pit() const {
  train::PitTrainConfig p;
  p.seed = seed("pit");
  p.steps = as_int(get("pit.steps"));
  p.batch_size = as_int(get("pit.batch"));
  p.sources = as_int(get("pit.sources"));
  p.optimizer = optimizer();
  p.sampler = sampler();
  p.validate();
  return p;
}

eval::SweepConfig RunConfig::sweep() const {
  eval::SweepConfig s;
  s.fractions = get("eval.fractions").get<std::vector<double>>();
  s.speakers = get("eval.speakers").get<std::vector<int>>();
  s.samples_per_cell = as_int(get("eval.samples"));
  s.split = get("eval.split").get<std::string>();
  s.seed = seed("eval");
  s.sampler = sampler();
  s.threads = threads();
  s.validate();
  return s;
}

// ------------------------------------------------------------------ CVFT

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_features(const FeatureFile& f) {
  const bool flags = !f.occluded.empty();
  require_shape(!flags || f.occluded.size() == static_cast<std::size_t>(f.features.rows()),
                "features: one occlusion flag per frame");
  std::string out = "CVFT";
  put_u32(out, static_cast<std::uint32_t>(f.features.rows()));
  put_u32(out, static_cast<std::uint32_t>(f.features.cols()));
  put_u32(out, flags ? 1u : 0u);
  for (Eigen::Index t = 0; t < f.features.rows(); ++t)
    for (Eigen::Index d = 0; d < f.features.cols(); ++d) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(f.features(t, d)));
      put_u32(out, bits);
    }
  if (flags)
    for (std::uint8_t o : f.occluded) out.push_back(static_cast<char>(o ? 1 : 0));
  return out;
}

FeatureFile decode_features(std::string_view b) {
  if (b.size() < 16 || b.substr(0, 4) != "CVFT") throw IntegrityError("features: not a CVFT file");
  const std::uint32_t frames = get_u32(b, 4), dim = get_u32(b, 8), flags = get_u32(b, 12);
  if (flags > 1) throw IntegrityError("features: unknown flag bits " + std::to_string(flags));
  const std::size_t payload = static_cast<std::size_t>(frames) * dim * 4;
  const std::size_t want = 16 + payload + (flags ? frames : 0);
  if (b.size() != want)
    throw IntegrityError("features: expected " + std::to_string(want) + " bytes, found " + std::to_string(b.size()));
  FeatureFile f;
  f.features.resize(frames, dim);
  std::size_t at = 16;
  for (std::uint32_t t = 0; t < frames; ++t)
    for (std::uint32_t d = 0; d < dim; ++d, at += 4) f.features(t, d) = std::bit_cast<float>(get_u32(b, at));
  if (flags)
    for (std::uint32_t t = 0; t < frames; ++t) f.occluded.push_back(static_cast<std::uint8_t>(b[at++]));
  if (!f.features.allFinite()) throw NonFinite("features: non-finite values");
  return f;
}

void write_features(const std::filesystem::path& path, const FeatureFile& f) {
  train::write_file_atomic(path, encode_features(f));
}

FeatureFile read_features(const std::filesystem::path& path) { return decode_features(train::read_file(path)); }

data::Corpus load_run_corpus(const RunConfig& cfg) {
  const std::filesystem::path manifest = std::filesystem::path(cfg.get("corpus.dir").get<std::string>()) / "manifest.tsv";
  if (!std::filesystem::exists(manifest))
    throw InvalidInput("no corpus at " + manifest.string() + " (run `synth` first or set --corpus)");
  return data::load_corpus(manifest, cfg.stft().sample_rate);
}

std::filesystem::path enhanced_path(const std::filesystem::path& input) {
  std::filesystem::path out = input;
  out.replace_extension();
  out += ".enhanced.wav";
  return out;
}

}  // namespace avsep::cli
