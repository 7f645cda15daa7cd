// avsep: corpus synthesis, training, enhancement and evaluation.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "avsep/data/seed.hpp"
#include "avsep/eval/enhance.hpp"
#include "avsep/train/checkpoint.hpp"
#include "avsep/train/sample.hpp"
#include "cli_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace avsep;
using cli::RunConfig;
using cli::UsageError;

namespace {

struct Args {
  std::string config_file;
  std::map<std::string, std::string> overrides;  // key -> text, from flags
  std::string variant = "vs";
  std::string phase = "all";
  std::string embedder_path;
  std::string enroll = "self";
  std::string model_path;
  std::string enrollment_wav;
  std::string input_wav;
  std::string features;
  std::vector<std::string> models;
  std::string report_name;
  std::string split = "test";
  int mix_speakers = 2;
  double fraction = 0.0;
  long index = 0;
};

void write_json(const fs::path& path, const json& j) { train::write_file_atomic(path, j.dump(2) + "\n"); }

std::string file_digest(const fs::path& p) { return eval::hex64(train::fnv1a_bytes(train::read_file(p))); }

// ---------------------------------------------------------------- synth

int cmd_synth(const RunConfig& cfg) {
  const fs::path out = cfg.out();
  const auto records = data::synth_speaker_corpus(cfg.corpus(), out);
  write_json(out / "run_config.json", cfg.values());
  std::printf("wrote %zu utterances to %s\n", records.size(), out.string().c_str());
  return 0;
}

// ------------------------------------------------------ pretrain-embedder

int cmd_pretrain(const RunConfig& cfg) {
  const data::Corpus corpus = cli::load_run_corpus(cfg);
  model::EnhancementNet net(cfg.model(), cfg.seed("model"));
  const train::EmbedderReport rep = train::pretrain_embedder(net, corpus, cfg.embedder());
  train::Checkpoint ck;
  train::export_params(net.params(), ck.tensors);
  ck.meta = {{"kind", "embedder"},
             {"model_config", train::model_config_json(net.config())},
             {"report", {{"speakers", rep.speakers}, {"final_train_loss", rep.final_train_loss},
                         {"heldout_accuracy", rep.heldout_accuracy}, {"loss_curve", rep.loss_curve}}},
             {"run_config", cfg.values()}};
  fs::create_directories(cfg.out());
  const fs::path path = cfg.out() / "embedder.csep";
  train::save_checkpoint(ck, path);
  std::printf("speakers %d  held-out accuracy %.3f  final loss %.4f\nwrote %s\n", rep.speakers, rep.heldout_accuracy,
              rep.final_train_loss, path.string().c_str());
  return 0;
}

// ---------------------------------------------------------------- train

int train_pit(const RunConfig& cfg, const data::Corpus& corpus) {
  const fs::path path = cfg.out() / "pit.csep";
  std::optional<train::PitTrainer> tr;
  if (fs::exists(path)) {
    tr.emplace(train::PitTrainer::from_checkpoint(corpus, train::load_checkpoint(path)));
    std::printf("resuming %s at step %d\n", path.string().c_str(), tr->step());
  } else {
    const train::PitTrainConfig pc = cfg.pit();
    tr.emplace(corpus, pc, model::PitNet(cfg.model(), pc.sources, cfg.seed("pit-model")));
  }
  const int every = cfg.get("train.checkpoint_every").get<int>();
  const int total = cfg.pit().steps;
  while (tr->step() < total) {
    tr->run(every > 0 ? std::optional<int>(every) : std::nullopt);
    train::save_checkpoint(tr->to_checkpoint(cfg.values()), path);
    if (!tr->curve().empty()) std::printf("step %d  loss %.5f\n", tr->step(), tr->curve().back());
  }
  train::save_checkpoint(tr->to_checkpoint(cfg.values()), path);
  std::printf("wrote %s\n", path.string().c_str());
  return 0;
}

int cmd_train(RunConfig cfg, const Args& a) {
  if (a.variant != "vs" && a.variant != "v-blstm" && a.variant != "voicefilter" && a.variant != "pit")
    throw UsageError("--variant must be vs, v-blstm, voicefilter or pit");
  fs::create_directories(cfg.out());
  const data::Corpus corpus = cli::load_run_corpus(cfg);
  if (a.variant == "pit") return train_pit(cfg, corpus);

  cfg.resolve_presets(a.variant);
  const train::TrainConfig tc = cfg.train(a.variant);
  const fs::path path = cfg.out() / (a.variant + ".csep");
  std::optional<train::Trainer> tr;
  if (fs::exists(path)) {
    tr.emplace(train::Trainer::from_checkpoint(corpus, train::load_checkpoint(path)));
    std::printf("resuming %s (phase %d, step %d; the checkpoint's training settings apply)\n",
                path.string().c_str(), tr->current_phase(), tr->current_step());
  } else if (a.variant == "v-blstm") {
    tr.emplace(corpus, tc, model::EnhancementNet(cfg.model(), cfg.seed("model")));
  } else {
    const fs::path emb = a.embedder_path.empty() ? cfg.out() / "embedder.csep" : fs::path(a.embedder_path);
    if (!fs::exists(emb)) throw InvalidInput("variant " + a.variant + " needs a pretrained embedder at " + emb.string());
    tr.emplace(corpus, tc, train::load_network(train::load_checkpoint(emb)));
  }

  const int last = tr->config().last_phase();
  int first = 0, final_phase = 0;
  if (a.phase == "all") {
    first = tr->completed_phase() + 1;
    final_phase = last;
  } else {
    try {
      first = final_phase = std::stoi(a.phase);
    } catch (const std::logic_error&) {
      throw UsageError("--phase must be 1..4 or all");
    }
    if (first < 1 || first > 4) throw UsageError("--phase must be 1..4 or all");
    if (first > last) throw UsageError("variant " + a.variant + " has phases 1.." + std::to_string(last));
  }

  const int every = cfg.get("train.checkpoint_every").get<int>();
  tr->on_step = [&](int phase, int step, const train::StepResult& r) {
    if (every > 0 && (step + 1) % every == 0) {
      train::save_checkpoint(tr->to_checkpoint(cfg.values()), path);
      std::printf("phase %d step %d  loss %.5f  lr %.2e\n", phase, step + 1, r.loss.total, tr->optimizer().lr());
      std::fflush(stdout);
    }
    return true;
  };
  for (int p = first; p <= final_phase; ++p) {
    const train::PhaseRecord rec = tr->run_phase(p);
    train::save_checkpoint(tr->to_checkpoint(cfg.values()), path);
    std::printf("phase %d done: %d steps, validation %.5f -> %.5f\n", p, rec.steps, rec.val_initial, rec.val_final);
  }
  if (first > final_phase) std::printf("nothing to do: all %d phases completed\n", last);
  std::printf("wrote %s\n", path.string().c_str());
  return 0;
}

// -------------------------------------------------------------- enhance

std::string variant_of(const train::Checkpoint& c) {
  if (c.meta.value("kind", "") == "enhancement") return c.meta.at("variant").get<std::string>();
  return c.meta.value("kind", "unknown");
}

int cmd_enhance(const RunConfig& cfg, const Args& a) {
  if (a.enroll != "pre" && a.enroll != "self" && a.enroll != "none") throw UsageError("--enroll must be pre, self or none");
  if (a.enroll == "pre" && a.enrollment_wav.empty()) throw UsageError("--enroll pre needs --enrollment FILE");
  const train::Checkpoint ck = train::load_checkpoint(a.model_path);
  const std::string variant = variant_of(ck);
  if (variant == "pit") throw InvalidInput("enhance: PIT checkpoints separate all sources and have no target cue");
  model::EnhancementNet net = train::load_network(ck);
  const bool use_video = variant != "voicefilter";
  if (!use_video && a.enroll != "pre") throw UsageError("voicefilter models need --enroll pre");

  const dsp::StftConfig stft = cfg.stft();
  dsp::Waveform in = dsp::read_wav(a.input_wav, stft.sample_rate);
  const double level = dsp::rms(in.samples);
  if (level <= 0.0) throw InvalidInput("enhance: input is silent");
  const double gain = cfg.sampler().level_rms / level;
  for (double& x : in.samples) x *= gain;
  const dsp::Spectrogram mix = dsp::stft(in, stft);

  Mat video = Mat::Zero(mix.frames() / 4, net.config().video_dim);
  if (use_video) {
    const cli::FeatureFile f = cli::read_features(a.features);
    if (f.features.cols() != net.config().video_dim)
      throw ShapeMismatch("enhance: features have " + std::to_string(f.features.cols()) + " dims, model expects " +
                          std::to_string(net.config().video_dim));
    video = f.features;
  }

  eval::Enhanced out;
  if (a.enroll == "self" && use_video) {
    out = eval::self_enroll_enhance(net, mix, video).pass2;
  } else if (a.enroll == "pre") {
    const dsp::Waveform e = dsp::read_wav(a.enrollment_wav, stft.sample_rate);
    out = eval::enhance(net, mix, video, train::enrollment_magnitude(e, stft), use_video);
  } else {
    out = eval::enhance(net, mix, video, std::nullopt, use_video);
  }
  dsp::Waveform w = out.audio;
  w.samples.resize(in.size(), 0.0);
  for (double& x : w.samples) x /= gain;
  const fs::path dst = cli::enhanced_path(a.input_wav);
  dsp::write_wav(dst, w);
  json echo = {{"input", a.input_wav}, {"features", a.features}, {"model", a.model_path},
               {"model_digest", file_digest(a.model_path)}, {"enroll", a.enroll}, {"run_config", cfg.values()}};
  fs::path side = dst;
  side.replace_extension(".json");
  write_json(side, echo);
  std::printf("wrote %s\n", dst.string().c_str());
  return 0;
}

// --------------------------------------------------------- make-sample

int cmd_make_sample(const RunConfig& cfg, const Args& a) {
  const data::Corpus corpus = cli::load_run_corpus(cfg);
  const data::MixtureSampler sampler(corpus, a.split, cfg.sampler(), cfg.seed("eval"));
  data::SampleRequest req;
  req.n_speakers = a.mix_speakers;
  req.occlusion_mode = data::OcclusionMode::EvalEdges;
  req.occlusion_fraction = a.fraction;
  req.enrollment = data::EnrollmentMode::Pre;
  const data::MixSample s = sampler.draw(static_cast<std::uint64_t>(a.index), req);
  const fs::path out = cfg.out();
  fs::create_directories(out);
  const fs::path stem = out / s.sample_id;
  dsp::write_wav(stem.string() + ".mix.wav", s.mix.mixture);
  dsp::write_wav(stem.string() + ".target.wav", s.mix.target);
  if (s.enrollment.audio) dsp::write_wav(stem.string() + ".enroll.wav", *s.enrollment.audio);
  cli::write_features(stem.string() + ".cvft", {s.features.features, s.features.occluded});
  json meta = {{"sample_id", s.sample_id}, {"target_utterance", s.target_utterance},
               {"tokens", s.tokens}, {"n_speakers", a.mix_speakers}, {"occlusion_fraction", a.fraction},
               {"run_config", cfg.values()}};
  write_json(stem.string() + ".json", meta);
  std::printf("wrote %s.{mix.wav,target.wav,enroll.wav,cvft,json}\n", stem.string().c_str());
  return 0;
}

// ---------------------------------------------------- evaluate / sweep

std::vector<eval::EvalVariant> load_variants(const RunConfig& cfg, const std::vector<std::string>& paths) {
  std::vector<std::string> modes;
  {
    std::stringstream ss(cfg.get("eval.enroll").get<std::string>());
    std::string m;
    while (std::getline(ss, m, ','))
      if (m == "pre" || m == "self" || m == "none")
        modes.push_back(m);
      else
        throw UsageError("eval.enroll entries must be pre, self or none");
  }
  std::vector<eval::EvalVariant> out;
  for (const std::string& p : paths) {
    const train::Checkpoint ck = train::load_checkpoint(p);
    const std::string variant = variant_of(ck);
    const std::string stem = fs::path(p).stem().string();
    const std::string digest = file_digest(p);
    if (variant == "pit") {
      out.push_back({stem, eval::EnrollUse::None, false, nullptr,
                     std::make_shared<const model::PitNet>(train::load_pit_network(ck)), digest});
      continue;
    }
    auto net = std::make_shared<const model::EnhancementNet>(train::load_network(ck));
    if (variant == "voicefilter") {
      out.push_back({stem, eval::EnrollUse::Pre, false, net, nullptr, digest});
    } else if (variant == "v-blstm" || variant == "embedder") {
      out.push_back({stem, eval::EnrollUse::None, true, net, nullptr, digest});
    } else {
      for (const std::string& m : modes) {
        const eval::EnrollUse e = m == "pre" ? eval::EnrollUse::Pre : m == "self" ? eval::EnrollUse::Self : eval::EnrollUse::None;
        out.push_back({stem + "-" + m, e, true, net, nullptr, digest});
      }
    }
  }
  return out;
}

int cmd_evaluate(const RunConfig& cfg, const Args& a, bool full_grid) {
  if (a.models.empty()) throw UsageError("give at least one --model checkpoint");
  const data::Corpus corpus = cli::load_run_corpus(cfg);
  eval::SweepConfig sc = cfg.sweep();
  if (!full_grid) sc.fractions = {cfg.get("eval.fraction").get<double>()};
  const auto variants = load_variants(cfg, a.models);
  const eval::EvalReport rep = eval::occlusion_sweep(variants, corpus, sc);

  const fs::path out = cfg.out();
  fs::create_directories(out);
  const std::string name = a.report_name.empty() ? (full_grid ? "sweep" : "evaluate") : a.report_name;
  train::write_file_atomic(out / (name + ".csv"), eval::to_csv(rep));
  train::write_file_atomic(out / (name + ".samples.csv"), eval::rows_to_csv(rep));
  json j = eval::to_json(rep);
  j["run_config"] = cfg.values();
  write_json(out / (name + ".json"), j);

  std::printf("%-24s %3s %6s %10s %10s %10s\n", "variant", "spk", "occl", "SDR dB", "WER %", "mix SDR");
  for (const eval::CellSummary& c : rep.cells)
    std::printf("%-24s %3d %6.2f %10.2f %10.1f %10.2f\n", c.variant.c_str(), c.n_speakers, c.occlusion_fraction,
                c.median_sdr_db, c.median_wer_pct, c.median_mixture_sdr_db);
  std::printf("fingerprint %s\nwrote %s\n", rep.fingerprint.c_str(), (out / (name + ".csv")).string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avsep: audio-visual speech enhancement on a synthetic toy corpus"};
  app.set_help_flag();
  app.set_help_all_flag("-h,--help", "Print every subcommand and flag, then exit");
  app.require_subcommand(1);
  app.fallthrough();

  Args a;
  app.add_option("--config", a.config_file, "Flat JSON file of dotted keys; flags override it");
  for (const cli::KeySpec& s : RunConfig::specs()) {
    std::string names = "--" + s.key;
    if (!s.alias.empty() && s.alias != names) names = s.alias + "," + names;
    std::string help = s.help + " [" + (s.value.is_null() ? std::string("preset") : s.value.dump()) + "]";
    app.add_option_function<std::string>(names, [&a, key = s.key](const std::string& v) { a.overrides[key] = v; },
                                         help)
        ->type_name(s.type == cli::KeyType::String ? "TEXT"
                    : s.type == cli::KeyType::Bool  ? "BOOL"
                    : s.type == cli::KeyType::Int   ? "INT"
                    : s.type == cli::KeyType::Real  ? "REAL"
                                                    : "LIST");
  }

  auto* synth = app.add_subcommand("synth", "Synthesise the toy speaker corpus into --out");
  auto* pre = app.add_subcommand("pretrain-embedder", "Train the speaker embedder as a speaker classifier");
  auto* tr = app.add_subcommand("train", "Run curriculum phases (resumes <out>/<variant>.csep when present)");
  tr->add_option("--variant", a.variant, "vs | v-blstm | voicefilter | pit")->capture_default_str();
  tr->add_option("--phase", a.phase, "1..4 or all")->capture_default_str();
  tr->add_option("--embedder", a.embedder_path, "pretrained embedder checkpoint [<out>/embedder.csep]");
  auto* en = app.add_subcommand("enhance", "Enhance one recording; writes <in>.enhanced.wav at the model rate");
  en->add_option("input", a.input_wav, "mixture WAV")->required();
  en->add_option("features", a.features, "CVFT visual feature file (ignored by voicefilter models)")->required();
  en->add_option("--model", a.model_path, "enhancement checkpoint")->required();
  en->add_option("--enroll", a.enroll, "pre | self | none")->capture_default_str();
  en->add_option("--enrollment", a.enrollment_wav, "enrollment WAV for --enroll pre");
  auto* ev = app.add_subcommand("evaluate", "Evaluate checkpoints at one occlusion fraction (eval.fraction)");
  auto* sw = app.add_subcommand("sweep", "Evaluate checkpoints over the eval.fractions x eval.speakers grid");
  for (auto* s : {ev, sw}) {
    s->add_option("--model", a.models, "checkpoint (repeatable)")->required();
    s->add_option("--name", a.report_name, "report file stem [subcommand name]");
  }
  auto* ms = app.add_subcommand("make-sample", "Write one evaluation mixture, its features and enrollment to --out");
  ms->add_option("--split", a.split, "corpus split")->capture_default_str();
  ms->add_option("--mix-speakers", a.mix_speakers, "2 or 3")->capture_default_str()->check(CLI::IsMember({2, 3}));
  ms->add_option("--fraction", a.fraction, "edge occlusion fraction")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  ms->add_option("--index", a.index, "sample index")->capture_default_str()->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help("", CLI::AppFormatMode::All);
    return 1;
  }

  RunConfig cfg;
  try {
    if (!a.config_file.empty()) cfg.merge_file(a.config_file);
    for (const auto& [k, v] : a.overrides) cfg.set(k, v);
    // surface bad values as usage errors before any work starts
    cfg.corpus();
    cfg.model();
    cfg.embedder();
    cfg.train("vs");
    cfg.pit();
    cfg.sweep();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*synth) return cmd_synth(cfg);
    if (*pre) return cmd_pretrain(cfg);
    if (*tr) return cmd_train(cfg, a);
    if (*en) return cmd_enhance(cfg, a);
    if (*ev) return cmd_evaluate(cfg, a, false);
    if (*sw) return cmd_evaluate(cfg, a, true);
    if (*ms) return cmd_make_sample(cfg, a);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
