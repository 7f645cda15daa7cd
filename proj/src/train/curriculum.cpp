#include "avsep/train/curriculum.hpp"

#include <cmath>

#include "avsep/data/seed.hpp"

namespace avsep::train {

using nlohmann::json;

namespace {

nn::ParamSet trained_groups(model::EnhancementNet& net, const PhasePlan& p) {
  nn::ParamSet ps;
  if (p.train_video) ps.append(net.group("video"));
  if (p.train_audio) ps.append(net.group("audio"));
  if (p.train_fusion) ps.append(net.group("fusion"));
  if (p.train_phase) ps.append(net.group("phase"));
  if (p.train_embedder) ps.append(net.group("embedder"));
  return ps;
}

// Per-sample draws that are not part of the mixture itself.
std::mt19937_64 side_rng(std::uint64_t stream, const std::string& what, std::uint64_t index) {
  return std::mt19937_64(data::derive_seed(stream, what + "-" + std::to_string(index)));
}

bool coin(std::mt19937_64& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

}  // namespace

// ------------------------------------------------------------ PhasePlan

int PhasePlan::speakers_at(int step) const {
  if (n_speakers_first == 0) return step % 2 == 0 ? 2 : 3;  // even mix
  return step < static_cast<int>(std::lround(switch_fraction * steps)) ? n_speakers_first : n_speakers_second;
}

model::ForwardOptions PhasePlan::options() const {
  model::ForwardOptions o;
  o.use_video = use_video;
  o.run_phase = run_phase;
  o.train_video = train_video;
  o.train_audio = train_audio;
  o.train_fusion = train_fusion;
  o.train_phase = train_phase;
  o.train_embedder = train_embedder;
  return o;
}

// ---------------------------------------------------------- TrainConfig

void TrainConfig::validate() const {
  require(variant == "vs" || variant == "voicefilter" || variant == "v-blstm",
          "train: variant must be vs, voicefilter or v-blstm, got '" + variant + "'");
  require(batch_size >= 1, "train: batch size must be positive");
  for (int s : steps) require(s >= 0, "train: step counts must be non-negative");
  require(phase1_three_speaker_fraction >= 0.0 && phase1_three_speaker_fraction <= 1.0,
          "train: phase1_three_speaker_fraction must be in [0, 1]");
  require(phase2_speakers == 0 || phase2_speakers == 2 || phase2_speakers == 3,
          "train: phase2_speakers must be 0 (mixed), 2 or 3");
  require(occlusion_fraction >= 0.0 && occlusion_fraction <= 1.0, "train: occlusion fraction must be in [0, 1]");
  require(occlusion_probability >= 0.0 && occlusion_probability <= 1.0,
          "train: occlusion probability must be in [0, 1]");
  require(embedding_dropout >= 0.0 && embedding_dropout <= 1.0, "train: embedding dropout must be in [0, 1]");
  require(val_samples >= 1, "train: need at least one validation sample");
  require(val_every >= 0, "train: val_every must be non-negative");
  optimizer.validate();
}

PhasePlan TrainConfig::plan(int phase) const {
  require(phase >= 1 && phase <= last_phase(),
          "train: variant " + variant + " has phases 1.." + std::to_string(last_phase()) + ", asked for " +
              std::to_string(phase));
  const bool enrolled = variant != "v-blstm";
  PhasePlan p;
  p.index = phase;
  p.steps = steps[static_cast<std::size_t>(phase - 1)];
  p.enrollment = enrolled ? data::EnrollmentMode::Train : data::EnrollmentMode::None;
  if (phase == 1) {
    // speaker-only conditioning, two then three speakers; without an
    // enrollment there is nothing to condition on, so the phase is empty
    if (!enrolled) p.steps = 0;
    p.use_video = false;
    p.n_speakers_first = 2;
    p.n_speakers_second = 3;
    p.switch_fraction = 1.0 - phase1_three_speaker_fraction;
    p.train_audio = p.train_fusion = true;
    return p;
  }
  p.use_video = true;
  p.n_speakers_first = p.n_speakers_second = phase2_speakers;
  p.occlusion_fraction = occlusion_fraction;
  p.occlusion_probability = occlusion_probability;
  p.embedding_dropout = enrolled ? embedding_dropout : 0.0;
  if (phase == 2) {
    p.train_video = p.train_audio = p.train_fusion = true;
  } else if (phase == 3) {
    p.run_phase = true;
    p.train_phase = true;
  } else {
    p.run_phase = true;
    p.train_video = p.train_audio = p.train_fusion = p.train_phase = true;
    p.train_embedder = enrolled && unfreeze_embedder;
    p.lr_scale = phase4_lr_scale;
  }
  return p;
}

json TrainConfig::to_json() const {
  json j;
  j["variant"] = variant;
  j["seed"] = seed;
  j["batch_size"] = batch_size;
  j["steps"] = steps;
  j["phase1_three_speaker_fraction"] = phase1_three_speaker_fraction;
  j["phase2_speakers"] = phase2_speakers;
  j["occlusion_fraction"] = occlusion_fraction;
  j["occlusion_probability"] = occlusion_probability;
  j["embedding_dropout"] = embedding_dropout;
  j["unfreeze_embedder"] = unfreeze_embedder;
  j["phase4_lr_scale"] = phase4_lr_scale;
  j["val_samples"] = val_samples;
  j["val_every"] = val_every;
  j["optimizer"] = {{"kind", optimizer.kind},         {"lr", optimizer.lr},
                    {"beta1", optimizer.beta1},       {"beta2", optimizer.beta2},
                    {"eps", optimizer.eps},           {"clip_norm", optimizer.clip_norm},
                    {"patience", optimizer.patience}, {"decay", optimizer.decay},
                    {"min_lr", optimizer.min_lr}};
  j["sampler"] = {{"crop_s", sampler.crop_s},
                  {"enroll_s", sampler.enroll_s},
                  {"min_enroll_s", sampler.min_enroll_s},
                  {"level_rms", sampler.level_rms},
                  {"token_margin_s", sampler.token_margin_s},
                  {"video_dim", sampler.oracle.video_dim},
                  {"occlusion_fill", sampler.oracle.fill == data::OcclusionFill::Zeros ? "zeros" : "distractor"},
                  {"min_run", sampler.rules.min_run},
                  {"max_run", sampler.rules.max_run},
                  {"tolerance", sampler.rules.tolerance},
                  {"stft", {{"sample_rate", sampler.oracle.stft.sample_rate},
                            {"window_len", sampler.oracle.stft.window_len},
                            {"hop_len", sampler.oracle.stft.hop_len},
                            {"fft_size", sampler.oracle.stft.fft_size}}}};
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.variant = j.at("variant").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.batch_size = j.at("batch_size").get<int>();
  c.steps = j.at("steps").get<std::array<int, 4>>();
  c.phase1_three_speaker_fraction = j.at("phase1_three_speaker_fraction").get<double>();
  c.phase2_speakers = j.at("phase2_speakers").get<int>();
  c.occlusion_fraction = j.at("occlusion_fraction").get<double>();
  c.occlusion_probability = j.at("occlusion_probability").get<double>();
  c.embedding_dropout = j.at("embedding_dropout").get<double>();
  c.unfreeze_embedder = j.at("unfreeze_embedder").get<bool>();
  c.phase4_lr_scale = j.at("phase4_lr_scale").get<double>();
  c.val_samples = j.at("val_samples").get<int>();
  c.val_every = j.at("val_every").get<int>();
  const json& o = j.at("optimizer");
  c.optimizer.kind = o.at("kind").get<std::string>();
  c.optimizer.lr = o.at("lr").get<double>();
  c.optimizer.beta1 = o.at("beta1").get<double>();
  c.optimizer.beta2 = o.at("beta2").get<double>();
  c.optimizer.eps = o.at("eps").get<double>();
  c.optimizer.clip_norm = o.at("clip_norm").get<double>();
  c.optimizer.patience = o.at("patience").get<int>();
  c.optimizer.decay = o.at("decay").get<double>();
  c.optimizer.min_lr = o.at("min_lr").get<double>();
  const json& s = j.at("sampler");
  c.sampler.crop_s = s.at("crop_s").get<double>();
  c.sampler.enroll_s = s.at("enroll_s").get<double>();
  c.sampler.min_enroll_s = s.at("min_enroll_s").get<double>();
  c.sampler.level_rms = s.at("level_rms").get<double>();
  c.sampler.token_margin_s = s.at("token_margin_s").get<double>();
  c.sampler.oracle.video_dim = s.at("video_dim").get<int>();
  c.sampler.oracle.fill =
      s.at("occlusion_fill").get<std::string>() == "zeros" ? data::OcclusionFill::Zeros : data::OcclusionFill::Distractor;
  c.sampler.rules.min_run = s.at("min_run").get<int>();
  c.sampler.rules.max_run = s.at("max_run").get<int>();
  c.sampler.rules.tolerance = s.at("tolerance").get<double>();
  const json& st = s.at("stft");
  c.sampler.oracle.stft.sample_rate = st.at("sample_rate").get<int>();
  c.sampler.oracle.stft.window_len = st.at("window_len").get<int>();
  c.sampler.oracle.stft.hop_len = st.at("hop_len").get<int>();
  c.sampler.oracle.stft.fft_size = st.at("fft_size").get<int>();
  c.validate();
  return c;
}

TrainConfig TrainConfig::preset(const std::string& variant) {
  TrainConfig c;
  c.variant = variant;
  if (variant == "voicefilter") c.steps = {2400, 0, 0, 0};
  if (variant == "v-blstm") c.steps = {0, 4000, 300, 300};
  c.validate();
  return c;
}

// -------------------------------------------------------------- Trainer

Trainer::Trainer(const data::Corpus& corpus, TrainConfig cfg, model::EnhancementNet net)
    : corpus_(&corpus), cfg_(std::move(cfg)), net_(std::move(net)), opt_(cfg_.optimizer) {
  cfg_.validate();
  require(cfg_.sampler.oracle.video_dim == net_.config().video_dim,
          "train: sampler video_dim differs from the model's video_dim");
}

void Trainer::embed(PreparedSample& p, bool drop) {
  p.speaker = RowVec::Zero(net_.config().emb_dim);
  if (drop || !p.enrollment_magnitude) {
    p.enrollment_magnitude.reset();
    return;
  }
  p.speaker = net_.speaker_embed(*p.enrollment_magnitude).vector;
}

std::vector<PreparedSample> Trainer::batch_for(const PhasePlan& plan, int step, const data::MixtureSampler& sampler) {
  const std::uint64_t stream = data::derive_seed(cfg_.seed, "phase" + std::to_string(plan.index));
  std::vector<PreparedSample> out;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const std::uint64_t index = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(cfg_.batch_size) +
                                static_cast<std::uint64_t>(b);
    data::SampleRequest req;
    req.n_speakers = plan.speakers_at(step);
    req.enrollment = plan.enrollment;
    auto occ = side_rng(stream, "occlude", index);
    if (coin(occ, plan.occlusion_probability)) req.occlusion_fraction = plan.occlusion_fraction;
    PreparedSample p = prepare_sample(sampler.draw(index, req), cfg_.sampler.oracle.stft, cfg_.sampler.level_rms);
    auto drop = side_rng(stream, "dropout", index);
    const bool dropped = coin(drop, plan.embedding_dropout);
    if (plan.train_embedder && !dropped) {
      p.speaker = RowVec::Zero(net_.config().emb_dim);  // recomputed inside the graph
    } else {
      embed(p, dropped);
    }
    out.push_back(std::move(p));
  }
  return out;
}

StepResult Trainer::train_step(const PhasePlan& plan, int step) {
  data::MixtureSampler sampler(*corpus_, "train", cfg_.sampler,
                               data::derive_seed(cfg_.seed, "phase" + std::to_string(plan.index)));
  std::vector<PreparedSample> batch = batch_for(plan, step, sampler);
  std::vector<model::EnhanceInput> in(batch.size());
  std::vector<SpectralTarget> gt;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    in[i].mix = &batch[i].mix;
    in[i].video_features = batch[i].video;
    in[i].speaker = batch[i].speaker;
    if (plan.train_embedder) in[i].enrollment_magnitude = batch[i].enrollment_magnitude;
    gt.push_back(batch[i].target);
  }
  std::vector<model::NetworkOutput> out;
  try {
    out = net_.forward(in, plan.options());
  } catch (const NonFinite& e) {
    // layers see the whole batch at once; name every sample in it
    std::string ids;
    for (const auto& b : batch) ids += (ids.empty() ? "" : ", ") + b.sample_id;
    throw NonFinite("train_step: " + std::string(e.what()) + " for samples " + ids + " (phase " +
                    std::to_string(plan.index) + ", step " + std::to_string(step) + ")");
  }
  std::vector<model::OutputGrad> grads;
  StepResult r;
  r.loss = batch_loss(out, gt, &grads);
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (!std::isfinite(r.loss.per_sample[i]))
      throw NonFinite("train_step: non-finite loss for sample " + batch[i].sample_id + " (phase " +
                      std::to_string(plan.index) + ", step " + std::to_string(step) + ")");
  net_.params().zero_grad();
  net_.backward(grads);
  r.info = opt_.step(trained_groups(net_, plan));
  return r;
}

double Trainer::validation_loss(const PhasePlan& plan) {
  data::MixtureSampler sampler(*corpus_, "val", cfg_.sampler, data::derive_seed(cfg_.seed, "validation"));
  const std::uint64_t stream = data::derive_seed(cfg_.seed, "validation-side");
  model::ForwardOptions opt = model::ForwardOptions::inference(plan.use_video);
  opt.run_phase = plan.run_phase;
  double total = 0.0;
  for (int i = 0; i < cfg_.val_samples; ++i) {
    const auto index = static_cast<std::uint64_t>(i);
    data::SampleRequest req;
    req.n_speakers = plan.n_speakers_first == 0 ? 2 + i % 2 : plan.n_speakers_second;
    req.enrollment = plan.enrollment;
    auto occ = side_rng(stream, "occlude", index);
    if (coin(occ, plan.occlusion_probability)) req.occlusion_fraction = plan.occlusion_fraction;
    PreparedSample p = prepare_sample(sampler.draw(index, req), cfg_.sampler.oracle.stft, cfg_.sampler.level_rms);
    embed(p, false);
    model::EnhanceInput in;
    in.mix = &p.mix;
    in.video_features = p.video;
    in.speaker = p.speaker;
    std::vector<model::NetworkOutput> out;
    try {
      out = net_.forward({in}, opt);
    } catch (const NonFinite& e) {
      throw NonFinite("validation: " + std::string(e.what()) + " for sample " + p.sample_id);
    }
    const double l = magnitude_phase_loss(out[0], p.target).total;
    if (!std::isfinite(l)) throw NonFinite("validation: non-finite loss for sample " + p.sample_id);
    total += l;
  }
  return total / cfg_.val_samples;
}

PhaseRecord Trainer::run_phase(int phase, std::optional<int> max_steps) {
  const PhasePlan plan = cfg_.plan(phase);
  if (completed_ < phase - 1)
    throw InvalidInput("train: phase " + std::to_string(phase) + " needs a completed phase " +
                       std::to_string(phase - 1) + " (last completed: " + std::to_string(completed_) + ")");
  if (phase_ != phase || completed_ >= phase) {
    // fresh start of this phase
    phase_ = phase;
    step_ = 0;
    current_ = PhaseRecord{};
    current_.phase = phase;
  }
  if (step_ == 0) {
    opt_.restore_schedule(cfg_.optimizer.lr * plan.lr_scale, std::numeric_limits<double>::infinity(), 0);
    current_.val_initial = plan.steps > 0 ? validation_loss(plan) : 0.0;
  }
  const int end = max_steps ? std::min(plan.steps, step_ + *max_steps) : plan.steps;
  double window = 0.0;
  int in_window = 0;
  while (step_ < end) {
    StepResult r = train_step(plan, step_);
    ++step_;
    current_.last_train_loss = r.loss.total;
    window += r.loss.total;
    ++in_window;
    if (cfg_.val_every > 0 && step_ % cfg_.val_every == 0 && step_ < plan.steps) {
      current_.train_curve.push_back(window / in_window);
      window = 0.0;
      in_window = 0;
      opt_.observe_validation(validation_loss(plan));
    }
    if (on_step && !on_step(phase, step_, r)) break;
  }
  current_.steps = step_;
  current_.lr = opt_.lr();
  if (step_ >= plan.steps) {
    if (in_window > 0) current_.train_curve.push_back(window / in_window);
    current_.val_final = plan.steps > 0 ? validation_loss(plan) : 0.0;
    completed_ = phase;
    history_.push_back(current_);
  }
  return current_;
}

// ---------------------------------------------------------- checkpoints

void export_params(const nn::ParamSet& ps, std::vector<NamedTensor>& out, const std::string& prefix) {
  for (nn::Param* p : ps.items()) out.push_back({prefix + p->name, p->value});
}

void import_params(const nn::ParamSet& ps, const Checkpoint& c, const std::string& prefix) {
  for (nn::Param* p : ps.items()) {
    const Mat& v = c.at(prefix + p->name);
    require_shape(v.rows() == p->value.rows() && v.cols() == p->value.cols(),
                  "checkpoint: tensor " + p->name + " has the wrong shape for this model");
    p->value = v;
  }
}

json model_config_json(const model::ModelConfig& m) {
  return {{"width_scale", m.width_scale},   {"video_dim", m.video_dim},
          {"emb_dim", m.emb_dim},           {"freq_bins", m.freq_bins},
          {"blstm_hidden", m.blstm_hidden}, {"fc_fusion_width", m.fc_fusion_width},
          {"phase_hidden", m.phase_hidden}, {"embedder_min_frames", m.embedder_min_frames}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig m;
  m.width_scale = j.at("width_scale").get<int>();
  m.video_dim = j.at("video_dim").get<int>();
  m.emb_dim = j.at("emb_dim").get<int>();
  m.freq_bins = j.at("freq_bins").get<int>();
  m.blstm_hidden = j.at("blstm_hidden").get<int>();
  m.fc_fusion_width = j.at("fc_fusion_width").get<int>();
  m.phase_hidden = j.at("phase_hidden").get<int>();
  m.embedder_min_frames = j.at("embedder_min_frames").get<int>();
  m.validate();
  return m;
}

model::EnhancementNet load_network(const Checkpoint& c) {
  require(c.meta.contains("model_config"), "checkpoint: no model_config in metadata");
  model::EnhancementNet net(model_config_from_json(c.meta.at("model_config")), 0);
  import_params(net.params(), c);
  return net;
}

Checkpoint Trainer::to_checkpoint(const json& run_config) const {
  auto& net = const_cast<model::EnhancementNet&>(net_);
  Checkpoint c;
  export_params(net.params(), c.tensors);
  json moments = json::object();
  for (const auto& [name, mo] : opt_.moments()) {
    c.tensors.push_back({"adam.m/" + name, mo.m});
    c.tensors.push_back({"adam.v/" + name, mo.v});
    moments[name] = mo.steps;
  }
  json history = json::array();
  auto record = [](const PhaseRecord& r) {
    return json{{"phase", r.phase},
                {"steps", r.steps},
                {"val_initial", r.val_initial},
                {"val_final", r.val_final},
                {"last_train_loss", r.last_train_loss},
                {"lr", r.lr},
                {"train_curve", r.train_curve}};
  };
  for (const auto& r : history_) history.push_back(record(r));
  const double best = opt_.best_validation();
  c.meta = {{"kind", "enhancement"},
            {"variant", cfg_.variant},
            {"model_config", model_config_json(net_.config())},
            {"train_config", cfg_.to_json()},
            {"position", {{"completed_phase", completed_}, {"phase", phase_}, {"step", step_}}},
            {"current", record(current_)},
            {"optimizer",
             {{"lr", opt_.lr()},
              {"best", std::isfinite(best) ? json(best) : json(nullptr)},
              {"bad", opt_.bad_checks()},
              {"steps", moments}}},
            {"rng", {{"seed", cfg_.seed}, {"next_index", static_cast<std::uint64_t>(step_) * cfg_.batch_size}}},
            {"history", history},
            {"run_config", run_config}};
  return c;
}

Trainer Trainer::from_checkpoint(const data::Corpus& corpus, const Checkpoint& c) {
  require(c.meta.value("kind", "") == "enhancement", "checkpoint: not an enhancement-model checkpoint");
  Trainer t(corpus, TrainConfig::from_json(c.meta.at("train_config")), load_network(c));
  for (const auto& [name, steps] : c.meta.at("optimizer").at("steps").items()) {
    Optimizer::Moments mo;
    mo.m = c.at("adam.m/" + name);
    mo.v = c.at("adam.v/" + name);
    mo.steps = steps.get<long>();
    t.opt_.moments()[name] = std::move(mo);
  }
  const json& o = c.meta.at("optimizer");
  t.opt_.restore_schedule(o.at("lr").get<double>(),
                          o.at("best").is_null() ? std::numeric_limits<double>::infinity() : o.at("best").get<double>(),
                          o.at("bad").get<int>());
  auto record = [](const json& j) {
    PhaseRecord r;
    r.phase = j.at("phase").get<int>();
    r.steps = j.at("steps").get<int>();
    r.val_initial = j.at("val_initial").get<double>();
    r.val_final = j.at("val_final").get<double>();
    r.last_train_loss = j.at("last_train_loss").get<double>();
    r.lr = j.at("lr").get<double>();
    r.train_curve = j.at("train_curve").get<std::vector<double>>();
    return r;
  };
  for (const auto& r : c.meta.at("history")) t.history_.push_back(record(r));
  t.current_ = record(c.meta.at("current"));
  const json& pos = c.meta.at("position");
  t.completed_ = pos.at("completed_phase").get<int>();
  t.phase_ = pos.at("phase").get<int>();
  t.step_ = pos.at("step").get<int>();
  return t;
}

}  // namespace avsep::train
