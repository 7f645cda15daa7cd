#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsep/data/mixture.hpp"
#include "avsep/model/network.hpp"
#include "avsep/train/checkpoint.hpp"
#include "avsep/train/loss.hpp"
#include "avsep/train/optim.hpp"
#include "avsep/train/sample.hpp"

namespace avsep::train {

// What one curriculum phase runs and trains.
struct PhasePlan {
  int index = 1;
  int steps = 0;
  int n_speakers_first = 2;       // used for the first part of the phase
  int n_speakers_second = 2;      // used from `switch_fraction` of the steps on
  double switch_fraction = 1.0;
  bool use_video = true;
  bool run_phase = false;
  bool train_video = false, train_audio = false, train_fusion = false, train_phase = false, train_embedder = false;
  data::EnrollmentMode enrollment = data::EnrollmentMode::Train;
  double occlusion_fraction = 0.0;
  double occlusion_probability = 1.0;
  double embedding_dropout = 0.0;
  double lr_scale = 1.0;

  int speakers_at(int step) const;
  model::ForwardOptions options() const;
};

struct TrainConfig {
  std::string variant = "vs";  // vs | voicefilter | v-blstm
  std::uint64_t seed = 1;
  int batch_size = 8;
  std::array<int, 4> steps = {2400, 3000, 300, 300};
  double phase1_three_speaker_fraction = 0.25;
  int phase2_speakers = 0;  // 2, 3, or 0 for an even 2/3 mix
  double occlusion_fraction = 0.75;
  double occlusion_probability = 0.5;
  double embedding_dropout = 0.5;
  bool unfreeze_embedder = false;
  double phase4_lr_scale = 0.3;
  int val_samples = 48;
  int val_every = 200;  // steps between plateau checks; 0 disables
  OptimizerConfig optimizer;
  data::SamplerConfig sampler;

  void validate() const;
  PhasePlan plan(int phase) const;
  int last_phase() const { return variant == "voicefilter" ? 1 : 4; }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig preset(const std::string& variant);
};

struct PhaseRecord {
  int phase = 0;
  int steps = 0;
  double val_initial = 0.0;
  double val_final = 0.0;
  double last_train_loss = 0.0;
  double lr = 0.0;
  std::vector<double> train_curve;  // mean training loss per validation interval
};

struct StepResult {
  LossBreakdown loss;
  Optimizer::StepInfo info;
};

// Runs the four-phase curriculum on one corpus. Sample k of step s in phase
// p is drawn from a stream keyed by (seed, p), index s * batch + k, so a run
// resumed from a checkpoint sees exactly the samples an uninterrupted run
// would have seen.
class Trainer {
public:
  Trainer(const data::Corpus& corpus, TrainConfig cfg, model::EnhancementNet net);

  // Trains phase `phase` from its current position; stops after at most
  // `max_steps` steps (all remaining when absent). Throws when the previous
  // phase has not been completed.
  PhaseRecord run_phase(int phase, std::optional<int> max_steps = std::nullopt);

  // One optimisation step on step `step` of `phase`.
  StepResult train_step(const PhasePlan& plan, int step);

  // Mean loss over the fixed validation set under `plan`'s conditions.
  double validation_loss(const PhasePlan& plan);

  model::EnhancementNet& net() { return net_; }
  const TrainConfig& config() const { return cfg_; }
  Optimizer& optimizer() { return opt_; }
  int completed_phase() const { return completed_; }
  int current_phase() const { return phase_; }
  int current_step() const { return step_; }
  const std::vector<PhaseRecord>& history() const { return history_; }

  Checkpoint to_checkpoint(const nlohmann::json& run_config = nlohmann::json::object()) const;
  static Trainer from_checkpoint(const data::Corpus& corpus, const Checkpoint& c);

  // Called after every step; return false to stop early.
  std::function<bool(int phase, int step, const StepResult&)> on_step;

private:
  std::vector<PreparedSample> batch_for(const PhasePlan& plan, int step, const data::MixtureSampler& sampler);
  void embed(PreparedSample& p, bool drop);

  const data::Corpus* corpus_;
  TrainConfig cfg_;
  model::EnhancementNet net_;
  Optimizer opt_;
  int completed_ = 0;
  int phase_ = 1;
  int step_ = 0;
  PhaseRecord current_;
  std::vector<PhaseRecord> history_;
};

// Parameters (including buffers) to and from named tensors.
void export_params(const nn::ParamSet& ps, std::vector<NamedTensor>& out, const std::string& prefix = "param/");
void import_params(const nn::ParamSet& ps, const Checkpoint& c, const std::string& prefix = "param/");

nlohmann::json model_config_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

// Rebuilds an inference-ready network from any checkpoint holding one.
model::EnhancementNet load_network(const Checkpoint& c);

}  // namespace avsep::train
