#pragma once

#include "avsep/data/mixture.hpp"
#include "avsep/model/network.hpp"
#include "avsep/train/checkpoint.hpp"
#include "avsep/train/optim.hpp"

namespace avsep::train {

struct PitTrainConfig {
  std::uint64_t seed = 1;
  int steps = 1600;
  int batch_size = 8;
  int sources = 3;  // 2-speaker mixtures pad the references with silence
  OptimizerConfig optimizer;
  data::SamplerConfig sampler;

  void validate() const;
  nlohmann::json to_json() const;
  static PitTrainConfig from_json(const nlohmann::json& j);
};

// Audio-only baseline: one mask per source, permutation-invariant
// magnitude loss, alternating 2- and 3-speaker mixtures.
class PitTrainer {
public:
  PitTrainer(const data::Corpus& corpus, PitTrainConfig cfg, model::PitNet net);

  double train_step(int step);
  void run(std::optional<int> max_steps = std::nullopt);

  model::PitNet& net() { return net_; }
  int step() const { return step_; }
  const std::vector<double>& curve() const { return curve_; }

  Checkpoint to_checkpoint(const nlohmann::json& run_config = nlohmann::json::object()) const;
  static PitTrainer from_checkpoint(const data::Corpus& corpus, const Checkpoint& c);

private:
  const data::Corpus* corpus_;
  PitTrainConfig cfg_;
  model::PitNet net_;
  Optimizer opt_;
  int step_ = 0;
  double window_ = 0.0;
  std::vector<double> curve_;  // mean loss per 100 steps
};

model::PitNet load_pit_network(const Checkpoint& c);

}  // namespace avsep::train
