#include "avsep/train/pit.hpp"

#include <cmath>

#include "avsep/data/seed.hpp"
#include "avsep/train/curriculum.hpp"
#include "avsep/train/loss.hpp"

namespace avsep::train {

using nlohmann::json;

void PitTrainConfig::validate() const {
  require(steps >= 0, "pit: steps must be non-negative");
  require(batch_size >= 1, "pit: batch size must be positive");
  require(sources == 2 || sources == 3, "pit: sources must be 2 or 3");
  optimizer.validate();
}

json PitTrainConfig::to_json() const {
  return {{"seed", seed},
          {"steps", steps},
          {"batch_size", batch_size},
          {"sources", sources},
          {"lr", optimizer.lr},
          {"clip_norm", optimizer.clip_norm},
          {"crop_s", sampler.crop_s},
          {"level_rms", sampler.level_rms}};
}

PitTrainConfig PitTrainConfig::from_json(const json& j) {
  PitTrainConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.steps = j.at("steps").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.sources = j.at("sources").get<int>();
  c.optimizer.lr = j.at("lr").get<double>();
  c.optimizer.clip_norm = j.at("clip_norm").get<double>();
  c.sampler.crop_s = j.at("crop_s").get<double>();
  c.sampler.level_rms = j.at("level_rms").get<double>();
  c.validate();
  return c;
}

PitTrainer::PitTrainer(const data::Corpus& corpus, PitTrainConfig cfg, model::PitNet net)
    : corpus_(&corpus), cfg_(std::move(cfg)), net_(std::move(net)), opt_(cfg_.optimizer) {
  cfg_.validate();
  require(net_.sources() == cfg_.sources, "pit: network and config disagree on the source count");
}

double PitTrainer::train_step(int step) {
  data::MixtureSampler sampler(*corpus_, "train", cfg_.sampler, data::derive_seed(cfg_.seed, "pit"));
  const dsp::StftConfig& stft = cfg_.sampler.oracle.stft;
  nn::Batch mags;
  std::vector<std::vector<Mat>> refs;
  std::vector<std::string> ids;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    data::SampleRequest req;
    req.n_speakers = cfg_.sources == 2 ? 2 : 2 + (step + b) % 2;
    const auto s =
        sampler.draw(static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(cfg_.batch_size) + b, req);
    const double gain = cfg_.sampler.level_rms / dsp::rms(s.mix.mixture.samples);
    auto scaled = [&](const dsp::Waveform& w) {
      dsp::Waveform o = w;
      for (double& x : o.samples) x *= gain;
      return dsp::stft(o, stft).magnitude;
    };
    mags.push_back(scaled(s.mix.mixture));
    std::vector<Mat> r{scaled(s.mix.target)};
    for (const auto& w : s.mix.interferers) r.push_back(scaled(w));
    while (static_cast<int>(r.size()) < cfg_.sources) r.push_back(Mat::Zero(mags.back().rows(), mags.back().cols()));
    refs.push_back(std::move(r));
    ids.push_back(s.sample_id);
  }
  auto masks = net_.forward(mags, nn::Mode::Train);
  std::vector<std::vector<Mat>> grads;
  double loss = 0.0;
  const Real inv_b = Real(1) / static_cast<Real>(cfg_.batch_size);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    std::vector<Mat> est;
    for (const Mat& m : masks[i]) est.push_back(m.cwiseProduct(mags[i]));
    PitResult r = pit_loss(est, refs[i]);
    if (!std::isfinite(r.loss)) throw NonFinite("pit train_step: non-finite loss for sample " + ids[i]);
    loss += r.loss / cfg_.batch_size;
    std::vector<Mat> g;
    for (const Mat& d : r.grads) g.push_back(d.cwiseProduct(mags[i]) * inv_b);
    grads.push_back(std::move(g));
  }
  net_.params().zero_grad();
  net_.backward(grads);
  opt_.step(net_.params());
  return loss;
}

void PitTrainer::run(std::optional<int> max_steps) {
  const int end = max_steps ? std::min(cfg_.steps, step_ + *max_steps) : cfg_.steps;
  while (step_ < end) {
    window_ += train_step(step_);
    ++step_;
    if (step_ % 100 == 0 || step_ == cfg_.steps) {
      const int span = step_ % 100 == 0 ? 100 : step_ % 100;
      curve_.push_back(window_ / span);
      window_ = 0.0;
    }
  }
}

Checkpoint PitTrainer::to_checkpoint(const json& run_config) const {
  auto& net = const_cast<model::PitNet&>(net_);
  Checkpoint c;
  export_params(net.params(), c.tensors);
  json steps = json::object();
  for (const auto& [name, mo] : opt_.moments()) {
    c.tensors.push_back({"adam.m/" + name, mo.m});
    c.tensors.push_back({"adam.v/" + name, mo.v});
    steps[name] = mo.steps;
  }
  c.meta = {{"kind", "pit"},
            {"variant", "pit"},
            {"model_config", model_config_json(net_.config())},
            {"sources", net_.sources()},
            {"train_config", cfg_.to_json()},
            {"position", {{"step", step_}, {"window", window_}}},
            {"optimizer", {{"lr", opt_.lr()}, {"steps", steps}}},
            {"curve", curve_},
            {"run_config", run_config}};
  return c;
}

PitTrainer PitTrainer::from_checkpoint(const data::Corpus& corpus, const Checkpoint& c) {
  PitTrainer t(corpus, PitTrainConfig::from_json(c.meta.at("train_config")), load_pit_network(c));
  for (const auto& [name, steps] : c.meta.at("optimizer").at("steps").items()) {
    Optimizer::Moments mo;
    mo.m = c.at("adam.m/" + name);
    mo.v = c.at("adam.v/" + name);
    mo.steps = steps.get<long>();
    t.opt_.moments()[name] = std::move(mo);
  }
  t.opt_.set_lr(c.meta.at("optimizer").at("lr").get<double>());
  t.step_ = c.meta.at("position").at("step").get<int>();
  t.window_ = c.meta.at("position").at("window").get<double>();
  t.curve_ = c.meta.at("curve").get<std::vector<double>>();
  return t;
}

model::PitNet load_pit_network(const Checkpoint& c) {
  require(c.meta.value("kind", "") == "pit", "checkpoint: not a PIT checkpoint");
  model::PitNet net(model_config_from_json(c.meta.at("model_config")), c.meta.at("sources").get<int>(), 0);
  import_params(net.params(), c);
  return net;
}

}  // namespace avsep::train
