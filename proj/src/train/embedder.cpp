#include "avsep/train/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "avsep/data/mixture.hpp"
#include "avsep/data/seed.hpp"

namespace avsep::train {

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Mat random_crop_magnitude(const data::Utterance& u, std::size_t len, const dsp::StftConfig& stft,
                          std::mt19937_64& rng) {
  const std::size_t start = pick(rng, u.audio.size() - len + 1);
  return dsp::stft(data::crop(u.audio, start, len), stft).magnitude;
}

}  // namespace

void EmbedderPretrainConfig::validate() const {
  require(steps >= 0, "pretrain: steps must be non-negative");
  require(batch_size >= 2, "pretrain: batch size must be at least 2");
  require(crop_s > 0.0, "pretrain: crop length must be positive");
  optimizer.validate();
}

EmbedderReport pretrain_embedder(model::EnhancementNet& net, const data::Corpus& corpus,
                                 const EmbedderPretrainConfig& cfg) {
  cfg.validate();
  const dsp::StftConfig stft = dsp::StftConfig::toy();
  require(corpus.sample_rate == stft.sample_rate, "pretrain: corpus rate does not match the model rate");
  const std::size_t len = static_cast<std::size_t>(std::llround(cfg.crop_s * corpus.sample_rate));

  std::vector<int> speakers = corpus.speakers_in(cfg.train_split);
  if (speakers.size() < 2)
    throw InvalidInput("pretrain: need at least 2 speakers in split '" + cfg.train_split + "', found " +
                       std::to_string(speakers.size()));
  std::map<int, int> label;
  for (std::size_t i = 0; i < speakers.size(); ++i) label[speakers[i]] = static_cast<int>(i);
  std::vector<std::size_t> pool;
  for (std::size_t i : corpus.indices(cfg.train_split))
    if (corpus.utterances[i].audio.size() >= len) pool.push_back(i);
  require(!pool.empty(), "pretrain: no utterance is long enough for a crop");

  const int n_cls = static_cast<int>(speakers.size());
  nn::Rng init(data::derive_seed(cfg.seed, "pretrain-classifier"));
  nn::Linear classifier("classifier", net.config().emb_dim, n_cls, true, init);
  nn::ParamSet ps;
  net.embedder().collect(ps);
  classifier.collect(ps);
  Optimizer opt(cfg.optimizer);

  EmbedderReport rep;
  rep.speakers = n_cls;
  const Real scale = static_cast<Real>(cfg.logit_scale);
  double window = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::mt19937_64 rng(data::derive_seed(cfg.seed, "pretrain-" + std::to_string(step)));
    nn::Batch mags;
    std::vector<int> y;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const data::Utterance& u = corpus.utterances[pool[pick(rng, pool.size())]];
      mags.push_back(random_crop_magnitude(u, len, stft, rng));
      y.push_back(label.at(u.speaker));
    }
    ps.zero_grad();
    nn::Batch emb = net.embedder().forward(mags, nn::Mode::Train);
    for (Mat& e : emb) e *= scale;
    nn::Batch logits = classifier.forward(emb, nn::Mode::Train);
    nn::Batch d_logits;
    double loss = 0.0;
    for (std::size_t b = 0; b < logits.size(); ++b) {
      const RowVec z = logits[b].row(0).array() - logits[b].maxCoeff();
      const RowVec p = z.array().exp() / z.array().exp().sum();
      loss -= std::log(std::max<double>(static_cast<double>(p(y[b])), 1e-300)) / static_cast<double>(logits.size());
      Mat d = p;
      d(0, y[b]) -= 1;
      d_logits.push_back(d / static_cast<Real>(logits.size()));
    }
    if (!std::isfinite(loss)) throw NonFinite("pretrain: non-finite loss at step " + std::to_string(step));
    nn::Batch d_emb = classifier.backward(d_logits);
    for (Mat& d : d_emb) d *= scale;
    net.embedder().backward(d_emb);
    opt.step(ps);
    window += loss;
    if ((step + 1) % 100 == 0 || step + 1 == cfg.steps) {
      const int span = (step % 100) + 1;
      rep.loss_curve.push_back(window / span);
      window = 0.0;
    }
    rep.final_train_loss = loss;
  }

  // held-out identification with the (soon discarded) classifier
  int correct = 0, total = 0;
  for (std::size_t i : corpus.indices(cfg.heldout_split)) {
    const data::Utterance& u = corpus.utterances[i];
    if (!label.count(u.speaker) || u.audio.size() < len) continue;
    std::mt19937_64 rng(data::derive_seed(cfg.seed, "heldout-" + u.id));
    for (int k = 0; k < 4; ++k) {
      Mat e = net.embedder().embed(random_crop_magnitude(u, len, stft, rng)).vector * scale;
      Mat z = classifier.forward({e}, nn::Mode::Eval)[0];
      Eigen::Index arg;
      z.row(0).maxCoeff(&arg);
      correct += static_cast<int>(arg) == label.at(u.speaker);
      ++total;
    }
  }
  rep.heldout_accuracy = total ? static_cast<double>(correct) / total : 0.0;
  return rep;
}

EmbeddingSeparation embedding_separation(model::EnhancementNet& net, const data::Corpus& corpus,
                                         const std::string& split, double crop_s, std::uint64_t seed) {
  const dsp::StftConfig stft = dsp::StftConfig::toy();
  const std::size_t len = static_cast<std::size_t>(std::llround(crop_s * corpus.sample_rate));
  std::vector<RowVec> emb;
  std::vector<int> spk;
  for (std::size_t i : corpus.indices(split)) {
    const data::Utterance& u = corpus.utterances[i];
    if (u.audio.size() < len) continue;
    std::mt19937_64 rng(data::derive_seed(seed, "separation-" + u.id));
    emb.push_back(net.embedder().embed(random_crop_magnitude(u, len, stft, rng)).vector);
    spk.push_back(u.speaker);
  }
  std::vector<double> within, cross;
  for (std::size_t a = 0; a < emb.size(); ++a)
    for (std::size_t b = a + 1; b < emb.size(); ++b)
      (spk[a] == spk[b] ? within : cross).push_back(static_cast<double>(emb[a].dot(emb[b])));
  require(!within.empty() && !cross.empty(), "embedding_separation: need two speakers with two utterances each");
  return {median(within), median(cross)};
}

}  // namespace avsep::train
