#pragma once

#include <vector>

#include "avsep/data/corpus.hpp"
#include "avsep/model/network.hpp"
#include "avsep/train/optim.hpp"

namespace avsep::train {

struct EmbedderPretrainConfig {
  int steps = 1200;
  int batch_size = 16;
  double crop_s = 2.0;
  double logit_scale = 10.0;  // unit-norm embeddings feed a scaled linear classifier
  std::uint64_t seed = 1;
  OptimizerConfig optimizer = {.lr = 2e-3};
  std::string train_split = "train";
  std::string heldout_split = "val";

  void validate() const;
};

struct EmbedderReport {
  int speakers = 0;
  double final_train_loss = 0.0;
  double heldout_accuracy = 0.0;  // classifier on held-out utterances of the training speakers
  std::vector<double> loss_curve;  // mean loss per 100 steps
};

// Trains the embedder of `net` as a speaker classifier on magnitude
// spectrograms of random crops; the classifier is discarded.
EmbedderReport pretrain_embedder(model::EnhancementNet& net, const data::Corpus& corpus,
                                 const EmbedderPretrainConfig& cfg);

struct EmbeddingSeparation {
  double within_median = 0.0;  // cosine between crops of one speaker
  double cross_median = 0.0;   // cosine between crops of different speakers
  double gap() const { return within_median - cross_median; }
};

// Embeds `crops_per_utterance` crops of every utterance of `split` and
// compares same-speaker against different-speaker pairs.
EmbeddingSeparation embedding_separation(model::EnhancementNet& net, const data::Corpus& corpus,
                                         const std::string& split, double crop_s, std::uint64_t seed);

}  // namespace avsep::train
