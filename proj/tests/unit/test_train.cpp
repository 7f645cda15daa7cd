#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "avsep/data/seed.hpp"
#include "avsep/train/curriculum.hpp"
#include "avsep/train/embedder.hpp"
#include "avsep/train/pit.hpp"
#include "test_util.hpp"

using namespace avsep;
using namespace avsep::train;
using avsep::testing::random_mat;

namespace {

SpectralTarget random_target(Eigen::Index t, Eigen::Index f, std::mt19937_64& rng) {
  SpectralTarget g;
  g.magnitude = random_mat(t, f, rng).cwiseAbs();
  const Mat angle = random_mat(t, f, rng, 3.0);
  g.cos = angle.array().cos();
  g.sin = angle.array().sin();
  return g;
}

model::NetworkOutput random_prediction(Eigen::Index t, Eigen::Index f, std::mt19937_64& rng) {
  model::NetworkOutput p;
  p.enhanced_magnitude = random_mat(t, f, rng).cwiseAbs();
  const Mat angle = random_mat(t, f, rng, 3.0);
  p.phase_cos = angle.array().cos();
  p.phase_sin = angle.array().sin();
  p.mask = Mat::Constant(t, f, 0.5);
  return p;
}

// The objective written as plain loops over cells.
double scalar_loss(const model::NetworkOutput& p, const SpectralTarget& g) {
  double l1 = 0, phase = 0;
  const auto T = g.magnitude.rows(), F = g.magnitude.cols();
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index f = 0; f < F; ++f) {
      l1 += std::abs(p.enhanced_magnitude(t, f) - g.magnitude(t, f));
      phase += g.magnitude(t, f) * (p.phase_cos(t, f) * g.cos(t, f) + p.phase_sin(t, f) * g.sin(t, f));
    }
  return l1 / static_cast<double>(T * F) - phase / static_cast<double>(T * F);
}

const data::Corpus& corpus() {
  static const data::Corpus c = data::generate_corpus(data::CorpusConfig{}, 2000);
  return c;
}

TrainConfig tiny_config(const std::string& variant) {
  TrainConfig c = TrainConfig::preset(variant);
  c.batch_size = 2;
  c.steps = {4, 4, 2, 2};
  c.val_samples = 4;
  c.val_every = 0;
  return c;
}

model::EnhancementNet tiny_net() {
  model::ModelConfig cfg = model::ModelConfig::toy();
  return model::EnhancementNet(cfg, 5);
}

bool same_values(const nn::ParamSet& a, const nn::ParamSet& b) {
  if (a.count() != b.count()) return false;
  for (std::size_t i = 0; i < a.count(); ++i)
    if (a.items()[i]->value != b.items()[i]->value) return false;
  return true;
}

std::vector<Mat> snapshot(const nn::ParamSet& ps) {
  std::vector<Mat> out;
  for (nn::Param* p : ps.items()) out.push_back(p->value);
  return out;
}

bool unchanged(const nn::ParamSet& ps, const std::vector<Mat>& before) {
  for (std::size_t i = 0; i < before.size(); ++i)
    if (ps.items()[i]->value != before[i]) return false;
  return true;
}

}  // namespace

// ------------------------------------------------------------------ loss

TEST_CASE("loss matches the scalar-loop oracle on random small instances") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = random_target(4, 3, rng);
    auto p = random_prediction(4, 3, rng);
    SampleLoss l = magnitude_phase_loss(p, g);
    CHECK(std::abs(l.total - scalar_loss(p, g)) <= 1e-12);
    CHECK(std::abs(l.total - (l.magnitude_l1 - l.phase_term)) <= 1e-15);
  }
}

TEST_CASE("perfect prediction attains the global minimum and orthogonal phase gives zero") {
  std::mt19937_64 rng(2);
  auto g = random_target(6, 5, rng);
  model::NetworkOutput p;
  p.enhanced_magnitude = g.magnitude;
  p.phase_cos = g.cos;
  p.phase_sin = g.sin;
  SampleLoss l = magnitude_phase_loss(p, g);
  CHECK(l.magnitude_l1 == 0.0);
  CHECK(l.total == doctest::Approx(-g.magnitude.mean()).epsilon(1e-14));
  CHECK(l.total == doctest::Approx(loss_minimum(g)).epsilon(1e-14));

  p.phase_cos = -g.sin;  // rotated by 90 degrees
  p.phase_sin = g.cos;
  CHECK(std::abs(magnitude_phase_loss(p, g).total) < 1e-15);

  // lower bound holds for arbitrary predictions
  for (int trial = 0; trial < 50; ++trial) {
    auto q = random_prediction(6, 5, rng);
    CHECK(magnitude_phase_loss(q, g).total >= loss_minimum(g) - 1e-12);
  }
}

TEST_CASE("loss gradient with respect to the mask passes a finite-difference check") {
  std::mt19937_64 rng(3);
  const auto g = random_target(5, 4, rng);
  const Mat noisy = random_mat(5, 4, rng).cwiseAbs() + Mat::Constant(5, 4, 0.5);
  const auto phase = random_prediction(5, 4, rng);
  std::vector<double> x0(20);
  for (double& v : x0) v = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
  auto fn = [&](const std::vector<double>& x, std::vector<double>* grad) {
    model::NetworkOutput p = phase;
    p.mask = Eigen::Map<const Mat>(x.data(), 5, 4);
    p.enhanced_magnitude = p.mask.cwiseProduct(noisy);
    SampleLoss l = magnitude_phase_loss(p, g);
    if (grad) {
      const Mat d = l.grad.d_magnitude.cwiseProduct(noisy);
      grad->assign(d.data(), d.data() + d.size());
    }
    return l.total;
  };
  auto r = nn::gradient_check(fn, x0, 1e-6);
  CHECK(r.max_relative_error < 1e-4);

  // phase gradient
  auto fp = [&](const std::vector<double>& x, std::vector<double>* grad) {
    model::NetworkOutput p = phase;
    p.enhanced_magnitude = noisy;
    p.phase_cos = Eigen::Map<const Mat>(x.data(), 5, 4);
    p.phase_sin = Eigen::Map<const Mat>(x.data() + 20, 5, 4);
    SampleLoss l = magnitude_phase_loss(p, g);
    if (grad) {
      grad->assign(l.grad.d_cos.data(), l.grad.d_cos.data() + 20);
      grad->insert(grad->end(), l.grad.d_sin.data(), l.grad.d_sin.data() + 20);
    }
    return l.total;
  };
  std::vector<double> xp(phase.phase_cos.data(), phase.phase_cos.data() + 20);
  xp.insert(xp.end(), phase.phase_sin.data(), phase.phase_sin.data() + 20);
  CHECK(nn::gradient_check(fp, xp, 1e-6).max_relative_error < 1e-6);
}

TEST_CASE("loss errors") {
  std::mt19937_64 rng(4);
  auto g = random_target(4, 3, rng);
  auto p = random_prediction(4, 4, rng);
  CHECK_THROWS_AS(magnitude_phase_loss(p, g), ShapeMismatch);
  auto q = random_prediction(4, 3, rng);
  g.cos *= 1.1;
  CHECK_THROWS_AS(magnitude_phase_loss(q, g), InvalidInput);
}

TEST_CASE("batch loss averages samples and scales gradients") {
  std::mt19937_64 rng(5);
  std::vector<SpectralTarget> g{random_target(4, 3, rng), random_target(4, 3, rng)};
  std::vector<model::NetworkOutput> p{random_prediction(4, 3, rng), random_prediction(4, 3, rng)};
  std::vector<model::OutputGrad> grads;
  LossBreakdown b = batch_loss(p, g, &grads);
  CHECK(b.total == doctest::Approx(0.5 * (scalar_loss(p[0], g[0]) + scalar_loss(p[1], g[1]))).epsilon(1e-13));
  REQUIRE(grads.size() == 2);
  CHECK((grads[1].d_cos - magnitude_phase_loss(p[1], g[1]).grad.d_cos * 0.5).cwiseAbs().maxCoeff() == 0.0);
  CHECK(b.per_sample.size() == 2);
}

// ------------------------------------------------------------------- PIT

TEST_CASE("pit loss is zero for ordered and swapped perfect predictions") {
  std::mt19937_64 rng(6);
  std::vector<Mat> gt{random_mat(5, 4, rng).cwiseAbs(), random_mat(5, 4, rng).cwiseAbs()};
  auto r = pit_loss(gt, gt);
  CHECK(r.loss == 0.0);
  CHECK(r.permutation == std::vector<int>{0, 1});
  auto s = pit_loss({gt[1], gt[0]}, gt);
  CHECK(s.loss == 0.0);
  CHECK(s.permutation == std::vector<int>{1, 0});
}

TEST_CASE("pit loss equals the exhaustive minimum and is permutation invariant") {
  std::mt19937_64 rng(7);
  for (int n : {2, 3}) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<Mat> pred, gt;
      for (int i = 0; i < n; ++i) {
        pred.push_back(random_mat(4, 3, rng).cwiseAbs());
        gt.push_back(random_mat(4, 3, rng).cwiseAbs());
      }
      // brute force with explicit loops over every assignment
      std::vector<int> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      double best = INFINITY;
      do {
        double total = 0;
        for (int i = 0; i < n; ++i) {
          double s = 0;
          for (Eigen::Index t = 0; t < 4; ++t)
            for (Eigen::Index f = 0; f < 3; ++f)
              s += std::abs(pred[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])](t, f) -
                            gt[static_cast<std::size_t>(i)](t, f));
          total += s / 12.0;
        }
        best = std::min(best, total / n);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const PitResult r = pit_loss(pred, gt);
      CHECK(r.loss == doctest::Approx(best).epsilon(1e-13));

      std::vector<int> sigma(static_cast<std::size_t>(n));
      std::iota(sigma.begin(), sigma.end(), 0);
      do {
        std::vector<Mat> shuffled;
        for (int k : sigma) shuffled.push_back(pred[static_cast<std::size_t>(k)]);
        CHECK(pit_loss(shuffled, gt).loss == doctest::Approx(r.loss).epsilon(1e-14));
      } while (std::next_permutation(sigma.begin(), sigma.end()));
    }
  }
}

TEST_CASE("pit loss gradient and errors") {
  std::mt19937_64 rng(8);
  std::vector<Mat> gt{random_mat(3, 2, rng).cwiseAbs(), random_mat(3, 2, rng).cwiseAbs(),
                      random_mat(3, 2, rng).cwiseAbs()};
  std::vector<double> x0;
  for (int i = 0; i < 18; ++i) x0.push_back(std::abs(std::normal_distribution<double>()(rng)));
  auto fn = [&](const std::vector<double>& x, std::vector<double>* grad) {
    std::vector<Mat> pred;
    for (int s = 0; s < 3; ++s) pred.push_back(Eigen::Map<const Mat>(x.data() + 6 * s, 3, 2));
    PitResult r = pit_loss(pred, gt);
    if (grad) {
      grad->clear();
      for (const Mat& g : r.grads) grad->insert(grad->end(), g.data(), g.data() + g.size());
    }
    return r.loss;
  };
  CHECK(nn::gradient_check(fn, x0, 1e-7).max_relative_error < 1e-4);
  CHECK_THROWS_AS(pit_loss({gt[0], gt[1]}, gt), InvalidInput);
  CHECK_THROWS_AS(pit_loss({gt[0]}, {gt[0]}), InvalidInput);
}

// ------------------------------------------------------------- optimiser

TEST_CASE("optimiser: zero step size, clipping bound, Adam arithmetic, plateau halving") {
  std::mt19937_64 rng(9);
  nn::Param a("a", 3, 4), b("b", 2, 2), buf("buf", 1, 2, false);
  a.value = random_mat(3, 4, rng);
  b.value = random_mat(2, 2, rng);
  a.grad = random_mat(3, 4, rng, 10.0);
  b.grad = random_mat(2, 2, rng, 10.0);
  buf.grad = Mat::Ones(1, 2);
  nn::ParamSet ps({&a, &b, &buf});

  OptimizerConfig zero;
  zero.lr = 0.0;
  const Mat a0 = a.value, b0 = b.value, buf0 = buf.value;
  Optimizer(zero).step(ps);
  CHECK(a.value == a0);
  CHECK(b.value == b0);

  OptimizerConfig sgd;
  sgd.kind = "sgd";
  sgd.lr = 0.1;
  sgd.clip_norm = 0.5;
  Optimizer opt(sgd);
  auto info = opt.step(ps);
  CHECK(info.grad_norm > 0.5);
  CHECK(info.update_norm <= 0.5 * 0.1 * (1 + 1e-12));
  CHECK(buf.value == buf0);

  // one Adam step from zero moments moves each coordinate by lr * g/(|g| + eps')
  a.value = a0;
  a.grad = random_mat(3, 4, rng);
  nn::ParamSet just_a({&a});
  OptimizerConfig adam;
  adam.lr = 0.01;
  adam.clip_norm = 0.0;
  Optimizer ad(adam);
  ad.step(just_a);
  for (Eigen::Index i = 0; i < a.value.size(); ++i) {
    const double g = a.grad.data()[i];
    const double expect = a0.data()[i] - 0.01 * g / (std::abs(g) + 1e-8);
    CHECK(a.value.data()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(ad.moments().at("a").steps == 1);

  OptimizerConfig plateau;
  plateau.patience = 2;
  Optimizer pl(plateau);
  CHECK_FALSE(pl.observe_validation(1.0));
  CHECK_FALSE(pl.observe_validation(0.9));
  CHECK_FALSE(pl.observe_validation(0.95));
  CHECK(pl.observe_validation(0.92));
  CHECK(pl.lr() == doctest::Approx(1.5e-4));

  OptimizerConfig bad;
  bad.kind = "rmsprop";
  CHECK_THROWS_AS(Optimizer{bad}, InvalidInput);

  a.grad(0, 0) = NAN;
  CHECK_THROWS_AS(ad.step(just_a), NonFinite);
}

// ------------------------------------------------------------ checkpoint

TEST_CASE("checkpoint container round trips bit-exactly and detects damage") {
  std::mt19937_64 rng(10);
  Checkpoint c;
  c.tensors.push_back({"param/x", random_mat(3, 5, rng)});
  c.tensors.push_back({"param/empty", Mat(0, 4)});
  c.tensors.push_back({"adam.m/x", random_mat(1, 1, rng)});
  c.tensors[0].value(1, 1) = -0.0;
  c.tensors[0].value(2, 2) = 1e-310;  // subnormal survives
  c.meta = {{"kind", "test"}, {"pi", 3.141592653589793}, {"note", "ünïcode"}};

  const std::string bytes = encode_checkpoint(c);
  CHECK(bytes.substr(0, 4) == "CSEP");
  Checkpoint back = decode_checkpoint(bytes);
  REQUIRE(back.tensors.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.tensors[i].name == c.tensors[i].name);
    CHECK(back.tensors[i].value.rows() == c.tensors[i].value.rows());
    CHECK(std::memcmp(back.tensors[i].value.data(), c.tensors[i].value.data(),
                      sizeof(Real) * static_cast<std::size_t>(c.tensors[i].value.size())) == 0);
  }
  CHECK(back.meta == c.meta);
  CHECK(encode_checkpoint(back) == bytes);

  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, cut)), IntegrityError);
  std::string flipped = bytes;
  flipped[40] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(flipped), IntegrityError);
  std::string other = bytes;
  other[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(other), VersionMismatch);
  CHECK_THROWS_AS(decode_checkpoint("NOPE1234"), IntegrityError);
  CHECK_THROWS_AS(back.at("param/missing"), IntegrityError);

  const auto dir = std::filesystem::temp_directory_path() / "avsep_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(c, dir / "a.csep");
  CHECK(read_file(dir / "a.csep") == bytes);
  CHECK_FALSE(std::filesystem::exists(dir / "a.csep.tmp"));
  std::filesystem::remove_all(dir);
}

// ------------------------------------------------------------ curriculum

TEST_CASE("phase plans follow the curriculum") {
  TrainConfig vs = TrainConfig::preset("vs");
  PhasePlan p1 = vs.plan(1), p2 = vs.plan(2), p3 = vs.plan(3), p4 = vs.plan(4);
  CHECK_FALSE(p1.use_video);
  CHECK(p1.speakers_at(0) == 2);
  CHECK(p1.speakers_at(p1.steps - 1) == 3);
  CHECK_FALSE(p1.train_video);
  CHECK(p2.use_video);
  CHECK(p2.speakers_at(0) == 2);
  CHECK(p2.speakers_at(1) == 3);
  CHECK(p2.occlusion_fraction == 0.75);
  CHECK(p3.train_phase);
  CHECK_FALSE(p3.options().any_magnitude_training());
  CHECK(p4.train_video);
  CHECK(p4.train_phase);
  CHECK_FALSE(p4.train_embedder);
  vs.unfreeze_embedder = true;
  CHECK(vs.plan(4).train_embedder);

  TrainConfig vb = TrainConfig::preset("v-blstm");
  CHECK(vb.plan(1).steps == 0);
  CHECK(vb.plan(2).enrollment == data::EnrollmentMode::None);
  TrainConfig vf = TrainConfig::preset("voicefilter");
  CHECK(vf.last_phase() == 1);
  CHECK_THROWS_AS(vf.plan(2), InvalidInput);
  TrainConfig bad = vs;
  bad.variant = "other";
  CHECK_THROWS_AS(bad.validate(), InvalidInput);

  CHECK(TrainConfig::from_json(vs.to_json()).to_json() == vs.to_json());
}

TEST_CASE("phases run in order; phase 1 never touches video, phase 3 never touches magnitude") {
  Trainer tr(corpus(), tiny_config("vs"), tiny_net());
  CHECK_THROWS_AS(tr.run_phase(2), InvalidInput);

  const auto video0 = snapshot(tr.net().group("video"));
  const auto audio0 = snapshot(tr.net().group("audio"));
  const auto phase0 = snapshot(tr.net().group("phase"));
  tr.run_phase(1);
  CHECK(unchanged(tr.net().group("video"), video0));
  CHECK_FALSE(unchanged(tr.net().group("audio"), audio0));
  CHECK(unchanged(tr.net().group("phase"), phase0));
  CHECK(tr.completed_phase() == 1);

  tr.run_phase(2);
  CHECK_FALSE(unchanged(tr.net().group("video"), video0));
  const auto mag = snapshot(tr.net().magnitude_params());
  const auto emb = snapshot(tr.net().group("embedder"));
  tr.run_phase(3);
  CHECK(unchanged(tr.net().magnitude_params(), mag));
  CHECK(unchanged(tr.net().group("embedder"), emb));
  CHECK_FALSE(unchanged(tr.net().group("phase"), phase0));
  tr.run_phase(4);
  CHECK(unchanged(tr.net().group("embedder"), emb));
  CHECK(tr.history().size() == 4);
}

TEST_CASE("zero learning rate leaves every trainable parameter unchanged") {
  TrainConfig cfg = tiny_config("vs");
  cfg.optimizer.lr = 0.0;
  Trainer tr(corpus(), cfg, tiny_net());
  nn::ParamSet train = tr.net().params().trainable();
  const auto before = snapshot(train);
  tr.run_phase(1);
  CHECK(unchanged(train, before));
}

TEST_CASE("resuming mid-phase reproduces the uninterrupted run") {
  TrainConfig cfg = tiny_config("vs");
  cfg.steps = {2, 4, 0, 0};
  Trainer full(corpus(), cfg, tiny_net());
  full.run_phase(1);
  full.run_phase(2, 2);
  const std::string mid = encode_checkpoint(full.to_checkpoint());
  std::vector<double> expect;
  full.on_step = [&](int, int, const StepResult& r) {
    expect.push_back(r.loss.total);
    return true;
  };
  full.run_phase(2);

  Checkpoint c = decode_checkpoint(mid);
  Trainer resumed = Trainer::from_checkpoint(corpus(), c);
  CHECK(encode_checkpoint(resumed.to_checkpoint()) == mid);
  CHECK(resumed.current_step() == 2);
  std::vector<double> got;
  resumed.on_step = [&](int, int, const StepResult& r) {
    got.push_back(r.loss.total);
    return true;
  };
  resumed.run_phase(2);
  REQUIRE(got.size() == 2);
  CHECK(got == expect);
  CHECK(same_values(resumed.net().params(), full.net().params()));
  CHECK(encode_checkpoint(resumed.to_checkpoint()) == encode_checkpoint(full.to_checkpoint()));
}

TEST_CASE("non-finite values abort with the sample id") {
  Trainer tr(corpus(), tiny_config("vs"), tiny_net());
  tr.net().group("fusion").items()[0]->value(0, 0) = NAN;
  auto message = [](auto&& fn) {
    try {
      fn();
    } catch (const NonFinite& e) {
      return std::string(e.what());
    }
    return std::string("no exception");
  };
  const std::string in_phase = message([&] { tr.run_phase(1); });
  INFO(in_phase);
  CHECK(in_phase.find("val-0") != std::string::npos);
  const std::string in_step = message([&] { tr.train_step(tr.config().plan(1), 3); });
  INFO(in_step);
  CHECK(in_step.find("train-6") != std::string::npos);
  CHECK(in_step.find("train-7") != std::string::npos);
}

TEST_CASE("training on one batch approaches the analytic minimum") {
  TrainConfig cfg = tiny_config("vs");
  cfg.batch_size = 1;
  cfg.optimizer.lr = 3e-3;
  Trainer tr(corpus(), cfg, tiny_net());
  PhasePlan plan = cfg.plan(4);
  plan.n_speakers_first = plan.n_speakers_second = 2;
  plan.occlusion_fraction = 0.0;
  plan.embedding_dropout = 0.0;
  StepResult r;
  for (int i = 0; i < 500; ++i) r = tr.train_step(plan, 0);

  // the same batch, evaluated in inference mode
  data::MixtureSampler sampler(corpus(), "train", cfg.sampler, data::derive_seed(cfg.seed, "phase4"));
  data::SampleRequest req;
  req.enrollment = data::EnrollmentMode::Train;
  PreparedSample p = prepare_sample(sampler.draw(0, req), cfg.sampler.oracle.stft);
  const double minimum = loss_minimum(p.target);
  // a mask in [0, 1] cannot raise a cell above the mixture magnitude
  const double floor = (p.target.magnitude - p.mix.magnitude).cwiseMax(0.0).mean();
  MESSAGE("final training loss " << r.loss.total << ", minimum " << minimum << ", bounded-mask floor " << floor);
  CHECK(r.loss.total <= (minimum + floor) * 0.95);
  CHECK(r.loss.total >= minimum + floor - 1e-12);
}

TEST_CASE("embedder pretraining identifies 8 speakers on held-out utterances") {
  data::CorpusConfig cc;
  cc.n_speakers = 8;
  cc.test_stride = 0;
  const data::Corpus c = data::generate_corpus(cc, 2000);
  model::EnhancementNet net(model::ModelConfig::toy(), 3);
  EmbedderPretrainConfig cfg;
  cfg.steps = 400;
  EmbedderReport rep = pretrain_embedder(net, c, cfg);
  CHECK(rep.speakers == 8);
  CHECK(rep.heldout_accuracy >= 0.9);
  CHECK(rep.loss_curve.back() < rep.loss_curve.front());
  const EmbeddingSeparation sep = embedding_separation(net, c, "train", 2.0, 4);
  CHECK(sep.gap() >= 0.2);

  data::Corpus one = c;
  one.utterances.erase(std::remove_if(one.utterances.begin(), one.utterances.end(),
                                      [](const data::Utterance& u) { return u.speaker != 0; }),
                       one.utterances.end());
  CHECK_THROWS_AS(pretrain_embedder(net, one, cfg), InvalidInput);
}

TEST_CASE("pit trainer lowers its loss and round trips") {
  PitTrainConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 4;
  cfg.optimizer.lr = 1e-3;
  PitTrainer tr(corpus(), cfg, model::PitNet(model::ModelConfig::toy(), 3, 2));
  tr.run(100);
  const std::string mid = encode_checkpoint(tr.to_checkpoint());
  tr.run();
  CHECK(tr.curve().back() < tr.curve().front());
  PitTrainer back = PitTrainer::from_checkpoint(corpus(), decode_checkpoint(mid));
  back.run();
  CHECK(encode_checkpoint(back.to_checkpoint()) == encode_checkpoint(tr.to_checkpoint()));
}
