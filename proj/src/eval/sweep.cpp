#include "avsep/eval/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <thread>

#include "avsep/eval/enhance.hpp"
#include "avsep/train/checkpoint.hpp"
#include "avsep/train/sample.hpp"

namespace avsep::eval {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// RFC 4180: quote fields holding a comma, quote or line break.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json num(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

struct Task {
  int n_speakers;
  double fraction;
  int index;
};

}  // namespace

std::string enroll_use_name(EnrollUse e) {
  switch (e) {
    case EnrollUse::Pre: return "pre";
    case EnrollUse::Self: return "self";
    case EnrollUse::None: return "none";
  }
  return "none";
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void SweepConfig::validate() const {
  require(!fractions.empty() && !speakers.empty(), "sweep: empty grid");
  for (double f : fractions) require(f >= 0.0 && f <= 1.0, "sweep: occlusion fractions must be in [0, 1]");
  for (int n : speakers) require(n == 2 || n == 3, "sweep: speaker counts must be 2 or 3");
  require(samples_per_cell >= 1, "sweep: need at least one sample per cell");
  require(threads >= 1, "sweep: threads must be >= 1");
}

json SweepConfig::to_json() const {
  return {{"fractions", fractions},
          {"speakers", speakers},
          {"samples_per_cell", samples_per_cell},
          {"seed", seed},
          {"split", split},
          {"crop_s", sampler.crop_s},
          {"enroll_s", sampler.enroll_s},
          {"level_rms", sampler.level_rms},
          {"occlusion_fill", sampler.oracle.fill == data::OcclusionFill::Zeros ? "zeros" : "distractor"}};
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<CellSummary> summarize(const std::vector<SampleRecord>& rows) {
  std::vector<CellSummary> cells;
  std::vector<std::vector<const SampleRecord*>> members;
  for (const SampleRecord& r : rows) {
    std::size_t k = 0;
    for (; k < cells.size(); ++k)
      if (cells[k].variant == r.variant && cells[k].n_speakers == r.n_speakers &&
          cells[k].occlusion_fraction == r.occlusion_fraction && cells[k].enrollment == r.enrollment)
        break;
    if (k == cells.size()) {
      cells.push_back({r.variant, r.n_speakers, r.occlusion_fraction, r.enrollment});
      members.emplace_back();
    }
    members[k].push_back(&r);
  }
  for (std::size_t k = 0; k < cells.size(); ++k) {
    std::vector<double> sdr, wer, msdr, mwer, p1;
    for (const SampleRecord* r : members[k]) {
      sdr.push_back(r->sdr_db);
      wer.push_back(r->wer_pct);
      msdr.push_back(r->mixture_sdr_db);
      mwer.push_back(r->mixture_wer_pct);
      p1.push_back(r->pass1_sdr_db);
    }
    cells[k].median_sdr_db = median(sdr);
    cells[k].median_wer_pct = median(wer);
    cells[k].median_mixture_sdr_db = median(msdr);
    cells[k].median_mixture_wer_pct = median(mwer);
    cells[k].median_pass1_sdr_db = median(p1);
    cells[k].n_samples = static_cast<int>(members[k].size());
  }
  return cells;
}

const CellSummary& EvalReport::cell(const std::string& variant, int n_speakers, double fraction) const {
  for (const CellSummary& c : cells)
    if (c.variant == variant && c.n_speakers == n_speakers && std::abs(c.occlusion_fraction - fraction) < 1e-12)
      return c;
  throw InvalidInput("report: no cell " + variant + "/" + std::to_string(n_speakers) + "/" + std::to_string(fraction));
}

EvalReport occlusion_sweep(const std::vector<EvalVariant>& variants, const data::Corpus& corpus,
                           const SweepConfig& cfg) {
  cfg.validate();
  require(!variants.empty(), "sweep: no model variants");
  for (const EvalVariant& v : variants)
    require((v.net != nullptr) != (v.pit != nullptr), "sweep: variant " + v.name + " needs exactly one model");

  std::vector<Task> tasks;
  for (int n : cfg.speakers)
    for (double f : cfg.fractions)
      for (int i = 0; i < cfg.samples_per_cell; ++i) tasks.push_back({n, f, i});

  const data::MixtureSampler sampler(corpus, cfg.split, cfg.sampler, cfg.seed);
  std::vector<std::vector<SampleRecord>> results(tasks.size());

  auto worker = [&](std::size_t first, std::size_t stride) {
    // private copies: forward passes cache activations
    std::vector<model::EnhancementNet> nets;
    std::vector<model::PitNet> pits;
    for (const EvalVariant& v : variants) {
      nets.push_back(v.net ? *v.net : model::EnhancementNet());
      pits.push_back(v.pit ? *v.pit : model::PitNet());
    }
    EnvelopeDecoder decoder(cfg.decoder);
    auto transcribe_wer = [&](const std::vector<std::string>& ref, const dsp::Waveform& w, std::string& err) {
      if (ref.empty()) return kNaN;
      try {
        return wer(ref, decoder.transcribe(w));
      } catch (const std::exception& e) {
        err = std::string("transcriber: ") + e.what();
        return kNaN;
      }
    };
    for (std::size_t t = first; t < tasks.size(); t += stride) {
      const Task& task = tasks[t];
      data::SampleRequest req;
      req.n_speakers = task.n_speakers;
      req.occlusion_mode = data::OcclusionMode::EvalEdges;
      req.occlusion_fraction = task.fraction;
      req.enrollment = data::EnrollmentMode::Pre;
      const data::MixSample s = sampler.draw(static_cast<std::uint64_t>(task.index), req);
      const train::PreparedSample p = train::prepare_sample(s, cfg.sampler.oracle.stft, cfg.sampler.level_rms);
      std::string mix_err;
      const double mix_sdr = sdr(s.mix.target, s.mix.mixture);
      const double mix_wer = transcribe_wer(s.tokens, s.mix.mixture, mix_err);

      for (std::size_t v = 0; v < variants.size(); ++v) {
        const EvalVariant& var = variants[v];
        SampleRecord r;
        r.sample_id = s.sample_id;
        r.variant = var.name;
        r.n_speakers = task.n_speakers;
        r.occlusion_fraction = task.fraction;
        r.enrollment = enroll_use_name(var.enrollment);
        r.seed = s.seed;
        r.mixture_sdr_db = mix_sdr;
        r.mixture_wer_pct = mix_wer;
        r.pass1_sdr_db = kNaN;
        r.error = mix_err;
        dsp::Waveform est;
        if (var.pit) {
          est = pit_best_estimate(pits[v], p.mix, p.target_audio);
        } else if (var.enrollment == EnrollUse::Self) {
          SelfEnrolled se = self_enroll_enhance(nets[v], p.mix, p.video);
          r.pass1_sdr_db = sdr(p.target_audio, se.pass1.audio);
          est = std::move(se.pass2.audio);
        } else {
          std::optional<Mat> enroll;
          if (var.enrollment == EnrollUse::Pre) enroll = p.enrollment_magnitude;
          est = enhance(nets[v], p.mix, p.video, enroll, var.use_video).audio;
        }
        r.sdr_db = sdr(p.target_audio, est);
        r.wer_pct = transcribe_wer(s.tokens, est, r.error);
        results[t].push_back(std::move(r));
      }
    }
  };

  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), tasks.size());
  if (n_threads <= 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker, k, n_threads);
    for (auto& th : pool) th.join();
  }

  // ordered merge: variant, speakers, fraction, sample
  EvalReport rep;
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (const auto& per_task : results) rep.rows.push_back(per_task[v]);
  rep.cells = summarize(rep.rows);

  json digests = json::object();
  for (const EvalVariant& v : variants) digests[v.name] = v.checkpoint_digest;
  rep.config = {{"sweep", cfg.to_json()}, {"checkpoints", digests}};
  json fp = rep.config;
  rep.fingerprint = hex64(train::fnv1a_bytes(fp.dump()));
  return rep;
}

std::string to_csv(const EvalReport& r) {
  std::string out = "variant,n_speakers,occlusion_fraction,enrollment,median_sdr_db,median_wer_pct,n_samples\n";
  for (const CellSummary& c : r.cells)
    out += csv_field(c.variant) + "," + std::to_string(c.n_speakers) + "," + fmt(c.occlusion_fraction) + "," +
           csv_field(c.enrollment) + "," + fmt(c.median_sdr_db) + "," + fmt(c.median_wer_pct) + "," +
           std::to_string(c.n_samples) + "\n";
  return out;
}

std::string rows_to_csv(const EvalReport& r) {
  std::string out =
      "sample_id,variant,n_speakers,occlusion_fraction,enrollment,seed,sdr_db,mixture_sdr_db,wer_pct,"
      "mixture_wer_pct,pass1_sdr_db,error\n";
  for (const SampleRecord& s : r.rows)
    out += csv_field(s.sample_id) + "," + csv_field(s.variant) + "," + std::to_string(s.n_speakers) + "," +
           fmt(s.occlusion_fraction) + "," + csv_field(s.enrollment) + "," + std::to_string(s.seed) + "," +
           fmt(s.sdr_db) + "," + fmt(s.mixture_sdr_db) + "," + fmt(s.wer_pct) + "," + fmt(s.mixture_wer_pct) + "," +
           fmt(s.pass1_sdr_db) + "," + csv_field(s.error) + "\n";
  return out;
}

json to_json(const EvalReport& r) {
  json j;
  j["fingerprint"] = r.fingerprint;
  j["config"] = r.config;
  json cells = json::array();
  for (const CellSummary& c : r.cells)
    cells.push_back({{"variant", c.variant},
                     {"n_speakers", c.n_speakers},
                     {"occlusion_fraction", c.occlusion_fraction},
                     {"enrollment", c.enrollment},
                     {"median_sdr_db", num(c.median_sdr_db)},
                     {"median_wer_pct", num(c.median_wer_pct)},
                     {"median_mixture_sdr_db", num(c.median_mixture_sdr_db)},
                     {"median_mixture_wer_pct", num(c.median_mixture_wer_pct)},
                     {"median_pass1_sdr_db", num(c.median_pass1_sdr_db)},
                     {"n_samples", c.n_samples}});
  j["aggregates"] = cells;
  json rows = json::array();
  for (const SampleRecord& s : r.rows)
    rows.push_back({{"sample_id", s.sample_id},
                    {"variant", s.variant},
                    {"n_speakers", s.n_speakers},
                    {"occlusion_fraction", s.occlusion_fraction},
                    {"enrollment", s.enrollment},
                    {"seed", s.seed},
                    {"sdr_db", num(s.sdr_db)},
                    {"mixture_sdr_db", num(s.mixture_sdr_db)},
                    {"wer_pct", num(s.wer_pct)},
                    {"mixture_wer_pct", num(s.mixture_wer_pct)},
                    {"pass1_sdr_db", num(s.pass1_sdr_db)},
                    {"error", s.error}});
  j["samples"] = rows;
  return j;
}

}  // namespace avsep::eval
