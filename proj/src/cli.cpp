#include "ddlab/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ddlab/distill.hpp"
#include "ddlab/errors.hpp"
#include "ddlab/metrics.hpp"
#include "ddlab/reference_model.hpp"
#include "ddlab/teacher.hpp"

namespace ddlab {

namespace fs = std::filesystem;

namespace {

// Independent random streams per subcommand, derived from the config seed.
enum Stream : std::uint64_t {
  kTeacherStream = 1,
  kDistillStream = 2,
  kSampleStream = 3,
  kEvalStream = 4,
  kReferenceStream = 5,
  kChainNoiseStream = 6,
};

enum class Verbosity { quiet, info, debug };

Verbosity verbosity() {
  const char* env = std::getenv("DDLAB_LOG");
  if (env == nullptr) return Verbosity::info;
  const std::string v = env;
  if (v == "quiet" || v == "0") return Verbosity::quiet;
  if (v == "debug" || v == "2") return Verbosity::debug;
  return Verbosity::info;
}

void info(const std::string& msg) {
  if (verbosity() != Verbosity::quiet) std::cerr << "[ddlab] " << msg << "\n";
}

void debug(const std::string& msg) {
  if (verbosity() == Verbosity::debug) std::cerr << "[ddlab] " << msg << "\n";
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// CSV with a versioned comment line carrying the config hash.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& kind, const ExperimentConfig& config,
            const std::vector<std::string>& columns)
      : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << "# ddlab " << kind << " v1 config_hash=" << config.hash()
         << " seed=" << config.seed << "\n";
    row(columns);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  void raw(const std::string& line) { out_ << line << "\n"; }

 private:
  std::ofstream out_;
};

std::map<std::string, std::string> artifact_tags(const ExperimentConfig& config) {
  return {{"config_hash", config.hash()}, {"seed", std::to_string(config.seed)}};
}

LogitMods eval_mods(const ExperimentConfig& config) {
  LogitMods mods;
  mods.temperature = config.eval.temperature;
  mods.top_p = config.eval.top_p;
  return mods;
}

Denoiser load_teacher(const fs::path& path, const ExperimentConfig& config) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.get("kind") != "teacher") {
    throw IncompatibleArtifact(path.string() + ": expected a teacher checkpoint, found '" +
                               ckpt.get("kind") + "'");
  }
  Denoiser teacher = denoiser_from_checkpoint(ckpt);
  if (!teacher.config().compatible_with(config.model)) {
    throw IncompatibleArtifact(path.string() +
                               ": teacher shape does not match the [model]/[dataset]/[process] "
                               "settings of this config");
  }
  return teacher;
}

// ------------------------------------------------------------------ samplers

struct EvalSampler {
  BatchSampler sample;
  ExactDistribution exact;
  std::optional<Denoiser> teacher;
  std::optional<Generator> generator;
};

EvalSampler make_sampler(const ExperimentConfig& config, const Checkpoint* checkpoint) {
  const SyntheticDataset data = config.make_dataset();
  const DiffusionProcess process = config.make_process();
  const ExactDistribution q = data.exact();
  const int k = config.eval.k;
  const auto mods = eval_mods(config);
  const auto d = static_cast<std::size_t>(data.seq_len());
  const int vocab = data.vocab();
  const std::string& kind = config.eval.sampler;

  if (kind == "data") {
    return {[data](std::size_t n, Rng& rng) { return data.sample(n, rng); }, q, {}, {}};
  }
  if (kind == "uniform") {
    const std::vector<double> flat(q.outcomes(), 1.0 / static_cast<double>(q.outcomes()));
    return {[d, vocab](std::size_t n, Rng& rng) {
              TokenBatch out(n, d);
              for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
              }
              return out;
            },
            ExactDistribution(vocab, data.seq_len(), flat), {}, {}};
  }
  if (kind == "corrupted") {
    const double c = config.eval.corrupt_prob;
    return {[data, c, vocab](std::size_t n, Rng& rng) {
              TokenBatch x = data.sample(n, rng);
              for (std::size_t i = 0; i < x.size(); ++i) {
                const bool flip = rng.uniform() < c;
                const auto tok = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
                if (flip) x[i] = tok;
              }
              return x;
            },
            corrupted_distribution(q, c), {}, {}};
  }
  // Model sampler.
  if (checkpoint == nullptr) {
    throw ConfigError("<cli>", 0, "sampler 'model' needs --checkpoint");
  }
  const std::string& ckind = checkpoint->get("kind");
  const std::uint64_t noise_seed = Rng(config.seed).split(kChainNoiseStream).next_u64();
  if (ckind == "teacher" || ckind == "auxiliary") {
    EvalSampler s{{}, q, denoiser_from_checkpoint(*checkpoint), {}};
    if (!s.teacher->config().compatible_with(config.model)) {
      throw IncompatibleArtifact("checkpoint shape does not match this config");
    }
    s.exact = exact_chain_distribution(chain_model(*s.teacher, mods), process, data.seq_len(), k);
    auto model = std::make_shared<Denoiser>(*s.teacher);
    s.sample = [model, process, k, mods, d](std::size_t n, Rng& rng) {
      DenoiseFn fn = [&](const TokenBatch& z, double t) { return model->logits(z, t); };
      return ancestral_sample(fn, process, k, mods, n, d, rng);
    };
    return s;
  }
  if (ckind == "generator") {
    EvalSampler s{{}, q, {}, generator_from_checkpoint(*checkpoint)};
    if (!s.generator->config().compatible_with(config.model)) {
      throw IncompatibleArtifact("checkpoint shape does not match this config");
    }
    s.exact = exact_chain_distribution(
        chain_model(*s.generator, config.eval.noise_draws, noise_seed, mods), process,
        data.seq_len(), k);
    auto model = std::make_shared<Generator>(*s.generator);
    s.sample = [model, process, k, mods](std::size_t n, Rng& rng) {
      return student_sample(*model, process, k, n, rng, mods);
    };
    return s;
  }
  throw IncompatibleArtifact("cannot evaluate a checkpoint of kind '" + ckind + "'");
}

std::uint64_t metric_stream(const std::string& name) { return fnv1a64(name); }

// ----------------------------------------------------------------- commands

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string teacher;
  std::string checkpoint;
  std::string resume;
  std::uint64_t stop_after = 0;
  std::vector<std::string> metrics;
  std::string sampler;
  std::string axis;
  std::vector<std::string> values;
};

ExperimentConfig load_config(const Options& opt) {
  ExperimentConfig config = ExperimentConfig::load(opt.config_path);
  if (opt.seed) config.seed = *opt.seed;
  if (opt.out) config.out_dir = *opt.out;
  if (!opt.sampler.empty()) config.set("eval.sampler", opt.sampler);
  return config;
}

fs::path prepare_out(const ExperimentConfig& config) {
  fs::path out(config.out_dir);
  fs::create_directories(out);
  return out;
}

double wallclock(const ExperimentConfig& config, double ms) {
  return config.record_wallclock ? ms : 0.0;
}

int cmd_train_teacher(const Options& opt) {
  const ExperimentConfig config = load_config(opt);
  const fs::path out = prepare_out(config);
  const SyntheticDataset data = config.make_dataset();
  const DiffusionProcess process = config.make_process();
  TeacherTrainConfig tc = config.teacher;
  tc.init_seed = config.seed;
  info("training teacher: " + std::to_string(tc.steps) + " steps, config " + config.hash());
  const auto result =
      train_teacher(data, process, config.model, tc, Rng(config.seed).split(kTeacherStream));

  write_checkpoint(out / "teacher.ckpt", model_checkpoint("teacher", result.model.config(),
                                                          result.model.params(),
                                                          artifact_tags(config)));
  {
    CsvWriter log(out / "teacher_log.csv", "teacher_log", config,
                  {"step", "loss", "eval_kl", "wallclock_ms"});
    for (const auto& r : result.log) {
      log.row({std::to_string(r.step), num(r.loss), r.has_eval ? num(r.eval_kl) : "",
               num(wallclock(config, r.wallclock_ms))});
    }
  }
  const ExactDistribution q = data.exact();
  CsvWriter table(out / "teacher_kl_vs_k.csv", "teacher_kl_vs_k", config,
                  {"k", "teacher_kl", "oracle_kl"});
  for (int k : config.eval.table_ks) {
    const double tkl =
        kl(q, exact_chain_distribution(chain_model(result.model), process, data.seq_len(), k));
    const double okl = kl(q, factorized_oracle_chain(q, process, k));
    table.row({std::to_string(k), num(tkl), num(okl)});
    std::cout << "k=" << k << " teacher_kl=" << num(tkl) << " oracle_kl=" << num(okl) << "\n";
  }
  return kExitOk;
}

// Log rows of an earlier interrupted run that precede `step`.
std::vector<std::string> earlier_rows(const fs::path& path, std::uint64_t step) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (++n <= 2) continue;  // comment and column header
    std::uint64_t s = 0;
    const auto res = std::from_chars(line.data(), line.data() + line.size(), s);
    if (res.ec == std::errc() && s < step) rows.push_back(line);
  }
  return rows;
}

int cmd_distill(const Options& opt) {
  const ExperimentConfig config = load_config(opt);
  if (opt.teacher.empty()) throw ConfigError("<cli>", 0, "distill needs --teacher PATH");
  const fs::path out = prepare_out(config);
  const SyntheticDataset data = config.make_dataset();
  const DiffusionProcess process = config.make_process();
  const Denoiser teacher = load_teacher(opt.teacher, config);
  const auto tags = artifact_tags(config);

  DistillState state = [&]() {
    if (opt.resume.empty()) {
      return init_distill_state(teacher, config.distill.noise_width,
                                Rng(config.seed).split(kDistillStream),
                                config.distill.noise_init_scale);
    }
    const Checkpoint ckpt = read_checkpoint(opt.resume);
    if (ckpt.header.count("config_hash") == 0 || ckpt.get("config_hash") != config.hash()) {
      throw IncompatibleArtifact(opt.resume + ": state was written under a different config");
    }
    return distill_state_from_checkpoint(ckpt);
  }();
  const std::uint64_t start_step = state.step;
  info("distilling from step " + std::to_string(start_step) + " to " +
       std::to_string(config.distill.steps) + ", config " + config.hash());

  const fs::path state_path = out / "distill_state.ckpt";
  DistillRunOptions run;
  run.steps = config.distill.steps;
  run.stop_at = opt.stop_after;
  run.log_every = config.distill.log_every;
  run.eval_every = config.distill.eval_every;
  run.eval_noise_draws = config.eval.noise_draws;
  const int save_every = config.distill.save_state_every;
  run.after_step = [&](const DistillState& s) {
    if (save_every > 0 && s.step % static_cast<std::uint64_t>(save_every) == 0) {
      write_checkpoint(state_path, distill_state_checkpoint(s, tags));
    }
    if (s.step % 1000 == 0) debug("step " + std::to_string(s.step));
  };

  std::vector<DistillLogRow> rows;
  std::optional<NumericalError> failure;
  try {
    rows = run_distillation(state, teacher, data, process, config.distill.algo, run);
  } catch (const NumericalError& e) {
    failure = e;
  }

  {
    const auto previous = start_step > 0 ? earlier_rows(out / "distill_log.csv", start_step)
                                         : std::vector<std::string>{};
    CsvWriter log(out / "distill_log.csv", "distill_log", config,
                  {"step", "phase", "loss", "gen_output_entropy", "eval_kl", "wallclock_ms"});
    for (const auto& line : previous) log.raw(line);
    for (const auto& r : rows) {
      log.row({std::to_string(r.step), to_string(r.phase), num(r.loss),
               num(r.gen_output_entropy), r.has_eval ? num(r.eval_kl) : "",
               num(wallclock(config, r.wallclock_ms))});
    }
  }
  if (failure) throw *failure;
  write_checkpoint(state_path, distill_state_checkpoint(state, tags));
  if (state.step < config.distill.steps) {
    info("stopped at step " + std::to_string(state.step) + "; resume with --resume " +
         state_path.string());
    return kExitOk;
  }

  write_checkpoint(out / "generator.ckpt",
                   model_checkpoint("generator", state.generator.config(),
                                    state.generator.params(), tags));
  write_checkpoint(out / "auxiliary.ckpt",
                   model_checkpoint("auxiliary", state.auxiliary.config(),
                                    state.auxiliary.params(), tags));

  const ExactDistribution q = data.exact();
  const std::uint64_t noise_seed = Rng(config.seed).split(kChainNoiseStream).next_u64();
  CsvWriter table(out / "distill_kl_vs_k.csv", "distill_kl_vs_k", config,
                  {"k", "teacher_kl", "student_kl"});
  for (int k : config.eval.table_ks) {
    const double tkl =
        kl(q, exact_chain_distribution(chain_model(teacher), process, data.seq_len(), k));
    const double skl = kl(q, exact_chain_distribution(
                                 chain_model(state.generator, config.eval.noise_draws, noise_seed),
                                 process, data.seq_len(), k));
    table.row({std::to_string(k), num(tkl), num(skl)});
    std::cout << "k=" << k << " teacher_kl=" << num(tkl) << " student_kl=" << num(skl) << "\n";
    if (k == config.distill.algo.k) std::cout << "final_kl=" << num(skl) << "\n";
  }
  return kExitOk;
}

int cmd_sample(const Options& opt) {
  const ExperimentConfig config = load_config(opt);
  const fs::path out = prepare_out(config);
  std::optional<Checkpoint> ckpt;
  if (!opt.checkpoint.empty()) ckpt = read_checkpoint(opt.checkpoint);
  const EvalSampler sampler = make_sampler(config, ckpt ? &*ckpt : nullptr);
  Rng rng = Rng(config.seed).split(kSampleStream);
  const TokenBatch samples = sampler.sample(config.eval.samples, rng);
  std::vector<std::string> cols;
  for (std::size_t d = 0; d < samples.positions(); ++d) cols.push_back("x" + std::to_string(d));
  CsvWriter csv(out / "samples.csv", "samples", config, cols);
  for (std::size_t b = 0; b < samples.batch(); ++b) {
    std::vector<std::string> cells;
    for (int tok : samples.sequence(b)) cells.push_back(std::to_string(tok));
    csv.row(cells);
  }
  info("wrote " + std::to_string(samples.batch()) + " samples");
  return kExitOk;
}

std::vector<std::string> requested_metrics(const Options& opt, const ExperimentConfig& config) {
  if (opt.metrics.empty()) return config.eval.metrics;
  ExperimentConfig probe = config;
  std::string joined;
  for (const auto& m : opt.metrics) joined += (joined.empty() ? "" : " ") + m;
  probe.set("eval.metrics", joined);
  return probe.eval.metrics;
}

nlohmann::json record_json(const MetricRecord& r, const ExperimentConfig& config) {
  nlohmann::json j;
  j["metric"] = r.metric;
  j["value"] = r.value;
  if (r.stderr_) j["stderr"] = *r.stderr_;
  j["config_hash"] = config.hash();
  j["seed"] = config.seed;
  j["sampler"] = config.eval.sampler;
  j["k"] = config.eval.k;
  return j;
}

int cmd_eval(const Options& opt) {
  const ExperimentConfig config = load_config(opt);
  const auto metrics = requested_metrics(opt, config);
  const fs::path out = prepare_out(config);
  std::optional<Checkpoint> ckpt;
  if (!opt.checkpoint.empty()) ckpt = read_checkpoint(opt.checkpoint);
  const auto records = evaluate_metrics(config, ckpt ? &*ckpt : nullptr, metrics);
  nlohmann::json report = nlohmann::json::array();
  for (const auto& r : records) report.push_back(record_json(r, config));
  std::ofstream(out / "metrics.json", std::ios::trunc) << report.dump(2) << "\n";
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

int cmd_sweep(const Options& opt) {
  static const std::vector<std::string> kSweepable{"eval.k", "eval.temperature", "eval.top_p"};
  ExperimentConfig config = load_config(opt);
  if (std::find(kSweepable.begin(), kSweepable.end(), opt.axis) == kSweepable.end()) {
    throw ConfigError("<cli>", 0, "axis '" + opt.axis +
                                      "' is not sweepable (eval.k, eval.temperature, eval.top_p)");
  }
  if (opt.values.empty()) throw ConfigError("<cli>", 0, "sweep needs --values");
  const auto metrics = requested_metrics(opt, config);
  const fs::path out = prepare_out(config);
  std::optional<Checkpoint> ckpt;
  if (!opt.checkpoint.empty()) ckpt = read_checkpoint(opt.checkpoint);

  std::vector<std::string> cols{opt.axis};
  for (const auto& m : metrics) {
    cols.push_back(m);
    cols.push_back(m + "_stderr");
  }
  CsvWriter csv(out / "sweep.csv", "sweep", config, cols);
  for (const auto& v : opt.values) {
    ExperimentConfig point = config;
    point.set(opt.axis, v);
    info("sweep " + opt.axis + " = " + v);
    const auto records = evaluate_metrics(point, ckpt ? &*ckpt : nullptr, metrics);
    std::vector<std::string> cells{v};
    for (const auto& r : records) {
      cells.push_back(num(r.value));
      cells.push_back(r.stderr_ ? num(*r.stderr_) : "");
    }
    csv.row(cells);
  }
  return kExitOk;
}

}  // namespace

ExactDistribution corrupted_distribution(const ExactDistribution& q, double c) {
  ExactDistribution out(q.vocab(), q.positions());
  const double keep = 1.0 - c;
  const double other = c / q.vocab();
  for (std::size_t y = 0; y < q.outcomes(); ++y) {
    const auto ys = q.decode(y);
    double acc = 0.0;
    for (std::size_t x = 0; x < q.outcomes(); ++x) {
      if (q[x] == 0.0) continue;
      const auto xs = q.decode(x);
      double p = q[x];
      for (std::size_t d = 0; d < xs.size(); ++d) p *= (xs[d] == ys[d] ? keep : 0.0) + other;
      acc += p;
    }
    out[y] = acc;
  }
  return out;
}

std::vector<MetricRecord> evaluate_metrics(const ExperimentConfig& config,
                                           const Checkpoint* checkpoint,
                                           const std::vector<std::string>& metrics) {
  const SyntheticDataset data = config.make_dataset();
  const DiffusionProcess process = config.make_process();
  const ExactDistribution q = data.exact();
  const EvalSampler sampler = make_sampler(config, checkpoint);
  const Rng base = Rng(config.seed).split(kEvalStream);

  std::optional<ReferenceModel> ref;
  auto reference = [&]() -> const ReferenceModel& {
    if (!ref) {
      ref.emplace(data.vocab(), data.seq_len());
      Rng rng = Rng(config.seed).split(kReferenceStream);
      ref->train([&data](std::size_t n, Rng& r) { return data.sample(n, r); },
                 config.reference.steps, config.reference.batch,
                 AdamConfig{.lr = config.reference.lr}, rng);
    }
    return *ref;
  };

  std::vector<MetricRecord> records;
  for (const auto& name : metrics) {
    Rng rng = base.split(metric_stream(name));
    MetricRecord r{name, 0.0, std::nullopt};
    if (name == "kl") {
      r.value = kl(q, sampler.exact);
    } else if (name == "oracle_kl") {
      r.value = kl(q, factorized_oracle_chain(q, process, config.eval.k));
    } else if (name == "gm") {
      GradientMomentOptions o;
      o.batch_size = config.eval.gm_batch;
      o.n_pairs = config.eval.gm_pairs;
      const auto gm = gradient_moment(
          reference(), sampler.sample, [&data](std::size_t n, Rng& x) { return data.sample(n, x); },
          o, rng);
      if (gm.ref_unconverged) {
        info("warning: reference model not converged (data gradient norm " +
             num(gm.data_grad_norm) + "); gradient moment is centered but less reliable");
      }
      r.value = gm.estimate;
      r.stderr_ = gm.stderr_;
    } else if (name == "perplexity") {
      const TokenBatch s = sampler.sample(config.eval.samples, rng);
      const auto& model = reference();
      const double d = static_cast<double>(s.positions());
      double mean = 0.0, sq = 0.0;
      for (std::size_t b = 0; b < s.batch(); ++b) {
        const double nll = -model.log_prob(s.sequence(b)) / d;
        mean += nll;
        sq += nll * nll;
      }
      const double n = static_cast<double>(s.batch());
      mean /= n;
      const double var = std::max(0.0, sq / n - mean * mean) * n / std::max(1.0, n - 1.0);
      r.value = std::exp(mean);
      r.stderr_ = r.value * std::sqrt(var / n);
    } else if (name == "sample_entropy") {
      const TokenBatch s = sampler.sample(config.eval.samples, rng);
      r.value = sample_entropy(s, data.vocab());
      std::vector<double> p(static_cast<std::size_t>(data.vocab()), 0.0);
      for (std::size_t i = 0; i < s.size(); ++i) p[static_cast<std::size_t>(s[i])] += 1.0;
      double m2 = 0.0;
      for (auto& v : p) {
        v /= static_cast<double>(s.size());
        if (v > 0.0) m2 += v * std::log(v) * std::log(v);
      }
      r.stderr_ = std::sqrt(std::max(0.0, m2 - r.value * r.value) / static_cast<double>(s.size()));
    } else if (name == "gen_entropy") {
      if (sampler.generator) {
        r.value = generator_output_entropy(*sampler.generator, process,
                                           config.eval.entropy_probes, rng);
      } else if (sampler.teacher) {
        r.value = generator_output_entropy(*sampler.teacher, process, config.eval.entropy_probes,
                                           rng);
      } else {
        throw ConfigError("<cli>", 0, "metric 'gen_entropy' needs a model sampler");
      }
    } else {
      throw ConfigError("<cli>", 0, "unknown metric '" + name + "'");
    }
    records.push_back(r);
  }
  return records;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"ddlab: discrete diffusion distillation lab"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  std::string out;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "experiment config file")->required();
    sub->add_option("--seed", seed, "override experiment.seed");
    sub->add_option("--out", out, "override experiment.out_dir");
  };
  auto* train = app.add_subcommand("train-teacher", "train a teacher denoiser");
  common(train);
  auto* distill = app.add_subcommand("distill", "distill a few-step generator");
  common(distill);
  distill->add_option("--teacher", opt.teacher, "teacher checkpoint")->required();
  distill->add_option("--resume", opt.resume, "distill state checkpoint to continue from");
  distill->add_option("--stop-after", opt.stop_after, "stop (and save state) at this step");
  auto* sample = app.add_subcommand("sample", "draw samples to CSV");
  common(sample);
  sample->add_option("--checkpoint", opt.checkpoint, "teacher or generator checkpoint");
  sample->add_option("--sampler", opt.sampler, "model|data|uniform|corrupted");
  auto* eval = app.add_subcommand("eval", "evaluate metrics to JSON");
  common(eval);
  eval->add_option("--checkpoint", opt.checkpoint, "teacher or generator checkpoint");
  eval->add_option("--metrics", opt.metrics, "metric names")->delimiter(',');
  eval->add_option("--sampler", opt.sampler, "model|data|uniform|corrupted");
  auto* sweep = app.add_subcommand("sweep", "evaluate metrics over one config axis");
  common(sweep);
  sweep->add_option("--checkpoint", opt.checkpoint, "teacher or generator checkpoint");
  sweep->add_option("--axis", opt.axis, "eval.k | eval.temperature | eval.top_p")->required();
  sweep->add_option("--values", opt.values, "values to sweep")->required()->delimiter(',');
  sweep->add_option("--metrics", opt.metrics, "metric names")->delimiter(',');
  sweep->add_option("--sampler", opt.sampler, "model|data|uniform|corrupted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  for (auto* sub : {train, distill, sample, eval, sweep}) {
    if (sub->parsed()) {
      if (sub->count("--seed")) opt.seed = seed;
      if (sub->count("--out")) opt.out = out;
    }
  }

  try {
    if (train->parsed()) return cmd_train_teacher(opt);
    if (distill->parsed()) return cmd_distill(opt);
    if (sample->parsed()) return cmd_sample(opt);
    if (eval->parsed()) return cmd_eval(opt);
    if (sweep->parsed()) return cmd_sweep(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IncompatibleArtifact& e) {
    std::cerr << "incompatible artifact: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const NumericalError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace ddlab
