#include "ddlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace ddlab {

namespace {

std::string anchor(const std::string& source, int line) {
  return line > 0 ? source + ":" + std::to_string(line) + ": " : source + ": ";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Value conversions. Parsers throw std::invalid_argument with a short reason.

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  return v;
}

long long parse_int(const std::string& s) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

int parse_nonneg_int(const std::string& s) {
  const auto v = parse_int(s);
  if (v < 0 || v > 1'000'000'000) throw std::invalid_argument("out of range: '" + s + "'");
  return static_cast<int>(v);
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true|false, got '" + s + "'");
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& w : split_ws(s)) out.push_back(parse_double(w));
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& w : split_ws(s)) out.push_back(static_cast<int>(parse_int(w)));
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f, const char* sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += f(v[i]);
  }
  return out;
}

std::vector<std::string> split_rows(const std::string& s) {
  std::vector<std::string> rows;
  std::string cur;
  for (char c : s) {
    if (c == ';') {
      rows.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !rows.empty()) rows.push_back(trim(cur));
  return rows;
}

std::string int_str(int v) { return std::to_string(v); }

struct Field {
  std::string name;  // section.key
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::set<std::string> kKnownMetrics{"kl", "gm", "perplexity", "sample_entropy",
                                          "gen_entropy", "oracle_kl"};
const std::set<std::string> kKnownSamplers{"model", "data", "uniform", "corrupted"};

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<Field> table = {
      {"experiment.seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, S v) { c.seed = parse_u64(v); }},
      {"experiment.out_dir", [](const C& c) { return c.out_dir; },
       [](C& c, S v) {
         if (v.empty()) throw std::invalid_argument("empty path");
         c.out_dir = v;
       }},
      {"experiment.record_wallclock",
       [](const C& c) { return std::string(c.record_wallclock ? "true" : "false"); },
       [](C& c, S v) { c.record_wallclock = parse_bool(v); }},

      {"dataset.kind", [](const C& c) { return to_string(c.dataset.kind); },
       [](C& c, S v) { c.dataset.kind = parse_dataset_kind(v); }},
      {"dataset.seq_len", [](const C& c) { return int_str(c.dataset.seq_len); },
       [](C& c, S v) { c.dataset.seq_len = parse_nonneg_int(v); }},
      {"dataset.vocab", [](const C& c) { return int_str(c.dataset.vocab); },
       [](C& c, S v) { c.dataset.vocab = parse_nonneg_int(v); }},
      {"dataset.modes",
       [](const C& c) {
         return join(c.dataset.modes, [](const std::vector<int>& m) { return join(m, int_str); },
                     "; ");
       },
       [](C& c, S v) {
         c.dataset.modes.clear();
         for (const auto& row : split_rows(v)) c.dataset.modes.push_back(parse_ints(row));
       }},
      {"dataset.mode_weights", [](const C& c) { return join(c.dataset.mode_weights, fmt); },
       [](C& c, S v) { c.dataset.mode_weights = parse_doubles(v); }},
      {"dataset.flip_prob", [](const C& c) { return fmt(c.dataset.flip_prob); },
       [](C& c, S v) { c.dataset.flip_prob = parse_double(v); }},
      {"dataset.initial", [](const C& c) { return join(c.dataset.initial, fmt); },
       [](C& c, S v) { c.dataset.initial = parse_doubles(v); }},
      {"dataset.transition",
       [](const C& c) {
         return join(c.dataset.transition,
                     [](const std::vector<double>& r) { return join(r, fmt); }, "; ");
       },
       [](C& c, S v) {
         c.dataset.transition.clear();
         for (const auto& row : split_rows(v)) c.dataset.transition.push_back(parse_doubles(row));
       }},

      {"process.kind", [](const C& c) { return to_string(c.process); },
       [](C& c, S v) { c.process = parse_process_kind(v); }},
      {"process.schedule", [](const C& c) { return to_string(c.schedule); },
       [](C& c, S v) { c.schedule = parse_schedule_kind(v); }},

      {"model.embed_width", [](const C& c) { return int_str(c.model.embed_width); },
       [](C& c, S v) { c.model.embed_width = parse_nonneg_int(v); }},
      {"model.hidden_width", [](const C& c) { return int_str(c.model.hidden_width); },
       [](C& c, S v) { c.model.hidden_width = parse_nonneg_int(v); }},
      {"model.depth", [](const C& c) { return int_str(c.model.depth); },
       [](C& c, S v) { c.model.depth = parse_nonneg_int(v); }},
      {"model.time_width", [](const C& c) { return int_str(c.model.time_width); },
       [](C& c, S v) { c.model.time_width = parse_nonneg_int(v); }},
      {"model.head_init_scale", [](const C& c) { return fmt(c.model.head_init_scale); },
       [](C& c, S v) { c.model.head_init_scale = parse_double(v); }},

      {"teacher.steps", [](const C& c) { return int_str(c.teacher.steps); },
       [](C& c, S v) { c.teacher.steps = parse_nonneg_int(v); }},
      {"teacher.batch", [](const C& c) { return std::to_string(c.teacher.batch); },
       [](C& c, S v) { c.teacher.batch = parse_u64(v); }},
      {"teacher.lr", [](const C& c) { return fmt(c.teacher.lr); },
       [](C& c, S v) { c.teacher.lr = parse_double(v); }},
      {"teacher.weighting", [](const C& c) { return to_string(c.teacher.weighting); },
       [](C& c, S v) { c.teacher.weighting = parse_loss_weighting(v); }},
      {"teacher.eval_every", [](const C& c) { return int_str(c.teacher.eval_every); },
       [](C& c, S v) { c.teacher.eval_every = parse_nonneg_int(v); }},
      {"teacher.eval_k", [](const C& c) { return int_str(c.teacher.eval_k); },
       [](C& c, S v) { c.teacher.eval_k = parse_nonneg_int(v); }},

      {"distill.k", [](const C& c) { return int_str(c.distill.algo.k); },
       [](C& c, S v) { c.distill.algo.k = parse_nonneg_int(v); }},
      {"distill.steps", [](const C& c) { return std::to_string(c.distill.steps); },
       [](C& c, S v) { c.distill.steps = parse_u64(v); }},
      {"distill.temperature", [](const C& c) { return fmt(c.distill.algo.temperature); },
       [](C& c, S v) { c.distill.algo.temperature = parse_double(v); }},
      {"distill.top_p", [](const C& c) { return fmt(c.distill.algo.top_p); },
       [](C& c, S v) { c.distill.algo.top_p = parse_double(v); }},
      {"distill.shift", [](const C& c) { return fmt(c.distill.algo.shift); },
       [](C& c, S v) { c.distill.algo.shift = parse_double(v); }},
      {"distill.soft_target",
       [](const C& c) { return std::string(c.distill.algo.soft_target ? "true" : "false"); },
       [](C& c, S v) { c.distill.algo.soft_target = parse_bool(v); }},
      {"distill.gen_updates", [](const C& c) { return int_str(c.distill.algo.gen_updates); },
       [](C& c, S v) { c.distill.algo.gen_updates = parse_nonneg_int(v); }},
      {"distill.aux_updates", [](const C& c) { return int_str(c.distill.algo.aux_updates); },
       [](C& c, S v) { c.distill.algo.aux_updates = parse_nonneg_int(v); }},
      {"distill.variant", [](const C& c) { return to_string(c.distill.algo.variant); },
       [](C& c, S v) { c.distill.algo.variant = parse_loss_variant(v); }},
      {"distill.weighting", [](const C& c) { return to_string(c.distill.algo.weighting); },
       [](C& c, S v) { c.distill.algo.weighting = parse_loss_weighting(v); }},
      {"distill.ds", [](const C& c) { return fmt(c.distill.algo.ds); },
       [](C& c, S v) { c.distill.algo.ds = parse_double(v); }},
      {"distill.batch", [](const C& c) { return std::to_string(c.distill.algo.batch); },
       [](C& c, S v) { c.distill.algo.batch = parse_u64(v); }},
      {"distill.lr", [](const C& c) { return fmt(c.distill.algo.lr); },
       [](C& c, S v) { c.distill.algo.lr = parse_double(v); }},
      {"distill.gen_lr_scale", [](const C& c) { return fmt(c.distill.algo.gen_lr_scale); },
       [](C& c, S v) { c.distill.algo.gen_lr_scale = parse_double(v); }},
      {"distill.optimizer", [](const C& c) { return to_string(c.distill.algo.optimizer); },
       [](C& c, S v) { c.distill.algo.optimizer = parse_optimizer_kind(v); }},
      {"distill.noise_init_scale", [](const C& c) { return fmt(c.distill.noise_init_scale); },
       [](C& c, S v) { c.distill.noise_init_scale = parse_double(v); }},
      {"distill.lr_schedule", [](const C& c) { return c.distill.lr_schedule; },
       [](C& c, S v) {
         if (v != "constant" && v != "cosine") {
           throw std::invalid_argument("expected constant|cosine, got '" + std::string(v) + "'");
         }
         c.distill.lr_schedule = std::string(v);
       }},
      {"distill.noise_width", [](const C& c) { return int_str(c.distill.noise_width); },
       [](C& c, S v) { c.distill.noise_width = parse_nonneg_int(v); }},
      {"distill.log_every", [](const C& c) { return int_str(c.distill.log_every); },
       [](C& c, S v) { c.distill.log_every = parse_nonneg_int(v); }},
      {"distill.eval_every", [](const C& c) { return int_str(c.distill.eval_every); },
       [](C& c, S v) { c.distill.eval_every = parse_nonneg_int(v); }},
      {"distill.save_state_every", [](const C& c) { return int_str(c.distill.save_state_every); },
       [](C& c, S v) { c.distill.save_state_every = parse_nonneg_int(v); }},
      {"distill.fault_inject_step",
       [](const C& c) { return std::to_string(c.distill.algo.fault_inject_step); },
       [](C& c, S v) { c.distill.algo.fault_inject_step = parse_int(v); }},

      {"eval.k", [](const C& c) { return int_str(c.eval.k); },
       [](C& c, S v) { c.eval.k = parse_nonneg_int(v); }},
      {"eval.temperature", [](const C& c) { return fmt(c.eval.temperature); },
       [](C& c, S v) { c.eval.temperature = parse_double(v); }},
      {"eval.top_p", [](const C& c) { return fmt(c.eval.top_p); },
       [](C& c, S v) { c.eval.top_p = parse_double(v); }},
      {"eval.metrics",
       [](const C& c) { return join(c.eval.metrics, [](const std::string& s) { return s; }); },
       [](C& c, S v) {
         auto names = split_ws(v);
         for (const auto& n : names) {
           if (!kKnownMetrics.count(n)) {
             throw std::invalid_argument(
                 "unknown metric '" + n +
                 "' (known: gen_entropy gm kl oracle_kl perplexity sample_entropy)");
           }
         }
         c.eval.metrics = names;
       }},
      {"eval.sampler", [](const C& c) { return c.eval.sampler; },
       [](C& c, S v) {
         if (!kKnownSamplers.count(v)) {
           throw std::invalid_argument("unknown sampler '" + v +
                                       "' (expected model|data|uniform|corrupted)");
         }
         c.eval.sampler = v;
       }},
      {"eval.corrupt_prob", [](const C& c) { return fmt(c.eval.corrupt_prob); },
       [](C& c, S v) { c.eval.corrupt_prob = parse_double(v); }},
      {"eval.samples", [](const C& c) { return std::to_string(c.eval.samples); },
       [](C& c, S v) { c.eval.samples = parse_u64(v); }},
      {"eval.gm_batch", [](const C& c) { return std::to_string(c.eval.gm_batch); },
       [](C& c, S v) { c.eval.gm_batch = parse_u64(v); }},
      {"eval.gm_pairs", [](const C& c) { return int_str(c.eval.gm_pairs); },
       [](C& c, S v) { c.eval.gm_pairs = parse_nonneg_int(v); }},
      {"eval.noise_draws", [](const C& c) { return int_str(c.eval.noise_draws); },
       [](C& c, S v) { c.eval.noise_draws = parse_nonneg_int(v); }},
      {"eval.entropy_probes", [](const C& c) { return int_str(c.eval.entropy_probes); },
       [](C& c, S v) { c.eval.entropy_probes = parse_nonneg_int(v); }},
      {"eval.table_ks", [](const C& c) { return join(c.eval.table_ks, int_str); },
       [](C& c, S v) { c.eval.table_ks = parse_ints(v); }},

      {"reference.steps", [](const C& c) { return int_str(c.reference.steps); },
       [](C& c, S v) { c.reference.steps = parse_nonneg_int(v); }},
      {"reference.batch", [](const C& c) { return std::to_string(c.reference.batch); },
       [](C& c, S v) { c.reference.batch = parse_u64(v); }},
      {"reference.lr", [](const C& c) { return fmt(c.reference.lr); },
       [](C& c, S v) { c.reference.lr = parse_double(v); }},
  };
  return table;
}

const Field* find_field(const std::string& name) {
  for (const auto& f : fields()) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

const std::vector<std::string> kRequired{"dataset.kind", "dataset.seq_len", "dataset.vocab",
                                         "process.kind"};

// Fills dataset defaults, derives the model shape and validates the whole config.
void finalize(ExperimentConfig& c) {
  auto& d = c.dataset;
  if (d.kind == DatasetKind::mode_mixture && d.modes.empty()) {
    const auto def = SyntheticDataset::default_mode_mixture().spec();
    if (d.seq_len != def.seq_len || d.vocab != def.vocab) {
      throw std::invalid_argument("mode_mixture needs dataset.modes unless seq_len = 3 and vocab = 3");
    }
    d.modes = def.modes;
    if (d.mode_weights.empty()) d.mode_weights = def.mode_weights;
  }
  if (d.kind == DatasetKind::markov_chain && d.transition.empty()) {
    const auto def = SyntheticDataset::default_markov_chain().spec();
    if (d.vocab != def.vocab) {
      throw std::invalid_argument("markov_chain needs dataset.transition unless vocab = 3");
    }
    d.transition = def.transition;
    if (d.initial.empty()) d.initial = def.initial;
  }
  d.validate();
  if (d.seq_len > ExactDistribution::kMaxPositions || d.vocab > ExactDistribution::kMaxVocab) {
    throw std::invalid_argument("dataset must stay enumerable: seq_len <= 4 and vocab <= 4");
  }
  c.model.seq_len = d.seq_len;
  c.model.vocab = d.vocab;
  c.model.has_mask = c.process == ProcessKind::masked;
  c.model.noise_width = 0;
  c.model.validate();
  c.distill.algo.lr_decay_steps = c.distill.lr_schedule == "cosine" ? c.distill.steps : 0;
  c.distill.algo.validate(c.make_process());
  if (!(c.distill.noise_init_scale >= 0.0)) {
    throw std::invalid_argument("distill.noise_init_scale must be >= 0");
  }
  if (c.teacher.batch < 1 || c.reference.batch < 1 || c.eval.gm_batch < 1) {
    throw std::invalid_argument("batch sizes must be >= 1");
  }
  if (c.teacher.lr <= 0.0 || c.reference.lr <= 0.0) {
    throw std::invalid_argument("learning rates must be positive");
  }
  if (c.teacher.eval_k < 1 || c.eval.k < 1) throw std::invalid_argument("k must be >= 1");
  for (int k : c.eval.table_ks) {
    if (k < 1) throw std::invalid_argument("eval.table_ks entries must be >= 1");
  }
  if (!(c.eval.temperature > 0.0) || !(c.eval.top_p > 0.0 && c.eval.top_p <= 1.0)) {
    throw std::invalid_argument("eval.temperature must be > 0 and eval.top_p in (0, 1]");
  }
  if (!(c.eval.corrupt_prob >= 0.0 && c.eval.corrupt_prob <= 1.0)) {
    throw std::invalid_argument("eval.corrupt_prob must be in [0, 1]");
  }
  if (c.eval.gm_pairs < 2) throw std::invalid_argument("eval.gm_pairs must be >= 2");
  if (c.eval.noise_draws < 1 || c.eval.entropy_probes < 1) {
    throw std::invalid_argument("eval.noise_draws and eval.entropy_probes must be >= 1");
  }
}

}  // namespace

ConfigError::ConfigError(const std::string& source, int line, const std::string& message)
    : std::runtime_error(anchor(source, line) + message), line_(line) {}

DiffusionProcess ExperimentConfig::make_process() const {
  return DiffusionProcess(process, dataset.vocab, NoiseSchedule(schedule));
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.name.find('.');
    const auto sec = f.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += f.name.substr(dot + 1) + " = " + f.get(*this) + "\n";
  }
  return out;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::hash() const {
  ExperimentConfig copy = *this;
  copy.out_dir = "-";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(copy.serialize())));
  return buf;
}

void ExperimentConfig::set(const std::string& dotted_key, const std::string& value) {
  const Field* f = find_field(dotted_key);
  if (f == nullptr) throw ConfigError("<override>", 0, "unknown key '" + dotted_key + "'");
  try {
    f->set(*this, value);
    finalize(*this);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("<override>", 0, dotted_key + ": " + e.what());
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& source) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string section;
  std::map<std::string, int> section_lines;
  std::map<std::string, int> seen;
  int line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source, line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(source, line_no, "empty section name");
      section_lines.emplace(section, line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source, line_no, "expected 'key = value', got '" + line + "'");
    }
    if (section.empty()) throw ConfigError(source, line_no, "key outside of any [section]");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError(source, line_no, "unknown key '" + key + "'");
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(source, line_no,
                        "duplicate key '" + key + "' (first set on line " +
                            std::to_string(it->second) + ")");
    }
    seen[key] = line_no;
    try {
      f->set(c, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(source, line_no, key + ": " + e.what());
    }
  }
  for (const auto& req : kRequired) {
    if (!seen.count(req)) {
      const auto sec = req.substr(0, req.find('.'));
      const auto it = section_lines.find(sec);
      throw ConfigError(source, it == section_lines.end() ? 0 : it->second,
                        "missing required field '" + req + "'");
    }
  }
  try {
    finalize(c);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source, 0, e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), 0, "cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

}  // namespace ddlab
