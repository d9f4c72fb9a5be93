// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>

#include "knnmt/ivf.hpp"
#include "knnmt/model/checkpoint.hpp"
#include "toml.hpp"

namespace knnmt {

namespace fs = std::filesystem;

ExperimentConfig::ExperimentConfig() {
  base_train.max_steps = 2000;
  adapter_train.max_steps = 1000;
  adapter_train.lr_peak = 1e-3;
  adapter_train.dropout = 0.0;
  adapter_train.label_smoothing = 0.0;
  finetune.max_steps = 300;
  finetune.lr_peak = 2e-4;
  finetune.warmup_steps = 50;
  finetune.dropout = 0.0;
}

bool ExperimentConfig::has(const std::string& baseline) const {
  return std::find(baselines.begin(), baselines.end(), baseline) != baselines.end();
}

void ExperimentConfig::validate() const {
  ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = 1;
  m.validate();
  base_train.validate();
  adapter_train.validate();
  finetune.validate();
  knn.validate();
  if (index.nlist < 1) throw ConfigError("index.nlist must be >= 1");
  if (knn.nprobe > index.nlist) throw ConfigError("knn.nprobe must not exceed index.nlist");
  if (index.kmeans_iters < 0) throw ConfigError("index.kmeans_iters must be >= 0");
  if (beam < 1 || beam > 4) throw ConfigError("beam must lie in [1, 4]");
  if (lambda_grid.empty()) throw ConfigError("lambda_grid must not be empty");
  for (double l : lambda_grid)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambda_grid values must lie in [0, 1]");
  if (baselines.empty()) throw ConfigError("baselines must not be empty");
  for (const auto& b : baselines)
    if (std::find(all_baselines().begin(), all_baselines().end(), b) == all_baselines().end())
      throw ConfigError("unknown baseline '" + b + "'");
  if (data.min_len < 1 || data.max_len < data.min_len) throw ConfigError("data length range is invalid");
  if (data.general_pairs == 0) throw ConfigError("data.general_pairs must be >= 1");
  if (data.in_domain_mono == 0 || data.dev == 0 || data.test == 0)
    throw ConfigError("in-domain corpus sizes must be >= 1");
  if (!(data.alt_weight >= 0.0) ||
      data.alt_weight * static_cast<double>(data.synthetic.in_domains.size()) >= 1.0)
    throw ConfigError("data.alt_weight times the number of in-domains must be < 1");
  if (data.synthetic.in_domains.empty() && data.domains_file.empty())
    throw ConfigError("at least one in-domain is required");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

std::uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage) {
  return derive_seed(cfg.seed, stage);
}

// ---------------------------------------------------------------- config text

namespace {

class Reader {
 public:
  Reader(const toml::table& root, std::string origin) : root_(root), origin_(std::move(origin)) {}

  const toml::table* section(const std::string& name) {
    seen_sections_.insert(name);
    const auto* node = root_.get(name);
    if (!node) return nullptr;
    const auto* t = node->as_table();
    if (!t) throw ConfigError(origin_ + ": [" + name + "] must be a table");
    return t;
  }

  template <typename T>
  void get(const toml::table* t, const std::string& sec, const std::string& key, T& out) {
    seen_keys_.insert(sec + "." + key);
    if (!t) return;
    const auto* node = t->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value<bool>();
      if (!v) throw bad(sec, key, "a boolean");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = node->value<std::int64_t>();
      if (!v || *v < 0) throw bad(sec, key, "a non-negative integer");
      out = static_cast<T>(*v);
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v) throw bad(sec, key, "a number");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = node->value<std::string>();
      if (!v) throw bad(sec, key, "a string");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      const auto* arr = node->as_array();
      if (!arr) throw bad(sec, key, "an array of strings");
      out.clear();
      for (const auto& e : *arr) {
        auto v = e.value<std::string>();
        if (!v) throw bad(sec, key, "an array of strings");
        out.push_back(*v);
      }
    } else {
      const auto* arr = node->as_array();
      if (!arr) throw bad(sec, key, "an array of numbers");
      out.clear();
      for (const auto& e : *arr) {
        auto v = e.value<double>();
        if (!v) throw bad(sec, key, "an array of numbers");
        out.push_back(*v);
      }
    }
  }

  void reject_unknown() const {
    for (const auto& [k, node] : root_) {
      const std::string sec(k);
      if (!node.is_table()) {
        if (!seen_keys_.count("." + sec)) throw ConfigError(origin_ + ": unknown key '" + sec + "'");
        continue;
      }
      if (!seen_sections_.count(sec)) throw ConfigError(origin_ + ": unknown section [" + sec + "]");
      for (const auto& [kk, _] : *node.as_table()) {
        if (!seen_keys_.count(sec + "." + std::string(kk)))
          throw ConfigError(origin_ + ": unknown key '" + std::string(kk) + "' in [" + sec + "]");
      }
    }
  }

 private:
  ConfigError bad(const std::string& sec, const std::string& key, const std::string& what) const {
    return ConfigError(origin_ + ": " + (sec.empty() ? key : sec + "." + key) + " must be " + what);
  }

  const toml::table& root_;
  std::string origin_;
  std::set<std::string> seen_sections_;
  std::set<std::string> seen_keys_;
};

void read_train(Reader& r, const std::string& name, TrainConfig& t) {
  const auto* s = r.section(name);
  r.get(s, name, "batch_tokens", t.batch_tokens);
  r.get(s, name, "max_steps", t.max_steps);
  r.get(s, name, "lr_peak", t.lr_peak);
  r.get(s, name, "warmup_steps", t.warmup_steps);
  r.get(s, name, "grad_clip", t.grad_clip);
  r.get(s, name, "dropout", t.dropout);
  r.get(s, name, "label_smoothing", t.label_smoothing);
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

void write_train(std::ostream& os, const std::string& name, const TrainConfig& t) {
  os << "\n[" << name << "]\n"
     << "batch_tokens = " << t.batch_tokens << "\n"
     << "max_steps = " << t.max_steps << "\n"
     << "lr_peak = " << num(t.lr_peak) << "\n"
     << "warmup_steps = " << t.warmup_steps << "\n"
     << "grad_clip = " << num(t.grad_clip) << "\n"
     << "dropout = " << num(t.dropout) << "\n"
     << "label_smoothing = " << num(t.label_smoothing) << "\n";
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& origin) {
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ": " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(os.str());
  }
  ExperimentConfig cfg;
  Reader r(root, origin);
  {
    const auto* top = &root;
    r.get(top, "", "seed", cfg.seed);
    r.get(top, "", "out_dir", cfg.out_dir);
    r.get(top, "", "baselines", cfg.baselines);
    r.get(top, "", "lambda_grid", cfg.lambda_grid);
    r.get(top, "", "beam", cfg.beam);
  }
  {
    const auto* s = r.section("data");
    auto& d = cfg.data;
    r.get(s, "data", "general_pairs", d.general_pairs);
    r.get(s, "data", "general_dev", d.general_dev);
    r.get(s, "data", "in_domain_mono", d.in_domain_mono);
    r.get(s, "data", "dev", d.dev);
    r.get(s, "data", "test", d.test);
    r.get(s, "data", "min_len", d.min_len);
    r.get(s, "data", "max_len", d.max_len);
    r.get(s, "data", "alt_weight", d.alt_weight);
    r.get(s, "data", "domains_file", d.domains_file);
    r.get(s, "data", "n_content_words", d.synthetic.n_content_words);
    r.get(s, "data", "n_ambiguous", d.synthetic.n_ambiguous);
    r.get(s, "data", "in_domain_content_words", d.synthetic.in_domain_content_words);
    r.get(s, "data", "reorder_window", d.synthetic.reorder_window);
    r.get(s, "data", "general_ambiguous_rate", d.synthetic.general_ambiguous_rate);
    r.get(s, "data", "in_domain_ambiguous_rate", d.synthetic.in_domain_ambiguous_rate);
    r.get(s, "data", "cognate_rate", d.synthetic.cognate_rate);
    r.get(s, "data", "in_domains", d.synthetic.in_domains);
  }
  {
    const auto* s = r.section("model");
    auto& m = cfg.model;
    std::string sites = to_string(m.adapter_sites);
    r.get(s, "model", "d_model", m.d_model);
    r.get(s, "model", "n_heads", m.n_heads);
    r.get(s, "model", "n_enc_layers", m.n_enc_layers);
    r.get(s, "model", "n_dec_layers", m.n_dec_layers);
    r.get(s, "model", "d_ff", m.d_ff);
    r.get(s, "model", "adapter_hidden", m.adapter_hidden);
    r.get(s, "model", "adapter_sites", sites);
    r.get(s, "model", "max_len", m.max_len);
    m.adapter_sites = adapter_sites_from_string(sites);
  }
  read_train(r, "train", cfg.base_train);
  read_train(r, "adapters", cfg.adapter_train);
  read_train(r, "finetune", cfg.finetune);
  {
    const auto* s = r.section("knn");
    r.get(s, "knn", "k", cfg.knn.k);
    r.get(s, "knn", "temperature", cfg.knn.temperature);
    r.get(s, "knn", "lambda", cfg.knn.lambda);
    r.get(s, "knn", "nprobe", cfg.knn.nprobe);
  }
  {
    const auto* s = r.section("index");
    r.get(s, "index", "nlist", cfg.index.nlist);
    r.get(s, "index", "kmeans_iters", cfg.index.kmeans_iters);
  }
  r.reject_unknown();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_experiment_config(ss.str(), path.string());
}

std::string to_toml(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "# Effective experiment configuration.\n"
     << "seed = " << c.seed << "\n"
     << "out_dir = " << quoted(c.out_dir) << "\n"
     << "baselines = [";
  for (std::size_t i = 0; i < c.baselines.size(); ++i) os << (i ? ", " : "") << quoted(c.baselines[i]);
  os << "]\n"
     << "# Tuned on in-domain dev BLEU; ties go to the smaller value.\n"
     << "lambda_grid = [";
  for (std::size_t i = 0; i < c.lambda_grid.size(); ++i) os << (i ? ", " : "") << num(c.lambda_grid[i]);
  os << "]\n"
     << "beam = " << c.beam << "\n";
  const auto& d = c.data;
  os << "\n[data]\n"
     << "general_pairs = " << d.general_pairs << "\n"
     << "general_dev = " << d.general_dev << "\n"
     << "in_domain_mono = " << d.in_domain_mono << "\n"
     << "dev = " << d.dev << "\n"
     << "test = " << d.test << "\n"
     << "min_len = " << d.min_len << "\n"
     << "max_len = " << d.max_len << "\n"
     << "alt_weight = " << num(d.alt_weight) << "\n"
     << "domains_file = " << quoted(d.domains_file) << "\n"
     << "n_content_words = " << d.synthetic.n_content_words << "\n"
     << "n_ambiguous = " << d.synthetic.n_ambiguous << "\n"
     << "in_domain_content_words = " << d.synthetic.in_domain_content_words << "\n"
     << "reorder_window = " << d.synthetic.reorder_window << "\n"
     << "general_ambiguous_rate = " << num(d.synthetic.general_ambiguous_rate) << "\n"
     << "in_domain_ambiguous_rate = " << num(d.synthetic.in_domain_ambiguous_rate) << "\n"
     << "cognate_rate = " << num(d.synthetic.cognate_rate) << "\n"
     << "in_domains = [";
  for (std::size_t i = 0; i < d.synthetic.in_domains.size(); ++i)
    os << (i ? ", " : "") << quoted(d.synthetic.in_domains[i]);
  os << "]\n";
  const auto& m = c.model;
  os << "\n[model]\n"
     << "d_model = " << m.d_model << "\n"
     << "n_heads = " << m.n_heads << "\n"
     << "n_enc_layers = " << m.n_enc_layers << "\n"
     << "n_dec_layers = " << m.n_dec_layers << "\n"
     << "d_ff = " << m.d_ff << "\n"
     << "adapter_hidden = " << m.adapter_hidden << "  # reference: 1024, equal to d_model\n"
     << "adapter_sites = " << quoted(to_string(m.adapter_sites))
     << "  # reference: embedding and every encoder layer\n"
     << "max_len = " << m.max_len << "\n";
  write_train(os, "train", c.base_train);
  write_train(os, "adapters", c.adapter_train);
  write_train(os, "finetune", c.finetune);
  os << "\n[knn]\n"
     << "k = " << c.knn.k << "  # reference: 16\n"
     << "temperature = " << num(c.knn.temperature) << "  # reference: 4, or 40 for the most distant domain\n"
     << "lambda = " << num(c.knn.lambda) << "  # tuned per domain on dev\n"
     << "nprobe = " << c.knn.nprobe << "  # reference: 32\n"
     << "\n[index]\n"
     << "nlist = " << c.index.nlist << "  # reference: 4096\n"
     << "kmeans_iters = " << c.index.kmeans_iters << "\n";
  return os.str();
}

// ---------------------------------------------------------------- data

namespace {

std::vector<std::string> in_domain_names(const std::vector<DomainSpec>& specs) {
  std::vector<std::string> names;
  for (const auto& s : specs) {
    if (s.name == "general") continue;
    if (s.name.size() > 4 && s.name.compare(s.name.size() - 4, 4, "-alt") == 0) continue;
    names.push_back(s.name);
  }
  return names;
}

const DomainSpec* find_optional(const std::vector<DomainSpec>& specs, const std::string& name) {
  for (const auto& s : specs)
    if (s.name == name) return &s;
  return nullptr;
}

}  // namespace

ExperimentData generate_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  ExperimentData out;
  out.domains = d.domains_file.empty() ? make_synthetic_domains(d.synthetic, stage_seed(cfg, "domains"))
                                       : load_domain_specs(d.domains_file);
  out.in_domains = d.domains_file.empty() ? d.synthetic.in_domains : in_domain_names(out.domains);
  const DomainSpec& general = find_domain(out.domains, "general");

  std::vector<std::pair<const DomainSpec*, double>> mixture;
  double alt_total = 0.0;
  for (const auto& name : out.in_domains) {
    const auto* alt = find_optional(out.domains, name + "-alt");
    if (alt && d.alt_weight > 0.0) {
      mixture.emplace_back(alt, d.alt_weight);
      alt_total += d.alt_weight;
    }
  }
  mixture.insert(mixture.begin(), {&general, 1.0 - alt_total});

  const auto general_train = generate_mixture_corpus(mixture, d.general_pairs, d.min_len, d.max_len,
                                                     stage_seed(cfg, "data.general.train"));
  const auto general_dev = generate_mixture_corpus(mixture, d.general_dev, d.min_len, d.max_len,
                                                   stage_seed(cfg, "data.general.dev"));
  std::map<std::string, std::vector<TextPair>> mono, dev, test;
  for (const auto& name : out.in_domains) {
    const DomainSpec& spec = find_domain(out.domains, name);
    mono[name] = generate_domain_corpus(spec, d.in_domain_mono, d.min_len, d.max_len,
                                        stage_seed(cfg, "data." + name + ".mono"));
    std::set<std::vector<std::string>> taken;
    for (const auto& p : mono[name]) taken.insert(p.target);
    Rng rng(stage_seed(cfg, "data." + name + ".heldout"));
    const std::size_t need = d.dev + d.test;
    std::vector<TextPair> held;
    std::size_t attempts = 0;
    while (held.size() < need) {
      if (++attempts > 100 * need + 1000)
        throw DataError("domain '" + name + "' cannot supply enough held-out sentences disjoint from its monolingual corpus");
      TextPair p = sample_sentence(spec, d.min_len, d.max_len, rng);
      if (!taken.insert(p.target).second) continue;
      held.push_back(std::move(p));
    }
    dev[name].assign(held.begin(), held.begin() + static_cast<std::ptrdiff_t>(d.dev));
    test[name].assign(held.begin() + static_cast<std::ptrdiff_t>(d.dev), held.end());
  }

  std::vector<std::string> lines;
  for (const auto& p : general_train) {
    lines.push_back(join_words(p.source));
    lines.push_back(join_words(p.target));
  }
  for (const auto& [name, pairs] : mono)
    for (const auto& p : pairs) {
      lines.push_back(join_words(p.source));
      lines.push_back(join_words(p.target));
    }
  out.vocab = Vocabulary::build({lines}, 1);
  out.general_train = encode_pairs(out.vocab, general_train);
  out.general_dev = encode_pairs(out.vocab, general_dev);
  for (const auto& name : out.in_domains) {
    out.in_domain_train[name] = encode_pairs(out.vocab, mono[name]);
    out.in_domain_dev[name] = encode_pairs(out.vocab, dev[name]);
    out.in_domain_test[name] = encode_pairs(out.vocab, test[name]);
  }
  return out;
}

void write_data(const fs::path& dir, const ExperimentData& data) {
  fs::create_directories(dir);
  data.vocab.save(dir / "vocab.txt");
  save_domain_specs(dir / "domains.toml", data.domains);
  save_parallel_corpus(dir / "general.train.tsv", data.general_train, data.vocab);
  save_parallel_corpus(dir / "general.dev.tsv", data.general_dev, data.vocab);
  std::ofstream names(dir / "in_domains.txt");
  for (const auto& name : data.in_domains) {
    names << name << '\n';
    save_parallel_corpus(dir / (name + ".train.tsv"), data.in_domain_train.at(name), data.vocab);
    save_lines(dir / (name + ".mono.txt"), targets_of(data.in_domain_train.at(name)), data.vocab);
    save_parallel_corpus(dir / (name + ".dev.tsv"), data.in_domain_dev.at(name), data.vocab);
    save_parallel_corpus(dir / (name + ".test.tsv"), data.in_domain_test.at(name), data.vocab);
  }
}

ExperimentData read_data(const fs::path& dir) {
  ExperimentData data;
  data.vocab = Vocabulary::load(dir / "vocab.txt");
  data.domains = load_domain_specs(dir / "domains.toml");
  data.general_train = load_parallel_corpus(dir / "general.train.tsv", data.vocab);
  data.general_dev = load_parallel_corpus(dir / "general.dev.tsv", data.vocab);
  for (const auto& line : read_lines(dir / "in_domains.txt")) {
    if (line.empty()) continue;
    data.in_domains.push_back(line);
    data.in_domain_train[line] = load_parallel_corpus(dir / (line + ".train.tsv"), data.vocab);
    data.in_domain_dev[line] = load_parallel_corpus(dir / (line + ".dev.tsv"), data.vocab);
    data.in_domain_test[line] = load_parallel_corpus(dir / (line + ".test.tsv"), data.vocab);
  }
  return data;
}

// ---------------------------------------------------------------- experiment

Datastore method_datastore(const std::string& method, const std::vector<SentencePair>& in_domain,
                           const std::vector<SentencePair>& bt_pairs, const DatastoreModels& models) {
  DatastoreModels plain = models;
  plain.adapters = nullptr;
  if (method == "parallel") return build_datastore(in_domain, SourceMode::kParallel, plain);
  if (method == "bt") {
    if (bt_pairs.size() != in_domain.size()) throw DataError("back-translated corpus does not match the monolingual corpus");
    return build_datastore(bt_pairs, SourceMode::kParallel, plain);
  }
  const auto targets = targets_of(in_domain);
  if (method == "empty") return build_datastore(targets, SourceMode::kEmpty, plain);
  if (method == "copy") return build_datastore(targets, SourceMode::kCopy, plain);
  if (method == "uda") {
    if (!models.adapters) throw ConfigError("the uda datastore needs trained adapters");
    return build_datastore(targets, SourceMode::kCopy, models);
  }
  throw ConfigError("no datastore for method '" + method + "'");
}

namespace {

class Stage {
 public:
  Stage(std::ostream* log, std::string name) : log_(log), name_(std::move(name)) {
    if (log_) *log_ << "[stage] " << name_ << std::endl;
  }

  template <typename F>
  auto run(F&& fn) -> decltype(fn()) {
    try {
      return fn();
    } catch (const ConfigError& e) {
      throw ConfigError("stage " + name_ + ": " + e.what());
    } catch (const FormatError& e) {
      throw DataError("stage " + name_ + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("stage " + name_ + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("stage " + name_ + ": " + e.what());
    } catch (const DimensionError& e) {
      throw DimensionError("stage " + name_ + ": " + e.what());
    } catch (const Error& e) {
      throw Error("stage " + name_ + ": " + e.what());
    }
  }

 private:
  std::ostream* log_;
  std::string name_;
};

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

template <typename F>
auto stage(const RunOptions& opts, const std::string& name, F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  auto result = Stage(opts.log, name).run(std::forward<F>(fn));
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (opts.stage_seconds) (*opts.stage_seconds)[name] += s;
  if (opts.log) *opts.log << "[done] " << name << " " << fixed(s, 1) << " s" << std::endl;
  return result;
}

std::vector<TokenSeq> sources_of(const std::vector<SentencePair>& pairs) {
  std::vector<TokenSeq> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.source);
  return out;
}

TransformerWeights<float> cached_model(const fs::path& path, bool resume,
                                       const std::function<TransformerWeights<float>()>& make) {
  if (resume && fs::exists(path)) return load_model(path);
  auto w = make();
  save_model(path, w);
  return w;
}

}  // namespace

ExperimentResults run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path out = cfg.out_dir;
  for (const char* sub : {"data", "models", "stores", "hyps", "logs"}) fs::create_directories(out / sub);
  {
    std::ofstream f(out / "config.toml");
    f << to_toml(cfg);
  }

  const ExperimentData data = stage(opts, "gen-data", [&] {
    if (opts.resume && fs::exists(out / "data" / "in_domains.txt")) return read_data(out / "data");
    auto d = generate_data(cfg);
    write_data(out / "data", d);
    return d;
  });

  ModelConfig mc = cfg.model;
  mc.vocab_size = static_cast<int>(data.vocab.size());

  auto train_with_log = [&](const std::string& name, const std::function<TransformerWeights<float>(TrainLog*)>& fn) {
    std::ofstream metrics(out / "logs" / (name + ".tsv"));
    metrics << "step\tloss\tlr\ttokens_per_sec\n";
    TrainLog log;
    log.metrics = &metrics;
    return fn(&log);
  };

  const Transformer<float> base(stage(opts, "train-base", [&] {
    return cached_model(out / "models" / "base.udak", opts.resume, [&] {
      TrainConfig t = cfg.base_train;
      t.seed = stage_seed(cfg, "train-base");
      return train_with_log("base", [&](TrainLog* l) { return train_base(data.general_train, mc, t, l); });
    });
  }));

  const bool need_reverse = cfg.has("bt") || cfg.has("bt-ft");
  std::optional<Transformer<float>> reverse;
  if (need_reverse) {
    reverse.emplace(stage(opts, "train-reverse", [&] {
      return cached_model(out / "models" / "reverse.udak", opts.resume, [&] {
        TrainConfig t = cfg.base_train;
        t.seed = stage_seed(cfg, "train-reverse");
        return train_with_log("reverse", [&](TrainLog* l) { return train_reverse(data.general_train, mc, t, l); });
      });
    }));
  }

  std::optional<AdapterSet<float>> adapters;
  if (cfg.has("uda")) {
    adapters = stage(opts, "train-adapters", [&] {
      const fs::path path = out / "models" / "adapters.udak";
      if (opts.resume && fs::exists(path)) return load_adapters(path);
      TrainConfig t = cfg.adapter_train;
      t.seed = stage_seed(cfg, "train-adapters");
      std::ofstream metrics(out / "logs" / "adapters.tsv");
      metrics << "step\tloss\tlr\ttokens_per_sec\n";
      TrainLog log;
      log.metrics = &metrics;
      auto a = train_adapters(data.general_train, base.weights(), mc.adapter_sites == AdapterSites::kNone
                                                                       ? AdapterSites::kEncoder
                                                                       : mc.adapter_sites,
                              t, &log);
      save_adapters(path, a);
      return a;
    });
  }

  ExperimentResults res;
  for (const auto& m : all_baselines())
    if (cfg.has(m)) res.methods.push_back(m);
  res.domains = data.in_domains;

  for (const auto& dom : data.in_domains) {
    const auto& mono_pairs = data.in_domain_train.at(dom);
    const auto& dev = data.in_domain_dev.at(dom);
    const auto& test = data.in_domain_test.at(dom);
    const auto mono = targets_of(mono_pairs);
    const auto dev_src = sources_of(dev);
    const auto test_src = sources_of(test);
    const auto test_ref = targets_of(test);
    DecodeOptions dopts;
    dopts.beam = cfg.beam;

    DatastoreModels plain;
    plain.base = &base;
    plain.reverse = reverse ? &*reverse : nullptr;

    std::vector<SentencePair> bt_pairs;
    if (need_reverse) {
      bt_pairs = stage(opts, "backtranslate " + dom, [&] {
        const fs::path path = out / "data" / (dom + ".bt.tsv");
        if (opts.resume && fs::exists(path)) return load_parallel_corpus(path, data.vocab);
        auto pairs = datastore_sources(mono, SourceMode::kBacktranslate, plain);
        save_parallel_corpus(path, pairs, data.vocab);
        return pairs;
      });
    }

    auto write_hyps = [&](const std::string& method, const std::vector<TokenSeq>& hyps) {
      save_lines(out / "hyps" / (dom + "." + method + ".txt"), hyps, data.vocab);
    };

    for (const auto& method : res.methods) {
      stage(opts, "evaluate " + dom + " " + method, [&] {
        if (method == "basic" || method == "bt-ft") {
          std::optional<Transformer<float>> tuned;
          if (method == "bt-ft") {
            tuned.emplace(cached_model(out / "models" / (dom + ".btft.udak"), opts.resume, [&] {
              TrainConfig t = cfg.finetune;
              t.seed = stage_seed(cfg, "finetune." + dom);
              return train_with_log(dom + ".btft", [&](TrainLog* l) {
                return fine_tune_full(bt_pairs, base.weights(), t, l);
              });
            }));
            FinetuneRow row;
            row.domain = dom;
            row.base_in_domain = mean_xent(base, dev);
            row.tuned_in_domain = mean_xent(*tuned, dev);
            row.base_general = mean_xent(base, data.general_dev);
            row.tuned_general = mean_xent(*tuned, data.general_dev);
            res.finetune.push_back(row);
          }
          const Translator tr(tuned ? *tuned : base, {}, KnnConfig{.lambda = 0.0});
          const auto hyps = tr.translate(test_src, dopts);
          write_hyps(method, hyps);
          res.bleu[method][dom] = corpus_bleu(hyps, test_ref);
          res.lambda[method][dom] = 0.0;
          return 0;
        }

        const fs::path store_path = out / "stores" / (dom + "." + method + ".udkd");
        const fs::path index_path = out / "stores" / (dom + "." + method + ".udki");
        Datastore store;
        if (opts.resume && fs::exists(store_path)) {
          store = load_datastore(store_path);
        } else {
          DatastoreModels with = plain;
          with.adapters = adapters ? &*adapters : nullptr;
          store = method_datastore(method, mono_pairs, bt_pairs, with);
          save_datastore(store_path, store);
        }
        IvfIndex index;
        if (opts.resume && fs::exists(index_path)) {
          index = load_index(index_path);
        } else {
          const int nlist = std::min<int>(cfg.index.nlist, static_cast<int>(store.size()));
          index = build_ivf(store, nlist, cfg.index.kmeans_iters, stage_seed(cfg, "index." + dom + "." + method));
          save_index(index_path, index);
        }
        auto system = [&](double lambda, const std::vector<TokenSeq>& src) {
          KnnConfig k = cfg.knn;
          k.lambda = lambda;
          const Translator tr(base, {&store, &index}, k);
          return tr.translate(src, dopts);
        };
        const LambdaSearch search =
            tune_lambda(dev, [&](double l) { return system(l, dev_src); }, cfg.lambda_grid);
        const auto hyps = system(search.best_lambda, test_src);
        write_hyps(method, hyps);
        res.bleu[method][dom] = corpus_bleu(hyps, test_ref);
        res.lambda[method][dom] = search.best_lambda;
        std::ofstream curve(out / "logs" / (dom + "." + method + ".lambda.tsv"));
        curve << "lambda\tdev_bleu\n";
        for (const auto& [l, b] : search.curve) curve << fixed(l, 2) << '\t' << fixed(b, 4) << '\n';
        return 0;
      });
    }

    stage(opts, "measure-sim " + dom, [&] {
      std::vector<std::pair<std::string, SimilarityMode>> modes{{"copy", SimilarityMode::kCopy}};
      if (adapters) modes.emplace_back("copy+adapters", SimilarityMode::kCopyAdapters);
      if (reverse) modes.emplace_back("backtranslate", SimilarityMode::kBacktranslate);
      modes.emplace_back("empty", SimilarityMode::kEmpty);
      DatastoreModels with = plain;
      with.adapters = adapters ? &*adapters : nullptr;
      for (const auto& [name, mode] : modes)
        res.similarity.push_back({dom, name, measure_similarity(dev, with, mode)});
      return 0;
    });
  }

  auto write = [&](const char* file, const std::string& text) {
    std::ofstream f(out / file);
    f << text;
  };
  write("results.tsv", format_results(res));
  write("lambdas.tsv", format_lambdas(res));
  write("similarity.tsv", format_similarity(res));
  write("finetune.tsv", format_finetune(res));
  write("results.kv", format_key_values(res));
  return res;
}

std::string format_results(const ExperimentResults& r) {
  std::ostringstream os;
  os << "method";
  for (const auto& d : r.domains) os << '\t' << d;
  if (r.domains.size() > 1) os << "\tavg";
  os << '\n';
  for (const auto& m : r.methods) {
    os << m;
    double sum = 0.0;
    for (const auto& d : r.domains) {
      const double b = r.bleu.at(m).at(d);
      sum += b;
      os << '\t' << fixed(b, 2);
    }
    if (r.domains.size() > 1) os << '\t' << fixed(sum / static_cast<double>(r.domains.size()), 2);
    os << '\n';
  }
  return os.str();
}

std::string format_lambdas(const ExperimentResults& r) {
  std::ostringstream os;
  os << "method";
  for (const auto& d : r.domains) os << '\t' << d;
  os << '\n';
  for (const auto& m : r.methods) {
    os << m;
    for (const auto& d : r.domains) os << '\t' << fixed(r.lambda.at(m).at(d), 2);
    os << '\n';
  }
  return os.str();
}

std::string format_similarity(const ExperimentResults& r) {
  std::ostringstream os;
  os << "domain\tmode\tcosine\tsq_euclidean\tpositions\n";
  for (const auto& row : r.similarity)
    os << row.domain << '\t' << row.mode << '\t' << fixed(row.report.mean_cosine, 4) << '\t'
       << fixed(row.report.mean_sq_euclidean, 4) << '\t' << row.report.n_positions << '\n';
  return os.str();
}

std::string format_finetune(const ExperimentResults& r) {
  std::ostringstream os;
  os << "domain\tbase_in_domain_loss\tbtft_in_domain_loss\tbase_general_loss\tbtft_general_loss\n";
  for (const auto& row : r.finetune)
    os << row.domain << '\t' << fixed(row.base_in_domain, 4) << '\t' << fixed(row.tuned_in_domain, 4) << '\t'
       << fixed(row.base_general, 4) << '\t' << fixed(row.tuned_general, 4) << '\n';
  return os.str();
}

std::string format_key_values(const ExperimentResults& r) {
  std::ostringstream os;
  auto kv = [&](const std::string& key, const std::string& value) { os << key << " = " << value << '\n'; };
  for (const auto& m : r.methods)
    for (const auto& d : r.domains) kv("bleu." + m + "." + d, fixed(r.bleu.at(m).at(d), 4));
  for (const auto& m : r.methods)
    for (const auto& d : r.domains) kv("lambda." + m + "." + d, fixed(r.lambda.at(m).at(d), 2));
  for (const auto& row : r.similarity) {
    const std::string p = "similarity." + row.domain + "." + row.mode + ".";
    kv(p + "cosine", fixed(row.report.mean_cosine, 6));
    kv(p + "sq_euclidean", fixed(row.report.mean_sq_euclidean, 6));
    kv(p + "positions", std::to_string(row.report.n_positions));
  }
  for (const auto& row : r.finetune) {
    const std::string p = "finetune." + row.domain + ".";
    kv(p + "base_in_domain_loss", fixed(row.base_in_domain, 6));
    kv(p + "btft_in_domain_loss", fixed(row.tuned_in_domain, 6));
    kv(p + "base_general_loss", fixed(row.base_general, 6));
    kv(p + "btft_general_loss", fixed(row.tuned_general, 6));
  }
  return os.str();
}

}  // namespace knnmt
