// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "knnmt/ivf.hpp"
#include "knnmt/model/checkpoint.hpp"
#include "knnmt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace knnmt;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Root seed (overrides the config)");
  app->add_option("--config", c.config, "Experiment config file")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Run directory (overrides the config)");
}

ExperimentConfig effective_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.validate();
  return cfg;
}

struct Run {
  ExperimentConfig cfg;
  fs::path dir;

  fs::path data() const { return dir / "data"; }
  fs::path model(const std::string& name) const { return dir / "models" / (name + ".udak"); }
  fs::path store(const std::string& domain, const std::string& method) const {
    return dir / "stores" / (domain + "." + method + ".udkd");
  }
  fs::path index(const std::string& domain, const std::string& method) const {
    return dir / "stores" / (domain + "." + method + ".udki");
  }
};

Run open_run(const Common& c) {
  Run r{effective_config(c), {}};
  r.dir = r.cfg.out_dir;
  for (const char* sub : {"data", "models", "stores", "hyps", "logs"}) fs::create_directories(r.dir / sub);
  return r;
}

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw DataError(p.string() + " not found; run " + hint + " first");
}

ExperimentData load_run_data(const Run& r) {
  require_file(r.data() / "in_domains.txt", "gen-data");
  return read_data(r.data());
}

Transformer<float> load_transformer(const fs::path& p, const std::string& hint) {
  require_file(p, hint);
  return Transformer<float>(load_model(p));
}

const std::vector<SentencePair>& domain_corpus(const std::map<std::string, std::vector<SentencePair>>& m,
                                               const std::string& domain) {
  auto it = m.find(domain);
  if (it == m.end()) throw ConfigError("unknown domain '" + domain + "'");
  return it->second;
}

ModelConfig model_config(const Run& r, const ExperimentData& data) {
  ModelConfig mc = r.cfg.model;
  mc.vocab_size = static_cast<int>(data.vocab.size());
  return mc;
}

void train_to(const Run& r, const std::string& name, const std::function<TransformerWeights<float>(TrainLog*)>& fn) {
  std::ofstream metrics(r.dir / "logs" / (name + ".tsv"));
  metrics << "step\tloss\tlr\ttokens_per_sec\n";
  TrainLog log;
  log.metrics = &metrics;
  save_model(r.model(name), fn(&log));
}

std::vector<SentencePair> bt_corpus(const Run& r, const ExperimentData& data, const std::string& domain,
                                    const Transformer<float>& base) {
  const fs::path path = r.data() / (domain + ".bt.tsv");
  if (fs::exists(path)) return load_parallel_corpus(path, data.vocab);
  const auto reverse = load_transformer(r.model("reverse"), "train-reverse");
  DatastoreModels m;
  m.base = &base;
  m.reverse = &reverse;
  auto pairs = datastore_sources(targets_of(domain_corpus(data.in_domain_train, domain)), SourceMode::kBacktranslate, m);
  save_parallel_corpus(path, pairs, data.vocab);
  return pairs;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct RetrievalArgs {
  std::string domain;
  std::string method;
};

void add_retrieval(CLI::App* app, RetrievalArgs& a, bool required) {
  auto* d = app->add_option("--domain", a.domain, "In-domain name");
  auto* m = app->add_option("--mode", a.method, "Datastore: empty, copy, uda, parallel or bt")
                ->check(CLI::IsMember({"empty", "copy", "uda", "parallel", "bt"}));
  if (required) {
    d->required();
    m->required();
  }
}

int exit_code_for(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const FormatError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kData;
  } catch (const DataError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kData;
  } catch (const NumericError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kNN-MT unsupervised domain adaptation toolkit"};
  app.require_subcommand(1);

  Common common;
  std::function<void()> action;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpora");
  add_common(gen, common);
  gen->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      const auto data = generate_data(r.cfg);
      write_data(r.data(), data);
      std::cout << "vocab\t" << data.vocab.size() << "\ngeneral_train\t" << data.general_train.size() << '\n';
    };
  });

  std::optional<int> steps;
  auto* base = app.add_subcommand("train-base", "Train the forward translation model");
  add_common(base, common);
  base->add_option("--steps", steps, "Override the number of training steps");
  base->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      const auto data = load_run_data(r);
      TrainConfig t = r.cfg.base_train;
      if (steps) t.max_steps = *steps;
      t.seed = stage_seed(r.cfg, "train-base");
      train_to(r, "base", [&](TrainLog* l) { return train_base(data.general_train, model_config(r, data), t, l); });
    };
  });

  auto* rev = app.add_subcommand("train-reverse", "Train the target-to-source model");
  add_common(rev, common);
  rev->add_option("--steps", steps, "Override the number of training steps");
  rev->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      const auto data = load_run_data(r);
      TrainConfig t = r.cfg.base_train;
      if (steps) t.max_steps = *steps;
      t.seed = stage_seed(r.cfg, "train-reverse");
      train_to(r, "reverse",
               [&](TrainLog* l) { return train_reverse(data.general_train, model_config(r, data), t, l); });
    };
  });

  auto* adp = app.add_subcommand("train-adapters", "Train encoder adapters by representation matching");
  add_common(adp, common);
  adp->add_option("--steps", steps, "Override the number of training steps");
  adp->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      const auto data = load_run_data(r);
      const auto model = load_transformer(r.model("base"), "train-base");
      TrainConfig t = r.cfg.adapter_train;
      if (steps) t.max_steps = *steps;
      t.seed = stage_seed(r.cfg, "train-adapters");
      std::ofstream metrics(r.dir / "logs" / "adapters.tsv");
      metrics << "step\tloss\tlr\ttokens_per_sec\n";
      TrainLog log;
      log.metrics = &metrics;
      const auto a = train_adapters(data.general_train, model.weights(), r.cfg.model.adapter_sites, t, &log);
      save_adapters(r.model("adapters"), a);
      std::cout << "dev_rep_loss\t" << fixed(corpus_rep_match_loss(model, &a, data.general_dev), 6) << '\n';
    };
  });

  RetrievalArgs ra;
  auto* bds = app.add_subcommand("build-datastore", "Build one in-domain datastore");
  add_common(bds, common);
  add_retrieval(bds, ra, true);
  bds->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      const auto data = load_run_data(r);
      const auto model = load_transformer(r.model("base"), "train-base");
      const auto& mono = domain_corpus(data.in_domain_train, ra.domain);
      std::optional<AdapterSet<float>> adapters;
      if (ra.method == "uda") {
        require_file(r.model("adapters"), "train-adapters");
        adapters = load_adapters(r.model("adapters"));
      }
      std::vector<SentencePair> bt;
      if (ra.method == "bt") bt = bt_corpus(r, data, ra.domain, model);
      DatastoreModels m;
      m.base = &model;
      m.adapters = adapters ? &*adapters : nullptr;
      const auto ds = method_datastore(ra.method, mono, bt, m);
      save_datastore(r.store(ra.domain, ra.method), ds);
      std::cout << "entries\t" << ds.size() << "\ndim\t" << ds.dim << '\n';
    };
  });

  std::optional<int> nlist;
  auto* bix = app.add_subcommand("build-index", "Build the IVF index over a datastore");
  add_common(bix, common);
  add_retrieval(bix, ra, true);
  bix->add_option("--nlist", nlist, "Number of k-means cells")->check(CLI::PositiveNumber);
  bix->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      require_file(r.store(ra.domain, ra.method), "build-datastore");
      const auto ds = load_datastore(r.store(ra.domain, ra.method));
      const int n = std::min<int>(nlist.value_or(r.cfg.index.nlist), static_cast<int>(ds.size()));
      const auto index =
          build_ivf(ds, n, r.cfg.index.kmeans_iters, stage_seed(r.cfg, "index." + ra.domain + "." + ra.method));
      save_index(r.index(ra.domain, ra.method), index);
      std::cout << "nlist\t" << index.nlist << '\n';
    };
  });

  std::string input, output, trace_path, model_name = "base";
  std::optional<double> lambda, temperature;
  std::optional<int> k, nprobe, beam;
  auto add_knn = [&](CLI::App* sub) {
    sub->add_option("--lambda", lambda, "Interpolation weight")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--temperature", temperature, "kNN softmax temperature")->check(CLI::PositiveNumber);
    sub->add_option("-k,--k", k, "Neighbors per query")->check(CLI::PositiveNumber);
    sub->add_option("--nprobe", nprobe, "IVF cells probed")->check(CLI::PositiveNumber);
    sub->add_option("--beam", beam, "Beam width (1 = greedy)")->check(CLI::Range(1, 4));
  };
  auto knn_config = [&](const Run& r) {
    KnnConfig kc = r.cfg.knn;
    if (lambda) kc.lambda = *lambda;
    if (temperature) kc.temperature = *temperature;
    if (k) kc.k = *k;
    if (nprobe) kc.nprobe = *nprobe;
    kc.validate();
    return kc;
  };

  auto* tr = app.add_subcommand("translate", "Translate a source file, one sentence per line");
  add_common(tr, common);
  add_retrieval(tr, ra, false);
  add_knn(tr);
  tr->add_option("--input", input, "Source sentences")->required()->check(CLI::ExistingFile);
  tr->add_option("--output", output, "Hypothesis file")->required();
  tr->add_option("--trace", trace_path, "Per-step retrieval trace file");
  tr->add_option("--model", model_name, "Model checkpoint name under models/");
  tr->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      const auto vocab = Vocabulary::load(r.data() / "vocab.txt");
      const auto model = load_transformer(r.model(model_name), "train-base");
      const auto sources = load_monolingual_corpus(input, vocab);
      KnnConfig kc = knn_config(r);
      Datastore ds;
      IvfIndex index;
      Retrieval ret;
      if (!ra.method.empty()) {
        if (ra.domain.empty()) throw ConfigError("--mode needs --domain");
        require_file(r.store(ra.domain, ra.method), "build-datastore");
        require_file(r.index(ra.domain, ra.method), "build-index");
        ds = load_datastore(r.store(ra.domain, ra.method));
        index = load_index(r.index(ra.domain, ra.method));
        ret = {&ds, &index};
      } else if (lambda && *lambda > 0.0) {
        throw ConfigError("--lambda > 0 needs --domain and --mode");
      } else {
        kc.lambda = 0.0;
      }
      DecodeOptions opts;
      opts.beam = beam.value_or(r.cfg.beam);
      std::ofstream trace;
      if (!trace_path.empty()) {
        trace.open(trace_path);
        opts.trace = &trace;
      }
      const Translator t(model, ret, kc);
      save_lines(output, t.translate(sources, opts), vocab);
    };
  });

  std::string hyp_path, ref_path;
  auto* ev = app.add_subcommand("evaluate", "Corpus BLEU of a hypothesis file");
  add_common(ev, common);
  ev->add_option("--hyp", hyp_path, "Hypotheses")->required()->check(CLI::ExistingFile);
  ev->add_option("--ref", ref_path, "References")->required()->check(CLI::ExistingFile);
  ev->callback([&] {
    action = [&] {
      auto read = [](const std::string& p) {
        std::vector<std::vector<std::string>> words;
        for (const auto& line : read_lines(p)) words.push_back(split_whitespace(line));
        return words;
      };
      const auto hyp_words = read(hyp_path);
      const auto ref_words = read(ref_path);
      std::vector<std::string> lines;
      for (const auto& w : hyp_words) lines.push_back(join_words(w));
      for (const auto& w : ref_words) lines.push_back(join_words(w));
      const auto vocab = Vocabulary::build({lines}, 1);
      std::vector<TokenSeq> hyps, refs;
      for (const auto& w : hyp_words) hyps.push_back(vocab.encode(w));
      for (const auto& w : ref_words) refs.push_back(vocab.encode(w));
      if (hyps.size() != refs.size()) throw DataError("hypothesis and reference files differ in line count");
      std::cout << "bleu\t" << fixed(corpus_bleu(hyps, refs), 2) << '\n';
    };
  });

  auto* tl = app.add_subcommand("tune-lambda", "Pick lambda on the in-domain dev set");
  add_common(tl, common);
  add_retrieval(tl, ra, true);
  add_knn(tl);
  tl->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      const auto data = load_run_data(r);
      const auto model = load_transformer(r.model("base"), "train-base");
      require_file(r.store(ra.domain, ra.method), "build-datastore");
      require_file(r.index(ra.domain, ra.method), "build-index");
      const auto ds = load_datastore(r.store(ra.domain, ra.method));
      const auto index = load_index(r.index(ra.domain, ra.method));
      const auto& dev = domain_corpus(data.in_domain_dev, ra.domain);
      std::vector<TokenSeq> src;
      for (const auto& p : dev) src.push_back(p.source);
      DecodeOptions opts;
      opts.beam = beam.value_or(r.cfg.beam);
      const auto search = tune_lambda(
          dev,
          [&](double l) {
            KnnConfig kc = knn_config(r);
            kc.lambda = l;
            return Translator(model, {&ds, &index}, kc).translate(src, opts);
          },
          r.cfg.lambda_grid);
      std::cout << "lambda\tdev_bleu\n";
      for (const auto& [l, b] : search.curve) std::cout << fixed(l, 2) << '\t' << fixed(b, 2) << '\n';
      std::cout << "best\t" << fixed(search.best_lambda, 2) << '\n';
    };
  });

  std::string sim_domain;
  auto* ms = app.add_subcommand("measure-sim", "Similarity of target-only representations to the gold ones");
  add_common(ms, common);
  ms->add_option("--domain", sim_domain, "In-domain name")->required();
  ms->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      const auto data = load_run_data(r);
      const auto model = load_transformer(r.model("base"), "train-base");
      const auto& dev = domain_corpus(data.in_domain_dev, sim_domain);
      std::optional<AdapterSet<float>> adapters;
      if (fs::exists(r.model("adapters"))) adapters = load_adapters(r.model("adapters"));
      std::optional<Transformer<float>> reverse;
      if (fs::exists(r.model("reverse"))) reverse.emplace(load_model(r.model("reverse")));
      DatastoreModels m;
      m.base = &model;
      m.adapters = adapters ? &*adapters : nullptr;
      m.reverse = reverse ? &*reverse : nullptr;
      ExperimentResults res;
      std::vector<SimilarityMode> modes{SimilarityMode::kCopy};
      if (adapters) modes.push_back(SimilarityMode::kCopyAdapters);
      if (reverse) modes.push_back(SimilarityMode::kBacktranslate);
      modes.push_back(SimilarityMode::kEmpty);
      for (auto mode : modes) res.similarity.push_back({sim_domain, to_string(mode), measure_similarity(dev, m, mode)});
      std::cout << format_similarity(res);
    };
  });

  std::string tokens, dump_path;
  auto* dr = app.add_subcommand("dump-reps", "Write datastore keys for selected target tokens");
  add_common(dr, common);
  add_retrieval(dr, ra, true);
  dr->add_option("--tokens", tokens, "Comma-separated target tokens")->required();
  dr->add_option("--output", dump_path, "Output file")->required();
  dr->callback([&] {
    action = [&] {
      const Run r = open_run(common);
      const auto vocab = Vocabulary::load(r.data() / "vocab.txt");
      require_file(r.store(ra.domain, ra.method), "build-datastore");
      const auto ds = load_datastore(r.store(ra.domain, ra.method));
      std::vector<TokenId> ids;
      for (const auto& t : split_list(tokens)) {
        if (!vocab.contains(t)) throw DataError("token '" + t + "' is not in the vocabulary");
        ids.push_back(vocab.lookup(t));
      }
      if (ids.empty()) throw ConfigError("--tokens is empty");
      const auto sum = dump_representations(ds, ids, vocab, dump_path);
      std::cout << "rows\t" << sum.rows << "\nmissing_tokens\t" << sum.missing_tokens << '\n';
    };
  });

  std::string baselines;
  bool resume = false;
  auto* all = app.add_subcommand("run-all", "Run the whole experiment and write the result tables");
  add_common(all, common);
  all->add_option("--baselines", baselines, "Comma-separated subset of basic,empty,copy,bt,uda,parallel,bt-ft");
  all->add_flag("--resume", resume, "Reuse artifacts already on disk");
  all->callback([&] {
    action = [&] {
      ExperimentConfig cfg = effective_config(common);
      if (!baselines.empty()) cfg.baselines = split_list(baselines);
      RunOptions opts;
      opts.resume = resume;
      opts.log = &std::cerr;
      const auto res = run_experiment(cfg, opts);
      std::cout << format_results(res) << '\n' << format_lambdas(res) << '\n' << format_similarity(res);
      if (!res.finetune.empty()) std::cout << '\n' << format_finetune(res);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  try {
    action();
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
  return kOk;
}
