// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero
// when any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "knnmt/model/checkpoint.hpp"
#include "knnmt/pipeline.hpp"
#include "test_util.hpp"

namespace knnmt {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ------------------------------------------------------------ criterion 1

// Softmax over -d/T aggregated per value, in long double with max shift.
std::vector<long double> oracle_knn(const std::vector<Neighbor>& nb, double t, int vocab) {
  long double lo = nb.front().distance;
  for (const auto& n : nb) lo = std::min<long double>(lo, n.distance);
  std::vector<long double> p(static_cast<std::size_t>(vocab), 0.0L);
  long double z = 0.0L;
  for (const auto& n : nb) {
    const long double w = std::exp(-(static_cast<long double>(n.distance) - lo) / t);
    p[static_cast<std::size_t>(n.value)] += w;
    z += w;
  }
  for (auto& v : p) v /= z;
  return p;
}

Outcome knn_distribution_matches_oracle() {
  Outcome o;
  Rng rng(101);
  std::uniform_int_distribution<int> kdist(1, 32), vdist(5, 60);
  std::uniform_real_distribution<double> ddist(0.0, 400.0), tdist(0.5, 50.0);
  double worst = 0.0, worst_norm = 0.0;
  bool interp_exact = true;
  for (int c = 0; c < 100; ++c) {
    const int vocab = vdist(rng);
    const int k = kdist(rng);
    const double t = tdist(rng);
    std::uniform_int_distribution<int> val(0, vocab - 1);
    std::vector<Neighbor> nb;
    for (int i = 0; i < k; ++i) nb.push_back({static_cast<std::uint64_t>(i), ddist(rng), static_cast<TokenId>(val(rng))});
    const auto p = knn_distribution(nb, t, vocab);
    if (!p) {
      o.require(false, "no distribution for a non-empty neighbor list");
      continue;
    }
    const auto want = oracle_knn(nb, t, vocab);
    for (int v = 0; v < vocab; ++v)
      worst = std::max(worst, static_cast<double>(std::abs((*p)[static_cast<std::size_t>(v)] - want[static_cast<std::size_t>(v)])));
    std::vector<float> logits(static_cast<std::size_t>(vocab));
    std::normal_distribution<float> g(0.0f, 3.0f);
    for (auto& l : logits) l = g(rng);
    const auto nmt = softmax(logits);
    for (double lambda : {0.0, 0.5, 1.0}) {
      const auto mix = interpolate(*p, nmt, lambda);
      for (int v = 0; v < vocab; ++v) {
        const auto i = static_cast<std::size_t>(v);
        const double expect = lambda == 0.0 ? nmt[i] : lambda == 1.0 ? (*p)[i] : 0.5 * (*p)[i] + 0.5 * nmt[i];
        interp_exact = interp_exact && mix[i] == expect;
      }
      worst_norm = std::max(worst_norm, std::abs(std::accumulate(mix.begin(), mix.end(), 0.0) - 1.0));
    }
    worst_norm = std::max(worst_norm, std::abs(std::accumulate(p->begin(), p->end(), 0.0) - 1.0));
    worst_norm = std::max(worst_norm, std::abs(std::accumulate(nmt.begin(), nmt.end(), 0.0) - 1.0));
  }
  o.require(worst <= 1e-9, "max deviation from oracle " + fmt("%.3g", worst));
  o.require(interp_exact, "interpolation not exact at lambda in {0, 0.5, 1}");
  o.require(worst_norm <= 1e-6, "normalization error " + fmt("%.3g", worst_norm));
  o.note("max oracle deviation " + fmt("%.3g", worst) + ", max normalization error " + fmt("%.3g", worst_norm));
  return o;
}

// ------------------------------------------------------------ criterion 2

Outcome ivf_exact_and_monotone() {
  Outcome o;
  const int dim = 64, n = 10000, nlist = 64, k = 16, queries = 200;
  Rng rng(202);
  std::normal_distribution<float> g(0.0f, 1.0f);
  Datastore ds;
  ds.dim = dim;
  for (int i = 0; i < n * dim; ++i) ds.keys.push_back(g(rng));
  for (int i = 0; i < n; ++i) ds.values.push_back(static_cast<TokenId>(i % 50));
  const IvfIndex index = build_ivf(ds, nlist, 10, 7);
  std::vector<std::vector<float>> qs(queries, std::vector<float>(dim));
  for (auto& q : qs)
    for (auto& x : q) x = g(rng);
  std::vector<std::vector<Neighbor>> exact;
  for (const auto& q : qs) exact.push_back(brute_force_search(ds, q, k));
  int mismatches = 0;
  for (int i = 0; i < queries; ++i)
    mismatches += knn_search(index, ds, qs[static_cast<std::size_t>(i)], k, nlist) != exact[static_cast<std::size_t>(i)];
  o.require(mismatches == 0, std::to_string(mismatches) + " full-probe queries differ from brute force");
  double prev = -1.0;
  std::string curve;
  for (int nprobe : {1, 2, 4, 8, 16, 32, 64}) {
    std::size_t hits = 0;
    for (int i = 0; i < queries; ++i) {
      const auto got = knn_search(index, ds, qs[static_cast<std::size_t>(i)], k, nprobe);
      for (const auto& e : exact[static_cast<std::size_t>(i)])
        hits += std::any_of(got.begin(), got.end(), [&](const Neighbor& x) { return x.entry_id == e.entry_id; });
    }
    const double recall = static_cast<double>(hits) / (queries * k);
    o.require(recall >= prev, "recall decreased at nprobe " + std::to_string(nprobe));
    prev = recall;
    curve += (curve.empty() ? "" : " ") + fmt("%.3f", recall);
  }
  o.note("recall@16 over nprobe 1..64: " + curve);
  return o;
}

// ------------------------------------------------------------ criterion 3

Outcome adapters_identity_and_gradients() {
  Outcome o;
  const int vocab = 14;
  ModelConfig cfg = testing::tiny_config(vocab, 16);
  cfg.adapter_sites = AdapterSites::kEncoderDecoder;
  {
    const Transformer<float> model(TransformerWeights<float>::init(cfg, 1));
    const auto identity = AdapterSet<float>::init(cfg, 2);
    Rng rng(3);
    TokenBatch src;
    for (int s = 0; s < 8; ++s) src.push(testing::random_seq(rng, vocab, 1, 10));
    const Matrix<float> a = model.encode(src, nullptr);
    const Matrix<float> b = model.encode(src, &identity);
    o.require(a.rows() == b.rows() && std::equal(a.data(), a.data() + a.size(), b.data()),
              "zero second projection changes encoder outputs");
  }
  const Transformer<double> model(TransformerWeights<double>::init(cfg, 2));
  auto adapters = testing::perturbed_adapters<double>(cfg, 4, 0.2);
  Rng rng(6);
  const auto pairs = testing::random_pairs(rng, 3, vocab, 1, 4);
  const Matrix<double> base = forced_representations<double>(model, pairs, ForcedSource::kGold, nullptr);
  auto grad = AdapterSet<double>::zeros(cfg);
  rep_match_loss_and_grad(model, adapters, pairs, base, &grad);
  auto params = adapters.parameters();
  auto grads = grad.parameters();
  auto loss = [&] { return rep_match_loss_and_grad<double>(model, adapters, pairs, base, nullptr); };
  const double eps = 1e-4;
  double worst = 0.0;
  int checked = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix<double>& m = *params[p].value;
    for (Index i = 0; i < m.size(); i += std::max<Index>(1, m.size() / 5)) {
      const double keep = m.data()[i];
      m.data()[i] = keep + eps;
      const double up = loss();
      m.data()[i] = keep - eps;
      const double down = loss();
      m.data()[i] = keep;
      const double num = (up - down) / (2 * eps);
      const double ana = grads[p].value->data()[i];
      if (std::abs(num) < 1e-7 && std::abs(ana) < 1e-7) continue;
      worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
      ++checked;
    }
  }
  o.require(checked > 0, "no gradient entries checked");
  o.require(worst <= 1e-3, "max relative gradient error " + fmt("%.3g", worst));
  o.note(std::to_string(checked) + " entries, max relative error " + fmt("%.3g", worst));
  return o;
}

// ------------------------------------------------------------ criterion 4

Outcome datastore_count_and_io(const fs::path& work) {
  Outcome o;
  const int vocab = 30;
  const Transformer<float> model(TransformerWeights<float>::init(testing::tiny_config(vocab), 4));
  DatastoreModels m;
  m.base = &model;
  Rng rng(404);
  std::uniform_int_distribution<int> size(0, 40);
  fs::create_directories(work);
  int count_bad = 0, io_bad = 0;
  for (int c = 0; c < 50; ++c) {
    const auto pairs = testing::random_pairs(rng, static_cast<std::size_t>(size(rng)), vocab, 1, 12);
    std::size_t want = 0;
    for (const auto& p : pairs) want += p.target.size() + 1;
    const Datastore ds = build_datastore(pairs, SourceMode::kParallel, m);
    count_bad += ds.size() != want || ds.keys.size() != want * static_cast<std::size_t>(ds.dim);
    const fs::path path = work / "store.udkd";
    save_datastore(path, ds);
    const Datastore back = load_datastore(path);
    io_bad += !(back == ds) || encode_datastore(back) != encode_datastore(ds);
  }
  Datastore empty;
  empty.dim = 16;
  save_datastore(work / "empty.udkd", empty);
  io_bad += !(load_datastore(work / "empty.udkd") == empty);
  o.require(count_bad == 0, std::to_string(count_bad) + " corpora with a wrong entry count");
  o.require(io_bad == 0, std::to_string(io_bad) + " save/load mismatches");
  return o;
}

// ------------------------------------------------------------ criteria 5-8

struct SeedRun {
  std::uint64_t seed = 0;
  fs::path dir;
  ExperimentConfig cfg;
  ExperimentResults results;
  double similarity_seconds = 0.0;
  double total_seconds = 0.0;
};

double mean_over(const std::vector<SeedRun>& runs, const std::string& method) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs)
    for (const auto& [dom, b] : r.results.bleu.at(method)) {
      s += b;
      ++n;
    }
  return s / static_cast<double>(n);
}

const SimilarityReport* find_sim(const ExperimentResults& r, const std::string& dom, const std::string& mode) {
  for (const auto& row : r.similarity)
    if (row.domain == dom && row.mode == mode) return &row.report;
  return nullptr;
}

Outcome similarity_gain(const std::vector<SeedRun>& runs) {
  Outcome o;
  double worst_gap = 1e9, worst_seconds = 0.0;
  for (const auto& r : runs)
    for (const auto& dom : r.results.domains) {
      const auto* copy = find_sim(r.results, dom, "copy");
      const auto* uda = find_sim(r.results, dom, "copy+adapters");
      if (!copy || !uda) {
        o.require(false, "missing similarity rows for seed " + std::to_string(r.seed));
        continue;
      }
      const double gap = uda->mean_cosine - copy->mean_cosine;
      worst_gap = std::min(worst_gap, gap);
      o.require(gap >= 0.03, "seed " + std::to_string(r.seed) + " cosine gain " + fmt("%.4f", gap));
      o.require(uda->mean_sq_euclidean < copy->mean_sq_euclidean,
                "seed " + std::to_string(r.seed) + " squared distance did not decrease");
      worst_seconds = std::max(worst_seconds, r.similarity_seconds);
    }
  double total = 0.0;
  for (const auto& r : runs) total += r.similarity_seconds;
  o.require(total < 20 * 60, "runtime " + fmt("%.0f", total) + " s over 20 min");
  o.note("min cosine gain " + fmt("%.4f", worst_gap) + ", time " + fmt("%.0f", total) + " s");
  return o;
}

Outcome bleu_ordering(const std::vector<SeedRun>& runs) {
  Outcome o;
  const double basic = mean_over(runs, "basic"), copy = mean_over(runs, "copy"), uda = mean_over(runs, "uda"),
               parallel = mean_over(runs, "parallel"), bt = mean_over(runs, "bt");
  o.require(parallel >= uda, "parallel < uda");
  o.require(uda > copy, "uda <= copy");
  o.require(copy >= basic, "copy < basic");
  o.require(uda - basic >= 2.0, "uda - basic = " + fmt("%.2f", uda - basic));
  o.require(std::abs(bt - uda) <= 2.0, "|bt - uda| = " + fmt("%.2f", std::abs(bt - uda)));
  double total = 0.0;
  for (const auto& r : runs) total += r.total_seconds;
  o.require(total < 45 * 60, "runtime " + fmt("%.0f", total) + " s over 45 min");
  o.note("basic " + fmt("%.2f", basic) + ", empty " + fmt("%.2f", mean_over(runs, "empty")) + ", copy " +
         fmt("%.2f", copy) + ", bt " + fmt("%.2f", bt) + ", uda " + fmt("%.2f", uda) + ", parallel " +
         fmt("%.2f", parallel) + ", bt-ft " + fmt("%.2f", mean_over(runs, "bt-ft")) + ", time " +
         fmt("%.0f", total) + " s");
  return o;
}

Outcome finetune_tradeoff(const std::vector<SeedRun>& runs) {
  Outcome o;
  for (const auto& r : runs) {
    o.require(!r.results.finetune.empty(), "no fine-tuning rows for seed " + std::to_string(r.seed));
    for (const auto& row : r.results.finetune) {
      const std::string tag = "seed " + std::to_string(r.seed) + " " + row.domain;
      o.require(row.tuned_in_domain < row.base_in_domain, tag + " in-domain dev loss did not improve");
      o.require(row.tuned_general > row.base_general, tag + " general dev loss did not worsen");
      o.note(tag + " in-domain " + fmt("%.3f", row.base_in_domain) + "->" + fmt("%.3f", row.tuned_in_domain) +
             ", general " + fmt("%.3f", row.base_general) + "->" + fmt("%.3f", row.tuned_general));
    }
  }
  return o;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream f(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(f, l);) lines.push_back(l);
  return lines;
}

Outcome lambda_zero_and_tuning(const std::vector<SeedRun>& runs) {
  Outcome o;
  for (const auto& r : runs) {
    const auto data = read_data(r.dir / "data");
    const Transformer<float> base(load_model(r.dir / "models" / "base.udak"));
    for (const auto& dom : data.in_domains) {
      const std::string tag = "seed " + std::to_string(r.seed) + " " + dom;
      std::vector<TokenSeq> src;
      for (const auto& p : data.in_domain_test.at(dom)) src.push_back(p.source);
      const Datastore store = load_datastore(r.dir / "stores" / (dom + ".uda.udkd"));
      const IvfIndex index = load_index(r.dir / "stores" / (dom + ".uda.udki"));
      KnnConfig k = r.cfg.knn;
      k.lambda = 0.0;
      DecodeOptions dopts;
      dopts.beam = r.cfg.beam;
      const auto with_store = Translator(base, {&store, &index}, k).translate(src, dopts);
      const auto plain = Translator(base, {}, k).translate(src, dopts);
      o.require(with_store == plain, tag + " lambda 0 differs from the plain model");
      const auto basic_file = read_lines(r.dir / "hyps" / (dom + ".basic.txt"));
      bool same = basic_file.size() == with_store.size();
      for (std::size_t i = 0; same && i < with_store.size(); ++i)
        same = basic_file[i] == data.vocab.detokenize(with_store[i]);
      o.require(same, tag + " lambda 0 differs from the basic hypotheses");
      const double tuned = r.results.lambda.at("parallel").at(dom);
      o.require(tuned > 0.0, tag + " tuned parallel lambda is 0");
      o.note(tag + " parallel lambda " + fmt("%.2f", tuned));
    }
  }
  return o;
}

// ------------------------------------------------------------ criterion 9

ExperimentConfig reduced_config(const fs::path& out, std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.out_dir = out.string();
  c.data.general_pairs = 1500;
  c.data.general_dev = 50;
  c.data.in_domain_mono = 300;
  c.data.dev = 40;
  c.data.test = 40;
  c.model.d_model = 32;
  c.model.d_ff = 64;
  c.model.n_enc_layers = 2;
  c.model.n_dec_layers = 2;
  c.model.adapter_hidden = 32;
  c.base_train.max_steps = 150;
  c.base_train.warmup_steps = 50;
  c.adapter_train.max_steps = 60;
  c.adapter_train.warmup_steps = 20;
  c.finetune.max_steps = 30;
  c.finetune.warmup_steps = 10;
  c.index.nlist = 16;
  c.lambda_grid = {0.0, 0.25, 0.5};
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome run_all_is_deterministic(const fs::path& work) {
  Outcome o;
  std::vector<std::string> tables[2];
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = work / ("det" + std::to_string(rep));
    fs::remove_all(dir);
    run_experiment(reduced_config(dir, 9));
    for (const char* f : {"results.tsv", "lambdas.tsv", "similarity.tsv", "finetune.tsv"})
      tables[rep].push_back(slurp(dir / f));
  }
  o.require(tables[0] == tables[1], "tables differ between runs");
  o.require(!tables[0][0].empty(), "empty results table");
  return o;
}

}  // namespace
}  // namespace knnmt

int main(int argc, char** argv) {
  using namespace knnmt;
  CLI::App app{"knnmt acceptance checks"};
  std::string work = (fs::temp_directory_path() / "knnmt_acceptance").string();
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<int> only;
  bool resume = false;
  app.add_option("--work", work, "Scratch directory for experiment runs");
  app.add_option("--seeds", seeds, "Seeds of the full experiment runs");
  app.add_option("--only", only, "Criteria to run (default: all)");
  app.add_flag("--resume", resume, "Reuse experiment artifacts under --work");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  bool all_pass = true;
  auto report = [&](int id, const std::string& name, double limit_s, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double s = seconds_since(t0);
    if (limit_s > 0) o.require(s < limit_s, "runtime " + fmt("%.1f", s) + " s over " + fmt("%.0f", limit_s) + " s");
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << name << " (" << fmt("%.1f", s)
              << " s)" << (o.detail.empty() ? "" : " -- " + o.detail) << std::endl;
  };

  report(1, "kNN distribution matches softmax oracle", 1.0, knn_distribution_matches_oracle);
  report(2, "IVF full probe exact and recall monotone", 30.0, ivf_exact_and_monotone);
  report(3, "identity adapters and rep-match gradients", 30.0, adapters_identity_and_gradients);
  report(4, "datastore count and save/load", 5.0, [&] { return datastore_count_and_io(fs::path(work) / "store"); });

  std::vector<SeedRun> runs;
  std::string run_error;
  if (wanted(5) || wanted(6) || wanted(7) || wanted(8)) {
    try {
      for (auto seed : seeds) {
        SeedRun r;
        r.seed = seed;
        r.dir = fs::path(work) / ("seed" + std::to_string(seed));
        r.cfg.seed = seed;
        r.cfg.out_dir = r.dir.string();
        RunOptions opts;
        opts.resume = resume;
        opts.log = &std::cerr;
        std::map<std::string, double> seconds;
        opts.stage_seconds = &seconds;
        const auto t0 = Clock::now();
        r.results = run_experiment(r.cfg, opts);
        r.total_seconds = seconds_since(t0);
        // Stages the similarity measurement depends on.
        for (const auto& [name, s] : seconds)
          if (name == "gen-data" || name == "train-base" || name == "train-adapters" ||
              name.rfind("measure-sim", 0) == 0)
            r.similarity_seconds += s;
        runs.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      run_error = e.what();
    }
  }
  auto from_runs = [&](Outcome (*fn)(const std::vector<SeedRun>&)) {
    return [&, fn] {
      if (!run_error.empty()) throw std::runtime_error(run_error);
      return fn(runs);
    };
  };
  report(5, "adapters raise held-out similarity", 0, from_runs(similarity_gain));
  report(6, "BLEU ordering over seeds", 0, from_runs(bleu_ordering));
  report(7, "BT-FT in-domain gain and general loss", 0, from_runs(finetune_tradeoff));
  report(8, "lambda 0 equals basic; tuned parallel lambda > 0", 0, from_runs(lambda_zero_and_tuning));
  report(9, "run-all is deterministic", 0, [&] { return run_all_is_deterministic(fs::path(work)); });
  return all_pass ? 0 : 1;
}
