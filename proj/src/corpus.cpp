// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "toml.hpp"

namespace knnmt {

void DomainSpec::validate() const {
  if (lexicon.empty()) throw DataError("invalid domain spec '" + name + "': empty lexicon");
  if (reorder_window < 1)
    throw DataError("invalid domain spec '" + name + "': reorder_window must be >= 1");
  if (ambiguous_rate < 0.0 || ambiguous_rate > 1.0)
    throw DataError("invalid domain spec '" + name + "': ambiguous_rate outside [0, 1]");
  for (const auto& [src, tgt] : ambiguous)
    if (lexicon.count(src))
      throw DataError("invalid domain spec '" + name + "': '" + src +
                      "' is both a lexicon entry and ambiguous");
}

std::vector<std::string> translate_with_spec(const DomainSpec& spec,
                                             const std::vector<std::string>& source) {
  std::vector<std::string> out;
  out.reserve(source.size());
  for (const auto& w : source) {
    if (auto it = spec.ambiguous.find(w); it != spec.ambiguous.end()) {
      out.push_back(it->second);
    } else if (auto jt = spec.lexicon.find(w); jt != spec.lexicon.end()) {
      out.push_back(jt->second);
    } else {
      throw DataError("domain '" + spec.name + "' has no translation for '" + w + "'");
    }
  }
  const std::size_t w = static_cast<std::size_t>(spec.reorder_window);
  for (std::size_t begin = 0; begin < out.size(); begin += w)
    std::reverse(out.begin() + begin, out.begin() + std::min(out.size(), begin + w));
  return out;
}

namespace {

struct SamplingTables {
  std::vector<const std::string*> content;
  std::vector<const std::string*> ambiguous;
};

SamplingTables tables_for(const DomainSpec& spec) {
  SamplingTables t;
  for (const auto& [k, v] : spec.lexicon) t.content.push_back(&k);
  for (const auto& [k, v] : spec.ambiguous) t.ambiguous.push_back(&k);
  return t;
}

TextPair sample_with(const DomainSpec& spec, const SamplingTables& tables, int min_len,
                     int max_len, Rng& rng) {
  std::uniform_int_distribution<int> length(min_len, max_len);
  std::uniform_int_distribution<std::size_t> pick_content(0, tables.content.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  TextPair p;
  const int n = length(rng);
  for (int i = 0; i < n; ++i) {
    if (!tables.ambiguous.empty() && coin(rng) < spec.ambiguous_rate) {
      std::uniform_int_distribution<std::size_t> pick(0, tables.ambiguous.size() - 1);
      p.source.push_back(*tables.ambiguous[pick(rng)]);
    } else {
      p.source.push_back(*tables.content[pick_content(rng)]);
    }
  }
  p.target = translate_with_spec(spec, p.source);
  return p;
}

void check_lengths(int min_len, int max_len) {
  if (min_len < 1 || max_len < min_len)
    throw ConfigError("sentence length range must satisfy 1 <= min <= max");
}

}  // namespace

TextPair sample_sentence(const DomainSpec& spec, int min_len, int max_len, Rng& rng) {
  spec.validate();
  check_lengths(min_len, max_len);
  return sample_with(spec, tables_for(spec), min_len, max_len, rng);
}

std::vector<TextPair> generate_domain_corpus(const DomainSpec& spec, std::size_t n_sentences,
                                             int min_len, int max_len, std::uint64_t seed) {
  spec.validate();
  check_lengths(min_len, max_len);
  const auto tables = tables_for(spec);
  Rng rng(seed);
  std::vector<TextPair> out;
  out.reserve(n_sentences);
  for (std::size_t i = 0; i < n_sentences; ++i)
    out.push_back(sample_with(spec, tables, min_len, max_len, rng));
  return out;
}

std::vector<TextPair> generate_mixture_corpus(
    const std::vector<std::pair<const DomainSpec*, double>>& components,
    std::size_t n_sentences, int min_len, int max_len, std::uint64_t seed) {
  if (components.empty()) throw ConfigError("mixture corpus needs at least one domain");
  check_lengths(min_len, max_len);
  std::vector<SamplingTables> tables;
  std::vector<double> weights;
  for (const auto& [spec, w] : components) {
    spec->validate();
    if (!(w > 0.0)) throw ConfigError("mixture weights must be positive");
    tables.push_back(tables_for(*spec));
    weights.push_back(w);
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  Rng rng(seed);
  std::vector<TextPair> out;
  out.reserve(n_sentences);
  for (std::size_t i = 0; i < n_sentences; ++i) {
    const std::size_t c = pick(rng);
    out.push_back(sample_with(*components[c].first, tables[c], min_len, max_len, rng));
  }
  return out;
}

namespace {

// Disjoint syllable inventories keep the two languages' word forms apart.
constexpr const char* kSourceSyllables[] = {"ka", "lo", "mi", "nu", "pe", "ri", "so",
                                            "ta", "ve", "zu", "gi", "bo", "de", "fu"};
constexpr const char* kTargetSyllables[] = {"ber", "dan", "fol", "gim", "hux", "jor",
                                            "kel", "mab", "nit", "pow", "qen", "rast",
                                            "sul", "tov", "wex", "yim"};

template <std::size_t N>
std::vector<std::string> unique_words(const char* const (&syllables)[N], std::size_t count,
                                      int n_syllables, std::set<std::string>& taken, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    for (int s = 0; s < n_syllables; ++s) w += syllables[pick(rng)];
    if (taken.insert(w).second) out.push_back(w);
  }
  return out;
}

}  // namespace

std::vector<DomainSpec> make_synthetic_domains(const SyntheticDomainOptions& opts,
                                               std::uint64_t seed) {
  const auto n_domains = static_cast<int>(opts.in_domains.size());
  if (opts.n_content_words < 1 || opts.n_ambiguous < 0 || opts.in_domain_content_words < 1)
    throw ConfigError("synthetic domain sizes must be positive");
  if (!(opts.cognate_rate >= 0.0 && opts.cognate_rate <= 1.0))
    throw ConfigError("cognate_rate must lie in [0, 1]");
  if (opts.in_domain_content_words * n_domains > opts.n_content_words)
    throw ConfigError("in-domain content sub-vocabularies do not fit in the general lexicon");

  Rng rng(seed);
  std::set<std::string> taken;
  const auto n_content = static_cast<std::size_t>(opts.n_content_words);
  const auto n_amb = static_cast<std::size_t>(opts.n_ambiguous);
  auto src_words = unique_words(kSourceSyllables, n_content + n_amb, 2, taken, rng);
  auto tgt_words = unique_words(kTargetSyllables, n_content, 2, taken, rng);
  std::bernoulli_distribution cognate(opts.cognate_rate);
  for (std::size_t i = 0; i < n_content; ++i)
    if (cognate(rng)) tgt_words[i] = src_words[i];

  DomainSpec general;
  general.name = "general";
  general.reorder_window = opts.reorder_window;
  general.ambiguous_rate = opts.general_ambiguous_rate;
  for (std::size_t i = 0; i < n_content; ++i) general.lexicon[src_words[i]] = tgt_words[i];
  std::vector<std::string> amb_src(src_words.begin() + static_cast<std::ptrdiff_t>(n_content),
                                   src_words.end());
  // Sense words are three syllables so they never collide with content words.
  auto general_senses = unique_words(kTargetSyllables, n_amb, 3, taken, rng);
  for (std::size_t i = 0; i < n_amb; ++i) general.ambiguous[amb_src[i]] = general_senses[i];

  std::vector<std::size_t> order(n_content);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<DomainSpec> specs{general};
  std::vector<DomainSpec> alts;
  for (int d = 0; d < n_domains; ++d) {
    DomainSpec dom;
    dom.name = opts.in_domains[static_cast<std::size_t>(d)];
    dom.reorder_window = opts.reorder_window;
    dom.ambiguous_rate = opts.in_domain_ambiguous_rate;
    const auto per = static_cast<std::size_t>(opts.in_domain_content_words);
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t w = order[static_cast<std::size_t>(d) * per + i];
      dom.lexicon[src_words[w]] = tgt_words[w];
    }
    auto senses = unique_words(kTargetSyllables, n_amb, 3, taken, rng);
    for (std::size_t i = 0; i < n_amb; ++i) dom.ambiguous[amb_src[i]] = senses[i];

    DomainSpec alt = general;
    alt.name = dom.name + "-alt";
    alt.ambiguous = dom.ambiguous;
    specs.push_back(std::move(dom));
    alts.push_back(std::move(alt));
  }
  for (auto& a : alts) specs.push_back(std::move(a));
  return specs;
}

std::vector<DomainSpec> load_domain_specs(const std::filesystem::path& path) {
  toml::table root;
  try {
    root = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "domain file " << path.string() << ": " << e.description() << " at line "
       << e.source().begin.line;
    throw DataError(os.str());
  }
  std::vector<DomainSpec> specs;
  for (const auto& [key, node] : root) {
    const auto* tbl = node.as_table();
    if (!tbl) throw DataError("domain file: top-level key '" + std::string(key) + "' is not a table");
    DomainSpec spec;
    spec.name = std::string(key);
    spec.reorder_window = static_cast<int>((*tbl)["reorder_window"].value_or<std::int64_t>(1));
    spec.ambiguous_rate = (*tbl)["ambiguous_rate"].value_or(0.0);
    auto read_map = [&](const char* field, std::map<std::string, std::string>& out) {
      if (const auto* m = (*tbl)[field].as_table()) {
        for (const auto& [k, v] : *m) {
          auto s = v.value<std::string>();
          if (!s)
            throw DataError("domain '" + spec.name + "': " + field + "." + std::string(k) +
                            " must be a string");
          out[std::string(k)] = *s;
        }
      }
    };
    read_map("lexicon", spec.lexicon);
    read_map("ambiguous", spec.ambiguous);
    spec.validate();
    specs.push_back(std::move(spec));
  }
  return specs;
}

void save_domain_specs(const std::filesystem::path& path, const std::vector<DomainSpec>& specs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << "# Synthetic domains. Translation = lexicon substitution, then block reversal\n"
       "# inside windows of reorder_window tokens.\n";
  for (const auto& s : specs) {
    f << "\n[\"" << s.name << "\"]\n";
    f << "reorder_window = " << s.reorder_window << "\n";
    std::ostringstream rate;
    rate.precision(17);
    rate << s.ambiguous_rate;
    std::string r = rate.str();
    if (r.find_first_of(".e") == std::string::npos) r += ".0";
    f << "ambiguous_rate = " << r << "\n";
    f << "\n[\"" << s.name << "\".lexicon]\n";
    for (const auto& [k, v] : s.lexicon) f << k << " = \"" << v << "\"\n";
    f << "\n[\"" << s.name << "\".ambiguous]\n";
    for (const auto& [k, v] : s.ambiguous) f << k << " = \"" << v << "\"\n";
  }
}

const DomainSpec& find_domain(const std::vector<DomainSpec>& specs, const std::string& name) {
  for (const auto& s : specs)
    if (s.name == name) return s;
  throw ConfigError("unknown domain '" + name + "'");
}

SentencePair encode_pair(const Vocabulary& vocab, const TextPair& pair) {
  return {vocab.encode(pair.source), vocab.encode(pair.target)};
}

std::vector<SentencePair> encode_pairs(const Vocabulary& vocab, const std::vector<TextPair>& pairs) {
  std::vector<SentencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(vocab, p));
  return out;
}

std::vector<SentencePair> swap_pairs(const std::vector<SentencePair>& pairs) {
  std::vector<SentencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.target, p.source});
  return out;
}

std::vector<TokenSeq> targets_of(const std::vector<SentencePair>& pairs) {
  std::vector<TokenSeq> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.target);
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(f, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::vector<SentencePair> load_parallel_corpus(const std::filesystem::path& path,
                                               const Vocabulary& vocab) {
  std::vector<SentencePair> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected exactly two tab-separated fields");
    SentencePair p{vocab.tokenize(std::string_view(line).substr(0, tab)),
                   vocab.tokenize(std::string_view(line).substr(tab + 1))};
    if (p.source.empty() || p.target.empty())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": empty sentence");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<TokenSeq> load_monolingual_corpus(const std::filesystem::path& path,
                                              const Vocabulary& vocab) {
  std::vector<TokenSeq> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (line.find('\t') != std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": monolingual line contains a tab");
    auto ids = vocab.tokenize(line);
    if (ids.empty())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": empty sentence");
    out.push_back(std::move(ids));
  }
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

void save_parallel_text(const std::filesystem::path& path, const std::vector<TextPair>& pairs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  for (const auto& p : pairs) f << join_words(p.source) << '\t' << join_words(p.target) << '\n';
}

void save_parallel_corpus(const std::filesystem::path& path, const std::vector<SentencePair>& pairs,
                          const Vocabulary& vocab) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  for (const auto& p : pairs)
    f << vocab.detokenize(p.source) << '\t' << vocab.detokenize(p.target) << '\n';
}

void save_lines(const std::filesystem::path& path, const std::vector<TokenSeq>& sentences,
                const Vocabulary& vocab) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  for (const auto& s : sentences) f << vocab.detokenize(s) << '\n';
}

}  // namespace knnmt
