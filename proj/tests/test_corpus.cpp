// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "knnmt/binary_io.hpp"
#include "knnmt/corpus.hpp"
#include "test_util.hpp"

namespace knnmt {
namespace {

std::vector<std::string> specials() { return {"<pad>", "<s>", "</s>", "<unk>"}; }

TEST(Vocabulary, FrequencyOrder) {
  const auto v = Vocabulary::build({{"a a b"}}, 1);
  auto want = specials();
  want.insert(want.end(), {"a", "b"});
  EXPECT_EQ(v.tokens(), want);
}

TEST(Vocabulary, MinCountThreshold) {
  EXPECT_EQ(Vocabulary::build({{"a b"}}, 2).size(), Vocabulary::kNumSpecials);
}

TEST(Vocabulary, LexicographicTieBreak) {
  const auto v = Vocabulary::build({{"b a"}}, 1);
  EXPECT_LT(v.lookup("a"), v.lookup("b"));
}

TEST(Vocabulary, SpecialsAndBijection) {
  const auto v = Vocabulary::build({{"x y z", "y z"}, {"z w"}}, 1);
  EXPECT_EQ(v.lookup(v.token(Vocabulary::kPad)), Vocabulary::kPad);
  EXPECT_EQ(v.lookup(v.token(Vocabulary::kBos)), Vocabulary::kBos);
  EXPECT_EQ(v.lookup(v.token(Vocabulary::kEos)), Vocabulary::kEos);
  EXPECT_EQ(v.lookup(v.token(Vocabulary::kUnk)), Vocabulary::kUnk);
  for (TokenId t = 0; t < static_cast<TokenId>(v.size()); ++t) EXPECT_EQ(v.lookup(v.detokenize({t})), t);
  EXPECT_EQ(v.lookup("never"), Vocabulary::kUnk);
  EXPECT_EQ(v.tokenize("x  never\tz"), (TokenSeq{v.lookup("x"), Vocabulary::kUnk, v.lookup("z")}));
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  const auto v = Vocabulary::build({{"b c c a"}}, 1);
  testing::TempDir dir("vocab");
  v.save(dir.path() / "v.txt");
  EXPECT_EQ(Vocabulary::load(dir.path() / "v.txt"), v);
  EXPECT_THROW(Vocabulary::from_tokens({"a", "a"}), DataError);
}

DomainSpec identity_spec() {
  DomainSpec s;
  s.name = "id";
  for (const char* w : {"a", "b", "c", "d"}) s.lexicon[w] = w;
  s.reorder_window = 1;
  return s;
}

TEST(SyntheticDomains, IdentityLexiconCopiesSource) {
  const auto corpus = generate_domain_corpus(identity_spec(), 20, 1, 6, 3);
  for (const auto& p : corpus) EXPECT_EQ(p.source, p.target);
  const auto one = generate_domain_corpus(identity_spec(), 1, 1, 1, 3);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].source.size(), 1u);
}

TEST(SyntheticDomains, AmbiguousSensesDifferPerDomain) {
  DomainSpec a = identity_spec(), b = identity_spec();
  a.name = "river";
  b.name = "money";
  a.ambiguous["bank"] = "riverbank";
  b.ambiguous["bank"] = "institution";
  const std::vector<std::string> src{"a", "bank"};
  EXPECT_NE(translate_with_spec(a, src), translate_with_spec(b, src));
  EXPECT_EQ(translate_with_spec(a, src).back(), "riverbank");
  EXPECT_THROW(translate_with_spec(a, {"zzz"}), DataError);
}

TEST(SyntheticDomains, ReorderWindowSwapsBlocks) {
  DomainSpec s = identity_spec();
  s.reorder_window = 2;
  EXPECT_EQ(translate_with_spec(s, {"a", "b", "c", "d", "a"}),
            (std::vector<std::string>{"b", "a", "d", "c", "a"}));
}

TEST(SyntheticDomains, Deterministic) {
  const auto specs = make_synthetic_domains({}, 7);
  const auto& general = find_domain(specs, "general");
  EXPECT_EQ(generate_domain_corpus(general, 100, 2, 8, 7), generate_domain_corpus(general, 100, 2, 8, 7));
  EXPECT_NE(generate_domain_corpus(general, 100, 2, 8, 7), generate_domain_corpus(general, 100, 2, 8, 8));
  EXPECT_EQ(make_synthetic_domains({}, 7), specs);
  EXPECT_THROW(find_domain(specs, "nope"), ConfigError);
}

TEST(SyntheticDomains, InDomainUsesItsOwnSenses) {
  SyntheticDomainOptions o;
  o.in_domains = {"medical", "law"};
  const auto specs = make_synthetic_domains(o, 3);
  const auto& med = find_domain(specs, "medical");
  const auto& law = find_domain(specs, "law");
  const auto& general = find_domain(specs, "general");
  ASSERT_FALSE(med.ambiguous.empty());
  for (const auto& [src, tgt] : med.ambiguous) {
    EXPECT_NE(tgt, law.ambiguous.at(src));
    EXPECT_NE(tgt, general.ambiguous.at(src));
    EXPECT_EQ(tgt, find_domain(specs, "medical-alt").ambiguous.at(src));
  }
  for (const auto& s : specs) EXPECT_NO_THROW(s.validate());
}

TEST(SyntheticDomains, CognateRateControlsSharedSpellings) {
  SyntheticDomainOptions o;
  auto shared = [&](double rate) {
    o.cognate_rate = rate;
    const auto general = find_domain(make_synthetic_domains(o, 4), "general");
    std::size_t n = 0;
    for (const auto& [s, t] : general.lexicon) n += s == t;
    return n;
  };
  EXPECT_EQ(shared(0.0), 0u);
  EXPECT_EQ(shared(1.0), static_cast<std::size_t>(o.n_content_words));
  const std::size_t some = shared(0.3);
  EXPECT_GT(some, 0u);
  EXPECT_LT(some, static_cast<std::size_t>(o.n_content_words));
  o.cognate_rate = 1.5;
  EXPECT_THROW(make_synthetic_domains(o, 4), ConfigError);
}

TEST(SyntheticDomains, MixtureRespectsComponents) {
  DomainSpec a = identity_spec();
  DomainSpec b = identity_spec();
  b.name = "b";
  for (auto& [k, v] : b.lexicon) v = k + "'";
  const auto mixed = generate_mixture_corpus({{&a, 1.0}, {&b, 1.0}}, 200, 1, 4, 2);
  std::size_t from_a = 0;
  for (const auto& p : mixed) from_a += p.source == p.target;
  EXPECT_GT(from_a, 60u);
  EXPECT_LT(from_a, 140u);
  EXPECT_THROW(generate_mixture_corpus({{&a, 1.0}, {&b, 0.0}}, 5, 1, 4, 2), ConfigError);
}

TEST(DomainFile, RoundTrip) {
  const auto specs = make_synthetic_domains({}, 5);
  testing::TempDir dir("domains");
  save_domain_specs(dir.path() / "d.toml", specs);
  EXPECT_EQ(load_domain_specs(dir.path() / "d.toml"), specs);
}

TEST(CorpusFiles, ParallelFormat) {
  const auto v = Vocabulary::build({{"a b c d"}}, 1);
  testing::TempDir dir("corpus");
  const auto path = dir.path() / "p.tsv";
  {
    std::ofstream f(path);
    f << "a b\tc d\n";
  }
  const auto pairs = load_parallel_corpus(path, v);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].source.size(), 2u);
  EXPECT_EQ(pairs[0].target.size(), 2u);
  {
    std::ofstream f(path);
    f << "a zz\tc\n";
  }
  EXPECT_EQ(load_parallel_corpus(path, v)[0].source[1], Vocabulary::kUnk);
  {
    std::ofstream f(path);
  }
  EXPECT_TRUE(load_parallel_corpus(path, v).empty());
  {
    std::ofstream f(path);
    f << "a b c\n";
  }
  EXPECT_THROW(load_parallel_corpus(path, v), DataError);
  EXPECT_THROW(load_parallel_corpus(dir.path() / "missing.tsv", v), DataError);
}

TEST(CorpusFiles, SaveLoadRoundTrip) {
  const auto v = Vocabulary::build({{"a b c d e"}}, 1);
  Rng rng(3);
  const auto pairs = testing::random_pairs(rng, 20, static_cast<int>(v.size()));
  testing::TempDir dir("corpus_rt");
  save_parallel_corpus(dir.path() / "p.tsv", pairs, v);
  EXPECT_EQ(load_parallel_corpus(dir.path() / "p.tsv", v), pairs);
  save_lines(dir.path() / "m.txt", targets_of(pairs), v);
  EXPECT_EQ(load_monolingual_corpus(dir.path() / "m.txt", v), targets_of(pairs));
}

TEST(ByteIo, ScalarsRoundTripAndTruncationFails) {
  ByteWriter w;
  w.bytes("ABCD");
  w.u32(7);
  w.u64(1ull << 40);
  w.f32(-1.5f);
  auto bytes = w.buffer();
  ByteReader r(bytes);
  r.expect_magic("ABCD", "test");
  EXPECT_EQ(r.u32(), 7u);
  EXPECT_EQ(r.u64(), 1ull << 40);
  EXPECT_EQ(r.f32(), -1.5f);
  EXPECT_EQ(r.remaining(), 0u);
  bytes.pop_back();
  ByteReader t(bytes);
  t.expect_magic("ABCD", "test");
  t.u32();
  t.u64();
  EXPECT_THROW(t.f32(), FormatError);
}

}  // namespace
}  // namespace knnmt
