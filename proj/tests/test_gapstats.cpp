#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "gaplab/eval.hpp"
#include "gaplab/gapstats.hpp"

using namespace gaplab;

namespace {

std::vector<TokenList> lines(std::initializer_list<const char*> xs) {
  std::vector<TokenList> out;
  for (const char* x : xs) out.push_back(tokenize(x));
  return out;
}

}  // namespace

TEST_CASE("unigram Kneser-Ney on 'a a b' matches the hand computation") {
  const auto c = lines({"a a b"});
  const auto lm = train_ngram_lm(c, 1);
  // counts a:2 b:1 </s>:1, N = 4, D = n1/(n1+2n2) = 2/4, |V| = {a, b, </s>, <unk>}
  CHECK(lm.vocab_size() == 4);
  CHECK(lm.discount(0) == doctest::Approx(0.5));
  const std::vector<int> none;
  CHECK(lm.prob(lm.id("a"), none) == doctest::Approx(0.46875).epsilon(1e-15));
  CHECK(lm.prob(lm.id("b"), none) == doctest::Approx(0.21875).epsilon(1e-15));
  CHECK(lm.prob(NGramLM::kEos, none) == doctest::Approx(0.21875).epsilon(1e-15));
  CHECK(lm.prob(lm.id("never-seen"), none) == doctest::Approx(0.09375).epsilon(1e-15));
}

TEST_CASE("bigram Kneser-Ney perplexity matches a brute-force enumeration") {
  const auto c = lines({"a b a", "b b", "a c"});
  const auto lm = train_ngram_lm(c, 2);
  // Bigram counts (with <s> padding): <s>a 2, <s>b 1, ab 1, ba 1, a</s> 1, bb 1,
  // b</s> 1, ac 1, c</s> 1. n1 = 8, n2 = 1 -> D2 = 8/10.
  // Unigram continuation counts: a {<s>, b} = 2, b {<s>, a, b} = 3, c {a} = 1,
  // </s> {a, b, c} = 3; total 9, n1 = 1, n2 = 1 -> D1 = 1/3.
  const double V = 5.0;  // a b c </s> <unk>
  const double d1 = 1.0 / 3.0, d2 = 0.8;
  std::map<std::string, double> cont{{"a", 2}, {"b", 3}, {"c", 1}, {"</s>", 3}, {"<unk>", 0}};
  auto p1 = [&](const std::string& w) {
    return std::max(cont[w] - d1, 0.0) / 9.0 + d1 * 4.0 / 9.0 / V;
  };
  std::map<std::pair<std::string, std::string>, double> big{
      {{"<s>", "a"}, 2}, {{"<s>", "b"}, 1}, {{"a", "b"}, 1}, {{"b", "a"}, 1}, {{"a", "</s>"}, 1},
      {{"b", "b"}, 1},   {{"b", "</s>"}, 1}, {{"a", "c"}, 1}, {{"c", "</s>"}, 1}};
  auto p2 = [&](const std::string& h, const std::string& w) {
    double total = 0, distinct = 0, cw = 0;
    for (const auto& [k, n] : big)
      if (k.first == h) {
        total += n;
        ++distinct;
        if (k.second == w) cw = n;
      }
    return std::max(cw - d2, 0.0) / total + d2 * distinct / total * p1(w);
  };
  CHECK(lm.discount(1) == doctest::Approx(d2));
  CHECK(lm.discount(0) == doctest::Approx(d1));
  const auto test = lines({"a b", "c a"});
  double logp = 0;
  int n = 0;
  for (const auto& s : test) {
    std::string h = "<s>";
    auto words = s;
    words.push_back("</s>");
    for (const auto& w : words) {
      logp += std::log(p2(h, w));
      ++n;
      h = w;
    }
  }
  CHECK(perplexity(lm, test) == doctest::Approx(std::exp(-logp / n)).epsilon(1e-12));
}

TEST_CASE("conditional distributions normalize for random contexts") {
  SynthSpec spec;
  const auto w = expand(spec);
  const auto raw = sample_natural(w, Lang::A, 300, 4);
  const auto lm = train_ngram_lm(raw.sentences, 4);
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ctx;
    const auto len = rng.below(4);
    for (std::uint64_t i = 0; i < len; ++i) {
      const auto& s = raw.sentences[rng.below(raw.sentences.size())];
      ctx.push_back(lm.id(s[rng.below(s.size())]));
    }
    double total = 0;
    for (int id = 0; id < static_cast<int>(lm.words().size()); ++id)
      if (id != NGramLM::kBos) total += lm.prob(id, ctx);
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("starved orders fall back to add-k and still normalize") {
  const auto lm = train_ngram_lm(lines({"x y z"}), 3);  // every count is 1
  const std::vector<int> ctx{lm.id("x"), lm.id("y")};
  double total = 0;
  for (int id = 0; id < static_cast<int>(lm.words().size()); ++id)
    if (id != NGramLM::kBos) total += lm.prob(id, ctx);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lm.prob(lm.id("z"), ctx) == doctest::Approx(1.01 / (1.0 + 0.01 * 5)).epsilon(1e-12));
}

TEST_CASE("single-type corpus under an unsmoothed unigram model has perplexity one") {
  const auto c = lines({"a a a"});
  const auto lm = train_ngram_lm(c, 1, Smoothing{Smoothing::Kind::mle, 0.0});
  CHECK(perplexity(lm, c, false) == doctest::Approx(1.0).epsilon(1e-15));
  // With the end-of-sentence event counted the model sees two types.
  CHECK(perplexity(lm, c, true) > 1.0);
}

TEST_CASE("perplexity ordering, invariance and serialization") {
  SynthSpec spec;
  const auto w = expand(spec);
  const auto raw = sample_natural(w, Lang::B, 200, 8);
  const auto lm = train_ngram_lm(raw.sentences, 4);
  const std::vector<TokenList> sample(raw.sentences.begin(), raw.sentences.begin() + 50);
  auto shuffled = sample;
  Rng rng(1);
  for (auto& s : shuffled) rng.shuffle(s);
  CHECK(fluency_ppl(lm, sample) < fluency_ppl(lm, shuffled));
  auto reordered = sample;
  std::reverse(reordered.begin(), reordered.end());
  CHECK(perplexity(lm, reordered) == doctest::Approx(perplexity(lm, sample)).epsilon(1e-12));
  CHECK(perplexity(lm, sample) >= 1.0);
  const auto g = style_gap_ppl(lm, sample, sample);
  CHECK(g.ppl_natural == g.ppl_translated);

  const auto again = train_ngram_lm(raw.sentences, 4);
  CHECK(again.hash() == lm.hash());
  const auto back = NGramLM::deserialize(lm.serialize());
  CHECK(back.hash() == lm.hash());
  CHECK(perplexity(back, sample) == perplexity(lm, sample));
  CHECK_THROWS_AS(NGramLM::deserialize("GAPLABLM"), ConfigError);
  CHECK_THROWS_AS(train_ngram_lm(raw.sentences, 0), ConfigError);
  CHECK_THROWS_AS(fluency_ppl(lm, std::vector<TokenList>{}), ConfigError);
}

TEST_CASE("tf-idf similarity matches hand arithmetic on two-chunk corpora") {
  const auto a = lines({"x y", "x"});
  const auto b = lines({"y z", "z w"});
  TfidfOptions opt{1, 0};
  // Chunks: A1 {x,y} A2 {x} B1 {y,z} B2 {z,w}; N = 4.
  const double i2 = std::log(5.0 / 3.0) + 1.0;  // df 2: x, y, z
  const double i1 = std::log(5.0 / 2.0) + 1.0;  // df 1: w
  // Term order w x y z.
  auto unit = [](std::vector<double> v) {
    double n = 0;
    for (double x : v) n += x * x;
    for (double& x : v) x /= std::sqrt(n);
    return v;
  };
  const auto a1 = unit({0, i2, i2, 0}), a2 = unit({0, i2, 0, 0});
  const auto b1 = unit({0, 0, i2, i2}), b2 = unit({i1, 0, 0, i2});
  std::vector<double> ca(4), cb(4);
  for (int t = 0; t < 4; ++t) {
    ca[static_cast<std::size_t>(t)] = a1[static_cast<std::size_t>(t)] + a2[static_cast<std::size_t>(t)];
    cb[static_cast<std::size_t>(t)] = b1[static_cast<std::size_t>(t)] + b2[static_cast<std::size_t>(t)];
  }
  ca = unit(ca);
  cb = unit(cb);
  double expect = 0;
  for (int t = 0; t < 4; ++t) expect += ca[static_cast<std::size_t>(t)] * cb[static_cast<std::size_t>(t)];
  CHECK(content_similarity(a, b, opt) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(content_similarity(b, a, opt) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(content_similarity(a, a, opt) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(content_similarity(lines({"p q"}), lines({"r s"}), opt) == 0.0);
  CHECK_THROWS_AS(content_similarity(lines({"p q"}), lines({"p"}), TfidfOptions{1, 5}), ConfigError);
  const std::array<std::vector<TokenList>, 1> one{lines({"s s s t t u"})};
  CHECK(pooled_stopwords(one, 2) == std::vector<std::string>{"s", "t"});
}

TEST_CASE("entity frequency ranks with lexicographic ties") {
  const std::vector<std::string> inv{"E1", "E2", "E3", "E0"};
  const auto c = lines({"x E1 E2", "E1 y", "E1 E3 E0"});
  const auto f = entity_frequency(c, inv, 10);
  REQUIRE(f.size() == 4);
  CHECK(f[0].entity == "E1");
  CHECK(f[0].count == 3);
  CHECK(f[1].entity == "E0");
  CHECK(f[2].entity == "E2");
  auto rev = c;
  std::reverse(rev.begin(), rev.end());
  CHECK(entity_frequency(rev, inv, 2).size() == 2);
  CHECK(entity_frequency(rev, inv, 10)[0].count == 3);
  CHECK(entity_frequency(lines({"a b"}), inv, 10).empty());
}

TEST_CASE("entity accuracy uses multiset matching") {
  const std::vector<std::string> inv{"E1", "E2"};
  const auto r = entity_translation_accuracy(lines({"E1 x E1 E2"}), lines({"E1 E1 E2"}), inv);
  CHECK(*r.accuracy == 1.0);
  const auto h = entity_translation_accuracy(lines({"E1 x E2"}), lines({"E1 E1 E2"}), inv);
  CHECK(h.matched == 2);
  CHECK(h.total == 3);
  CHECK(*h.accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(*entity_translation_accuracy(lines({"x"}), lines({"E1"}), inv).accuracy == 0.0);
  CHECK_FALSE(entity_translation_accuracy(lines({"x"}), lines({"y"}), inv).accuracy.has_value());
}
