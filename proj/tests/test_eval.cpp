#include <doctest.h>

#include <cmath>

#include "gaplab/eval.hpp"

using namespace gaplab;

namespace {

TokenList toks(const std::string& s) { return tokenize(s); }

std::vector<TokenList> lines(std::initializer_list<const char*> xs) {
  std::vector<TokenList> out;
  for (const char* x : xs) out.push_back(toks(x));
  return out;
}

}  // namespace

TEST_CASE("BLEU hand-derived brevity case") {
  const auto h = lines({"a b c d"}), r = lines({"a b c d e"});
  const auto rep = corpus_bleu(h, r);
  for (double p : rep.precisions) CHECK(p == 1.0);
  CHECK(rep.brevity_penalty == doctest::Approx(std::exp(-0.25)).epsilon(1e-15));
  CHECK(std::round(rep.bleu * 1e4) / 1e4 == doctest::Approx(77.8801));
  CHECK(rep.hyp_len == 4);
  CHECK(rep.ref_len == 5);
}

TEST_CASE("BLEU identity, zero overlap and clipping") {
  const auto r = lines({"the cat sat on the mat", "a dog ran"});
  CHECK(corpus_bleu(r, r).bleu == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(corpus_bleu(lines({"the cat sat on", "a dog"}), lines({"on sat cat the", "dog a"})).bleu == 0.0);
  const auto clip = corpus_bleu(lines({"the the the the"}), lines({"the cat"}), 1);
  CHECK(clip.precisions[0] == doctest::Approx(0.25));
  CHECK_THROWS_AS(corpus_bleu(lines({"a"}), lines({"a", "b"})), ConfigError);
  CHECK(corpus_bleu(lines({"a b c d"}), lines({"a b c d"})).signature.find("smooth:none") != std::string::npos);
}

TEST_CASE("BLEU rises along a nested-prefix family") {
  const auto ref = lines({"w1 w2 w3 w4 w5 w6 w7 w8 w9 w10"});
  double last = -1.0;
  for (int n = 4; n <= 10; ++n) {
    std::string h;
    for (int i = 1; i <= n; ++i) h += "w" + std::to_string(i) + " ";
    const double b = corpus_bleu(lines({h.c_str()}), ref).bleu;
    CHECK(b > last);
    last = b;
  }
  CHECK(last == doctest::Approx(100.0));
}

TEST_CASE("BLEU statistics add up to the corpus score") {
  const auto h = lines({"a b c x", "d e f g h"}), r = lines({"a b c d", "d e f g"});
  BleuStats s;
  std::vector<Sentence> hs, rs;
  for (std::size_t i = 0; i < 2; ++i) {
    const Vocab v({"a", "b", "c", "d", "e", "f", "g", "h", "x"});
    hs.push_back(encode(h[i], Lang::B, v));
    rs.push_back(encode(r[i], Lang::B, v));
    s += sentence_stats(hs.back().ids, rs.back().ids);
  }
  CHECK(bleu_from_stats(s) == doctest::Approx(corpus_bleu(hs, rs).bleu).epsilon(1e-15));
}

TEST_CASE("empty hypotheses are flagged and score nothing") {
  std::vector<Sentence> h{Sentence{{}, Lang::B}, Sentence{{6, 7, 8, 9}, Lang::B}};
  std::vector<Sentence> r{Sentence{{6, 7}, Lang::B}, Sentence{{6, 7, 8, 9}, Lang::B}};
  const auto rep = corpus_bleu(h, r);
  CHECK(rep.empty_hypotheses == std::vector<std::size_t>{0});
  CHECK(rep.hyp_len == 4);
  std::vector<Sentence> all_empty{Sentence{{}, Lang::B}};
  CHECK(corpus_bleu(all_empty, std::span(r).first(1)).bleu == 0.0);
}

TEST_CASE("split scores partition the test set") {
  ParallelSet set;
  auto S = [](std::vector<int> ids, Lang l) { return Sentence{std::move(ids), l}; };
  set.pairs.push_back({S({6, 7, 8, 9}, Lang::A), S({10, 11, 12, 13}, Lang::B), Origin::source_original});
  set.pairs.push_back({S({6, 7, 8}, Lang::A), S({10, 11, 12, 14, 15}, Lang::B), Origin::target_original});
  std::vector<Sentence> hyps{S({10, 11, 12, 13}, Lang::B), S({10, 11, 12, 14}, Lang::B)};
  const auto rep = split_scores(set, hyps);
  REQUIRE(rep.src_ori);
  REQUIRE(rep.tgt_ori);
  CHECK(rep.src_ori->bleu == doctest::Approx(100.0));
  CHECK(rep.tgt_ori->bleu < 100.0);
  CHECK(rep.full->hyp_len == rep.src_ori->hyp_len + rep.tgt_ori->hyp_len);

  const auto only_src = filter_origin(set, Origin::source_original);
  const auto r2 = split_scores(only_src, {hyps[0]});
  CHECK_FALSE(r2.tgt_ori.has_value());
  CHECK(r2.full->bleu == r2.src_ori->bleu);
  CHECK(parse_splits("full,tgt_ori") == std::vector<Split>{Split::full, Split::tgt_ori});
  CHECK_THROWS_AS(parse_splits("full,natural"), ConfigError);
}

TEST_CASE("bootstrap extremes") {
  std::vector<Sentence> refs, good, bad;
  for (int i = 0; i < 6; ++i) {
    refs.push_back(Sentence{{6 + i, 7 + i, 8 + i, 9 + i, 10 + i}, Lang::B});
    good.push_back(refs.back());
    bad.push_back(Sentence{{}, Lang::B});
  }
  const auto same = paired_bootstrap(good, good, refs, 200, 3);
  CHECK(same.win_rate == 0.0);
  CHECK(same.tie);
  CHECK(same.p_value == 1.0);
  const auto better = paired_bootstrap(good, bad, refs, 200, 3);
  CHECK(better.win_rate == 1.0);
  CHECK(better.p_value == 0.0);
  CHECK_THROWS_AS(paired_bootstrap(good, bad, refs, 0, 3), ConfigError);
  const auto again = paired_bootstrap(good, bad, refs, 200, 3);
  CHECK(again.p_value == better.p_value);
}

TEST_CASE("bootstrap agrees with exhaustive enumeration on three sentences") {
  // System A wins on sentences 0 and 1, loses on 2.
  std::vector<Sentence> refs{Sentence{{6, 7, 8, 9, 10}, Lang::B}, Sentence{{11, 12, 13, 14}, Lang::B},
                             Sentence{{15, 16, 17, 18, 19, 20}, Lang::B}};
  std::vector<Sentence> a{refs[0], Sentence{{11, 12, 13, 9}, Lang::B}, Sentence{{15, 16, 9, 9, 9, 9}, Lang::B}};
  std::vector<Sentence> b{Sentence{{6, 7, 8, 9, 11}, Lang::B}, Sentence{{11, 9, 13, 14}, Lang::B}, refs[2]};
  std::vector<BleuStats> sa, sb;
  for (int i = 0; i < 3; ++i) {
    sa.push_back(sentence_stats(a[static_cast<std::size_t>(i)].ids, refs[static_cast<std::size_t>(i)].ids));
    sb.push_back(sentence_stats(b[static_cast<std::size_t>(i)].ids, refs[static_cast<std::size_t>(i)].ids));
  }
  int wins = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) {
        BleuStats x, y;
        for (int idx : {i, j, k}) {
          x += sa[static_cast<std::size_t>(idx)];
          y += sb[static_cast<std::size_t>(idx)];
        }
        wins += bleu_from_stats(x) > bleu_from_stats(y);
      }
  const double exact_p = 1.0 - wins / 27.0;
  CHECK(wins > 0);
  CHECK(wins < 27);
  for (std::size_t n : {8u, 2000u}) {
    const auto res = paired_bootstrap(a, b, refs, n, 11);
    CHECK(std::abs(res.p_value - exact_p) <= 2.0 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("markdown table shows deltas and marks") {
  std::vector<ReportRow> rows(2);
  rows[0] = {"unmt", "A->B", {30.0, 28.0, 32.0}, {}, {}};
  rows[1] = {"unmt_st", "A->B", {31.0, 29.5, 32.1}, {1.0, 1.5, 0.1}, {0.2, 0.004, 0.6}};
  const auto md = markdown_table(rows, {Split::full, Split::src_ori, Split::tgt_ori});
  CHECK(md.find("| system | direction | full | src_ori | tgt_ori |") != std::string::npos);
  CHECK(md.find("29.50 (+1.50⇑)") != std::string::npos);
  CHECK(md.find("31.00 (+1.00)") != std::string::npos);
  CHECK(significance_mark(0.03) == "↑");
}
