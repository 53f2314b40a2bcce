#include "gaplab/eval.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <unordered_map>

#include "gaplab/parallel.hpp"

namespace gaplab {

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

namespace {

std::unordered_map<std::string, std::size_t> ngram_counts(std::span<const int> s, int n) {
  std::unordered_map<std::string, std::size_t> out;
  const auto len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= s.size(); ++i)
    ++out[std::string(reinterpret_cast<const char*>(s.data() + i), len * sizeof(int))];
  return out;
}

void check_order(int max_order) {
  if (max_order < 1 || max_order > 4) throw ConfigError("bleu: max_order must be in [1, 4]");
}

}  // namespace

BleuStats sentence_stats(std::span<const int> hyp, std::span<const int> ref, int max_order) {
  check_order(max_order);
  BleuStats s;
  s.hyp_len = hyp.size();
  s.ref_len = ref.size();
  for (int n = 1; n <= max_order; ++n) {
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    std::size_t m = 0, t = 0;
    for (const auto& [g, c] : h) {
      t += c;
      auto it = r.find(g);
      if (it != r.end()) m += std::min(c, it->second);
    }
    s.matches[static_cast<std::size_t>(n - 1)] = m;
    s.totals[static_cast<std::size_t>(n - 1)] = t;
  }
  return s;
}

double bleu_from_stats(const BleuStats& s, int max_order) {
  check_order(max_order);
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < max_order; ++n) {
    const auto m = s.matches[static_cast<std::size_t>(n)], t = s.totals[static_cast<std::size_t>(n)];
    if (m == 0 || t == 0) return 0.0;
    log_sum += std::log(static_cast<double>(m) / static_cast<double>(t));
  }
  const double bp = s.hyp_len < s.ref_len
                        ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len))
                        : 1.0;
  return 100.0 * bp * std::exp(log_sum / max_order);
}

std::string bleu_signature(int max_order) {
  return "BLEU|nrefs:1|case:mixed|tok:none|smooth:none|order:" + std::to_string(max_order) + "|gaplab-0.1";
}

BleuReport corpus_bleu(std::span<const Sentence> hyps, std::span<const Sentence> refs, int max_order) {
  if (hyps.size() != refs.size())
    throw ConfigError("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                      std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw ConfigError("corpus_bleu: empty input");
  BleuStats total;
  BleuReport r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (hyps[i].ids.empty()) r.empty_hypotheses.push_back(i);
    total += sentence_stats(hyps[i].ids, refs[i].ids, max_order);
  }
  r.bleu = bleu_from_stats(total, max_order);
  for (int n = 0; n < max_order; ++n) {
    const auto t = total.totals[static_cast<std::size_t>(n)];
    r.precisions.push_back(t == 0 ? 0.0
                                  : static_cast<double>(total.matches[static_cast<std::size_t>(n)]) /
                                        static_cast<double>(t));
  }
  r.hyp_len = total.hyp_len;
  r.ref_len = total.ref_len;
  r.brevity_penalty = total.hyp_len == 0 ? 0.0
                      : total.hyp_len < total.ref_len
                          ? std::exp(1.0 - static_cast<double>(total.ref_len) / static_cast<double>(total.hyp_len))
                          : 1.0;
  r.signature = bleu_signature(max_order);
  return r;
}

BleuReport corpus_bleu(std::span<const TokenList> hyps, std::span<const TokenList> refs, int max_order) {
  std::unordered_map<std::string, int> ids;
  auto encode_ids = [&](const TokenList& t) {
    Sentence s;
    for (const auto& w : t) s.ids.push_back(ids.emplace(w, static_cast<int>(ids.size())).first->second);
    return s;
  };
  std::vector<Sentence> h, r;
  for (const auto& t : hyps) h.push_back(encode_ids(t));
  for (const auto& t : refs) r.push_back(encode_ids(t));
  return corpus_bleu(h, r, max_order);
}

// ---------------------------------------------------------------------------

const char* split_name(Split s) {
  switch (s) {
    case Split::full:
      return "full";
    case Split::src_ori:
      return "src_ori";
    case Split::tgt_ori:
      return "tgt_ori";
  }
  return "?";
}

std::vector<Split> parse_splits(std::string_view csv) {
  std::vector<Split> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto end = std::min(csv.find(',', start), csv.size());
    const auto item = csv.substr(start, end - start);
    if (item == "full")
      out.push_back(Split::full);
    else if (item == "src_ori")
      out.push_back(Split::src_ori);
    else if (item == "tgt_ori")
      out.push_back(Split::tgt_ori);
    else
      throw ConfigError("unknown split '" + std::string(item) + "' (expected full, src_ori, tgt_ori)");
    start = end + 1;
  }
  return out;
}

const std::optional<BleuReport>& SplitReport::get(Split s) const {
  switch (s) {
    case Split::src_ori:
      return src_ori;
    case Split::tgt_ori:
      return tgt_ori;
    case Split::full:
      break;
  }
  return full;
}

SplitReport split_scores(const ParallelSet& test, std::vector<Sentence> hyps) {
  if (hyps.size() != test.size()) throw ConfigError("split_scores: hypothesis count differs from the test set");
  SplitReport r;
  r.direction = test.direction();
  const auto refs = references(test);
  r.full = corpus_bleu(hyps, refs);
  for (Origin o : {Origin::source_original, Origin::target_original}) {
    std::vector<Sentence> h, rf;
    for (std::size_t i = 0; i < test.size(); ++i)
      if (test.pairs[i].origin == o) {
        h.push_back(hyps[i]);
        rf.push_back(refs[i]);
      }
    if (h.empty()) continue;
    (o == Origin::source_original ? r.src_ori : r.tgt_ori) = corpus_bleu(h, rf);
  }
  r.hyps = std::move(hyps);
  return r;
}

// ---------------------------------------------------------------------------

SignificanceResult paired_bootstrap(std::span<const BleuStats> a, std::span<const BleuStats> b,
                                    std::size_t n_resamples, std::uint64_t seed) {
  if (n_resamples < 1) throw ConfigError("paired_bootstrap: n_resamples must be >= 1");
  if (a.size() != b.size() || a.empty()) throw ConfigError("paired_bootstrap: lists must be aligned and non-empty");
  const std::size_t n = a.size();
  std::vector<int> outcome(n_resamples, 0);
  parallel_for(n_resamples, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    BleuStats sa, sb;
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = static_cast<std::size_t>(rng.below(n));
      sa += a[i];
      sb += b[i];
    }
    const double ba = bleu_from_stats(sa), bb = bleu_from_stats(sb);
    outcome[r] = ba > bb ? 1 : ba < bb ? -1 : 0;
  });
  SignificanceResult res;
  res.n_resamples = n_resamples;
  res.seed = seed;
  std::size_t wins = 0, losses = 0;
  for (int o : outcome) {
    wins += o == 1;
    losses += o == -1;
  }
  const double nr = static_cast<double>(n_resamples);
  res.win_rate = static_cast<double>(wins) / nr;
  res.loss_rate = static_cast<double>(losses) / nr;
  res.tie_rate = static_cast<double>(n_resamples - wins - losses) / nr;
  res.p_value = 1.0 - res.win_rate;
  res.tie = wins + losses == 0;
  BleuStats ta, tb;
  for (std::size_t i = 0; i < n; ++i) {
    ta += a[i];
    tb += b[i];
  }
  res.bleu_a = bleu_from_stats(ta);
  res.bleu_b = bleu_from_stats(tb);
  return res;
}

SignificanceResult paired_bootstrap(std::span<const Sentence> hyps_a, std::span<const Sentence> hyps_b,
                                    std::span<const Sentence> refs, std::size_t n_resamples, std::uint64_t seed) {
  if (hyps_a.size() != refs.size() || hyps_b.size() != refs.size())
    throw ConfigError("paired_bootstrap: hypothesis and reference lists differ in length");
  std::vector<BleuStats> a, b;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    a.push_back(sentence_stats(hyps_a[i].ids, refs[i].ids));
    b.push_back(sentence_stats(hyps_b[i].ids, refs[i].ids));
  }
  return paired_bootstrap(a, b, n_resamples, seed);
}

double fluency_ppl(const NGramLM& lm, std::span<const TokenList> hyps) {
  if (hyps.empty()) throw ConfigError("fluency_ppl: no hypotheses");
  return perplexity(lm, hyps, true);
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const BleuReport& r) {
  nlohmann::json j{{"bleu", r.bleu},
                   {"precisions", r.precisions},
                   {"brevity_penalty", r.brevity_penalty},
                   {"hyp_len", r.hyp_len},
                   {"ref_len", r.ref_len},
                   {"signature", r.signature}};
  if (!r.empty_hypotheses.empty()) j["empty_hypotheses"] = r.empty_hypotheses;
  return j;
}

nlohmann::json to_json(const SplitReport& r) {
  nlohmann::json j{{"direction", to_string(r.direction)}, {"decode_passes", r.decode_passes}};
  for (Split s : {Split::full, Split::src_ori, Split::tgt_ori}) {
    const auto& rep = r.get(s);
    j[split_name(s)] = rep ? to_json(*rep) : nlohmann::json(nullptr);
  }
  return j;
}

nlohmann::json to_json(const SignificanceResult& r) {
  return {{"p_value", r.p_value},   {"win_rate", r.win_rate}, {"loss_rate", r.loss_rate},
          {"tie_rate", r.tie_rate}, {"tie", r.tie},           {"n_resamples", r.n_resamples},
          {"seed", r.seed},         {"bleu_a", r.bleu_a},     {"bleu_b", r.bleu_b}};
}

std::string significance_mark(std::optional<double> p_value) {
  if (!p_value) return "";
  if (*p_value < 0.01) return "⇑";
  if (*p_value < 0.05) return "↑";
  return "";
}

std::string markdown_table(const std::vector<ReportRow>& rows, const std::vector<Split>& splits) {
  std::ostringstream out;
  out << "| system | direction |";
  for (Split s : splits) out << ' ' << split_name(s) << " |";
  out << "\n|---|---|";
  for (std::size_t i = 0; i < splits.size(); ++i) out << "---:|";
  out << '\n';
  char buf[64];
  for (const auto& row : rows) {
    out << "| " << row.system << " | " << row.direction << " |";
    for (Split s : splits) {
      const auto k = static_cast<std::size_t>(s);
      if (!row.bleu[k]) {
        out << " - |";
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.2f", *row.bleu[k]);
      out << ' ' << buf;
      if (row.delta[k]) {
        std::snprintf(buf, sizeof buf, "%+.2f", *row.delta[k]);
        out << " (" << buf << significance_mark(row.p_value[k]) << ')';
      }
      out << " |";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace gaplab
