#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaplab/corpus.hpp"
#include "gaplab/gapstats.hpp"
#include "gaplab/model.hpp"

namespace gaplab {

// ---------------------------------------------------------------------------
// BLEU

/// Sufficient statistics of one or more hypothesis/reference pairs.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  BleuStats& operator+=(const BleuStats& o);
};

BleuStats sentence_stats(std::span<const int> hyp, std::span<const int> ref, int max_order = 4);
double bleu_from_stats(const BleuStats& s, int max_order = 4);

struct BleuReport {
  double bleu = 0.0;
  std::vector<double> precisions;  // p1..p_max_order
  double brevity_penalty = 0.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  std::vector<std::size_t> empty_hypotheses;  // indices; they score zero matches
  std::string signature;
};

/// Unsmoothed corpus BLEU over token ids, multi-bleu semantics.
BleuReport corpus_bleu(std::span<const Sentence> hyps, std::span<const Sentence> refs, int max_order = 4);
BleuReport corpus_bleu(std::span<const TokenList> hyps, std::span<const TokenList> refs, int max_order = 4);

std::string bleu_signature(int max_order);

// ---------------------------------------------------------------------------
// Origin-split evaluation

enum class Split { full, src_ori, tgt_ori };
const char* split_name(Split s);
std::vector<Split> parse_splits(std::string_view csv);

struct SplitReport {
  Direction direction;
  std::optional<BleuReport> full, src_ori, tgt_ori;
  std::vector<Sentence> hyps;  // aligned with the test set
  std::size_t decode_passes = 0;
  const std::optional<BleuReport>& get(Split s) const;
};

/// Scores precomputed hypotheses on each split; empty splits are absent.
SplitReport split_scores(const ParallelSet& test, std::vector<Sentence> hyps);

template <typename Scalar>
SplitReport split_eval(const ModelParams<Scalar>& p, const ParallelSet& test, const DecodeSpec& decode,
                       std::size_t chunk = 64) {
  const auto dir = test.direction();
  const auto src = sources(test);
  std::vector<Sentence> hyps;
  hyps.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); i += chunk) {
    const auto part = translate(p, std::span<const Sentence>(src).subspan(i, std::min(chunk, src.size() - i)),
                                dir, decode);
    hyps.insert(hyps.end(), part.begin(), part.end());
  }
  auto r = split_scores(test, std::move(hyps));
  r.decode_passes = 1;
  return r;
}

// ---------------------------------------------------------------------------
// Significance

struct SignificanceResult {
  double p_value = 1.0;
  double win_rate = 0.0;   // resamples with BLEU(A) > BLEU(B)
  double loss_rate = 0.0;  // resamples with BLEU(A) < BLEU(B)
  double tie_rate = 0.0;
  std::size_t n_resamples = 0;
  std::uint64_t seed = 0;
  double bleu_a = 0.0;
  double bleu_b = 0.0;
  bool tie = false;  // every resample tied
};

/// Paired bootstrap over sentence indices; resample r draws from its own
/// stream derive_seed(seed, r), so results do not depend on threading.
SignificanceResult paired_bootstrap(std::span<const Sentence> hyps_a, std::span<const Sentence> hyps_b,
                                    std::span<const Sentence> refs, std::size_t n_resamples = 1000,
                                    std::uint64_t seed = 1);

/// Same procedure over precomputed per-sentence statistics.
SignificanceResult paired_bootstrap(std::span<const BleuStats> a, std::span<const BleuStats> b,
                                    std::size_t n_resamples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Fluency

double fluency_ppl(const NGramLM& lm, std::span<const TokenList> hyps);

// ---------------------------------------------------------------------------
// Reports

nlohmann::json to_json(const BleuReport& r);
nlohmann::json to_json(const SplitReport& r);
nlohmann::json to_json(const SignificanceResult& r);

struct ReportRow {
  std::string system;
  std::string direction;
  std::array<std::optional<double>, 3> bleu;   // full, src_ori, tgt_ori
  std::array<std::optional<double>, 3> delta;  // against a baseline row, if any
  std::array<std::optional<double>, 3> p_value;
};

/// Significance mark in the style of translation papers: "⇑" for p < 0.01,
/// "↑" for p < 0.05, empty otherwise.
std::string significance_mark(std::optional<double> p_value);

/// Markdown table with one column per requested split. Cells with a delta
/// read "31.20 (+0.80⇑)".
std::string markdown_table(const std::vector<ReportRow>& rows, const std::vector<Split>& splits);

}  // namespace gaplab
