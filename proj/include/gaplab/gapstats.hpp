#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gaplab/corpus.hpp"

namespace gaplab {

// ---------------------------------------------------------------------------
// N-gram language model

struct Smoothing {
  /// kneser_ney: interpolated, one discount per order estimated as
  /// n1 / (n1 + 2 n2); an order without both singletons and doubletons falls
  /// back to add-k at that level. add_k: additive at the highest order only.
  /// mle: relative frequencies, unseen events get probability 0.
  enum class Kind { kneser_ney, add_k, mle };
  Kind kind = Kind::kneser_ney;
  double k = 0.01;
};

const char* smoothing_name(Smoothing::Kind k);
Smoothing::Kind parse_smoothing(std::string_view s);

class NGramLM {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kEos = 1;
  static constexpr int kBos = 2;  // context padding only, never predicted

  NGramLM() = default;

  int order() const { return order_; }
  const Smoothing& smoothing() const { return smoothing_; }
  /// Prediction vocabulary size: known words plus unk and eos.
  int vocab_size() const { return static_cast<int>(words_.size()) - 1; }
  const std::vector<std::string>& words() const { return words_; }
  int id(const std::string& w) const;

  /// P(w | history); only the last order-1 ids of the history are used.
  double prob(int w, std::span<const int> history) const;
  /// Sentence ids with eos appended when requested.
  std::vector<int> ids(const TokenList& sentence, bool with_eos) const;
  double discount(int level) const { return discount_[static_cast<std::size_t>(level)]; }

  std::string serialize() const;
  static NGramLM deserialize(const std::string& bytes);
  std::uint64_t hash() const { return fnv64(serialize()); }

  friend NGramLM train_ngram_lm(std::span<const TokenList> corpus, int order, const Smoothing& s,
                                std::span<const std::string> extra_vocab);

 private:
  struct Context {
    double total = 0.0;       // sum of (adjusted) counts of followers
    std::size_t distinct = 0;  // number of distinct followers
    std::unordered_map<int, double> next;
  };
  using Table = std::unordered_map<std::string, Context>;

  static std::string key(std::span<const int> ids);
  void build();
  double prob_level(int level, int w, std::span<const int> ctx) const;

  int order_ = 0;
  Smoothing smoothing_;
  std::vector<std::string> words_;  // id -> word; ids 0..2 are <unk>, </s>, <s>
  std::unordered_map<std::string, int> index_;
  std::vector<std::unordered_map<std::string, std::uint64_t>> raw_;  // per order: n-gram -> count
  std::vector<Table> tables_;                                       // per order, smoothed view
  std::vector<double> discount_;
  std::vector<bool> starved_;
};

/// Trains on whitespace tokens. `extra_vocab` widens the prediction vocabulary
/// (e.g. the full word list of the language) without adding counts.
NGramLM train_ngram_lm(std::span<const TokenList> corpus, int order = 4, const Smoothing& s = {},
                       std::span<const std::string> extra_vocab = {});

/// exp(-mean log-prob per token); eos counted as a token when include_eos.
/// Without eos, word probabilities are conditioned on the sentence continuing.
double perplexity(const NGramLM& lm, std::span<const TokenList> corpus, bool include_eos = true);

void save_lm(const std::filesystem::path& path, const NGramLM& lm);
NGramLM load_lm(const std::filesystem::path& path);

struct StyleGap {
  double ppl_natural = 0.0;
  double ppl_translated = 0.0;
};

StyleGap style_gap_ppl(const NGramLM& lm, std::span<const TokenList> natural,
                       std::span<const TokenList> translated);

// ---------------------------------------------------------------------------
// Content similarity

struct TfidfOptions {
  std::size_t chunk_size = 100;
  std::size_t stopword_k = 50;
};

/// Top-k tokens by pooled frequency (ties lexicographic).
std::vector<std::string> pooled_stopwords(std::span<const std::vector<TokenList>> corpora, std::size_t k);

struct TfidfProfile {
  std::vector<std::string> terms;             // column order
  std::vector<std::vector<double>> chunks;    // L2-normalized tf-idf rows
  std::vector<double> centroid;               // unit norm (or all zero)
};

/// Builds per-corpus profiles over a shared term space and IDF (computed on
/// the union of chunks). idf(t) = ln((1 + N) / (1 + df(t))) + 1.
std::vector<TfidfProfile> tfidf_profiles(std::span<const std::vector<TokenList>> corpora,
                                         const TfidfOptions& opt = {});

double content_similarity(const std::vector<TokenList>& a, const std::vector<TokenList>& b,
                          const TfidfOptions& opt = {});

// ---------------------------------------------------------------------------
// Entities

struct EntityCount {
  std::string entity;
  std::size_t count = 0;
};

std::vector<EntityCount> entity_frequency(std::span<const TokenList> corpus,
                                          std::span<const std::string> inventory, std::size_t top_k = 10);

struct EntityAccuracy {
  std::size_t matched = 0;
  std::size_t total = 0;
  std::optional<double> accuracy;  // absent when the references hold no entity
};

EntityAccuracy entity_translation_accuracy(std::span<const TokenList> hyps, std::span<const TokenList> refs,
                                           std::span<const std::string> inventory);

nlohmann::json to_json(const StyleGap& g);
nlohmann::json to_json(const std::vector<EntityCount>& e);
nlohmann::json to_json(const EntityAccuracy& a);

}  // namespace gaplab
