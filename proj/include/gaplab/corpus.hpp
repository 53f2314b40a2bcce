#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gaplab/common.hpp"
#include "gaplab/rng.hpp"

namespace gaplab {

// ---------------------------------------------------------------------------
// Vocabulary

/// Dense token space shared by both languages. Ids 0..5 are reserved for
/// pad, bos, eos, unk and the two language tags; regular tokens follow.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kTagA = 4;
  static constexpr int kTagB = 5;
  static constexpr int kNumSpecial = 6;

  Vocab();
  /// Specials are prepended; `regular` must not repeat or contain specials.
  explicit Vocab(std::vector<std::string> regular);

  int size() const { return static_cast<int>(tokens_.size()); }
  /// Id of `token`, or kUnk when absent.
  int id(std::string_view token) const;
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  static int lang_tag(Lang l) { return l == Lang::A ? kTagA : kTagB; }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Corpora

using TokenList = std::vector<std::string>;

/// Whitespace-tokenized text before vocabulary lookup.
struct RawCorpus {
  Lang lang = Lang::A;
  std::vector<TokenList> sentences;
};

struct Sentence {
  std::vector<int> ids;
  Lang lang = Lang::A;
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct MonoCorpus {
  Lang lang = Lang::A;
  std::vector<Sentence> sentences;
  std::size_t size() const { return sentences.size(); }
};

enum class Origin : std::uint8_t { source_original, target_original };
enum class Provenance : std::uint8_t { natural, oracle_translated, model_translated };

const char* origin_tag(Origin o);  // "src_ori" / "tgt_ori"
Origin parse_origin(std::string_view s);

struct ParallelPair {
  Sentence src;
  Sentence ref;
  Origin origin = Origin::source_original;
  Provenance provenance = Provenance::oracle_translated;
};

struct ParallelSet {
  std::vector<ParallelPair> pairs;
  std::size_t size() const { return pairs.size(); }
  /// Direction of the set; throws on an empty or inconsistent set.
  Direction direction() const;
};

/// Same pairs seen from the other side: src/ref swapped, origin flipped.
ParallelSet reversed(const ParallelSet& set);
ParallelSet filter_origin(const ParallelSet& set, Origin origin);
std::vector<Sentence> sources(const ParallelSet& set);
std::vector<Sentence> references(const ParallelSet& set);

/// Checks the Sentence invariants against a vocabulary.
void validate(const Sentence& s, const Vocab& vocab);

Sentence encode(const TokenList& tokens, Lang lang, const Vocab& vocab);
TokenList decode(const Sentence& s, const Vocab& vocab);
MonoCorpus encode(const RawCorpus& raw, const Vocab& vocab);
RawCorpus decode(const MonoCorpus& corpus, const Vocab& vocab);
TokenList tokenize(std::string_view line);
std::string detokenize(const TokenList& tokens);

/// Tokens with count >= min_count plus `extra` (always kept), ordered by
/// frequency descending then lexicographically.
Vocab build_vocab(std::span<const RawCorpus> corpora, int min_count,
                  std::span<const std::string> extra = {});

// ---------------------------------------------------------------------------
// Synthetic language pair

enum class WordClass : std::uint8_t { det, adv, prep, adj, noun, verb, entity, punct };

struct ReorderRule {
  /// "none", "swap_pairs" or "reverse_windows".
  std::string pattern = "swap_pairs";
  int window = 2;
};

struct SuffixRule {
  bool enabled = false;
  std::string marker_a = "~tA";
  std::string marker_b = "~tB";
};

struct SynthSpec {
  std::uint64_t seed = 1;
  int vocab_size = 160;  // regular word types per language, punctuation excluded
  int num_topics = 4;
  int entities_per_topic = 6;
  int function_words = 12;  // split across determiners, adverbs, prepositions
  std::array<std::vector<double>, 2> topic_mixtures{std::vector<double>{0.7, 0.1, 0.1, 0.1},
                                                    std::vector<double>{0.1, 0.7, 0.1, 0.1}};
  double topic_focus = 0.85;  // chance a content slot uses the sentence topic
  double style_skew = 0.6;    // 0: both languages share phrase-order statistics
  ReorderRule reorder_rule;
  SuffixRule suffix_rule;
  std::array<int, 2> sentence_length_range{4, 20};
  double zipf_exponent = 1.0;
};

void validate(const SynthSpec& spec);
nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

/// Fully expanded language pair: word lists, lexicon and phrase grammar.
struct SynthWorld {
  SynthSpec spec;
  struct Word {
    std::array<std::string, 2> form;  // surface form in A and B
    WordClass cls;
    int topic;  // -1 for topic-independent words
  };
  std::vector<Word> words;  // lexicon: words[i].form[A] <-> words[i].form[B]
  std::array<std::unordered_map<std::string, int>, 2> index;  // form -> word index
  /// Phrase kinds are (modifier, head) class pairs in canonical order.
  std::vector<std::array<WordClass, 2>> phrase_kinds;
  std::array<std::vector<std::vector<double>>, 2> phrase_transitions;  // per language, [kind+1][kind]
  std::vector<std::vector<int>> by_class_topic;  // [cls * (topics+1) + topic+1] -> word indices

  const std::vector<int>& bucket(WordClass c, int topic) const;
  std::vector<std::string> all_forms() const;
  /// Entity inventory of one language (surface forms).
  std::vector<std::string> entities(Lang l) const;
  /// Entity forms whose home topic is `topic`.
  std::vector<std::string> entities_of_topic(Lang l, int topic) const;
  /// Content words (noun/verb/adj) of a topic.
  std::vector<std::string> topic_words(Lang l, int topic) const;
  /// (A form, B form) for every lexicon entry.
  std::vector<std::pair<std::string, std::string>> lexicon_pairs() const;
};

SynthWorld expand(const SynthSpec& spec);

/// Applies `rule` to a token sequence. Every supported pattern is an
/// involution, so the same call also inverts it.
template <typename T>
void apply_reorder(std::vector<T>& tokens, const ReorderRule& rule);

/// Deterministic reference translator over token strings.
TokenList oracle_translate(const TokenList& s, Direction dir, const SynthWorld& world);
/// Id-level oracle; the output uses the same vocabulary.
Sentence oracle_translate(const Sentence& s, Direction dir, const SynthWorld& world,
                          const Vocab& vocab);

struct SynthSizes {
  std::size_t mono_a = 2000;
  std::size_t mono_b = 2000;
  std::size_t test_src_ori = 200;
  std::size_t test_tgt_ori = 200;
  std::size_t parallel = 1000;
  std::size_t valid_src_ori = 50;
  std::size_t valid_tgt_ori = 50;
};

struct SynthData {
  Vocab vocab;
  MonoCorpus mono_a;
  MonoCorpus mono_b;
  ParallelSet test;            // A -> B, both origins
  ParallelSet parallel_train;  // A -> B, half of each origin
  ParallelSet valid;           // A -> B, both origins
};

/// Natural sentences of one language, drawn from its topic mixture and
/// phrase-order statistics. Pure function of (world, lang, count, seed).
RawCorpus sample_natural(const SynthWorld& world, Lang lang, std::size_t count,
                         std::uint64_t seed);

SynthData gen_synthetic_pair(const SynthSpec& spec, const SynthSizes& sizes);
SynthData gen_synthetic_pair(const SynthWorld& world, const SynthSizes& sizes);

// ---------------------------------------------------------------------------
// Denoising noise and batching

struct NoiseSpec {
  double drop_prob = 0.1;
  double blank_prob = 0.1;
  int shuffle_window = 3;
};

void validate(const NoiseSpec& noise);
Sentence apply_noise(const Sentence& s, const NoiseSpec& noise, Rng& rng);

using Batch = std::vector<std::size_t>;  // indices into a corpus

/// Token-budget batching over one epoch: every sentence exactly once,
/// batches length-bucketed and returned in shuffled order.
std::vector<Batch> make_batches(const MonoCorpus& corpus, std::size_t tokens_per_batch, Rng& rng);
std::vector<Batch> make_batches(std::span<const std::size_t> lengths, std::size_t tokens_per_batch,
                                Rng& rng);

// ---------------------------------------------------------------------------
// Files

void write_corpus(const std::filesystem::path& path, const MonoCorpus& corpus, const Vocab& vocab);
RawCorpus read_raw_corpus(const std::filesystem::path& path, Lang lang);
MonoCorpus read_corpus(const std::filesystem::path& path, Lang lang, const Vocab& vocab);

/// TSV with header `src\tref\torigin`.
void write_parallel(const std::filesystem::path& path, const ParallelSet& set, const Vocab& vocab);
ParallelSet read_parallel(const std::filesystem::path& path, Direction dir, const Vocab& vocab);

void write_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab read_vocab(const std::filesystem::path& path);

}  // namespace gaplab
