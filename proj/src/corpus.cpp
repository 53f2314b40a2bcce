#include "gaplab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace gaplab {

namespace {

const std::array<std::string, Vocab::kNumSpecial> kSpecials = {"<pad>", "<bos>", "<eos>",
                                                               "<unk>", "<2A>",  "<2B>"};

std::size_t li(Lang l) { return static_cast<std::size_t>(l); }

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> regular) {
  tokens_.assign(kSpecials.begin(), kSpecials.end());
  tokens_.insert(tokens_.end(), std::make_move_iterator(regular.begin()),
                 std::make_move_iterator(regular.end()));
  for (int i = 0; i < size(); ++i) {
    if (tokens_[i].empty()) throw ConfigError("vocab: empty token");
    if (!index_.emplace(tokens_[i], i).second)
      throw ConfigError("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw InternalError("vocab: id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::hash() const {
  Fnv64 h;
  for (const auto& t : tokens_) {
    h.update(t);
    h.update("\n", 1);
  }
  return h.digest();
}

// ---------------------------------------------------------------------------
// Corpora

const char* origin_tag(Origin o) {
  return o == Origin::source_original ? "src_ori" : "tgt_ori";
}

Origin parse_origin(std::string_view s) {
  if (s == "src_ori") return Origin::source_original;
  if (s == "tgt_ori") return Origin::target_original;
  throw ConfigError("unknown origin '" + std::string(s) + "' (expected src_ori or tgt_ori)");
}

Direction ParallelSet::direction() const {
  if (pairs.empty()) throw ConfigError("parallel set is empty");
  const Direction d{pairs.front().src.lang, pairs.front().ref.lang};
  if (d.src == d.tgt) throw ConfigError("parallel set: source and reference share a language");
  for (const auto& p : pairs)
    if (p.src.lang != d.src || p.ref.lang != d.tgt)
      throw ConfigError("parallel set: inconsistent languages");
  return d;
}

ParallelSet reversed(const ParallelSet& set) {
  ParallelSet out;
  out.pairs.reserve(set.size());
  for (const auto& p : set.pairs) {
    out.pairs.push_back({p.ref, p.src,
                         p.origin == Origin::source_original ? Origin::target_original
                                                             : Origin::source_original,
                         p.provenance});
  }
  return out;
}

ParallelSet filter_origin(const ParallelSet& set, Origin origin) {
  ParallelSet out;
  for (const auto& p : set.pairs)
    if (p.origin == origin) out.pairs.push_back(p);
  return out;
}

std::vector<Sentence> sources(const ParallelSet& set) {
  std::vector<Sentence> out;
  out.reserve(set.size());
  for (const auto& p : set.pairs) out.push_back(p.src);
  return out;
}

std::vector<Sentence> references(const ParallelSet& set) {
  std::vector<Sentence> out;
  out.reserve(set.size());
  for (const auto& p : set.pairs) out.push_back(p.ref);
  return out;
}

void validate(const Sentence& s, const Vocab& vocab) {
  if (s.ids.empty()) throw ConfigError("sentence is empty");
  for (int id : s.ids) {
    if (id < 0 || id >= vocab.size()) throw ConfigError("sentence id out of range");
    if (id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kEos)
      throw ConfigError("sentence contains pad/bos/eos");
  }
}

Sentence encode(const TokenList& tokens, Lang lang, const Vocab& vocab) {
  Sentence s;
  s.lang = lang;
  s.ids.reserve(tokens.size());
  for (const auto& t : tokens) s.ids.push_back(vocab.id(t));
  return s;
}

TokenList decode(const Sentence& s, const Vocab& vocab) {
  TokenList out;
  out.reserve(s.ids.size());
  for (int id : s.ids) out.push_back(vocab.token(id));
  return out;
}

MonoCorpus encode(const RawCorpus& raw, const Vocab& vocab) {
  MonoCorpus c;
  c.lang = raw.lang;
  c.sentences.reserve(raw.sentences.size());
  for (const auto& s : raw.sentences) c.sentences.push_back(encode(s, raw.lang, vocab));
  return c;
}

RawCorpus decode(const MonoCorpus& corpus, const Vocab& vocab) {
  RawCorpus r;
  r.lang = corpus.lang;
  r.sentences.reserve(corpus.size());
  for (const auto& s : corpus.sentences) r.sentences.push_back(decode(s, vocab));
  return r;
}

TokenList tokenize(std::string_view line) {
  TokenList out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string detokenize(const TokenList& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocab build_vocab(std::span<const RawCorpus> corpora, int min_count,
                  std::span<const std::string> extra) {
  if (corpora.empty()) throw ConfigError("build_vocab: no corpora given");
  std::map<std::string, std::size_t> counts;
  std::size_t n_sent = 0;
  for (const auto& c : corpora) {
    n_sent += c.sentences.size();
    for (const auto& s : c.sentences)
      for (const auto& t : s) ++counts[t];
  }
  if (n_sent == 0) throw ConfigError("build_vocab: corpora contain no sentences");
  for (const auto& t : extra) counts.try_emplace(t, 0);

  const std::set<std::string> forced(extra.begin(), extra.end());
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (std::find(kSpecials.begin(), kSpecials.end(), tok) != kSpecials.end()) continue;
    if (n >= static_cast<std::size_t>(std::max(min_count, 0)) || forced.count(tok))
      kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocab(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Synthetic language pair

void validate(const SynthSpec& spec) {
  if (spec.num_topics < 1) throw ConfigError("synth: num_topics must be >= 1");
  if (spec.entities_per_topic < 0 || spec.function_words < 3)
    throw ConfigError("synth: need entities_per_topic >= 0 and function_words >= 3");
  const int entities = spec.num_topics * spec.entities_per_topic;
  const int content = spec.vocab_size - spec.function_words - entities;
  if (content < 3 * spec.num_topics)
    throw ConfigError("synth: vocab_size " + std::to_string(spec.vocab_size) +
                      " is too small to host " + std::to_string(entities) + " entities, " +
                      std::to_string(spec.function_words) + " function words and " +
                      std::to_string(3 * spec.num_topics) + " topic words");
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& mix = spec.topic_mixtures[l];
    if (static_cast<int>(mix.size()) != spec.num_topics)
      throw ConfigError("synth: topic mixture size must equal num_topics");
    double sum = 0.0;
    for (double p : mix) {
      if (!(p >= 0.0)) throw ConfigError("synth: negative topic weight");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("synth: topic mixture must sum to 1");
  }
  if (!(spec.topic_focus >= 0.0 && spec.topic_focus <= 1.0))
    throw ConfigError("synth: topic_focus must be in [0,1]");
  if (!(spec.style_skew >= 0.0 && spec.style_skew <= 1.0))
    throw ConfigError("synth: style_skew must be in [0,1]");
  const auto& r = spec.reorder_rule;
  if (r.pattern != "none" && r.pattern != "swap_pairs" && r.pattern != "reverse_windows")
    throw ConfigError("synth: unknown reorder pattern '" + r.pattern + "'");
  if (r.window < 1) throw ConfigError("synth: reorder window must be >= 1");
  const auto [lo, hi] = spec.sentence_length_range;
  if (lo < 3 || hi < lo) throw ConfigError("synth: sentence_length_range must satisfy 3 <= min <= max");
  if ((lo % 2 == 0) && lo == hi) throw ConfigError("synth: sentence lengths are odd; widen the range");
  if (spec.suffix_rule.enabled &&
      (spec.suffix_rule.marker_a.empty() || spec.suffix_rule.marker_b.empty() ||
       spec.suffix_rule.marker_a == spec.suffix_rule.marker_b))
    throw ConfigError("synth: suffix markers must be distinct and non-empty");
}

nlohmann::json to_json(const SynthSpec& s) {
  return {
      {"seed", s.seed},
      {"vocab_size", s.vocab_size},
      {"num_topics", s.num_topics},
      {"entities_per_topic", s.entities_per_topic},
      {"function_words", s.function_words},
      {"topic_mixtures", {{"A", s.topic_mixtures[0]}, {"B", s.topic_mixtures[1]}}},
      {"topic_focus", s.topic_focus},
      {"style_skew", s.style_skew},
      {"reorder_rule", {{"pattern", s.reorder_rule.pattern}, {"window", s.reorder_rule.window}}},
      {"suffix_rule",
       {{"enabled", s.suffix_rule.enabled},
        {"marker_a", s.suffix_rule.marker_a},
        {"marker_b", s.suffix_rule.marker_b}}},
      {"sentence_length_range", s.sentence_length_range},
      {"zipf_exponent", s.zipf_exponent},
  };
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.num_topics = j.value("num_topics", s.num_topics);
    s.entities_per_topic = j.value("entities_per_topic", s.entities_per_topic);
    s.function_words = j.value("function_words", s.function_words);
    if (j.contains("topic_mixtures")) {
      const auto& m = j.at("topic_mixtures");
      s.topic_mixtures[0] = m.at("A").get<std::vector<double>>();
      s.topic_mixtures[1] = m.at("B").get<std::vector<double>>();
    } else if (s.num_topics != 4) {
      throw ConfigError("synth: topic_mixtures required when num_topics != 4");
    }
    s.topic_focus = j.value("topic_focus", s.topic_focus);
    s.style_skew = j.value("style_skew", s.style_skew);
    if (j.contains("reorder_rule")) {
      s.reorder_rule.pattern = j["reorder_rule"].value("pattern", s.reorder_rule.pattern);
      s.reorder_rule.window = j["reorder_rule"].value("window", s.reorder_rule.window);
    }
    if (j.contains("suffix_rule")) {
      const auto& r = j["suffix_rule"];
      s.suffix_rule.enabled = r.value("enabled", s.suffix_rule.enabled);
      s.suffix_rule.marker_a = r.value("marker_a", s.suffix_rule.marker_a);
      s.suffix_rule.marker_b = r.value("marker_b", s.suffix_rule.marker_b);
    }
    if (j.contains("sentence_length_range"))
      s.sentence_length_range = j["sentence_length_range"].get<std::array<int, 2>>();
    s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
  validate(s);
  return s;
}

namespace {

constexpr int kNumClasses = 8;

int bucket_index(WordClass c, int topic, int num_topics) {
  return static_cast<int>(c) * (num_topics + 1) + topic + 1;
}

std::string make_form(Rng& rng, Lang lang, bool capital) {
  static const std::string cons_a = "klmnpt", vow_a = "aio";
  static const std::string cons_b = "bdgrsv", vow_b = "euy";
  const auto& cons = lang == Lang::A ? cons_a : cons_b;
  const auto& vow = lang == Lang::A ? vow_a : vow_b;
  const int syll = 2 + static_cast<int>(rng.below(2));
  std::string w;
  for (int i = 0; i < syll; ++i) {
    w += cons[rng.below(cons.size())];
    w += vow[rng.below(vow.size())];
  }
  if (capital) w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

std::vector<double> random_row(Rng& rng, std::size_t n) {
  std::vector<double> row(n);
  double sum = 0.0;
  for (auto& x : row) {
    const double u = rng.uniform();
    x = u * u * u + 0.02;  // heavy-tailed so languages prefer a few transitions
    sum += x;
  }
  for (auto& x : row) x /= sum;
  return row;
}

}  // namespace

const std::vector<int>& SynthWorld::bucket(WordClass c, int topic) const {
  return by_class_topic.at(static_cast<std::size_t>(bucket_index(c, topic, spec.num_topics)));
}

std::vector<std::string> SynthWorld::all_forms() const {
  std::vector<std::string> out;
  for (const auto& w : words) {
    out.push_back(w.form[0]);
    if (w.form[1] != w.form[0]) out.push_back(w.form[1]);
  }
  if (spec.suffix_rule.enabled) {
    out.push_back(spec.suffix_rule.marker_a);
    out.push_back(spec.suffix_rule.marker_b);
  }
  return out;
}

std::vector<std::string> SynthWorld::entities(Lang l) const {
  std::vector<std::string> out;
  for (const auto& w : words)
    if (w.cls == WordClass::entity) out.push_back(w.form[li(l)]);
  return out;
}

std::vector<std::string> SynthWorld::entities_of_topic(Lang l, int topic) const {
  std::vector<std::string> out;
  for (int i : bucket(WordClass::entity, topic)) out.push_back(words[i].form[li(l)]);
  return out;
}

std::vector<std::string> SynthWorld::topic_words(Lang l, int topic) const {
  std::vector<std::string> out;
  for (WordClass c : {WordClass::noun, WordClass::verb, WordClass::adj})
    for (int i : bucket(c, topic)) out.push_back(words[i].form[li(l)]);
  return out;
}

std::vector<std::pair<std::string, std::string>> SynthWorld::lexicon_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& w : words) out.emplace_back(w.form[0], w.form[1]);
  return out;
}

SynthWorld expand(const SynthSpec& spec) {
  validate(spec);
  SynthWorld world;
  world.spec = spec;
  Rng rng(derive_seed(spec.seed, 0));
  const int K = spec.num_topics;
  world.by_class_topic.assign(static_cast<std::size_t>(kNumClasses * (K + 1)), {});

  std::array<std::set<std::string>, 2> used;
  auto add_word = [&](WordClass cls, int topic, bool capital) {
    SynthWorld::Word w{{}, cls, topic};
    for (Lang l : {Lang::A, Lang::B}) {
      std::string f;
      do {
        f = make_form(rng, l, capital);
      } while (!used[li(l)].insert(f).second);
      w.form[li(l)] = f;
    }
    world.by_class_topic[static_cast<std::size_t>(bucket_index(cls, topic, K))].push_back(
        static_cast<int>(world.words.size()));
    world.words.push_back(std::move(w));
  };

  // Function words: determiners, adverbs, prepositions.
  const int fw = spec.function_words;
  const std::array<int, 3> fsplit{fw - 2 * (fw / 3), fw / 3, fw / 3};
  const std::array<WordClass, 3> fclass{WordClass::det, WordClass::adv, WordClass::prep};
  for (std::size_t c = 0; c < 3; ++c)
    for (int i = 0; i < fsplit[c]; ++i) add_word(fclass[c], -1, false);

  const int content = spec.vocab_size - fw - K * spec.entities_per_topic;
  for (int t = 0; t < K; ++t) {
    const int n = content / K + (t < content % K ? 1 : 0);
    const int adj = std::max(1, n / 4), verb = std::max(1, n / 4);
    const int noun = n - adj - verb;
    for (int i = 0; i < noun; ++i) add_word(WordClass::noun, t, false);
    for (int i = 0; i < verb; ++i) add_word(WordClass::verb, t, false);
    for (int i = 0; i < adj; ++i) add_word(WordClass::adj, t, false);
    for (int i = 0; i < spec.entities_per_topic; ++i) add_word(WordClass::entity, t, true);
  }
  world.words.push_back({{".", "."}, WordClass::punct, -1});
  world.by_class_topic[static_cast<std::size_t>(bucket_index(WordClass::punct, -1, K))].push_back(
      static_cast<int>(world.words.size()) - 1);

  for (std::size_t i = 0; i < world.words.size(); ++i)
    for (std::size_t l = 0; l < 2; ++l) world.index[l].emplace(world.words[i].form[l], static_cast<int>(i));

  world.phrase_kinds = {{WordClass::det, WordClass::noun},
                        {WordClass::adj, WordClass::noun},
                        {WordClass::adv, WordClass::verb},
                        {WordClass::prep, WordClass::entity}};
  if (spec.entities_per_topic == 0) world.phrase_kinds.pop_back();
  const std::size_t nk = world.phrase_kinds.size();

  // Phrase-order statistics: a shared chain blended with a per-language one.
  std::vector<std::vector<double>> shared(nk + 1);
  for (auto& row : shared) row = random_row(rng, nk);
  for (std::size_t l = 0; l < 2; ++l) {
    auto& trans = world.phrase_transitions[l];
    trans.resize(nk + 1);
    for (std::size_t r = 0; r <= nk; ++r) {
      const auto own = random_row(rng, nk);
      trans[r].resize(nk);
      for (std::size_t k = 0; k < nk; ++k)
        trans[r][k] = (1.0 - spec.style_skew) * shared[r][k] + spec.style_skew * own[k];
    }
  }
  return world;
}

template <typename T>
void apply_reorder(std::vector<T>& tokens, const ReorderRule& rule) {
  if (rule.pattern == "none") return;
  const std::size_t w = rule.pattern == "swap_pairs" ? 2 : static_cast<std::size_t>(rule.window);
  if (w < 2) return;
  if (rule.pattern == "swap_pairs") {
    for (std::size_t i = 0; i + 1 < tokens.size(); i += 2) std::swap(tokens[i], tokens[i + 1]);
    return;
  }
  for (std::size_t i = 0; i < tokens.size(); i += w)
    std::reverse(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                 tokens.begin() + static_cast<std::ptrdiff_t>(std::min(i + w, tokens.size())));
}

template void apply_reorder<int>(std::vector<int>&, const ReorderRule&);
template void apply_reorder<std::string>(std::vector<std::string>&, const ReorderRule&);
template void apply_reorder<std::size_t>(std::vector<std::size_t>&, const ReorderRule&);

TokenList oracle_translate(const TokenList& s, Direction dir, const SynthWorld& world) {
  if (dir.src == dir.tgt) throw ConfigError("oracle_translate: direction must change language");
  const auto& suffix = world.spec.suffix_rule;
  const std::string& src_marker = dir.src == Lang::A ? suffix.marker_a : suffix.marker_b;
  const std::string& tgt_marker = dir.tgt == Lang::A ? suffix.marker_a : suffix.marker_b;

  TokenList body = s;
  bool mark = suffix.enabled;
  if (suffix.enabled && !body.empty() && body.back() == src_marker) {
    body.pop_back();  // translated text going back: undo the marker
    mark = false;
  }
  TokenList out;
  out.reserve(body.size() + 1);
  const auto& index = world.index[li(dir.src)];
  for (const auto& tok : body) {
    auto it = index.find(tok);
    if (it == index.end())
      throw InternalError("oracle_translate: token '" + tok + "' is not in the " +
                          lang_name(dir.src) + " lexicon");
    out.push_back(world.words[static_cast<std::size_t>(it->second)].form[li(dir.tgt)]);
  }
  apply_reorder(out, world.spec.reorder_rule);
  if (mark) out.push_back(tgt_marker);
  return out;
}

Sentence oracle_translate(const Sentence& s, Direction dir, const SynthWorld& world,
                          const Vocab& vocab) {
  if (s.lang != dir.src) throw ConfigError("oracle_translate: sentence language does not match direction");
  return encode(oracle_translate(decode(s, vocab), dir, world), dir.tgt, vocab);
}

RawCorpus sample_natural(const SynthWorld& world, Lang lang, std::size_t count,
                         std::uint64_t seed) {
  const auto& spec = world.spec;
  Rng rng(seed);
  RawCorpus out;
  out.lang = lang;
  out.sentences.reserve(count);
  const int lo_phr = std::max(1, (spec.sentence_length_range[0] - 1 + 1) / 2);
  const int hi_phr = std::max(lo_phr, (spec.sentence_length_range[1] - 1) / 2);
  const auto& mixture = spec.topic_mixtures[li(lang)];
  const auto& trans = world.phrase_transitions[li(lang)];
  const int K = spec.num_topics;

  auto pick = [&](WordClass c, int topic) -> int {
    const auto& b = world.bucket(c, topic);
    std::vector<double> w(b.size());
    for (std::size_t r = 0; r < b.size(); ++r)
      w[r] = 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
    return b[rng.categorical(w)];
  };
  auto slot_topic = [&](int sentence_topic) {
    if (rng.uniform() < spec.topic_focus) return sentence_topic;
    return static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
  };

  for (std::size_t n = 0; n < count; ++n) {
    const int topic = static_cast<int>(rng.categorical(mixture));
    const int phrases = lo_phr + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi_phr - lo_phr + 1)));
    std::vector<int> concept_words;
    std::size_t state = 0;
    for (int p = 0; p < phrases; ++p) {
      const std::size_t kind = rng.categorical(trans[state]);
      state = kind + 1;
      for (WordClass c : world.phrase_kinds[kind]) {
        const bool topical = c == WordClass::noun || c == WordClass::verb || c == WordClass::adj ||
                             c == WordClass::entity;
        concept_words.push_back(pick(c, topical ? slot_topic(topic) : -1));
      }
    }
    concept_words.push_back(world.bucket(WordClass::punct, -1).front());
    TokenList sent;
    sent.reserve(concept_words.size());
    for (int w : concept_words) sent.push_back(world.words[static_cast<std::size_t>(w)].form[li(lang)]);
    if (lang == Lang::B) apply_reorder(sent, spec.reorder_rule);
    out.sentences.push_back(std::move(sent));
  }
  return out;
}

SynthData gen_synthetic_pair(const SynthSpec& spec, const SynthSizes& sizes) {
  return gen_synthetic_pair(expand(spec), sizes);
}

SynthData gen_synthetic_pair(const SynthWorld& world, const SynthSizes& sizes) {
  if (sizes.mono_a < 1 || sizes.mono_b < 1 || sizes.test_src_ori < 1 || sizes.test_tgt_ori < 1)
    throw ConfigError("gen_synthetic_pair: sizes must be >= 1");
  const auto seed = world.spec.seed;
  const RawCorpus mono_a = sample_natural(world, Lang::A, sizes.mono_a, derive_seed(seed, 1));
  const RawCorpus mono_b = sample_natural(world, Lang::B, sizes.mono_b, derive_seed(seed, 2));

  struct RawPair {
    TokenList src, ref;
    Origin origin;
  };
  auto make_pairs = [&](std::size_t n_src, std::size_t n_tgt, std::uint64_t stream) {
    std::vector<RawPair> out;
    for (const auto& s : sample_natural(world, Lang::A, n_src, derive_seed(seed, stream)).sentences)
      out.push_back({s, oracle_translate(s, kAtoB, world), Origin::source_original});
    for (const auto& s : sample_natural(world, Lang::B, n_tgt, derive_seed(seed, stream + 1)).sentences)
      out.push_back({oracle_translate(s, kBtoA, world), s, Origin::target_original});
    return out;
  };
  const auto test = make_pairs(sizes.test_src_ori, sizes.test_tgt_ori, 3);
  const auto par = make_pairs(sizes.parallel - sizes.parallel / 2, sizes.parallel / 2, 5);
  const auto valid = make_pairs(sizes.valid_src_ori, sizes.valid_tgt_ori, 7);

  RawCorpus all_a{Lang::A, mono_a.sentences}, all_b{Lang::B, mono_b.sentences};
  for (const auto* set : {&test, &par, &valid})
    for (const auto& p : *set) {
      all_a.sentences.push_back(p.src);
      all_b.sentences.push_back(p.ref);
    }
  const std::array<RawCorpus, 2> for_vocab{std::move(all_a), std::move(all_b)};
  const auto forms = world.all_forms();

  SynthData data;
  data.vocab = build_vocab(for_vocab, 1, forms);
  data.mono_a = encode(mono_a, data.vocab);
  data.mono_b = encode(mono_b, data.vocab);
  auto to_set = [&](const std::vector<RawPair>& raw) {
    ParallelSet set;
    for (const auto& p : raw)
      set.pairs.push_back({encode(p.src, Lang::A, data.vocab), encode(p.ref, Lang::B, data.vocab),
                           p.origin, Provenance::oracle_translated});
    return set;
  };
  data.test = to_set(test);
  data.parallel_train = to_set(par);
  data.valid = to_set(valid);
  return data;
}

// ---------------------------------------------------------------------------
// Noise and batching

void validate(const NoiseSpec& n) {
  if (!(n.drop_prob >= 0.0 && n.drop_prob <= 1.0) || !(n.blank_prob >= 0.0 && n.blank_prob <= 1.0))
    throw ConfigError("noise: probabilities must be in [0,1]");
  if (n.shuffle_window < 0) throw ConfigError("noise: shuffle_window must be >= 0");
}

Sentence apply_noise(const Sentence& s, const NoiseSpec& noise, Rng& rng) {
  if (s.ids.empty()) throw ConfigError("apply_noise: empty sentence");
  Sentence out;
  out.lang = s.lang;
  for (int id : s.ids)
    if (!(rng.uniform() < noise.drop_prob)) out.ids.push_back(id);
  if (out.ids.empty()) out.ids.push_back(s.ids[rng.below(s.ids.size())]);
  for (int& id : out.ids)
    if (rng.uniform() < noise.blank_prob) id = Vocab::kUnk;
  if (noise.shuffle_window > 0 && out.ids.size() > 1) {
    std::vector<std::pair<double, std::size_t>> keys(out.ids.size());
    const double alpha = noise.shuffle_window + 1.0;
    for (std::size_t i = 0; i < keys.size(); ++i)
      keys[i] = {static_cast<double>(i) + rng.uniform() * alpha, i};
    std::sort(keys.begin(), keys.end());
    std::vector<int> shuffled;
    shuffled.reserve(keys.size());
    for (const auto& k : keys) shuffled.push_back(out.ids[k.second]);
    out.ids = std::move(shuffled);
  }
  return out;
}

std::vector<Batch> make_batches(std::span<const std::size_t> lengths, std::size_t tokens_per_batch,
                                Rng& rng) {
  for (std::size_t i = 0; i < lengths.size(); ++i)
    if (lengths[i] > tokens_per_batch)
      throw ConfigError("make_batches: sentence " + std::to_string(i) + " has " +
                        std::to_string(lengths[i]) + " tokens, more than tokens_per_batch=" +
                        std::to_string(tokens_per_batch));
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<Batch> batches;
  Batch cur;
  std::size_t tokens = 0;
  for (std::size_t idx : order) {
    if (!cur.empty() && tokens + lengths[idx] > tokens_per_batch) {
      batches.push_back(std::move(cur));
      cur.clear();
      tokens = 0;
    }
    cur.push_back(idx);
    tokens += lengths[idx];
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  rng.shuffle(batches);
  return batches;
}

std::vector<Batch> make_batches(const MonoCorpus& corpus, std::size_t tokens_per_batch, Rng& rng) {
  std::vector<std::size_t> lengths;
  lengths.reserve(corpus.size());
  for (const auto& s : corpus.sentences) lengths.push_back(s.ids.size());
  return make_batches(lengths, tokens_per_batch, rng);
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot write " + path.string());
  return f;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path.string());
  return f;
}

}  // namespace

void write_corpus(const std::filesystem::path& path, const MonoCorpus& corpus, const Vocab& vocab) {
  auto f = open_out(path);
  for (const auto& s : corpus.sentences) f << detokenize(decode(s, vocab)) << '\n';
}

RawCorpus read_raw_corpus(const std::filesystem::path& path, Lang lang) {
  auto f = open_in(path);
  RawCorpus c;
  c.lang = lang;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto toks = tokenize(line);
    if (toks.empty())
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty sentence");
    c.sentences.push_back(std::move(toks));
  }
  return c;
}

MonoCorpus read_corpus(const std::filesystem::path& path, Lang lang, const Vocab& vocab) {
  return encode(read_raw_corpus(path, lang), vocab);
}

void write_parallel(const std::filesystem::path& path, const ParallelSet& set, const Vocab& vocab) {
  auto f = open_out(path);
  f << "src\tref\torigin\n";
  for (const auto& p : set.pairs)
    f << detokenize(decode(p.src, vocab)) << '\t' << detokenize(decode(p.ref, vocab)) << '\t'
      << origin_tag(p.origin) << '\n';
}

ParallelSet read_parallel(const std::filesystem::path& path, Direction dir, const Vocab& vocab) {
  auto f = open_in(path);
  std::string line;
  if (!std::getline(f, line) || line != "src\tref\torigin")
    throw ConfigError(path.string() + ": missing header 'src<TAB>ref<TAB>origin'");
  ParallelSet set;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    const auto src = tokenize(std::string_view(line).substr(0, t1));
    const auto ref = tokenize(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
    if (src.empty() || ref.empty())
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty side");
    set.pairs.push_back({encode(src, dir.src, vocab), encode(ref, dir.tgt, vocab),
                         parse_origin(std::string_view(line).substr(t2 + 1)),
                         Provenance::oracle_translated});
  }
  return set;
}

void write_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  auto f = open_out(path);
  for (int i = Vocab::kNumSpecial; i < vocab.size(); ++i) f << vocab.token(i) << '\n';
}

Vocab read_vocab(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::vector<std::string> toks;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) toks.push_back(line);
  return Vocab(std::move(toks));
}

}  // namespace gaplab
