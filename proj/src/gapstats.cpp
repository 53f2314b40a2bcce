#include "gaplab/gapstats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace gaplab {

const char* smoothing_name(Smoothing::Kind k) {
  switch (k) {
    case Smoothing::Kind::kneser_ney:
      return "kneser_ney";
    case Smoothing::Kind::add_k:
      return "add_k";
    case Smoothing::Kind::mle:
      return "mle";
  }
  return "?";
}

Smoothing::Kind parse_smoothing(std::string_view s) {
  if (s == "kneser_ney" || s == "kn") return Smoothing::Kind::kneser_ney;
  if (s == "add_k") return Smoothing::Kind::add_k;
  if (s == "mle") return Smoothing::Kind::mle;
  throw ConfigError("unknown smoothing '" + std::string(s) + "'");
}

std::string NGramLM::key(std::span<const int> ids) {
  std::string k(ids.size() * sizeof(int), '\0');
  if (!ids.empty()) std::memcpy(k.data(), ids.data(), k.size());
  return k;
}

int NGramLM::id(const std::string& w) const {
  auto it = index_.find(w);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> NGramLM::ids(const TokenList& sentence, bool with_eos) const {
  std::vector<int> out;
  out.reserve(sentence.size() + 1);
  for (const auto& w : sentence) out.push_back(id(w));
  if (with_eos) out.push_back(kEos);
  return out;
}

NGramLM train_ngram_lm(std::span<const TokenList> corpus, int order, const Smoothing& s,
                       std::span<const std::string> extra_vocab) {
  if (order < 1) throw ConfigError("ngram lm: order must be >= 1");
  if (corpus.empty()) throw ConfigError("ngram lm: empty training corpus");
  if (s.kind != Smoothing::Kind::mle && !(s.k > 0.0)) throw ConfigError("ngram lm: k must be > 0");
  NGramLM lm;
  lm.order_ = order;
  lm.smoothing_ = s;
  std::set<std::string> words;
  for (const auto& sent : corpus) words.insert(sent.begin(), sent.end());
  words.insert(extra_vocab.begin(), extra_vocab.end());
  lm.words_ = {"<unk>", "</s>", "<s>"};
  for (const auto& w : words)
    if (w != "<unk>" && w != "</s>" && w != "<s>") lm.words_.push_back(w);
  for (std::size_t i = 0; i < lm.words_.size(); ++i) lm.index_.emplace(lm.words_[i], static_cast<int>(i));

  lm.raw_.assign(static_cast<std::size_t>(order), {});
  std::vector<int> padded;
  for (const auto& sent : corpus) {
    padded.assign(static_cast<std::size_t>(order - 1), NGramLM::kBos);
    for (int w : lm.ids(sent, true)) padded.push_back(w);
    for (std::size_t i = static_cast<std::size_t>(order - 1); i < padded.size(); ++i)
      for (int k = 1; k <= order; ++k)
        ++lm.raw_[static_cast<std::size_t>(k - 1)]
                 [NGramLM::key(std::span<const int>(padded).subspan(i + 1 - static_cast<std::size_t>(k),
                                                                    static_cast<std::size_t>(k)))];
  }
  lm.build();
  return lm;
}

void NGramLM::build() {
  const auto n = static_cast<std::size_t>(order_);
  tables_.assign(n, {});
  discount_.assign(n, 0.0);
  starved_.assign(n, false);
  auto decode_key = [](const std::string& k) {
    std::vector<int> ids(k.size() / sizeof(int));
    if (!ids.empty()) std::memcpy(ids.data(), k.data(), k.size());
    return ids;
  };
  for (std::size_t lvl = 0; lvl < n; ++lvl) {
    std::map<std::string, double> adjusted;
    const bool continuation = smoothing_.kind == Smoothing::Kind::kneser_ney && lvl + 1 < n;
    if (continuation) {
      // Continuation counts: distinct left extensions, except for n-grams
      // anchored at the sentence start, which keep their raw counts.
      for (const auto& [k, c] : raw_[lvl + 1]) {
        const auto ids = decode_key(k);
        adjusted[key(std::span<const int>(ids).subspan(1))] += 1.0;
      }
      for (const auto& [k, c] : raw_[lvl]) {
        const auto ids = decode_key(k);
        if (ids.front() == kBos) adjusted[k] = static_cast<double>(c);
      }
    } else {
      for (const auto& [k, c] : raw_[lvl]) adjusted[k] = static_cast<double>(c);
    }
    std::size_t n1 = 0, n2 = 0;
    for (const auto& [k, a] : adjusted) {
      const auto ids = decode_key(k);
      auto& ctx = tables_[lvl][key(std::span<const int>(ids).first(ids.size() - 1))];
      ctx.next[ids.back()] += a;
      ctx.total += a;
      ++ctx.distinct;
      n1 += a == 1.0;
      n2 += a == 2.0;
    }
    if (n1 > 0 && n2 > 0)
      discount_[lvl] = static_cast<double>(n1) / static_cast<double>(n1 + 2 * n2);
    else
      starved_[lvl] = true;
  }
}

double NGramLM::prob_level(int level, int w, std::span<const int> ctx) const {
  const double uniform = 1.0 / static_cast<double>(vocab_size());
  if (level == 0) return smoothing_.kind == Smoothing::Kind::mle ? 0.0 : uniform;
  const auto lvl = static_cast<std::size_t>(level - 1);
  const auto& table = tables_[lvl];
  auto shorter = [&] { return ctx.empty() ? ctx : ctx.subspan(1); };
  auto it = table.find(key(ctx));
  if (it == table.end() || it->second.total <= 0.0) {
    if (smoothing_.kind == Smoothing::Kind::add_k && level == order_) return uniform;
    return prob_level(level - 1, w, shorter());
  }
  const auto& c = it->second;
  auto nit = c.next.find(w);
  const double count = nit == c.next.end() ? 0.0 : nit->second;
  switch (smoothing_.kind) {
    case Smoothing::Kind::mle:
      return count / c.total;
    case Smoothing::Kind::add_k:
      if (level == order_) return (count + smoothing_.k) / (c.total + smoothing_.k * vocab_size());
      return count / c.total;
    case Smoothing::Kind::kneser_ney:
      break;
  }
  if (starved_[lvl]) return (count + smoothing_.k) / (c.total + smoothing_.k * vocab_size());
  const double d = discount_[lvl];
  return std::max(count - d, 0.0) / c.total +
         d * static_cast<double>(c.distinct) / c.total * prob_level(level - 1, w, shorter());
}

double NGramLM::prob(int w, std::span<const int> history) const {
  if (w == kBos) throw ConfigError("ngram lm: <s> is not predictable");
  std::vector<int> ctx(static_cast<std::size_t>(order_ - 1), kBos);
  const std::size_t take = std::min(history.size(), ctx.size());
  std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(),
            ctx.end() - static_cast<std::ptrdiff_t>(take));
  return prob_level(order_, w, ctx);
}

double perplexity(const NGramLM& lm, std::span<const TokenList> corpus, bool include_eos) {
  double logp = 0.0;
  std::size_t n = 0;
  for (const auto& sent : corpus) {
    const auto ids = lm.ids(sent, true);
    const std::size_t upto = include_eos ? ids.size() : ids.size() - 1;
    for (std::size_t i = 0; i < upto; ++i) {
      const auto hist = std::span<const int>(ids).first(i);
      double pw = lm.prob(ids[i], hist);
      if (!include_eos) pw /= 1.0 - lm.prob(NGramLM::kEos, hist);
      logp += std::log(pw);
      ++n;
    }
  }
  if (n == 0) throw ConfigError("perplexity: empty corpus");
  return std::exp(-logp / static_cast<double>(n));
}

namespace {

constexpr char kLmMagic[8] = {'G', 'A', 'P', 'L', 'A', 'B', 'L', 'M'};
constexpr std::uint32_t kLmVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw ConfigError("ngram lm: truncated file");
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace

std::string NGramLM::serialize() const {
  std::string out(kLmMagic, sizeof kLmMagic);
  put<std::uint32_t>(out, kLmVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(order_));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(smoothing_.kind));
  put<double>(out, smoothing_.k);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(words_.size()));
  for (const auto& w : words_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(w.size()));
    out += w;
  }
  for (std::size_t lvl = 0; lvl < raw_.size(); ++lvl) {
    std::vector<std::pair<std::vector<int>, std::uint64_t>> rows;
    for (const auto& [k, c] : raw_[lvl]) {
      std::vector<int> ids(k.size() / sizeof(int));
      std::memcpy(ids.data(), k.data(), k.size());
      rows.emplace_back(std::move(ids), c);
    }
    std::sort(rows.begin(), rows.end());
    put<std::uint64_t>(out, rows.size());
    for (const auto& [ids, c] : rows) {
      for (int i : ids) put<std::uint32_t>(out, static_cast<std::uint32_t>(i));
      put<std::uint64_t>(out, c);
    }
  }
  return out;
}

NGramLM NGramLM::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof kLmMagic || !std::equal(kLmMagic, kLmMagic + 8, bytes.begin()))
    throw ConfigError("ngram lm: bad magic");
  std::size_t pos = sizeof kLmMagic;
  if (get<std::uint32_t>(bytes, pos) != kLmVersion) throw ConfigError("ngram lm: unsupported version");
  NGramLM lm;
  lm.order_ = static_cast<int>(get<std::uint32_t>(bytes, pos));
  const auto kind = get<std::uint8_t>(bytes, pos);
  if (kind > 2 || lm.order_ < 1) throw ConfigError("ngram lm: corrupt header");
  lm.smoothing_.kind = static_cast<Smoothing::Kind>(kind);
  lm.smoothing_.k = get<double>(bytes, pos);
  const auto nw = get<std::uint32_t>(bytes, pos);
  for (std::uint32_t i = 0; i < nw; ++i) {
    const auto len = get<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw ConfigError("ngram lm: truncated file");
    lm.words_.push_back(bytes.substr(pos, len));
    pos += len;
  }
  for (std::size_t i = 0; i < lm.words_.size(); ++i) lm.index_.emplace(lm.words_[i], static_cast<int>(i));
  lm.raw_.assign(static_cast<std::size_t>(lm.order_), {});
  for (int lvl = 0; lvl < lm.order_; ++lvl) {
    const auto rows = get<std::uint64_t>(bytes, pos);
    std::vector<int> ids(static_cast<std::size_t>(lvl + 1));
    for (std::uint64_t r = 0; r < rows; ++r) {
      for (auto& i : ids) {
        i = static_cast<int>(get<std::uint32_t>(bytes, pos));
        if (i < 0 || i >= static_cast<int>(lm.words_.size())) throw ConfigError("ngram lm: id out of range");
      }
      lm.raw_[static_cast<std::size_t>(lvl)][key(ids)] = get<std::uint64_t>(bytes, pos);
    }
  }
  if (pos != bytes.size()) throw ConfigError("ngram lm: trailing bytes");
  lm.build();
  return lm;
}

void save_lm(const std::filesystem::path& path, const NGramLM& lm) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot write " + path.string());
  const auto bytes = lm.serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NGramLM load_lm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return NGramLM::deserialize(ss.str());
}

StyleGap style_gap_ppl(const NGramLM& lm, std::span<const TokenList> natural,
                       std::span<const TokenList> translated) {
  if (natural.empty() || translated.empty()) throw ConfigError("style_gap_ppl: empty corpus");
  return {perplexity(lm, natural), perplexity(lm, translated)};
}

// ---------------------------------------------------------------------------
// TF-IDF

std::vector<std::string> pooled_stopwords(std::span<const std::vector<TokenList>> corpora, std::size_t k) {
  std::map<std::string, std::size_t> freq;
  for (const auto& c : corpora)
    for (const auto& s : c)
      for (const auto& w : s) ++freq[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) out.push_back(ranked[i].first);
  return out;
}

std::vector<TfidfProfile> tfidf_profiles(std::span<const std::vector<TokenList>> corpora,
                                         const TfidfOptions& opt) {
  if (opt.chunk_size < 1) throw ConfigError("tfidf: chunk_size must be >= 1");
  for (const auto& c : corpora)
    if (c.empty()) throw ConfigError("tfidf: empty corpus");
  const auto stop_list = pooled_stopwords(corpora, opt.stopword_k);
  const std::set<std::string> stop(stop_list.begin(), stop_list.end());
  std::map<std::string, std::size_t> term_index;
  for (const auto& c : corpora)
    for (const auto& s : c)
      for (const auto& w : s)
        if (!stop.count(w)) term_index.emplace(w, 0);
  if (term_index.empty()) throw ConfigError("tfidf: every token is a stopword");
  std::vector<std::string> terms;
  for (auto& [w, i] : term_index) {
    i = terms.size();
    terms.push_back(w);
  }
  const std::size_t T = terms.size();

  // Raw term counts per chunk, per corpus.
  std::vector<std::vector<std::vector<double>>> counts(corpora.size());
  std::vector<double> df(T, 0.0);
  std::size_t n_chunks = 0;
  for (std::size_t c = 0; c < corpora.size(); ++c) {
    const auto& corpus = corpora[c];
    for (std::size_t start = 0; start < corpus.size(); start += opt.chunk_size) {
      std::vector<double> tf(T, 0.0);
      for (std::size_t s = start; s < std::min(start + opt.chunk_size, corpus.size()); ++s)
        for (const auto& w : corpus[s]) {
          auto it = term_index.find(w);
          if (it != term_index.end()) tf[it->second] += 1.0;
        }
      for (std::size_t t = 0; t < T; ++t) df[t] += tf[t] > 0.0;
      counts[c].push_back(std::move(tf));
      ++n_chunks;
    }
  }
  std::vector<double> idf(T);
  for (std::size_t t = 0; t < T; ++t)
    idf[t] = std::log((1.0 + static_cast<double>(n_chunks)) / (1.0 + df[t])) + 1.0;

  auto normalize = [](std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& x : v) x /= n;
  };
  std::vector<TfidfProfile> out(corpora.size());
  for (std::size_t c = 0; c < corpora.size(); ++c) {
    auto& prof = out[c];
    prof.terms = terms;
    prof.centroid.assign(T, 0.0);
    for (auto& tf : counts[c]) {
      for (std::size_t t = 0; t < T; ++t) tf[t] *= idf[t];
      normalize(tf);
      for (std::size_t t = 0; t < T; ++t) prof.centroid[t] += tf[t];
      prof.chunks.push_back(std::move(tf));
    }
    normalize(prof.centroid);
  }
  return out;
}

double content_similarity(const std::vector<TokenList>& a, const std::vector<TokenList>& b,
                          const TfidfOptions& opt) {
  const std::array<std::vector<TokenList>, 2> both{a, b};
  const auto prof = tfidf_profiles(both, opt);
  double dot = 0.0;
  for (std::size_t t = 0; t < prof[0].centroid.size(); ++t) dot += prof[0].centroid[t] * prof[1].centroid[t];
  return std::clamp(dot, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Entities

std::vector<EntityCount> entity_frequency(std::span<const TokenList> corpus,
                                          std::span<const std::string> inventory, std::size_t top_k) {
  const std::set<std::string> inv(inventory.begin(), inventory.end());
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus)
    for (const auto& w : s)
      if (inv.count(w)) ++counts[w];
  std::vector<EntityCount> out;
  for (const auto& [e, c] : counts) out.push_back({e, c});
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.count > y.count; });
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

EntityAccuracy entity_translation_accuracy(std::span<const TokenList> hyps, std::span<const TokenList> refs,
                                           std::span<const std::string> inventory) {
  if (hyps.size() != refs.size()) throw ConfigError("entity accuracy: hyps and refs differ in length");
  const std::set<std::string> inv(inventory.begin(), inventory.end());
  EntityAccuracy r;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    std::map<std::string, std::size_t> want, have;
    for (const auto& w : refs[i])
      if (inv.count(w)) ++want[w];
    for (const auto& w : hyps[i])
      if (inv.count(w)) ++have[w];
    for (const auto& [e, n] : want) {
      r.total += n;
      auto it = have.find(e);
      r.matched += std::min(n, it == have.end() ? 0 : it->second);
    }
  }
  if (r.total > 0) r.accuracy = static_cast<double>(r.matched) / static_cast<double>(r.total);
  return r;
}

nlohmann::json to_json(const StyleGap& g) {
  return {{"ppl_natural", g.ppl_natural},
          {"ppl_translated", g.ppl_translated},
          {"translated_lower", g.ppl_translated < g.ppl_natural}};
}

nlohmann::json to_json(const std::vector<EntityCount>& e) {
  auto j = nlohmann::json::array();
  for (const auto& x : e) j.push_back({{"entity", x.entity}, {"count", x.count}});
  return j;
}

nlohmann::json to_json(const EntityAccuracy& a) {
  nlohmann::json j{{"matched", a.matched}, {"total", a.total}};
  j["accuracy"] = a.accuracy ? nlohmann::json(*a.accuracy) : nlohmann::json(nullptr);
  return j;
}

}  // namespace gaplab
