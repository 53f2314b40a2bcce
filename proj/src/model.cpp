#include "gaplab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

namespace gaplab {

void validate(const Dims& d) {
  if (d.hidden < 1 || d.layers < 1 || d.heads < 1 || d.ffn < 1 || d.max_len < 2)
    throw ConfigError("dims: all sizes must be positive (max_len >= 2)");
  if (d.hidden % d.heads != 0) throw ConfigError("dims: hidden must be divisible by heads");
}

void validate(const DecodeSpec& d) {
  if (d.beam_size < 1) throw ConfigError("decode: beam_size must be >= 1");
  if (d.max_len < 1) throw ConfigError("decode: max_len must be >= 1");
}

std::size_t parameter_count(const Dims& d, int vocab_size) {
  const std::size_t H = static_cast<std::size_t>(d.hidden), F = static_cast<std::size_t>(d.ffn),
                    V = static_cast<std::size_t>(vocab_size), L = static_cast<std::size_t>(d.layers);
  const std::size_t attn = 4 * (H * H + H);
  const std::size_t ffn = H * F + F + F * H + H;
  return V * H + L * (attn + 2 * 2 * H + ffn) + 2 * H + L * (2 * attn + 3 * 2 * H + ffn) + 2 * H +
         H * V + V;
}

namespace {

enum class Kind { embedding, weight, bias, gain };

Kind kind_of(const std::string& name) {
  if (name == "embed") return Kind::embedding;
  if (name.ends_with(".gain")) return Kind::gain;
  const auto dot = name.rfind('.');
  const std::string leaf = name.substr(dot + 1);
  if (leaf.starts_with("b") || leaf == "bias") return Kind::bias;
  return Kind::weight;
}

}  // namespace

ParamLayout make_layout(const Dims& d, int vocab_size) {
  validate(d);
  ParamLayout L;
  auto add = [&](std::string name, int r, int c) {
    L.names.push_back(std::move(name));
    L.shapes.emplace_back(r, c);
    return static_cast<int>(L.names.size()) - 1;
  };
  const int H = d.hidden, F = d.ffn;
  auto attn = [&](const std::string& pre) {
    ParamLayout::Attn a{};
    a.wq = add(pre + ".wq", H, H);
    a.bq = add(pre + ".bq", 1, H);
    a.wk = add(pre + ".wk", H, H);
    a.bk = add(pre + ".bk", 1, H);
    a.wv = add(pre + ".wv", H, H);
    a.bv = add(pre + ".bv", 1, H);
    a.wo = add(pre + ".wo", H, H);
    a.bo = add(pre + ".bo", 1, H);
    return a;
  };
  auto ffn = [&](const std::string& pre) {
    ParamLayout::Ffn f{};
    f.w1 = add(pre + ".w1", H, F);
    f.b1 = add(pre + ".b1", 1, F);
    f.w2 = add(pre + ".w2", F, H);
    f.b2 = add(pre + ".b2", 1, H);
    return f;
  };
  L.embed = add("embed", vocab_size, H);
  for (int l = 0; l < d.layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    ParamLayout::EncBlock b{};
    b.ln1_g = add(pre + ".ln1.gain", 1, H);
    b.ln1_b = add(pre + ".ln1.bias", 1, H);
    b.self = attn(pre + ".self");
    b.ln2_g = add(pre + ".ln2.gain", 1, H);
    b.ln2_b = add(pre + ".ln2.bias", 1, H);
    b.ffn = ffn(pre + ".ffn");
    L.enc.push_back(b);
  }
  L.enc_ln_g = add("enc.ln.gain", 1, H);
  L.enc_ln_b = add("enc.ln.bias", 1, H);
  for (int l = 0; l < d.layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    ParamLayout::DecBlock b{};
    b.ln1_g = add(pre + ".ln1.gain", 1, H);
    b.ln1_b = add(pre + ".ln1.bias", 1, H);
    b.self = attn(pre + ".self");
    b.ln2_g = add(pre + ".ln2.gain", 1, H);
    b.ln2_b = add(pre + ".ln2.bias", 1, H);
    b.cross = attn(pre + ".cross");
    b.ln3_g = add(pre + ".ln3.gain", 1, H);
    b.ln3_b = add(pre + ".ln3.bias", 1, H);
    b.ffn = ffn(pre + ".ffn");
    L.dec.push_back(b);
  }
  L.dec_ln_g = add("dec.ln.gain", 1, H);
  L.dec_ln_b = add("dec.ln.bias", 1, H);
  L.out_w = add("out.w", H, vocab_size);
  L.out_b = add("out.b", 1, vocab_size);
  return L;
}

template <typename Scalar>
std::size_t ModelParams<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& a : arrays) n += static_cast<std::size_t>(a.size());
  return n;
}

template <typename Scalar>
FrozenParams<Scalar>::FrozenParams(const ModelParams<Scalar>& p) {
  auto copy = std::make_shared<ModelParams<Scalar>>();
  copy->dims = p.dims;
  copy->vocab_size = p.vocab_size;
  copy->vocab_hash = p.vocab_hash;
  copy->layout = p.layout;
  copy->arrays = p.arrays;
  copy->step = p.step;
  copy->positions = p.positions;
  p_ = std::move(copy);
}

namespace {

template <typename Scalar>
Mat<Scalar> sinusoid_table(int max_len, int hidden) {
  Mat<Scalar> t(max_len, hidden);
  for (int pos = 0; pos < max_len; ++pos)
    for (int i = 0; i < hidden; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / hidden);
      const double a = pos * rate;
      t(pos, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  return t;
}

template <typename Scalar>
ModelParams<Scalar> empty_model(const Dims& dims, int vocab_size, std::uint64_t vocab_hash) {
  ModelParams<Scalar> p;
  p.dims = dims;
  p.vocab_size = vocab_size;
  p.vocab_hash = vocab_hash;
  p.layout = make_layout(dims, vocab_size);
  p.arrays.reserve(p.layout.shapes.size());
  for (const auto& [r, c] : p.layout.shapes) p.arrays.push_back(Mat<Scalar>::Zero(r, c));
  p.optim.m.clear();
  p.optim.v.clear();
  p.positions = sinusoid_table<Scalar>(dims.max_len, dims.hidden);
  return p;
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> init_model(const Dims& dims, const Vocab& vocab, std::uint64_t seed) {
  auto p = empty_model<Scalar>(dims, vocab.size(), vocab.hash());
  Rng rng(seed);
  for (std::size_t i = 0; i < p.arrays.size(); ++i) {
    auto& a = p.arrays[i];
    switch (kind_of(p.layout.names[i])) {
      case Kind::embedding: {
        const double sd = 1.0 / std::sqrt(static_cast<double>(dims.hidden));
        for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = static_cast<Scalar>(rng.normal() * sd);
        break;
      }
      case Kind::weight: {
        const double lim = std::sqrt(6.0 / static_cast<double>(a.rows() + a.cols()));
        for (Eigen::Index k = 0; k < a.size(); ++k)
          a.data()[k] = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * lim);
        break;
      }
      case Kind::gain:
        a.setOnes();
        break;
      case Kind::bias:
        a.setZero();
        break;
    }
  }
  return p;
}

template <typename Scalar>
void tie_embeddings(ModelParams<Scalar>& p, std::span<const std::pair<int, int>> pairs,
                    double jitter, std::uint64_t seed) {
  auto& e = p.arrays[static_cast<std::size_t>(p.layout.embed)];
  Rng rng(seed);
  const double sd = jitter / std::sqrt(static_cast<double>(p.dims.hidden));
  for (const auto& [from, to] : pairs) {
    if (from < 0 || to < 0 || from >= e.rows() || to >= e.rows())
      throw ConfigError("tie_embeddings: id out of range");
    e.row(to) = e.row(from);
    for (Eigen::Index c = 0; c < e.cols(); ++c) e(to, c) += static_cast<Scalar>(rng.normal() * sd);
  }
}

// ---------------------------------------------------------------------------
// Forward pass on the tape

namespace {

template <typename Scalar>
class Graph {
 public:
  using T = Tape<Scalar>;
  using Var = typename T::Var;

  Graph(T& tape, const ModelParams<Scalar>& p, bool grads) : t_(tape), p_(p) {
    leaves_.reserve(p.arrays.size());
    for (const auto& a : p.arrays) leaves_.push_back(t_.bind(a, grads));
  }

  Var w(int idx) const { return leaves_[static_cast<std::size_t>(idx)]; }
  const std::vector<Var>& leaves() const { return leaves_; }

  // Decoder slots: per layer self q,k,v,o, cross q,k,v,o, ffn in,out; then
  // the output layer.
  static constexpr int kSlots = 10;

  /// Record dense-layer outputs into `trace`, or take them from `replay`.
  void record(DecodeTrace<Scalar>* trace) { record_ = trace; }
  void replay(const DecodeTrace<Scalar>* trace) {
    replay_ = trace;
    enc_next_ = 0;
  }

  /// Affine layer; slot < 0 for encoder layers.
  Var lin(Var x, int wi, int bi, int slot) {
    if (replay_) {
      const auto& given = slot < 0 ? replay_->enc.at(enc_next_++) : replay_->dec.at(static_cast<std::size_t>(slot));
      if (given.rows() != t_.value(x).rows()) throw InternalError("replayed activations do not match the batch");
      return ops::affine_given<Scalar>(t_, x, w(wi), w(bi), given);
    }
    const Var out = ops::affine<Scalar>(t_, x, w(wi), w(bi));
    if (record_) {
      if (slot < 0)
        record_->enc.push_back(t_.value(out));
      else
        record_->dec[static_cast<std::size_t>(slot)] = t_.value(out);
    }
    return out;
  }

  Var embed(const std::vector<int>& ids, const std::vector<int>& positions) {
    Mat<Scalar> pos(static_cast<Eigen::Index>(ids.size()), p_.dims.hidden);
    for (std::size_t i = 0; i < ids.size(); ++i)
      pos.row(static_cast<Eigen::Index>(i)) = p_.positions.row(positions[i]);
    return ops::embed<Scalar>(t_, w(p_.layout.embed), ids,
                              static_cast<Scalar>(std::sqrt(static_cast<double>(p_.dims.hidden))), pos);
  }

  Var attn(Var xq, Var xkv, const ParamLayout::Attn& a, std::vector<Segment> segs, bool causal, int slot) {
    auto at = [slot](int k) { return slot < 0 ? -1 : slot + k; };
    const Var q = lin(xq, a.wq, a.bq, at(0));
    const Var k = lin(xkv, a.wk, a.bk, at(1));
    const Var v = lin(xkv, a.wv, a.bv, at(2));
    const Var o = ops::attention<Scalar>(t_, q, k, v, std::move(segs), p_.dims.heads, causal);
    return lin(o, a.wo, a.bo, at(3));
  }

  Var ffn(Var x, const ParamLayout::Ffn& f, int slot) {
    const Var h = ops::gelu<Scalar>(t_, lin(x, f.w1, f.b1, slot));
    return lin(h, f.w2, f.b2, slot < 0 ? -1 : slot + 1);
  }

  Var ln(Var x, int g, int b) { return ops::layer_norm<Scalar>(t_, x, w(g), w(b)); }

  /// Encoder over [s..., eos] for each sentence; returns memory rows.
  Var encode(std::span<const Sentence> src, std::vector<Span>& spans) {
    std::vector<int> ids, pos;
    spans.clear();
    for (const auto& s : src) {
      const int len = static_cast<int>(s.ids.size()) + 1;
      if (len > p_.dims.max_len)
        throw ConfigError("source sentence of " + std::to_string(len - 1) +
                          " tokens exceeds max_len " + std::to_string(p_.dims.max_len));
      spans.push_back({static_cast<int>(ids.size()), len});
      for (int i = 0; i < len - 1; ++i) {
        ids.push_back(s.ids[static_cast<std::size_t>(i)]);
        pos.push_back(i);
      }
      ids.push_back(Vocab::kEos);
      pos.push_back(len - 1);
    }
    std::vector<Segment> segs;
    for (const auto& sp : spans) segs.push_back({sp, sp});
    Var x = embed(ids, pos);
    for (const auto& b : p_.layout.enc) {
      const Var h = ln(x, b.ln1_g, b.ln1_b);
      x = ops::add<Scalar>(t_, x, attn(h, h, b.self, segs, false, -1));
      x = ops::add<Scalar>(t_, x, ffn(ln(x, b.ln2_g, b.ln2_b), b.ffn, -1));
    }
    return ln(x, p_.layout.enc_ln_g, p_.layout.enc_ln_b);
  }

  /// Teacher-forced decoder logits; fills the flat target list.
  Var decode(Var memory, const std::vector<Span>& mem_spans, std::span<const Sentence> tgt, Lang tgt_lang,
             std::vector<int>& targets) {
    return decode(memory, mem_spans, tgt, std::vector<Lang>(tgt.size(), tgt_lang), targets);
  }

  Var decode(Var memory, const std::vector<Span>& mem_spans, std::span<const Sentence> tgt,
             const std::vector<Lang>& tgt_langs, std::vector<int>& targets) {
    std::vector<int> ids, pos;
    std::vector<Span> spans;
    targets.clear();
    for (std::size_t k = 0; k < tgt.size(); ++k) {
      const auto& s = tgt[k];
      const int len = static_cast<int>(s.ids.size()) + 1;
      if (len > p_.dims.max_len)
        throw ConfigError("target sentence of " + std::to_string(len - 1) +
                          " tokens exceeds max_len " + std::to_string(p_.dims.max_len));
      spans.push_back({static_cast<int>(ids.size()), len});
      ids.push_back(Vocab::lang_tag(tgt_langs[k]));
      pos.push_back(0);
      for (int i = 0; i < len - 1; ++i) {
        ids.push_back(s.ids[static_cast<std::size_t>(i)]);
        pos.push_back(i + 1);
        targets.push_back(s.ids[static_cast<std::size_t>(i)]);
      }
      targets.push_back(Vocab::kEos);
    }
    std::vector<Segment> self_segs, cross_segs;
    for (std::size_t i = 0; i < spans.size(); ++i) {
      self_segs.push_back({spans[i], spans[i]});
      cross_segs.push_back({spans[i], mem_spans[i]});
    }
    Var y = embed(ids, pos);
    int slot = 0;
    for (const auto& b : p_.layout.dec) {
      const Var h1 = ln(y, b.ln1_g, b.ln1_b);
      y = ops::add<Scalar>(t_, y, attn(h1, h1, b.self, self_segs, true, slot));
      y = ops::add<Scalar>(t_, y, attn(ln(y, b.ln2_g, b.ln2_b), memory, b.cross, cross_segs, false, slot + 4));
      y = ops::add<Scalar>(t_, y, ffn(ln(y, b.ln3_g, b.ln3_b), b.ffn, slot + 8));
      slot += kSlots;
    }
    y = ln(y, p_.layout.dec_ln_g, p_.layout.dec_ln_b);
    return lin(y, p_.layout.out_w, p_.layout.out_b, slot);
  }

 private:
  T& t_;
  const ModelParams<Scalar>& p_;
  std::vector<Var> leaves_;
  DecodeTrace<Scalar>* record_ = nullptr;
  const DecodeTrace<Scalar>* replay_ = nullptr;
  std::size_t enc_next_ = 0;
};

void check_batch(std::span<const Sentence> src, std::span<const Sentence> tgt, Direction dir) {
  if (src.empty()) throw ConfigError("nll_loss: empty batch");
  if (src.size() != tgt.size()) throw ConfigError("nll_loss: source/target batch sizes differ");
  for (const auto& s : tgt)
    if (s.ids.empty()) throw ConfigError("nll_loss: empty target sentence");
  for (const auto& s : src)
    if (s.ids.empty()) throw ConfigError("nll_loss: empty source sentence");
  (void)dir;
}

}  // namespace

template <typename Scalar>
LossResult<Scalar> nll_loss(const ModelParams<Scalar>& p, std::span<const Sentence> src,
                            std::span<const Sentence> tgt, Direction dir, bool with_grads) {
  check_batch(src, tgt, dir);
  Tape<Scalar> tape;
  Graph<Scalar> g(tape, p, with_grads);
  std::vector<Span> mem_spans;
  const auto memory = g.encode(src, mem_spans);
  std::vector<int> targets;
  const auto logits = g.decode(memory, mem_spans, tgt, dir.tgt, targets);
  LossResult<Scalar> r;
  r.tokens = targets.size();
  const auto loss = ops::cross_entropy<Scalar>(tape, logits, std::move(targets));
  r.loss = static_cast<double>(tape.value(loss)(0, 0));
  if (with_grads) {
    tape.backward(loss);
    r.grads.reserve(p.arrays.size());
    for (std::size_t i = 0; i < p.arrays.size(); ++i) {
      const auto v = g.leaves()[i];
      if (tape.has_grad(v))
        r.grads.push_back(std::move(tape.grad(v)));
      else
        r.grads.push_back(Mat<Scalar>::Zero(p.arrays[i].rows(), p.arrays[i].cols()));
    }
  }
  return r;
}

template <typename Scalar>
GroupLossResult<Scalar> group_loss(const ModelParams<Scalar>& p, std::span<const LossGroup> groups,
                                   bool with_grads) {
  return group_loss(p, groups, std::span<const DecodeTrace<Scalar>* const>(), with_grads);
}

template <typename Scalar>
GroupLossResult<Scalar> group_loss(const ModelParams<Scalar>& p, std::span<const LossGroup> groups,
                                   std::span<const DecodeTrace<Scalar>* const> traces, bool with_grads) {
  if (groups.empty()) throw ConfigError("group_loss: no groups");
  if (!traces.empty() && traces.size() != groups.size())
    throw ConfigError("group_loss: traces must align with groups");
  Tape<Scalar> tape;
  Graph<Scalar> graph(tape, p, with_grads);
  GroupLossResult<Scalar> r;
  r.losses.assign(groups.size(), 0.0);
  r.tokens.assign(groups.size(), 0);
  std::optional<typename Tape<Scalar>::Var> loss;

  // Untraced groups are packed into one pass; each traced group gets its own.
  auto run = [&](const std::vector<std::size_t>& members, const DecodeTrace<Scalar>* trace) {
    std::vector<Sentence> src, tgt;
    std::vector<Lang> langs;
    std::vector<std::size_t> first_row(members.size() + 1, 0);
    std::size_t src_rows = 0;
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto& g = groups[members[m]];
      check_batch(g.src, g.tgt, g.dir);
      for (const auto& s : g.src) src_rows += s.ids.size() + 1;
      src.insert(src.end(), g.src.begin(), g.src.end());
      std::size_t rows = 0;
      for (const auto& s : g.tgt) {
        tgt.push_back(s);
        langs.push_back(g.dir.tgt);
        rows += s.ids.size() + 1;
      }
      first_row[m + 1] = first_row[m] + rows;
    }
    if (trace && (trace->src_rows != src_rows || trace->tgt_rows != first_row.back()))
      throw ConfigError("group_loss: trace does not match its group");
    graph.replay(trace);
    std::vector<Span> mem_spans;
    const auto memory = graph.encode(src, mem_spans);
    std::vector<int> targets;
    const auto logits = graph.decode(memory, mem_spans, tgt, langs, targets);
    graph.replay(nullptr);
    std::vector<Scalar> weights(targets.size());
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto n = first_row[m + 1] - first_row[m];
      r.tokens[members[m]] = n;
      for (auto i = first_row[m]; i < first_row[m + 1]; ++i)
        weights[i] = static_cast<Scalar>(groups[members[m]].weight / static_cast<double>(n));
    }
    std::vector<double> row_nll;
    const auto part = ops::weighted_nll<Scalar>(tape, logits, std::move(targets), std::move(weights), &row_nll);
    for (std::size_t m = 0; m < members.size(); ++m) {
      double sum = 0.0;
      for (auto i = first_row[m]; i < first_row[m + 1]; ++i) sum += row_nll[i];
      r.losses[members[m]] = sum / static_cast<double>(r.tokens[members[m]]);
    }
    loss = loss ? ops::add<Scalar>(tape, *loss, part) : part;
  };

  std::vector<std::size_t> plain;
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    if (traces.empty() || !traces[gi]) plain.push_back(gi);
  if (!plain.empty()) run(plain, nullptr);
  for (std::size_t gi = 0; gi < traces.size(); ++gi)
    if (traces[gi]) run({gi}, traces[gi]);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) r.total += groups[gi].weight * r.losses[gi];

  if (with_grads) {
    tape.backward(*loss);
    r.grads.reserve(p.arrays.size());
    for (std::size_t i = 0; i < p.arrays.size(); ++i) {
      const auto v = graph.leaves()[i];
      if (tape.has_grad(v))
        r.grads.push_back(std::move(tape.grad(v)));
      else
        r.grads.push_back(Mat<Scalar>::Zero(p.arrays[i].rows(), p.arrays[i].cols()));
    }
  }
  return r;
}

template <typename Scalar>
std::vector<std::vector<double>> token_logprobs(const ModelParams<Scalar>& p, const Sentence& src,
                                                const Sentence& tgt, Direction dir) {
  Tape<Scalar> tape;
  Graph<Scalar> g(tape, p, false);
  std::vector<Span> mem_spans;
  const auto memory = g.encode(std::span<const Sentence>(&src, 1), mem_spans);
  std::vector<int> targets;
  const auto logits = g.decode(memory, mem_spans, std::span<const Sentence>(&tgt, 1), dir.tgt, targets);
  Mat<Scalar> lp = tape.value(logits);
  log_softmax_rows(lp);
  std::vector<std::vector<double>> out(1);
  for (std::size_t i = 0; i < targets.size(); ++i)
    out[0].push_back(static_cast<double>(lp(static_cast<Eigen::Index>(i), targets[i])));
  return out;
}

// ---------------------------------------------------------------------------
// Incremental decoding

namespace {

template <typename Scalar>
struct CrossKV {
  std::vector<Mat<Scalar>> k, v;  // per layer, rows = source positions
};

template <typename Scalar>
struct SelfCache {
  std::vector<Mat<Scalar>> k, v;  // per layer, capacity rows
  int len = 0;
};

template <typename Scalar>
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const ModelParams<Scalar>& p) : p_(p) {}
  int vocab_size() const { return p_.vocab_size; }

  std::vector<CrossKV<Scalar>> encode(std::span<const Sentence> src, DecodeTrace<Scalar>* trace = nullptr) const {
    Tape<Scalar> tape;
    Graph<Scalar> g(tape, p_, false);
    g.record(trace);
    std::vector<Span> spans;
    const Mat<Scalar> mem = tape.value(g.encode(src, spans));
    std::vector<CrossKV<Scalar>> out(src.size());
    for (std::size_t l = 0; l < p_.layout.dec.size(); ++l) {
      const auto& b = p_.layout.dec[l];
      Mat<Scalar> k = mem * p_[b.cross.wk];
      k.rowwise() += p_[b.cross.bk].row(0);
      Mat<Scalar> v = mem * p_[b.cross.wv];
      v.rowwise() += p_[b.cross.bv].row(0);
      for (std::size_t i = 0; i < src.size(); ++i) {
        out[i].k.push_back(k.middleRows(spans[i].offset, spans[i].length));
        out[i].v.push_back(v.middleRows(spans[i].offset, spans[i].length));
      }
      if (trace) {
        const auto base = l * Graph<Scalar>::kSlots;
        trace->dec[base + 5] = std::move(k);
        trace->dec[base + 6] = std::move(v);
      }
    }
    if (trace) trace->src_rows = static_cast<std::size_t>(mem.rows());
    return out;
  }

  SelfCache<Scalar> new_cache(int capacity) const {
    SelfCache<Scalar> c;
    for (std::size_t l = 0; l < p_.layout.dec.size(); ++l) {
      c.k.push_back(Mat<Scalar>(capacity, p_.dims.hidden));
      c.v.push_back(Mat<Scalar>(capacity, p_.dims.hidden));
    }
    return c;
  }

  /// One decoder position for each row; appends to the caches and returns
  /// log-probabilities (rows x V). `record` receives the dense-layer outputs
  /// by decoder slot.
  Mat<double> step(const std::vector<int>& tokens, std::vector<SelfCache<Scalar>*>& caches,
                   const std::vector<const CrossKV<Scalar>*>& cross,
                   std::vector<Mat<Scalar>>* record = nullptr) const {
    const auto R = static_cast<Eigen::Index>(tokens.size());
    const int H = p_.dims.hidden, heads = p_.dims.heads, dh = H / heads;
    const Scalar emb_scale = static_cast<Scalar>(std::sqrt(static_cast<double>(H)));
    const Scalar att_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const auto& L = p_.layout;
    Mat<Scalar> x(R, H);
    for (Eigen::Index r = 0; r < R; ++r)
      x.row(r) = p_[L.embed].row(tokens[static_cast<std::size_t>(r)]) * emb_scale +
                 p_.positions.row(caches[static_cast<std::size_t>(r)]->len);

    auto affine = [&](const Mat<Scalar>& in, int wi, int bi) {
      Mat<Scalar> o = in * p_[wi];
      o.rowwise() += p_[bi].row(0);
      return o;
    };
    auto attend = [&](const RowVec<Scalar>& q, const Mat<Scalar>& K, const Mat<Scalar>& Vm, int n) {
      RowVec<Scalar> out(H);
      for (int h = 0; h < heads; ++h) {
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> s =
            K.block(0, h * dh, n, dh) * q.segment(h * dh, dh).transpose() * att_scale;
        const Scalar m = s.maxCoeff();
        s = (s.array() - m).exp();
        s /= s.sum();
        out.segment(h * dh, dh) = s.transpose() * Vm.block(0, h * dh, n, dh);
      }
      return out;
    };

    auto keep = [&](std::size_t slot, const Mat<Scalar>& m) {
      if (record) (*record)[slot] = m;
    };
    for (std::size_t l = 0; l < L.dec.size(); ++l) {
      const auto& b = L.dec[l];
      const auto base = l * Graph<Scalar>::kSlots;
      Mat<Scalar> h = layer_norm_rows(x, p_[b.ln1_g], p_[b.ln1_b]);
      const Mat<Scalar> q = affine(h, b.self.wq, b.self.bq);
      const Mat<Scalar> k = affine(h, b.self.wk, b.self.bk);
      const Mat<Scalar> v = affine(h, b.self.wv, b.self.bv);
      keep(base, q);
      keep(base + 1, k);
      keep(base + 2, v);
      Mat<Scalar> a(R, H);
      for (Eigen::Index r = 0; r < R; ++r) {
        auto& c = *caches[static_cast<std::size_t>(r)];
        c.k[l].row(c.len) = k.row(r);
        c.v[l].row(c.len) = v.row(r);
        a.row(r) = attend(q.row(r), c.k[l], c.v[l], c.len + 1);
      }
      Mat<Scalar> o = affine(a, b.self.wo, b.self.bo);
      x += o;
      keep(base + 3, o);
      h = layer_norm_rows(x, p_[b.ln2_g], p_[b.ln2_b]);
      const Mat<Scalar> qc = affine(h, b.cross.wq, b.cross.bq);
      keep(base + 4, qc);
      for (Eigen::Index r = 0; r < R; ++r) {
        const auto& ckv = *cross[static_cast<std::size_t>(r)];
        a.row(r) = attend(qc.row(r), ckv.k[l], ckv.v[l], static_cast<int>(ckv.k[l].rows()));
      }
      o = affine(a, b.cross.wo, b.cross.bo);
      x += o;
      keep(base + 7, o);
      h = layer_norm_rows(x, p_[b.ln3_g], p_[b.ln3_b]);
      const Mat<Scalar> pre = affine(h, b.ffn.w1, b.ffn.b1);
      keep(base + 8, pre);
      o = affine(gelu_rows(pre), b.ffn.w2, b.ffn.b2);
      x += o;
      keep(base + 9, o);
    }
    for (auto* c : caches) ++c->len;
    const Mat<Scalar> h = layer_norm_rows(x, p_[L.dec_ln_g], p_[L.dec_ln_b]);
    const Mat<Scalar> out = affine(h, L.out_w, L.out_b);
    keep(L.dec.size() * Graph<Scalar>::kSlots, out);
    Mat<double> logits = out.template cast<double>();
    log_softmax_rows(logits);
    return logits;
  }

 private:
  const ModelParams<Scalar>& p_;
};

bool blocked(int id, int generated) {
  if (id == Vocab::kEos) return generated == 0;
  return Vocab::is_special(id);
}

}  // namespace

template <typename Scalar>
Mat<double> step_logprobs(const ModelParams<Scalar>& p, const Sentence& src,
                          const std::vector<int>& prefix, Direction dir) {
  IncrementalDecoder<Scalar> dec(p);
  const auto cross = dec.encode(std::span<const Sentence>(&src, 1));
  auto cache = dec.new_cache(static_cast<int>(prefix.size()) + 1);
  std::vector<SelfCache<Scalar>*> caches{&cache};
  std::vector<const CrossKV<Scalar>*> cr{&cross[0]};
  Mat<double> out(static_cast<Eigen::Index>(prefix.size()) + 1, p.vocab_size);
  int tok = Vocab::lang_tag(dir.tgt);
  for (std::size_t t = 0; t <= prefix.size(); ++t) {
    out.row(static_cast<Eigen::Index>(t)) = dec.step({tok}, caches, cr).row(0);
    if (t < prefix.size()) tok = prefix[t];
  }
  return out;
}

/// Batched greedy search. With a trace, the rows of each decoder step are
/// gathered into teacher-forced order, including one extra step for
/// sentences that stop at the length limit (its output would be eos).
template <typename Scalar>
std::vector<Sentence> greedy_decode(const IncrementalDecoder<Scalar>& dec,
                                    const std::vector<CrossKV<Scalar>>& cross, Direction dir, int max_out,
                                    DecodeTrace<Scalar>* trace) {
  const std::size_t n = cross.size();
  std::vector<Sentence> out(n);
  for (auto& s : out) s.lang = dir.tgt;
  std::vector<SelfCache<Scalar>> caches;
  caches.reserve(n);
  for (std::size_t i = 0; i < n; ++i) caches.push_back(dec.new_cache(max_out + 1));
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), 0);
  std::vector<int> last(n, Vocab::lang_tag(dir.tgt));
  const std::size_t slots = trace ? trace->dec.size() : 0;
  std::vector<std::vector<Mat<Scalar>>> records;   // per step, by slot
  std::vector<std::vector<std::size_t>> members;   // per step, sentence of each row

  auto run_step = [&]() {
    std::vector<int> toks;
    std::vector<SelfCache<Scalar>*> cs;
    std::vector<const CrossKV<Scalar>*> cr;
    for (std::size_t i : active) {
      toks.push_back(last[i]);
      cs.push_back(&caches[i]);
      cr.push_back(&cross[i]);
    }
    std::vector<Mat<Scalar>>* rec = nullptr;
    if (trace) {
      records.emplace_back(slots);
      members.push_back(active);
      rec = &records.back();
    }
    return dec.step(toks, cs, cr, rec);
  };

  const int V = static_cast<int>(dec.vocab_size());
  for (int t = 0; t < max_out && !active.empty(); ++t) {
    const Mat<double> lp = run_step();
    std::vector<std::size_t> still;
    for (std::size_t r = 0; r < active.size(); ++r) {
      int best = -1;
      double best_lp = -std::numeric_limits<double>::infinity();
      for (int w = 0; w < V; ++w) {
        if (blocked(w, t)) continue;
        const double v = lp(static_cast<Eigen::Index>(r), w);
        if (best < 0 || v > best_lp) {
          best = w;
          best_lp = v;
        }
      }
      const std::size_t i = active[r];
      if (best == Vocab::kEos) continue;
      out[i].ids.push_back(best);
      last[i] = best;
      still.push_back(i);
    }
    active = std::move(still);
  }
  if (!trace) return out;
  if (!active.empty()) run_step();

  // Row of sentence i at position t lives in records[t] at rows_of[t][i].
  std::vector<std::vector<int>> rows_of(members.size(), std::vector<int>(n, -1));
  for (std::size_t t = 0; t < members.size(); ++t)
    for (std::size_t r = 0; r < members[t].size(); ++r) rows_of[t][members[t][r]] = static_cast<int>(r);
  std::size_t total = 0;
  for (const auto& s : out) total += s.ids.size() + 1;
  trace->tgt_rows = total;
  for (std::size_t slot = 0; slot < slots; ++slot) {
    const auto k = slot % Graph<Scalar>::kSlots;
    if (slot + 1 < slots && (k == 5 || k == 6)) continue;  // filled by the encoder pass
    const auto cols = records.front()[slot].cols();
    Mat<Scalar> m(static_cast<Eigen::Index>(total), cols);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t <= out[i].ids.size(); ++t, ++row)
        m.row(row) = records[t][slot].row(rows_of[t][i]);
    trace->dec[slot] = std::move(m);
  }
  return out;
}

template <typename Scalar>
TracedTranslation<Scalar> translate_traced(const ModelParams<Scalar>& p, std::span<const Sentence> src,
                                           Direction dir, const DecodeSpec& spec) {
  validate(spec);
  if (spec.mode != DecodeSpec::Mode::greedy && spec.beam_size != 1)
    throw ConfigError("translate_traced: greedy decoding only");
  if (src.empty()) throw ConfigError("translate_traced: empty batch");
  TracedTranslation<Scalar> r;
  r.trace.dec.resize(p.layout.dec.size() * Graph<Scalar>::kSlots + 1);
  const int max_out = std::min(spec.max_len, p.dims.max_len - 1);
  IncrementalDecoder<Scalar> dec(p);
  const auto cross = dec.encode(src, &r.trace);
  r.out = greedy_decode(dec, cross, dir, max_out, &r.trace);
  return r;
}

template <typename Scalar>
std::vector<Sentence> translate(const ModelParams<Scalar>& p, std::span<const Sentence> src,
                                Direction dir, const DecodeSpec& spec) {
  validate(spec);
  std::vector<Sentence> out(src.size());
  if (src.empty()) return out;
  const int max_out = std::min(spec.max_len, p.dims.max_len - 1);
  IncrementalDecoder<Scalar> dec(p);
  const auto cross = dec.encode(src);
  const int V = p.vocab_size;

  if (spec.mode == DecodeSpec::Mode::greedy || spec.beam_size == 1) {
    out = greedy_decode<Scalar>(dec, cross, dir, max_out, nullptr);
  } else {
    struct Hyp {
      std::vector<int> tokens;
      double score = 0.0;
      SelfCache<Scalar> cache;
    };
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::vector<Hyp> alive;
      alive.push_back({{}, 0.0, dec.new_cache(max_out + 1)});
      std::vector<std::pair<double, std::vector<int>>> finished;
      const int k = spec.beam_size;
      for (int t = 0; t < max_out && !alive.empty() && static_cast<int>(finished.size()) < k; ++t) {
        std::vector<int> toks;
        std::vector<SelfCache<Scalar>*> cs;
        std::vector<const CrossKV<Scalar>*> cr;
        for (auto& h : alive) {
          toks.push_back(h.tokens.empty() ? Vocab::lang_tag(dir.tgt) : h.tokens.back());
          cs.push_back(&h.cache);
          cr.push_back(&cross[i]);
        }
        const Mat<double> lp = dec.step(toks, cs, cr);
        struct Cand {
          double score;
          std::size_t hyp;
          int tok;
        };
        std::vector<Cand> cands;
        for (std::size_t h = 0; h < alive.size(); ++h)
          for (int w = 0; w < V; ++w)
            if (!blocked(w, t)) cands.push_back({alive[h].score + lp(static_cast<Eigen::Index>(h), w), h, w});
        const std::size_t want = static_cast<std::size_t>(k) - finished.size();
        const std::size_t take = std::min(want, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take), cands.end(),
                          [](const Cand& a, const Cand& b) {
                            if (a.score != b.score) return a.score > b.score;
                            if (a.hyp != b.hyp) return a.hyp < b.hyp;
                            return a.tok < b.tok;
                          });
        std::vector<Hyp> next;
        for (std::size_t c = 0; c < take; ++c) {
          const auto& cd = cands[c];
          const auto& parent = alive[cd.hyp];
          if (cd.tok == Vocab::kEos) {
            const double len = static_cast<double>(parent.tokens.size() + 1);
            finished.emplace_back(spec.length_normalization ? cd.score / len : cd.score, parent.tokens);
          } else {
            Hyp h{parent.tokens, cd.score, parent.cache};
            h.tokens.push_back(cd.tok);
            next.push_back(std::move(h));
          }
        }
        alive = std::move(next);
      }
      for (const auto& h : alive) {
        const double len = static_cast<double>(h.tokens.size());
        finished.emplace_back(spec.length_normalization ? h.score / len : h.score, h.tokens);
      }
      std::size_t best = 0;
      for (std::size_t f = 1; f < finished.size(); ++f)
        if (finished[f].first > finished[best].first) best = f;
      out[i].ids = finished[best].second;
    }
  }
  for (auto& s : out) s.lang = dir.tgt;
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

template <typename Scalar>
Grads<Scalar> zero_grads(const ModelParams<Scalar>& p) {
  Grads<Scalar> g;
  g.reserve(p.arrays.size());
  for (const auto& a : p.arrays) g.push_back(Mat<Scalar>::Zero(a.rows(), a.cols()));
  return g;
}

template <typename Scalar>
void accumulate(Grads<Scalar>& out, const Grads<Scalar>& g, double scale) {
  if (out.size() != g.size()) throw InternalError("accumulate: gradient layouts differ");
  const Scalar s = static_cast<Scalar>(scale);
  for (std::size_t i = 0; i < g.size(); ++i) out[i] += s * g[i];
}

template <typename Scalar>
double grad_norm(const Grads<Scalar>& g) {
  double sq = 0.0;
  for (const auto& a : g) sq += static_cast<double>(a.squaredNorm());
  return std::sqrt(sq);
}

template <typename Scalar>
bool all_finite(const ModelParams<Scalar>& p) {
  for (const auto& a : p.arrays)
    if (!a.allFinite()) return false;
  return true;
}

template <typename Scalar>
void apply_update(ModelParams<Scalar>& p, const Grads<Scalar>& grads, const AdamConfig& cfg) {
  if (grads.size() != p.arrays.size()) throw InternalError("apply_update: gradient layout mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!grads[i].allFinite())
      throw ConfigError("apply_update: non-finite gradient in '" + p.layout.names[i] + "'");
  if (p.optim.m.size() != p.arrays.size()) {
    p.optim.m = zero_grads(p);
    p.optim.v = zero_grads(p);
  }
  double clip = 1.0;
  if (cfg.clip_norm > 0.0) {
    const double n = grad_norm(grads);
    if (n > cfg.clip_norm) clip = cfg.clip_norm / n;
  }
  ++p.step;
  const double t = static_cast<double>(p.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar step_size = static_cast<Scalar>(cfg.lr / bc1);
  const Scalar inv_bc2 = static_cast<Scalar>(1.0 / bc2);
  const Scalar eps = static_cast<Scalar>(cfg.eps);
  const Scalar c = static_cast<Scalar>(clip);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& m = p.optim.m[i];
    auto& v = p.optim.v[i];
    const auto g = (grads[i] * c).eval();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    p.arrays[i].array() -= step_size * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
  }
}

GradCheckResult gradient_check(ModelParams<double>& p, std::span<const Sentence> src,
                               std::span<const Sentence> tgt, Direction dir, std::size_t samples,
                               std::uint64_t seed, double h, double floor) {
  const auto analytic = nll_loss(p, src, tgt, dir, true);
  Rng rng(seed);
  std::vector<std::pair<std::size_t, Eigen::Index>> picks;
  for (std::size_t a = 0; a < p.arrays.size(); ++a)
    picks.emplace_back(a, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.arrays[a].size()))));
  while (picks.size() < samples) {
    const auto a = static_cast<std::size_t>(rng.below(p.arrays.size()));
    picks.emplace_back(a, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.arrays[a].size()))));
  }
  GradCheckResult r;
  for (const auto& [a, idx] : picks) {
    double& x = p.arrays[a].data()[idx];
    const double keep = x;
    auto at = [&](double offset) {
      x = keep + offset;
      return nll_loss(p, src, tgt, dir, false).loss;
    };
    const double d1 = at(h) - at(-h), d2 = at(2.0 * h) - at(-2.0 * h);
    x = keep;
    const double numeric = (8.0 * d1 - d2) / (12.0 * h);
    const double exact = analytic.grads[a].data()[idx];
    const double err = std::abs(exact - numeric) / std::max({std::abs(exact), std::abs(numeric), floor});
    ++r.checked;
    if (err > r.max_rel_error || r.worst.empty()) {
      r.max_rel_error = std::max(r.max_rel_error, err);
      if (err >= r.max_rel_error) r.worst = p.layout.names[a] + "[" + std::to_string(idx) + "]";
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'G', 'A', 'P', 'L', 'A', 'B', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out_.append(reinterpret_cast<const char*>(b), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    unsigned char b[sizeof(T)];
    std::memcpy(b, in_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ConfigError("checkpoint: truncated file");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
void write_array(Writer& w, const std::string& name, const Mat<Scalar>& a) {
  w.str(name);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.rows()));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.cols()));
  for (Eigen::Index i = 0; i < a.size(); ++i) w.pod<Scalar>(a.data()[i]);
}

template <typename Scalar>
Mat<Scalar> read_array(Reader& r, const std::string& expect_name, int rows, int cols) {
  const auto name = r.str();
  if (name != expect_name)
    throw ConfigError("checkpoint: expected array '" + expect_name + "', found '" + name + "'");
  const auto R = r.pod<std::uint32_t>(), C = r.pod<std::uint32_t>();
  if (static_cast<int>(R) != rows || static_cast<int>(C) != cols)
    throw ConfigError("checkpoint: array '" + name + "' has unexpected shape");
  Mat<Scalar> a(rows, cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = r.pod<Scalar>();
  return a;
}

}  // namespace

template <typename Scalar>
std::string checkpoint_bytes(const ModelParams<Scalar>& p, const Vocab& vocab) {
  if (vocab.hash() != p.vocab_hash) throw ConfigError("checkpoint: vocabulary does not match the model");
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint32_t>(sizeof(Scalar));
  for (int v : {p.dims.hidden, p.dims.layers, p.dims.heads, p.dims.ffn, p.dims.max_len})
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.pod<std::uint64_t>(p.vocab_hash);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(vocab.size()));
  for (const auto& t : vocab.tokens()) w.str(t);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.arrays.size()));
  for (std::size_t i = 0; i < p.arrays.size(); ++i) write_array(w, p.layout.names[i], p.arrays[i]);
  w.pod<std::uint64_t>(p.step);
  const bool has_optim = p.optim.m.size() == p.arrays.size();
  w.pod<std::uint8_t>(has_optim ? 1 : 0);
  if (has_optim)
    for (std::size_t i = 0; i < p.arrays.size(); ++i) {
      write_array(w, p.layout.names[i] + "#m", p.optim.m[i]);
      write_array(w, p.layout.names[i] + "#v", p.optim.v[i]);
    }
  return w.take();
}

template <typename Scalar>
LoadedCheckpoint<Scalar> parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[8];
  for (char& c : magic) c = static_cast<char>(r.pod<std::uint8_t>());
  if (!std::equal(magic, magic + 8, kMagic)) throw ConfigError("checkpoint: bad magic");
  if (r.pod<std::uint32_t>() != kVersion) throw ConfigError("checkpoint: unsupported version");
  if (r.pod<std::uint32_t>() != sizeof(Scalar))
    throw ConfigError("checkpoint: scalar width differs from the requested precision");
  Dims d;
  d.hidden = static_cast<int>(r.pod<std::uint32_t>());
  d.layers = static_cast<int>(r.pod<std::uint32_t>());
  d.heads = static_cast<int>(r.pod<std::uint32_t>());
  d.ffn = static_cast<int>(r.pod<std::uint32_t>());
  d.max_len = static_cast<int>(r.pod<std::uint32_t>());
  const auto vhash = r.pod<std::uint64_t>();
  const auto vn = r.pod<std::uint32_t>();
  std::vector<std::string> toks;
  for (std::uint32_t i = 0; i < vn; ++i) toks.push_back(r.str());
  if (vn < Vocab::kNumSpecial) throw ConfigError("checkpoint: vocabulary too small");
  LoadedCheckpoint<Scalar> out{{}, Vocab(std::vector<std::string>(toks.begin() + Vocab::kNumSpecial, toks.end()))};
  if (out.vocab.hash() != vhash) throw ConfigError("checkpoint: vocabulary hash mismatch");
  auto p = empty_model<Scalar>(d, out.vocab.size(), vhash);
  const auto n = r.pod<std::uint32_t>();
  if (n != p.arrays.size()) throw ConfigError("checkpoint: array count mismatch");
  for (std::size_t i = 0; i < n; ++i)
    p.arrays[i] = read_array<Scalar>(r, p.layout.names[i], p.layout.shapes[i].first, p.layout.shapes[i].second);
  p.step = r.pod<std::uint64_t>();
  if (r.pod<std::uint8_t>()) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto [rows, cols] = p.layout.shapes[i];
      p.optim.m.push_back(read_array<Scalar>(r, p.layout.names[i] + "#m", rows, cols));
      p.optim.v.push_back(read_array<Scalar>(r, p.layout.names[i] + "#v", rows, cols));
    }
  }
  if (!r.done()) throw ConfigError("checkpoint: trailing bytes");
  out.params = std::move(p);
  return out;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<Scalar>& p, const Vocab& vocab) {
  const auto bytes = checkpoint_bytes(p, vocab);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint<Scalar>(ss.str());
}

#define GAPLAB_MODEL_INSTANTIATE(S)                                                                \
  template struct ModelParams<S>;                                                                  \
  template class FrozenParams<S>;                                                                  \
  template ModelParams<S> init_model<S>(const Dims&, const Vocab&, std::uint64_t);                 \
  template void tie_embeddings<S>(ModelParams<S>&, std::span<const std::pair<int, int>>, double,   \
                                  std::uint64_t);                                                  \
  template LossResult<S> nll_loss<S>(const ModelParams<S>&, std::span<const Sentence>,             \
                                     std::span<const Sentence>, Direction, bool);                  \
  template GroupLossResult<S> group_loss<S>(const ModelParams<S>&, std::span<const LossGroup>, bool);      \
  template GroupLossResult<S> group_loss<S>(const ModelParams<S>&, std::span<const LossGroup>,             \
                                            std::span<const DecodeTrace<S>* const>, bool);                 \
  template TracedTranslation<S> translate_traced<S>(const ModelParams<S>&, std::span<const Sentence>,      \
                                                    Direction, const DecodeSpec&);                         \
  template std::vector<std::vector<double>> token_logprobs<S>(const ModelParams<S>&,               \
                                                              const Sentence&, const Sentence&,    \
                                                              Direction);                          \
  template std::vector<Sentence> translate<S>(const ModelParams<S>&, std::span<const Sentence>,    \
                                              Direction, const DecodeSpec&);                       \
  template Mat<double> step_logprobs<S>(const ModelParams<S>&, const Sentence&,                    \
                                        const std::vector<int>&, Direction);                       \
  template void apply_update<S>(ModelParams<S>&, const Grads<S>&, const AdamConfig&);              \
  template Grads<S> zero_grads<S>(const ModelParams<S>&);                                          \
  template void accumulate<S>(Grads<S>&, const Grads<S>&, double);                                 \
  template double grad_norm<S>(const Grads<S>&);                                                   \
  template bool all_finite<S>(const ModelParams<S>&);                                              \
  template std::string checkpoint_bytes<S>(const ModelParams<S>&, const Vocab&);                   \
  template void save_checkpoint<S>(const std::filesystem::path&, const ModelParams<S>&,            \
                                   const Vocab&);                                                  \
  template LoadedCheckpoint<S> load_checkpoint<S>(const std::filesystem::path&);                   \
  template LoadedCheckpoint<S> parse_checkpoint<S>(const std::string&);

GAPLAB_MODEL_INSTANTIATE(float)
GAPLAB_MODEL_INSTANTIATE(double)

}  // namespace gaplab
