#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gaplab/model.hpp"

using namespace gaplab;

namespace {

Vocab toy_vocab(int regular) {
  std::vector<std::string> t;
  for (int i = 0; i < regular; ++i) t.push_back("w" + std::to_string(i));
  return Vocab(t);
}

Sentence sent(std::vector<int> ids, Lang l) { return Sentence{std::move(ids), l}; }

// Plain-loop forward pass used as an independent oracle for the loss.
using Rows = std::vector<std::vector<double>>;

Rows lookup(const Mat<double>& a) {
  Rows r(static_cast<std::size_t>(a.rows()), std::vector<double>(static_cast<std::size_t>(a.cols())));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = a(i, j);
  return r;
}

struct Ref {
  const ModelParams<double>& p;
  int H;

  Rows W(int idx) const { return lookup(p[idx]); }

  Rows affine(const Rows& x, int wi, int bi) const {
    const Rows w = W(wi), b = W(bi);
    Rows out(x.size(), std::vector<double>(w[0].size(), 0.0));
    for (std::size_t r = 0; r < x.size(); ++r)
      for (std::size_t c = 0; c < w[0].size(); ++c) {
        double s = b[0][c];
        for (std::size_t k = 0; k < w.size(); ++k) s += x[r][k] * w[k][c];
        out[r][c] = s;
      }
    return out;
  }
  Rows ln(const Rows& x, int gi, int bi) const {
    const Rows g = W(gi), b = W(bi);
    Rows out = x;
    for (std::size_t r = 0; r < x.size(); ++r) {
      double mean = 0, var = 0;
      for (double v : x[r]) mean += v;
      mean /= static_cast<double>(H);
      for (double v : x[r]) var += (v - mean) * (v - mean);
      var /= static_cast<double>(H);
      for (int c = 0; c < H; ++c)
        out[r][static_cast<std::size_t>(c)] =
            (x[r][static_cast<std::size_t>(c)] - mean) / std::sqrt(var + 1e-5) * g[0][static_cast<std::size_t>(c)] +
            b[0][static_cast<std::size_t>(c)];
    }
    return out;
  }
  Rows attn(const Rows& xq, const Rows& xkv, const ParamLayout::Attn& a, bool causal) const {
    const Rows q = affine(xq, a.wq, a.bq), k = affine(xkv, a.wk, a.bk), v = affine(xkv, a.wv, a.bv);
    const int heads = p.dims.heads, dh = H / heads;
    Rows o(q.size(), std::vector<double>(static_cast<std::size_t>(H), 0.0));
    for (int h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < q.size(); ++i) {
        const std::size_t n = causal ? i + 1 : k.size();
        std::vector<double> s(n);
        double m = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
          double d = 0;
          for (int c = h * dh; c < (h + 1) * dh; ++c) d += q[i][static_cast<std::size_t>(c)] * k[j][static_cast<std::size_t>(c)];
          s[j] = d / std::sqrt(static_cast<double>(dh));
          m = std::max(m, s[j]);
        }
        double z = 0;
        for (auto& e : s) z += (e = std::exp(e - m));
        for (std::size_t j = 0; j < n; ++j)
          for (int c = h * dh; c < (h + 1) * dh; ++c)
            o[i][static_cast<std::size_t>(c)] += s[j] / z * v[j][static_cast<std::size_t>(c)];
      }
    return affine(o, a.wo, a.bo);
  }
  Rows ffn(const Rows& x, const ParamLayout::Ffn& f) const {
    Rows h = affine(x, f.w1, f.b1);
    for (auto& row : h)
      for (auto& v : row) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
    return affine(h, f.w2, f.b2);
  }
  static void add(Rows& x, const Rows& y) {
    for (std::size_t r = 0; r < x.size(); ++r)
      for (std::size_t c = 0; c < x[r].size(); ++c) x[r][c] += y[r][c];
  }
  Rows embed(const std::vector<int>& ids) const {
    const Rows e = W(p.layout.embed);
    Rows x;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(H));
      for (int c = 0; c < H; ++c) {
        const double rate = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / H);
        const double pe = c % 2 == 0 ? std::sin(static_cast<double>(i) * rate) : std::cos(static_cast<double>(i) * rate);
        row[static_cast<std::size_t>(c)] = e[static_cast<std::size_t>(ids[i])][static_cast<std::size_t>(c)] * std::sqrt(static_cast<double>(H)) + pe;
      }
      x.push_back(row);
    }
    return x;
  }

  double loss(const Sentence& src, const Sentence& tgt, Direction dir) const {
    auto enc_ids = src.ids;
    enc_ids.push_back(Vocab::kEos);
    Rows x = embed(enc_ids);
    for (const auto& b : p.layout.enc) {
      const Rows h = ln(x, b.ln1_g, b.ln1_b);
      add(x, attn(h, h, b.self, false));
      add(x, ffn(ln(x, b.ln2_g, b.ln2_b), b.ffn));
    }
    const Rows mem = ln(x, p.layout.enc_ln_g, p.layout.enc_ln_b);
    std::vector<int> dec_ids{Vocab::lang_tag(dir.tgt)};
    dec_ids.insert(dec_ids.end(), tgt.ids.begin(), tgt.ids.end());
    std::vector<int> targets = tgt.ids;
    targets.push_back(Vocab::kEos);
    Rows y = embed(dec_ids);
    for (const auto& b : p.layout.dec) {
      const Rows h = ln(y, b.ln1_g, b.ln1_b);
      add(y, attn(h, h, b.self, true));
      add(y, attn(ln(y, b.ln2_g, b.ln2_b), mem, b.cross, false));
      add(y, ffn(ln(y, b.ln3_g, b.ln3_b), b.ffn));
    }
    const Rows logits = affine(ln(y, p.layout.dec_ln_g, p.layout.dec_ln_b), p.layout.out_w, p.layout.out_b);
    double total = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      double m = -1e300, z = 0;
      for (double v : logits[i]) m = std::max(m, v);
      for (double v : logits[i]) z += std::exp(v - m);
      total -= logits[i][static_cast<std::size_t>(targets[i])] - m - std::log(z);
    }
    return total / static_cast<double>(targets.size());
  }
};

}  // namespace

TEST_CASE("parameter count matches the closed form and the hand count") {
  Dims d{8, 1, 1, 16, 16};
  // |V| = 20: embeddings 160, encoder block 600, enc norm 16, decoder block 904,
  // dec norm 16, output projection 180.
  CHECK(parameter_count(d, 20) == 1876);
  const auto p = init_model<double>(d, toy_vocab(14), 1);
  CHECK(p.vocab_size == 20);
  CHECK(p.parameter_count() == 1876);
  Dims d2{6, 2, 2, 5, 10};
  CHECK(init_model<float>(d2, toy_vocab(3), 1).parameter_count() == parameter_count(d2, 9));
}

TEST_CASE("init is deterministic and seed-dependent") {
  Dims d{8, 1, 1, 16, 16};
  const auto v = toy_vocab(10);
  const auto a = init_model<double>(d, v, 5), b = init_model<double>(d, v, 5), c = init_model<double>(d, v, 6);
  CHECK(checkpoint_bytes(a, v) == checkpoint_bytes(b, v));
  CHECK(checkpoint_bytes(a, v) != checkpoint_bytes(c, v));
  CHECK_THROWS_AS(init_model<double>(Dims{6, 1, 4, 8, 8}, v, 1), ConfigError);
}

TEST_CASE("loss agrees with a plain-loop forward pass") {
  for (Dims d : {Dims{2, 1, 1, 3, 8}, Dims{4, 2, 2, 6, 8}}) {
    const auto v = toy_vocab(5);
    const auto p = init_model<double>(d, v, 17);
    const Sentence src = sent({6, 8, 7}, Lang::A), tgt = sent({9, 10}, Lang::B);
    const double got = nll_loss(p, std::span(&src, 1), std::span(&tgt, 1), kAtoB, false).loss;
    CHECK(std::abs(got - Ref{p, d.hidden}.loss(src, tgt, kAtoB)) < 1e-10);
  }
}

TEST_CASE("uniform output gives ln|V| and the mean is batch-invariant") {
  Dims d{8, 1, 1, 8, 8};
  const auto v = toy_vocab(10);
  auto p = init_model<double>(d, v, 3);
  p.arrays[static_cast<std::size_t>(p.layout.out_w)].setZero();
  std::vector<Sentence> src{sent({6, 7}, Lang::A), sent({8}, Lang::A)};
  std::vector<Sentence> tgt{sent({9, 10, 11}, Lang::B), sent({12}, Lang::B)};
  CHECK(nll_loss(p, src, tgt, kAtoB, false).loss == doctest::Approx(std::log(16.0)).epsilon(1e-12));

  const auto q = init_model<double>(d, v, 3);
  const double once = nll_loss(q, src, tgt, kAtoB, false).loss;
  auto src2 = src, tgt2 = tgt;
  src2.insert(src2.end(), src.begin(), src.end());
  tgt2.insert(tgt2.end(), tgt.begin(), tgt.end());
  CHECK(nll_loss(q, src2, tgt2, kAtoB, false).loss == doctest::Approx(once).epsilon(1e-12));
}

TEST_CASE("packed batches equal per-sentence losses") {
  Dims d{8, 2, 2, 8, 12};
  const auto v = toy_vocab(10);
  const auto p = init_model<double>(d, v, 9);
  std::vector<Sentence> src{sent({6, 7, 8}, Lang::B), sent({9}, Lang::B)};
  std::vector<Sentence> tgt{sent({10, 11}, Lang::A), sent({12, 13, 14, 15}, Lang::A)};
  const auto both = nll_loss(p, src, tgt, kBtoA, false);
  double sum = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto one = nll_loss(p, std::span(&src[i], 1), std::span(&tgt[i], 1), kBtoA, false);
    sum += one.loss * static_cast<double>(one.tokens);
  }
  CHECK(both.tokens == 8);
  CHECK(both.loss == doctest::Approx(sum / 8.0).epsilon(1e-12));
}

TEST_CASE("packed groups equal the weighted sum of separate losses") {
  Dims d{8, 1, 2, 8, 12};
  const auto v = toy_vocab(10);
  const auto p = init_model<double>(d, v, 4);
  std::vector<Sentence> a{sent({6, 7, 8}, Lang::A), sent({9}, Lang::A)};
  std::vector<Sentence> b{sent({10, 11}, Lang::B), sent({12, 13, 14, 15}, Lang::B)};
  std::vector<Sentence> b2{sent({14}, Lang::B), sent({10, 12}, Lang::B)};
  const std::vector<LossGroup> groups{{a, b, kAtoB, 1.0}, {b, b2, Direction{Lang::B, Lang::B}, 0.3},
                                      {b2, a, kBtoA, 0.05}};
  const auto fused = group_loss(p, std::span<const LossGroup>(groups));
  auto expect = zero_grads(p);
  double total = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto one = nll_loss(p, groups[i].src, groups[i].tgt, groups[i].dir);
    CHECK(fused.losses[i] == doctest::Approx(one.loss).epsilon(1e-12));
    CHECK(fused.tokens[i] == one.tokens);
    accumulate(expect, one.grads, groups[i].weight);
    total += groups[i].weight * one.loss;
  }
  CHECK(fused.total == doctest::Approx(total).epsilon(1e-12));
  for (std::size_t k = 0; k < expect.size(); ++k)
    CHECK((fused.grads[k] - expect[k]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a traced translation replays as the forward pass of its own pairs") {
  // Two layers and two heads; max_len 5 makes the third sentence stop at the
  // length limit, which needs the extra eos position.
  Dims d{8, 2, 2, 8, 5};
  const auto v = toy_vocab(10);
  const auto p = init_model<double>(d, v, 7);
  std::vector<Sentence> a{sent({6, 7, 8}, Lang::A), sent({9}, Lang::A), sent({10, 11, 6}, Lang::A)};
  std::vector<Sentence> b{sent({10, 11}, Lang::B), sent({12, 13}, Lang::B), sent({14}, Lang::B)};
  DecodeSpec greedy;
  const auto traced = translate_traced(p, a, kAtoB, greedy);
  CHECK(traced.out == translate(p, a, kAtoB, greedy));
  bool hit_limit = false;
  for (const auto& s : traced.out) hit_limit |= static_cast<int>(s.ids.size()) == d.max_len - 1;
  CHECK(hit_limit);

  const std::vector<LossGroup> groups{{b, a, kBtoA, 1.0}, {a, traced.out, kAtoB, 0.3}};
  const std::vector<const DecodeTrace<double>*> traces{nullptr, &traced.trace};
  const auto replayed = group_loss(p, std::span<const LossGroup>(groups), std::span<const DecodeTrace<double>* const>(traces));
  const auto fresh = group_loss(p, std::span<const LossGroup>(groups));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    CHECK(replayed.losses[i] == doctest::Approx(fresh.losses[i]).epsilon(1e-12));
    CHECK(replayed.tokens[i] == fresh.tokens[i]);
  }
  for (std::size_t k = 0; k < fresh.grads.size(); ++k)
    CHECK((replayed.grads[k] - fresh.grads[k]).cwiseAbs().maxCoeff() < 1e-12);

  // A trace is tied to its own batch.
  const std::vector<LossGroup> wrong{{b, b, kBtoA, 1.0}};
  const std::vector<const DecodeTrace<double>*> wrong_trace{&traced.trace};
  CHECK_THROWS_AS(group_loss(p, std::span<const LossGroup>(wrong), std::span<const DecodeTrace<double>* const>(wrong_trace)),
                  ConfigError);
}

TEST_CASE("analytic gradients match central differences") {
  const auto v = toy_vocab(8);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    Dims d{seed % 2 ? 8 : 4, 1 + static_cast<int>(seed % 2), seed == 3 ? 2 : 1, 6, 10};
    auto p = init_model<double>(d, v, seed);
    std::vector<Sentence> src{sent({6, 7, 8}, Lang::A), sent({9, 10}, Lang::A)};
    std::vector<Sentence> tgt{sent({11, 12}, Lang::B), sent({13, 6, 7}, Lang::B)};
    const auto r = gradient_check(p, src, tgt, kAtoB, 80, seed);
    INFO(r.worst);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("over-long sequences are rejected") {
  const auto v = toy_vocab(4);
  const auto p = init_model<double>(Dims{4, 1, 1, 4, 4}, v, 1);
  const Sentence ok = sent({6, 7, 8}, Lang::A), bad = sent({6, 7, 8, 9}, Lang::A);
  CHECK_NOTHROW(nll_loss(p, std::span(&ok, 1), std::span(&ok, 1), kAtoB, false));
  CHECK_THROWS_AS(nll_loss(p, std::span(&bad, 1), std::span(&ok, 1), kAtoB, false), ConfigError);
}

TEST_CASE("step distributions normalize") {
  const auto v = toy_vocab(10);
  const auto p = init_model<float>(Dims{8, 1, 1, 8, 12}, v, 2);
  const auto lp = step_logprobs(p, sent({6, 7, 8}, Lang::A), {9, 10, 11}, kAtoB);
  for (Eigen::Index r = 0; r < lp.rows(); ++r) CHECK(std::abs(lp.row(r).array().exp().sum() - 1.0) < 1e-6);
}

TEST_CASE("incremental decoder agrees with teacher forcing") {
  const auto v = toy_vocab(10);
  const auto p = init_model<double>(Dims{8, 2, 2, 8, 12}, v, 4);
  const Sentence src = sent({6, 7, 8}, Lang::A), tgt = sent({9, 10, 11}, Lang::B);
  const auto lp = step_logprobs(p, src, tgt.ids, kAtoB);
  const auto tf = token_logprobs(p, src, tgt, kAtoB)[0];
  REQUIRE(tf.size() == 4);
  for (std::size_t t = 0; t < 3; ++t)
    CHECK(lp(static_cast<Eigen::Index>(t), tgt.ids[t]) == doctest::Approx(tf[t]).epsilon(1e-10));
  CHECK(lp(3, Vocab::kEos) == doctest::Approx(tf[3]).epsilon(1e-10));
}

TEST_CASE("greedy follows a hand-set argmax chain") {
  // Regular tokens a=6, b=7, c=8. All sublayers are zeroed so the logits only
  // depend on the current input token: tag -> a, a -> b, b -> eos.
  const auto v = Vocab({"a", "b", "c"});
  Dims d{4, 1, 1, 4, 8};
  auto p = init_model<double>(d, v, 1);
  for (std::size_t i = 0; i < p.arrays.size(); ++i) {
    const auto& name = p.layout.names[i];
    if (name.ends_with(".gain")) continue;
    p.arrays[i].setZero();
  }
  p.positions.setZero();
  auto& e = p.arrays[static_cast<std::size_t>(p.layout.embed)];
  e(Vocab::kTagB, 0) = 1;
  e(6, 1) = 1;
  e(7, 2) = 1;
  e(8, 3) = 1;
  auto& w = p.arrays[static_cast<std::size_t>(p.layout.out_w)];
  // Normalized one-hot rows are (x - 1/4) / sqrt(3/16); a dot product picks the match.
  auto route = [&](int dim, int to) {
    for (int c = 0; c < 4; ++c) w(c, to) += (c == dim ? 3.0 : -1.0);
  };
  route(0, 6);
  route(1, 7);
  route(2, Vocab::kEos);
  const Sentence src = sent({8}, Lang::A);
  DecodeSpec g;
  const auto out = translate(p, std::span(&src, 1), kAtoB, g);
  CHECK(out[0].ids == std::vector<int>{6, 7});
  CHECK(out[0].lang == Lang::B);
  DecodeSpec b{DecodeSpec::Mode::beam, 3, 63, true};
  CHECK(translate(p, std::span(&src, 1), kAtoB, b)[0].ids == std::vector<int>{6, 7});
}

TEST_CASE("greedy ties break toward the lowest id and eos is blocked first") {
  const auto v = toy_vocab(4);
  auto p = init_model<double>(Dims{4, 1, 1, 4, 6}, v, 1);
  p.arrays[static_cast<std::size_t>(p.layout.out_w)].setZero();
  auto& ob = p.arrays[static_cast<std::size_t>(p.layout.out_b)];
  ob.setZero();
  ob(0, Vocab::kEos) = 5.0;  // preferred, but not at the first step
  ob(0, Vocab::kUnk) = 9.0;  // never emitted
  const Sentence src = sent({6}, Lang::A);
  const auto out = translate(p, std::span(&src, 1), kAtoB, DecodeSpec{});
  CHECK(out[0].ids == std::vector<int>{6});
  DecodeSpec b{DecodeSpec::Mode::beam, 4, 63, true};
  CHECK(translate(p, std::span(&src, 1), kAtoB, b)[0].ids == std::vector<int>{6});
}

TEST_CASE("beam of size one equals greedy and decoding terminates") {
  const auto v = toy_vocab(12);
  const auto p = init_model<float>(Dims{8, 1, 2, 8, 10}, v, 11);
  std::vector<Sentence> src{sent({6, 7, 8}, Lang::A), sent({9, 10, 11, 12, 13}, Lang::A), sent({14}, Lang::A)};
  DecodeSpec g;
  DecodeSpec b1{DecodeSpec::Mode::beam, 1, 63, true};
  const auto a = translate(p, src, kAtoB, g);
  CHECK(a == translate(p, src, kAtoB, b1));
  DecodeSpec b5{DecodeSpec::Mode::beam, 5, 63, true};
  for (const auto& s : translate(p, src, kAtoB, b5)) {
    CHECK(!s.ids.empty());
    CHECK(s.ids.size() <= 9);
  }
  // Greedy is batch-independent.
  for (std::size_t i = 0; i < src.size(); ++i) CHECK(translate(p, std::span(&src[i], 1), kAtoB, g)[0] == a[i]);
}

TEST_CASE("Adam first step and statefulness") {
  const auto v = toy_vocab(2);
  auto p = init_model<double>(Dims{2, 1, 1, 2, 4}, v, 1);
  const auto before = p.arrays;
  auto g = zero_grads(p);
  AdamConfig cfg;
  cfg.lr = 0.1;
  apply_update(p, g, cfg);
  CHECK(p.step == 1);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(p.arrays[i] == before[i]);

  auto q = init_model<double>(Dims{2, 1, 1, 2, 4}, v, 1);
  auto g1 = zero_grads(q);
  g1[0](0, 0) = 1.0;
  const double x0 = q.arrays[0](0, 0);
  apply_update(q, g1, cfg);
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
  CHECK(q.arrays[0](0, 0) == doctest::Approx(x0 - 0.1 / (1.0 + 1e-9)).epsilon(1e-14));

  auto r1 = init_model<double>(Dims{2, 1, 1, 2, 4}, v, 1), r2 = r1;
  auto ga = zero_grads(r1), gb = zero_grads(r1);
  ga[0](0, 0) = 1.0;
  gb[0](0, 0) = -3.0;
  apply_update(r1, ga, cfg);
  apply_update(r1, gb, cfg);
  auto gsum = zero_grads(r2);
  gsum[0](0, 0) = -2.0;
  apply_update(r2, gsum, cfg);
  CHECK(r1.arrays[0](0, 0) != doctest::Approx(r2.arrays[0](0, 0)));

  auto bad = zero_grads(r2);
  bad[3](0, 0) = std::nan("");
  try {
    apply_update(r2, bad, cfg);
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(r2.layout.names[3]) != std::string::npos);
  }
}

TEST_CASE("snapshots are immutable and decode identically") {
  const auto v = toy_vocab(10);
  auto p = init_model<double>(Dims{8, 1, 1, 8, 10}, v, 3);
  const auto snap = snapshot(p);
  std::vector<Sentence> src{sent({6, 7, 8}, Lang::A)};
  CHECK(translate(snap, src, kAtoB, DecodeSpec{}) == translate(p, src, kAtoB, DecodeSpec{}));
  const auto bytes = checkpoint_bytes(snap.params(), v);
  std::vector<Sentence> tgt{sent({9, 10}, Lang::B)};
  auto lr = nll_loss(p, src, tgt, kAtoB);
  AdamConfig cfg;
  apply_update(p, lr.grads, cfg);
  CHECK(checkpoint_bytes(snap.params(), v) == bytes);
  CHECK(checkpoint_bytes(p, v) != bytes);
}

TEST_CASE("checkpoint round trip preserves everything") {
  const auto v = toy_vocab(10);
  auto p = init_model<float>(Dims{8, 2, 2, 8, 10}, v, 3);
  std::vector<Sentence> src{sent({6, 7, 8}, Lang::A)};
  std::vector<Sentence> tgt{sent({9, 10}, Lang::B)};
  apply_update(p, nll_loss(p, src, tgt, kAtoB).grads, AdamConfig{});
  const auto dir = std::filesystem::temp_directory_path() / "gaplab_test_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "m.ckpt", p, v);
  const auto back = load_checkpoint<float>(dir / "m.ckpt");
  CHECK(back.vocab.hash() == v.hash());
  CHECK(back.params.dims == p.dims);
  CHECK(back.params.step == 1);
  CHECK(checkpoint_bytes(back.params, back.vocab) == checkpoint_bytes(p, v));
  CHECK_THROWS_AS(load_checkpoint<double>(dir / "m.ckpt"), ConfigError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "junk.ckpt"), ConfigError);
  auto bytes = checkpoint_bytes(p, v);
  bytes.pop_back();
  CHECK_THROWS_AS(parse_checkpoint<float>(bytes), ConfigError);
}

TEST_CASE("tied embeddings copy rows with bounded jitter") {
  const auto v = toy_vocab(10);
  auto p = init_model<double>(Dims{8, 1, 1, 8, 10}, v, 3);
  const std::vector<std::pair<int, int>> pairs{{6, 7}, {8, 9}};
  tie_embeddings(p, pairs, 0.0, 1);
  const auto& e = p[p.layout.embed];
  CHECK(e.row(6) == e.row(7));
  CHECK(e.row(8) == e.row(9));
  tie_embeddings(p, pairs, 0.1, 1);
  CHECK(e.row(6) != e.row(7));
  CHECK((e.row(6) - e.row(7)).norm() < 0.5);
}
