#include <doctest.h>

#include <cmath>

#include "gaplab/eval.hpp"
#include "gaplab/trainer.hpp"

using namespace gaplab;

namespace {

struct Tiny {
  SynthWorld world;
  SynthData data;
  std::vector<std::pair<int, int>> anchors;
};

Tiny tiny(std::size_t mono = 32, std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.seed = seed;
  spec.vocab_size = 40;
  spec.entities_per_topic = 2;
  spec.sentence_length_range = {4, 9};
  SynthSizes sz;
  sz.mono_a = sz.mono_b = mono;
  sz.test_src_ori = sz.test_tgt_ori = 4;
  sz.parallel = 32;
  sz.valid_src_ori = sz.valid_tgt_ori = 3;
  Tiny t{expand(spec), {}, {}};
  t.data = gen_synthetic_pair(t.world, sz);
  t.anchors = lexicon_anchors(t.world, t.data.vocab);
  return t;
}

TrainConfig small_config() {
  TrainConfig c;
  c.dims = Dims{8, 1, 1, 16, 24};
  c.tokens_per_batch = 60;
  c.max_steps = 20;
  c.adam.lr = 3e-3;
  c.generation.max_len = 12;
  c.valid_decode.max_len = 12;
  return c;
}

std::vector<Sentence> first(const MonoCorpus& c, std::size_t n) {
  return {c.sentences.begin(), c.sentences.begin() + static_cast<std::ptrdiff_t>(n)};
}

bool same_grads(const Grads<double>& a, const Grads<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Online ST reuses the generation pass, so it agrees with a recomputed
// forward pass up to rounding.
bool close_grads(const Grads<double>& a, const Grads<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if ((a[i] - b[i]).cwiseAbs().maxCoeff() > 1e-12) return false;
  return true;
}

}  // namespace

TEST_CASE("lambda schedule endpoints and linearity") {
  ScheduleSpec s;
  s.dae = {1.0, 0.1, 30};
  s.st = {1e-2, 5e-2, 50};
  CHECK(lambda_at(s, 0) == Lambdas{1.0, 1e-2});
  CHECK(lambda_at(s, 50).st == 5e-2);
  CHECK(lambda_at(s, 5000) == Lambdas{0.1, 5e-2});
  CHECK(lambda_at(s, 25).st == doctest::Approx((1e-2 + 5e-2) / 2).epsilon(1e-15));
  CHECK(lambda_at(s, 15).dae == doctest::Approx(0.55).epsilon(1e-15));
  for (std::uint64_t t = 1; t < 30; ++t) CHECK(lambda_at(s, t).dae < lambda_at(s, t - 1).dae);
  ScheduleSpec flat;
  flat.st = {0.2, 0.2, 0};
  CHECK(lambda_at(flat, 0).st == 0.2);
  ScheduleSpec bad;
  bad.st = {0.1, 0.01, 10};
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("schedule lengths derive from the run length") {
  TrainConfig c;
  const auto s = resolve_schedule(c, 1000);
  CHECK(s.dae.decay_steps == 300);
  CHECK(s.st.ramp_steps == 500);
  c.schedules.st.ramp_steps = 7;
  CHECK(resolve_schedule(c, 1000).st.ramp_steps == 7);
  c.max_steps = 0;
  c.total_epochs = 3;
  CHECK(planned_steps(c, 4, 9) == 27);
  c.max_steps = 5;
  CHECK(planned_steps(c, 4, 9) == 5);
}

TEST_CASE("train config JSON layering and hashing") {
  TrainConfig c;
  c.seed = 9;
  c.generation.mode = DecodeSpec::Mode::beam;
  const auto back = train_config_from_json(to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.generation.mode == DecodeSpec::Mode::beam);

  const nlohmann::json defaults = to_json(TrainConfig{});
  const auto layered = train_config_from_json(
      layer_config(defaults, {{"seed", 4}, {"schedules", {{"st", {{"end", 0.1}}}}}}));
  CHECK(layered.seed == 4);
  CHECK(layered.schedules.st.end == 0.1);
  CHECK(layered.schedules.st.start == TrainConfig{}.schedules.st.start);
  CHECK(config_hash(layered) != config_hash(TrainConfig{}));
  TrainConfig same;
  CHECK(config_hash(same) == config_hash(TrainConfig{}));

  CHECK(train_config_from_json(nlohmann::json{{"seed", 3}}).seed == 3);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"sede", 3}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"adam", {{"learning_rate", 1}}}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"total_epochs", 0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"tokens_per_batch", 3}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"seed", "x"}}), ConfigError);
}

TEST_CASE("step logs round trip through JSON") {
  StepLog s;
  s.step = 12;
  s.lambdas = {0.4, 0.03};
  s.loss[0] = {1.5, 2.0, 0.5, 1.5 + 0.8 + 0.015};
  s.loss[1] = {1.0, 1.0, 0.0, 1.4};
  s.total = 3.715;
  s.decode_passes = 2;
  const auto back = step_log_from_json(nlohmann::json::parse(to_json(s).dump()));
  CHECK(back.step == 12);
  CHECK(back.lambdas == s.lambdas);
  CHECK(back.loss[0].st == 0.5);
  CHECK(back.total == s.total);
  CHECK_THROWS_AS(step_log_from_json(nlohmann::json{{"step", 1}}), ConfigError);
}

TEST_CASE("dual round: two decoding passes, identity and reduction to the baseline") {
  const auto t = tiny();
  const auto c = small_config();
  const auto p = initial_model<double>(c, t.data.vocab, t.anchors);
  const auto a = first(t.data.mono_a, 4), b = first(t.data.mono_b, 5);
  RoundOptions opt{c.generation, c.noise, true, nullptr};

  Rng r1(3);
  const auto st = dual_round(p, a, b, Lambdas{0.7, 0.05}, opt, r1);
  CHECK(st.log.decode_passes == 2);
  CHECK(st.log.teacher_passes == 0);
  double total = 0;
  for (const auto& d : st.log.loss) {
    CHECK(d.total == doctest::Approx(d.bt + 0.7 * d.dae + 0.05 * d.st).epsilon(1e-12));
    total += d.total;
  }
  CHECK(std::abs(st.log.total - total) < 1e-9);

  // The ST term is the teacher-forced loss on the snapshot's own translations.
  CHECK(st.log.loss[0].st == doctest::Approx(nll_loss(p, a, st.generated[0], kAtoB, false).loss).epsilon(1e-12));
  CHECK(st.log.loss[1].st == doctest::Approx(nll_loss(p, b, st.generated[1], kBtoA, false).loss).epsilon(1e-12));
  // BT for A->B learns to recover the natural B batch from its translation.
  CHECK(st.log.loss[0].bt == doctest::Approx(nll_loss(p, st.generated[1], b, kAtoB, false).loss).epsilon(1e-12));
  CHECK(st.generated[0] == translate(p, a, kAtoB, c.generation));

  Rng r2(3), r3(3);
  const auto zero = dual_round(p, a, b, Lambdas{0.7, 0.0}, opt, r2);
  auto off_opt = opt;
  off_opt.self_training = false;
  const auto off = dual_round(p, a, b, Lambdas{0.7, 0.05}, off_opt, r3);
  CHECK(zero.log.decode_passes == 2);
  CHECK(off.log.decode_passes == 2);
  CHECK(same_grads(zero.grads, off.grads));
  CHECK(zero.log.total == off.log.total);
  CHECK_FALSE(same_grads(zero.grads, st.grads));
}

TEST_CASE("a fixed teacher replaces, not adds, the ST generation") {
  const auto t = tiny();
  const auto c = small_config();
  const auto p = initial_model<double>(c, t.data.vocab, t.anchors);
  const auto a = first(t.data.mono_a, 4), b = first(t.data.mono_b, 4);

  const ModelTeacher<double> self(snapshot(p), c.generation);
  Rng r1(8), r2(8);
  const auto online = dual_round(p, a, b, Lambdas{1.0, 0.1}, RoundOptions{c.generation, c.noise, true, nullptr}, r1);
  const auto via = dual_round(p, a, b, Lambdas{1.0, 0.1}, RoundOptions{c.generation, c.noise, true, &self}, r2);
  CHECK(close_grads(online.grads, via.grads));
  CHECK(via.log.decode_passes == 2);
  CHECK(via.log.teacher_passes == 2);

  const OracleTeacher oracle(t.world, t.data.vocab);
  Rng r3(8);
  const auto kd = dual_round(p, a, b, Lambdas{1.0, 0.1}, RoundOptions{c.generation, c.noise, true, &oracle}, r3);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(kd.st_targets[0][i] == oracle_translate(a[i], kAtoB, t.world, t.data.vocab));
  CHECK(kd.generated[0] == online.generated[0]);
  CHECK(kd.log.loss[0].bt == online.log.loss[0].bt);
}

TEST_CASE("anchored rows stay tied under shared updates") {
  const auto t = tiny();
  auto c = small_config();
  c.init.pretrain_steps = 5;
  const auto p = pretrained_model<double>(c, t.data.vocab, t.data.mono_a, t.data.mono_b, t.anchors);
  const auto& e = p[p.layout.embed];
  for (const auto& [x, y] : t.anchors) CHECK(e.row(x) == e.row(y));
  CHECK(p.step == 0);
  c.init.anchor_fraction = 0.5;
  CHECK(chosen_anchors(c, t.anchors).size() == (t.anchors.size() + 1) / 2);
}

TEST_CASE("UNMT training logs, determinism and the zero-lambda baseline") {
  const auto t = tiny();
  auto c = small_config();
  c.schedules.st = {0.02, 0.05, 0};
  const auto r1 = train_unmt<double>(c, t.data.vocab, t.data.mono_a, t.data.mono_b, &t.data.valid, t.anchors);
  const auto r2 = train_unmt<double>(c, t.data.vocab, t.data.mono_a, t.data.mono_b, &t.data.valid, t.anchors);
  REQUIRE(r1.logs.size() == 20);
  CHECK_FALSE(r1.diverged);
  CHECK(checkpoint_hash(r1.best, t.data.vocab) == checkpoint_hash(r2.best, t.data.vocab));
  const auto sched = resolve_schedule(c, 20);
  for (const auto& l : r1.logs) {
    CHECK(l.lambdas == lambda_at(sched, l.step));
    CHECK(l.decode_passes == 2);
  }
  CHECK(r1.valid.size() == 1);

  auto zero = c;
  zero.schedules.st = {0.0, 0.0, 0};
  auto off = c;
  off.self_training = false;
  const auto z = train_unmt<double>(zero, t.data.vocab, t.data.mono_a, t.data.mono_b, nullptr, t.anchors);
  const auto o = train_unmt<double>(off, t.data.vocab, t.data.mono_a, t.data.mono_b, nullptr, t.anchors);
  CHECK(checkpoint_hash(z.best, t.data.vocab) == checkpoint_hash(o.best, t.data.vocab));
  CHECK(checkpoint_hash(z.best, t.data.vocab) != checkpoint_hash(r1.best, t.data.vocab));
}

TEST_CASE("UNMT loss falls over the first 100 steps on a 32-sentence corpus") {
  int decreasing = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t = tiny(32, seed);
    auto c = small_config();
    c.seed = seed;
    c.max_steps = 100;
    const auto r = train_unmt<float>(c, t.data.vocab, t.data.mono_a, t.data.mono_b, nullptr, t.anchors);
    REQUIRE(r.logs.size() == 100);
    // Windowed means: per-step losses are noisy because batches differ.
    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
      head += r.logs[static_cast<std::size_t>(i)].total;
      tail += r.logs[static_cast<std::size_t>(90 + i)].total;
    }
    decreasing += tail < head;
  }
  CHECK(decreasing >= 4);
}

TEST_CASE("divergence aborts and keeps the best checkpoint") {
  const auto t = tiny();
  auto c = small_config();
  c.adam.lr = 1e38;
  c.max_steps = 30;
  const auto r = train_unmt<float>(c, t.data.vocab, t.data.mono_a, t.data.mono_b, &t.data.valid, t.anchors);
  CHECK(r.diverged);
  CHECK_FALSE(r.abort_reason.empty());
  CHECK(r.steps < 30);
  CHECK(all_finite(r.best));
}

TEST_CASE("supervised training memorizes a few pairs and is deterministic") {
  const auto t = tiny();
  auto c = small_config();
  c.dims = Dims{16, 1, 1, 32, 24};
  c.max_steps = 400;
  c.adam.lr = 5e-3;
  ParallelSet few;
  few.pairs.assign(t.data.parallel_train.pairs.begin(), t.data.parallel_train.pairs.begin() + 6);
  const auto r = train_supervised<float>(c, t.data.vocab, few, nullptr);
  DecodeSpec g;
  g.max_len = 12;
  CHECK(split_eval(r.best, few, g).full->bleu >= 90.0);
  CHECK(split_eval(r.best, reversed(few), g).full->bleu >= 90.0);
  auto short_run = c;
  short_run.max_steps = 5;
  const auto x = train_supervised<float>(short_run, t.data.vocab, few, nullptr);
  const auto y = train_supervised<float>(short_run, t.data.vocab, few, nullptr);
  CHECK(checkpoint_hash(x.best, t.data.vocab) == checkpoint_hash(y.best, t.data.vocab));
}

TEST_CASE("distillation data covers both corpora with origin tags") {
  const auto t = tiny(10);
  const OracleTeacher oracle(t.world, t.data.vocab);
  const auto d = distillation_data(oracle, t.data.mono_a, t.data.mono_b);
  REQUIRE(d.size() == 20);
  CHECK(d.direction() == kAtoB);
  CHECK(filter_origin(d, Origin::source_original).size() == 10);
  CHECK(d.pairs[0].src == t.data.mono_a.sentences[0]);
  CHECK(d.pairs[0].ref == oracle_translate(t.data.mono_a.sentences[0], kAtoB, t.world, t.data.vocab));
  CHECK(d.pairs[10].ref == t.data.mono_b.sentences[0]);
  CHECK(d.pairs[10].origin == Origin::target_original);
  CHECK(reversed(d).size() == 20);
}
