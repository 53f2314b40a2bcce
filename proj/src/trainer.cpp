#include "gaplab/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "gaplab/eval.hpp"

namespace gaplab {

NLOHMANN_JSON_SERIALIZE_ENUM(DecodeSpec::Mode, {{DecodeSpec::Mode::greedy, "greedy"},
                                                {DecodeSpec::Mode::beam, "beam"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Dims, hidden, layers, heads, ffn, max_len)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleSpec::Dae, start, end, decay_steps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleSpec::St, start, end, ramp_steps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleSpec, dae, st)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, lr, beta1, beta2, eps, clip_norm)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DecodeSpec, mode, beam_size, max_len, length_normalization)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NoiseSpec, drop_prob, blank_prob, shuffle_window)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(InitSpec, anchor_fraction, jitter, shared_updates, pretrain_steps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, dims, schedules, dae_decay_fraction,
                                                st_ramp_fraction, self_training, tokens_per_batch, total_epochs,
                                                max_steps, seed, adam, generation, valid_decode, noise,
                                                valid_every, init)

void validate(const ScheduleSpec& s) {
  if (s.dae.start < 0 || s.dae.end < 0 || s.st.start < 0 || s.st.end < 0)
    throw ConfigError("schedule: lambda values must be >= 0");
  if (s.st.start > s.st.end) throw ConfigError("schedule: st.start must not exceed st.end");
}

Lambdas lambda_at(const ScheduleSpec& s, std::uint64_t step) {
  auto ramp = [step](double a, double b, std::uint64_t len) {
    if (step >= len) return b;
    return a + (b - a) * (static_cast<double>(step) / static_cast<double>(len));
  };
  return {ramp(s.dae.start, s.dae.end, s.dae.decay_steps), ramp(s.st.start, s.st.end, s.st.ramp_steps)};
}

// ---------------------------------------------------------------------------

void validate(const TrainConfig& c) {
  validate(c.dims);
  validate(c.schedules);
  validate(c.generation);
  validate(c.valid_decode);
  validate(c.noise);
  if (c.total_epochs < 1) throw ConfigError("train: total_epochs must be >= 1");
  if (c.tokens_per_batch < static_cast<std::size_t>(c.dims.max_len))
    throw ConfigError("train: tokens_per_batch must be >= max_len");
  if (c.dae_decay_fraction < 0 || c.dae_decay_fraction > 1 || c.st_ramp_fraction < 0 || c.st_ramp_fraction > 1)
    throw ConfigError("train: schedule fractions must lie in [0, 1]");
  if (!(c.adam.lr > 0)) throw ConfigError("train: adam.lr must be > 0");
  if (c.init.anchor_fraction < 0 || c.init.anchor_fraction > 1)
    throw ConfigError("train: init.anchor_fraction must lie in [0, 1]");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = c;
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
  if (!given.is_object() || !known.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    if (!known.contains(k)) throw ConfigError("train config: unknown key '" + path + k + "'");
    reject_unknown(v, known[k], path + k + ".");
  }
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
  reject_unknown(j, to_json(TrainConfig{}), "");
  TrainConfig c;
  try {
    c = j.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json layer_config(const nlohmann::json& defaults, const nlohmann::json& overrides) {
  nlohmann::json out = defaults;
  out.merge_patch(overrides);
  return out;
}

std::uint64_t config_hash(const TrainConfig& c) { return fnv64(to_json(c).dump()); }

std::uint64_t planned_steps(const TrainConfig& c, std::size_t batches_a, std::size_t batches_b) {
  if (c.max_steps > 0) return c.max_steps;
  return static_cast<std::uint64_t>(c.total_epochs) * std::max(batches_a, batches_b);
}

ScheduleSpec resolve_schedule(const TrainConfig& c, std::uint64_t total_steps) {
  ScheduleSpec s = c.schedules;
  const auto frac = [total_steps](double f) {
    return static_cast<std::uint64_t>(std::llround(f * static_cast<double>(total_steps)));
  };
  if (s.dae.decay_steps == 0) s.dae.decay_steps = frac(c.dae_decay_fraction);
  if (s.st.ramp_steps == 0) s.st.ramp_steps = frac(c.st_ramp_fraction);
  return s;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const StepLog& s) {
  auto dir = [](const DirectionLoss& d) {
    return nlohmann::json{{"bt", d.bt}, {"dae", d.dae}, {"st", d.st}, {"total", d.total}};
  };
  return {{"step", s.step},
          {"lambda_dae", s.lambdas.dae},
          {"lambda_st", s.lambdas.st},
          {"A->B", dir(s.loss[0])},
          {"B->A", dir(s.loss[1])},
          {"total", s.total},
          {"decode_passes", s.decode_passes},
          {"teacher_passes", s.teacher_passes},
          {"generated_sentences", s.generated_sentences},
          {"grad_norm", s.grad_norm},
          {"wall_ms", s.wall_ms}};
}

StepLog step_log_from_json(const nlohmann::json& j) {
  StepLog s;
  try {
    s.step = j.at("step").get<std::uint64_t>();
    s.lambdas = {j.at("lambda_dae").get<double>(), j.at("lambda_st").get<double>()};
    const char* names[2] = {"A->B", "B->A"};
    for (std::size_t d = 0; d < 2; ++d) {
      const auto& x = j.at(names[d]);
      s.loss[d] = {x.at("bt").get<double>(), x.at("dae").get<double>(), x.at("st").get<double>(),
                   x.at("total").get<double>()};
    }
    s.total = j.at("total").get<double>();
    s.decode_passes = j.at("decode_passes").get<std::size_t>();
    s.teacher_passes = j.at("teacher_passes").get<std::size_t>();
    s.generated_sentences = j.at("generated_sentences").get<std::size_t>();
    s.grad_norm = j.at("grad_norm").get<double>();
    s.wall_ms = j.at("wall_ms").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("step log: ") + e.what());
  }
  return s;
}

nlohmann::json to_json(const ValidPoint& v) {
  return {{"step", v.step}, {"bleu_A->B", v.bleu_ab}, {"bleu_B->A", v.bleu_ba}, {"mean", v.mean()}};
}

std::vector<Sentence> OracleTeacher::translate(std::span<const Sentence> src, Direction dir) const {
  std::vector<Sentence> out;
  out.reserve(src.size());
  for (const auto& s : src) out.push_back(oracle_translate(s, dir, world_, vocab_));
  return out;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
RoundResult<Scalar> dual_round(const ModelParams<Scalar>& p, std::span<const Sentence> batch_a,
                               std::span<const Sentence> batch_b, const Lambdas& lambdas,
                               const RoundOptions& opt, Rng& rng) {
  if (batch_a.empty() || batch_b.empty()) throw ConfigError("dual_round: empty batch");
  RoundResult<Scalar> r;
  r.log.lambdas = lambdas;

  const bool with_st = opt.self_training && lambdas.st != 0.0;
  // Online ST on the snapshot's own output reuses the generation pass as
  // its forward pass.
  const bool reuse = with_st && !opt.teacher && opt.generation.mode == DecodeSpec::Mode::greedy;
  const auto frozen = snapshot(p);
  std::array<DecodeTrace<Scalar>, 2> traces;
  if (reuse) {
    auto ta = translate_traced(frozen.params(), batch_a, kAtoB, opt.generation);
    auto tb = translate_traced(frozen.params(), batch_b, kBtoA, opt.generation);
    r.generated = {std::move(ta.out), std::move(tb.out)};
    traces = {std::move(ta.trace), std::move(tb.trace)};
  } else {
    r.generated[0] = translate(frozen, batch_a, kAtoB, opt.generation);
    r.generated[1] = translate(frozen, batch_b, kBtoA, opt.generation);
  }
  r.log.decode_passes = 2;
  r.log.generated_sentences = batch_a.size() + batch_b.size();

  if (with_st) {
    if (opt.teacher) {
      r.st_targets[0] = opt.teacher->translate(batch_a, kAtoB);
      r.st_targets[1] = opt.teacher->translate(batch_b, kBtoA);
      r.log.teacher_passes = 2;
    } else {
      r.st_targets = r.generated;
    }
  }

  std::array<std::vector<Sentence>, 2> noised;
  for (const auto& s : batch_a) noised[0].push_back(apply_noise(s, opt.noise, rng));
  for (const auto& s : batch_b) noised[1].push_back(apply_noise(s, opt.noise, rng));

  // Direction d: 0 = A->B, 1 = B->A. BT for A->B pairs B-batch translations
  // (now in A) with the natural B batch; DAE reconstructs the target language.
  const std::array<std::span<const Sentence>, 2> natural{batch_a, batch_b};
  const std::array<Direction, 2> dirs{kAtoB, kBtoA};
  std::vector<LossGroup> groups;
  for (std::size_t d = 0; d < 2; ++d) {
    const std::size_t tgt = 1 - d;
    groups.push_back({r.generated[tgt], natural[tgt], dirs[d], 1.0});
    groups.push_back({noised[tgt], natural[tgt], Direction{dirs[d].tgt, dirs[d].tgt}, lambdas.dae});
  }
  std::vector<const DecodeTrace<Scalar>*> group_traces;
  if (with_st)
    for (std::size_t d = 0; d < 2; ++d) groups.push_back({natural[d], r.st_targets[d], dirs[d], lambdas.st});
  if (reuse) group_traces = {nullptr, nullptr, nullptr, nullptr, &traces[0], &traces[1]};

  auto res = group_loss(p, std::span<const LossGroup>(groups),
                        std::span<const DecodeTrace<Scalar>* const>(group_traces));
  for (std::size_t d = 0; d < 2; ++d) {
    auto& l = r.log.loss[d];
    l.bt = res.losses[2 * d];
    l.dae = res.losses[2 * d + 1];
    if (with_st) l.st = res.losses[4 + d];
    l.total = l.bt + lambdas.dae * l.dae + lambdas.st * l.st;
  }
  r.log.total = r.log.loss[0].total + r.log.loss[1].total;
  r.grads = std::move(res.grads);
  r.log.grad_norm = grad_norm(r.grads);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

/// Endless stream of batches over one corpus, reshuffled each epoch.
class BatchStream {
 public:
  BatchStream(const MonoCorpus& c, std::size_t tokens, Rng& rng) : c_(c), tokens_(tokens), rng_(rng) {
    refill();
  }
  std::size_t per_epoch() const { return per_epoch_; }
  std::vector<Sentence> next() {
    if (pos_ == batches_.size()) refill();
    std::vector<Sentence> out;
    for (auto i : batches_[pos_]) out.push_back(c_.sentences[i]);
    ++pos_;
    return out;
  }

 private:
  void refill() {
    batches_ = make_batches(c_, tokens_, rng_);
    per_epoch_ = batches_.size();
    pos_ = 0;
  }
  const MonoCorpus& c_;
  std::size_t tokens_;
  Rng& rng_;
  std::vector<Batch> batches_;
  std::size_t per_epoch_ = 0;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::pair<int, int>> lexicon_anchors(const SynthWorld& world, const Vocab& vocab) {
  std::vector<std::pair<int, int>> out;
  for (const auto& [a, b] : world.lexicon_pairs()) {
    const auto ia = vocab.find(a), ib = vocab.find(b);
    if (ia && ib && *ia != *ib) out.emplace_back(*ia, *ib);
  }
  return out;
}

std::vector<std::pair<int, int>> chosen_anchors(const TrainConfig& c, std::span<const std::pair<int, int>> anchors) {
  std::vector<std::pair<int, int>> chosen(anchors.begin(), anchors.end());
  Rng rng(derive_seed(c.seed, 101));
  rng.shuffle(chosen);
  chosen.resize(static_cast<std::size_t>(std::llround(c.init.anchor_fraction * static_cast<double>(chosen.size()))));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

template <typename Scalar>
ModelParams<Scalar> initial_model(const TrainConfig& c, const Vocab& vocab,
                                  std::span<const std::pair<int, int>> anchors) {
  auto p = init_model<Scalar>(c.dims, vocab, c.seed);
  const auto chosen = chosen_anchors(c, anchors);
  if (!chosen.empty())
    tie_embeddings(p, std::span<const std::pair<int, int>>(chosen), c.init.jitter, derive_seed(c.seed, 102));
  return p;
}

template <typename Scalar>
void share_anchor_grads(Grads<Scalar>& g, const ModelParams<Scalar>& p,
                        std::span<const std::pair<int, int>> pairs) {
  auto& e = g[static_cast<std::size_t>(p.layout.embed)];
  for (const auto& [a, b] : pairs) {
    const RowVec<Scalar> sum = e.row(a) + e.row(b);
    e.row(a) = sum;
    e.row(b) = sum;
  }
}

template <typename Scalar>
ModelParams<Scalar> pretrained_model(const TrainConfig& c, const Vocab& vocab, const MonoCorpus& mono_a,
                                     const MonoCorpus& mono_b, std::span<const std::pair<int, int>> anchors) {
  validate(c);
  auto p = initial_model<Scalar>(c, vocab, anchors);
  if (c.init.pretrain_steps == 0) return p;
  const auto shared = c.init.shared_updates ? chosen_anchors(c, anchors) : std::vector<std::pair<int, int>>{};
  Rng data_rng(derive_seed(c.seed, 301)), noise_rng(derive_seed(c.seed, 302));
  BatchStream sa(mono_a, c.tokens_per_batch, data_rng), sb(mono_b, c.tokens_per_batch, data_rng);
  for (std::uint64_t step = 0; step < c.init.pretrain_steps; ++step) {
    const auto a = sa.next(), b = sb.next();
    std::vector<Sentence> na, nb;
    for (const auto& s : a) na.push_back(apply_noise(s, c.noise, noise_rng));
    for (const auto& s : b) nb.push_back(apply_noise(s, c.noise, noise_rng));
    const std::vector<LossGroup> groups{{na, a, Direction{Lang::A, Lang::A}, 1.0},
                                        {nb, b, Direction{Lang::B, Lang::B}, 1.0}};
    auto res = group_loss(p, std::span<const LossGroup>(groups));
    share_anchor_grads(res.grads, p, std::span<const std::pair<int, int>>(shared));
    if (!std::isfinite(res.total)) throw RuntimeError("pretraining diverged at step " + std::to_string(step));
    apply_update(p, res.grads, c.adam);
  }
  p.step = 0;
  p.optim = {};
  return p;
}

template <typename Scalar>
ValidPoint validate_bleu(const ModelParams<Scalar>& p, const ParallelSet& valid, const DecodeSpec& decode,
                         std::uint64_t step) {
  ValidPoint v;
  v.step = step;
  const auto ab = valid.direction() == kAtoB ? valid : reversed(valid);
  v.bleu_ab = split_eval(p, ab, decode).full->bleu;
  v.bleu_ba = split_eval(p, reversed(ab), decode).full->bleu;
  return v;
}

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

template <typename Scalar>
void consider(TrainResult<Scalar>& r, const ModelParams<Scalar>& p, const ParallelSet* valid,
              const DecodeSpec& decode) {
  if (!valid) {
    r.best = p;
    r.best_step = p.step;
    return;
  }
  const auto v = validate_bleu(p, *valid, decode, p.step);
  r.valid.push_back(v);
  if (v.mean() > r.best_valid) {
    r.best_valid = v.mean();
    r.best = p;
    r.best_step = p.step;
  }
}

template <typename Scalar>
bool try_update(TrainResult<Scalar>& r, ModelParams<Scalar>& p, const Grads<Scalar>& g, double loss,
                const AdamConfig& adam) {
  if (!std::isfinite(loss)) {
    r.diverged = true;
    r.abort_reason = "non-finite loss at step " + std::to_string(p.step);
    return false;
  }
  try {
    apply_update(p, g, adam);
  } catch (const ConfigError& e) {
    r.diverged = true;
    r.abort_reason = e.what();
    return false;
  }
  if (!all_finite(p)) {
    r.diverged = true;
    r.abort_reason = "non-finite parameters after step " + std::to_string(p.step);
    return false;
  }
  return true;
}

}  // namespace

template <typename Scalar>
TrainResult<Scalar> train_unmt(const TrainConfig& c, const Vocab& vocab, const MonoCorpus& mono_a,
                               const MonoCorpus& mono_b, const ParallelSet* valid,
                               std::span<const std::pair<int, int>> anchors, const Teacher* teacher,
                               const StepCallback& on_step, const ModelParams<Scalar>* start) {
  validate(c);
  if (mono_a.size() == 0 || mono_b.size() == 0) throw ConfigError("train_unmt: empty monolingual corpus");
  Rng data_rng(derive_seed(c.seed, 201)), noise_rng(derive_seed(c.seed, 202));
  BatchStream sa(mono_a, c.tokens_per_batch, data_rng), sb(mono_b, c.tokens_per_batch, data_rng);
  const auto total = planned_steps(c, sa.per_epoch(), sb.per_epoch());
  const auto sched = resolve_schedule(c, total);

  TrainResult<Scalar> r;
  auto p = start ? *start : pretrained_model<Scalar>(c, vocab, mono_a, mono_b, anchors);
  const auto shared = c.init.shared_updates ? chosen_anchors(c, anchors) : std::vector<std::pair<int, int>>{};
  r.best = p;
  RoundOptions opt{c.generation, c.noise, c.self_training, teacher};
  for (std::uint64_t step = 0; step < total; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto a = sa.next(), b = sb.next();
    auto round = dual_round(p, a, b, lambda_at(sched, step), opt, noise_rng);
    round.log.step = step;
    share_anchor_grads(round.grads, p, std::span<const std::pair<int, int>>(shared));
    if (!try_update(r, p, round.grads, round.log.total, c.adam)) break;
    round.log.wall_ms = elapsed_ms(t0);
    if (on_step) on_step(round.log);
    r.logs.push_back(round.log);
    r.steps = step + 1;
    if (c.valid_every > 0 && (step + 1) % c.valid_every == 0 && step + 1 < total) consider(r, p, valid, c.valid_decode);
  }
  if (!r.diverged) consider(r, p, valid, c.valid_decode);
  return r;
}

template <typename Scalar>
TrainResult<Scalar> train_supervised(const TrainConfig& c, const Vocab& vocab, const ParallelSet& parallel,
                                     const ParallelSet* valid, const StepCallback& on_step) {
  validate(c);
  if (parallel.size() == 0) throw ConfigError("train_supervised: empty parallel set");
  const auto dir = parallel.direction();
  std::vector<std::size_t> lengths;
  for (const auto& pr : parallel.pairs) lengths.push_back(std::max(pr.src.ids.size(), pr.ref.ids.size()) + 1);
  Rng data_rng(derive_seed(c.seed, 201));
  auto batches = make_batches(lengths, c.tokens_per_batch, data_rng);
  const auto total = planned_steps(c, batches.size(), batches.size());

  TrainResult<Scalar> r;
  auto p = initial_model<Scalar>(c, vocab, {});
  r.best = p;
  std::size_t pos = 0;
  for (std::uint64_t step = 0; step < total; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    if (pos == batches.size()) {
      batches = make_batches(lengths, c.tokens_per_batch, data_rng);
      pos = 0;
    }
    std::vector<Sentence> src, ref;
    for (auto i : batches[pos]) {
      src.push_back(parallel.pairs[i].src);
      ref.push_back(parallel.pairs[i].ref);
    }
    ++pos;
    const std::vector<LossGroup> groups{{src, ref, dir, 1.0}, {ref, src, Direction{dir.tgt, dir.src}, 1.0}};
    auto res = group_loss(p, std::span<const LossGroup>(groups));
    StepLog log;
    log.step = step;
    log.lambdas = {0.0, 0.0};
    const std::size_t fwd = dir == kAtoB ? 0 : 1;
    log.loss[fwd].bt = log.loss[fwd].total = res.losses[0];
    log.loss[1 - fwd].bt = log.loss[1 - fwd].total = res.losses[1];
    log.total = res.total;
    log.grad_norm = grad_norm(res.grads);
    if (!try_update(r, p, res.grads, res.total, c.adam)) break;
    log.wall_ms = elapsed_ms(t0);
    if (on_step) on_step(log);
    r.logs.push_back(log);
    r.steps = step + 1;
    if (c.valid_every > 0 && (step + 1) % c.valid_every == 0 && step + 1 < total) consider(r, p, valid, c.valid_decode);
  }
  if (!r.diverged) consider(r, p, valid, c.valid_decode);
  return r;
}

ParallelSet distillation_data(const Teacher& teacher, const MonoCorpus& mono_a, const MonoCorpus& mono_b) {
  ParallelSet out;
  const auto fwd = teacher.translate(mono_a.sentences, kAtoB);
  for (std::size_t i = 0; i < fwd.size(); ++i)
    out.pairs.push_back({mono_a.sentences[i], fwd[i], Origin::source_original, Provenance::model_translated});
  const auto bwd = teacher.translate(mono_b.sentences, kBtoA);
  for (std::size_t i = 0; i < bwd.size(); ++i)
    out.pairs.push_back({bwd[i], mono_b.sentences[i], Origin::target_original, Provenance::model_translated});
  return out;
}

template <typename Scalar>
DistillResult<Scalar> offline_st_distill(const Teacher& teacher, const TrainConfig& c, const Vocab& vocab,
                                         const MonoCorpus& mono_a, const MonoCorpus& mono_b,
                                         const ParallelSet* valid) {
  DistillResult<Scalar> r;
  r.data = distillation_data(teacher, mono_a, mono_b);
  r.student = train_supervised<Scalar>(c, vocab, r.data, valid);
  return r;
}

template <typename Scalar>
TrainResult<Scalar> kd_distill(const Teacher& teacher, const TrainConfig& c, const Vocab& vocab,
                               const MonoCorpus& mono_a, const MonoCorpus& mono_b, const ParallelSet* valid,
                               std::span<const std::pair<int, int>> anchors, const StepCallback& on_step,
                               const ModelParams<Scalar>* start) {
  TrainConfig kc = c;
  kc.self_training = true;
  return train_unmt<Scalar>(kc, vocab, mono_a, mono_b, valid, anchors, &teacher, on_step, start);
}

#define GAPLAB_TRAINER_INSTANTIATE(S)                                                                  \
  template class ModelTeacher<S>;                                                                      \
  template RoundResult<S> dual_round<S>(const ModelParams<S>&, std::span<const Sentence>,              \
                                        std::span<const Sentence>, const Lambdas&, const RoundOptions&, \
                                        Rng&);                                                         \
  template ModelParams<S> initial_model<S>(const TrainConfig&, const Vocab&,                           \
                                           std::span<const std::pair<int, int>>);                      \
  template ValidPoint validate_bleu<S>(const ModelParams<S>&, const ParallelSet&, const DecodeSpec&,   \
                                       std::uint64_t);                                                 \
  template TrainResult<S> train_unmt<S>(const TrainConfig&, const Vocab&, const MonoCorpus&,           \
                                        const MonoCorpus&, const ParallelSet*,                         \
                                        std::span<const std::pair<int, int>>, const Teacher*,          \
                                        const StepCallback&, const ModelParams<S>*);                   \
  template void share_anchor_grads<S>(Grads<S>&, const ModelParams<S>&,                                \
                                      std::span<const std::pair<int, int>>);                           \
  template ModelParams<S> pretrained_model<S>(const TrainConfig&, const Vocab&, const MonoCorpus&,     \
                                              const MonoCorpus&, std::span<const std::pair<int, int>>); \
  template TrainResult<S> train_supervised<S>(const TrainConfig&, const Vocab&, const ParallelSet&,    \
                                              const ParallelSet*, const StepCallback&);                \
  template DistillResult<S> offline_st_distill<S>(const Teacher&, const TrainConfig&, const Vocab&,    \
                                                  const MonoCorpus&, const MonoCorpus&,                \
                                                  const ParallelSet*);                                 \
  template TrainResult<S> kd_distill<S>(const Teacher&, const TrainConfig&, const Vocab&,              \
                                        const MonoCorpus&, const MonoCorpus&, const ParallelSet*,      \
                                        std::span<const std::pair<int, int>>, const StepCallback&,     \
                                        const ModelParams<S>*);

GAPLAB_TRAINER_INSTANTIATE(float)
GAPLAB_TRAINER_INSTANTIATE(double)

}  // namespace gaplab
