#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaplab/corpus.hpp"
#include "gaplab/model.hpp"

namespace gaplab {

// ---------------------------------------------------------------------------
// Schedules

struct ScheduleSpec {
  struct Dae {
    double start = 1.0;
    double end = 0.1;
    std::uint64_t decay_steps = 0;
  } dae;
  struct St {
    double start = 1e-2;
    double end = 5e-2;
    std::uint64_t ramp_steps = 0;
  } st;
};

void validate(const ScheduleSpec& s);

struct Lambdas {
  double dae = 1.0;
  double st = 0.0;
  friend bool operator==(const Lambdas&, const Lambdas&) = default;
};

/// Linear interpolation start -> end over the given number of steps, then
/// constant. A zero-length ramp is at its end value from step 0.
Lambdas lambda_at(const ScheduleSpec& s, std::uint64_t step);

// ---------------------------------------------------------------------------
// Configuration

struct InitSpec {
  /// Share of lexicon pairs whose embeddings start tied across languages.
  double anchor_fraction = 1.0;
  double jitter = 0.0;
  /// Anchored rows keep receiving identical updates during training.
  bool shared_updates = true;
  /// Denoising-only steps before the main loop.
  std::uint64_t pretrain_steps = 0;
};

struct TrainConfig {
  Dims dims{32, 1, 1, 64, 48};
  ScheduleSpec schedules;
  /// Used to derive decay/ramp lengths when the schedule leaves them at 0.
  double dae_decay_fraction = 0.3;
  double st_ramp_fraction = 0.5;
  bool self_training = true;
  std::size_t tokens_per_batch = 2500;
  std::size_t total_epochs = 1;
  std::uint64_t max_steps = 0;  // 0: epochs decide
  std::uint64_t seed = 1;
  AdamConfig adam;
  DecodeSpec generation;                // training-time translation (BT/ST)
  DecodeSpec valid_decode;              // model selection
  NoiseSpec noise;
  std::uint64_t valid_every = 0;        // 0: only at the end
  InitSpec init;
};

void validate(const TrainConfig& c);
nlohmann::json to_json(const TrainConfig& c);
/// Unknown keys are rejected; absent keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
/// `defaults` with `overrides` merged on top (RFC 7386 merge patch).
nlohmann::json layer_config(const nlohmann::json& defaults, const nlohmann::json& overrides);
std::uint64_t config_hash(const TrainConfig& c);

/// Steps a run takes given per-language batch counts: epochs times the larger
/// batch count, unless max_steps is set.
std::uint64_t planned_steps(const TrainConfig& c, std::size_t batches_a, std::size_t batches_b);
/// Schedule with zero lengths filled in from the fractions.
ScheduleSpec resolve_schedule(const TrainConfig& c, std::uint64_t total_steps);

// ---------------------------------------------------------------------------
// Logs

/// Losses of one direction X->Y: back-translation pairs {x', y}, denoising
/// of Y, and self-training pairs {x, y'}.
struct DirectionLoss {
  double bt = 0.0;
  double dae = 0.0;
  double st = 0.0;
  double total = 0.0;  // bt + lambda_D * dae + lambda_S * st
};

struct StepLog {
  std::uint64_t step = 0;
  Lambdas lambdas;
  std::array<DirectionLoss, 2> loss{};  // [A->B, B->A]
  double total = 0.0;
  std::size_t decode_passes = 0;
  std::size_t teacher_passes = 0;
  std::size_t generated_sentences = 0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

nlohmann::json to_json(const StepLog& s);
StepLog step_log_from_json(const nlohmann::json& j);

struct ValidPoint {
  std::uint64_t step = 0;
  double bleu_ab = 0.0;
  double bleu_ba = 0.0;
  double mean() const { return 0.5 * (bleu_ab + bleu_ba); }
};

nlohmann::json to_json(const ValidPoint& v);

// ---------------------------------------------------------------------------
// Teachers for self-training targets

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual std::vector<Sentence> translate(std::span<const Sentence> src, Direction dir) const = 0;
  virtual std::string name() const = 0;
};

template <typename Scalar>
class ModelTeacher : public Teacher {
 public:
  ModelTeacher(FrozenParams<Scalar> p, DecodeSpec spec) : p_(std::move(p)), spec_(spec) {}
  std::vector<Sentence> translate(std::span<const Sentence> src, Direction dir) const override {
    return gaplab::translate(p_, src, dir, spec_);
  }
  std::string name() const override { return "model"; }

 private:
  FrozenParams<Scalar> p_;
  DecodeSpec spec_;
};

class OracleTeacher : public Teacher {
 public:
  OracleTeacher(const SynthWorld& world, const Vocab& vocab) : world_(world), vocab_(vocab) {}
  std::vector<Sentence> translate(std::span<const Sentence> src, Direction dir) const override;
  std::string name() const override { return "oracle"; }

 private:
  const SynthWorld& world_;
  const Vocab& vocab_;
};

// ---------------------------------------------------------------------------
// One training step

struct RoundOptions {
  DecodeSpec generation;
  NoiseSpec noise;
  bool self_training = true;
  const Teacher* teacher = nullptr;  // ST targets; null: the snapshot's own translations
};

template <typename Scalar>
struct RoundResult {
  Grads<Scalar> grads;
  StepLog log;
  std::array<std::vector<Sentence>, 2> generated;  // snapshot translations of batch A / batch B
  std::array<std::vector<Sentence>, 2> st_targets;
};

/// Snapshot, translate each batch once, and return the gradient of
/// sum over both directions of L_B + lambda_D L_D + lambda_S L_S.
/// The ST terms are skipped when lambda_S is exactly 0 or ST is disabled.
template <typename Scalar>
RoundResult<Scalar> dual_round(const ModelParams<Scalar>& p, std::span<const Sentence> batch_a,
                               std::span<const Sentence> batch_b, const Lambdas& lambdas,
                               const RoundOptions& opt, Rng& rng);

// ---------------------------------------------------------------------------
// Training loops

template <typename Scalar>
struct TrainResult {
  ModelParams<Scalar> best;
  std::uint64_t best_step = 0;
  double best_valid = -1.0;
  std::vector<StepLog> logs;
  std::vector<ValidPoint> valid;
  bool diverged = false;
  std::string abort_reason;
  std::uint64_t steps = 0;
};

using StepCallback = std::function<void(const StepLog&)>;

/// Initial model: seeded init plus tied embeddings for a random
/// anchor_fraction share of `anchors` (pairs of token ids).
template <typename Scalar>
ModelParams<Scalar> initial_model(const TrainConfig& c, const Vocab& vocab,
                                  std::span<const std::pair<int, int>> anchors);

/// The anchor_fraction subset of `anchors` a run uses.
std::vector<std::pair<int, int>> chosen_anchors(const TrainConfig& c, std::span<const std::pair<int, int>> anchors);

/// Sums the embedding-gradient rows of each anchor pair into both rows.
template <typename Scalar>
void share_anchor_grads(Grads<Scalar>& g, const ModelParams<Scalar>& p,
                        std::span<const std::pair<int, int>> pairs);

/// initial_model followed by init.pretrain_steps denoising steps on both
/// languages.
template <typename Scalar>
ModelParams<Scalar> pretrained_model(const TrainConfig& c, const Vocab& vocab, const MonoCorpus& mono_a,
                                     const MonoCorpus& mono_b, std::span<const std::pair<int, int>> anchors);

/// Anchor pairs for the synthetic lexicon.
std::vector<std::pair<int, int>> lexicon_anchors(const SynthWorld& world, const Vocab& vocab);

template <typename Scalar>
ValidPoint validate_bleu(const ModelParams<Scalar>& p, const ParallelSet& valid, const DecodeSpec& decode,
                         std::uint64_t step);

template <typename Scalar>
TrainResult<Scalar> train_unmt(const TrainConfig& c, const Vocab& vocab, const MonoCorpus& mono_a,
                               const MonoCorpus& mono_b, const ParallelSet* valid,
                               std::span<const std::pair<int, int>> anchors, const Teacher* teacher = nullptr,
                               const StepCallback& on_step = {}, const ModelParams<Scalar>* start = nullptr);

/// Both directions per step on the same batch of pairs.
template <typename Scalar>
TrainResult<Scalar> train_supervised(const TrainConfig& c, const Vocab& vocab, const ParallelSet& parallel,
                                     const ParallelSet* valid, const StepCallback& on_step = {});

/// Forward translations of mono A (source-original pairs) and backward
/// translations of mono B (target-original pairs), as one A->B set.
ParallelSet distillation_data(const Teacher& teacher, const MonoCorpus& mono_a, const MonoCorpus& mono_b);

template <typename Scalar>
struct DistillResult {
  ParallelSet data;
  TrainResult<Scalar> student;
};

template <typename Scalar>
DistillResult<Scalar> offline_st_distill(const Teacher& teacher, const TrainConfig& c, const Vocab& vocab,
                                         const MonoCorpus& mono_a, const MonoCorpus& mono_b,
                                         const ParallelSet* valid);

/// train_unmt with the ST targets produced by a fixed teacher.
template <typename Scalar>
TrainResult<Scalar> kd_distill(const Teacher& teacher, const TrainConfig& c, const Vocab& vocab,
                               const MonoCorpus& mono_a, const MonoCorpus& mono_b, const ParallelSet* valid,
                               std::span<const std::pair<int, int>> anchors, const StepCallback& on_step = {},
                               const ModelParams<Scalar>* start = nullptr);

#define GAPLAB_TRAINER_EXTERN(S)                                                                       \
  extern template class ModelTeacher<S>;                                                               \
  extern template RoundResult<S> dual_round<S>(const ModelParams<S>&, std::span<const Sentence>,       \
                                               std::span<const Sentence>, const Lambdas&,              \
                                               const RoundOptions&, Rng&);                             \
  extern template ModelParams<S> initial_model<S>(const TrainConfig&, const Vocab&,                    \
                                                  std::span<const std::pair<int, int>>);               \
  extern template ValidPoint validate_bleu<S>(const ModelParams<S>&, const ParallelSet&,               \
                                              const DecodeSpec&, std::uint64_t);                       \
  extern template TrainResult<S> train_unmt<S>(const TrainConfig&, const Vocab&, const MonoCorpus&,    \
                                               const MonoCorpus&, const ParallelSet*,                  \
                                               std::span<const std::pair<int, int>>, const Teacher*,   \
                                               const StepCallback&, const ModelParams<S>*);            \
  extern template void share_anchor_grads<S>(Grads<S>&, const ModelParams<S>&,                         \
                                             std::span<const std::pair<int, int>>);                    \
  extern template ModelParams<S> pretrained_model<S>(const TrainConfig&, const Vocab&,                 \
                                                     const MonoCorpus&, const MonoCorpus&,             \
                                                     std::span<const std::pair<int, int>>);            \
  extern template TrainResult<S> train_supervised<S>(const TrainConfig&, const Vocab&,                 \
                                                     const ParallelSet&, const ParallelSet*,           \
                                                     const StepCallback&);                             \
  extern template DistillResult<S> offline_st_distill<S>(const Teacher&, const TrainConfig&,           \
                                                         const Vocab&, const MonoCorpus&,              \
                                                         const MonoCorpus&, const ParallelSet*);       \
  extern template TrainResult<S> kd_distill<S>(const Teacher&, const TrainConfig&, const Vocab&,       \
                                               const MonoCorpus&, const MonoCorpus&,                   \
                                               const ParallelSet*, std::span<const std::pair<int, int>>, \
                                               const StepCallback&, const ModelParams<S>*);

GAPLAB_TRAINER_EXTERN(float)
GAPLAB_TRAINER_EXTERN(double)
#undef GAPLAB_TRAINER_EXTERN

}  // namespace gaplab
