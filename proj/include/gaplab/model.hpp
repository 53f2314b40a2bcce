#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gaplab/autodiff.hpp"
#include "gaplab/corpus.hpp"

namespace gaplab {

/// Architecture sizes. The encoder and decoder both have `layers` blocks.
struct Dims {
  int hidden = 64;
  int layers = 2;
  int heads = 1;
  int ffn = 128;  // inner width of the position-wise feed-forward block
  int max_len = 64;  // positions per side, including eos / the language tag
  friend bool operator==(const Dims&, const Dims&) = default;
};

void validate(const Dims& d);

/// Number of scalars in a model with these sizes:
///   V*H                                      shared embeddings
/// + L * (4(H^2+H) + 2*2H + (HF+F) + (FH+H))  encoder blocks
/// + 2H                                       encoder output norm
/// + L * (8(H^2+H) + 3*2H + (HF+F) + (FH+H))  decoder blocks
/// + 2H                                       decoder output norm
/// + HV + V                                   output projection
std::size_t parameter_count(const Dims& d, int vocab_size);

/// Positions of the named arrays inside ModelParams::arrays.
struct ParamLayout {
  struct Attn {
    int wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct Ffn {
    int w1, b1, w2, b2;
  };
  struct EncBlock {
    int ln1_g, ln1_b;
    Attn self;
    int ln2_g, ln2_b;
    Ffn ffn;
  };
  struct DecBlock {
    int ln1_g, ln1_b;
    Attn self;
    int ln2_g, ln2_b;
    Attn cross;
    int ln3_g, ln3_b;
    Ffn ffn;
  };
  int embed = -1;
  std::vector<EncBlock> enc;
  int enc_ln_g = -1, enc_ln_b = -1;
  std::vector<DecBlock> dec;
  int dec_ln_g = -1, dec_ln_b = -1;
  int out_w = -1, out_b = -1;
  std::vector<std::string> names;
  std::vector<std::pair<int, int>> shapes;
};

ParamLayout make_layout(const Dims& d, int vocab_size);

template <typename Scalar>
using Grads = std::vector<Mat<Scalar>>;

/// Adam moments, aligned with the parameter arrays.
template <typename Scalar>
struct OptimizerState {
  std::vector<Mat<Scalar>> m;
  std::vector<Mat<Scalar>> v;
};

template <typename Scalar>
struct ModelParams {
  Dims dims;
  int vocab_size = 0;
  std::uint64_t vocab_hash = 0;
  ParamLayout layout;
  std::vector<Mat<Scalar>> arrays;
  std::uint64_t step = 0;
  OptimizerState<Scalar> optim;
  Mat<Scalar> positions;  // sinusoidal table, derived from dims

  std::size_t parameter_count() const;
  const Mat<Scalar>& operator[](int idx) const { return arrays[static_cast<std::size_t>(idx)]; }
};

/// Immutable deep copy of a model's weights (optimizer state dropped).
template <typename Scalar>
class FrozenParams {
 public:
  FrozenParams() = default;
  explicit FrozenParams(const ModelParams<Scalar>& p);
  const ModelParams<Scalar>& params() const { return *p_; }
  bool empty() const { return !p_; }

 private:
  std::shared_ptr<const ModelParams<Scalar>> p_;
};

/// Initialization: embeddings ~ N(0, 1/H); weight matrices ~ U(+-sqrt(6/(fan_in+fan_out)));
/// biases 0; layer-norm gains 1. Arrays are filled in layout order from one
/// seeded stream.
template <typename Scalar>
ModelParams<Scalar> init_model(const Dims& dims, const Vocab& vocab, std::uint64_t seed);

/// Copies the embedding row of each pair's first token onto the second token,
/// plus N(0, jitter^2/H) noise: a shared cross-lingual starting point for
/// aligned word pairs.
template <typename Scalar>
void tie_embeddings(ModelParams<Scalar>& p, std::span<const std::pair<int, int>> pairs,
                    double jitter, std::uint64_t seed);

template <typename Scalar>
FrozenParams<Scalar> snapshot(const ModelParams<Scalar>& p) {
  return FrozenParams<Scalar>(p);
}

template <typename Scalar>
struct LossResult {
  double loss = 0.0;  // mean per-token NLL
  std::size_t tokens = 0;
  Grads<Scalar> grads;  // empty when not requested
};

/// Teacher-forced cross-entropy of `tgt` given `src`; the decoder input is
/// [tag(dir.tgt), tgt...] and the targets are [tgt..., eos].
template <typename Scalar>
LossResult<Scalar> nll_loss(const ModelParams<Scalar>& p, std::span<const Sentence> src,
                            std::span<const Sentence> tgt, Direction dir, bool with_grads = true);

/// One term of a packed multi-task loss.
struct LossGroup {
  std::span<const Sentence> src;
  std::span<const Sentence> tgt;
  Direction dir;
  double weight = 1.0;
};

template <typename Scalar>
struct GroupLossResult {
  std::vector<double> losses;  // mean per-token NLL of each group
  std::vector<std::size_t> tokens;
  double total = 0.0;  // sum of weight * loss
  Grads<Scalar> grads;  // gradient of total
};

/// Dense-layer outputs recorded by a greedy translation pass, laid out as a
/// teacher-forced pass over (source batch, produced translations) would
/// compute them.
template <typename Scalar>
struct DecodeTrace {
  std::vector<Mat<Scalar>> enc;  // encoder, in evaluation order
  std::vector<Mat<Scalar>> dec;  // decoder, 10 per layer then the output layer
  std::size_t src_rows = 0;
  std::size_t tgt_rows = 0;
};

/// All groups share one forward/backward pass.
template <typename Scalar>
GroupLossResult<Scalar> group_loss(const ModelParams<Scalar>& p, std::span<const LossGroup> groups,
                                   bool with_grads = true);

/// As above; a group with a non-null trace takes its forward values from it.
/// The trace must come from translate_traced with the same weights on
/// exactly that group's sources, and the group's targets must be its output.
template <typename Scalar>
GroupLossResult<Scalar> group_loss(const ModelParams<Scalar>& p, std::span<const LossGroup> groups,
                                   std::span<const DecodeTrace<Scalar>* const> traces, bool with_grads = true);

/// Per-position log-probabilities of the target tokens (same inputs as nll_loss).
template <typename Scalar>
std::vector<std::vector<double>> token_logprobs(const ModelParams<Scalar>& p, const Sentence& src,
                                                const Sentence& tgt, Direction dir);

struct DecodeSpec {
  enum class Mode { greedy, beam };
  Mode mode = Mode::greedy;
  int beam_size = 1;
  int max_len = 63;
  bool length_normalization = true;
};

void validate(const DecodeSpec& d);

/// Translation of every source sentence into dir.tgt. Greedy picks the
/// lowest id among equal maxima. pad/bos/unk/tags are never emitted and eos
/// is blocked at the first step.
template <typename Scalar>
std::vector<Sentence> translate(const ModelParams<Scalar>& p, std::span<const Sentence> src,
                                Direction dir, const DecodeSpec& spec);

template <typename Scalar>
struct TracedTranslation {
  std::vector<Sentence> out;
  DecodeTrace<Scalar> trace;
};

/// Greedy translation that also records its activations; spec must be greedy.
template <typename Scalar>
TracedTranslation<Scalar> translate_traced(const ModelParams<Scalar>& p, std::span<const Sentence> src,
                                           Direction dir, const DecodeSpec& spec);

template <typename Scalar>
std::vector<Sentence> translate(const FrozenParams<Scalar>& p, std::span<const Sentence> src,
                                Direction dir, const DecodeSpec& spec) {
  return translate(p.params(), src, dir, spec);
}

/// Full next-token distributions along a forced prefix (testing/diagnostics):
/// row t is log P(. | src, prefix[0..t)), for t = 0..prefix.size().
template <typename Scalar>
Mat<double> step_logprobs(const ModelParams<Scalar>& p, const Sentence& src,
                          const std::vector<int>& prefix, Direction dir);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 0.0;  // global-norm clipping; 0 disables
};

/// One Adam step; increments p.step. Throws ConfigError naming the first
/// array holding a non-finite gradient.
template <typename Scalar>
void apply_update(ModelParams<Scalar>& p, const Grads<Scalar>& grads, const AdamConfig& cfg);

template <typename Scalar>
Grads<Scalar> zero_grads(const ModelParams<Scalar>& p);

/// out += scale * g, element-wise over all arrays.
template <typename Scalar>
void accumulate(Grads<Scalar>& out, const Grads<Scalar>& g, double scale);

template <typename Scalar>
double grad_norm(const Grads<Scalar>& g);

template <typename Scalar>
bool all_finite(const ModelParams<Scalar>& p);

struct GradCheckResult {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "array[index]" of the largest error
};

/// Five-point central differences of nll_loss against its analytic gradient
/// on `samples` entries drawn from `seed` (every array gets at least one).
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(ModelParams<double>& p, std::span<const Sentence> src,
                               std::span<const Sentence> tgt, Direction dir, std::size_t samples,
                               std::uint64_t seed, double h = 3e-4, double floor = 1e-6);

// ---------------------------------------------------------------------------
// Checkpoints (layout documented in docs/checkpoint_format.md)

template <typename Scalar>
std::string checkpoint_bytes(const ModelParams<Scalar>& p, const Vocab& vocab);

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<Scalar>& p, const Vocab& vocab);

template <typename Scalar>
struct LoadedCheckpoint {
  ModelParams<Scalar> params;
  Vocab vocab;
};

template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint(const std::filesystem::path& path);
template <typename Scalar>
LoadedCheckpoint<Scalar> parse_checkpoint(const std::string& bytes);

template <typename Scalar>
std::uint64_t checkpoint_hash(const ModelParams<Scalar>& p, const Vocab& vocab) {
  return fnv64(checkpoint_bytes(p, vocab));
}

// Explicit instantiations live in model.cpp.
#define GAPLAB_MODEL_EXTERN(S)                                                                     \
  extern template struct ModelParams<S>;                                                           \
  extern template class FrozenParams<S>;                                                           \
  extern template ModelParams<S> init_model<S>(const Dims&, const Vocab&, std::uint64_t);          \
  extern template void tie_embeddings<S>(ModelParams<S>&, std::span<const std::pair<int, int>>,    \
                                         double, std::uint64_t);                                   \
  extern template LossResult<S> nll_loss<S>(const ModelParams<S>&, std::span<const Sentence>,      \
                                            std::span<const Sentence>, Direction, bool);           \
  extern template GroupLossResult<S> group_loss<S>(const ModelParams<S>&, std::span<const LossGroup>, bool); \
  extern template GroupLossResult<S> group_loss<S>(const ModelParams<S>&, std::span<const LossGroup>,  \
                                                   std::span<const DecodeTrace<S>* const>, bool);      \
  extern template TracedTranslation<S> translate_traced<S>(const ModelParams<S>&,                    \
                                                           std::span<const Sentence>, Direction,     \
                                                           const DecodeSpec&);                       \
  extern template std::vector<std::vector<double>> token_logprobs<S>(                              \
      const ModelParams<S>&, const Sentence&, const Sentence&, Direction);                         \
  extern template std::vector<Sentence> translate<S>(const ModelParams<S>&,                        \
                                                     std::span<const Sentence>, Direction,         \
                                                     const DecodeSpec&);                           \
  extern template Mat<double> step_logprobs<S>(const ModelParams<S>&, const Sentence&,             \
                                               const std::vector<int>&, Direction);                \
  extern template void apply_update<S>(ModelParams<S>&, const Grads<S>&, const AdamConfig&);       \
  extern template Grads<S> zero_grads<S>(const ModelParams<S>&);                                   \
  extern template void accumulate<S>(Grads<S>&, const Grads<S>&, double);                          \
  extern template double grad_norm<S>(const Grads<S>&);                                            \
  extern template bool all_finite<S>(const ModelParams<S>&);                                       \
  extern template std::string checkpoint_bytes<S>(const ModelParams<S>&, const Vocab&);            \
  extern template void save_checkpoint<S>(const std::filesystem::path&, const ModelParams<S>&,     \
                                          const Vocab&);                                           \
  extern template LoadedCheckpoint<S> load_checkpoint<S>(const std::filesystem::path&);            \
  extern template LoadedCheckpoint<S> parse_checkpoint<S>(const std::string&);

GAPLAB_MODEL_EXTERN(float)
GAPLAB_MODEL_EXTERN(double)
#undef GAPLAB_MODEL_EXTERN

}  // namespace gaplab
