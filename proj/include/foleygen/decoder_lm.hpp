#pragma once

#include "foleygen/attention_masks.hpp"
#include "foleygen/common.hpp"
#include "foleygen/token_patterns.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace foleygen {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int n_q = 4;
  int codebook_size = 64;
  int d_visual = 8;
  int max_T = 16;
  int max_S = 1024;
  double dropout_rate = 0.0;
  double frame_rate_a = 50.0;
  double frame_rate_v = 1.0;

  // Codes, then pad, then BOS.
  int vocab() const { return codebook_size + 2; }
  int pad_id() const { return codebook_size; }
  int bos_id() const { return codebook_size + 1; }
  int head_dim() const { return d_model / n_heads; }

  void validate() const;
};

// One named tensor inside the flat parameter vector.
struct ParamSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  size_t offset = 0;
  bool decay = false;  // AdamW weight decay applies
};

class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& cfg);

  struct Layer {
    size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  const std::vector<ParamSpec>& specs() const { return specs_; }
  const ParamSpec& operator[](size_t i) const { return specs_[i]; }
  size_t total() const { return total_; }

  size_t proj_w = 0, proj_b = 0, null_cond = 0, lnf_g = 0, lnf_b = 0;
  std::vector<size_t> embed, head_w, head_b;
  std::vector<Layer> layers;

 private:
  size_t add(std::string name, int rows, int cols, bool decay);
  std::vector<ParamSpec> specs_;
  size_t total_ = 0;
};

// Model input rows: BOS tuple, then steps[0 .. S-2]. Row s predicts steps[s].
std::vector<int32_t> model_inputs(const StepSequence& steps, int bos_id);

// Sinusoidal encoding at a (possibly fractional) position.
template <typename T>
RowVec<T> positional_encoding(double position, int d_model);

// Position of visual frame j: the first audio position mapped onto it.
double visual_position(int frame, double frame_rate_a, double frame_rate_v);

// Mean cross-entropy over all non-pad target slots; uniform stream weights.
// Logits are S x (n_q * vocab). Writes dLoss/dlogits when `dlogits` is set.
template <typename T>
T sequence_loss(const Mat<T>& logits, const StepSequence& targets, int vocab, Mat<T>* dlogits);

// Aligned storage keeps Eigen's vectorized reductions over mapped tensors
// independent of where the buffer happens to be allocated.
template <typename T>
using ParamVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
class DecoderLM {
 public:
  explicit DecoderLM(const ModelConfig& cfg);

  void init(uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  ParamVector<T>& params() { return params_; }
  const ParamVector<T>& params() const { return params_; }

  template <typename U>
  DecoderLM<U> cast() const {
    DecoderLM<U> out(cfg_);
    for (size_t i = 0; i < params_.size(); ++i) {
      out.params()[i] = static_cast<U>(params_[i]);
    }
    return out;
  }

  // Teacher-forced logits, S x (n_q * vocab). `feats` supplies T (its rows);
  // with null_cond its values are ignored and the learned null row is used.
  Mat<T> forward(const MatD& feats, bool null_cond, std::span<const int32_t> inputs,
                 const AttentionMask& mask) const;

  // Loss on one example; when `grad` is non-empty, dLoss/dparams is added
  // into it. A non-null rng enables residual dropout.
  T loss_and_grad(const MatD& feats, bool null_cond, const StepSequence& steps,
                  const AttentionMask& mask, std::span<T> grad, Rng* dropout_rng) const;

  Eigen::Map<const Mat<T>> tensor(size_t id) const;

 private:
  struct LayerCache;
  struct Cache;

  void check_shapes(const MatD& feats, std::span<const int32_t> inputs,
                    const AttentionMask& mask) const;
  Mat<T> run_forward(const MatD& feats, bool null_cond, std::span<const int32_t> inputs,
                     const AttentionMask& mask, Cache* cache, Rng* dropout_rng) const;
  void run_backward(const MatD& feats, bool null_cond, std::span<const int32_t> inputs,
                    const Cache& cache, const Mat<T>& dlogits, std::span<T> grad) const;

  ModelConfig cfg_;
  ParamLayout layout_;
  ParamVector<T> params_;
};

// Row-at-a-time evaluation with a key/value cache. Every row goes through the
// same sequence of operations whether it is replayed from scratch or
// appended to an existing cache, so both decoding modes agree bit-for-bit.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const DecoderLM<T>& model, const AttentionMask& mask, const MatD& feats,
                     bool null_cond);

  // Feeds audio position `position()` with its input tuple (n_q ids) and
  // returns n_q x vocab logits predicting that position's step.
  Mat<T> step(std::span<const int32_t> tuple);

  int position() const { return next_audio_; }

 private:
  RowVec<T> process_row(int row, RowVec<T> x);

  const DecoderLM<T>& model_;
  const AttentionMask& mask_;
  std::vector<Mat<T>> keys_;
  std::vector<Mat<T>> values_;
  int next_audio_ = 0;
};

}  // namespace foleygen
