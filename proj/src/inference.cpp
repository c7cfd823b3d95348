#include "foleygen/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

namespace foleygen {

namespace {

enum class Guidance { cfg, conditional_only };

// Logits for one step, either from persistent caches or by replaying the
// prefix on fresh decoders.
class StepLogits {
 public:
  StepLogits(const DecoderLM<float>& model, const AttentionMask& mask, const MatD& feats,
             bool null_cond, bool use_cache)
      : model_(model), mask_(mask), feats_(feats), null_cond_(null_cond), use_cache_(use_cache) {
    if (use_cache_) {
      dec_.emplace(model, mask, feats, null_cond);
    }
  }

  Mat<float> next(const std::vector<int32_t>& history, int n_q) {
    const int rows = static_cast<int>(history.size()) / n_q;
    if (use_cache_) {
      return dec_->step(std::span<const int32_t>(history).subspan(
          static_cast<size_t>(rows - 1) * n_q, static_cast<size_t>(n_q)));
    }
    IncrementalDecoder<float> fresh(model_, mask_, feats_, null_cond_);
    Mat<float> out;
    for (int r = 0; r < rows; ++r) {
      out = fresh.step(std::span<const int32_t>(history).subspan(static_cast<size_t>(r) * n_q,
                                                                 static_cast<size_t>(n_q)));
    }
    return out;
  }

 private:
  const DecoderLM<float>& model_;
  const AttentionMask& mask_;
  const MatD& feats_;
  bool null_cond_;
  bool use_cache_;
  std::optional<IncrementalDecoder<float>> dec_;
};

Generation run_sampler(const DecoderLM<float>& model, const RVQModel& rvq,
                       const FeaturizerConfig& fcfg, const MatD& feats, const GenConfig& g,
                       Mechanism mech, bool use_cache, Guidance guidance) {
  g.validate();
  const ModelConfig& mc = model.config();
  if (rvq.n_q() != mc.n_q || rvq.codebook_size() != mc.codebook_size) {
    throw std::invalid_argument("generate: codec has " + std::to_string(rvq.n_q()) + "x" +
                                std::to_string(rvq.codebook_size()) + " codes, model expects " +
                                std::to_string(mc.n_q) + "x" + std::to_string(mc.codebook_size));
  }
  if (rvq.dim != fcfg.d()) {
    throw std::invalid_argument("generate: codec dimension does not match featurizer");
  }
  const int tv = static_cast<int>(feats.rows());
  const int s_total = generation_steps(mc, g, tv);
  const int n_q = mc.n_q;
  const AttentionMask mask = build_mask({mech, tv, s_total, mc.frame_rate_a, mc.frame_rate_v});

  StepLogits cond(model, mask, feats, false, use_cache);
  std::optional<StepLogits> uncond;
  if (guidance == Guidance::cfg) {
    uncond.emplace(model, mask, feats, true, use_cache);
  }

  StepSequence steps;
  steps.n_q = n_q;
  steps.length = s_total - n_q + 1;
  steps.pad_id = mc.pad_id();
  steps.ids.assign(static_cast<size_t>(s_total) * n_q, mc.pad_id());

  Rng rng(g.seed);
  const int cb = mc.codebook_size;
  const int k_eff = std::min(g.top_k, cb);
  std::vector<int32_t> history(static_cast<size_t>(n_q), mc.bos_id());
  std::vector<double> lc(static_cast<size_t>(cb));
  std::vector<double> lu(static_cast<size_t>(cb));
  for (int s = 0; s < s_total; ++s) {
    const Mat<float> c_logits = cond.next(history, n_q);
    Mat<float> u_logits;
    if (uncond) {
      u_logits = uncond->next(history, n_q);
    }
    for (int k = 0; k < n_q; ++k) {
      if (is_mandated_pad(s, k, steps.length)) {
        continue;
      }
      for (int i = 0; i < cb; ++i) {
        lc[static_cast<size_t>(i)] = c_logits(k, i);
      }
      int id = 0;
      if (uncond) {
        for (int i = 0; i < cb; ++i) {
          lu[static_cast<size_t>(i)] = u_logits(k, i);
        }
        id = top_k_sample(cfg_combine(lc, lu, g.cfg_scale), k_eff, g.temperature, rng);
      } else {
        id = top_k_sample(lc, k_eff, g.temperature, rng);
      }
      steps.at(s, k) = id;
    }
    for (int k = 0; k < n_q; ++k) {
      history.push_back(steps.at(s, k));
    }
  }

  Generation out;
  out.grid = remove_delay(steps, static_cast<int>(std::lround(fcfg.frame_rate())));
  out.steps = std::move(steps);
  out.latents = rvq_decode(rvq, out.grid);
  out.audio = defeaturize(out.latents, fcfg);
  return out;
}

}  // namespace

void GenConfig::validate() const {
  if (!(cfg_scale >= 0.0) || !std::isfinite(cfg_scale)) {
    throw std::invalid_argument("GenConfig: cfg_scale must be finite and >= 0");
  }
  if (top_k < 1) {
    throw std::invalid_argument("GenConfig: top_k must be >= 1");
  }
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("GenConfig: temperature must be > 0");
  }
  if (max_steps < 0) {
    throw std::invalid_argument("GenConfig: max_steps must be >= 0");
  }
}

std::vector<double> cfg_combine(std::span<const double> cond, std::span<const double> uncond,
                                double scale) {
  if (cond.size() != uncond.size()) {
    throw std::invalid_argument("cfg_combine: logit vectors differ in length");
  }
  std::vector<double> out(cond.size());
  for (size_t i = 0; i < cond.size(); ++i) {
    out[i] = scale * cond[i] + (1.0 - scale) * uncond[i];
  }
  return out;
}

int top_k_sample(std::span<const double> logits, int k, double temperature, Rng& rng) {
  if (logits.empty() || k < 1) {
    throw std::invalid_argument("top_k_sample: need k >= 1 and non-empty logits");
  }
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("top_k_sample: temperature must be > 0");
  }
  for (size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) {
      throw NumericalError("top_k_sample: logit " + std::to_string(i) + " is not finite");
    }
  }
  const size_t kk = std::min(static_cast<size_t>(k), logits.size());
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                    [&](int a, int b) {
                      return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)] ||
                             (logits[static_cast<size_t>(a)] == logits[static_cast<size_t>(b)] &&
                              a < b);
                    });
  const double top = logits[static_cast<size_t>(order[0])];
  std::vector<double> weights(kk);
  double total = 0.0;
  for (size_t i = 0; i < kk; ++i) {
    weights[i] = std::exp((logits[static_cast<size_t>(order[i])] - top) / temperature);
    total += weights[i];
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (size_t i = 0; i < kk; ++i) {
    acc += weights[i];
    if (u < acc) {
      return order[i];
    }
  }
  return order[kk - 1];
}

int generation_steps(const ModelConfig& mc, const GenConfig& g, int visual_frames) {
  int s_total = g.max_steps;
  if (s_total == 0) {
    const int length =
        static_cast<int>(std::lround(visual_frames * mc.frame_rate_a / mc.frame_rate_v));
    s_total = length + mc.n_q - 1;
  }
  if (s_total < mc.n_q) {
    throw std::invalid_argument("generate: max_steps " + std::to_string(s_total) +
                                " leaves no audio frames with n_q " + std::to_string(mc.n_q));
  }
  if (s_total > mc.max_S) {
    throw std::invalid_argument("generate: " + std::to_string(s_total) +
                                " steps exceed the model's max_S " + std::to_string(mc.max_S));
  }
  return s_total;
}

Generation generate(const DecoderLM<float>& model, const RVQModel& rvq,
                    const FeaturizerConfig& fcfg, const MatD& feats, const GenConfig& g,
                    Mechanism mech, bool use_cache) {
  return run_sampler(model, rvq, fcfg, feats, g, mech, use_cache, Guidance::cfg);
}

Generation generate_conditional(const DecoderLM<float>& model, const RVQModel& rvq,
                                const FeaturizerConfig& fcfg, const MatD& feats,
                                const GenConfig& g, Mechanism mech) {
  return run_sampler(model, rvq, fcfg, feats, g, mech, true, Guidance::conditional_only);
}

}  // namespace foleygen
