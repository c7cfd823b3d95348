#include "foleygen/trainer.hpp"

#include "foleygen/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace foleygen {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || warmup_steps < 0 || total_steps < 0 || warmup_steps > total_steps) {
    throw std::invalid_argument("TrainConfig: need lr >= 0 and 0 <= warmup_steps <= total_steps");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw std::invalid_argument("TrainConfig: betas must lie in [0, 1) and eps > 0");
  }
  if (!(cond_dropout_p >= 0.0 && cond_dropout_p <= 1.0)) {
    throw std::invalid_argument("TrainConfig: cond_dropout_p must lie in [0, 1]");
  }
  if (batch_size < 1 || !(weight_decay >= 0.0) || !(grad_clip >= 0.0)) {
    throw std::invalid_argument("TrainConfig: batch_size, weight_decay or grad_clip invalid");
  }
}

double lr_schedule(int step, const TrainConfig& t) {
  if (step < 0) {
    throw std::invalid_argument("lr_schedule: negative step");
  }
  if (step >= t.warmup_steps) {
    return t.lr;
  }
  return t.lr * static_cast<double>(step) / t.warmup_steps;
}

const AttentionMask& MaskCache::get(int T, int S) {
  auto it = masks_.find({T, S});
  if (it == masks_.end()) {
    it = masks_.emplace(std::make_pair(T, S), build_mask({mech_, T, S, rate_a_, rate_v_})).first;
  }
  return it->second;
}

Trainer::Trainer(DecoderLM<float>& model, const TrainConfig& cfg, Mechanism mech, int threads)
    : model_(model),
      cfg_(cfg),
      masks_(mech, model.config().frame_rate_a, model.config().frame_rate_v),
      threads_(std::max(1, threads)) {
  cfg_.validate();
  adam_.m.assign(model.params().size(), 0.0f);
  adam_.v.assign(model.params().size(), 0.0f);
}

StepStats Trainer::train_step(std::span<const TrainingExample> batch) {
  if (batch.empty()) {
    throw std::invalid_argument("Trainer::train_step: empty batch");
  }
  const size_t n_params = model_.params().size();
  const int b = static_cast<int>(batch.size());
  // Masks are built up front so workers only read the cache.
  std::vector<const AttentionMask*> masks(batch.size());
  for (int i = 0; i < b; ++i) {
    masks[static_cast<size_t>(i)] =
        &masks_.get(static_cast<int>(batch[static_cast<size_t>(i)].feats.rows()),
                    batch[static_cast<size_t>(i)].steps.steps());
  }

  std::vector<double> grad(n_params, 0.0);
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<uint8_t> dropped(batch.size(), 0);
  slots_.resize(static_cast<size_t>(threads_));
  for (int start = 0; start < b; start += threads_) {
    const int end = std::min(b, start + threads_);
    parallel_for(start, end, threads_, [&](int i) {
      auto& slot = slots_[static_cast<size_t>(i - start)];
      slot.assign(n_params, 0.0f);
      Rng rng(mix_seed(mix_seed(cfg_.seed, static_cast<uint64_t>(step_)), static_cast<uint64_t>(i)));
      const bool null_cond = rng.uniform() < cfg_.cond_dropout_p;
      dropped[static_cast<size_t>(i)] = null_cond ? 1 : 0;
      const TrainingExample& ex = batch[static_cast<size_t>(i)];
      losses[static_cast<size_t>(i)] = model_.loss_and_grad(
          ex.feats, null_cond, ex.steps, *masks[static_cast<size_t>(i)], slot, &rng);
    });
    for (int i = start; i < end; ++i) {
      const auto& slot = slots_[static_cast<size_t>(i - start)];
      for (size_t p = 0; p < n_params; ++p) {
        grad[p] += slot[p];
      }
    }
  }

  StepStats stats;
  for (int i = 0; i < b; ++i) {
    const double l = losses[static_cast<size_t>(i)];
    if (!std::isfinite(l)) {
      throw NumericalError("non-finite loss at step " + std::to_string(step_) + ", batch item " +
                           std::to_string(i) + " (lr " + std::to_string(lr_schedule(step_, cfg_)) +
                           ")");
    }
    stats.loss += l / b;
    stats.null_conditioned += dropped[static_cast<size_t>(i)];
  }
  double norm2 = 0.0;
  for (double& g : grad) {
    g /= b;
    norm2 += g * g;
  }
  stats.grad_norm = std::sqrt(norm2);
  if (!std::isfinite(stats.grad_norm)) {
    throw NumericalError("non-finite gradient at step " + std::to_string(step_));
  }
  const double clip =
      cfg_.grad_clip > 0.0 && stats.grad_norm > cfg_.grad_clip ? cfg_.grad_clip / stats.grad_norm : 1.0;

  stats.lr = lr_schedule(step_, cfg_);
  const double t = step_ + 1.0;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  auto& params = model_.params();
  for (const ParamSpec& spec : model_.layout().specs()) {
    const double wd = spec.decay ? cfg_.weight_decay : 0.0;
    const size_t count = static_cast<size_t>(spec.rows) * spec.cols;
    for (size_t p = spec.offset; p < spec.offset + count; ++p) {
      const double g = grad[p] * clip;
      const double m = cfg_.beta1 * adam_.m[p] + (1.0 - cfg_.beta1) * g;
      const double v = cfg_.beta2 * adam_.v[p] + (1.0 - cfg_.beta2) * g * g;
      adam_.m[p] = static_cast<float>(m);
      adam_.v[p] = static_cast<float>(v);
      const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps) + wd * params[p];
      params[p] = static_cast<float>(params[p] - stats.lr * update);
    }
  }
  ++step_;
  return stats;
}

double teacher_forced_loss(const DecoderLM<float>& model, std::span<const TrainingExample> data,
                           Mechanism mech, int threads) {
  if (data.empty()) {
    throw std::invalid_argument("teacher_forced_loss: no examples");
  }
  MaskCache cache(mech, model.config().frame_rate_a, model.config().frame_rate_v);
  std::vector<const AttentionMask*> masks(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    masks[i] = &cache.get(static_cast<int>(data[i].feats.rows()), data[i].steps.steps());
  }
  std::vector<double> losses(data.size());
  parallel_for(0, static_cast<int>(data.size()), threads, [&](int i) {
    const auto& ex = data[static_cast<size_t>(i)];
    losses[static_cast<size_t>(i)] =
        model.loss_and_grad(ex.feats, false, ex.steps, *masks[static_cast<size_t>(i)], {}, nullptr);
  });
  double total = 0.0;
  for (double l : losses) {
    total += l;
  }
  return total / static_cast<double>(data.size());
}

}  // namespace foleygen
