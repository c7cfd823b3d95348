#include "foleygen/decoder_lm.hpp"

#include "foleygen/visual_features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace foleygen {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x * static_cast<T>(kInvSqrt2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x * static_cast<T>(kInvSqrt2)));
  const T pdf = static_cast<T>(kInvSqrt2Pi) * std::exp(static_cast<T>(-0.5) * x * x);
  return cdf + x * pdf;
}

// y = xhat * g + b with xhat = (x - mean) * rstd, row-wise.
template <typename T, typename G>
void layer_norm(const Mat<T>& x, const G& gain, const G& bias, Mat<T>& xhat, Mat<T>& y,
                std::vector<T>& rstd) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  y.resize(n, d);
  rstd.resize(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    const T r = static_cast<T>(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[static_cast<size_t>(i)] = r;
    xhat.row(i) = (x.row(i).array() - mean) * r;
    y.row(i) = xhat.row(i).cwiseProduct(gain.row(0)) + bias.row(0);
  }
}

// Returns dx; accumulates gain/bias gradients.
template <typename T, typename G, typename DG>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const std::vector<T>& rstd,
                           const G& gain, DG&& dgain, DG&& dbias) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  Mat<T> dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    dgain.row(0) += dy.row(i).cwiseProduct(xhat.row(i));
    dbias.row(0) += dy.row(i);
    const RowVec<T> dxhat = dy.row(i).cwiseProduct(gain.row(0));
    const T mean_dxhat = dxhat.mean();
    const T mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(i)).mean();
    dx.row(i) = rstd[static_cast<size_t>(i)] *
                (dxhat.array() - mean_dxhat - xhat.row(i).array() * mean_dxhat_xhat).matrix();
  }
  return dx;
}

template <typename T, typename G>
RowVec<T> layer_norm_row(const RowVec<T>& x, const G& gain, const G& bias) {
  const T mean = x.mean();
  const T var = (x.array() - mean).square().mean();
  const T r = static_cast<T>(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
  RowVec<T> xhat = (x.array() - mean) * r;
  return xhat.cwiseProduct(gain.row(0)) + bias.row(0);
}

template <typename T>
Eigen::Map<Mat<T>> grad_view(std::span<T> grad, const ParamSpec& s) {
  return Eigen::Map<Mat<T>>(grad.data() + s.offset, s.rows, s.cols);
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1) {
    throw std::invalid_argument("ModelConfig: layer, head and width counts must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_model % 2 != 0) {
    throw std::invalid_argument("ModelConfig: d_model must be even for sinusoidal positions");
  }
  if (n_q < 1 || codebook_size < 2 || d_visual < 1 || max_T < 1 || max_S < 1) {
    throw std::invalid_argument("ModelConfig: n_q, codebook_size, d_visual, max_T, max_S invalid");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("ModelConfig: dropout_rate must lie in [0, 1)");
  }
  if (!(frame_rate_a > 0.0) || !(frame_rate_v > 0.0)) {
    throw std::invalid_argument("ModelConfig: frame rates must be positive");
  }
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model;
  const int v = cfg.vocab();
  proj_w = add("proj.weight", cfg.d_visual, d, true);
  proj_b = add("proj.bias", 1, d, false);
  null_cond = add("null_cond", 1, d, false);
  for (int k = 0; k < cfg.n_q; ++k) {
    embed.push_back(add("embed." + std::to_string(k), v, d, true));
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Layer layer{};
    layer.ln1_g = add(p + "ln1.gain", 1, d, false);
    layer.ln1_b = add(p + "ln1.bias", 1, d, false);
    layer.wqkv = add(p + "attn.wqkv", d, 3 * d, true);
    layer.bqkv = add(p + "attn.bqkv", 1, 3 * d, false);
    layer.wo = add(p + "attn.wo", d, d, true);
    layer.bo = add(p + "attn.bo", 1, d, false);
    layer.ln2_g = add(p + "ln2.gain", 1, d, false);
    layer.ln2_b = add(p + "ln2.bias", 1, d, false);
    layer.w1 = add(p + "ffn.w1", d, cfg.d_ff, true);
    layer.b1 = add(p + "ffn.b1", 1, cfg.d_ff, false);
    layer.w2 = add(p + "ffn.w2", cfg.d_ff, d, true);
    layer.b2 = add(p + "ffn.b2", 1, d, false);
    layers.push_back(layer);
  }
  lnf_g = add("ln_f.gain", 1, d, false);
  lnf_b = add("ln_f.bias", 1, d, false);
  for (int k = 0; k < cfg.n_q; ++k) {
    head_w.push_back(add("head." + std::to_string(k) + ".weight", d, v, true));
    head_b.push_back(add("head." + std::to_string(k) + ".bias", 1, v, false));
  }
}

size_t ParamLayout::add(std::string name, int rows, int cols, bool decay) {
  specs_.push_back({std::move(name), rows, cols, total_, decay});
  total_ += static_cast<size_t>(rows) * static_cast<size_t>(cols);
  return specs_.size() - 1;
}

std::vector<int32_t> model_inputs(const StepSequence& steps, int bos_id) {
  const int s_total = steps.steps();
  std::vector<int32_t> in(static_cast<size_t>(s_total) * steps.n_q);
  for (int k = 0; k < steps.n_q; ++k) {
    in[static_cast<size_t>(k)] = bos_id;
  }
  for (int s = 1; s < s_total; ++s) {
    for (int k = 0; k < steps.n_q; ++k) {
      in[static_cast<size_t>(s) * steps.n_q + k] = steps.at(s - 1, k);
    }
  }
  return in;
}

template <typename T>
RowVec<T> positional_encoding(double position, int d_model) {
  RowVec<T> pe(d_model);
  for (int i = 0; i < d_model / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / d_model);
    pe(2 * i) = static_cast<T>(std::sin(position * freq));
    pe(2 * i + 1) = static_cast<T>(std::cos(position * freq));
  }
  return pe;
}

double visual_position(int frame, double frame_rate_a, double frame_rate_v) {
  return 1.0 + frame * frame_rate_a / frame_rate_v;
}

template <typename T>
T sequence_loss(const Mat<T>& logits, const StepSequence& targets, int vocab, Mat<T>* dlogits) {
  const int s_total = targets.steps();
  const int n_q = targets.n_q;
  if (logits.rows() != s_total || logits.cols() != static_cast<Eigen::Index>(n_q) * vocab) {
    throw std::invalid_argument("sequence_loss: logits shape does not match targets");
  }
  if (dlogits != nullptr) {
    dlogits->setZero(logits.rows(), logits.cols());
  }
  const double count = static_cast<double>(n_q) * targets.length;
  double total = 0.0;
  for (int s = 0; s < s_total; ++s) {
    for (int k = 0; k < n_q; ++k) {
      if (is_mandated_pad(s, k, targets.length)) {
        continue;
      }
      const int target = targets.at(s, k);
      const auto row = logits.row(s).segment(static_cast<Eigen::Index>(k) * vocab, vocab);
      const T mx = row.maxCoeff();
      const T sum = (row.array() - mx).exp().sum();
      const T lse = mx + std::log(sum);
      total += static_cast<double>(lse - row(target));
      if (dlogits != nullptr) {
        auto drow = dlogits->row(s).segment(static_cast<Eigen::Index>(k) * vocab, vocab);
        drow = ((row.array() - lse).exp() / static_cast<T>(count)).matrix();
        drow(target) -= static_cast<T>(1.0 / count);
      }
    }
  }
  return static_cast<T>(total / count);
}

template <typename T>
struct DecoderLM<T>::LayerCache {
  Mat<T> x_in, xhat1, h1, qkv, ctx, x_mid, xhat2, h2, f_pre, f_act;
  std::vector<T> rstd1, rstd2;
  std::vector<Mat<T>> probs;
  Mat<T> drop1, drop2;
};

template <typename T>
struct DecoderLM<T>::Cache {
  std::vector<LayerCache> layers;
  Mat<T> xhat_f, h_f;
  std::vector<T> rstd_f;
};

template <typename T>
DecoderLM<T>::DecoderLM(const ModelConfig& cfg)
    : cfg_(cfg), layout_(cfg), params_(layout_.total(), static_cast<T>(0)) {}

template <typename T>
Eigen::Map<const Mat<T>> DecoderLM<T>::tensor(size_t id) const {
  const ParamSpec& s = layout_[id];
  return Eigen::Map<const Mat<T>>(params_.data() + s.offset, s.rows, s.cols);
}

template <typename T>
void DecoderLM<T>::init(uint64_t seed) {
  Rng rng(seed);
  const double proj_std = 0.02 / std::sqrt(2.0 * cfg_.n_layers);
  auto fill_normal = [&](size_t id, double stddev) {
    const ParamSpec& s = layout_[id];
    for (size_t i = 0; i < static_cast<size_t>(s.rows) * s.cols; ++i) {
      params_[s.offset + i] = static_cast<T>(stddev * rng.normal());
    }
  };
  auto fill_const = [&](size_t id, double v) {
    const ParamSpec& s = layout_[id];
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(s.offset),
                static_cast<size_t>(s.rows) * s.cols, static_cast<T>(v));
  };
  // Inputs sit at roughly unit scale next to the sinusoidal positions.
  fill_normal(layout_.proj_w, 1.0 / std::sqrt(static_cast<double>(cfg_.d_visual)));
  fill_const(layout_.proj_b, 0.0);
  fill_normal(layout_.null_cond, 0.5);
  for (size_t id : layout_.embed) {
    fill_normal(id, 1.0 / std::sqrt(static_cast<double>(cfg_.n_q)));
  }
  for (const auto& layer : layout_.layers) {
    fill_const(layer.ln1_g, 1.0);
    fill_const(layer.ln1_b, 0.0);
    fill_normal(layer.wqkv, 0.02);
    fill_const(layer.bqkv, 0.0);
    fill_normal(layer.wo, proj_std);
    fill_const(layer.bo, 0.0);
    fill_const(layer.ln2_g, 1.0);
    fill_const(layer.ln2_b, 0.0);
    fill_normal(layer.w1, 0.02);
    fill_const(layer.b1, 0.0);
    fill_normal(layer.w2, proj_std);
    fill_const(layer.b2, 0.0);
  }
  fill_const(layout_.lnf_g, 1.0);
  fill_const(layout_.lnf_b, 0.0);
  for (int k = 0; k < cfg_.n_q; ++k) {
    fill_normal(layout_.head_w[static_cast<size_t>(k)], 0.02);
    fill_const(layout_.head_b[static_cast<size_t>(k)], 0.0);
  }
}

template <typename T>
void DecoderLM<T>::check_shapes(const MatD& feats, std::span<const int32_t> inputs,
                                const AttentionMask& mask) const {
  const auto tv = static_cast<int>(feats.rows());
  if (tv < 1 || feats.cols() != cfg_.d_visual) {
    throw std::invalid_argument("DecoderLM: visual features must be T x " +
                                std::to_string(cfg_.d_visual) + " with T >= 1");
  }
  if (inputs.empty() || inputs.size() % static_cast<size_t>(cfg_.n_q) != 0) {
    throw std::invalid_argument("DecoderLM: input ids must be S x n_q");
  }
  const int s_total = static_cast<int>(inputs.size()) / cfg_.n_q;
  if (mask.T() != tv || mask.S() != s_total) {
    throw std::invalid_argument("DecoderLM: mask is " + std::to_string(mask.T()) + "+" +
                                std::to_string(mask.S()) + " but inputs are " +
                                std::to_string(tv) + "+" + std::to_string(s_total));
  }
  if (tv > cfg_.max_T || s_total > cfg_.max_S) {
    throw std::invalid_argument("DecoderLM: sequence exceeds max_T/max_S");
  }
  for (int32_t id : inputs) {
    if (id < 0 || id >= cfg_.vocab()) {
      throw std::invalid_argument("DecoderLM: input id " + std::to_string(id) +
                                  " outside vocabulary");
    }
  }
}

template <typename T>
Mat<T> DecoderLM<T>::run_forward(const MatD& feats, bool null_cond,
                                 std::span<const int32_t> inputs, const AttentionMask& mask,
                                 Cache* cache, Rng* dropout_rng) const {
  check_shapes(feats, inputs, mask);
  const int d = cfg_.d_model;
  const int tv = static_cast<int>(feats.rows());
  const int s_total = static_cast<int>(inputs.size()) / cfg_.n_q;
  const int n = tv + s_total;
  const int heads = cfg_.n_heads;
  const int dh = cfg_.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const bool dropout = dropout_rng != nullptr && cfg_.dropout_rate > 0.0;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - cfg_.dropout_rate));

  Mat<T> x(n, d);
  if (null_cond) {
    const auto null_row = tensor(layout_.null_cond);
    for (int j = 0; j < tv; ++j) {
      x.row(j) = null_row.row(0);
    }
  } else {
    const Mat<T> w = tensor(layout_.proj_w);
    const RowVec<T> b = tensor(layout_.proj_b).row(0);
    x.topRows(tv) = project<T>(feats.cast<T>(), w, b);
  }
  for (int j = 0; j < tv; ++j) {
    x.row(j) += positional_encoding<T>(visual_position(j, cfg_.frame_rate_a, cfg_.frame_rate_v), d);
  }
  for (int s = 0; s < s_total; ++s) {
    RowVec<T> row = positional_encoding<T>(s, d);
    for (int k = 0; k < cfg_.n_q; ++k) {
      row += tensor(layout_.embed[static_cast<size_t>(k)])
                 .row(inputs[static_cast<size_t>(s) * cfg_.n_q + k]);
    }
    x.row(tv + s) = row;
  }

  if (cache != nullptr) {
    cache->layers.resize(static_cast<size_t>(cfg_.n_layers));
  }
  LayerCache scratch;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const auto& ids = layout_.layers[static_cast<size_t>(l)];
    LayerCache& c = cache != nullptr ? cache->layers[static_cast<size_t>(l)] : scratch;
    c.x_in = x;
    layer_norm(x, tensor(ids.ln1_g), tensor(ids.ln1_b), c.xhat1, c.h1, c.rstd1);
    c.qkv.noalias() = c.h1 * tensor(ids.wqkv);
    c.qkv.rowwise() += tensor(ids.bqkv).row(0);

    c.ctx.resize(n, d);
    c.probs.resize(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      Mat<T>& p = c.probs[static_cast<size_t>(h)];
      p.noalias() = (q * k.transpose()) * scale;
      for (int i = 0; i < n; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j <= i; ++j) {
          if (mask.allowed(i, j)) {
            mx = std::max(mx, p(i, j));
          }
        }
        T sum = 0;
        for (int j = 0; j < n; ++j) {
          if (j <= i && mask.allowed(i, j)) {
            p(i, j) = std::exp(p(i, j) - mx);
            sum += p(i, j);
          } else {
            p(i, j) = 0;
          }
        }
        p.row(i) /= sum;
      }
      c.ctx.middleCols(h * dh, dh).noalias() = p * v;
    }

    Mat<T> attn_out = c.ctx * tensor(ids.wo);
    attn_out.rowwise() += tensor(ids.bo).row(0);
    if (dropout) {
      c.drop1.resize(n, d);
      for (Eigen::Index i = 0; i < c.drop1.size(); ++i) {
        c.drop1.data()[i] = dropout_rng->uniform() < cfg_.dropout_rate ? T(0) : keep_scale;
      }
      attn_out = attn_out.cwiseProduct(c.drop1);
    } else {
      c.drop1.resize(0, 0);
    }
    c.x_mid = c.x_in + attn_out;

    layer_norm(c.x_mid, tensor(ids.ln2_g), tensor(ids.ln2_b), c.xhat2, c.h2, c.rstd2);
    c.f_pre.noalias() = c.h2 * tensor(ids.w1);
    c.f_pre.rowwise() += tensor(ids.b1).row(0);
    c.f_act = c.f_pre.unaryExpr([](T v) { return gelu(v); });
    Mat<T> ffn_out = c.f_act * tensor(ids.w2);
    ffn_out.rowwise() += tensor(ids.b2).row(0);
    if (dropout) {
      c.drop2.resize(n, d);
      for (Eigen::Index i = 0; i < c.drop2.size(); ++i) {
        c.drop2.data()[i] = dropout_rng->uniform() < cfg_.dropout_rate ? T(0) : keep_scale;
      }
      ffn_out = ffn_out.cwiseProduct(c.drop2);
    } else {
      c.drop2.resize(0, 0);
    }
    x = c.x_mid + ffn_out;
  }

  Mat<T> audio = x.bottomRows(s_total);
  Mat<T> xhat_f, h_f;
  std::vector<T> rstd_f;
  layer_norm(audio, tensor(layout_.lnf_g), tensor(layout_.lnf_b), xhat_f, h_f, rstd_f);
  const int v = cfg_.vocab();
  Mat<T> logits(s_total, static_cast<Eigen::Index>(cfg_.n_q) * v);
  for (int k = 0; k < cfg_.n_q; ++k) {
    auto block = logits.middleCols(static_cast<Eigen::Index>(k) * v, v);
    block.noalias() = h_f * tensor(layout_.head_w[static_cast<size_t>(k)]);
    block.rowwise() += tensor(layout_.head_b[static_cast<size_t>(k)]).row(0);
  }
  if (cache != nullptr) {
    cache->xhat_f = std::move(xhat_f);
    cache->h_f = std::move(h_f);
    cache->rstd_f = std::move(rstd_f);
  }
  return logits;
}

template <typename T>
void DecoderLM<T>::run_backward(const MatD& feats, bool null_cond,
                                std::span<const int32_t> inputs, const Cache& cache,
                                const Mat<T>& dlogits, std::span<T> grad) const {
  const int d = cfg_.d_model;
  const int tv = static_cast<int>(feats.rows());
  const int s_total = static_cast<int>(inputs.size()) / cfg_.n_q;
  const int n = tv + s_total;
  const int heads = cfg_.n_heads;
  const int dh = cfg_.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const int v = cfg_.vocab();
  auto g = [&](size_t id) { return grad_view<T>(grad, layout_[id]); };

  Mat<T> dh_f = Mat<T>::Zero(s_total, d);
  for (int k = 0; k < cfg_.n_q; ++k) {
    const auto dblock = dlogits.middleCols(static_cast<Eigen::Index>(k) * v, v);
    g(layout_.head_w[static_cast<size_t>(k)]).noalias() += cache.h_f.transpose() * dblock;
    g(layout_.head_b[static_cast<size_t>(k)]).row(0) += dblock.colwise().sum();
    dh_f.noalias() += dblock * tensor(layout_.head_w[static_cast<size_t>(k)]).transpose();
  }
  Mat<T> dx = Mat<T>::Zero(n, d);
  {
    auto dg = g(layout_.lnf_g);
    auto db = g(layout_.lnf_b);
    dx.bottomRows(s_total) =
        layer_norm_backward(dh_f, cache.xhat_f, cache.rstd_f, tensor(layout_.lnf_g), dg, db);
  }

  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    const auto& ids = layout_.layers[static_cast<size_t>(l)];
    const LayerCache& c = cache.layers[static_cast<size_t>(l)];

    // Feed-forward branch.
    Mat<T> dffn = c.drop2.size() > 0 ? Mat<T>(dx.cwiseProduct(c.drop2)) : dx;
    g(ids.w2).noalias() += c.f_act.transpose() * dffn;
    g(ids.b2).row(0) += dffn.colwise().sum();
    Mat<T> dpre = dffn * tensor(ids.w2).transpose();
    for (Eigen::Index i = 0; i < dpre.size(); ++i) {
      dpre.data()[i] *= gelu_grad(c.f_pre.data()[i]);
    }
    g(ids.w1).noalias() += c.h2.transpose() * dpre;
    g(ids.b1).row(0) += dpre.colwise().sum();
    const Mat<T> dh2 = dpre * tensor(ids.w1).transpose();
    Mat<T> dx_mid = dx;
    {
      auto dg = g(ids.ln2_g);
      auto db = g(ids.ln2_b);
      dx_mid += layer_norm_backward(dh2, c.xhat2, c.rstd2, tensor(ids.ln2_g), dg, db);
    }

    // Attention branch.
    Mat<T> dattn = c.drop1.size() > 0 ? Mat<T>(dx_mid.cwiseProduct(c.drop1)) : dx_mid;
    g(ids.wo).noalias() += c.ctx.transpose() * dattn;
    g(ids.bo).row(0) += dattn.colwise().sum();
    const Mat<T> dctx = dattn * tensor(ids.wo).transpose();
    Mat<T> dqkv = Mat<T>::Zero(n, 3 * d);
    for (int h = 0; h < heads; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto val = c.qkv.middleCols(2 * d + h * dh, dh);
      const Mat<T>& p = c.probs[static_cast<size_t>(h)];
      const auto dctx_h = dctx.middleCols(h * dh, dh);
      Mat<T> dp = dctx_h * val.transpose();
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = p.transpose() * dctx_h;
      for (int i = 0; i < n; ++i) {
        const T dot = p.row(i).dot(dp.row(i));
        dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * scale;
      }
      dqkv.middleCols(h * dh, dh).noalias() = dp * k;
      dqkv.middleCols(d + h * dh, dh).noalias() = dp.transpose() * q;
    }
    g(ids.wqkv).noalias() += c.h1.transpose() * dqkv;
    g(ids.bqkv).row(0) += dqkv.colwise().sum();
    const Mat<T> dh1 = dqkv * tensor(ids.wqkv).transpose();
    {
      auto dg = g(ids.ln1_g);
      auto db = g(ids.ln1_b);
      dx = dx_mid + layer_norm_backward(dh1, c.xhat1, c.rstd1, tensor(ids.ln1_g), dg, db);
    }
  }

  const auto dvis = dx.topRows(tv);
  if (null_cond) {
    g(layout_.null_cond).row(0) += dvis.colwise().sum();
  } else {
    g(layout_.proj_w).noalias() += feats.cast<T>().transpose() * dvis;
    g(layout_.proj_b).row(0) += dvis.colwise().sum();
  }
  for (int s = 0; s < s_total; ++s) {
    for (int k = 0; k < cfg_.n_q; ++k) {
      g(layout_.embed[static_cast<size_t>(k)]).row(inputs[static_cast<size_t>(s) * cfg_.n_q + k]) +=
          dx.row(tv + s);
    }
  }
}

template <typename T>
Mat<T> DecoderLM<T>::forward(const MatD& feats, bool null_cond, std::span<const int32_t> inputs,
                             const AttentionMask& mask) const {
  return run_forward(feats, null_cond, inputs, mask, nullptr, nullptr);
}

template <typename T>
T DecoderLM<T>::loss_and_grad(const MatD& feats, bool null_cond, const StepSequence& steps,
                              const AttentionMask& mask, std::span<T> grad,
                              Rng* dropout_rng) const {
  if (steps.n_q != cfg_.n_q || steps.pad_id != cfg_.pad_id()) {
    throw std::invalid_argument("DecoderLM: step sequence does not match model vocabulary");
  }
  const std::vector<int32_t> inputs = model_inputs(steps, cfg_.bos_id());
  if (grad.empty()) {
    const Mat<T> logits = run_forward(feats, null_cond, inputs, mask, nullptr, dropout_rng);
    return sequence_loss<T>(logits, steps, cfg_.vocab(), nullptr);
  }
  if (grad.size() != params_.size()) {
    throw std::invalid_argument("DecoderLM: gradient buffer has wrong size");
  }
  Cache cache;
  const Mat<T> logits = run_forward(feats, null_cond, inputs, mask, &cache, dropout_rng);
  Mat<T> dlogits;
  const T loss = sequence_loss<T>(logits, steps, cfg_.vocab(), &dlogits);
  run_backward(feats, null_cond, inputs, cache, dlogits, grad);
  return loss;
}

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const DecoderLM<T>& model, const AttentionMask& mask,
                                          const MatD& feats, bool null_cond)
    : model_(model), mask_(mask) {
  const ModelConfig& cfg = model.config();
  const int tv = mask.T();
  if (feats.rows() != tv || feats.cols() != cfg.d_visual) {
    throw std::invalid_argument("IncrementalDecoder: features do not match mask/model");
  }
  keys_.assign(static_cast<size_t>(cfg.n_layers), Mat<T>::Zero(mask.size(), cfg.d_model));
  values_.assign(static_cast<size_t>(cfg.n_layers), Mat<T>::Zero(mask.size(), cfg.d_model));
  const Mat<T> w = model.tensor(model.layout().proj_w);
  const RowVec<T> b = model.tensor(model.layout().proj_b).row(0);
  for (int j = 0; j < tv; ++j) {
    RowVec<T> x;
    if (null_cond) {
      x = model.tensor(model.layout().null_cond).row(0);
    } else {
      const RowVec<T> f = feats.row(j).cast<T>();
      x = f * w + b;
    }
    x += positional_encoding<T>(visual_position(j, cfg.frame_rate_a, cfg.frame_rate_v),
                                cfg.d_model);
    process_row(j, std::move(x));
  }
}

template <typename T>
RowVec<T> IncrementalDecoder<T>::process_row(int row, RowVec<T> x) {
  const ModelConfig& cfg = model_.config();
  const ParamLayout& layout = model_.layout();
  const int d = cfg.d_model;
  const int dh = cfg.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<T> weights(static_cast<size_t>(row) + 1);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& ids = layout.layers[static_cast<size_t>(l)];
    const RowVec<T> h1 = layer_norm_row(x, model_.tensor(ids.ln1_g), model_.tensor(ids.ln1_b));
    RowVec<T> qkv = h1 * model_.tensor(ids.wqkv);
    qkv += model_.tensor(ids.bqkv).row(0);
    Mat<T>& keys = keys_[static_cast<size_t>(l)];
    Mat<T>& values = values_[static_cast<size_t>(l)];
    keys.row(row) = qkv.segment(d, d);
    values.row(row) = qkv.segment(2 * d, d);

    RowVec<T> ctx = RowVec<T>::Zero(d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const int off = h * dh;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j <= row; ++j) {
        if (!mask_.allowed(row, j)) {
          continue;
        }
        T dot = 0;
        for (int c = 0; c < dh; ++c) {
          dot += qkv(off + c) * keys(j, off + c);
        }
        weights[static_cast<size_t>(j)] = dot * scale;
        mx = std::max(mx, weights[static_cast<size_t>(j)]);
      }
      T sum = 0;
      for (int j = 0; j <= row; ++j) {
        if (mask_.allowed(row, j)) {
          weights[static_cast<size_t>(j)] = std::exp(weights[static_cast<size_t>(j)] - mx);
          sum += weights[static_cast<size_t>(j)];
        }
      }
      for (int j = 0; j <= row; ++j) {
        if (!mask_.allowed(row, j)) {
          continue;
        }
        const T p = weights[static_cast<size_t>(j)] / sum;
        for (int c = 0; c < dh; ++c) {
          ctx(off + c) += p * values(j, off + c);
        }
      }
    }
    RowVec<T> attn = ctx * model_.tensor(ids.wo);
    x += attn + model_.tensor(ids.bo).row(0);

    const RowVec<T> h2 = layer_norm_row(x, model_.tensor(ids.ln2_g), model_.tensor(ids.ln2_b));
    RowVec<T> f = h2 * model_.tensor(ids.w1);
    f += model_.tensor(ids.b1).row(0);
    f = f.unaryExpr([](T v) { return gelu(v); });
    RowVec<T> out = f * model_.tensor(ids.w2);
    x += out + model_.tensor(ids.b2).row(0);
  }
  return x;
}

template <typename T>
Mat<T> IncrementalDecoder<T>::step(std::span<const int32_t> tuple) {
  const ModelConfig& cfg = model_.config();
  const ParamLayout& layout = model_.layout();
  if (static_cast<int>(tuple.size()) != cfg.n_q) {
    throw std::invalid_argument("IncrementalDecoder::step: tuple must hold n_q ids");
  }
  if (next_audio_ >= mask_.S()) {
    throw std::out_of_range("IncrementalDecoder::step: mask has no room for another step");
  }
  RowVec<T> x = positional_encoding<T>(next_audio_, cfg.d_model);
  for (int k = 0; k < cfg.n_q; ++k) {
    const int32_t id = tuple[static_cast<size_t>(k)];
    if (id < 0 || id >= cfg.vocab()) {
      throw std::invalid_argument("IncrementalDecoder::step: id outside vocabulary");
    }
    x += model_.tensor(layout.embed[static_cast<size_t>(k)]).row(id);
  }
  const RowVec<T> hidden = process_row(mask_.T() + next_audio_, std::move(x));
  ++next_audio_;
  const RowVec<T> hf =
      layer_norm_row(hidden, model_.tensor(layout.lnf_g), model_.tensor(layout.lnf_b));
  Mat<T> logits(cfg.n_q, cfg.vocab());
  for (int k = 0; k < cfg.n_q; ++k) {
    RowVec<T> row = hf * model_.tensor(layout.head_w[static_cast<size_t>(k)]);
    logits.row(k) = row + model_.tensor(layout.head_b[static_cast<size_t>(k)]).row(0);
  }
  return logits;
}

template RowVec<float> positional_encoding<float>(double, int);
template RowVec<double> positional_encoding<double>(double, int);
template float sequence_loss<float>(const Mat<float>&, const StepSequence&, int, Mat<float>*);
template double sequence_loss<double>(const Mat<double>&, const StepSequence&, int, Mat<double>*);
template class DecoderLM<float>;
template class DecoderLM<double>;
template class IncrementalDecoder<float>;
template class IncrementalDecoder<double>;

}  // namespace foleygen
