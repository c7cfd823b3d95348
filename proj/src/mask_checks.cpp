#include "foleygen/mask_checks.hpp"

#include <cstring>

namespace foleygen {

namespace {

bool rows_equal(const Mat<float>& a, const Mat<float>& b, Eigen::Index r) {
  return std::memcmp(a.row(r).data(), b.row(r).data(), sizeof(float) * a.cols()) == 0;
}

bool rows_equal(const Mat<double>& a, const Mat<double>& b, Eigen::Index r) {
  return std::memcmp(a.row(r).data(), b.row(r).data(), sizeof(double) * a.cols()) == 0;
}

std::string at(int q, int k) {
  return "(" + std::to_string(q) + "," + std::to_string(k) + ")";
}

}  // namespace

std::vector<InvariantCheck> check_mask_structure(const MaskSpec& spec) {
  const AttentionMask m = build_mask(spec);
  const int t = spec.T;
  const int n = m.size();
  std::vector<InvariantCheck> out;
  auto fail = [](InvariantCheck& c, const std::string& why) {
    if (c.passed) {
      c.passed = false;
      c.detail = why;
    }
  };

  InvariantCheck nonempty{"no empty query row", true, ""};
  for (int q = 0; q < n; ++q) {
    bool any = false;
    for (int k = 0; k < n; ++k) {
      any = any || m.allowed(q, k);
    }
    if (!any) {
      fail(nonempty, "row " + std::to_string(q));
    }
  }
  out.push_back(nonempty);

  InvariantCheck visual{"visual prefix causal, blind to audio", true, ""};
  for (int q = 0; q < t; ++q) {
    for (int k = 0; k < n; ++k) {
      if (m.allowed(q, k) != (k <= q)) {
        fail(visual, at(q, k));
      }
    }
  }
  out.push_back(visual);

  InvariantCheck audio{"audio block lower-triangular", true, ""};
  for (int i = 0; i < spec.S; ++i) {
    for (int a = 0; a < spec.S; ++a) {
      if (m.allowed(t + i, t + a) != (a <= i)) {
        fail(audio, at(t + i, t + a));
      }
    }
  }
  out.push_back(audio);

  InvariantCheck rule{"audio-to-visual rule", true, ""};
  for (int i = 0; i < spec.S; ++i) {
    const int phi = frame_map(i, spec.frame_rate_a, spec.frame_rate_v, t);
    for (int j = 0; j < t; ++j) {
      const bool want = spec.mechanism == Mechanism::all_frame       ? true
                        : spec.mechanism == Mechanism::causal_visual ? j <= phi
                                                                     : j == phi;
      if (m.allowed(t + i, j) != want) {
        fail(rule, at(t + i, j));
      }
    }
  }
  out.push_back(rule);

  InvariantCheck nest{"frame_specific <= causal_visual <= all_frame", true, ""};
  MaskSpec s = spec;
  s.mechanism = Mechanism::frame_specific;
  const AttentionMask fs = build_mask(s);
  s.mechanism = Mechanism::causal_visual;
  const AttentionMask cv = build_mask(s);
  s.mechanism = Mechanism::all_frame;
  const AttentionMask af = build_mask(s);
  for (int q = 0; q < n; ++q) {
    for (int k = 0; k < n; ++k) {
      if ((fs.allowed(q, k) && !cv.allowed(q, k)) || (cv.allowed(q, k) && !af.allowed(q, k))) {
        fail(nest, at(q, k));
      }
    }
  }
  out.push_back(nest);

  if (spec.mechanism == Mechanism::causal_visual) {
    InvariantCheck mono{"visual set non-decreasing", true, ""};
    for (int i = 1; i < spec.S; ++i) {
      for (int j = 0; j < t; ++j) {
        if (m.allowed(t + i - 1, j) && !m.allowed(t + i, j)) {
          fail(mono, at(t + i, j));
        }
      }
    }
    out.push_back(mono);
  }
  return out;
}

std::vector<uint8_t> reachable_keys(const AttentionMask& mask, int query, int hops) {
  const int n = mask.size();
  std::vector<uint8_t> reach(static_cast<size_t>(n), 0);
  reach[static_cast<size_t>(query)] = 1;
  for (int h = 0; h < hops; ++h) {
    std::vector<uint8_t> next = reach;
    for (int r = 0; r < n; ++r) {
      if (!reach[static_cast<size_t>(r)]) {
        continue;
      }
      for (int k = 0; k < n; ++k) {
        if (mask.allowed(r, k)) {
          next[static_cast<size_t>(k)] = 1;
        }
      }
    }
    reach = std::move(next);
  }
  return reach;
}

template <typename T>
EfficacyResult check_mask_efficacy(const DecoderLM<T>& model, const AttentionMask& mask,
                                   const MatD& feats, std::span<const int32_t> inputs,
                                   uint64_t seed) {
  const int t = mask.T();
  const int s_total = mask.S();
  const int n_q = model.config().n_q;
  const int hops = model.config().n_layers;
  std::vector<std::vector<uint8_t>> reach;
  for (int s = 0; s < s_total; ++s) {
    reach.push_back(reachable_keys(mask, t + s, hops));
  }
  const Mat<T> base = model.forward(feats, false, inputs, mask);
  Rng rng(seed);
  EfficacyResult res;
  auto compare = [&](const Mat<T>& other, int key, const std::string& what) {
    for (int s = 0; s < s_total; ++s) {
      if (reach[static_cast<size_t>(s)][static_cast<size_t>(key)]) {
        continue;
      }
      ++res.comparisons;
      if (!rows_equal(base, other, s)) {
        ++res.failures;
        if (res.first_failure.empty()) {
          res.first_failure = what + " changed logits of audio row " + std::to_string(s);
        }
      }
    }
  };

  for (int j = 0; j < t; ++j) {
    MatD f = feats;
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      f(j, c) += 1.0 + rng.uniform();
    }
    compare(model.forward(f, false, inputs, mask), j, "visual frame " + std::to_string(j));
  }

  const int vocab = model.config().vocab();
  const int probes = std::min(s_total, 8);
  for (int p = 0; p < probes; ++p) {
    const int r = probes == 1 ? 0 : static_cast<int>(static_cast<long>(p) * (s_total - 1) / (probes - 1));
    std::vector<int32_t> in(inputs.begin(), inputs.end());
    for (int k = 0; k < n_q; ++k) {
      auto& id = in[static_cast<size_t>(r) * n_q + k];
      id = static_cast<int32_t>((id + 1 + rng.below(static_cast<uint64_t>(vocab - 1))) % vocab);
    }
    compare(model.forward(feats, false, in, mask), t + r, "audio input row " + std::to_string(r));
  }
  return res;
}

template EfficacyResult check_mask_efficacy<float>(const DecoderLM<float>&, const AttentionMask&,
                                                   const MatD&, std::span<const int32_t>, uint64_t);
template EfficacyResult check_mask_efficacy<double>(const DecoderLM<double>&,
                                                    const AttentionMask&, const MatD&,
                                                    std::span<const int32_t>, uint64_t);

}  // namespace foleygen
