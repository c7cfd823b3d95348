#include "foleygen/checkpoint.hpp"

#include "foleygen/binary_io.hpp"

#include <cstring>
#include <map>
#include <span>
#include <string>

namespace foleygen {

namespace {

constexpr uint32_t kVersion = 1;

void write_tensor(ByteWriter& w, const std::string& name, const ParamSpec& spec,
                  std::span<const float> data) {
  w.str(name);
  w.u32(static_cast<uint32_t>(spec.rows));
  w.u32(static_cast<uint32_t>(spec.cols));
  for (size_t i = 0; i < static_cast<size_t>(spec.rows) * spec.cols; ++i) {
    w.f32(data[spec.offset + i]);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DecoderLM<float>& model,
                     Mechanism mech, uint64_t step, const AdamState* adam) {
  const ModelConfig& c = model.config();
  ByteWriter w;
  w.magic("FGLM");
  w.u32(kVersion);
  for (int v : {c.n_layers, c.n_heads, c.d_model, c.d_ff, c.n_q, c.codebook_size, c.d_visual,
                c.max_T, c.max_S}) {
    w.u32(static_cast<uint32_t>(v));
  }
  w.f32(static_cast<float>(c.dropout_rate));
  w.f32(static_cast<float>(c.frame_rate_a));
  w.f32(static_cast<float>(c.frame_rate_v));
  w.u32(static_cast<uint32_t>(mech));
  w.u64(step);
  const auto& specs = model.layout().specs();
  w.u32(static_cast<uint32_t>(specs.size() * (adam != nullptr ? 3 : 1)));
  for (const auto& s : specs) {
    write_tensor(w, s.name, s, model.params());
  }
  if (adam != nullptr) {
    for (const auto& s : specs) {
      write_tensor(w, "adam.m/" + s.name, s, adam->m);
    }
    for (const auto& s : specs) {
      write_tensor(w, "adam.v/" + s.name, s, adam->v);
    }
  }
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open(path);
  r.expect_magic("FGLM");
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError(r.source() + ": unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  for (int* field : {&c.n_layers, &c.n_heads, &c.d_model, &c.d_ff, &c.n_q, &c.codebook_size,
                     &c.d_visual, &c.max_T, &c.max_S}) {
    *field = static_cast<int>(r.u32());
  }
  c.dropout_rate = r.f32();
  c.frame_rate_a = r.f32();
  c.frame_rate_v = r.f32();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(r.source() + ": bad model config: " + e.what());
  }
  const uint32_t mech = r.u32();
  if (mech > static_cast<uint32_t>(Mechanism::frame_specific)) {
    throw FormatError(r.source() + ": unknown attention mechanism " + std::to_string(mech));
  }
  Checkpoint ck{DecoderLM<float>(c), static_cast<Mechanism>(mech), r.u64(), std::nullopt};

  std::map<std::string, const ParamSpec*> by_name;
  for (const auto& s : ck.model.layout().specs()) {
    by_name[s.name] = &s;
  }
  AdamState adam;
  adam.m.assign(ck.model.params().size(), 0.0f);
  adam.v.assign(ck.model.params().size(), 0.0f);
  size_t seen_params = 0;
  size_t seen_adam = 0;
  const uint32_t count = r.u32();
  for (uint32_t t = 0; t < count; ++t) {
    std::string name = r.str();
    std::span<float> dest(ck.model.params());
    size_t* seen = &seen_params;
    if (name.rfind("adam.m/", 0) == 0 || name.rfind("adam.v/", 0) == 0) {
      dest = name[5] == 'm' ? std::span<float>(adam.m) : std::span<float>(adam.v);
      seen = &seen_adam;
      name = name.substr(7);
    }
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError(r.source() + ": unexpected tensor '" + name + "'");
    }
    const ParamSpec& s = *it->second;
    const auto rows = static_cast<int>(r.u32());
    const auto cols = static_cast<int>(r.u32());
    if (rows != s.rows || cols != s.cols) {
      throw FormatError(r.source() + ": tensor '" + name + "' is " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", config expects " + std::to_string(s.rows) +
                        "x" + std::to_string(s.cols));
    }
    r.require(static_cast<size_t>(rows) * cols * 4);
    for (size_t i = 0; i < static_cast<size_t>(rows) * cols; ++i) {
      dest[s.offset + i] = r.f32();
    }
    ++*seen;
  }
  const size_t n_specs = ck.model.layout().specs().size();
  if (seen_params != n_specs || (seen_adam != 0 && seen_adam != 2 * n_specs)) {
    throw FormatError(r.source() + ": checkpoint holds " + std::to_string(seen_params) + " of " +
                      std::to_string(n_specs) + " model tensors");
  }
  if (r.remaining() != 0) {
    throw FormatError(r.source() + ": " + std::to_string(r.remaining()) + " trailing bytes");
  }
  if (seen_adam != 0) {
    ck.adam = std::move(adam);
  }
  return ck;
}

}  // namespace foleygen
