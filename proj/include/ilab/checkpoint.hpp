#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ilab/errors.hpp"
#include "ilab/model.hpp"
#include "ilab/tensor.hpp"

namespace ilab {

// Tensor archive layout:
//   "ILAB" | u32 version | u64 header_len | header JSON | payload
// Header lists named tensors with dtype, shape and byte offset into the
// little-endian row-major payload. Model checkpoints and direction
// archives both use this container.

inline constexpr char kCheckpointMagic[4] = {'I', 'L', 'A', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
const char* dtype_name();
template <>
inline const char* dtype_name<double>() { return "f64"; }
template <>
inline const char* dtype_name<float>() { return "f32"; }

template <class S>
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const TensorT<S>*>>& tensors,
                  const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header;
  header["extra"] = extra;
  auto& list = header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t nbytes = t->data.size() * sizeof(S);
    list.push_back({{"name", name},
                    {"dtype", dtype_name<S>()},
                    {"shape", t->shape},
                    {"offset", offset},
                    {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot open for writing: " + path);
  out.write(kCheckpointMagic, 4);
  const std::uint32_t ver = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(S)));
  if (!out) throw FormatError("checkpoint: write failed: " + path);
}

template <class S>
std::pair<std::map<std::string, TensorT<S>>, nlohmann::json> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic");
  std::uint32_t ver = 0;
  if (!in.read(reinterpret_cast<char*>(&ver), sizeof(ver)) || ver != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version");
  std::uint64_t hlen = 0;
  if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen)))
    throw FormatError("checkpoint: truncated header length");
  std::string hs(hlen, '\0');
  if (!in.read(hs.data(), static_cast<std::streamsize>(hlen)))
    throw FormatError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header parse: ") + e.what());
  }

  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::uint64_t expected = 0;
  std::uint64_t cursor = 0;
  for (const auto& e : header.at("tensors")) {
    if (e.at("offset").template get<std::uint64_t>() != cursor)
      throw FormatError("checkpoint: overlapping or out-of-order tensor offsets");
    cursor += e.at("nbytes").template get<std::uint64_t>();
    expected += e.at("nbytes").template get<std::uint64_t>();
  }
  if (payload.size() != expected) throw FormatError("checkpoint: payload length mismatch");

  std::map<std::string, TensorT<S>> out;
  for (const auto& e : header.at("tensors")) {
    if (e.at("dtype").template get<std::string>() != dtype_name<S>())
      throw FormatError("checkpoint: dtype mismatch for " + e.at("name").template get<std::string>());
    auto shape = e.at("shape").template get<std::vector<std::int64_t>>();
    auto t = TensorT<S>::zeros(shape);
    const auto off = e.at("offset").template get<std::uint64_t>();
    const auto nbytes = e.at("nbytes").template get<std::uint64_t>();
    if (nbytes != t.data.size() * sizeof(S))
      throw FormatError("checkpoint: tensor byte size inconsistent with shape");
    std::memcpy(t.data.data(), payload.data() + off, nbytes);
    out.emplace(e.at("name").template get<std::string>(), std::move(t));
  }
  return {std::move(out), header.value("extra", nlohmann::json::object())};
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
          {"d_model", c.d_model},     {"d_mlp", c.d_mlp},
          {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
          {"ln_eps", c.ln_eps}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::int64_t>();
  c.n_heads = j.at("n_heads").get<std::int64_t>();
  c.d_model = j.at("d_model").get<std::int64_t>();
  c.d_mlp = j.at("d_mlp").get<std::int64_t>();
  c.vocab_size = j.at("vocab_size").get<std::int64_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::int64_t>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.validate();
  return c;
}

template <class S>
void save_checkpoint(const std::string& path, ModelParamsT<S>& params,
                     nlohmann::json extra = nlohmann::json::object()) {
  extra["config"] = config_to_json(params.config);
  std::vector<std::pair<std::string, const TensorT<S>*>> named;
  for (auto& [name, t] : params.named_tensors()) named.emplace_back(name, t);
  save_tensors<S>(path, named, extra);
}

template <class S>
ModelParamsT<S> load_checkpoint(const std::string& path, nlohmann::json* extra_out = nullptr) {
  auto [tensors, extra] = load_tensors<S>(path);
  if (!extra.contains("config")) throw FormatError("checkpoint: missing config");
  ModelConfig cfg = config_from_json(extra.at("config"));
  auto params = init_model<S>(cfg, 0);
  for (auto& [name, t] : params.named_tensors()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint: missing tensor " + name);
    if (it->second.shape != t->shape) throw FormatError("checkpoint: shape mismatch for " + name);
    *t = std::move(it->second);
  }
  if (extra_out) *extra_out = extra;
  return params;
}

}  // namespace ilab
