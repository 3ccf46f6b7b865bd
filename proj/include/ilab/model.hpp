#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ilab/errors.hpp"
#include "ilab/graph.hpp"
#include "ilab/optim.hpp"
#include "ilab/rng.hpp"
#include "ilab/tensor.hpp"

namespace ilab {

struct ModelConfig {
  std::int64_t n_layers = 4;
  std::int64_t n_heads = 4;
  std::int64_t d_model = 128;
  std::int64_t d_mlp = 512;
  std::int64_t vocab_size = 256;
  std::int64_t max_seq_len = 24;
  double ln_eps = 1e-5;

  std::int64_t d_head() const { return d_model / n_heads; }

  void validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_mlp < 1 || vocab_size < 1 ||
        max_seq_len < 1)
      throw ConfigError("model config: all extents must be >= 1");
    if (d_model % n_heads != 0) throw ConfigError("model config: d_model not divisible by n_heads");
  }
};

enum class SiteKind { BlockOutput, AttnHeadOv, MlpActivation };

inline std::string site_kind_name(SiteKind k) {
  switch (k) {
    case SiteKind::BlockOutput: return "block_output";
    case SiteKind::AttnHeadOv: return "attn_head_ov";
    case SiteKind::MlpActivation: return "mlp_activation";
  }
  return "?";
}

inline SiteKind site_kind_from_name(const std::string& s) {
  if (s == "block_output") return SiteKind::BlockOutput;
  if (s == "attn_head_ov") return SiteKind::AttnHeadOv;
  if (s == "mlp_activation") return SiteKind::MlpActivation;
  throw ConfigError("unknown site kind: " + s);
}

/// One intervention site: kind, layer, head (attn_head_ov only) and token
/// position. Dimensionality follows the kind.
struct HookSite {
  SiteKind kind = SiteKind::BlockOutput;
  std::int64_t layer = 0;
  std::int64_t head = -1;
  std::int64_t pos = 0;

  std::int64_t dim(const ModelConfig& cfg) const {
    switch (kind) {
      case SiteKind::BlockOutput: return cfg.d_model;
      case SiteKind::AttnHeadOv: return cfg.d_head();
      case SiteKind::MlpActivation: return cfg.d_mlp;
    }
    return 0;
  }

  void validate(const ModelConfig& cfg, std::int64_t seq_len) const {
    if (layer < 0 || layer >= cfg.n_layers) throw IndexError("hook site: layer out of range");
    if (kind == SiteKind::AttnHeadOv) {
      if (head < 0 || head >= cfg.n_heads) throw IndexError("hook site: head out of range");
    } else if (head != -1) {
      throw ConfigError("hook site: head index only valid for attn_head_ov");
    }
    if (pos < 0 || pos >= seq_len) throw IndexError("hook site: position beyond sequence length");
  }

  friend bool operator<(const HookSite& a, const HookSite& b) {
    return std::tuple(static_cast<int>(a.kind), a.layer, a.head, a.pos) <
           std::tuple(static_cast<int>(b.kind), b.layer, b.head, b.pos);
  }
  friend bool operator==(const HookSite& a, const HookSite& b) {
    return a.kind == b.kind && a.layer == b.layer && a.head == b.head && a.pos == b.pos;
  }
};

template <class S>
struct LayerParamsT {
  TensorT<S> ln1_g, ln1_b;
  TensorT<S> wq, wk, wv, wo;
  TensorT<S> bq, bk, bv, bo;
  TensorT<S> ln2_g, ln2_b;
  TensorT<S> w_in, b_in, w_out, b_out;
};

/// GPT-2-style pre-layernorm decoder weights.
template <class S>
struct ModelParamsT {
  ModelConfig config;
  TensorT<S> tok_embed;  // V x d
  TensorT<S> pos_embed;  // maxlen x d
  std::vector<LayerParamsT<S>> layers;
  TensorT<S> lnf_g, lnf_b;
  TensorT<S> w_unembed;  // d x V

  std::vector<std::pair<std::string, TensorT<S>*>> named_tensors() {
    std::vector<std::pair<std::string, TensorT<S>*>> out;
    out.emplace_back("tok_embed", &tok_embed);
    out.emplace_back("pos_embed", &pos_embed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& L = layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      out.emplace_back(p + "ln1_g", &L.ln1_g);
      out.emplace_back(p + "ln1_b", &L.ln1_b);
      out.emplace_back(p + "wq", &L.wq);
      out.emplace_back(p + "wk", &L.wk);
      out.emplace_back(p + "wv", &L.wv);
      out.emplace_back(p + "wo", &L.wo);
      out.emplace_back(p + "bq", &L.bq);
      out.emplace_back(p + "bk", &L.bk);
      out.emplace_back(p + "bv", &L.bv);
      out.emplace_back(p + "bo", &L.bo);
      out.emplace_back(p + "ln2_g", &L.ln2_g);
      out.emplace_back(p + "ln2_b", &L.ln2_b);
      out.emplace_back(p + "w_in", &L.w_in);
      out.emplace_back(p + "b_in", &L.b_in);
      out.emplace_back(p + "w_out", &L.w_out);
      out.emplace_back(p + "b_out", &L.b_out);
    }
    out.emplace_back("lnf_g", &lnf_g);
    out.emplace_back("lnf_b", &lnf_b);
    out.emplace_back("w_unembed", &w_unembed);
    return out;
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    for (auto& [name, t] : named_tensors()) n += t->numel();
    return n;
  }
};

using ModelParams = ModelParamsT<double>;

/// Deterministic initialization: N(0, 0.02) weights, residual output
/// projections scaled down by sqrt(2 * n_layers), unit layernorm gains.
template <class S>
ModelParamsT<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const double w_std = 0.02;
  const double resid_std = w_std / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
  ModelParamsT<S> p;
  p.config = cfg;
  auto randn = [&](std::vector<std::int64_t> sh, double sd) {
    auto t = TensorT<S>::zeros(std::move(sh));
    for (auto& x : t.data) x = static_cast<S>(rng.normal() * sd);
    return t;
  };
  p.tok_embed = randn({cfg.vocab_size, cfg.d_model}, w_std);
  p.pos_embed = randn({cfg.max_seq_len, cfg.d_model}, 0.01);
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    LayerParamsT<S> L;
    L.ln1_g = TensorT<S>::full({cfg.d_model}, S(1));
    L.ln1_b = TensorT<S>::zeros({cfg.d_model});
    L.wq = randn({cfg.d_model, cfg.d_model}, w_std);
    L.wk = randn({cfg.d_model, cfg.d_model}, w_std);
    L.wv = randn({cfg.d_model, cfg.d_model}, w_std);
    L.wo = randn({cfg.d_model, cfg.d_model}, resid_std);
    L.bq = TensorT<S>::zeros({cfg.d_model});
    L.bk = TensorT<S>::zeros({cfg.d_model});
    L.bv = TensorT<S>::zeros({cfg.d_model});
    L.bo = TensorT<S>::zeros({cfg.d_model});
    L.ln2_g = TensorT<S>::full({cfg.d_model}, S(1));
    L.ln2_b = TensorT<S>::zeros({cfg.d_model});
    L.w_in = randn({cfg.d_model, cfg.d_mlp}, w_std);
    L.b_in = TensorT<S>::zeros({cfg.d_mlp});
    L.w_out = randn({cfg.d_mlp, cfg.d_model}, resid_std);
    L.b_out = TensorT<S>::zeros({cfg.d_model});
    p.layers.push_back(std::move(L));
  }
  p.lnf_g = TensorT<S>::full({cfg.d_model}, S(1));
  p.lnf_b = TensorT<S>::zeros({cfg.d_model});
  p.w_unembed = randn({cfg.d_model, cfg.vocab_size}, w_std);
  return p;
}

/// Graph handles for every parameter tensor of a model.
template <class S>
struct ParamNodesT {
  ModelConfig config;
  std::vector<NodeId> nodes;                // same order as named_tensors()
  std::vector<std::string> names;

  static ParamNodesT insert(GraphT<S>& g, ModelParamsT<S>& params, bool requires_grad) {
    ParamNodesT pn;
    pn.config = params.config;
    for (auto& [name, t] : params.named_tensors()) {
      auto copy = *t;
      copy.requires_grad = requires_grad;
      pn.nodes.push_back(g.input(std::move(copy)));
      pn.names.push_back(name);
    }
    return pn;
  }

  NodeId at(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return nodes[i];
    throw ContractError("unknown parameter: " + name);
  }
};

template <class S>
struct ForwardResultT {
  NodeId logits;  // T x V
  std::map<HookSite, NodeId> captured;
};

/// Causal forward pass with capture and patch hooks at the three
/// intervention sites. Patch values are graph nodes, so gradients flow
/// through them when they require grad.
template <class S>
ForwardResultT<S> forward_with_hooks(GraphT<S>& g, const ParamNodesT<S>& pn,
                                     const std::vector<std::int64_t>& tokens,
                                     const std::vector<HookSite>& capture = {},
                                     const std::vector<std::pair<HookSite, NodeId>>& patch = {}) {
  const ModelConfig& cfg = pn.config;
  const auto T = static_cast<std::int64_t>(tokens.size());
  if (T < 1) throw InputError("forward: empty token sequence");
  if (T > cfg.max_seq_len) throw InputError("forward: sequence exceeds max_seq_len");
  for (auto t : tokens)
    if (t < 0 || t >= cfg.vocab_size) throw IndexError("forward: token id out of vocab");
  for (const auto& s : capture) s.validate(cfg, T);
  for (const auto& [s, v] : patch) {
    s.validate(cfg, T);
    if (g.value(v).numel() != s.dim(cfg)) throw PatchError("patch vector dimension mismatch");
  }

  ForwardResultT<S> res;
  auto hook = [&](SiteKind kind, std::int64_t layer, std::int64_t head, NodeId& mat) {
    // capture then patch, per position; capture sees the unpatched value
    for (const auto& s : capture)
      if (s.kind == kind && s.layer == layer && s.head == head)
        res.captured[s] = g.select_row(mat, s.pos);
    for (const auto& [s, v] : patch)
      if (s.kind == kind && s.layer == layer && s.head == head)
        mat = g.replace_row(mat, s.pos, v);
  };

  std::vector<std::int64_t> positions(static_cast<std::size_t>(T));
  for (std::int64_t i = 0; i < T; ++i) positions[static_cast<std::size_t>(i)] = i;

  auto x = g.add(g.gather_rows(pn.at("tok_embed"), tokens),
                 g.gather_rows(pn.at("pos_embed"), positions));

  const std::int64_t dh = cfg.d_head();
  const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  const S eps = static_cast<S>(cfg.ln_eps);

  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto n1 = g.layernorm_rows(x, pn.at(p + "ln1_g"), pn.at(p + "ln1_b"), eps);
    auto q = g.add_rowvec(g.matmul(n1, pn.at(p + "wq")), pn.at(p + "bq"));
    auto k = g.add_rowvec(g.matmul(n1, pn.at(p + "wk")), pn.at(p + "bk"));
    auto v = g.add_rowvec(g.matmul(n1, pn.at(p + "wv")), pn.at(p + "bv"));
    std::vector<NodeId> heads;
    for (std::int64_t h = 0; h < cfg.n_heads; ++h) {
      auto qh = g.slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = g.slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = g.slice_cols(v, h * dh, (h + 1) * dh);
      auto scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh);
      auto attn = g.causal_softmax_rows(scores);
      auto zh = g.matmul(attn, vh);
      hook(SiteKind::AttnHeadOv, l, h, zh);
      heads.push_back(zh);
    }
    auto z = g.concat_cols(heads);
    auto attn_out = g.add_rowvec(g.matmul(z, pn.at(p + "wo")), pn.at(p + "bo"));
    x = g.add(x, attn_out);

    auto n2 = g.layernorm_rows(x, pn.at(p + "ln2_g"), pn.at(p + "ln2_b"), eps);
    auto hpre = g.add_rowvec(g.matmul(n2, pn.at(p + "w_in")), pn.at(p + "b_in"));
    auto hact = g.gelu(hpre);
    hook(SiteKind::MlpActivation, l, -1, hact);
    auto mlp_out = g.add_rowvec(g.matmul(hact, pn.at(p + "w_out")), pn.at(p + "b_out"));
    x = g.add(x, mlp_out);
    hook(SiteKind::BlockOutput, l, -1, x);
  }

  auto xf = g.layernorm_rows(x, pn.at("lnf_g"), pn.at("lnf_b"), eps);
  res.logits = g.matmul(xf, pn.at("w_unembed"));
  return res;
}

/// Plain forward: logits for a token sequence, no recording overhead kept.
template <class S>
TensorT<S> logits(ModelParamsT<S>& params, const std::vector<std::int64_t>& tokens) {
  GraphT<S> g;
  auto pn = ParamNodesT<S>::insert(g, params, false);
  auto res = forward_with_hooks(g, pn, tokens);
  return g.value(res.logits);
}

/// -log p(label | prefix), natural log.
template <class S>
double surprisal(ModelParamsT<S>& params, const std::vector<std::int64_t>& prefix,
                 std::int64_t label) {
  if (prefix.empty()) throw InputError("surprisal: empty prefix");
  if (label < 0 || label >= params.config.vocab_size)
    throw IndexError("surprisal: label out of vocab");
  auto lg = logits(params, prefix);
  auto last = TensorT<S>::zeros({lg.cols()});
  for (std::int64_t j = 0; j < lg.cols(); ++j)
    last.data[static_cast<std::size_t>(j)] = lg.at(lg.rows() - 1, j);
  return cross_entropy_val(last, label);
}

struct TrainHyper {
  double lr = 1e-3;
  std::int64_t batch = 16;
  std::int64_t steps = 2000;
  std::int64_t warmup = 0;
  std::uint64_t seed = 0;
};

/// Next-token training with Adam over a tokenized corpus. Deterministic
/// per seed. Appends the per-step loss to loss_curve when given.
template <class S>
ModelParamsT<S> train_lm(const ModelConfig& cfg, const std::vector<std::vector<std::int64_t>>& corpus,
                         const TrainHyper& hy, std::vector<double>* loss_curve = nullptr) {
  if (corpus.empty()) throw InputError("train_lm: empty corpus");
  for (const auto& seq : corpus) {
    if (seq.size() < 2) throw InputError("train_lm: sequences need at least two tokens");
    if (static_cast<std::int64_t>(seq.size()) > cfg.max_seq_len)
      throw InputError("train_lm: sequence exceeds max_seq_len");
  }
  auto params = init_model<S>(cfg, hy.seed);
  auto named = params.named_tensors();
  std::vector<TensorT<S>*> ptensors;
  for (auto& [name, t] : named) ptensors.push_back(t);
  auto st = AdamStateT<S>::init(ptensors, hy.lr, hy.warmup);

  Rng rng(hy.seed ^ 0xA5A5A5A5ULL);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t cursor = 0;

  for (std::int64_t step = 0; step < hy.steps; ++step) {
    GraphT<S> g;
    auto pn = ParamNodesT<S>::insert(g, params, true);
    std::vector<NodeId> seq_losses;
    for (std::int64_t b = 0; b < hy.batch; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const auto& seq = corpus[order[cursor++]];
      auto res = forward_with_hooks(g, pn, seq);
      std::vector<NodeId> tok_losses;
      for (std::size_t t = 0; t + 1 < seq.size(); ++t)
        tok_losses.push_back(g.cross_entropy(
            g.select_row(res.logits, static_cast<std::int64_t>(t)), seq[t + 1]));
      seq_losses.push_back(g.mean_scalars(tok_losses));
    }
    auto loss = g.mean_scalars(seq_losses);
    g.backward(loss);
    if (loss_curve) loss_curve->push_back(static_cast<double>(g.value(loss).data[0]));

    std::vector<const TensorT<S>*> grads;
    for (std::size_t i = 0; i < pn.nodes.size(); ++i) grads.push_back(&g.grad(pn.nodes[i]));
    adam_step<S>(ptensors, grads, st);
  }
  return params;
}

}  // namespace ilab
