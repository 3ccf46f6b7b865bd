#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ilab/behavior.hpp"
#include "ilab/checkpoint.hpp"
#include "ilab/errors.hpp"
#include "ilab/model.hpp"
#include "ilab/optim.hpp"
#include "ilab/rng.hpp"
#include "ilab/stimgen.hpp"

namespace ilab {

inline Role role_from_name(const std::string& s) {
  for (Role r : {Role::Prefix, Role::Licensor, Role::Subject, Role::V1, Role::Complement,
                 Role::Conjunction, Role::V2})
    if (role_name(r) == s) return r;
  throw ParseError("unknown role: " + s);
}

/// 1-D interchange intervention: replace b's component along the unit
/// direction a with s's component.
template <class S>
TensorT<S> das_patch(const TensorT<S>& b, const TensorT<S>& s, const TensorT<S>& a) {
  if (b.numel() != s.numel() || b.numel() != a.numel())
    throw PatchError("das_patch: dimension mismatch");
  S t = S(0);
  for (std::size_t i = 0; i < a.data.size(); ++i) t += (s.data[i] - b.data[i]) * a.data[i];
  TensorT<S> out = b;
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] += t * a.data[i];
  return out;
}

struct DasTrainSpec {
  double lr = 5e-3;
  std::int64_t warmup = 100;
  std::int64_t batch = 4;
  std::int64_t grad_accum = 4;
  std::int64_t epochs = 1;
  std::int64_t train_pairs = 400;
  bool fixed_roles = false;  // base always the th-variant, source the wh-variant
  bool control = false;      // train against flipped labels

  void validate() const {
    if (lr <= 0 || warmup < 0 || batch < 1 || grad_accum < 1 || epochs < 1 || train_pairs < 1)
      throw ConfigError("das spec: all counts must be positive");
  }

  std::string fingerprint() const {
    std::ostringstream ss;
    ss << "lr=" << lr << ";warmup=" << warmup << ";batch=" << batch << ";accum=" << grad_accum
       << ";epochs=" << epochs << ";pairs=" << train_pairs << ";fixed=" << fixed_roles
       << ";control=" << control;
    return ss.str();
  }
};

/// A learned unit direction at one hook site, plus the provenance needed to
/// reproduce and archive it. The role tag allows applying the direction to
/// stimuli whose template differs in length from the training template.
template <class S>
struct DirectionT {
  HookSite site;
  Role role = Role::V2;
  TensorT<S> a;
  std::uint64_t seed = 0;
  std::string fingerprint;
  double final_loss = 0;

  void validate() const {
    double n2 = 0;
    for (auto v : a.data) n2 += static_cast<double>(v) * static_cast<double>(v);
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
      throw ContractError("direction: vector is not unit length");
  }
};

using Direction = DirectionT<double>;

/// Position of the direction's role within a (possibly different-length)
/// stimulus; falls back to the raw index only when the role matches there.
template <class S>
std::int64_t aligned_pos(const DirectionT<S>& dir, const MinimalPair& pair) {
  const auto n = static_cast<std::int64_t>(pair.roles.size());
  if (dir.site.pos < n && pair.roles[static_cast<std::size_t>(dir.site.pos)] == dir.role)
    return dir.site.pos;
  const auto p = pair.role_pos(dir.role);
  if (p < 0) throw AlignmentError("direction role absent from stimulus: " + role_name(dir.role));
  return p;
}

namespace detail {

struct PatchCase {
  const std::vector<std::int64_t>* base;
  const std::vector<std::int64_t>* source;
  std::int64_t target;
};

// Exp-2-style training alternates pair roles; Exp-3-style fixes the th
// (no-gap) variant as base and the wh variant as source. The control
// condition flips the target label only.
inline PatchCase patch_case(const MinimalPair& mp, std::size_t index, const DasTrainSpec& spec) {
  PatchCase pc;
  const bool th_base = spec.fixed_roles || index % 2 == 0;
  if (th_base) {
    pc.base = &mp.th;
    pc.source = &mp.wh;
    pc.target = spec.control ? mp.l_th : mp.l_wh;
  } else {
    pc.base = &mp.wh;
    pc.source = &mp.th;
    pc.target = spec.control ? mp.l_wh : mp.l_th;
  }
  return pc;
}

}  // namespace detail

/// Learn a unit direction whose interchange intervention moves the base
/// run's label probability toward the source label. Deterministic per seed.
template <class S>
DirectionT<S> train_direction(ModelParamsT<S>& params, const std::vector<MinimalPair>& pairs,
                              const HookSite& site, const DasTrainSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (pairs.empty()) throw InputError("train_direction: no pairs");
  const ModelConfig& cfg = params.config;
  for (const auto& mp : pairs) {
    if (site.pos >= static_cast<std::int64_t>(mp.wh.size()))
      throw AlignmentError("train_direction: site position beyond pair length");
    site.validate(cfg, static_cast<std::int64_t>(mp.wh.size()));
  }

  DirectionT<S> dir;
  dir.site = site;
  dir.role = pairs.front().roles[static_cast<std::size_t>(site.pos)];
  dir.seed = seed;
  dir.fingerprint = spec.fingerprint();

  const std::int64_t n = site.dim(cfg);
  Rng rng(seed);
  dir.a = TensorT<S>::zeros({n});
  for (auto& v : dir.a.data) v = static_cast<S>(rng.normal());
  auto renorm = [&]() {
    double n2 = 0;
    for (auto v : dir.a.data) n2 += static_cast<double>(v) * static_cast<double>(v);
    const double nm = std::sqrt(n2);
    if (nm == 0) throw ContractError("train_direction: zero direction");
    for (auto& v : dir.a.data) v = static_cast<S>(static_cast<double>(v) / nm);
  };
  renorm();

  std::vector<TensorT<S>*> ptensors{&dir.a};
  auto st = AdamStateT<S>::init(ptensors, spec.lr, spec.warmup);
  Rng order_rng(seed ^ 0xD1E5C0DEULL);

  // flat shuffled example stream, re-shuffled each epoch
  std::vector<std::size_t> stream;
  for (std::int64_t e = 0; e < spec.epochs; ++e) {
    std::vector<std::size_t> idx(pairs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    order_rng.shuffle(idx);
    stream.insert(stream.end(), idx.begin(), idx.end());
  }

  const std::size_t per_step = static_cast<std::size_t>(spec.batch * spec.grad_accum);
  std::size_t cursor = 0;
  while (cursor + per_step <= stream.size()) {
    TensorT<S> grad_acc = TensorT<S>::zeros({n});
    double step_loss = 0;
    for (std::int64_t m = 0; m < spec.grad_accum; ++m) {
      GraphT<S> g;
      auto pn = ParamNodesT<S>::insert(g, params, false);
      auto a_copy = dir.a;
      a_copy.requires_grad = true;
      auto a_node = g.input(std::move(a_copy));
      std::vector<NodeId> losses;
      for (std::int64_t b = 0; b < spec.batch; ++b) {
        const auto& mp = pairs[stream[cursor]];
        auto pc = detail::patch_case(mp, cursor, spec);
        ++cursor;
        auto src = forward_with_hooks(g, pn, *pc.source, {site});
        auto pre = forward_with_hooks(g, pn, *pc.base, {site});
        auto patched = g.das_patch(pre.captured.at(site), src.captured.at(site), a_node);
        auto post = forward_with_hooks(g, pn, *pc.base, {}, {{site, patched}});
        const auto last = static_cast<std::int64_t>(pc.base->size()) - 1;
        losses.push_back(g.cross_entropy(g.select_row(post.logits, last), pc.target));
      }
      auto loss = g.mean_scalars(losses);
      g.backward(loss);
      step_loss += static_cast<double>(g.value(loss).data[0]) / spec.grad_accum;
      const auto& ga = g.grad(a_node);
      for (std::size_t i = 0; i < grad_acc.data.size(); ++i)
        grad_acc.data[i] += ga.data[i] / static_cast<S>(spec.grad_accum);
    }
    std::vector<const TensorT<S>*> grads{&grad_acc};
    adam_step<S>(ptensors, grads, st);
    renorm();
    dir.final_loss = step_loss;
  }
  dir.validate();
  return dir;
}

/// Log-odds shift from explicit pre/post label probabilities:
///   ln[p_post(src)/p_pre(src)] - ln[p_post(base)/p_pre(base)]
inline double odds_from_logprobs(double lp_pre_src, double lp_pre_base, double lp_post_src,
                                 double lp_post_base) {
  return (lp_post_src - lp_pre_src) - (lp_post_base - lp_pre_base);
}

/// ODDS of the interchange intervention for one pair: the base run is the
/// th-variant, the source the wh-variant, so l_src = l_wh and l_base = l_th.
template <class S>
double odds_metric(ModelParamsT<S>& params, const MinimalPair& pair, const DirectionT<S>& dir) {
  dir.validate();
  const auto pos = aligned_pos(dir, pair);
  HookSite site = dir.site;
  site.pos = pos;
  site.validate(params.config, static_cast<std::int64_t>(pair.th.size()));
  if (dir.a.numel() != site.dim(params.config))
    throw PatchError("odds_metric: direction dimensionality mismatch");

  GraphT<S> g;
  auto pn = ParamNodesT<S>::insert(g, params, false);
  auto a_copy = dir.a;
  a_copy.requires_grad = false;
  auto a_node = g.input(std::move(a_copy));
  auto src = forward_with_hooks(g, pn, pair.wh, {site});
  auto pre = forward_with_hooks(g, pn, pair.th, {site});
  auto patched = g.das_patch(pre.captured.at(site), src.captured.at(site), a_node);
  auto post = forward_with_hooks(g, pn, pair.th, {}, {{site, patched}});

  const auto last = static_cast<std::int64_t>(pair.th.size()) - 1;
  auto row = [&](NodeId logits_node) {
    const auto& lg = g.value(logits_node);
    auto out = TensorT<S>::zeros({lg.cols()});
    for (std::int64_t j = 0; j < lg.cols(); ++j)
      out.data[static_cast<std::size_t>(j)] = lg.at(last, j);
    return out;
  };
  auto pre_row = row(pre.logits);
  auto post_row = row(post.logits);
  const double lp_pre_src = -cross_entropy_val(pre_row, pair.l_wh);
  const double lp_pre_base = -cross_entropy_val(pre_row, pair.l_th);
  const double lp_post_src = -cross_entropy_val(post_row, pair.l_wh);
  const double lp_post_base = -cross_entropy_val(post_row, pair.l_th);
  return odds_from_logprobs(lp_pre_src, lp_pre_base, lp_post_src, lp_post_base);
}

struct OddsResult {
  HookSite site;
  std::uint64_t seed = 0;
  double odds = 0;
  double control_odds = 0;
  double delta = 0;  // odds - control_odds
};

struct OddsCell {
  HookSite site;
  double mean_odds = 0;
  double mean_control = 0;
  double mean_delta = 0;
  std::vector<OddsResult> per_seed;
};

/// Mean ODDS/control-ODDS/ΔODDS per site, averaged over eval pairs per seed
/// and then over seeds. Every critical direction needs a control direction
/// trained at the same site and seed.
template <class S>
std::vector<OddsCell> delta_odds_eval(ModelParamsT<S>& params,
                                      const std::vector<DirectionT<S>>& critical,
                                      const std::vector<DirectionT<S>>& controls,
                                      const std::vector<MinimalPair>& eval_pairs) {
  if (critical.empty()) throw InputError("delta_odds_eval: no directions");
  if (eval_pairs.empty()) throw InputError("delta_odds_eval: no eval pairs");
  auto mean_odds_for = [&](const DirectionT<S>& d) {
    double acc = 0;
    for (const auto& mp : eval_pairs) acc += odds_metric(params, mp, d);
    return acc / static_cast<double>(eval_pairs.size());
  };

  std::map<HookSite, OddsCell> cells;
  for (const auto& crit : critical) {
    const DirectionT<S>* ctrl = nullptr;
    for (const auto& c : controls)
      if (c.site == crit.site && c.seed == crit.seed) ctrl = &c;
    if (!ctrl) throw PairingError("delta_odds_eval: missing control direction for a seed/site");
    OddsResult r;
    r.site = crit.site;
    r.seed = crit.seed;
    r.odds = mean_odds_for(crit);
    r.control_odds = mean_odds_for(*ctrl);
    r.delta = r.odds - r.control_odds;
    auto& cell = cells[crit.site];
    cell.site = crit.site;
    cell.per_seed.push_back(r);
  }
  std::vector<OddsCell> out;
  for (auto& [site, cell] : cells) {
    for (const auto& r : cell.per_seed) {
      cell.mean_odds += r.odds;
      cell.mean_control += r.control_odds;
      cell.mean_delta += r.delta;
    }
    const auto k = static_cast<double>(cell.per_seed.size());
    cell.mean_odds /= k;
    cell.mean_control /= k;
    cell.mean_delta /= k;
    out.push_back(std::move(cell));
  }
  return out;
}

/// a·h at the direction's site for one token sequence.
template <class S>
double project_at(ModelParamsT<S>& params, const std::vector<std::int64_t>& tokens,
                  const HookSite& site, const TensorT<S>& a) {
  site.validate(params.config, static_cast<std::int64_t>(tokens.size()));
  if (a.numel() != site.dim(params.config))
    throw PatchError("project_at: direction dimensionality mismatch");
  GraphT<S> g;
  auto pn = ParamNodesT<S>::insert(g, params, false);
  auto res = forward_with_hooks(g, pn, tokens, {site});
  const auto& h = g.value(res.captured.at(site));
  double acc = 0;
  for (std::size_t i = 0; i < h.data.size(); ++i)
    acc += static_cast<double>(h.data[i]) * static_cast<double>(a.data[i]);
  return acc;
}

/// Per-conjunct mean subspace position (projection of the wh-variant's
/// activation onto a), correlated with the target values; |r| because the
/// direction's sign is arbitrary.
template <class S>
double subspace_correlation(ModelParamsT<S>& params, const DirectionT<S>& dir,
                            const std::vector<std::vector<MinimalPair>>& evalsets,
                            const std::vector<double>& targets) {
  if (evalsets.size() != targets.size()) throw DimError("subspace_correlation: length mismatch");
  if (evalsets.size() < 3) throw InputError("subspace_correlation: need >= 3 conjuncts");
  std::vector<double> positions;
  for (const auto& set : evalsets) {
    if (set.empty()) throw InputError("subspace_correlation: empty eval set");
    double acc = 0;
    for (const auto& mp : set) {
      HookSite site = dir.site;
      site.pos = aligned_pos(dir, mp);
      acc += project_at(params, mp.wh, site, dir.a);
    }
    positions.push_back(acc / static_cast<double>(set.size()));
  }
  return std::abs(pearson_r(positions, targets));
}

/// Mean subspace position of the wh-variants of one eval set.
template <class S>
double mean_projection(ModelParamsT<S>& params, const DirectionT<S>& dir,
                       const std::vector<MinimalPair>& set) {
  if (set.empty()) throw InputError("mean_projection: empty eval set");
  double acc = 0;
  for (const auto& mp : set) {
    HookSite site = dir.site;
    site.pos = aligned_pos(dir, mp);
    acc += project_at(params, mp.wh, site, dir.a);
  }
  return acc / static_cast<double>(set.size());
}

// ---------------------------------------------------------------------------
// direction archive
// ---------------------------------------------------------------------------

template <class S>
void save_direction(const std::string& path, const DirectionT<S>& dir) {
  dir.validate();
  nlohmann::json extra = {{"site",
                           {{"kind", site_kind_name(dir.site.kind)},
                            {"layer", dir.site.layer},
                            {"head", dir.site.head},
                            {"pos", dir.site.pos}}},
                          {"role", role_name(dir.role)},
                          {"seed", dir.seed},
                          {"fingerprint", dir.fingerprint},
                          {"final_loss", dir.final_loss}};
  std::vector<std::pair<std::string, const TensorT<S>*>> tensors{{"a", &dir.a}};
  save_tensors<S>(path, tensors, extra);
}

template <class S>
DirectionT<S> load_direction(const std::string& path) {
  auto [tensors, extra] = load_tensors<S>(path);
  auto it = tensors.find("a");
  if (it == tensors.end()) throw FormatError("direction archive: missing tensor a");
  DirectionT<S> dir;
  dir.a = std::move(it->second);
  try {
    const auto& s = extra.at("site");
    dir.site.kind = site_kind_from_name(s.at("kind").template get<std::string>());
    dir.site.layer = s.at("layer").template get<std::int64_t>();
    dir.site.head = s.at("head").template get<std::int64_t>();
    dir.site.pos = s.at("pos").template get<std::int64_t>();
    dir.role = role_from_name(extra.at("role").template get<std::string>());
    dir.seed = extra.at("seed").template get<std::uint64_t>();
    dir.fingerprint = extra.at("fingerprint").template get<std::string>();
    dir.final_loss = extra.at("final_loss").template get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("direction archive: bad header: ") + e.what());
  }
  dir.validate();
  return dir;
}

}  // namespace ilab
