#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ilab/das.hpp"
#include "ilab/errors.hpp"
#include "ilab/model.hpp"
#include "ilab/rng.hpp"
#include "ilab/stimgen.hpp"

namespace ilab {

/// A corpus segment with its per-seed subspace projections and the final
/// sign-corrected, z-scored, seed-averaged score.
struct ChunkRecord {
  std::int64_t id = 0;  // segment index within the source stream
  std::vector<std::int64_t> tokens;
  std::string surface;
  std::int64_t focal_pos = 0;
  std::vector<double> raw;  // one projection per seed
  double score = 0;

  nlohmann::json to_json() const {
    return {{"id", id},          {"tokens", tokens}, {"surface", surface},
            {"focal_pos", focal_pos}, {"raw", raw},  {"score", score}};
  }

  static ChunkRecord from_json(const nlohmann::json& j) {
    ChunkRecord c;
    c.id = j.at("id").get<std::int64_t>();
    c.tokens = j.at("tokens").get<std::vector<std::int64_t>>();
    c.surface = j.at("surface").get<std::string>();
    c.focal_pos = j.at("focal_pos").get<std::int64_t>();
    c.raw = j.at("raw").get<std::vector<double>>();
    c.score = j.at("score").get<double>();
    return c;
  }
};

inline nlohmann::json chunks_to_json(const std::vector<ChunkRecord>& chunks) {
  auto arr = nlohmann::json::array();
  for (const auto& c : chunks) arr.push_back(c.to_json());
  return arr;
}

inline std::vector<ChunkRecord> chunks_from_json(const nlohmann::json& arr) {
  std::vector<ChunkRecord> out;
  for (const auto& j : arr) out.push_back(ChunkRecord::from_json(j));
  return out;
}

/// Partition a token stream into consecutive non-overlapping chunk_len
/// segments (trailing remainder dropped) and sample n without replacement.
/// When fewer than n segments exist, all are returned and *warned is set.
inline std::vector<ChunkRecord> chunk_corpus(const std::vector<std::int64_t>& stream,
                                             std::int64_t chunk_len, std::size_t n,
                                             std::uint64_t seed, const Vocab* vocab = nullptr,
                                             bool* warned = nullptr) {
  if (stream.empty()) throw InputError("chunk_corpus: empty stream");
  if (chunk_len < 1) throw InputError("chunk_corpus: chunk_len must be >= 1");
  if (static_cast<std::int64_t>(stream.size()) < chunk_len)
    throw InputError("chunk_corpus: stream shorter than one chunk");
  const std::size_t segments = stream.size() / static_cast<std::size_t>(chunk_len);
  std::vector<std::size_t> ids(segments);
  for (std::size_t i = 0; i < segments; ++i) ids[i] = i;
  if (n < segments) {
    Rng rng(seed);
    rng.shuffle(ids);
    ids.resize(n);
    std::sort(ids.begin(), ids.end());
  } else if (n > segments) {
    if (warned) *warned = true;
    std::cerr << "chunk_corpus: only " << segments << " segments available, requested " << n
              << "\n";
  }
  std::vector<ChunkRecord> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    ChunkRecord c;
    c.id = static_cast<std::int64_t>(id);
    const std::size_t start = id * static_cast<std::size_t>(chunk_len);
    c.tokens.assign(stream.begin() + static_cast<std::ptrdiff_t>(start),
                    stream.begin() + static_cast<std::ptrdiff_t>(start) +
                        static_cast<std::ptrdiff_t>(chunk_len));
    if (vocab) {
      for (std::int64_t i = 0; i < chunk_len; ++i) {
        if (i) c.surface += ' ';
        c.surface += vocab->word(c.tokens[static_cast<std::size_t>(i)]);
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Fill per-seed raw projections: for every chunk, a_s · h at the shared
/// site and the site's position (the chunk's focal position).
template <class S>
void project_chunks(ModelParamsT<S>& params, std::vector<ChunkRecord>& chunks,
                    const std::vector<DirectionT<S>>& directions) {
  if (directions.empty()) throw InputError("project_chunks: no directions");
  const HookSite site = directions.front().site;
  for (const auto& d : directions) {
    if (!(d.site == site)) throw ProjectionError("project_chunks: directions at multiple sites");
    if (d.a.numel() != site.dim(params.config))
      throw ProjectionError("project_chunks: direction dimensionality mismatch");
  }
  for (auto& c : chunks) {
    if (site.pos >= static_cast<std::int64_t>(c.tokens.size()))
      throw ProjectionError("project_chunks: site position beyond chunk length");
    c.focal_pos = site.pos;
    GraphT<S> g;
    auto pn = ParamNodesT<S>::insert(g, params, false);
    auto res = forward_with_hooks(g, pn, c.tokens, {site});
    const auto& h = g.value(res.captured.at(site));
    c.raw.clear();
    for (const auto& d : directions) {
      double acc = 0;
      for (std::size_t i = 0; i < h.data.size(); ++i)
        acc += static_cast<double>(h.data[i]) * static_cast<double>(d.a.data[i]);
      if (!std::isfinite(acc)) throw ProjectionError("project_chunks: non-finite projection");
      c.raw.push_back(acc);
    }
  }
}

/// Sign-correct each seed's projections by its licensing-correlation sign,
/// z-score across chunks, then average across seeds into ChunkRecord::score.
inline void normalize_scores(std::vector<ChunkRecord>& chunks,
                             const std::vector<double>& correlations) {
  if (chunks.empty()) throw InputError("normalize_scores: no chunks");
  if (correlations.empty()) throw InputError("normalize_scores: no seeds");
  const std::size_t seeds = correlations.size();
  for (const auto& c : chunks)
    if (c.raw.size() != seeds)
      throw DimError("normalize_scores: chunk projection count != seed count");
  const double n = static_cast<double>(chunks.size());

  std::vector<std::vector<double>> z(seeds, std::vector<double>(chunks.size()));
  for (std::size_t s = 0; s < seeds; ++s) {
    if (correlations[s] == 0.0)
      throw DegenerateInputError("normalize_scores: zero correlation sign");
    const double sign = correlations[s] > 0 ? 1.0 : -1.0;
    double mean = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) mean += chunks[i].raw[s] * sign;
    mean /= n;
    double var = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const double d = chunks[i].raw[s] * sign - mean;
      var += d * d;
    }
    var /= n;
    if (var == 0.0) throw DegenerateInputError("normalize_scores: zero variance in a seed");
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < chunks.size(); ++i)
      z[s][i] = (chunks[i].raw[s] * sign - mean) / sd;
  }
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    double acc = 0;
    for (std::size_t s = 0; s < seeds; ++s) acc += z[s][i];
    chunks[i].score = acc / static_cast<double>(seeds);
  }
}

enum class Polarity { High, Low };

/// True for surface forms with no alphanumeric content (punctuation-only
/// or empty focal tokens are filtered from the rankings).
inline bool non_word_token(const std::string& s) {
  for (char ch : s)
    if (std::isalnum(static_cast<unsigned char>(ch))) return false;
  return true;
}

/// Top-k chunks by normalized score after filtering on the focal token.
/// Ties break by ascending chunk id, so rankings are deterministic.
inline std::vector<ChunkRecord> top_chunks(
    const std::vector<ChunkRecord>& chunks, std::size_t k, Polarity polarity,
    const std::function<bool(const std::string&)>& filter_out = non_word_token,
    const Vocab* vocab = nullptr) {
  std::vector<const ChunkRecord*> kept;
  for (const auto& c : chunks) {
    std::string focal;
    if (vocab && c.focal_pos < static_cast<std::int64_t>(c.tokens.size()))
      focal = vocab->word(c.tokens[static_cast<std::size_t>(c.focal_pos)]);
    else if (!c.surface.empty()) {
      // focal token out of the recorded surface string
      std::istringstream ss(c.surface);
      std::string w;
      for (std::int64_t i = 0; ss >> w && i < c.focal_pos; ++i) {
      }
      focal = w;
    }
    if (filter_out && filter_out(focal)) continue;
    kept.push_back(&c);
  }
  std::sort(kept.begin(), kept.end(), [&](const ChunkRecord* a, const ChunkRecord* b) {
    if (a->score != b->score)
      return polarity == Polarity::High ? a->score > b->score : a->score < b->score;
    return a->id < b->id;
  });
  if (k < kept.size()) kept.resize(k);
  std::vector<ChunkRecord> out;
  for (const auto* c : kept) out.push_back(*c);
  return out;
}

}  // namespace ilab
