#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ilab/errors.hpp"
#include "ilab/model.hpp"
#include "ilab/stimgen.hpp"

namespace ilab {

/// The four conditional surprisals of the 2x2 licensing design, in nats.
struct SurprisalQuad {
  double s_th_wh = 0;  // S(l_th | wh)
  double s_th_th = 0;  // S(l_th | th)
  double s_wh_wh = 0;  // S(l_wh | wh)
  double s_wh_th = 0;  // S(l_wh | th)
};

template <class S>
SurprisalQuad surprisal_quad(ModelParamsT<S>& params, const MinimalPair& pair) {
  // one forward per prefix; both label surprisals come from the same
  // final-row logits, bit-identical to independent scoring calls
  auto last_row = [&](const std::vector<std::int64_t>& prefix) {
    auto lg = logits(params, prefix);
    auto row = TensorT<S>::zeros({lg.cols()});
    for (std::int64_t j = 0; j < lg.cols(); ++j)
      row.data[static_cast<std::size_t>(j)] = lg.at(lg.rows() - 1, j);
    return row;
  };
  const auto wh_row = last_row(pair.wh);
  const auto th_row = last_row(pair.th);
  SurprisalQuad q;
  q.s_th_wh = cross_entropy_val(wh_row, pair.l_th);
  q.s_th_th = cross_entropy_val(th_row, pair.l_th);
  q.s_wh_wh = cross_entropy_val(wh_row, pair.l_wh);
  q.s_wh_th = cross_entropy_val(th_row, pair.l_wh);
  return q;
}

/// (S(l_th|wh) - S(l_th|th)) - (S(l_wh|wh) - S(l_wh|th)); higher means the
/// long-distance dependency is represented more saliently.
inline double wh_licensing(const SurprisalQuad& q) {
  return (q.s_th_wh - q.s_th_th) - (q.s_wh_wh - q.s_wh_th);
}

template <class S>
double mean_licensing(ModelParamsT<S>& params, const std::vector<MinimalPair>& pairs) {
  if (pairs.empty()) throw InputError("mean_licensing: empty pair set");
  double acc = 0;
  for (const auto& p : pairs) acc += wh_licensing(surprisal_quad(params, p));
  return acc / static_cast<double>(pairs.size());
}

/// A scored stimulus: token prefix with its correct and mismatched labels.
struct LabeledStimulus {
  std::vector<std::int64_t> tokens;
  std::int64_t correct_label = 0;
  std::int64_t mismatched_label = 0;
};

/// Fraction of stimuli where the correct label is strictly preferred;
/// ties count 0.5.
template <class S>
double preference_rate(ModelParamsT<S>& params, const std::vector<LabeledStimulus>& stimuli) {
  if (stimuli.empty()) throw InputError("preference_rate: empty stimulus set");
  double score = 0;
  for (const auto& st : stimuli) {
    auto lg = logits(params, st.tokens);
    auto row = TensorT<S>::zeros({lg.cols()});
    for (std::int64_t j = 0; j < lg.cols(); ++j)
      row.data[static_cast<std::size_t>(j)] = lg.at(lg.rows() - 1, j);
    const double sc = cross_entropy_val(row, st.correct_label);
    const double sm = cross_entropy_val(row, st.mismatched_label);
    if (sc < sm)
      score += 1.0;
    else if (sc == sm)
      score += 0.5;
  }
  return score / static_cast<double>(stimuli.size());
}

inline double pearson_r(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw DimError("pearson_r: length mismatch");
  if (xs.size() < 3) throw InputError("pearson_r: need at least 3 points");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInputError("pearson_r: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// word embeddings and the extractability probe
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  std::map<std::string, std::vector<double>> vectors;
  std::size_t dim = 0;

  const std::vector<double>& at(const std::string& w) const {
    auto it = vectors.find(w);
    if (it == vectors.end()) throw IndexError("embedding table: unknown word: " + w);
    return it->second;
  }
};

/// Standard distributed-vector text format: one line per word, the word
/// followed by whitespace-separated floats.
inline EmbeddingTable load_embeddings_text(std::istream& in) {
  EmbeddingTable tbl;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    std::vector<double> vec;
    double v;
    while (ss >> v) vec.push_back(v);
    if (vec.empty()) throw ParseError("embeddings: line " + std::to_string(lineno) + ": no values");
    if (tbl.dim == 0)
      tbl.dim = vec.size();
    else if (vec.size() != tbl.dim)
      throw ParseError("embeddings: line " + std::to_string(lineno) + ": dimensionality mismatch");
    if (!tbl.vectors.emplace(word, std::move(vec)).second)
      throw ParseError("embeddings: line " + std::to_string(lineno) + ": duplicate word " + word);
  }
  return tbl;
}

inline std::vector<double> average_vectors(const std::vector<std::vector<double>>& vs) {
  if (vs.empty()) throw InputError("average_vectors: empty");
  std::vector<double> out(vs[0].size(), 0.0);
  for (const auto& v : vs) {
    if (v.size() != out.size()) throw DimError("average_vectors: dimensionality mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  }
  for (auto& x : out) x /= static_cast<double>(vs.size());
  return out;
}

namespace detail {

// L2-regularized logistic regression by full-batch gradient descent.
// Regularization weight 1.0 on the weights (not the intercept);
// optimized until the gradient max-norm drops below 1e-8.
inline std::vector<double> fit_logistic(const std::vector<std::vector<double>>& x,
                                        const std::vector<int>& y, double reg = 1.0) {
  const std::size_t n = x.size(), d = x[0].size();
  std::vector<double> w(d + 1, 0.0);  // last entry is the intercept
  double max_sq = 0;
  for (const auto& row : x) {
    double s = 1.0;  // + intercept column
    for (double v : row) s += v * v;
    max_sq = std::max(max_sq, s);
  }
  const double lr = 1.0 / (reg + 0.25 * max_sq);
  std::vector<double> grad(d + 1);
  for (int iter = 0; iter < 200000; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = w[d];
      for (std::size_t j = 0; j < d; ++j) z += w[j] * x[i][j];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - static_cast<double>(y[i]);
      for (std::size_t j = 0; j < d; ++j) grad[j] += err * x[i][j];
      grad[d] += err;
    }
    for (std::size_t j = 0; j < d; ++j) grad[j] = grad[j] / static_cast<double>(n) + reg * w[j];
    grad[d] /= static_cast<double>(n);
    double gmax = 0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    if (gmax < 1e-8) break;
    for (std::size_t j = 0; j <= d; ++j) w[j] -= lr * grad[j];
  }
  return w;
}

}  // namespace detail

/// Leave-one-out accuracy of an L2-regularized logistic probe.
inline double logistic_loo(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& labels, double reg = 1.0) {
  if (features.size() != labels.size()) throw DimError("logistic_loo: length mismatch");
  if (features.size() < 4) throw InputError("logistic_loo: need at least 4 examples");
  bool has0 = false, has1 = false;
  for (int y : labels) {
    if (y == 0) has0 = true;
    else if (y == 1) has1 = true;
    else throw InputError("logistic_loo: labels must be 0/1");
  }
  if (!has0 || !has1) throw InputError("logistic_loo: both classes must be present");

  const std::size_t n = features.size(), d = features[0].size();
  double correct = 0;
  for (std::size_t hold = 0; hold < n; ++hold) {
    std::vector<std::vector<double>> xr;
    std::vector<int> yr;
    for (std::size_t i = 0; i < n; ++i)
      if (i != hold) {
        xr.push_back(features[i]);
        yr.push_back(labels[i]);
      }
    auto w = detail::fit_logistic(xr, yr, reg);
    double z = w[d];
    for (std::size_t j = 0; j < d; ++j) z += w[j] * features[hold][j];
    const int pred = z >= 0.0 ? 1 : 0;
    if (pred == labels[hold]) correct += 1.0;
  }
  return correct / static_cast<double>(n);
}

}  // namespace ilab
