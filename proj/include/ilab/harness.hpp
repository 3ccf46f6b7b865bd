#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ilab/behavior.hpp"
#include "ilab/checkpoint.hpp"
#include "ilab/das.hpp"
#include "ilab/errors.hpp"
#include "ilab/model.hpp"
#include "ilab/stimgen.hpp"
#include "ilab/subspace.hpp"

namespace ilab {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// experiment specification
// ---------------------------------------------------------------------------

struct ExperimentSpec {
  std::string experiment;  // exp1 | exp2 | exp3 | exp4
  std::string checkpoint;
  std::string out_dir;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::int64_t train_pairs = 400;
  std::int64_t eval_pairs = 100;
  std::int64_t split_train = 6;
  std::int64_t split_holdout = 2;
  std::vector<HookSite> sites;  // empty: experiment-specific default sweep
  DasTrainSpec das;
  // exp4
  std::string corpus_file;  // empty: synthetic two-context stream
  std::size_t n_chunks = 2000;
  std::size_t top_k = 75;
  std::uint64_t stim_seed = 1009;

  void validate() const {
    if (experiment != "exp1" && experiment != "exp2" && experiment != "exp3" &&
        experiment != "exp4")
      throw ConfigError("config: experiment must be exp1..exp4, got: " + experiment);
    if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    if (train_pairs < 1 || eval_pairs < 1)
      throw ConfigError("config: pair counts must be positive");
    if (split_train < 1 || split_holdout < 1)
      throw ConfigError("config: split sizes must be positive");
    das.validate();
  }

  nlohmann::json to_json() const {
    nlohmann::json sj = nlohmann::json::array();
    for (const auto& s : sites)
      sj.push_back({{"kind", site_kind_name(s.kind)},
                    {"layer", s.layer},
                    {"head", s.head},
                    {"pos", s.pos}});
    return {{"experiment", experiment},
            {"checkpoint", checkpoint},
            {"out_dir", out_dir},
            {"seeds", seeds},
            {"train_pairs", train_pairs},
            {"eval_pairs", eval_pairs},
            {"split_train", split_train},
            {"split_holdout", split_holdout},
            {"sites", sj},
            {"das",
             {{"lr", das.lr},
              {"warmup", das.warmup},
              {"batch", das.batch},
              {"grad_accum", das.grad_accum},
              {"epochs", das.epochs}}},
            {"corpus_file", corpus_file},
            {"n_chunks", n_chunks},
            {"top_k", top_k},
            {"stim_seed", stim_seed}};
  }

  static ExperimentSpec from_json(const nlohmann::json& j) {
    ExperimentSpec s;
    auto need = [&](const char* field) -> const nlohmann::json& {
      if (!j.contains(field)) throw ConfigError(std::string("config: missing field: ") + field);
      return j.at(field);
    };
    s.experiment = need("experiment").get<std::string>();
    s.checkpoint = need("checkpoint").get<std::string>();
    s.out_dir = j.value("out_dir", std::string());
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.train_pairs = j.value("train_pairs", s.train_pairs);
    s.eval_pairs = j.value("eval_pairs", s.eval_pairs);
    s.split_train = j.value("split_train", s.split_train);
    s.split_holdout = j.value("split_holdout", s.split_holdout);
    if (j.contains("sites")) {
      for (const auto& e : j.at("sites")) {
        HookSite site;
        site.kind = site_kind_from_name(e.at("kind").get<std::string>());
        site.layer = e.at("layer").get<std::int64_t>();
        site.head = e.value("head", std::int64_t{-1});
        site.pos = e.at("pos").get<std::int64_t>();
        s.sites.push_back(site);
      }
    }
    if (j.contains("das")) {
      const auto& d = j.at("das");
      s.das.lr = d.value("lr", s.das.lr);
      s.das.warmup = d.value("warmup", s.das.warmup);
      s.das.batch = d.value("batch", s.das.batch);
      s.das.grad_accum = d.value("grad_accum", s.das.grad_accum);
      s.das.epochs = d.value("epochs", s.das.epochs);
    }
    s.corpus_file = j.value("corpus_file", std::string());
    s.n_chunks = j.value("n_chunks", s.n_chunks);
    s.top_k = j.value("top_k", s.top_k);
    s.stim_seed = j.value("stim_seed", s.stim_seed);
    s.validate();
    return s;
  }

  /// Content hash: the output location does not affect the results, so it
  /// is excluded — identical experiments rerun elsewhere hash identically.
  std::string hash() const {
    auto j = to_json();
    j.erase("out_dir");
    return hex64(fnv1a64(j.dump()));
  }
};

struct RunRecord {
  std::string run_id;
  nlohmann::json spec;
  std::vector<std::string> files;  // relative to the run directory
  double seconds = 0;
  nlohmann::json summary;

  nlohmann::json to_json() const {
    return {{"run_id", run_id},
            {"spec", spec},
            {"files", files},
            {"seconds", seconds},
            {"summary", summary}};
  }
};

// ---------------------------------------------------------------------------
// result writing
// ---------------------------------------------------------------------------

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  out << content;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

struct CsvBuilder {
  std::ostringstream out;
  CsvBuilder(const std::string& spec_hash, const std::string& header) {
    out << "# spec_hash=" << spec_hash << "\n" << header << "\n";
  }
  template <class... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out << (first ? "" : ","), first = false, put(cells)), ...);
    out << "\n";
  }
  void put(double v) { out << fmt(v); }
  void put(const std::string& s) { out << s; }
  void put(const char* s) { out << s; }
  void put(std::int64_t v) { out << v; }
  void put(std::uint64_t v) { out << v; }
  std::string str() const { return out.str(); }
};

/// Mann–Whitney AUC of scores separating positives from negatives.
inline double rank_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) throw InputError("auc: both groups must be non-empty");
  double wins = 0;
  for (double p : pos)
    for (double q : neg) {
      if (p > q)
        wins += 1.0;
      else if (p == q)
        wins += 0.5;
    }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// experiment internals
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
ModelParamsT<S> load_model_for(const ExperimentSpec& spec) {
  if (!std::filesystem::exists(spec.checkpoint))
    throw ConfigError("config: checkpoint does not exist: " + spec.checkpoint);
  nlohmann::json extra;
  auto params = load_checkpoint<S>(spec.checkpoint, &extra);
  if (extra.contains("vocab")) {
    auto words = extra.at("vocab").get<std::vector<std::string>>();
    auto vb = build_vocab(Lexicon::builtin());
    if (words != vb.words)
      throw ConfigError("checkpoint vocabulary does not match the builtin grammar");
  }
  return params;
}

inline std::uint64_t conjunct_seed(std::uint64_t base, const std::string& id) {
  return base ^ fnv1a64(id);
}

/// Per-conjunct eval pairs, deterministic in (stim_seed, conjunct id).
inline std::vector<MinimalPair> conjunct_eval_pairs(const ConjunctSpec& c, const Lexicon& lx,
                                                    const Vocab& vb, std::int64_t n,
                                                    std::uint64_t stim_seed) {
  const auto cap = lx.prefixes.size() * lx.subjects.size();
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(n), cap);
  return sample_minimal_pairs(c, lx, vb, take, conjunct_seed(stim_seed, c.id));
}

/// The default position sweep: block_output at every layer and every
/// template position.
inline std::vector<HookSite> default_sweep(const ModelConfig& cfg, std::int64_t template_len) {
  std::vector<HookSite> sites;
  for (std::int64_t l = 0; l < cfg.n_layers; ++l)
    for (std::int64_t p = 0; p < template_len; ++p)
      sites.push_back(HookSite{SiteKind::BlockOutput, l, -1, p});
  return sites;
}

template <class S>
struct TrainedCell {
  HookSite site;
  std::vector<DirectionT<S>> critical;  // one per seed
  std::vector<DirectionT<S>> control;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

template <class S = double>
RunRecord run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.out_dir.empty()) throw ConfigError("config: missing field: out_dir");
  const auto t0 = std::chrono::steady_clock::now();
  const std::string spec_hash = spec.hash();
  const std::filesystem::path dir(spec.out_dir);
  std::filesystem::create_directories(dir);

  RunRecord rec;
  rec.run_id = spec_hash;
  rec.spec = spec.to_json();

  Lexicon lx = Lexicon::builtin();
  Vocab vb = build_vocab(lx);
  auto conjuncts = builtin_conjuncts();
  auto params = detail::load_model_for<S>(spec);
  const ModelConfig& cfg = params.config;

  auto emit = [&](const std::string& name, const std::string& content) {
    detail::write_text(dir / name, content);
    rec.files.push_back(name);
  };

  if (spec.experiment == "exp1") {
    // behavioral gradient: per-conjunct licensing and preference rate
    detail::CsvBuilder csv(spec_hash, "conjunct_id,p_gap,rating,mean_licensing,preference_rate");
    std::vector<double> gaps, licensing;
    std::vector<double> unacc_lic, strong_lic;
    for (const auto& c : conjuncts) {
      auto pairs = detail::conjunct_eval_pairs(c, lx, vb, spec.eval_pairs, spec.stim_seed);
      const double ml = mean_licensing(params, pairs);
      std::vector<LabeledStimulus> stimuli;
      for (const auto& mp : pairs) {
        LabeledStimulus st;
        st.tokens = mp.wh;
        st.correct_label = c.p_gap >= 0.5 ? mp.l_wh : mp.l_th;
        st.mismatched_label = c.p_gap >= 0.5 ? mp.l_th : mp.l_wh;
        stimuli.push_back(std::move(st));
      }
      const double pref = preference_rate(params, stimuli);
      csv.row(c.id, c.p_gap, c.rating ? detail::fmt(*c.rating) : std::string(), ml, pref);
      gaps.push_back(c.p_gap);
      licensing.push_back(ml);
      if (c.p_gap == 0.0) unacc_lic.push_back(ml);
      if (c.p_gap >= 0.75) strong_lic.push_back(ml);
    }
    emit("behavioral.csv", csv.str());
    const double r = pearson_r(gaps, licensing);
    bool separated = !unacc_lic.empty() && !strong_lic.empty();
    for (double u : unacc_lic)
      for (double s : strong_lic) separated = separated && u < s;
    rec.summary = {{"pearson_r", r},
                   {"n_conjuncts", conjuncts.size()},
                   {"unacceptable_below_strong", separated}};
  } else if (spec.experiment == "exp2") {
    // directions from classic embedded-wh pairs, evaluated on held-out
    // classic pairs and transferred to the conjunct gradient
    const auto total = static_cast<std::size_t>(spec.train_pairs + spec.eval_pairs);
    auto all_classic = sample_classic_pairs(lx, vb, total, spec.stim_seed);
    std::vector<MinimalPair> train(all_classic.begin(),
                                   all_classic.begin() + spec.train_pairs);
    std::vector<MinimalPair> holdout(all_classic.begin() + spec.train_pairs, all_classic.end());

    auto sites = spec.sites;
    if (sites.empty())
      sites = detail::default_sweep(cfg, static_cast<std::int64_t>(train.front().wh.size()));

    detail::CsvBuilder grid(spec_hash, "site,layer,position,seed,odds,control_odds,delta");
    std::vector<detail::TrainedCell<S>> cells;
    for (const auto& site : sites) {
      detail::TrainedCell<S> cell;
      cell.site = site;
      for (auto seed : spec.seeds) {
        auto crit_spec = spec.das;
        cell.critical.push_back(train_direction(params, train, site, crit_spec, seed));
        auto ctrl_spec = spec.das;
        ctrl_spec.control = true;
        cell.control.push_back(train_direction(params, train, site, ctrl_spec, seed));
      }
      cells.push_back(std::move(cell));
    }

    double best_delta = -1e300;
    const detail::TrainedCell<S>* best = nullptr;
    for (const auto& cell : cells) {
      auto res = delta_odds_eval(params, cell.critical, cell.control, holdout);
      const auto& c = res.front();
      for (const auto& per : c.per_seed)
        grid.row(site_kind_name(cell.site.kind), cell.site.layer, cell.site.pos,
                 per.seed, per.odds, per.control_odds, per.delta);
      if (c.mean_delta > best_delta) {
        best_delta = c.mean_delta;
        best = &cell;
      }
    }
    emit("grid.csv", grid.str());

    // conjunct transfer at the best cell, role-aligned
    detail::CsvBuilder cj(spec_hash, "conjunct_id,p_gap,mean_licensing,delta_odds");
    std::vector<double> lic, deltas;
    for (const auto& c : conjuncts) {
      auto pairs = detail::conjunct_eval_pairs(c, lx, vb, spec.eval_pairs, spec.stim_seed);
      const double ml = mean_licensing(params, pairs);
      auto res = delta_odds_eval(params, best->critical, best->control, pairs);
      const double d = res.front().mean_delta;
      cj.row(c.id, c.p_gap, ml, d);
      lic.push_back(ml);
      deltas.push_back(d);
    }
    emit("conjuncts.csv", cj.str());
    rec.summary = {{"best_site",
                    {{"kind", site_kind_name(best->site.kind)},
                     {"layer", best->site.layer},
                     {"pos", best->site.pos}}},
                   {"best_mean_delta", best_delta},
                   {"conjunct_licensing_r", pearson_r(deltas, lic)}};
  } else if (spec.experiment == "exp3") {
    // fixed-role DAS with per-seed 6/2 class splits; subspace positions on
    // held-out and graded conjuncts
    std::vector<ConjunctSpec> acc, unacc, graded;
    for (const auto& c : conjuncts) {
      if (c.cls == ConjunctClass::Acceptable) acc.push_back(c);
      if (c.cls == ConjunctClass::Unacceptable) unacc.push_back(c);
      if (c.cls == ConjunctClass::Graded) graded.push_back(c);
    }
    const auto class_size = static_cast<std::int64_t>(acc.size());
    if (spec.split_train + spec.split_holdout != class_size)
      throw ConfigError("config: split sizes must sum to the class size (" +
                        std::to_string(class_size) + ")");

    auto sites = spec.sites;
    if (sites.empty()) sites = detail::default_sweep(cfg, 8);

    detail::CsvBuilder grid(spec_hash, "site,layer,position,seed,odds,control_odds,delta");
    detail::CsvBuilder pos_csv(spec_hash,
                               "site,layer,position,seed,conjunct_id,p_gap,projection");
    std::map<std::string, std::vector<double>> abs_r_by_site;  // site label -> per-seed |r|
    std::string best_label;
    double best_abs_r = -1;
    nlohmann::json best_site_json;

    std::filesystem::create_directories(dir / "directions");
    for (const auto& site : sites) {
      const std::string label = site_kind_name(site.kind) + "/L" + std::to_string(site.layer) +
                                "/P" + std::to_string(site.pos);
      std::vector<DirectionT<S>> crit_all, ctrl_all;
      std::vector<double> abs_rs;
      for (auto seed : spec.seeds) {
        // per-seed class split
        auto acc_s = acc;
        auto unacc_s = unacc;
        Rng split_rng(seed ^ fnv1a64("split"));
        split_rng.shuffle(acc_s);
        split_rng.shuffle(unacc_s);
        std::vector<ConjunctSpec> train_c(acc_s.begin(), acc_s.begin() + spec.split_train);
        train_c.insert(train_c.end(), unacc_s.begin(), unacc_s.begin() + spec.split_train);
        std::vector<ConjunctSpec> hold_c(acc_s.begin() + spec.split_train, acc_s.end());
        hold_c.insert(hold_c.end(), unacc_s.begin() + spec.split_train, unacc_s.end());

        const auto per_conj = std::max<std::int64_t>(
            1, spec.train_pairs / static_cast<std::int64_t>(train_c.size()));
        std::vector<MinimalPair> train_pairs;
        for (const auto& c : train_c) {
          auto ps = detail::conjunct_eval_pairs(c, lx, vb, per_conj, spec.stim_seed ^ seed);
          train_pairs.insert(train_pairs.end(), ps.begin(), ps.end());
        }
        auto fixed = spec.das;
        fixed.fixed_roles = true;
        auto crit = train_direction(params, train_pairs, site, fixed, seed);
        auto ctrl_spec = fixed;
        ctrl_spec.control = true;
        auto ctrl = train_direction(params, train_pairs, site, ctrl_spec, seed);
        save_direction(
            (dir / "directions" /
             (site_kind_name(site.kind) + "_l" + std::to_string(site.layer) + "_p" +
              std::to_string(site.pos) + "_s" + std::to_string(seed) + ".ilab"))
                .string(),
            crit);

        // holdout ΔODDS
        std::vector<MinimalPair> hold_pairs;
        for (const auto& c : hold_c) {
          auto ps = detail::conjunct_eval_pairs(
              c, lx, vb, std::max<std::int64_t>(1, spec.eval_pairs / 4), spec.stim_seed ^ seed);
          hold_pairs.insert(hold_pairs.end(), ps.begin(), ps.end());
        }
        auto res = delta_odds_eval<S>(params, {crit}, {ctrl}, hold_pairs);
        const auto& per = res.front().per_seed.front();
        grid.row(site_kind_name(site.kind), site.layer, site.pos, per.seed, per.odds,
                 per.control_odds, per.delta);

        // subspace positions on held-out plus graded conjuncts
        std::vector<double> gaps, projections;
        std::vector<ConjunctSpec> eval_c = hold_c;
        eval_c.insert(eval_c.end(), graded.begin(), graded.end());
        for (const auto& c : eval_c) {
          auto ps = detail::conjunct_eval_pairs(
              c, lx, vb, std::max<std::int64_t>(1, spec.eval_pairs / 4), spec.stim_seed ^ seed);
          const double proj = mean_projection(params, crit, ps);
          pos_csv.row(site_kind_name(site.kind), site.layer, site.pos, seed, c.id, c.p_gap,
                      proj);
          gaps.push_back(c.p_gap);
          projections.push_back(proj);
        }
        abs_rs.push_back(std::abs(pearson_r(projections, gaps)));
        crit_all.push_back(std::move(crit));
        ctrl_all.push_back(std::move(ctrl));
      }
      double mean_abs_r = 0;
      for (double r : abs_rs) mean_abs_r += r;
      mean_abs_r /= static_cast<double>(abs_rs.size());
      abs_r_by_site[label] = abs_rs;
      if (mean_abs_r > best_abs_r) {
        best_abs_r = mean_abs_r;
        best_label = label;
        best_site_json = {{"kind", site_kind_name(site.kind)},
                          {"layer", site.layer},
                          {"pos", site.pos}};
      }
    }
    emit("grid.csv", grid.str());
    emit("positions.csv", pos_csv.str());
    nlohmann::json rj = nlohmann::json::object();
    for (const auto& [label, rs] : abs_r_by_site) rj[label] = rs;
    rec.summary = {{"best_site", best_site_json},
                   {"best_mean_abs_r", best_abs_r},
                   {"abs_r_by_site", rj}};
  } else {  // exp4
    // chunk pipeline: stream -> chunks -> projections -> normalized scores
    std::vector<std::int64_t> stream;
    std::vector<int> segment_is_extractable;  // ground truth for the synthetic stream
    if (!spec.corpus_file.empty()) {
      std::istringstream in(detail::read_text(spec.corpus_file));
      std::string w;
      while (in >> w)
        if (vb.index.count(w)) stream.push_back(vb.id(w));
    } else {
      // synthetic stream of 8-token wh-question prefixes alternating between
      // strongly extractable and unextractable conjuncts
      std::vector<ConjunctSpec> ext, unext;
      for (const auto& c : conjuncts) {
        if (c.p_gap >= 0.9) ext.push_back(c);
        if (c.p_gap == 0.0) unext.push_back(c);
      }
      Rng rng(spec.stim_seed ^ fnv1a64("stream"));
      for (std::size_t i = 0; i < spec.n_chunks; ++i) {
        const bool use_ext = i % 2 == 0;
        const auto& pool = use_ext ? ext : unext;
        const auto& c = pool[static_cast<std::size_t>(rng.below(pool.size()))];
        const auto& prefix = lx.prefixes[static_cast<std::size_t>(rng.below(lx.prefixes.size()))];
        const auto& subj = lx.subjects[static_cast<std::size_t>(rng.below(lx.subjects.size()))];
        auto mp = make_conjunct_pair(c, lx, vb, prefix, subj);
        stream.insert(stream.end(), mp.wh.begin(), mp.wh.end());
        segment_is_extractable.push_back(use_ext ? 1 : 0);
      }
    }

    // directions: one per seed at a fixed site (configurable via sites[0])
    HookSite site = spec.sites.empty()
                        ? HookSite{SiteKind::BlockOutput, cfg.n_layers - 1, -1, 7}
                        : spec.sites.front();
    std::vector<ConjunctSpec> trainable;
    for (const auto& c : conjuncts)
      if (c.cls != ConjunctClass::Graded) trainable.push_back(c);
    std::vector<DirectionT<S>> dirs;
    std::vector<double> corr_signs;
    for (auto seed : spec.seeds) {
      const auto per_conj = std::max<std::int64_t>(
          1, spec.train_pairs / static_cast<std::int64_t>(trainable.size()));
      std::vector<MinimalPair> train_pairs;
      for (const auto& c : trainable) {
        auto ps = detail::conjunct_eval_pairs(c, lx, vb, per_conj, spec.stim_seed ^ seed);
        train_pairs.insert(train_pairs.end(), ps.begin(), ps.end());
      }
      auto fixed = spec.das;
      fixed.fixed_roles = true;
      auto d = train_direction(params, train_pairs, site, fixed, seed);

      // signed correlation of per-conjunct positions with the designed
      // gradient fixes each seed's sign
      std::vector<double> gaps, projections;
      for (const auto& c : conjuncts) {
        auto ps = detail::conjunct_eval_pairs(c, lx, vb, 8, spec.stim_seed ^ seed);
        projections.push_back(mean_projection(params, d, ps));
        gaps.push_back(c.p_gap);
      }
      corr_signs.push_back(pearson_r(projections, gaps));
      dirs.push_back(std::move(d));
    }

    bool warned = false;
    auto chunks = chunk_corpus(stream, 8, spec.n_chunks, spec.stim_seed, &vb, &warned);
    project_chunks(params, chunks, dirs);
    normalize_scores(chunks, corr_signs);
    emit("chunks.json", chunks_to_json(chunks).dump(2) + "\n");

    auto dump_top = [&](Polarity pol, const std::string& name) {
      detail::CsvBuilder csv(spec_hash, "rank,chunk_id,score,focal_token,surface");
      auto top = top_chunks(chunks, spec.top_k, pol, non_word_token, &vb);
      std::int64_t rank = 1;
      for (const auto& c : top)
        csv.row(rank++, c.id, c.score,
                vb.word(c.tokens[static_cast<std::size_t>(c.focal_pos)]), c.surface);
      emit(name, csv.str());
      return top.size();
    };
    const auto nh = dump_top(Polarity::High, "top_high.csv");
    const auto nl = dump_top(Polarity::Low, "top_low.csv");

    rec.summary = {{"n_chunks", chunks.size()},
                   {"capacity_warning", warned},
                   {"top_high", nh},
                   {"top_low", nl},
                   {"corr_signs", corr_signs}};
    if (!segment_is_extractable.empty()) {
      std::vector<double> pos, neg;
      for (const auto& c : chunks) {
        if (segment_is_extractable[static_cast<std::size_t>(c.id)])
          pos.push_back(c.score);
        else
          neg.push_back(c.score);
      }
      rec.summary["auc"] = detail::rank_auc(pos, neg);
    }
  }

  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail::write_text(dir / "run.json", rec.to_json().dump(2) + "\n");
  return rec;
}

// ---------------------------------------------------------------------------
// report emission
// ---------------------------------------------------------------------------

namespace detail {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool got_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        cells.push_back(cur);
        cur.clear();
      } else
        cur.push_back(ch);
    }
    cells.push_back(cur);
    if (!got_header) {
      t.header = cells;
      got_header = true;
    } else
      t.rows.push_back(cells);
  }
  return t;
}

inline std::size_t col_index(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  throw ReportError("report: missing column " + name);
}

inline std::string svg_scatter(const std::vector<double>& xs, const std::vector<double>& ys,
                               const std::string& xlabel, const std::string& ylabel) {
  const double W = 480, H = 320, M = 48;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (double x : xs) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
  }
  for (double y : ys) {
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  std::ostringstream s;
  s << "<svg viewBox='0 0 " << W << " " << H << "' width='" << W << "' height='" << H << "'>";
  s << "<rect width='" << W << "' height='" << H << "' fill='white' stroke='#ccc'/>";
  auto px = [&](double x) { return M + (x - xmin) / (xmax - xmin) * (W - 2 * M); };
  auto py = [&](double y) { return H - M - (y - ymin) / (ymax - ymin) * (H - 2 * M); };
  s << "<line x1='" << M << "' y1='" << H - M << "' x2='" << W - M << "' y2='" << H - M
    << "' stroke='black'/>";
  s << "<line x1='" << M << "' y1='" << M << "' x2='" << M << "' y2='" << H - M
    << "' stroke='black'/>";
  for (std::size_t i = 0; i < xs.size(); ++i)
    s << "<circle cx='" << px(xs[i]) << "' cy='" << py(ys[i]) << "' r='4' fill='#336' "
      << "fill-opacity='0.7'/>";
  s << "<text x='" << W / 2 << "' y='" << H - 10 << "' text-anchor='middle' font-size='12'>"
    << xlabel << "</text>";
  s << "<text x='14' y='" << H / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 14 "
    << H / 2 << ")'>" << ylabel << "</text>";
  s << "</svg>";
  return s.str();
}

inline std::string heat_color(double v, double lo, double hi) {
  // blue (low) -> white (0/mid) -> red (high)
  const double span = std::max(std::abs(lo), std::abs(hi));
  const double t = span == 0 ? 0 : std::clamp(v / span, -1.0, 1.0);
  int r = 255, g = 255, b = 255;
  if (t > 0) {
    g = b = static_cast<int>(255 * (1 - t));
  } else {
    r = g = static_cast<int>(255 * (1 + t));
  }
  std::ostringstream ss;
  ss << "rgb(" << r << "," << g << "," << b << ")";
  return ss.str();
}

inline std::string svg_heatmap(const std::map<std::pair<std::int64_t, std::int64_t>, double>& grid,
                               const std::string& title) {
  std::int64_t lmax = 0, pmax = 0;
  double lo = 0, hi = 0;
  for (const auto& [k, v] : grid) {
    lmax = std::max(lmax, k.first);
    pmax = std::max(pmax, k.second);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double cell = 44, M = 60;
  const double W = M + (static_cast<double>(pmax) + 1) * cell + 20;
  const double H = M + (static_cast<double>(lmax) + 1) * cell + 20;
  std::ostringstream s;
  s << "<svg viewBox='0 0 " << W << " " << H << "' width='" << W << "' height='" << H << "'>";
  s << "<text x='" << M << "' y='20' font-size='13'>" << title << "</text>";
  for (const auto& [k, v] : grid) {
    const double x = M + static_cast<double>(k.second) * cell;
    const double y = M + static_cast<double>(k.first) * cell;
    s << "<rect x='" << x << "' y='" << y << "' width='" << cell - 2 << "' height='" << cell - 2
      << "' fill='" << heat_color(v, lo, hi) << "' stroke='#999'/>";
    std::ostringstream val;
    val << std::setprecision(2) << v;
    s << "<text x='" << x + cell / 2 - 1 << "' y='" << y + cell / 2 + 3
      << "' text-anchor='middle' font-size='10'>" << val.str() << "</text>";
  }
  for (std::int64_t l = 0; l <= lmax; ++l)
    s << "<text x='" << M - 8 << "' y='" << M + static_cast<double>(l) * cell + cell / 2
      << "' text-anchor='end' font-size='11'>L" << l << "</text>";
  for (std::int64_t p = 0; p <= pmax; ++p)
    s << "<text x='" << M + static_cast<double>(p) * cell + cell / 2 - 1 << "' y='" << M - 8
      << "' text-anchor='middle' font-size='11'>P" << p << "</text>";
  s << "</svg>";
  return s.str();
}

inline std::string svg_bars(const std::vector<std::pair<std::string, double>>& bars,
                            const std::string& title) {
  const double W = 560, barh = 20, M = 200;
  const double H = 40 + barh * 1.4 * static_cast<double>(bars.size());
  double hi = 0;
  for (const auto& [k, v] : bars) hi = std::max(hi, v);
  if (hi == 0) hi = 1;
  std::ostringstream s;
  s << "<svg viewBox='0 0 " << W << " " << H << "' width='" << W << "' height='" << H << "'>";
  s << "<text x='10' y='20' font-size='13'>" << title << "</text>";
  double y = 36;
  for (const auto& [k, v] : bars) {
    s << "<text x='" << M - 6 << "' y='" << y + barh - 6 << "' text-anchor='end' font-size='11'>"
      << k << "</text>";
    s << "<rect x='" << M << "' y='" << y << "' width='" << v / hi * (W - M - 70)
      << "' height='" << barh << "' fill='#47a'/>";
    std::ostringstream val;
    val << std::setprecision(3) << v;
    s << "<text x='" << M + v / hi * (W - M - 70) + 5 << "' y='" << y + barh - 6
      << "' font-size='11'>" << val.str() << "</text>";
    y += barh * 1.4;
  }
  s << "</svg>";
  return s.str();
}

}  // namespace detail

/// Render a run directory into a single static HTML page with inline SVG.
inline std::string emit_report(const std::string& run_dir) {
  const std::filesystem::path dir(run_dir);
  const auto run_path = dir / "run.json";
  if (!std::filesystem::exists(run_path))
    throw ReportError("report: no run manifest in " + run_dir);
  nlohmann::json run;
  try {
    run = nlohmann::json::parse(detail::read_text(run_path));
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("report: bad run manifest: ") + e.what());
  }
  const auto files = run.value("files", std::vector<std::string>());
  if (files.empty()) throw ReportError("report: run manifest lists no result files");

  std::ostringstream html;
  html << "<!doctype html><html><head><meta charset='utf-8'>"
       << "<title>run " << run.value("run_id", std::string("?")) << "</title>"
       << "<style>body{font-family:sans-serif;max-width:960px;margin:2em auto;}"
       << "table{border-collapse:collapse;}td,th{border:1px solid #ccc;padding:3px 8px;"
       << "font-size:13px;}h2{margin-top:1.6em;}</style></head><body>";
  html << "<h1>" << run.value("spec", nlohmann::json::object()).value("experiment", std::string("run"))
       << " &mdash; " << run.value("run_id", std::string()) << "</h1>";
  html << "<p>elapsed " << std::setprecision(3) << run.value("seconds", 0.0) << " s</p>";
  if (run.contains("summary"))
    html << "<h2>Summary</h2><pre>" << run.at("summary").dump(2) << "</pre>";

  auto has = [&](const std::string& name) {
    return std::find(files.begin(), files.end(), name) != files.end() &&
           std::filesystem::exists(dir / name);
  };

  if (has("behavioral.csv")) {
    auto t = detail::parse_csv(detail::read_text(dir / "behavioral.csv"));
    const auto gi = detail::col_index(t, "p_gap");
    const auto li = detail::col_index(t, "mean_licensing");
    std::vector<double> xs, ys;
    for (const auto& r : t.rows) {
      xs.push_back(std::stod(r[gi]));
      ys.push_back(std::stod(r[li]));
    }
    html << "<h2>Licensing vs. extractability gradient</h2>"
         << detail::svg_scatter(xs, ys, "designed p_gap", "mean wh-licensing");
  }

  if (has("grid.csv")) {
    auto t = detail::parse_csv(detail::read_text(dir / "grid.csv"));
    const auto si = detail::col_index(t, "site");
    const auto li = detail::col_index(t, "layer");
    const auto pi = detail::col_index(t, "position");
    const auto di = detail::col_index(t, "delta");
    // mean delta per (site kind, layer, position)
    std::map<std::string, std::map<std::pair<std::int64_t, std::int64_t>, std::pair<double, int>>>
        acc;
    for (const auto& r : t.rows) {
      auto& slot = acc[r[si]][{std::stoll(r[li]), std::stoll(r[pi])}];
      slot.first += std::stod(r[di]);
      slot.second += 1;
    }
    html << "<h2>Mean &Delta;ODDS by layer and position</h2>";
    for (const auto& [kind, cells] : acc) {
      std::map<std::pair<std::int64_t, std::int64_t>, double> grid;
      for (const auto& [k, v] : cells) grid[k] = v.first / v.second;
      html << detail::svg_heatmap(grid, kind);
    }
  }

  if (has("conjuncts.csv")) {
    auto t = detail::parse_csv(detail::read_text(dir / "conjuncts.csv"));
    const auto li = detail::col_index(t, "mean_licensing");
    const auto di = detail::col_index(t, "delta_odds");
    std::vector<double> xs, ys;
    for (const auto& r : t.rows) {
      xs.push_back(std::stod(r[li]));
      ys.push_back(std::stod(r[di]));
    }
    html << "<h2>Conjunct &Delta;ODDS vs. licensing</h2>"
         << detail::svg_scatter(xs, ys, "mean wh-licensing", "delta ODDS");
  }

  if (has("positions.csv")) {
    auto t = detail::parse_csv(detail::read_text(dir / "positions.csv"));
    const auto si = detail::col_index(t, "site");
    const auto li = detail::col_index(t, "layer");
    const auto pi = detail::col_index(t, "position");
    const auto gi = detail::col_index(t, "p_gap");
    const auto ji = detail::col_index(t, "projection");
    const auto sdi = detail::col_index(t, "seed");
    // |r| per site label, averaged over seeds
    std::map<std::string, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>>
        by_site_seed;
    for (const auto& r : t.rows) {
      const std::string label = r[si] + "/L" + r[li] + "/P" + r[pi];
      auto& slot = by_site_seed[label][r[sdi]];
      slot.first.push_back(std::stod(r[ji]));
      slot.second.push_back(std::stod(r[gi]));
    }
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& [label, seeds] : by_site_seed) {
      double acc = 0;
      int n = 0;
      for (const auto& [seed, xy] : seeds) {
        acc += std::abs(pearson_r(xy.first, xy.second));
        ++n;
      }
      bars.emplace_back(label, acc / n);
    }
    html << "<h2>Subspace-position correlation with the gradient</h2>"
         << detail::svg_bars(bars, "mean |r| across seeds");
  }

  for (const std::string name : {"top_high.csv", "top_low.csv"}) {
    if (!has(name)) continue;
    auto t = detail::parse_csv(detail::read_text(dir / name));
    const auto fi = detail::col_index(t, "focal_token");
    const auto ui = detail::col_index(t, "surface");
    const auto sci = detail::col_index(t, "score");
    html << "<h2>" << (name == "top_high.csv" ? "Top chunks (high)" : "Top chunks (low)")
         << "</h2><table><tr><th>#</th><th>score</th><th>chunk</th></tr>";
    int rank = 1;
    for (const auto& r : t.rows) {
      std::string marked;
      std::istringstream ss(r[ui]);
      std::string w;
      bool first = true;
      bool done = false;
      while (ss >> w) {
        if (!first) marked += ' ';
        first = false;
        if (!done && w == r[fi]) {
          marked += "<b>" + w + "</b>";
          done = true;
        } else
          marked += w;
      }
      html << "<tr><td>" << rank++ << "</td><td>" << r[sci] << "</td><td>" << marked
           << "</td></tr>";
    }
    html << "</table>";
  }

  html << "</body></html>\n";
  const auto out_path = dir / "report.html";
  detail::write_text(out_path, html.str());
  return out_path.string();
}

}  // namespace ilab
