#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ilab/errors.hpp"
#include "ilab/rng.hpp"

namespace ilab {

// ---------------------------------------------------------------------------
// lexicon and vocabulary
// ---------------------------------------------------------------------------

/// Word-level lexicon for the synthetic filler-gap grammar. Every stimulus
/// slot is exactly one token.
struct Lexicon {
  std::vector<std::string> prefixes;   // two-word phrases, e.g. "i know"
  std::vector<std::string> subjects;
  std::vector<std::string> particle_verbs;
  std::vector<std::string> particles;
  std::vector<std::string> transitive_verbs;
  std::vector<std::string> objects;    // complements of transitive verbs & no-gap objects
  std::vector<std::string> v2_verbs;
  std::map<std::string, std::string> past_tense;  // base form -> past form
  std::string gap_label = ".";
  std::string nogap_label = "the";

  static Lexicon builtin();

  void validate() const {
    auto nonempty = [](const std::vector<std::string>& c, const char* what) {
      if (c.empty()) throw LexiconError(std::string("lexicon: empty class: ") + what);
    };
    nonempty(prefixes, "prefixes");
    nonempty(subjects, "subjects");
    nonempty(particle_verbs, "particle_verbs");
    nonempty(particles, "particles");
    nonempty(transitive_verbs, "transitive_verbs");
    nonempty(objects, "objects");
    nonempty(v2_verbs, "v2_verbs");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["prefixes"] = prefixes;
    j["subjects"] = subjects;
    j["particle_verbs"] = particle_verbs;
    j["particles"] = particles;
    j["transitive_verbs"] = transitive_verbs;
    j["objects"] = objects;
    j["v2_verbs"] = v2_verbs;
    j["past_tense"] = past_tense;
    j["gap_label"] = gap_label;
    j["nogap_label"] = nogap_label;
    return j;
  }

  static Lexicon from_json(const nlohmann::json& j) {
    Lexicon lx;
    lx.prefixes = j.at("prefixes").get<std::vector<std::string>>();
    lx.subjects = j.at("subjects").get<std::vector<std::string>>();
    lx.particle_verbs = j.at("particle_verbs").get<std::vector<std::string>>();
    lx.particles = j.at("particles").get<std::vector<std::string>>();
    lx.transitive_verbs = j.at("transitive_verbs").get<std::vector<std::string>>();
    lx.objects = j.at("objects").get<std::vector<std::string>>();
    lx.v2_verbs = j.at("v2_verbs").get<std::vector<std::string>>();
    lx.past_tense = j.at("past_tense").get<std::map<std::string, std::string>>();
    lx.gap_label = j.value("gap_label", ".");
    lx.nogap_label = j.value("nogap_label", "the");
    lx.validate();
    return lx;
  }
};

struct Vocab {
  std::vector<std::string> words;
  std::map<std::string, std::int64_t> index;

  std::int64_t add(const std::string& w) {
    auto it = index.find(w);
    if (it != index.end()) return it->second;
    const auto id = static_cast<std::int64_t>(words.size());
    words.push_back(w);
    index.emplace(w, id);
    return id;
  }

  std::int64_t id(const std::string& w) const {
    auto it = index.find(w);
    if (it == index.end()) throw IndexError("vocab: unknown word: " + w);
    return it->second;
  }

  const std::string& word(std::int64_t id) const {
    if (id < 0 || id >= static_cast<std::int64_t>(words.size()))
      throw IndexError("vocab: id out of range");
    return words[static_cast<std::size_t>(id)];
  }

  std::int64_t size() const { return static_cast<std::int64_t>(words.size()); }
};

// ---------------------------------------------------------------------------
// conjunct inventory
// ---------------------------------------------------------------------------

enum class ConjunctClass { Acceptable, Unacceptable, Graded };

inline std::string conjunct_class_name(ConjunctClass c) {
  switch (c) {
    case ConjunctClass::Acceptable: return "Acceptable";
    case ConjunctClass::Unacceptable: return "Unacceptable";
    case ConjunctClass::Graded: return "Graded";
  }
  return "?";
}

inline ConjunctClass conjunct_class_from_name(const std::string& s) {
  if (s == "Acceptable") return ConjunctClass::Acceptable;
  if (s == "Unacceptable") return ConjunctClass::Unacceptable;
  if (s == "Graded") return ConjunctClass::Graded;
  throw ParseError("unknown conjunct class: " + s);
}

/// A coordinated VP with a designed extractability p_gap; the synthetic
/// analogue of a gradiently rated conjunct.
struct ConjunctSpec {
  std::string id;
  std::string v1;          // past form
  std::string complement;  // particle or object, one token
  std::string conj = "and";
  std::string v2;          // past form
  ConjunctClass cls = ConjunctClass::Graded;
  double p_gap = 0.0;
  std::optional<double> rating;    // Likert 1-7 when ingested
  std::string rating_text;         // verbatim CSV field for lossless round-trip

  void validate() const {
    if (p_gap < 0.0 || p_gap > 1.0) throw InputError("conjunct: p_gap outside [0,1]");
    if (cls == ConjunctClass::Unacceptable && p_gap != 0.0 && !rating)
      throw InputError("conjunct: synthetic unacceptable class requires p_gap = 0");
  }
};

inline Lexicon Lexicon::builtin() {
  Lexicon lx;
  for (const char* pron : {"i", "we", "you"})
    for (const char* verb : {"know", "saw", "heard", "noticed", "remember", "forgot", "recall",
                             "learned"})
      lx.prefixes.push_back(std::string(pron) + " " + verb);
  lx.subjects = {"she", "he",  "they", "mary", "john", "sam", "kim", "anna", "tom", "ben",
                 "liz", "max", "eva",  "dan",  "amy",  "joe", "meg", "ted",  "sue", "rob"};
  lx.particle_verbs = {"looked", "went", "woke", "came", "ran", "sat", "stood", "turned",
                       "walked", "climbed", "drove", "crept"};
  lx.particles = {"down", "out", "up", "back", "over", "around", "off", "home"};
  lx.transitive_verbs = {"baked", "ate", "played", "read", "cooked", "picked", "sang", "drew",
                         "washed", "built"};
  lx.objects = {"cookies", "candy", "soccer", "books", "dinner", "berries", "songs", "pictures",
                "dishes", "houses", "bird", "key", "cake", "ball", "fish", "hat", "ring", "coin"};
  lx.v2_verbs = {"saw",  "got",   "smelled", "found",  "grabbed", "enjoyed", "took",    "caught",
                 "won",  "wrote", "planted", "painted", "cleaned", "sold",   "opened",  "fixed",
                 "liked", "kept", "heard",   "carried", "made",    "bought"};
  lx.past_tense = {{"look", "looked"},   {"go", "went"},       {"wake", "woke"},
                   {"come", "came"},     {"run", "ran"},       {"sit", "sat"},
                   {"stand", "stood"},   {"turn", "turned"},   {"walk", "walked"},
                   {"climb", "climbed"}, {"drive", "drove"},   {"creep", "crept"},
                   {"bake", "baked"},    {"eat", "ate"},       {"play", "played"},
                   {"read", "read"},     {"cook", "cooked"},   {"pick", "picked"},
                   {"sing", "sang"},     {"draw", "drew"},     {"wash", "washed"},
                   {"build", "built"},   {"see", "saw"},       {"get", "got"},
                   {"smell", "smelled"}, {"find", "found"},    {"grab", "grabbed"},
                   {"enjoy", "enjoyed"}, {"take", "took"},     {"catch", "caught"},
                   {"win", "won"},       {"write", "wrote"},   {"plant", "planted"},
                   {"paint", "painted"}, {"clean", "cleaned"}, {"sell", "sold"},
                   {"open", "opened"},   {"fix", "fixed"},     {"like", "liked"},
                   {"keep", "kept"},     {"hear", "heard"},    {"carry", "carried"},
                   {"make", "made"},     {"buy", "bought"}};
  return lx;
}

/// 22 synthetic conjuncts: 8 highly extractable (particle first verbs),
/// 8 unextractable (transitive first verbs), 6 graded. Each conjunct has a
/// distinct second verb.
inline std::vector<ConjunctSpec> builtin_conjuncts() {
  auto mk = [](std::string id, std::string v1, std::string comp, std::string v2,
               ConjunctClass cls, double p) {
    ConjunctSpec c;
    c.id = std::move(id);
    c.v1 = std::move(v1);
    c.complement = std::move(comp);
    c.v2 = std::move(v2);
    c.cls = cls;
    c.p_gap = p;
    return c;
  };
  const auto A = ConjunctClass::Acceptable;
  const auto U = ConjunctClass::Unacceptable;
  const auto G = ConjunctClass::Graded;
  return {
      mk("c01", "looked", "down", "saw", A, 1.0),
      mk("c02", "went", "out", "got", A, 1.0),
      mk("c03", "woke", "up", "smelled", A, 1.0),
      mk("c04", "came", "back", "found", A, 1.0),
      mk("c05", "ran", "over", "grabbed", A, 0.9),
      mk("c06", "sat", "down", "enjoyed", A, 0.9),
      mk("c07", "stood", "up", "took", A, 0.9),
      mk("c08", "turned", "around", "caught", A, 0.9),
      mk("c09", "baked", "cookies", "won", U, 0.0),
      mk("c10", "ate", "candy", "wrote", U, 0.0),
      mk("c11", "played", "soccer", "planted", U, 0.0),
      mk("c12", "read", "books", "painted", U, 0.0),
      mk("c13", "cooked", "dinner", "cleaned", U, 0.0),
      mk("c14", "picked", "berries", "sold", U, 0.0),
      mk("c15", "sang", "songs", "opened", U, 0.0),
      mk("c16", "drew", "pictures", "fixed", U, 0.0),
      mk("c17", "walked", "over", "liked", G, 0.75),
      mk("c18", "climbed", "up", "kept", G, 0.6),
      mk("c19", "drove", "off", "heard", G, 0.5),
      mk("c20", "crept", "back", "carried", G, 0.4),
      mk("c21", "washed", "dishes", "made", G, 0.25),
      mk("c22", "built", "houses", "bought", G, 0.1),
  };
}

/// Vocabulary covering the lexicon, function words and all conjunct slots.
inline Vocab build_vocab(const Lexicon& lx) {
  Vocab v;
  for (const char* w : {".", "the", "what", "that", "and", "did", "?"}) v.add(w);
  for (const auto& p : lx.prefixes) {
    std::istringstream ss(p);
    std::string w;
    while (ss >> w) v.add(w);
  }
  for (const auto& w : lx.subjects) v.add(w);
  for (const auto& w : lx.particle_verbs) v.add(w);
  for (const auto& w : lx.particles) v.add(w);
  for (const auto& w : lx.transitive_verbs) v.add(w);
  for (const auto& w : lx.objects) v.add(w);
  for (const auto& w : lx.v2_verbs) v.add(w);
  for (const auto& [base, past] : lx.past_tense) v.add(past);
  return v;
}

// ---------------------------------------------------------------------------
// minimal pairs
// ---------------------------------------------------------------------------

enum class Role { Prefix, Licensor, Subject, V1, Complement, Conjunction, V2 };

inline std::string role_name(Role r) {
  switch (r) {
    case Role::Prefix: return "prefix";
    case Role::Licensor: return "licensor";
    case Role::Subject: return "subject";
    case Role::V1: return "v1";
    case Role::Complement: return "complement";
    case Role::Conjunction: return "conjunction";
    case Role::V2: return "v2";
  }
  return "?";
}

/// Aligned wh/th token sequences differing only at the licensor, with the
/// gap / no-gap continuation labels.
struct MinimalPair {
  std::vector<std::int64_t> wh;
  std::vector<std::int64_t> th;
  std::int64_t l_wh = 0;
  std::int64_t l_th = 0;
  std::vector<Role> roles;
  std::string conjunct_id;

  std::int64_t licensor_pos() const {
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == Role::Licensor) return static_cast<std::int64_t>(i);
    throw ContractError("pair has no licensor");
  }

  std::int64_t role_pos(Role r) const {
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == r) return static_cast<std::int64_t>(i);
    return -1;
  }
};

namespace detail {

inline std::pair<std::string, std::string> split_prefix(const std::string& p) {
  auto sp = p.find(' ');
  if (sp == std::string::npos) throw LexiconError("prefix phrases must be two words: " + p);
  return {p.substr(0, sp), p.substr(sp + 1)};
}

}  // namespace detail

/// Conjunct pair template:
///   wh: p1 p2 what subj v1 compl and v2  => "."
///   th: p1 p2 that subj v1 compl and v2  => "the"
inline MinimalPair make_conjunct_pair(const ConjunctSpec& c, const Lexicon& lx, const Vocab& vb,
                                      const std::string& prefix, const std::string& subject) {
  auto [p1, p2] = detail::split_prefix(prefix);
  MinimalPair mp;
  mp.conjunct_id = c.id;
  auto push = [&](const std::string& w, Role r) {
    mp.wh.push_back(vb.id(w));
    mp.th.push_back(vb.id(w));
    mp.roles.push_back(r);
  };
  push(p1, Role::Prefix);
  push(p2, Role::Prefix);
  push("what", Role::Licensor);
  mp.th[2] = vb.id("that");
  push(subject, Role::Subject);
  push(c.v1, Role::V1);
  push(c.complement, Role::Complement);
  push(c.conj, Role::Conjunction);
  push(c.v2, Role::V2);
  mp.wh[2] = vb.id("what");
  mp.l_wh = vb.id(lx.gap_label);
  mp.l_th = vb.id(lx.nogap_label);
  return mp;
}

/// Classic embedded-wh pair (no coordination):
///   wh: p1 p2 what subj v2  => "."
///   th: p1 p2 that subj v2  => "the"
inline MinimalPair make_classic_pair(const Lexicon& lx, const Vocab& vb, const std::string& prefix,
                                     const std::string& subject, const std::string& v2) {
  auto [p1, p2] = detail::split_prefix(prefix);
  MinimalPair mp;
  mp.conjunct_id = "classic";
  auto push = [&](const std::string& w, Role r) {
    mp.wh.push_back(vb.id(w));
    mp.th.push_back(vb.id(w));
    mp.roles.push_back(r);
  };
  push(p1, Role::Prefix);
  push(p2, Role::Prefix);
  push("what", Role::Licensor);
  mp.th[2] = vb.id("that");
  push(subject, Role::Subject);
  push(v2, Role::V2);
  mp.l_wh = vb.id(lx.gap_label);
  mp.l_th = vb.id(lx.nogap_label);
  return mp;
}

/// n distinct pairs for one conjunct, varying prefix and subject.
inline std::vector<MinimalPair> sample_minimal_pairs(const ConjunctSpec& c, const Lexicon& lx,
                                                     const Vocab& vb, std::size_t n,
                                                     std::uint64_t seed) {
  if (n < 1) throw InputError("sample_minimal_pairs: n must be >= 1");
  lx.validate();
  std::vector<std::pair<std::size_t, std::size_t>> combos;
  for (std::size_t p = 0; p < lx.prefixes.size(); ++p)
    for (std::size_t s = 0; s < lx.subjects.size(); ++s) combos.emplace_back(p, s);
  if (n > combos.size())
    throw CapacityError("sample_minimal_pairs: requested more pairs than prefix x subject combos");
  Rng rng(seed);
  rng.shuffle(combos);
  std::vector<MinimalPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(
        make_conjunct_pair(c, lx, vb, lx.prefixes[combos[i].first], lx.subjects[combos[i].second]));
  return out;
}

/// n distinct classic embedded-wh pairs varying prefix, subject and verb.
inline std::vector<MinimalPair> sample_classic_pairs(const Lexicon& lx, const Vocab& vb,
                                                     std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InputError("sample_classic_pairs: n must be >= 1");
  lx.validate();
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> combos;
  for (std::size_t p = 0; p < lx.prefixes.size(); ++p)
    for (std::size_t s = 0; s < lx.subjects.size(); ++s)
      for (std::size_t v = 0; v < lx.v2_verbs.size(); ++v) combos.emplace_back(p, s, v);
  if (n > combos.size()) throw CapacityError("sample_classic_pairs: capacity exceeded");
  Rng rng(seed);
  rng.shuffle(combos);
  std::vector<MinimalPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [p, s, v] = combos[i];
    out.push_back(make_classic_pair(lx, vb, lx.prefixes[p], lx.subjects[s], lx.v2_verbs[v]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// training corpus
// ---------------------------------------------------------------------------

struct CorpusSpec {
  std::vector<ConjunctSpec> conjuncts;
  double w_declarative = 0.25;
  double w_embedded_that = 0.25;
  double w_classic_wh = 0.25;
  double w_conjunct_wh = 0.25;
  std::size_t size = 20000;
  std::uint64_t seed = 0;

  void validate() const {
    if (size < 1) throw InputError("corpus spec: size must be >= 1");
    const double sum = w_declarative + w_embedded_that + w_classic_wh + w_conjunct_wh;
    if (std::abs(sum - 1.0) > 1e-9) throw InputError("corpus spec: mixture weights must sum to 1");
    if (conjuncts.empty()) throw InputError("corpus spec: no conjuncts");
    for (const auto& c : conjuncts) c.validate();
  }
};

enum class SentenceKind { Declarative, EmbeddedThat, ClassicWh, ConjunctWh };

/// Deterministic synthetic corpus. Gap-bearing wh conjunct sentences occur
/// with per-conjunct probability p_gap; with "that" the continuation is
/// always "the <object>".
inline std::vector<std::vector<std::int64_t>> generate_training_corpus(
    const CorpusSpec& spec, const Lexicon& lx, const Vocab& vb,
    std::vector<SentenceKind>* kinds_out = nullptr) {
  spec.validate();
  lx.validate();
  Rng rng(spec.seed);
  std::vector<std::vector<std::int64_t>> out;
  out.reserve(spec.size);

  auto rand_of = [&](const std::vector<std::string>& v) -> const std::string& {
    return v[static_cast<std::size_t>(rng.below(v.size()))];
  };
  auto rand_conjunct = [&]() -> const ConjunctSpec& {
    return spec.conjuncts[static_cast<std::size_t>(rng.below(spec.conjuncts.size()))];
  };
  const std::int64_t the_id = vb.id(lx.nogap_label);
  const std::int64_t dot_id = vb.id(lx.gap_label);

  for (std::size_t i = 0; i < spec.size; ++i) {
    const double u = rng.uniform();
    SentenceKind kind;
    if (u < spec.w_declarative)
      kind = SentenceKind::Declarative;
    else if (u < spec.w_declarative + spec.w_embedded_that)
      kind = SentenceKind::EmbeddedThat;
    else if (u < spec.w_declarative + spec.w_embedded_that + spec.w_classic_wh)
      kind = SentenceKind::ClassicWh;
    else
      kind = SentenceKind::ConjunctWh;

    std::vector<std::int64_t> toks;
    const auto& subj = rand_of(lx.subjects);
    switch (kind) {
      case SentenceKind::Declarative: {
        const auto& c = rand_conjunct();
        toks = {vb.id(subj), vb.id(c.v1), vb.id(c.complement), vb.id(c.conj), vb.id(c.v2), the_id,
                vb.id(rand_of(lx.objects)), dot_id};
        break;
      }
      case SentenceKind::EmbeddedThat: {
        auto [p1, p2] = detail::split_prefix(rand_of(lx.prefixes));
        if (rng.uniform() < 0.5) {
          const auto& c = rand_conjunct();
          toks = {vb.id(p1), vb.id(p2), vb.id("that"), vb.id(subj), vb.id(c.v1),
                  vb.id(c.complement), vb.id(c.conj), vb.id(c.v2), the_id,
                  vb.id(rand_of(lx.objects)), dot_id};
        } else {
          toks = {vb.id(p1), vb.id(p2), vb.id("that"), vb.id(subj), vb.id(rand_of(lx.v2_verbs)),
                  the_id, vb.id(rand_of(lx.objects)), dot_id};
        }
        break;
      }
      case SentenceKind::ClassicWh: {
        auto [p1, p2] = detail::split_prefix(rand_of(lx.prefixes));
        toks = {vb.id(p1), vb.id(p2), vb.id("what"), vb.id(subj), vb.id(rand_of(lx.v2_verbs)),
                dot_id};
        break;
      }
      case SentenceKind::ConjunctWh: {
        auto [p1, p2] = detail::split_prefix(rand_of(lx.prefixes));
        const auto& c = rand_conjunct();
        toks = {vb.id(p1), vb.id(p2), vb.id("what"), vb.id(subj), vb.id(c.v1),
                vb.id(c.complement), vb.id(c.conj), vb.id(c.v2)};
        const bool gap = rng.uniform() < c.p_gap;
        if (gap) {
          toks.push_back(dot_id);
        } else {
          toks.push_back(the_id);
          toks.push_back(vb.id(rand_of(lx.objects)));
          toks.push_back(dot_id);
        }
        break;
      }
    }
    out.push_back(std::move(toks));
    if (kinds_out) kinds_out->push_back(kind);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ratings CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kRatingsHeader = "conjunct_id,v1,complement,conj,v2,rating,class";

/// Parse the ratings CSV (schema: conjunct_id,v1,complement,conj,v2,rating,class).
/// p_gap for ingested conjuncts is the rating rescaled from [1,7] to [0,1].
inline std::vector<ConjunctSpec> ingest_ratings(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("ratings csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRatingsHeader)
    throw ParseError("ratings csv: bad header, expected: " + std::string(kRatingsHeader));
  std::vector<ConjunctSpec> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        f.push_back(cur);
        cur.clear();
      } else
        cur.push_back(ch);
    }
    f.push_back(cur);
    if (f.size() != 7)
      throw ParseError("ratings csv: row " + std::to_string(row) + ": expected 7 fields");
    ConjunctSpec c;
    c.id = f[0];
    c.v1 = f[1];
    c.complement = f[2];
    c.conj = f[3];
    c.v2 = f[4];
    c.rating_text = f[5];
    try {
      std::size_t pos = 0;
      c.rating = std::stod(f[5], &pos);
      if (pos != f[5].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("ratings csv: row " + std::to_string(row) + ": bad rating: " + f[5]);
    }
    if (*c.rating < 1.0 || *c.rating > 7.0)
      throw ParseError("ratings csv: row " + std::to_string(row) + ": rating outside [1,7]");
    try {
      c.cls = conjunct_class_from_name(f[6]);
    } catch (const ParseError&) {
      throw ParseError("ratings csv: row " + std::to_string(row) + ": bad class: " + f[6]);
    }
    c.p_gap = (*c.rating - 1.0) / 6.0;
    out.push_back(std::move(c));
  }
  return out;
}

inline std::string serialize_ratings(const std::vector<ConjunctSpec>& specs) {
  std::ostringstream out;
  out << kRatingsHeader << "\n";
  for (const auto& c : specs) {
    std::string rating = c.rating_text;
    if (rating.empty() && c.rating) {
      std::ostringstream rs;
      rs << *c.rating;
      rating = rs.str();
    }
    out << c.id << ',' << c.v1 << ',' << c.complement << ',' << c.conj << ',' << c.v2 << ','
        << rating << ',' << conjunct_class_name(c.cls) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// matrix-question conversion
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_words_lower(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string w;
  while (ss >> w) {
    for (auto& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    out.push_back(w);
  }
  return out;
}

}  // namespace detail

/// "What did <subj> <v1> <compl...> and <v2> ?"  ->
/// "I know what <subj> <past(v1)> <compl...> and <past(v2)>"
inline std::vector<std::string> convert_matrix_to_embedded(const std::vector<std::string>& words,
                                                           const Lexicon& lx) {
  if (words.size() < 7) throw SchemaError("matrix question: too short");
  std::vector<std::string> w;
  for (const auto& x : words) {
    std::string lc = x;
    for (auto& ch : lc) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    w.push_back(lc);
  }
  if (w[0] != "what" || w[1] != "did" || w.back() != "?")
    throw SchemaError("matrix question: expected 'what did ... ?'");
  // locate the conjunction; complement spans v1+1 .. and-1
  std::size_t and_pos = 0;
  for (std::size_t i = 4; i + 2 < w.size(); ++i)
    if (w[i] == "and") and_pos = i;
  if (and_pos == 0) throw SchemaError("matrix question: no conjunction");
  if (and_pos + 2 != w.size() - 1)
    throw SchemaError("matrix question: expected a single verb after the conjunction");
  const std::string& subj = w[2];
  const std::string& v1 = w[3];
  if (and_pos <= 4) throw SchemaError("matrix question: missing complement");
  const std::string& v2 = w[and_pos + 1];
  auto past = [&](const std::string& base) {
    auto it = lx.past_tense.find(base);
    if (it == lx.past_tense.end())
      throw LexiconError("verb missing from inflection map: " + base);
    return it->second;
  };
  std::vector<std::string> out = {"i", "know", "what", subj, past(v1)};
  for (std::size_t i = 4; i < and_pos; ++i) out.push_back(w[i]);
  out.push_back("and");
  out.push_back(past(v2));
  return out;
}

}  // namespace ilab
