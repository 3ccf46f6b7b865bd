#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "ilab/stimgen.hpp"

using namespace ilab;

namespace {

struct Fixture {
  Lexicon lx = Lexicon::builtin();
  Vocab vb = build_vocab(lx);
  std::vector<ConjunctSpec> conjuncts = builtin_conjuncts();
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("minimal pairs differ only at the licensor, aligned roles") {
  Fixture fx;
  // property-style: many seeds, many conjuncts
  for (std::uint64_t seed : {1ull, 2ull, 77ull, 901ull}) {
    for (const auto& c : fx.conjuncts) {
      auto pairs = sample_minimal_pairs(c, fx.lx, fx.vb, 25, seed);
      for (const auto& mp : pairs) {
        REQUIRE(mp.wh.size() == mp.th.size());
        REQUIRE(mp.roles.size() == mp.wh.size());
        int diffs = 0;
        for (std::size_t i = 0; i < mp.wh.size(); ++i)
          if (mp.wh[i] != mp.th[i]) {
            ++diffs;
            REQUIRE(mp.roles[i] == Role::Licensor);
          }
        REQUIRE(diffs == 1);
        REQUIRE(mp.wh[static_cast<std::size_t>(mp.licensor_pos())] == fx.vb.id("what"));
        REQUIRE(mp.th[static_cast<std::size_t>(mp.licensor_pos())] == fx.vb.id("that"));
      }
    }
  }
}

TEST_CASE("400 pairs: distinct, reproducible, correct labels") {
  Fixture fx;
  auto pairs = sample_minimal_pairs(fx.conjuncts[0], fx.lx, fx.vb, 400, 5);
  REQUIRE(pairs.size() == 400);
  std::set<std::vector<std::int64_t>> seen;
  for (const auto& mp : pairs) {
    seen.insert(mp.wh);
    REQUIRE(mp.l_wh == fx.vb.id("."));
    REQUIRE(mp.l_th == fx.vb.id("the"));
  }
  REQUIRE(seen.size() == 400);
  auto again = sample_minimal_pairs(fx.conjuncts[0], fx.lx, fx.vb, 400, 5);
  for (std::size_t i = 0; i < 400; ++i) REQUIRE(pairs[i].wh == again[i].wh);
}

TEST_CASE("capacity error when requesting more pairs than combinations") {
  Fixture fx;
  const std::size_t cap = fx.lx.prefixes.size() * fx.lx.subjects.size();
  REQUIRE_THROWS_AS(sample_minimal_pairs(fx.conjuncts[0], fx.lx, fx.vb, cap + 1, 1), CapacityError);
}

TEST_CASE("corpus: gap frequencies follow p_gap by construction") {
  Fixture fx;
  CorpusSpec spec;
  spec.conjuncts = fx.conjuncts;
  spec.size = 30000;
  spec.seed = 3;
  auto corpus = generate_training_corpus(spec, fx.lx, fx.vb);

  const auto what_id = fx.vb.id("what");
  const auto dot_id = fx.vb.id(".");
  auto count_for = [&](const ConjunctSpec& c) {
    const auto v2 = fx.vb.id(c.v2);
    std::size_t wh_total = 0, wh_gap = 0;
    for (const auto& s : corpus) {
      if (s.size() < 6 || s[2] != what_id) continue;
      if (s.size() >= 9 && s[7] == v2) {  // conjunct wh sentence with this conjunct
        ++wh_total;
        if (s[8] == dot_id) ++wh_gap;
      }
    }
    return std::pair(wh_total, wh_gap);
  };

  for (const auto& c : fx.conjuncts) {
    auto [total, gap] = count_for(c);
    REQUIRE(total > 0);
    if (c.p_gap == 0.0) REQUIRE(gap == 0);
    if (c.p_gap == 1.0) REQUIRE(gap == total);
  }
}

TEST_CASE("corpus: category frequencies track mixture weights within 2%") {
  Fixture fx;
  CorpusSpec spec;
  spec.conjuncts = fx.conjuncts;
  spec.w_declarative = 0.2;
  spec.w_embedded_that = 0.3;
  spec.w_classic_wh = 0.25;
  spec.w_conjunct_wh = 0.25;
  spec.size = 100000;
  spec.seed = 42;
  std::vector<SentenceKind> kinds;
  auto corpus = generate_training_corpus(spec, fx.lx, fx.vb, &kinds);
  REQUIRE(corpus.size() == spec.size);
  double n = static_cast<double>(spec.size);
  double counts[4] = {0, 0, 0, 0};
  for (auto k : kinds) counts[static_cast<int>(k)] += 1.0;
  REQUIRE(std::abs(counts[0] / n - 0.2) < 0.02);
  REQUIRE(std::abs(counts[1] / n - 0.3) < 0.02);
  REQUIRE(std::abs(counts[2] / n - 0.25) < 0.02);
  REQUIRE(std::abs(counts[3] / n - 0.25) < 0.02);
}

TEST_CASE("corpus generation is a pure function of the spec") {
  Fixture fx;
  CorpusSpec spec;
  spec.conjuncts = fx.conjuncts;
  spec.size = 500;
  spec.seed = 11;
  auto a = generate_training_corpus(spec, fx.lx, fx.vb);
  auto b = generate_training_corpus(spec, fx.lx, fx.vb);
  REQUIRE(a == b);
}

TEST_CASE("corpus spec validation") {
  Fixture fx;
  CorpusSpec spec;
  spec.conjuncts = fx.conjuncts;
  spec.w_declarative = 0.5;  // weights now sum to 1.25
  REQUIRE_THROWS_AS(generate_training_corpus(spec, fx.lx, fx.vb), InputError);

  CorpusSpec empty_lx_spec;
  empty_lx_spec.conjuncts = fx.conjuncts;
  Lexicon broken = fx.lx;
  broken.subjects.clear();
  REQUIRE_THROWS_AS(generate_training_corpus(empty_lx_spec, broken, fx.vb), LexiconError);
}

TEST_CASE("ratings ingestion: exemplar row and bundled table") {
  auto csv = read_file(std::string(ILAB_SOURCE_DIR) + "/data/conjuncts_table3.csv");
  auto specs = ingest_ratings(csv);
  REQUIRE(specs.size() == 16);
  int acc = 0, unacc = 0;
  for (const auto& c : specs) {
    if (c.cls == ConjunctClass::Acceptable) ++acc;
    if (c.cls == ConjunctClass::Unacceptable) ++unacc;
  }
  REQUIRE(acc == 8);
  REQUIRE(unacc == 8);

  REQUIRE(specs[0].v1 == "looked");
  REQUIRE(specs[0].complement == "down");
  REQUIRE(specs[0].conj == "and");
  REQUIRE(specs[0].v2 == "saw");
  REQUIRE(specs[0].rating == Catch::Approx(6.29));
  REQUIRE(specs[0].cls == ConjunctClass::Acceptable);

  // ingest -> re-serialize is lossless
  REQUIRE(serialize_ratings(specs) == csv);
}

TEST_CASE("ratings ingestion errors carry the row number") {
  std::string good = std::string(kRatingsHeader) + "\n";
  REQUIRE(ingest_ratings(good).empty());

  auto bad_rating = good + "x,went,home,and,got,9.5,Acceptable\n";
  REQUIRE_THROWS_WITH(ingest_ratings(bad_rating), Catch::Matchers::ContainsSubstring("row 2"));

  auto bad_fields = good + "x,went,home,and,got,5.0\n";
  REQUIRE_THROWS_AS(ingest_ratings(bad_fields), ParseError);

  auto bad_class = good + "x,went,home,and,got,5.0,Meh\n";
  REQUIRE_THROWS_AS(ingest_ratings(bad_class), ParseError);

  auto bad_header = std::string("a,b,c\nx\n");
  REQUIRE_THROWS_AS(ingest_ratings(bad_header), ParseError);
}

TEST_CASE("matrix question to embedded clause") {
  Lexicon lx = Lexicon::builtin();
  auto out = convert_matrix_to_embedded({"What", "did", "she", "bake", "cookies", "and", "win", "?"},
                                        lx);
  REQUIRE(out == std::vector<std::string>{"i", "know", "what", "she", "baked", "cookies", "and",
                                          "won"});

  // multi-word complement
  auto out2 = convert_matrix_to_embedded(
      {"what", "did", "he", "drive", "to", "the", "market", "and", "buy", "?"}, lx);
  REQUIRE(out2 == std::vector<std::string>{"i", "know", "what", "he", "drove", "to", "the",
                                           "market", "and", "bought"});

  // verb absent from the inflection map
  REQUIRE_THROWS_AS(
      convert_matrix_to_embedded({"what", "did", "she", "zorch", "cookies", "and", "win", "?"}, lx),
      LexiconError);

  // already-embedded input: no passthrough
  REQUIRE_THROWS_AS(
      convert_matrix_to_embedded({"i", "know", "what", "she", "baked", "cookies", "and", "won"},
                                 lx),
      SchemaError);
}

TEST_CASE("lexicon JSON round trip") {
  auto lx = Lexicon::builtin();
  auto j = lx.to_json();
  auto back = Lexicon::from_json(j);
  REQUIRE(back.prefixes == lx.prefixes);
  REQUIRE(back.past_tense == lx.past_tense);
  REQUIRE(back.gap_label == lx.gap_label);
}

TEST_CASE("vocab covers the grammar and is reasonably small") {
  auto lx = Lexicon::builtin();
  auto vb = build_vocab(lx);
  REQUIRE(vb.size() < 256);
  REQUIRE_NOTHROW(vb.id("what"));
  REQUIRE_NOTHROW(vb.id("looked"));
  REQUIRE_THROWS_AS(vb.id("zorch"), IndexError);
}
