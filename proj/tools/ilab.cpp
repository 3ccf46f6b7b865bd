// Command-line entry point: corpus generation, LM training, the four
// experiments and report emission. One JSON config per subcommand; every
// run is a pure function of (config, seed, float mode).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "ilab/checkpoint.hpp"
#include "ilab/harness.hpp"
#include "ilab/model.hpp"
#include "ilab/stimgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ilab::ConfigError("cannot open config: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ilab::ConfigError("config parse error in " + path + ": " + e.what());
  }
}

std::string resolve_out(const std::string& out_flag, const std::string& leaf) {
  if (!out_flag.empty()) return out_flag;
  const char* root = std::getenv("ILAB_OUT_ROOT");
  return (fs::path(root ? root : "runs") / leaf).string();
}

ilab::ModelConfig model_config_from(const json& j) {
  ilab::ModelConfig cfg;
  if (!j.contains("model")) return cfg;
  const auto& m = j.at("model");
  cfg.n_layers = m.value("n_layers", cfg.n_layers);
  cfg.n_heads = m.value("n_heads", cfg.n_heads);
  cfg.d_model = m.value("d_model", cfg.d_model);
  cfg.d_mlp = m.value("d_mlp", cfg.d_mlp);
  cfg.vocab_size = m.value("vocab_size", cfg.vocab_size);
  cfg.max_seq_len = m.value("max_seq_len", cfg.max_seq_len);
  cfg.ln_eps = m.value("ln_eps", cfg.ln_eps);
  cfg.validate();
  return cfg;
}

ilab::CorpusSpec corpus_spec_from(const json& j, std::uint64_t seed) {
  ilab::CorpusSpec spec;
  spec.conjuncts = ilab::builtin_conjuncts();
  spec.seed = seed;
  if (j.contains("corpus")) {
    const auto& c = j.at("corpus");
    spec.size = c.value("size", spec.size);
    spec.seed = c.value("seed", spec.seed);
    spec.w_declarative = c.value("w_declarative", spec.w_declarative);
    spec.w_embedded_that = c.value("w_embedded_that", spec.w_embedded_that);
    spec.w_classic_wh = c.value("w_classic_wh", spec.w_classic_wh);
    spec.w_conjunct_wh = c.value("w_conjunct_wh", spec.w_conjunct_wh);
    if (c.contains("ratings_csv")) {
      auto csv = ilab::detail::read_text(c.at("ratings_csv").get<std::string>());
      spec.conjuncts = ilab::ingest_ratings(csv);
    }
  }
  return spec;
}

template <class S>
int do_train_lm(const json& cfg_json, std::uint64_t seed, const std::string& out_dir) {
  const auto cfg = model_config_from(cfg_json);
  auto lx = ilab::Lexicon::builtin();
  auto vb = ilab::build_vocab(lx);
  if (vb.size() > cfg.vocab_size)
    throw ilab::ConfigError("model vocab_size smaller than the grammar vocabulary");
  auto corpus_spec = corpus_spec_from(cfg_json, seed);
  auto corpus = ilab::generate_training_corpus(corpus_spec, lx, vb);

  ilab::TrainHyper hy;
  hy.seed = seed;
  if (cfg_json.contains("train")) {
    const auto& t = cfg_json.at("train");
    hy.lr = t.value("lr", hy.lr);
    hy.batch = t.value("batch", hy.batch);
    hy.steps = t.value("steps", hy.steps);
    hy.warmup = t.value("warmup", hy.warmup);
  }
  std::vector<double> curve;
  std::cerr << "training: " << corpus.size() << " sentences, " << hy.steps << " steps\n";
  auto params = ilab::train_lm<S>(cfg, corpus, hy, &curve);

  fs::create_directories(out_dir);
  const auto ckpt = (fs::path(out_dir) / "model.ilab").string();
  ilab::save_checkpoint<S>(ckpt, params, {{"vocab", vb.words}, {"seed", seed}});
  json curve_json = {{"loss", curve}, {"seed", seed}};
  ilab::detail::write_text(fs::path(out_dir) / "loss.json", curve_json.dump(2) + "\n");
  std::cerr << "final loss " << (curve.empty() ? 0.0 : curve.back()) << " -> " << ckpt << "\n";
  return 0;
}

int do_gen_corpus(const json& cfg_json, std::uint64_t seed, const std::string& out_dir) {
  auto lx = ilab::Lexicon::builtin();
  auto vb = ilab::build_vocab(lx);
  auto spec = corpus_spec_from(cfg_json, seed);
  auto corpus = ilab::generate_training_corpus(spec, lx, vb);
  std::ostringstream text;
  for (const auto& sent : corpus) {
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (i) text << ' ';
      text << vb.word(sent[i]);
    }
    text << '\n';
  }
  fs::create_directories(out_dir);
  ilab::detail::write_text(fs::path(out_dir) / "corpus.txt", text.str());
  ilab::detail::write_text(fs::path(out_dir) / "lexicon.json", lx.to_json().dump(2) + "\n");
  json vocab_json = vb.words;
  ilab::detail::write_text(fs::path(out_dir) / "vocab.json", vocab_json.dump(2) + "\n");
  std::cerr << corpus.size() << " sentences -> " << out_dir << "\n";
  return 0;
}

template <class S>
int do_experiment(const std::string& exp, const json& cfg_json, std::optional<std::uint64_t> seed,
                  const std::string& out_dir) {
  json j = cfg_json;
  j["experiment"] = exp;
  if (!j.contains("out_dir") || !out_dir.empty()) j["out_dir"] = out_dir;
  auto spec = ilab::ExperimentSpec::from_json(j);
  if (seed) spec.stim_seed = *seed;
  auto rec = ilab::run_experiment<S>(spec);
  std::cerr << exp << " run " << rec.run_id << " finished in " << rec.seconds << " s\n"
            << rec.summary.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic filler-gap interpretability lab"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_flag;
  std::optional<std::uint64_t> seed_flag;
  bool float32 = false;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed_flag, "seed override");
  app.add_option("--out", out_flag, "output directory (default: $ILAB_OUT_ROOT/<cmd>)");
  app.add_flag("--float32", float32, "run in 32-bit float mode");

  auto* train = app.add_subcommand("train-lm", "train the toy LM on the synthetic corpus");
  auto* gen = app.add_subcommand("gen-corpus", "emit the synthetic corpus as text");
  auto* e1 = app.add_subcommand("exp1", "behavioral gradient");
  auto* e2 = app.add_subcommand("exp2", "classic filler-gap interventions");
  auto* e3 = app.add_subcommand("exp3", "blocking-subspace generalization");
  auto* e4 = app.add_subcommand("exp4", "corpus chunk projections");
  auto* rep = app.add_subcommand("report", "render a run directory to HTML");
  std::string report_dir;
  rep->add_option("dir", report_dir, "run directory");
  for (auto* sub : {train, gen, e1, e2, e3, e4, rep}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = load_config(config_path);
    const auto seed = seed_flag.value_or(0);
    if (train->parsed())
      return float32 ? do_train_lm<float>(cfg, seed, resolve_out(out_flag, "train-lm"))
                     : do_train_lm<double>(cfg, seed, resolve_out(out_flag, "train-lm"));
    if (gen->parsed()) return do_gen_corpus(cfg, seed, resolve_out(out_flag, "gen-corpus"));
    for (auto* sub : {e1, e2, e3, e4}) {
      if (!sub->parsed()) continue;
      const auto name = sub->get_name();
      const auto out = resolve_out(out_flag, name);
      return float32 ? do_experiment<float>(name, cfg, seed_flag, out)
                     : do_experiment<double>(name, cfg, seed_flag, out);
    }
    if (rep->parsed()) {
      const auto dir = report_dir.empty() ? resolve_out(out_flag, "report") : report_dir;
      std::cout << ilab::emit_report(dir) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
