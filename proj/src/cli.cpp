#include "gilt/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"

#include "gilt/infer.hpp"
#include "gilt/pipeline.hpp"

namespace gilt {

namespace {

struct AblationFlags {
  bool no_degree = false;
  bool no_depth = false;
  bool no_distance = false;
  bool unweight_degree = false;
  bool unweight_distance = false;

  void attach(CLI::App* app) {
    app->add_flag("--no-degree", no_degree, "Zero the degree row of every tape");
    app->add_flag("--no-depth", no_depth, "Zero the depth row of every tape");
    app->add_flag("--no-distance", no_distance, "Zero the distance row of every tape");
    app->add_flag("--unweight-degree", unweight_degree, "Use m_in = m_out = 1 for degree");
    app->add_flag("--unweight-distance", unweight_distance, "Use m_in = m_out = 1 for distance");
  }
  void apply(Ablation& a) const {
    a.no_degree = a.no_degree || no_degree;
    a.no_depth = a.no_depth || no_depth;
    a.no_distance = a.no_distance || no_distance;
    a.unweight_degree = a.unweight_degree || unweight_degree;
    a.unweight_distance = a.unweight_distance || unweight_distance;
  }
};

struct BeamFlags {
  int beam = 16;
  int expansions = 0;
  double temperature = 0.0;
  bool sample_counts = false;
  std::uint64_t seed = 1;

  void attach(CLI::App* app) {
    app->add_option("--beam", beam, "Beam width")->check(CLI::PositiveNumber);
    app->add_option("--expansions", expansions, "Count values kept per hypothesis (0: min(4, C+1))");
    app->add_option("--seed", seed, "Random seed")->envname("GILT_SEED");
  }
  BeamConfig config() const {
    BeamConfig c;
    c.beam_width = beam;
    c.count_expansions = expansions;
    c.temperature = temperature;
    c.sample_counts = sample_counts;
    c.seed = seed;
    return c;
  }
};

std::string edges_text(const WordGraph& g) {
  std::string s;
  for (const Edge& e : g.edges()) {
    s += (s.empty() ? "" : " ") + std::to_string(e.head) + "->" + std::to_string(e.dependent);
  }
  return s;
}

nlohmann::json edges_json(const WordGraph& g) {
  nlohmann::json a = nlohmann::json::array();
  for (const Edge& e : g.edges()) a.push_back({e.head, e.dependent});
  return a;
}

double peak_rss_mb() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream ls(line.substr(6));
      double kb = 0;
      ls >> kb;
      return kb / 1024.0;
    }
  }
  return 0.0;
}

std::string words_of(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    bool start = vocab.starts_word(ids[i]);
    if (i > 0 && start) s += ' ';
    s += vocab.surface(ids[i]);
  }
  return s;
}

}  // namespace

void print_tape_walkthrough(std::ostream& out, const CorpusExample& ex, const TapeSettings& settings) {
  out << "sentence " << ex.id << ": " << ex.text << '\n';
  WordAlignment alignment = ex.alignment();
  WordGraph graph = ex.graph();
  static const char* const kRows[3] = {"degree", "distance", "depth"};
  for (int t = 1; t <= alignment.num_tokens(); ++t) {
    FeatureTape tape = build_feature_tape(graph, alignment, t, settings);
    out << "G_" << t << ' ' << ex.tokens[t - 1] << " (word " << alignment.word_of_token(t) << ")\n";
    for (int r = 0; r < 3; ++r) {
      char label[16];
      std::snprintf(label, sizeof(label), "  %-9s", kRows[r]);
      out << label;
      for (int j = 1; j <= t; ++j) {
        char cell[16];
        std::snprintf(cell, sizeof(cell), "%4d", tape.columns[j][r]);
        out << cell;
      }
      out << '\n';
    }
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gilt: graph-infused transformer language model toolkit", "gilt"};
  app.require_subcommand(1);

  // toy-corpus
  auto* toy = app.add_subcommand("toy-corpus", "Write a toy grammar corpus and agreement minimal pairs");
  std::string toy_out, toy_pairs;
  int toy_count = 50, toy_min_freq = 3, toy_piece = 2;
  std::uint64_t toy_seed = 7;
  toy->add_option("--out", toy_out, "Corpus JSON-lines path")->required()->envname("GILT_CORPUS");
  toy->add_option("--pairs", toy_pairs, "Minimal-pair JSON-lines path");
  toy->add_option("--count", toy_count, "Number of distinct sentences")->check(CLI::PositiveNumber);
  toy->add_option("--seed", toy_seed, "Grammar seed")->envname("GILT_SEED");
  toy->add_option("--min-word-freq", toy_min_freq, "Words rarer than this are split into pieces");
  toy->add_option("--piece-size", toy_piece, "Characters per piece of a split word");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a corpus");
  std::string tr_corpus, tr_out, tr_model_cfg, tr_train_cfg, tr_metrics, tr_preset = "desk";
  int tr_steps = -1, tr_batch = -1, tr_min_freq = 3, tr_piece = 2;
  double tr_lr = -1.0;
  std::uint64_t tr_seed = 0;
  AblationFlags tr_ablation;
  tr->add_option("--corpus", tr_corpus, "Training corpus")->required()->envname("GILT_CORPUS");
  tr->add_option("--out", tr_out, "Model directory to write")->required()->envname("GILT_MODEL");
  tr->add_option("--preset", tr_preset, "Base configuration")->check(CLI::IsMember({"desk", "tiny"}));
  tr->add_option("--model-config", tr_model_cfg, "Model key-value config (overrides preset)");
  tr->add_option("--train-config", tr_train_cfg, "Training key-value config");
  tr->add_option("--metrics", tr_metrics, "Metrics JSON-lines path (default <out>/metrics.jsonl)")
      ->envname("GILT_METRICS");
  tr->add_option("--steps", tr_steps, "Optimisation steps");
  tr->add_option("--batch-size", tr_batch, "Sentences per batch");
  tr->add_option("--lr", tr_lr, "Peak learning rate");
  tr->add_option("--seed", tr_seed, "Seed for initialisation and batching")->envname("GILT_SEED");
  tr->add_option("--min-word-freq", tr_min_freq, "Tokenizer split threshold for raw text");
  tr->add_option("--piece-size", tr_piece, "Tokenizer piece size for raw text");
  tr_ablation.attach(tr);

  // eval-ppl
  auto* ppl = app.add_subcommand("eval-ppl", "Perplexity upper bound under beam marginalisation");
  std::string ppl_model, ppl_corpus;
  BeamFlags ppl_beam;
  ppl->add_option("--model", ppl_model, "Model directory")->required()->envname("GILT_MODEL");
  ppl->add_option("--corpus", ppl_corpus, "Evaluation corpus")->required()->envname("GILT_CORPUS");
  ppl_beam.attach(ppl);

  // eval-minpair
  auto* mp = app.add_subcommand("eval-minpair", "Minimal-pair accuracy");
  std::string mp_model, mp_pairs;
  BeamFlags mp_beam;
  mp->add_option("--model", mp_model, "Model directory")->required()->envname("GILT_MODEL");
  mp->add_option("--pairs", mp_pairs, "Minimal-pair JSON-lines file")->required()->envname("GILT_PAIRS");
  mp_beam.attach(mp);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a sentence and its graph");
  std::string gen_model, gen_prompt;
  int gen_max = 32;
  BeamFlags gen_beam;
  gen->add_option("--model", gen_model, "Model directory")->required()->envname("GILT_MODEL");
  gen->add_option("--prompt", gen_prompt, "Prompt text");
  gen->add_option("--max-tokens", gen_max, "Maximum tokens")->check(CLI::PositiveNumber);
  gen->add_option("--temperature", gen_beam.temperature, "Sampling temperature (0: greedy)");
  gen->add_flag("--sample-counts", gen_beam.sample_counts, "Sample dependency counts");
  gen_beam.attach(gen);

  // parse
  auto* ps = app.add_subcommand("parse", "Most probable graph of fixed sentences");
  std::string ps_model, ps_text, ps_corpus;
  BeamFlags ps_beam;
  ps->add_option("--model", ps_model, "Model directory")->required()->envname("GILT_MODEL");
  auto* ps_text_opt = ps->add_option("--text", ps_text, "Sentence to parse");
  ps->add_option("--corpus", ps_corpus, "Corpus whose sentences are parsed")->excludes(ps_text_opt);
  ps_beam.attach(ps);

  // tape
  auto* tp = app.add_subcommand("tape", "Print the feature tape of every token of a gold example");
  std::string tp_corpus, tp_id, tp_model;
  int tp_index = 0, tp_m_in = 1, tp_m_out = 10;
  AblationFlags tp_ablation;
  tp->add_option("--corpus", tp_corpus, "Corpus file")->required()->envname("GILT_CORPUS");
  tp->add_option("--id", tp_id, "Example id (default: first example)");
  tp->add_option("--index", tp_index, "0-based example index");
  tp->add_option("--m-in", tp_m_in, "Incoming-edge weight")->check(CLI::PositiveNumber);
  tp->add_option("--m-out", tp_m_out, "Outgoing-edge weight")->check(CLI::PositiveNumber);
  tp->add_option("--model", tp_model, "Take weights and ablations from this model directory");
  tp_ablation.attach(tp);

  // bench
  auto* bn = app.add_subcommand("bench", "Generation speed and peak memory against beam size");
  std::string bn_model;
  std::vector<int> bn_beams{1, 20, 100};
  int bn_tokens = 24, bn_repeats = 1;
  bn->add_option("--model", bn_model, "Model directory")->required()->envname("GILT_MODEL");
  bn->add_option("--beams", bn_beams, "Beam widths")->delimiter(',');
  bn->add_option("--tokens", bn_tokens, "Tokens generated per run")->check(CLI::PositiveNumber);
  bn->add_option("--repeats", bn_repeats, "Runs per beam width; the median time is reported")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    if (*toy) {
      auto sentences = generate_toy_sentences(toy_count, toy_seed);
      std::vector<std::string> texts;
      for (const auto& s : sentences) texts.push_back(s.text());
      Tokenizer tok(toy_min_freq, toy_piece);
      tok.fit(texts);
      save_corpus(toy_out, toy_corpus(sentences, tok));
      if (!toy_pairs.empty()) {
        std::vector<MinimalPair> pairs;
        for (const auto& s : sentences) pairs.push_back(agreement_pair(s));
        save_minimal_pairs(toy_pairs, pairs);
      }
      out << "wrote " << sentences.size() << " sentences to " << toy_out << '\n';
      return 0;
    }

    if (*tr) {
      auto corpus = load_corpus(tr_corpus);
      if (corpus.empty()) throw std::runtime_error("training corpus is empty");
      ModelBundle b;
      b.tokenizer = fit_tokenizer(corpus, tr_min_freq, tr_piece);
      b.vocab = Vocabulary::build(corpus, 1);
      GiLTConfig cfg = tr_preset == "tiny" ? GiLTConfig::tiny(b.vocab.size())
                                           : GiLTConfig::desk(b.vocab.size());
      if (!tr_model_cfg.empty()) cfg = GiLTConfig::from_key_values([&] {
          KeyValueFile kv = KeyValueFile::load(tr_model_cfg);
          kv.set("vocab_size", b.vocab.size());
          return kv;
        }());
      cfg.vocab_size = b.vocab.size();
      if (tr_model_cfg.empty()) {
        // presets grow to fit the corpus; caps come from the un-ablated features
        CorpusReport rep = corpus_report(corpus, cfg.tape);
        cfg.max_count = std::max(cfg.max_count, rep.max_count);
        auto& caps = cfg.tape.caps;
        caps.degree_cap = std::max(caps.degree_cap, rep.features.degree);
        caps.distance_cap = std::max(caps.distance_cap, rep.features.distance);
        caps.depth_cap = std::max(caps.depth_cap, rep.features.depth);
      }
      tr_ablation.apply(cfg.tape.ablation);
      if (!tr_train_cfg.empty()) b.train = TrainConfig::from_key_values(KeyValueFile::load(tr_train_cfg));
      if (tr_steps >= 0) b.train.steps = tr_steps;
      if (tr_batch > 0) b.train.batch_size = tr_batch;
      if (tr_lr >= 0) b.train.learning_rate = tr_lr;
      if (tr->count("--seed") > 0 || std::getenv("GILT_SEED")) {
        b.train.seed = tr_seed;
        cfg.seed = tr_seed;
      }
      b.model = std::make_unique<GiLTModel>(cfg);
      auto prepared = prepare_corpus(corpus, b.vocab, cfg);
      std::filesystem::create_directories(tr_out);
      std::string metrics_path =
          tr_metrics.empty() ? (std::filesystem::path(tr_out) / "metrics.jsonl").string() : tr_metrics;
      std::ofstream metrics(metrics_path, std::ios::app);
      if (!metrics) throw std::runtime_error("cannot write metrics to " + metrics_path);
      train(*b.model, prepared, b.train, &metrics);
      save_bundle(tr_out, b);
      TeacherForcedMetrics m = teacher_forced_metrics(*b.model, prepared);
      out << nlohmann::json{{"steps", b.train.steps},
                            {"token_ce", m.token_ce},
                            {"edge_accuracy", m.edge_accuracy},
                            {"count_accuracy", m.count_accuracy},
                            {"model", tr_out}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*ppl) {
      ModelBundle b = load_bundle(ppl_model);
      auto examples = encode_corpus(load_corpus(ppl_corpus), b.vocab);
      PerplexityResult r = perplexity_upper_bound(*b.model, examples, ppl_beam.config());
      out << nlohmann::json{{"perplexity_upper_bound", r.perplexity},
                            {"log_prob", r.total_log_prob},
                            {"tokens", r.tokens},
                            {"beam", ppl_beam.beam}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*mp) {
      ModelBundle b = load_bundle(mp_model);
      auto pairs = load_minimal_pairs(mp_pairs);
      MinPairReport r = minpair_eval(*b.model, b.tokenizer, b.vocab, pairs, mp_beam.config());
      out << r.to_json().dump(1) << '\n';
      return 0;
    }

    if (*gen) {
      ModelBundle b = load_bundle(gen_model);
      std::vector<int> prompt;
      if (!gen_prompt.empty()) {
        CorpusExample ex = example_from_text("prompt", gen_prompt, b.tokenizer);
        auto ids = b.vocab.encode(ex.tokens, ex.word_spans);
        prompt.assign(ids.begin() + 1, ids.end());
      }
      GenerateOptions opts;
      opts.max_tokens = gen_max;
      const Vocabulary& vocab = b.vocab;
      GenerationResult r = generate(*b.model, [&](int id) { return vocab.starts_word(id); }, prompt,
                                    gen_beam.config(), opts);
      out << words_of(r.ids, b.vocab) << '\n';
      out << "edges: " << edges_text(r.graph) << '\n';
      if (r.truncated) out << "(stopped at max tokens)\n";
      return 0;
    }

    if (*ps) {
      ModelBundle b = load_bundle(ps_model);
      std::vector<CorpusExample> sentences;
      if (!ps_corpus.empty()) {
        sentences = load_corpus(ps_corpus);
      } else if (!ps_text.empty()) {
        sentences.push_back(example_from_text("text", ps_text, b.tokenizer));
      } else {
        throw CLI::ValidationError("parse needs --text or --corpus");
      }
      for (const auto& ex : sentences) {
        auto t = to_training_example(ex, b.vocab);
        WordGraph g = parse(*b.model, t.ids, t.alignment, ps_beam.config());
        out << nlohmann::json{{"id", ex.id}, {"text", ex.text}, {"edges", edges_json(g)}}.dump()
            << '\n';
      }
      return 0;
    }

    if (*tp) {
      auto corpus = load_corpus(tp_corpus);
      if (corpus.empty()) throw std::runtime_error("corpus is empty");
      const CorpusExample* ex = nullptr;
      if (!tp_id.empty()) {
        for (const auto& e : corpus) {
          if (e.id == tp_id) ex = &e;
        }
        if (!ex) throw std::runtime_error("no example with id " + tp_id);
      } else {
        if (tp_index < 0 || tp_index >= static_cast<int>(corpus.size())) {
          throw std::runtime_error("example index out of range");
        }
        ex = &corpus[tp_index];
      }
      TapeSettings settings;
      settings.degree_weights = {tp_m_in, tp_m_out};
      settings.distance_weights = {tp_m_in, tp_m_out};
      if (!tp_model.empty()) {
        KeyValueFile kv = KeyValueFile::load(std::filesystem::path(tp_model) / "model.cfg");
        settings = GiLTConfig::from_key_values(kv).tape;
      }
      check_weights(settings.degree_weights);
      tp_ablation.apply(settings.ablation);
      print_tape_walkthrough(out, *ex, settings);
      return 0;
    }

    if (*bn) {
      ModelBundle b = load_bundle(bn_model);
      const Vocabulary& vocab = b.vocab;
      char line[128];
      std::snprintf(line, sizeof(line), "%-6s %8s %10s %12s %12s %14s\n", "beam", "tokens", "seconds",
                    "tokens/s", "ms/token", "peak_rss_mb");
      out << line;
      for (int beam : bn_beams) {
        BeamConfig cfg;
        cfg.beam_width = beam;
        GenerateOptions opts;
        opts.max_tokens = bn_tokens;
        opts.allow_end = false;
        GenerationResult r;
        std::vector<double> times;
        for (int rep = 0; rep < bn_repeats; ++rep) {
          auto start = std::chrono::steady_clock::now();
          r = generate(*b.model, [&](int id) { return vocab.starts_word(id); }, {}, cfg, opts);
          times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        }
        std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
        double secs = times[times.size() / 2];
        int n = static_cast<int>(r.ids.size());
        std::snprintf(line, sizeof(line), "%-6d %8d %10.3f %12.1f %12.3f %14.1f\n", beam, n, secs,
                      n / secs, 1000.0 * secs / n, peak_rss_mb());
        out << line;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace gilt
