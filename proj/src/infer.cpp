#include "gilt/infer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gilt {

namespace {

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> row_values(const Tensor& t) {
  const Matrix& m = t.value();
  return std::vector<double>(m.data(), m.data() + m.size());
}

// Count values to expand, best first; ties go to the smaller count.
std::vector<int> ranked_counts(const std::vector<double>& log_pi) {
  std::vector<int> order(log_pi.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return log_pi[a] > log_pi[b]; });
  return order;
}

}  // namespace

int BeamConfig::resolved_expansions(int max_count) const {
  return count_expansions > 0 ? count_expansions : std::min(4, max_count + 1);
}

void BeamConfig::validate(int max_count) const {
  if (beam_width < 1) throw std::invalid_argument("beam width must be >= 1");
  int k = resolved_expansions(max_count);
  if (k < 1 || k > max_count + 1) {
    throw std::invalid_argument("count expansions must lie in 1..C+1");
  }
  if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
}

EdgeSelection select_top_c_edges(int word, std::span<const double> head_row,
                                 std::span<const double> head_col, int c) {
  if (word < 1 || static_cast<int>(head_row.size()) != word + 1 ||
      static_cast<int>(head_col.size()) != word + 1) {
    throw std::invalid_argument("select_top_c_edges: scores must cover words 0..i");
  }
  if (c < 0) throw std::invalid_argument("select_top_c_edges: negative count");
  struct Candidate {
    double prob;
    int other;
    bool as_head;
  };
  std::vector<Candidate> cands;
  for (int a = 0; a < word; ++a) {
    if (a > 0) cands.push_back({head_row[a], a, true});
    cands.push_back({head_col[a], a, false});
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
    if (x.prob != y.prob) return x.prob > y.prob;
    if (x.other != y.other) return x.other < y.other;
    return x.as_head && !y.as_head;
  });
  EdgeSelection sel;
  sel.truncated = c > static_cast<int>(cands.size());
  int take = std::min<int>(c, static_cast<int>(cands.size()));
  for (int r = 0; r < take; ++r) {
    const auto& x = cands[r];
    sel.edges.push_back(x.as_head ? Edge{word, x.other} : Edge{x.other, word});
  }
  return sel;
}

EdgeSelection select_top_c_edges(const WordScores& scores, int c) {
  return select_top_c_edges(scores.word, row_values(scores.head_row), row_values(scores.head_col),
                            c);
}

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.counts != b.counts) return a.counts < b.counts;
  return a.graph.edges() < b.graph.edges();
}

BeamSearch::BeamSearch(const GiLTModel& model, const BeamConfig& config, int max_positions)
    : model_(model),
      config_(config),
      tables_(),
      rng_(config.seed),
      expansions_(config.resolved_expansions(model.config().max_count)) {
  config_.validate(model.config().max_count);
  ad::NoGradGuard no_grad;
  ad::NoDropoutGuard no_dropout;
  tables_ = model.prepare(max_positions);
  Hypothesis h;
  h.last_tape = bos_tape();
  const int bos = Vocabulary::kBos;
  model.forward_block(h.state, std::span<const int>(&bos, 1),
                      std::span<const FeatureTape>(&h.last_tape, 1), tables_);
  h.first = model.first_stage(model.root_representation());
  beams_.push_back(std::move(h));
}

void BeamSearch::score_token(int token) {
  for (auto& h : beams_) {
    double lp = h.state.log_probs.value()(h.state.length - 1, token);
    h.before_token.push_back(h.log_prob);
    h.log_prob += lp;
    h.token_log_prob += lp;
    h.after_token.push_back(h.log_prob);
  }
}

BeamSearch::Scored BeamSearch::score_structure(const Hypothesis& h, int token) const {
  const int word = h.graph.num_words() + 1;
  const int k = h.state.length;
  StructureReps fs = model_.first_stage(model_.word_representations(h.state, {&k, 1}, {&token, 1}));
  std::array<Tensor, 2> par{h.first.par, fs.par};
  std::array<Tensor, 2> chd{h.first.chd, fs.chd};
  StructureReps first{ad::concat_rows(par), ad::concat_rows(chd)};
  Tensor pe = model_.biaffine_positional(word, h.last_tape, h.first_positions, tables_);
  return {first, model_.score_word(model_.second_stage(first, pe), word)};
}

void BeamSearch::expand(int token) {
  ad::NoGradGuard no_grad;
  ad::NoDropoutGuard no_dropout;
  std::vector<Hypothesis> children;
  for (const auto& h : beams_) {
    const int k = h.state.length;
    Scored sc = score_structure(h, token);
    const int word = sc.scores.word;
    std::vector<double> log_pi = row_values(sc.scores.count_log_probs);

    std::vector<int> chosen;
    if (config_.sample_counts) {
      std::vector<double> p;
      for (double l : log_pi) p.push_back(std::exp(l));
      std::discrete_distribution<int> dist(p.begin(), p.end());
      chosen.push_back(dist(rng_));
    } else {
      auto order = ranked_counts(log_pi);
      chosen.assign(order.begin(), order.begin() + expansions_);
    }
    WordGraph grown = h.graph.with_word();
    std::vector<double> head_row = row_values(sc.scores.head_row);
    std::vector<double> head_col = row_values(sc.scores.head_col);
    for (int c : chosen) {
      EdgeSelection sel = select_top_c_edges(word, head_row, head_col, c);
      Hypothesis child = h;
      child.graph = add_dependencies(grown, sel.edges);
      child.counts.push_back(c);
      child.log_prob += log_pi[c];
      child.count_log_prob += log_pi[c];
      child.truncated = child.truncated || sel.truncated;
      child.first = sc.first;
      child.first_positions.push_back(k);
      children.push_back(std::move(child));
    }
  }
  beams_ = std::move(children);
  prune();
}

void BeamSearch::expand_forced(int token, std::span<const Edge> edges) {
  ad::NoGradGuard no_grad;
  ad::NoDropoutGuard no_dropout;
  const int c = static_cast<int>(edges.size());
  if (c > model_.config().max_count) throw std::invalid_argument("forced edge count exceeds C");
  for (auto& h : beams_) {
    const int k = h.state.length;
    Scored sc = score_structure(h, token);
    double lp = sc.scores.count_log_probs.value()(0, c);
    h.graph = add_dependencies(h.graph.with_word(), edges);
    h.counts.push_back(c);
    h.log_prob += lp;
    h.count_log_prob += lp;
    h.first = sc.first;
    h.first_positions.push_back(k);
  }
  prune();
}

void BeamSearch::prune() {
  std::sort(beams_.begin(), beams_.end(), hypothesis_before);
  if (static_cast<int>(beams_.size()) > config_.beam_width) beams_.resize(config_.beam_width);
}

void BeamSearch::advance(int token, const WordAlignment& alignment) {
  ad::NoGradGuard no_grad;
  ad::NoDropoutGuard no_dropout;
  for (auto& h : beams_) {
    const int t = h.state.length;
    if (t > alignment.num_tokens() || alignment.word_of_token(t) != h.graph.num_words()) {
      throw std::logic_error("advance: alignment does not match the hypothesis");
    }
    FeatureTape tape;
    if (alignment.starts_word(t)) {
      tape = build_feature_tape(h.graph, alignment, t, model_.config().tape);
    } else {
      // Same word as position t - 1, so the graph view is unchanged.
      tape = h.last_tape;
      tape.columns.push_back(tape.columns.back());
    }
    model_.forward_block(h.state, {&token, 1}, {&tape, 1}, tables_);
    h.last_tape = std::move(tape);
  }
}

void BeamSearch::score_end(int eos_id) {
  for (auto& h : beams_) {
    double lp = h.state.log_probs.value()(h.state.length - 1, eos_id);
    h.log_prob += lp;
    h.token_log_prob += lp;
  }
  std::sort(beams_.begin(), beams_.end(), hypothesis_before);
}

double BeamSearch::log_marginal() const {
  std::vector<double> xs;
  for (const auto& h : beams_) xs.push_back(h.log_prob);
  return log_sum_exp(xs);
}

const Hypothesis& BeamSearch::best() const {
  return *std::min_element(beams_.begin(), beams_.end(), hypothesis_before);
}

namespace {

void check_sentence(std::span<const int> ids, const WordAlignment& alignment) {
  if (static_cast<int>(ids.size()) != alignment.num_tokens() + 1) {
    throw std::invalid_argument("ids must be BOS plus one id per aligned token");
  }
}

BeamSearch run_beam(const GiLTModel& model, std::span<const int> ids,
                    const WordAlignment& alignment, const BeamConfig& config) {
  check_sentence(ids, alignment);
  BeamSearch bs(model, config, static_cast<int>(ids.size()));
  for (int t = 1; t < static_cast<int>(ids.size()); ++t) {
    bs.score_token(ids[t]);
    if (alignment.starts_word(t)) bs.expand(ids[t]);
    bs.advance(ids[t], alignment);
  }
  return bs;
}

}  // namespace

MarginalResult marginal_log_prob(const GiLTModel& model, std::span<const int> ids,
                                 const WordAlignment& alignment, const BeamConfig& config,
                                 int eos_id, bool include_end) {
  BeamSearch bs = run_beam(model, ids, alignment, config);
  if (include_end) bs.score_end(eos_id);
  return {bs.log_marginal(), bs.beams()};
}

namespace {

double joint_from_pass(const TeacherForcedPass& pass, std::span<const int> ids,
                       std::span<const int> counts, int eos_id, bool include_end) {
  const Matrix& lp = pass.state.log_probs.value();
  double total = 0.0;
  for (int t = 1; t < static_cast<int>(ids.size()); ++t) total += lp(t - 1, ids[t]);
  if (include_end) total += lp(static_cast<int>(ids.size()) - 1, eos_id);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    total += pass.words[i].count_log_probs.value()(0, counts[i]);
  }
  return total;
}

}  // namespace

double score_joint(const GiLTModel& model, std::span<const int> ids,
                   const WordAlignment& alignment, const WordGraph& graph,
                   std::span<const int> counts, int eos_id, bool include_end) {
  check_sentence(ids, alignment);
  if (static_cast<int>(counts.size()) != alignment.num_words()) {
    throw std::invalid_argument("score_joint: one count per word required");
  }
  ad::NoGradGuard no_grad;
  ad::NoDropoutGuard no_dropout;
  AttentionTables tables = model.prepare(static_cast<int>(ids.size()));
  auto tapes = tapes_for_graph(graph, alignment, model.config().tape);
  TeacherForcedPass pass = run_teacher_forced(model, tables, ids, alignment, tapes);
  return joint_from_pass(pass, ids, counts, eos_id, include_end);
}

double oracle_exact_marginal(const GiLTModel& model, std::span<const int> ids,
                             const WordAlignment& alignment, int eos_id, double max_structures) {
  check_sentence(ids, alignment);
  const int m = alignment.num_words();
  const int classes = model.config().max_count + 1;
  if (std::pow(static_cast<double>(classes), m) > max_structures) {
    throw OracleTooLargeError("oracle refuses " + std::to_string(classes) + "^" +
                              std::to_string(m) + " structures");
  }
  ad::NoGradGuard no_grad;
  ad::NoDropoutGuard no_dropout;
  AttentionTables tables = model.prepare(static_cast<int>(ids.size()));
  const TapeSettings& settings = model.config().tape;
  std::vector<double> leaves;
  std::vector<int> counts;

  std::function<void(int, const WordGraph&)> visit = [&](int word, const WordGraph& graph) {
    auto tapes = tapes_for_graph(graph, alignment, settings);
    TeacherForcedPass pass = run_teacher_forced(model, tables, ids, alignment, tapes);
    if (word > m) {
      leaves.push_back(joint_from_pass(pass, ids, counts, eos_id, true));
      return;
    }
    const WordScores& ws = pass.words[word - 1];
    for (int c = 0; c < classes; ++c) {
      EdgeSelection sel = select_top_c_edges(ws, c);
      counts.push_back(c);
      visit(word + 1, add_dependencies(graph, sel.edges));
      counts.pop_back();
    }
  };
  visit(1, WordGraph(m));
  return log_sum_exp(leaves);
}

PerplexityResult perplexity_upper_bound(const GiLTModel& model,
                                        std::span<const TrainingExample> corpus,
                                        const BeamConfig& config, int eos_id) {
  PerplexityResult r;
  for (const auto& ex : corpus) {
    r.total_log_prob += marginal_log_prob(model, ex.ids, ex.alignment, config, eos_id).log_prob;
    r.tokens += ex.num_tokens() + 1;
  }
  r.perplexity = r.tokens > 0 ? std::exp(-r.total_log_prob / static_cast<double>(r.tokens)) : 1.0;
  return r;
}

WordGraph parse(const GiLTModel& model, std::span<const int> ids, const WordAlignment& alignment,
                const BeamConfig& config, int eos_id) {
  BeamSearch bs = run_beam(model, ids, alignment, config);
  bs.score_end(eos_id);
  return bs.best().graph;
}

std::vector<double> conditional_log_probs(const GiLTModel& model, std::span<const int> ids,
                                          const WordAlignment& alignment, const BeamConfig& config,
                                          ConditionalMode mode) {
  check_sentence(ids, alignment);
  BeamSearch bs(model, config, static_cast<int>(ids.size()));
  std::vector<double> out;
  auto lse_of = [](const std::vector<Hypothesis>& beams, auto field) {
    std::vector<double> xs;
    for (const auto& h : beams) xs.push_back(field(h));
    return log_sum_exp(xs);
  };
  for (int t = 1; t < static_cast<int>(ids.size()); ++t) {
    double before = bs.log_marginal();
    bs.score_token(ids[t]);
    if (mode == ConditionalMode::kRemarginalize) out.push_back(bs.log_marginal() - before);
    if (alignment.starts_word(t)) bs.expand(ids[t]);
    bs.advance(ids[t], alignment);
  }
  if (mode == ConditionalMode::kFinalBeams) {
    for (int t = 1; t < static_cast<int>(ids.size()); ++t) {
      double after = lse_of(bs.beams(), [&](const Hypothesis& h) { return h.after_token[t - 1]; });
      double before = lse_of(bs.beams(), [&](const Hypothesis& h) { return h.before_token[t - 1]; });
      out.push_back(after - before);
    }
  }
  return out;
}

GenerationResult generate(const GiLTModel& model, const std::function<bool(int)>& starts_word,
                          std::span<const int> prompt, const BeamConfig& config,
                          const GenerateOptions& options, int eos_id) {
  if (options.max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
  if (static_cast<int>(prompt.size()) > options.max_tokens) {
    throw std::invalid_argument("prompt longer than max_tokens");
  }
  BeamSearch bs(model, config, options.max_tokens + 1);
  const int vocab = model.config().vocab_size;
  GenerationResult r;
  std::vector<std::pair<int, int>> spans;
  for (int t = 1; t <= options.max_tokens; ++t) {
    int token;
    if (t <= static_cast<int>(prompt.size())) {
      token = prompt[t - 1];
    } else {
      std::vector<double> weights;
      for (const auto& h : bs.beams()) weights.push_back(h.log_prob);
      double norm = log_sum_exp(weights);
      Eigen::RowVectorXd mix = Eigen::RowVectorXd::Zero(vocab);
      for (const auto& h : bs.beams()) {
        const Matrix& lp = h.state.log_probs.value();
        mix += std::exp(h.log_prob - norm) * lp.row(lp.rows() - 1).array().exp().matrix();
      }
      mix(Vocabulary::kBos) = 0.0;
      if (!options.allow_end) mix(eos_id) = 0.0;
      if (config.temperature == 0.0) {
        Eigen::Index best = 0;
        mix.maxCoeff(&best);
        token = static_cast<int>(best);
      } else {
        std::vector<double> p(vocab);
        for (int v = 0; v < vocab; ++v) {
          p[v] = mix(v) > 0.0 ? std::pow(mix(v), 1.0 / config.temperature) : 0.0;
        }
        std::discrete_distribution<int> dist(p.begin(), p.end());
        token = dist(bs.rng());
      }
    }
    if (token == eos_id) {
      bs.score_end(eos_id);
      r.ended = true;
      break;
    }
    bs.score_token(token);
    bool start = spans.empty() || starts_word(token);
    if (start) {
      spans.emplace_back(t - 1, t);
    } else {
      spans.back().second = t;
    }
    r.ids.push_back(token);
    r.alignment = WordAlignment::from_spans(spans);
    if (start) bs.expand(token);
    bs.advance(token, r.alignment);
  }
  r.truncated = !r.ended;
  const Hypothesis& best = bs.best();
  r.graph = best.graph;
  r.counts = best.counts;
  r.log_prob = best.log_prob;
  return r;
}

nlohmann::json MinPairReport::to_json() const {
  nlohmann::json tags = nlohmann::json::object();
  for (const auto& [tag, ct] : per_tag) {
    tags[tag] = {{"correct", ct.first},
                 {"total", ct.second},
                 {"accuracy", ct.second ? static_cast<double>(ct.first) / ct.second : 0.0}};
  }
  return {{"pairs", outcomes.size()},
          {"accuracy", accuracy},
          {"macro_accuracy", macro_accuracy},
          {"per_tag", tags}};
}

MinPairReport minpair_eval(const GiLTModel& model, const Tokenizer& tokenizer,
                           const Vocabulary& vocab, std::span<const MinimalPair> pairs,
                           const BeamConfig& config) {
  MinPairReport r;
  auto score = [&](const std::string& text) {
    CorpusExample ex = example_from_text("pair", text, tokenizer);
    if (ex.tokens.empty()) throw CorpusError("minimal pair sentence is empty");
    auto ids = vocab.encode(ex.tokens, ex.word_spans);
    return marginal_log_prob(model, ids, ex.alignment(), config, Vocabulary::kEos).log_prob;
  };
  int correct = 0;
  for (const auto& p : pairs) {
    MinPairOutcome o;
    o.tag = p.tag;
    o.good = score(p.good);
    o.bad = score(p.bad);
    o.correct = o.good > o.bad;
    correct += o.correct;
    auto& ct = r.per_tag[p.tag];
    ct.first += o.correct;
    ct.second += 1;
    r.outcomes.push_back(o);
  }
  if (!pairs.empty()) r.accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
  double macro = 0.0;
  for (const auto& [tag, ct] : r.per_tag) macro += static_cast<double>(ct.first) / ct.second;
  if (!r.per_tag.empty()) r.macro_accuracy = macro / static_cast<double>(r.per_tag.size());
  return r;
}

}  // namespace gilt
