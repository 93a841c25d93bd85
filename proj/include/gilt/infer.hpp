#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gilt/corpus.hpp"
#include "gilt/graph.hpp"
#include "gilt/model.hpp"

namespace gilt {

struct BeamConfig {
  int beam_width = 16;
  int count_expansions = 0;  // K_c; 0 means min(4, C + 1)
  double temperature = 0.0;  // token choice during generation; 0 is greedy
  bool sample_counts = false;  // draw one count per hypothesis instead of the top K_c
  std::uint64_t seed = 1;

  int resolved_expansions(int max_count) const;
  void validate(int max_count) const;
};

struct EdgeSelection {
  std::vector<Edge> edges;
  bool truncated = false;  // c exceeded the 2i - 1 valid candidates
};

// head_row[a] = p(i -> a) and head_col[a] = p(a -> i) for a = 0..i. Root as
// dependent and the self-loop are never selected. Ties go to the higher
// probability, then the smaller other endpoint, then i as head.
EdgeSelection select_top_c_edges(int word, std::span<const double> head_row,
                                 std::span<const double> head_col, int c);
EdgeSelection select_top_c_edges(const WordScores& scores, int c);

struct Hypothesis {
  WordGraph graph;
  std::vector<int> counts;  // counts[i - 1] chosen for word i
  double log_prob = 0.0;    // token terms + count terms
  double token_log_prob = 0.0;
  double count_log_prob = 0.0;
  bool truncated = false;
  // log_prob just before and just after scoring token t (index t - 1).
  std::vector<double> before_token;
  std::vector<double> after_token;

  DecoderState state;
  StructureReps first;  // first-stage biaffine rows for root and words so far
  std::vector<int> first_positions;
  FeatureTape last_tape;  // tape of position state.length - 1
};

// Beam over structures for one token sequence. Tokens are fed one at a time:
// score_token adds log p(x_t | x_<t, G_{t-1}) to every hypothesis, expand runs
// the structure heads when x_t starts a word, advance runs the transformer on
// x_t with each hypothesis's own tape.
class BeamSearch {
 public:
  BeamSearch(const GiLTModel& model, const BeamConfig& config, int max_positions);

  const std::vector<Hypothesis>& beams() const { return beams_; }
  int position() const { return beams_.front().state.length; }

  void score_token(int token);
  void expand(int token);
  // Structure step with a prescribed edge set instead of the predicted one;
  // the count term of |edges| is still added. Used for gold-forced decoding.
  void expand_forced(int token, std::span<const Edge> edges);
  // alignment must cover the position being processed and map it to the
  // newest word of every hypothesis.
  void advance(int token, const WordAlignment& alignment);
  void score_end(int eos_id);

  double log_marginal() const;
  const Hypothesis& best() const;
  const GiLTModel& model() const { return model_; }
  const AttentionTables& tables() const { return tables_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  void prune();
  struct Scored {
    StructureReps first;
    WordScores scores;
  };
  Scored score_structure(const Hypothesis& h, int token) const;

  const GiLTModel& model_;
  BeamConfig config_;
  AttentionTables tables_;
  std::vector<Hypothesis> beams_;
  std::mt19937_64 rng_;
  int expansions_;
};

// Strict ordering used for pruning: higher log_prob first, then the count
// sequence, then the edge list, both lexicographically.
bool hypothesis_before(const Hypothesis& a, const Hypothesis& b);

struct MarginalResult {
  double log_prob = 0.0;  // log-sum-exp over final beams
  std::vector<Hypothesis> beams;
};

// ids[0] is BOS. The end-of-sentence term is included unless include_end is
// false.
MarginalResult marginal_log_prob(const GiLTModel& model, std::span<const int> ids,
                                 const WordAlignment& alignment, const BeamConfig& config,
                                 int eos_id = 1, bool include_end = true);

// Recomputes log p(x, y) of one structure from scratch with a teacher-forced
// pass: token terms under the tapes of `graph` plus the count terms of
// `counts`.
double score_joint(const GiLTModel& model, std::span<const int> ids,
                   const WordAlignment& alignment, const WordGraph& graph,
                   std::span<const int> counts, int eos_id = 1, bool include_end = true);

class OracleTooLargeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exact log p(x) over the restricted structure space: every per-word count
// assignment, each graph materialised by select_top_c_edges. Refuses
// instances with (C+1)^M > max_structures.
double oracle_exact_marginal(const GiLTModel& model, std::span<const int> ids,
                             const WordAlignment& alignment, int eos_id = 1,
                             double max_structures = 1e5);

struct PerplexityResult {
  double perplexity = 0.0;
  double total_log_prob = 0.0;
  long tokens = 0;  // predicted tokens, one end-of-sentence per sentence included
};

PerplexityResult perplexity_upper_bound(const GiLTModel& model,
                                        std::span<const TrainingExample> corpus,
                                        const BeamConfig& config, int eos_id = 1);

WordGraph parse(const GiLTModel& model, std::span<const int> ids, const WordAlignment& alignment,
                const BeamConfig& config, int eos_id = 1);

enum class ConditionalMode {
  kRemarginalize,  // log p(x_<=t) - log p(x_<t), each summed over the beam alive at that point
  kFinalBeams,     // both prefixes summed over the hypotheses that survive to the end
};

// log p(x_t | x_<t) for t = 1..N.
std::vector<double> conditional_log_probs(const GiLTModel& model, std::span<const int> ids,
                                          const WordAlignment& alignment, const BeamConfig& config,
                                          ConditionalMode mode = ConditionalMode::kRemarginalize);

struct GenerateOptions {
  int max_tokens = 32;
  bool allow_end = true;  // false keeps generating until max_tokens
};

struct GenerationResult {
  std::vector<int> ids;  // generated tokens (prompt included, BOS excluded)
  WordAlignment alignment;
  WordGraph graph;  // structure of the best final hypothesis
  std::vector<int> counts;
  double log_prob = 0.0;
  bool ended = false;       // end-of-sentence emitted
  bool truncated = false;   // stopped at max_tokens
};

// Next tokens come from the beam-posterior mixture of the hypotheses'
// next-token distributions. starts_word decides word boundaries; the first
// token always starts a word. BOS is never produced.
GenerationResult generate(const GiLTModel& model, const std::function<bool(int)>& starts_word,
                          std::span<const int> prompt, const BeamConfig& config,
                          const GenerateOptions& options, int eos_id = 1);

struct MinPairOutcome {
  std::string tag;
  double good = 0.0;
  double bad = 0.0;
  bool correct = false;  // strictly greater; ties fail
};

struct MinPairReport {
  std::vector<MinPairOutcome> outcomes;
  double accuracy = 0.0;
  std::map<std::string, std::pair<int, int>> per_tag;  // tag -> (correct, total)
  double macro_accuracy = 0.0;  // mean of per-tag accuracies

  nlohmann::json to_json() const;
};

MinPairReport minpair_eval(const GiLTModel& model, const Tokenizer& tokenizer,
                           const Vocabulary& vocab, std::span<const MinimalPair> pairs,
                           const BeamConfig& config);

}  // namespace gilt
