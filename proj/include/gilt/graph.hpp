#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gilt {

// Word index 0 is the virtual root; words are numbered 1..num_words.
using WordIndex = int;

struct Edge {
  WordIndex head = 0;
  WordIndex dependent = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class GraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Incrementally built word-level dependency graph. Values are immutable from
// the outside: every update returns a new graph.
class WordGraph {
 public:
  WordGraph() = default;
  explicit WordGraph(int num_words);
  WordGraph(int num_words, std::span<const Edge> edges);

  int num_words() const { return num_words_; }
  const std::set<Edge>& edges() const { return edges_; }
  std::size_t edge_count() const { return edges_.size(); }
  bool has_edge(WordIndex head, WordIndex dependent) const;

  // Graph with one more (isolated) word appended.
  WordGraph with_word() const;
  WordGraph with_word_count(int num_words) const;

  // Sub-graph over root + words 1..n keeping edges with both endpoints inside.
  WordGraph restricted_to(int n) const;

  friend bool operator==(const WordGraph&, const WordGraph&) = default;

 private:
  friend WordGraph add_dependencies(const WordGraph&, std::span<const Edge>);

  int num_words_ = 0;
  std::set<Edge> edges_;
};

// Union of old and new edges. Throws GraphError for root-as-dependent,
// self-loops and out-of-range endpoints.
WordGraph add_dependencies(const WordGraph& graph, std::span<const Edge> new_edges);

// Integer weights for in- and out-going edges. Both 1 when weighting is
// ablated.
struct FeatureWeights {
  int m_in = 1;
  int m_out = 10;

  static FeatureWeights unweighted() { return {1, 1}; }
  friend bool operator==(const FeatureWeights&, const FeatureWeights&) = default;
};

void check_weights(const FeatureWeights& w);

struct FeatureCaps {
  int degree_cap = 64;
  int distance_cap = 64;
  int depth_cap = 32;

  int unreachable_bucket() const { return distance_cap + 1; }
  friend bool operator==(const FeatureCaps&, const FeatureCaps&) = default;
};

// nullopt encodes "unreachable".
using Distance = std::optional<int>;

int weighted_degree(const WordGraph& graph, WordIndex word, const FeatureWeights& w);

// Cheapest path cost from src to dst when every edge may be walked both
// ways: m_out along its direction, m_in against it.
Distance weighted_distance(const WordGraph& graph, WordIndex src, WordIndex dst,
                           const FeatureWeights& w);

// Single-source variant; entry i is the distance from src to word i.
std::vector<Distance> weighted_distances_from(const WordGraph& graph, WordIndex src,
                                              const FeatureWeights& w);

// depth[w] = BFS hop count from the root over undirected edges, plus one.
// depth[w] = 0 for words disconnected from the root. Index 0 (root) is unused
// and left at 0.
std::vector<int> all_depths(const WordGraph& graph);

int bucketize(Distance value, int cap);
inline int bucketize(int value, int cap) { return bucketize(Distance{value}, cap); }

// Which rows / weightings of the tape are switched off.
struct Ablation {
  bool no_degree = false;
  bool no_distance = false;
  bool no_depth = false;
  bool unweight_degree = false;
  bool unweight_distance = false;

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct TapeSettings {
  FeatureWeights degree_weights;
  FeatureWeights distance_weights;
  FeatureCaps caps;
  Ablation ablation;

  // Weights after applying the unweight-* ablations.
  FeatureWeights effective_degree_weights() const;
  FeatureWeights effective_distance_weights() const;
};

// Maps tokens to words. Tokens are numbered 1..num_tokens (position 0 is the
// BOS sentinel and belongs to no word).
class WordAlignment {
 public:
  WordAlignment() = default;
  // spans are half-open [begin, end) ranges over 0-based token offsets, as
  // stored in the corpus; they must be contiguous, non-empty and covering.
  static WordAlignment from_spans(std::span<const std::pair<int, int>> spans);

  int num_tokens() const { return static_cast<int>(word_of_token_.size()) - 1; }
  int num_words() const { return static_cast<int>(first_token_.size()) - 1; }
  // token in 1..num_tokens
  WordIndex word_of_token(int token) const;
  // word in 1..num_words
  int first_token(WordIndex word) const;
  bool starts_word(int token) const;

  friend bool operator==(const WordAlignment&, const WordAlignment&) = default;

 private:
  std::vector<WordIndex> word_of_token_;  // [0] = 0 for BOS
  std::vector<int> first_token_;          // [0] = 0 for root / BOS
};

// One bucketed (degree, distance, depth) triple.
using TapeColumn = std::array<int, 3>;
enum TapeRow : int { kDegreeRow = 0, kDistanceRow = 1, kDepthRow = 2 };

// Feature tape for one token position t: columns 0..t, column 0 being the BOS
// sentinel (all zeros).
struct FeatureTape {
  std::vector<TapeColumn> columns;

  int size() const { return static_cast<int>(columns.size()); }
  friend bool operator==(const FeatureTape&, const FeatureTape&) = default;
};

// Tape for token `current_token` (1-based). The graph must already contain
// the edges of word(current_token); words after it are ignored.
FeatureTape build_feature_tape(const WordGraph& graph, const WordAlignment& alignment,
                               int current_token, const TapeSettings& settings);

// Tape of the BOS position.
FeatureTape bos_tape();

// Tapes of positions 0..num_tokens, position t reading the graph restricted
// to words up to word(t). The graph is padded with isolated words when it
// covers fewer words than the alignment.
std::vector<FeatureTape> tapes_for_graph(const WordGraph& graph, const WordAlignment& alignment,
                                         const TapeSettings& settings);

// Largest raw (unbucketed) feature values seen by any tape of the graph,
// i.e. over every prefix restriction to words 1..i.
struct FeatureMaxima {
  int degree = 0;
  int distance = 0;  // finite distances only
  int depth = 0;
  bool any_unreachable = false;
};

FeatureMaxima feature_maxima(const WordGraph& graph, const TapeSettings& settings);
void merge_maxima(FeatureMaxima& into, const FeatureMaxima& other);
// Throws std::invalid_argument naming the first cap below its maximum.
void check_caps(const FeatureMaxima& maxima, const FeatureCaps& caps);

enum class ViolationKind { kCycle, kRootAsDependent, kDuplicateEdge, kSelfLoop, kOutOfRange };

struct Violation {
  ViolationKind kind;
  std::string message;
};

std::string to_string(ViolationKind kind);

std::vector<Violation> validate_edges(int num_words, std::span<const Edge> edges);
std::vector<Violation> validate_graph(const WordGraph& graph);

// Number of edges joining `word` to the root or to earlier words.
int backward_edge_count(const WordGraph& graph, WordIndex word);

}  // namespace gilt
