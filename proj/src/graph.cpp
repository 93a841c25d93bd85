#include "gilt/graph.hpp"

#include <algorithm>
#include <functional>
#include <queue>

namespace gilt {

namespace {

void check_word(const WordGraph& g, WordIndex w, bool allow_root) {
  if (w < (allow_root ? 0 : 1) || w > g.num_words()) {
    throw GraphError("word index " + std::to_string(w) + " out of range for graph with " +
                     std::to_string(g.num_words()) + " words");
  }
}

struct Arc {
  WordIndex to;
  int cost;
};

std::vector<std::vector<Arc>> bidirectional_arcs(const WordGraph& g, const FeatureWeights& w) {
  std::vector<std::vector<Arc>> adj(g.num_words() + 1);
  for (const Edge& e : g.edges()) {
    adj[e.head].push_back({e.dependent, w.m_out});
    adj[e.dependent].push_back({e.head, w.m_in});
  }
  return adj;
}

}  // namespace

WordGraph::WordGraph(int num_words) : num_words_(num_words) {
  if (num_words < 0) throw GraphError("negative word count");
}

WordGraph::WordGraph(int num_words, std::span<const Edge> edges)
    : WordGraph(add_dependencies(WordGraph(num_words), edges)) {}

bool WordGraph::has_edge(WordIndex head, WordIndex dependent) const {
  return edges_.contains(Edge{head, dependent});
}

WordGraph WordGraph::with_word() const { return with_word_count(num_words_ + 1); }

WordGraph WordGraph::with_word_count(int num_words) const {
  if (num_words < num_words_) throw GraphError("cannot shrink a graph with with_word_count");
  WordGraph g = *this;
  g.num_words_ = num_words;
  return g;
}

WordGraph WordGraph::restricted_to(int n) const {
  WordGraph g(std::min(n, num_words_));
  for (const Edge& e : edges_) {
    if (e.head <= n && e.dependent <= n) g.edges_.insert(e);
  }
  return g;
}

WordGraph add_dependencies(const WordGraph& graph, std::span<const Edge> new_edges) {
  WordGraph out = graph;
  for (const Edge& e : new_edges) {
    if (e.dependent == 0) {
      throw GraphError("edge (" + std::to_string(e.head) + ", 0) has the root as dependent");
    }
    if (e.head == e.dependent) {
      throw GraphError("self-loop on word " + std::to_string(e.head));
    }
    check_word(graph, e.head, true);
    check_word(graph, e.dependent, false);
    out.edges_.insert(e);
  }
  return out;
}

void check_weights(const FeatureWeights& w) {
  if (w.m_in <= 0 || w.m_out <= 0) throw std::invalid_argument("feature weights must be positive");
  bool unweighted = w.m_in == 1 && w.m_out == 1;
  if (!unweighted && !(w.m_in < w.m_out)) {
    throw std::invalid_argument("feature weights require m_in < m_out");
  }
}

int weighted_degree(const WordGraph& graph, WordIndex word, const FeatureWeights& w) {
  check_word(graph, word, false);
  int c_in = 0;
  int c_out = 0;
  for (const Edge& e : graph.edges()) {
    if (e.head == word) ++c_out;
    if (e.dependent == word) ++c_in;
  }
  return w.m_out * c_out + w.m_in * c_in;
}

std::vector<Distance> weighted_distances_from(const WordGraph& graph, WordIndex src,
                                              const FeatureWeights& w) {
  check_word(graph, src, true);
  auto adj = bidirectional_arcs(graph, w);
  std::vector<Distance> dist(graph.num_words() + 1);
  using Item = std::pair<int, WordIndex>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[src] = 0;
  queue.push({0, src});
  while (!queue.empty()) {
    auto [d, u] = queue.top();
    queue.pop();
    if (d > *dist[u]) continue;
    for (const Arc& a : adj[u]) {
      int nd = d + a.cost;
      if (!dist[a.to] || nd < *dist[a.to]) {
        dist[a.to] = nd;
        queue.push({nd, a.to});
      }
    }
  }
  return dist;
}

Distance weighted_distance(const WordGraph& graph, WordIndex src, WordIndex dst,
                           const FeatureWeights& w) {
  check_word(graph, dst, true);
  return weighted_distances_from(graph, src, w)[dst];
}

std::vector<int> all_depths(const WordGraph& graph) {
  std::vector<std::vector<WordIndex>> adj(graph.num_words() + 1);
  for (const Edge& e : graph.edges()) {
    adj[e.head].push_back(e.dependent);
    adj[e.dependent].push_back(e.head);
  }
  std::vector<int> depth(graph.num_words() + 1, 0);
  std::vector<bool> visited(graph.num_words() + 1, false);
  std::queue<std::pair<WordIndex, int>> queue;
  visited[0] = true;
  queue.push({0, 0});
  while (!queue.empty()) {
    auto [u, hops] = queue.front();
    queue.pop();
    if (u != 0) depth[u] = hops + 1;
    for (WordIndex v : adj[u]) {
      if (!visited[v]) {
        visited[v] = true;
        queue.push({v, hops + 1});
      }
    }
  }
  return depth;
}

int bucketize(Distance value, int cap) {
  if (!value) return cap + 1;
  return std::min(*value, cap);
}

FeatureWeights TapeSettings::effective_degree_weights() const {
  return ablation.unweight_degree ? FeatureWeights::unweighted() : degree_weights;
}

FeatureWeights TapeSettings::effective_distance_weights() const {
  return ablation.unweight_distance ? FeatureWeights::unweighted() : distance_weights;
}

WordAlignment WordAlignment::from_spans(std::span<const std::pair<int, int>> spans) {
  WordAlignment a;
  a.word_of_token_.push_back(0);
  a.first_token_.push_back(0);
  int expected = 0;
  for (std::size_t w = 0; w < spans.size(); ++w) {
    auto [begin, end] = spans[w];
    if (begin != expected || end <= begin) {
      throw std::invalid_argument("word span " + std::to_string(w) +
                                  " is empty or not contiguous with the previous span");
    }
    a.first_token_.push_back(begin + 1);
    for (int t = begin; t < end; ++t) a.word_of_token_.push_back(static_cast<int>(w) + 1);
    expected = end;
  }
  return a;
}

WordIndex WordAlignment::word_of_token(int token) const {
  if (token < 1 || token > num_tokens()) {
    throw std::out_of_range("token " + std::to_string(token) + " out of range");
  }
  return word_of_token_[token];
}

int WordAlignment::first_token(WordIndex word) const {
  if (word < 1 || word > num_words()) {
    throw std::out_of_range("word " + std::to_string(word) + " out of range");
  }
  return first_token_[word];
}

bool WordAlignment::starts_word(int token) const {
  return first_token(word_of_token(token)) == token;
}

FeatureTape bos_tape() { return FeatureTape{{TapeColumn{0, 0, 0}}}; }

FeatureTape build_feature_tape(const WordGraph& graph, const WordAlignment& alignment,
                               int current_token, const TapeSettings& settings) {
  if (current_token < 1 || current_token > alignment.num_tokens()) {
    throw std::invalid_argument("token " + std::to_string(current_token) +
                                " is not covered by the alignment");
  }
  WordIndex current_word = alignment.word_of_token(current_token);
  if (graph.num_words() < current_word) {
    throw std::invalid_argument("graph has fewer words than the alignment requires");
  }
  WordGraph g = graph.restricted_to(current_word);
  const auto& caps = settings.caps;
  const auto& ab = settings.ablation;

  std::vector<TapeColumn> per_word(current_word + 1, TapeColumn{0, 0, 0});
  auto dist = weighted_distances_from(g, current_word, settings.effective_distance_weights());
  auto depth = all_depths(g);
  FeatureWeights dw = settings.effective_degree_weights();
  for (WordIndex w = 1; w <= current_word; ++w) {
    per_word[w] = {
        ab.no_degree ? 0 : bucketize(weighted_degree(g, w, dw), caps.degree_cap),
        ab.no_distance ? 0 : bucketize(dist[w], caps.distance_cap),
        ab.no_depth ? 0 : bucketize(depth[w], caps.depth_cap),
    };
  }

  FeatureTape tape;
  tape.columns.reserve(current_token + 1);
  tape.columns.push_back({0, 0, 0});
  for (int t = 1; t <= current_token; ++t) {
    tape.columns.push_back(per_word[alignment.word_of_token(t)]);
  }
  return tape;
}

std::vector<FeatureTape> tapes_for_graph(const WordGraph& graph, const WordAlignment& alignment,
                                         const TapeSettings& settings) {
  WordGraph g = graph.num_words() < alignment.num_words()
                    ? graph.with_word_count(alignment.num_words())
                    : graph;
  std::vector<FeatureTape> tapes;
  tapes.reserve(alignment.num_tokens() + 1);
  tapes.push_back(bos_tape());
  for (int t = 1; t <= alignment.num_tokens(); ++t) {
    tapes.push_back(build_feature_tape(g, alignment, t, settings));
  }
  return tapes;
}

FeatureMaxima feature_maxima(const WordGraph& graph, const TapeSettings& settings) {
  FeatureMaxima m;
  FeatureWeights dw = settings.effective_degree_weights();
  FeatureWeights sw = settings.effective_distance_weights();
  for (WordIndex i = 1; i <= graph.num_words(); ++i) {
    WordGraph g = graph.restricted_to(i);
    auto dist = weighted_distances_from(g, i, sw);
    auto depth = all_depths(g);
    for (WordIndex w = 1; w <= i; ++w) {
      m.degree = std::max(m.degree, weighted_degree(g, w, dw));
      if (dist[w]) {
        m.distance = std::max(m.distance, *dist[w]);
      } else {
        m.any_unreachable = true;
      }
      m.depth = std::max(m.depth, depth[w]);
    }
  }
  return m;
}

void merge_maxima(FeatureMaxima& into, const FeatureMaxima& other) {
  into.degree = std::max(into.degree, other.degree);
  into.distance = std::max(into.distance, other.distance);
  into.depth = std::max(into.depth, other.depth);
  into.any_unreachable = into.any_unreachable || other.any_unreachable;
}

void check_caps(const FeatureMaxima& maxima, const FeatureCaps& caps) {
  auto check = [](const char* name, int value, int cap) {
    if (value > cap) {
      throw std::invalid_argument(std::string(name) + " cap " + std::to_string(cap) +
                                  " is below the corpus maximum " + std::to_string(value));
    }
  };
  check("degree", maxima.degree, caps.degree_cap);
  check("distance", maxima.distance, caps.distance_cap);
  check("depth", maxima.depth, caps.depth_cap);
}

std::string to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kCycle: return "cycle";
    case ViolationKind::kRootAsDependent: return "root-as-dependent";
    case ViolationKind::kDuplicateEdge: return "duplicate-edge";
    case ViolationKind::kSelfLoop: return "self-loop";
    case ViolationKind::kOutOfRange: return "out-of-range";
  }
  return "unknown";
}

std::vector<Violation> validate_edges(int num_words, std::span<const Edge> edges) {
  std::vector<Violation> out;
  std::set<Edge> seen;
  std::vector<std::vector<WordIndex>> adj(num_words + 1);
  for (const Edge& e : edges) {
    std::string name = "(" + std::to_string(e.head) + "," + std::to_string(e.dependent) + ")";
    if (e.head < 0 || e.head > num_words || e.dependent < 0 || e.dependent > num_words) {
      out.push_back({ViolationKind::kOutOfRange, "edge " + name + " has an endpoint out of range"});
      continue;
    }
    if (e.dependent == 0) {
      out.push_back({ViolationKind::kRootAsDependent, "edge " + name + " has the root as dependent"});
    }
    if (e.head == e.dependent) {
      out.push_back({ViolationKind::kSelfLoop, "edge " + name + " is a self-loop"});
      continue;
    }
    if (!seen.insert(e).second) {
      out.push_back({ViolationKind::kDuplicateEdge, "edge " + name + " appears twice"});
      continue;
    }
    adj[e.head].push_back(e.dependent);
  }

  // Colour DFS for directed cycles.
  std::vector<int> colour(num_words + 1, 0);
  bool cyclic = false;
  std::function<void(int)> visit = [&](int u) {
    colour[u] = 1;
    for (int v : adj[u]) {
      if (colour[v] == 1) cyclic = true;
      else if (colour[v] == 0) visit(v);
    }
    colour[u] = 2;
  };
  for (int u = 0; u <= num_words && !cyclic; ++u) {
    if (colour[u] == 0) visit(u);
  }
  if (cyclic) out.push_back({ViolationKind::kCycle, "graph contains a directed cycle"});
  return out;
}

std::vector<Violation> validate_graph(const WordGraph& graph) {
  std::vector<Edge> edges(graph.edges().begin(), graph.edges().end());
  return validate_edges(graph.num_words(), edges);
}

int backward_edge_count(const WordGraph& graph, WordIndex word) {
  int n = 0;
  for (const Edge& e : graph.edges()) {
    if (e.head == word && e.dependent < word) ++n;
    if (e.dependent == word && e.head < word) ++n;
  }
  return n;
}

}  // namespace gilt
