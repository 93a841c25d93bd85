#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "gilt/corpus.hpp"
#include "gilt/graph.hpp"
#include "gilt/model.hpp"
#include "gilt/train.hpp"

namespace gilt::testing {

// Random edge set over root + n words: every ordered pair (h, d) with d != 0
// and h != d is kept with probability p. Cycles are allowed.
inline WordGraph random_graph(std::mt19937_64& rng, int n, double p) {
  std::bernoulli_distribution keep(p);
  std::vector<Edge> edges;
  for (int h = 0; h <= n; ++h) {
    for (int d = 1; d <= n; ++d) {
      if (h != d && keep(rng)) edges.push_back({h, d});
    }
  }
  return WordGraph(n, edges);
}

// Minimum cost over every simple path from src to dst, enumerated by DFS.
// Edges are walked along their direction at m_out and against it at m_in.
inline std::optional<int> brute_force_distance(const WordGraph& g, int src, int dst,
                                               const FeatureWeights& w) {
  const int n = g.num_words();
  std::vector<std::vector<std::pair<int, int>>> arcs(n + 1);
  for (const Edge& e : g.edges()) {
    arcs[e.head].push_back({e.dependent, w.m_out});
    arcs[e.dependent].push_back({e.head, w.m_in});
  }
  std::optional<int> best;
  std::vector<bool> on_path(n + 1, false);
  std::function<void(int, int)> walk = [&](int u, int cost) {
    if (u == dst) {
      if (!best || cost < *best) best = cost;
      return;
    }
    on_path[u] = true;
    for (auto [v, c] : arcs[u]) {
      if (!on_path[v]) walk(v, cost + c);
    }
    on_path[u] = false;
  };
  walk(src, 0);
  return best;
}

// Undirected reachability from the root by repeated relaxation.
inline std::vector<bool> connected_to_root(const WordGraph& g) {
  std::vector<bool> reach(g.num_words() + 1, false);
  reach[0] = true;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Edge& e : g.edges()) {
      if (reach[e.head] != reach[e.dependent]) {
        reach[e.head] = reach[e.dependent] = true;
        changed = true;
      }
    }
  }
  return reach;
}

// Undirected hop distances from the root by Floyd-Warshall.
inline std::vector<int> hop_counts_from_root(const WordGraph& g) {
  const int n = g.num_words() + 1;
  const int inf = std::numeric_limits<int>::max() / 4;
  std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
  for (int i = 0; i < n; ++i) d[i][i] = 0;
  for (const Edge& e : g.edges()) d[e.head][e.dependent] = d[e.dependent][e.head] = 1;
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    }
  }
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = d[0][i] >= inf ? -1 : d[0][i];
  return out;
}

inline int count_degree(const WordGraph& g, int word, const FeatureWeights& w) {
  int in = 0, out = 0;
  for (const Edge& e : g.edges()) {
    if (e.head == word) ++out;
    if (e.dependent == word) ++in;
  }
  return w.m_out * out + w.m_in * in;
}

// Random alignment of n tokens into words of 1..max_width tokens.
inline WordAlignment random_alignment(std::mt19937_64& rng, int words, int max_width) {
  std::uniform_int_distribution<int> width(1, max_width);
  std::vector<std::pair<int, int>> spans;
  int t = 0;
  for (int w = 0; w < words; ++w) {
    int k = width(rng);
    spans.emplace_back(t, t + k);
    t += k;
  }
  return WordAlignment::from_spans(spans);
}

// Random token ids (BOS first) for an alignment, avoiding the reserved ids.
inline std::vector<int> random_ids(std::mt19937_64& rng, const WordAlignment& a, int vocab) {
  std::uniform_int_distribution<int> tok(Vocabulary::kReserved, vocab - 1);
  std::vector<int> ids{Vocabulary::kBos};
  for (int t = 1; t <= a.num_tokens(); ++t) ids.push_back(tok(rng));
  return ids;
}

// Random DAG in which every word has at most max_count edges to the root or
// earlier words. Edges run from lower to higher rank of a random word order.
inline WordGraph random_dag(std::mt19937_64& rng, int n, int max_count) {
  std::vector<int> rank(n + 1);
  for (int i = 0; i <= n; ++i) rank[i] = i;
  std::shuffle(rank.begin() + 1, rank.end(), rng);
  std::vector<Edge> edges;
  std::uniform_int_distribution<int> count(0, max_count);
  for (int i = 1; i <= n; ++i) {
    std::vector<Edge> options;
    for (int a = 0; a < i; ++a) {
      options.push_back(rank[a] < rank[i] ? Edge{a, i} : Edge{i, a});
    }
    std::shuffle(options.begin(), options.end(), rng);
    int c = std::min<int>(count(rng), static_cast<int>(options.size()));
    for (int k = 0; k < c; ++k) edges.push_back(options[k]);
  }
  return WordGraph(n, edges);
}

inline GiLTConfig tiny_config(int vocab = 12, std::uint64_t seed = 3) {
  GiLTConfig c = GiLTConfig::tiny(vocab);
  c.seed = seed;
  return c;
}

// Training example with random ids over an alignment and a gold graph.
inline TrainingExample make_example(const std::vector<int>& ids, const WordAlignment& a,
                                    const WordGraph& g, std::string id = "ex") {
  TrainingExample ex;
  ex.id = std::move(id);
  ex.ids = ids;
  ex.alignment = a;
  ex.gold = g;
  return ex;
}

}  // namespace gilt::testing
