#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "gilt/cli.hpp"
#include "gilt/corpus.hpp"
#include "gilt/graph.hpp"
#include "support.hpp"

using namespace gilt;
using gilt::testing::brute_force_distance;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(WordGraph, AddDependenciesIsUnion) {
  WordGraph g(3);
  std::vector<Edge> a{{0, 1}, {1, 2}};
  std::vector<Edge> b{{1, 2}, {3, 2}};
  WordGraph g1 = add_dependencies(g, a);
  WordGraph g2 = add_dependencies(g1, b);
  EXPECT_EQ(g.edge_count(), 0u);
  EXPECT_EQ(g1.edge_count(), 2u);
  EXPECT_EQ(g2.edge_count(), 3u);
  EXPECT_TRUE(g2.has_edge(3, 2));
}

TEST(WordGraph, RejectsBadEdges) {
  WordGraph g(2);
  std::vector<Edge> root_dep{{1, 0}};
  std::vector<Edge> self{{2, 2}};
  std::vector<Edge> range{{0, 3}};
  EXPECT_THROW(add_dependencies(g, root_dep), GraphError);
  EXPECT_THROW(add_dependencies(g, self), GraphError);
  EXPECT_THROW(add_dependencies(g, range), GraphError);
}

TEST(WordGraph, RestrictionDropsLaterWords) {
  std::vector<Edge> e{{0, 2}, {2, 1}, {3, 2}};
  WordGraph g(3, e);
  WordGraph r = g.restricted_to(2);
  EXPECT_EQ(r.num_words(), 2);
  EXPECT_EQ(r.edge_count(), 2u);
  EXPECT_FALSE(r.has_edge(3, 2));
}

TEST(Features, SmallExamples) {
  FeatureWeights w;
  std::vector<Edge> e{{0, 2}, {2, 1}};
  WordGraph g(2, e);
  EXPECT_EQ(weighted_degree(g, 1, w), 1);
  EXPECT_EQ(weighted_degree(g, 2, w), 11);
  EXPECT_EQ(weighted_distance(g, 2, 1, w), Distance{10});
  EXPECT_EQ(weighted_distance(g, 1, 2, w), Distance{1});
  EXPECT_EQ(weighted_distance(g, 1, 1, w), Distance{0});
  auto depth = all_depths(g);
  EXPECT_EQ(depth[2], 2);
  EXPECT_EQ(depth[1], 3);

  WordGraph isolated(2);
  EXPECT_EQ(weighted_distance(isolated, 1, 2, w), std::nullopt);
  EXPECT_EQ(all_depths(isolated)[1], 0);
}

TEST(Features, Bucketize) {
  EXPECT_EQ(bucketize(3, 8), 3);
  EXPECT_EQ(bucketize(9, 8), 8);
  EXPECT_EQ(bucketize(Distance{}, 8), 9);
  FeatureCaps caps;
  EXPECT_EQ(caps.unreachable_bucket(), caps.distance_cap + 1);
}

TEST(Features, WeightsMustBePositive) {
  EXPECT_THROW(check_weights({0, 1}), std::invalid_argument);
  EXPECT_NO_THROW(check_weights({1, 10}));
}

// Distances, depths and degrees against independent oracles on random graphs.
TEST(Features, RandomGraphsAgainstOracles) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> words(1, 8);
  std::uniform_real_distribution<double> density(0.05, 0.35);
  std::uniform_int_distribution<int> weight(1, 12);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = words(rng);
    WordGraph g = gilt::testing::random_graph(rng, n, density(rng));
    FeatureWeights w{weight(rng), weight(rng)};
    auto hops = gilt::testing::hop_counts_from_root(g);
    auto depth = all_depths(g);
    for (int a = 0; a <= n; ++a) {
      if (a > 0) {
        if (weighted_degree(g, a, w) != gilt::testing::count_degree(g, a, w)) ++mismatches;
        int expected_depth = hops[a] < 0 ? 0 : hops[a] + 1;
        if (depth[a] != expected_depth) ++mismatches;
      }
      auto from = weighted_distances_from(g, a, w);
      for (int b = 0; b <= n; ++b) {
        auto oracle = brute_force_distance(g, a, b, w);
        if (weighted_distance(g, a, b, w) != oracle) ++mismatches;
        if (from[b] != oracle) ++mismatches;
      }
    }
  }
  EXPECT_EQ(mismatches, 0);
}

TEST(Features, UnweightedDistanceIsSymmetric) {
  std::mt19937_64 rng(5);
  FeatureWeights w = FeatureWeights::unweighted();
  for (int trial = 0; trial < 300; ++trial) {
    WordGraph g = gilt::testing::random_graph(rng, 1 + trial % 8, 0.2);
    for (int a = 0; a <= g.num_words(); ++a) {
      for (int b = 0; b <= g.num_words(); ++b) {
        ASSERT_EQ(weighted_distance(g, a, b, w), weighted_distance(g, b, a, w));
      }
    }
  }
}

TEST(Features, SwappedWeightsReverseDistance) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    WordGraph g = gilt::testing::random_graph(rng, 1 + trial % 8, 0.25);
    for (int a = 0; a <= g.num_words(); ++a) {
      for (int b = 0; b <= g.num_words(); ++b) {
        ASSERT_EQ(weighted_distance(g, a, b, {1, 10}), weighted_distance(g, b, a, {10, 1}));
      }
    }
  }
}

TEST(Features, TriangleInequality) {
  std::mt19937_64 rng(7);
  FeatureWeights w;
  for (int trial = 0; trial < 300; ++trial) {
    WordGraph g = gilt::testing::random_graph(rng, 1 + trial % 8, 0.25);
    const int n = g.num_words();
    for (int a = 0; a <= n; ++a) {
      auto da = weighted_distances_from(g, a, w);
      for (int b = 0; b <= n; ++b) {
        if (!da[b]) continue;
        auto db = weighted_distances_from(g, b, w);
        for (int c = 0; c <= n; ++c) {
          if (db[c]) {
            ASSERT_TRUE(da[c].has_value());
            ASSERT_LE(*da[c], *da[b] + *db[c]);
          }
        }
      }
    }
  }
}

TEST(Features, AddingEdgesNeverIncreasesDistanceOrDecreasesDegree) {
  std::mt19937_64 rng(8);
  FeatureWeights w;
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + trial % 7;
    WordGraph g = gilt::testing::random_graph(rng, n, 0.15);
    WordGraph extra = gilt::testing::random_graph(rng, n, 0.1);
    std::vector<Edge> more(extra.edges().begin(), extra.edges().end());
    WordGraph bigger = add_dependencies(g, more);
    for (int a = 0; a <= n; ++a) {
      if (a > 0) {
        ASSERT_GE(weighted_degree(bigger, a, w), weighted_degree(g, a, w));
      }
      for (int b = 0; b <= n; ++b) {
        auto before = weighted_distance(g, a, b, w);
        auto after = weighted_distance(bigger, a, b, w);
        if (before) {
          ASSERT_TRUE(after.has_value());
          ASSERT_LE(*after, *before);
        }
      }
    }
  }
}

TEST(Features, OrderOfAdditionDoesNotMatter) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 8;
    WordGraph target = gilt::testing::random_graph(rng, n, 0.3);
    std::vector<Edge> edges(target.edges().begin(), target.edges().end());
    std::shuffle(edges.begin(), edges.end(), rng);
    WordGraph g(n);
    for (const Edge& e : edges) g = add_dependencies(g, std::span<const Edge>(&e, 1));
    ASSERT_EQ(g, target);
  }
}

TEST(Validation, DetectsEachViolation) {
  auto kinds = [](int n, std::vector<Edge> e) {
    std::vector<ViolationKind> out;
    for (const auto& v : validate_edges(n, e)) out.push_back(v.kind);
    return out;
  };
  EXPECT_TRUE(kinds(3, {{0, 1}, {1, 2}, {3, 2}}).empty());
  EXPECT_EQ(kinds(2, {{1, 0}}), std::vector<ViolationKind>{ViolationKind::kRootAsDependent});
  EXPECT_EQ(kinds(2, {{1, 1}}), std::vector<ViolationKind>{ViolationKind::kSelfLoop});
  EXPECT_EQ(kinds(2, {{1, 2}, {1, 2}}), std::vector<ViolationKind>{ViolationKind::kDuplicateEdge});
  EXPECT_EQ(kinds(2, {{1, 5}}), std::vector<ViolationKind>{ViolationKind::kOutOfRange});
  EXPECT_EQ(kinds(3, {{1, 2}, {2, 3}, {3, 1}}), std::vector<ViolationKind>{ViolationKind::kCycle});
}

TEST(Validation, BackwardEdgeCount) {
  std::vector<Edge> e{{0, 2}, {2, 1}, {3, 2}, {0, 3}};
  WordGraph g(3, e);
  EXPECT_EQ(backward_edge_count(g, 1), 0);
  EXPECT_EQ(backward_edge_count(g, 2), 2);
  EXPECT_EQ(backward_edge_count(g, 3), 2);
}

TEST(Alignment, SpansAndLookups) {
  std::vector<std::pair<int, int>> spans{{0, 1}, {1, 3}, {3, 4}};
  WordAlignment a = WordAlignment::from_spans(spans);
  EXPECT_EQ(a.num_tokens(), 4);
  EXPECT_EQ(a.num_words(), 3);
  EXPECT_EQ(a.word_of_token(3), 2);
  EXPECT_EQ(a.first_token(2), 2);
  EXPECT_TRUE(a.starts_word(2));
  EXPECT_FALSE(a.starts_word(3));
  std::vector<std::pair<int, int>> gap{{0, 1}, {2, 3}};
  EXPECT_THROW(WordAlignment::from_spans(gap), std::invalid_argument);
}

TEST(Tape, ShapeAndSentinel) {
  std::mt19937_64 rng(10);
  TapeSettings s;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + trial % 6;
    WordAlignment a = gilt::testing::random_alignment(rng, m, 3);
    WordGraph g = gilt::testing::random_dag(rng, m, 3);
    auto tapes = tapes_for_graph(g, a, s);
    ASSERT_EQ(static_cast<int>(tapes.size()), a.num_tokens() + 1);
    for (int t = 0; t <= a.num_tokens(); ++t) {
      ASSERT_EQ(tapes[t].size(), t + 1);
      ASSERT_EQ(tapes[t].columns[0], (TapeColumn{0, 0, 0}));
    }
    // Tokens of one word share a column; the current word is at distance 0.
    for (int t = 1; t <= a.num_tokens(); ++t) {
      int w = a.word_of_token(t);
      for (int j = 1; j <= t; ++j) {
        if (a.word_of_token(j) == w) {
          ASSERT_EQ(tapes[t].columns[j], tapes[t].columns[a.first_token(w)]);
          ASSERT_EQ(tapes[t].columns[j][kDistanceRow], 0);
        }
      }
      if (!a.starts_word(t)) ASSERT_EQ(tapes[t].columns[t], tapes[t].columns[t - 1]);
    }
  }
}

TEST(Tape, IgnoresWordsAfterTheCurrentOne) {
  std::mt19937_64 rng(11);
  TapeSettings s;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + trial % 5;
    WordAlignment a = gilt::testing::random_alignment(rng, m, 2);
    WordGraph g = gilt::testing::random_dag(rng, m, 3);
    for (int t = 1; t <= a.num_tokens(); ++t) {
      WordGraph cut = g.restricted_to(a.word_of_token(t)).with_word_count(m);
      ASSERT_EQ(build_feature_tape(g, a, t, s), build_feature_tape(cut, a, t, s));
    }
  }
}

TEST(Tape, AblationsTouchOnlyTheirRow) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + trial % 6;
    WordAlignment a = gilt::testing::random_alignment(rng, m, 2);
    WordGraph g = gilt::testing::random_dag(rng, m, 3);
    TapeSettings base;
    auto tapes = tapes_for_graph(g, a, base);
    for (int row = 0; row < 3; ++row) {
      TapeSettings s = base;
      if (row == kDegreeRow) s.ablation.no_degree = true;
      if (row == kDistanceRow) s.ablation.no_distance = true;
      if (row == kDepthRow) s.ablation.no_depth = true;
      auto ablated = tapes_for_graph(g, a, s);
      for (int t = 0; t <= a.num_tokens(); ++t) {
        for (int j = 0; j <= t; ++j) {
          for (int r = 0; r < 3; ++r) {
            int want = r == row ? 0 : tapes[t].columns[j][r];
            ASSERT_EQ(ablated[t].columns[j][r], want);
          }
        }
      }
    }
    for (int row : {kDegreeRow, kDistanceRow}) {
      TapeSettings s = base;
      if (row == kDegreeRow) s.ablation.unweight_degree = true;
      else s.ablation.unweight_distance = true;
      auto unweighted = tapes_for_graph(g, a, s);
      for (int t = 1; t <= a.num_tokens(); ++t) {
        WordGraph view = g.restricted_to(a.word_of_token(t));
        auto dist = weighted_distances_from(view, a.word_of_token(t), FeatureWeights::unweighted());
        for (int j = 1; j <= t; ++j) {
          int w = a.word_of_token(j);
          for (int r = 0; r < 3; ++r) {
            if (r != row) {
              ASSERT_EQ(unweighted[t].columns[j][r], tapes[t].columns[j][r]);
            } else if (row == kDegreeRow) {
              ASSERT_EQ(unweighted[t].columns[j][r],
                        bucketize(weighted_degree(view, w, FeatureWeights::unweighted()),
                                  base.caps.degree_cap));
            } else {
              ASSERT_EQ(unweighted[t].columns[j][r], bucketize(dist[w], base.caps.distance_cap));
            }
          }
        }
      }
    }
  }
}

TEST(Tape, MaximaAndCaps) {
  std::vector<Edge> e{{1, 2}, {3, 2}, {0, 3}};
  WordGraph g(3, e);
  FeatureMaxima m = feature_maxima(g, TapeSettings{});
  EXPECT_EQ(m.degree, 11);
  EXPECT_EQ(m.distance, 11);
  EXPECT_EQ(m.depth, 4);
  EXPECT_FALSE(m.any_unreachable);
  EXPECT_TRUE(feature_maxima(WordGraph(2), TapeSettings{}).any_unreachable);
  EXPECT_NO_THROW(check_caps(m, FeatureCaps{}));
  EXPECT_THROW(check_caps(m, FeatureCaps{8, 64, 32}), std::invalid_argument);
}

class GoldenTape : public ::testing::TestWithParam<std::string> {};

TEST_P(GoldenTape, MatchesHandComputedWalkthrough) {
  const std::string dir = GILT_GOLDEN_DIR;
  auto corpus = load_corpus(dir + "/" + GetParam() + ".jsonl");
  ASSERT_EQ(corpus.size(), 1u);
  std::ostringstream out;
  print_tape_walkthrough(out, corpus[0], TapeSettings{});
  EXPECT_EQ(out.str(), read_file(dir + "/" + GetParam() + ".tape.txt"));
}

INSTANTIATE_TEST_SUITE_P(Files, GoldenTape, ::testing::Values("three_word", "two_word"));
