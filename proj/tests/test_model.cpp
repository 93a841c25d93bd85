#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gilt/infer.hpp"
#include "gilt/model.hpp"
#include "gilt/train.hpp"
#include "support.hpp"
#include "txl_oracle.hpp"

using namespace gilt;
using gilt::testing::random_alignment;
using gilt::testing::random_dag;
using gilt::testing::random_ids;
using gilt::testing::tiny_config;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

struct Sample {
  std::vector<int> ids;
  WordAlignment alignment;
  WordGraph graph;
  std::vector<FeatureTape> tapes;
};

Sample random_sample(std::mt19937_64& rng, const GiLTConfig& c, int words, int width = 2) {
  Sample s;
  s.alignment = random_alignment(rng, words, width);
  s.ids = random_ids(rng, s.alignment, c.vocab_size);
  s.graph = random_dag(rng, words, c.max_count);
  s.tapes = tapes_for_graph(s.graph, s.alignment, c.tape);
  return s;
}

}  // namespace

TEST(Config, ValidationAndRoundTrip) {
  GiLTConfig c = GiLTConfig::desk(40);
  c.tape.ablation.no_depth = true;
  c.infused_layers = {1, 3};
  c.seed = 99;
  GiLTConfig back = GiLTConfig::from_key_values(KeyValueFile::parse(c.to_key_values().to_string()));
  EXPECT_EQ(back.to_key_values().to_string(), c.to_key_values().to_string());
  EXPECT_TRUE(back.tape.ablation.no_depth);
  EXPECT_EQ(back.infused_layers, (std::vector<int>{1, 3}));

  GiLTConfig odd = c;
  odd.num_layers = 3;
  EXPECT_THROW(odd.validate(), std::invalid_argument);
  EXPECT_THROW(GiLTConfig::from_key_values(KeyValueFile::parse("vocab_size = 5\nmodel_dims = 3\n")),
               std::invalid_argument);
}

TEST(Sinusoid, KnownValues) {
  auto e0 = sinusoid_encoding(0, 6);
  for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(e0(i), i % 2 == 0 ? 0.0 : 1.0);
  auto e3 = sinusoid_encoding(3, 4);
  EXPECT_NEAR(e3(0), std::sin(3.0), 1e-15);
  EXPECT_NEAR(e3(1), std::cos(3.0), 1e-15);
  EXPECT_NEAR(e3(2), std::sin(3.0 / 100.0), 1e-15);
  EXPECT_NEAR(e3(3), std::cos(3.0 / 100.0), 1e-15);
  Matrix t = sinusoid_table(5, 8);
  EXPECT_EQ(t.row(4), Matrix(sinusoid_encoding(4, 8)));
}

TEST(TapeKeyBias, ProjectsConcatenatedEmbeddings) {
  GiLTModel model(tiny_config());
  FeatureTape tape{{{0, 0, 0}, {3, 1, 2}, {3, 1, 2}, {8, 9, 0}}};
  Matrix bias = model.tape_key_bias(tape, 1).value();
  ASSERT_EQ(bias.rows(), 4);
  ASSERT_EQ(bias.cols(), 16);
  EXPECT_EQ(bias.row(1), bias.row(2));
  const auto& p = model.params();
  const int dt = model.config().tape_embed_dim;
  Matrix cat(1, 3 * dt);
  cat << p.get("tape.degree").value().row(8), p.get("tape.distance").value().row(9),
      p.get("tape.depth").value().row(0);
  EXPECT_LT(max_abs_diff(bias.row(3), cat * p.get("layer1.fuse").value()), 1e-14);
}

TEST(TapeKeyBias, NonInfusedLayerIsZero) {
  GiLTConfig c = tiny_config();
  c.infused_layers = {2};
  GiLTModel model(c);
  EXPECT_FALSE(model.params().contains("layer1.fuse"));
  FeatureTape tape{{{0, 0, 0}, {1, 1, 1}}};
  EXPECT_EQ(model.tape_key_bias(tape, 1).value().cwiseAbs().maxCoeff(), 0.0);
}

// Factorised attention scores against the direct four-term formula.
TEST(Attention, FactorisedScoresMatchReference) {
  std::mt19937_64 rng(21);
  for (bool partial : {false, true}) {
    GiLTConfig c = tiny_config();
    if (partial) c.infused_layers = {2};
    GiLTModel model(c);
    Sample s = random_sample(rng, c, 4);
    AttentionTables tables = model.prepare(static_cast<int>(s.ids.size()));
    DecoderState st = model.forward(s.ids, s.tapes, tables, true);
    for (int l = 1; l <= c.num_layers; ++l) {
      std::string pre = "layer" + std::to_string(l) + ".";
      Matrix normed = ad::layer_norm(st.layer_outputs[l - 1], model.params().get(pre + "ln1.gain"),
                                     model.params().get(pre + "ln1.bias"))
                          .value();
      std::vector<Matrix> bias;
      if (c.layer_infused(l)) {
        for (const auto& tape : s.tapes) bias.push_back(model.tape_key_bias(tape, l).value());
      }
      for (int h = 0; h < c.num_heads; ++h) {
        Matrix ref = model.reference_attention_scores(normed, bias, l, h);
        Matrix fast = st.attention_scores[l - 1][h];
        for (int i = 0; i < ref.rows(); ++i) {
          for (int j = 0; j <= i; ++j) ASSERT_NEAR(fast(i, j), ref(i, j), 1e-10);
        }
      }
    }
  }
}

TEST(Attention, ZeroFusionDegeneratesToPlainTxl) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    GiLTConfig c = tiny_config(12, 100 + trial);
    GiLTModel model(c);
    gilt::testing::zero_tape_fusion(model);
    Sample s = random_sample(rng, c, 5);
    AttentionTables tables = model.prepare(static_cast<int>(s.ids.size()));
    Matrix got = model.forward(s.ids, s.tapes, tables).log_probs.value();
    Matrix want = gilt::testing::plain_txl_log_probs(model, s.ids);
    EXPECT_LT(max_abs_diff(got, want), 1e-10);
  }
}

TEST(Attention, TapesMatterWhenFused) {
  std::mt19937_64 rng(23);
  GiLTConfig c = tiny_config();
  GiLTModel model(c);
  Sample s = random_sample(rng, c, 5);
  AttentionTables tables = model.prepare(static_cast<int>(s.ids.size()));
  Matrix got = model.forward(s.ids, s.tapes, tables).log_probs.value();
  EXPECT_GT(max_abs_diff(got, gilt::testing::plain_txl_log_probs(model, s.ids)), 1e-6);
}

TEST(Forward, IncrementalMatchesFull) {
  std::mt19937_64 rng(24);
  GiLTConfig c = tiny_config();
  GiLTModel model(c);
  for (int trial = 0; trial < 5; ++trial) {
    Sample s = random_sample(rng, c, 5);
    AttentionTables tables = model.prepare(static_cast<int>(s.ids.size()));
    DecoderState full = model.forward(s.ids, s.tapes, tables);
    DecoderState inc;
    for (std::size_t t = 0; t < s.ids.size(); ++t) {
      model.forward_block(inc, std::span<const int>(&s.ids[t], 1),
                          std::span<const FeatureTape>(&s.tapes[t], 1), tables);
    }
    EXPECT_LT(max_abs_diff(full.log_probs.value(), inc.log_probs.value()), 1e-10);
    for (int l = 0; l <= c.num_layers; ++l) {
      EXPECT_LT(max_abs_diff(full.layer_outputs[l].value(), inc.layer_outputs[l].value()), 1e-10);
    }
  }
}

TEST(Forward, IsCausal) {
  std::mt19937_64 rng(25);
  GiLTConfig c = tiny_config();
  GiLTModel model(c);
  Sample s = random_sample(rng, c, 5);
  AttentionTables tables = model.prepare(static_cast<int>(s.ids.size()));
  Matrix base = model.forward(s.ids, s.tapes, tables).log_probs.value();
  const int n = static_cast<int>(s.ids.size());
  for (int t = 1; t < n; ++t) {
    std::vector<int> ids = s.ids;
    ids[t] = (ids[t] + 1 - Vocabulary::kReserved) % (c.vocab_size - Vocabulary::kReserved) +
             Vocabulary::kReserved;
    std::vector<FeatureTape> tapes = s.tapes;
    for (auto& col : tapes[t].columns) col = {1, 2, 3};
    Matrix changed = model.forward(ids, tapes, tables).log_probs.value();
    EXPECT_LT(max_abs_diff(base.topRows(t), changed.topRows(t)), 1e-15);
    EXPECT_GT(max_abs_diff(base.row(t), changed.row(t)), 1e-9);
  }
}

TEST(Forward, RejectsBadInput) {
  GiLTConfig c = tiny_config();
  GiLTModel model(c);
  AttentionTables tables = model.prepare(4);
  std::vector<int> ids{0, 5};
  std::vector<FeatureTape> short_tapes{bos_tape(), bos_tape()};
  EXPECT_THROW(model.forward(ids, short_tapes, tables), std::invalid_argument);
  std::vector<int> bad_ids{0, 99};
  std::vector<FeatureTape> tapes{bos_tape(), FeatureTape{{{0, 0, 0}, {0, 0, 0}}}};
  EXPECT_THROW(model.forward(bad_ids, tapes, tables), std::out_of_range);
  EXPECT_THROW(model.prepare(c.max_positions + 1), std::length_error);
}

TEST(Structure, BiaffineShapesAndRanges) {
  std::mt19937_64 rng(26);
  GiLTConfig c = tiny_config();
  GiLTModel model(c);
  Sample s = random_sample(rng, c, 5);
  AttentionTables tables = model.prepare(static_cast<int>(s.ids.size()));
  TeacherForcedPass pass = run_teacher_forced(model, tables, s.ids, s.alignment, s.tapes);
  ASSERT_EQ(pass.words.size(), 5u);
  for (int i = 1; i <= 5; ++i) {
    const WordScores& w = pass.words[i - 1];
    EXPECT_EQ(w.word, i);
    ASSERT_EQ(w.head_row.cols(), i + 1);
    ASSERT_EQ(w.head_col.rows(), i + 1);
    for (int a = 0; a <= i; ++a) {
      EXPECT_GT(w.head_row.at(0, a), 0.0);
      EXPECT_LT(w.head_row.at(0, a), 1.0);
      EXPECT_GT(w.head_col.at(a, 0), 0.0);
      EXPECT_LT(w.head_col.at(a, 0), 1.0);
    }
    // The self-loop cell is the same number read from both sides.
    EXPECT_DOUBLE_EQ(w.head_row.at(0, i), w.head_col.at(i, 0));
    Matrix pi = w.count_log_probs.value().array().exp().matrix();
    EXPECT_EQ(pi.cols(), c.max_count + 1);
    EXPECT_NEAR(pi.sum(), 1.0, 1e-12);
    // 2i - 1 valid candidates: root as head, plus both directions to each earlier word.
    EXPECT_FALSE(select_top_c_edges(w, 2 * i - 1).truncated);
    EXPECT_TRUE(select_top_c_edges(w, 2 * i).truncated);
    EXPECT_EQ(select_top_c_edges(w, 2 * i).edges.size(), static_cast<std::size_t>(2 * i - 1));
  }
}

TEST(Structure, ZeroBilinearGivesOneHalf) {
  std::mt19937_64 rng(27);
  GiLTConfig c = tiny_config();
  GiLTModel model(c);
  model.params().get("struct.wp").mutable_value().setZero();
  Sample s = random_sample(rng, c, 3);
  AttentionTables tables = model.prepare(static_cast<int>(s.ids.size()));
  TeacherForcedPass pass = run_teacher_forced(model, tables, s.ids, s.alignment, s.tapes);
  for (const auto& w : pass.words) {
    EXPECT_EQ(w.head_row.value().cwiseAbs().maxCoeff(), 0.5);
    EXPECT_EQ(w.head_col.value().cwiseAbs().minCoeff(), 0.5);
  }
}

// Structure scores of word i read only positions before its first token,
// plus the identity of that first token.
TEST(Structure, ReadsOnlyThePrefix) {
  std::mt19937_64 rng(28);
  GiLTConfig c = tiny_config();
  GiLTModel model(c);
  Sample s = random_sample(rng, c, 5);
  AttentionTables tables = model.prepare(static_cast<int>(s.ids.size()));
  TeacherForcedPass base = run_teacher_forced(model, tables, s.ids, s.alignment, s.tapes);
  for (int i = 1; i <= 5; ++i) {
    int k = s.alignment.first_token(i);
    std::vector<int> ids = s.ids;
    for (std::size_t t = k + 1; t < ids.size(); ++t) ids[t] = Vocabulary::kReserved;
    auto tapes = tapes_for_graph(s.graph.restricted_to(i - 1).with_word_count(5), s.alignment,
                                 c.tape);
    // Tapes before position k are unchanged by dropping words >= i.
    for (int t = 0; t < k; ++t) ASSERT_EQ(tapes[t], s.tapes[t]);
    TeacherForcedPass other = run_teacher_forced(model, tables, ids, s.alignment, tapes);
    for (int w = 1; w <= i; ++w) {
      EXPECT_LT(max_abs_diff(base.words[w - 1].head_row.value(), other.words[w - 1].head_row.value()),
                1e-14);
      EXPECT_LT(max_abs_diff(base.words[w - 1].count_log_probs.value(),
                             other.words[w - 1].count_log_probs.value()),
                1e-14);
    }
  }
}

TEST(Structure, CountHeadIsPermutationInvariantOverEarlierWords) {
  std::mt19937_64 rng(29);
  GiLTConfig c = tiny_config();
  GiLTModel model(c);
  Matrix par = Matrix::Random(4, c.model_dim), chd = Matrix::Random(4, c.model_dim);
  StructureReps reps{Tensor(par), Tensor(chd)};
  Matrix a = model.count_log_distribution(reps, 3).value();
  // Swap words 1 and 2: the count head only sums over earlier rows.
  par.row(1).swap(par.row(2));
  chd.row(1).swap(chd.row(2));
  StructureReps swapped{Tensor(par), Tensor(chd)};
  EXPECT_LT(max_abs_diff(a, model.count_log_distribution(swapped, 3).value()), 1e-12);
}

TEST(GradCheck, FullLossOnTinyConfig) {
  GiLTConfig c = tiny_config(10, 5);
  GiLTModel model(c);
  std::vector<std::pair<int, int>> spans{{0, 1}, {1, 3}};
  WordAlignment a = WordAlignment::from_spans(spans);
  std::vector<Edge> edges{{0, 2}, {2, 1}};
  TrainingExample ex =
      gilt::testing::make_example({0, 4, 7, 5}, a, WordGraph(2, edges), "grad");
  std::vector<PreparedExample> batch{prepare_example(ex, c, Vocabulary::kEos)};
  ad::GradCheckOptions opts;
  opts.eps = 1e-5;
  opts.tolerance = 1e-3;
  auto report = ad::grad_check([&] { return total_loss(model, batch, LossWeights{}).total; },
                               model.params(), opts);
  for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " " << e.max_relative_error;
  EXPECT_LT(report.max_relative_error, 1e-3);
}
