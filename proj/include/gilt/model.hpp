#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gilt/graph.hpp"
#include "gilt/keyvalue.hpp"
#include "gilt/tensor.hpp"

namespace gilt {

using ad::Matrix;
using ad::Tensor;

struct GiLTConfig {
  int num_layers = 4;
  int model_dim = 64;
  int tape_embed_dim = 16;
  int num_heads = 4;
  int ffn_dim = 0;  // 0 means 4 * model_dim
  int vocab_size = 0;
  int max_count = 4;  // C
  int max_positions = 512;
  TapeSettings tape;
  std::vector<int> infused_layers;  // 1-based; empty means every layer
  double dropout = 0.0;
  std::uint64_t seed = 1;

  static GiLTConfig desk(int vocab_size);
  static GiLTConfig tiny(int vocab_size);

  int head_dim() const { return model_dim / num_heads; }
  int effective_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 4 * model_dim; }
  // 1-based layer whose outputs feed the word representation.
  int middle_layer() const { return num_layers / 2; }
  int penultimate_layer() const { return num_layers - 1; }
  bool layer_infused(int layer) const;
  // Rows of each tape-embedding table (cap + 2).
  int table_rows(TapeRow row) const;

  void validate() const;

  KeyValueFile to_key_values() const;
  static GiLTConfig from_key_values(const KeyValueFile& kv);
};

Eigen::RowVectorXd sinusoid_encoding(int offset, int dim);
// Rows 0..count-1 hold the encodings of offsets 0..count-1.
Matrix sinusoid_table(int count, int dim);

// Parameter-derived lookup tables shared by every sentence of one forward or
// training step. Gradients flow through them when recording is on.
struct AttentionTables {
  struct Layer {
    std::vector<Tensor> rel_keys;                 // per head: max_len x head_dim
    std::vector<std::array<Tensor, 3>> tape_keys;  // per head, per tape row
    std::vector<Tensor> u;                        // per head: 1 x head_dim
    std::vector<Tensor> v;
  };
  int max_len = 0;
  std::vector<Layer> layers;
  std::array<Tensor, 3> pe_tables;  // (cap + 2) x d, biaffine positional tape part
  Matrix sinusoids;                  // max_len x d
};

// Cached per-position activations of one decoding prefix. Every member is an
// immutable tensor, so copies share storage.
struct DecoderState {
  int length = 0;                       // positions processed, BOS included
  std::vector<Tensor> keys;             // per layer: length x d content keys
  std::vector<Tensor> values;           // per layer: length x d
  std::vector<Tensor> layer_outputs;    // [0] input embeddings, [l] output of layer l
  Tensor log_probs;                     // length x vocab, next-token log-probabilities
  // Per layer, per head pre-softmax scores (queries x keys), filled only when
  // record_scores is set on the forward call.
  std::vector<std::vector<Matrix>> attention_scores;
};

// Output of the biaffine and count heads for the newest word i.
struct WordScores {
  int word = 0;
  Tensor head_row;  // 1 x (i+1): p(i -> a), a = 0..i
  Tensor head_col;  // (i+1) x 1: p(a -> i), a = 0..i
  Tensor count_log_probs;  // 1 x (C+1)
};

// Hidden representations of the biaffine MLPs for words 0..i.
struct StructureReps {
  Tensor par;  // (i+1) x d
  Tensor chd;  // (i+1) x d
};

class GiLTModel {
 public:
  explicit GiLTModel(GiLTConfig config);

  const GiLTConfig& config() const { return config_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  AttentionTables prepare(int max_len) const;

  // Runs positions state.length .. state.length + ids.size() - 1. tapes[r] is
  // the tape of position state.length + r and must have that many + 1 columns.
  void forward_block(DecoderState& state, std::span<const int> ids,
                     std::span<const FeatureTape> tapes, const AttentionTables& tables,
                     bool record_scores = false) const;

  // Teacher-forced pass over the whole sequence (ids[0] is BOS).
  DecoderState forward(std::span<const int> ids, std::span<const FeatureTape> tapes,
                       const AttentionTables& tables, bool record_scores = false) const;

  Tensor root_representation() const;
  // o for words whose first tokens sit at the given positions; first token
  // ids supply the input-embedding component. Reads only positions k-1.
  Tensor word_representations(const DecoderState& state, std::span<const int> first_positions,
                              std::span<const int> first_token_ids) const;
  // First-stage biaffine MLP outputs (par, chd) for rows of word representations.
  StructureReps first_stage(const Tensor& reps) const;

  // pe rows for words 0..i relative to the newest word i. prev_tape is the
  // tape of position first_token(i) - 1; first_positions[a-1] is the first
  // token of word a < i.
  Tensor biaffine_positional(int word, const FeatureTape& prev_tape,
                             std::span<const int> first_positions,
                             const AttentionTables& tables) const;
  StructureReps second_stage(const StructureReps& first, const Tensor& pe) const;
  WordScores score_word(const StructureReps& reps, int word) const;
  Tensor count_log_distribution(const StructureReps& reps, int word) const;

  // Fused tape key bias e^l for one tape: tape.size() x d. Reference path used
  // for inspection; attention uses the factorised tables.
  Tensor tape_key_bias(const FeatureTape& tape, int layer) const;

  // Direct evaluation of the four-term relative attention score for one layer
  // and head. normed: positions x d (layer-normed inputs for positions
  // 0..k); bias[k] is the k+1 x d tape bias of query k (empty when the
  // layer is not infused). Returns the lower-triangular score matrix scaled
  // by 1/sqrt(head_dim), with zeros above the diagonal.
  Matrix reference_attention_scores(const Matrix& normed, const std::vector<Matrix>& bias,
                                    int layer, int head) const;

 private:
  std::string lp(int layer, const std::string& name) const;
  void init_parameters();

  GiLTConfig config_;
  ad::ParameterSet params_;
};

// Teacher-forced pass: the token stack over the whole sequence plus the
// structure heads of every word, each reading only positions before the
// word's first token.
struct TeacherForcedPass {
  DecoderState state;
  std::vector<WordScores> words;  // words[i - 1] belongs to word i
};

// ids[0] is BOS and ids.size() == alignment.num_tokens() + 1; tapes holds one
// tape per position.
TeacherForcedPass run_teacher_forced(const GiLTModel& model, const AttentionTables& tables,
                                     std::span<const int> ids, const WordAlignment& alignment,
                                     std::span<const FeatureTape> tapes);

}  // namespace gilt
