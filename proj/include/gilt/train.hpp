#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gilt/graph.hpp"
#include "gilt/keyvalue.hpp"
#include "gilt/model.hpp"

namespace gilt {

// A sentence ready for the model: token ids with BOS in front, the alignment
// of tokens to words and the gold graph.
struct TrainingExample {
  std::string id;
  std::vector<int> ids;
  WordAlignment alignment;
  WordGraph gold;

  int num_tokens() const { return alignment.num_tokens(); }
  int num_words() const { return alignment.num_words(); }
};

// Tapes of positions 0..N under the gold graph. Throws GraphError when the
// gold graph is not a valid DAG.
std::vector<FeatureTape> precompute_tapes(const TrainingExample& example,
                                          const TapeSettings& settings);

struct TrainingTargets {
  std::vector<int> next_tokens;  // N + 1 entries: x_1..x_N then EOS
  Matrix adjacency;              // (M+1) x (M+1), adjacency(h, d) = 1 for gold h -> d
  std::vector<int> counts;       // counts[i - 1] for word i
  Matrix count_one_hot;          // M x (C+1)
};

class CountOverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TrainingTargets derive_targets(const TrainingExample& example, int eos_id, int max_count);

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.2;
  double gamma = 0.2;
};

// Everything the loss needs for one sentence; built once per corpus.
struct PreparedExample {
  TrainingExample example;
  std::vector<FeatureTape> tapes;
  TrainingTargets targets;
};

PreparedExample prepare_example(const TrainingExample& example, const GiLTConfig& config,
                                int eos_id);

struct LossBreakdown {
  Tensor total;
  double token = 0.0;  // mean token CE (per sentence, averaged over the batch)
  double dep = 0.0;    // mean adjacency BCE
  double count = 0.0;  // mean count CE
};

// Per-sentence loss alpha * L_tok + beta * L_dep + gamma * L_cnt averaged over
// the batch.
LossBreakdown total_loss(const GiLTModel& model, std::span<const PreparedExample> batch,
                         const LossWeights& weights);

// Teacher-forced diagnostics over a corpus.
struct TeacherForcedMetrics {
  double token_ce = 0.0;  // nats per predicted token, EOS included
  long predicted_tokens = 0;
  double edge_accuracy = 0.0;  // cells with (p >= 0.5) == gold
  long edge_cells = 0;
  double count_accuracy = 0.0;  // argmax count == gold
  long words = 0;
  double sentence_edge_exact = 0.0;  // sentences with every cell correct
};

TeacherForcedMetrics teacher_forced_metrics(const GiLTModel& model,
                                            std::span<const PreparedExample> corpus);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 3e-3;
  double warmup_fraction = 0.05;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  LossWeights loss;

  KeyValueFile to_key_values() const;
  static TrainConfig from_key_values(const KeyValueFile& kv);
};

// Linear warmup over the first warmup_fraction of steps, then cosine decay to 0.
double scheduled_learning_rate(const TrainConfig& config, int step);

struct StepMetrics {
  int step = 0;
  double token = 0.0;
  double dep = 0.0;
  double count = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;  // before clipping
  double learning_rate = 0.0;
};

std::string to_json_line(const StepMetrics& m);

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AdamOptimizer {
 public:
  AdamOptimizer(const TrainConfig& config, const ad::ParameterSet& params);

  int step() const { return step_; }
  // Clips the global gradient norm, then applies one Adam update at the given
  // learning rate. Returns the pre-clip norm.
  double apply(ad::ParameterSet& params, double learning_rate);

 private:
  TrainConfig config_;
  int step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

// One optimisation step on a batch. Throws NonFiniteError (leaving parameters
// untouched) when the loss or gradient is not finite.
StepMetrics train_step(GiLTModel& model, std::span<const PreparedExample> batch,
                       AdamOptimizer& optimizer, const TrainConfig& config);

// Full loop: deterministic shuffled batches, one JSON line per step written to
// metrics (when non-null). on_step runs after every step.
std::vector<StepMetrics> train(GiLTModel& model, std::span<const PreparedExample> corpus,
                               const TrainConfig& config, std::ostream* metrics = nullptr,
                               const std::function<void(const StepMetrics&)>& on_step = {});

}  // namespace gilt
