#include "gilt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace gilt {

namespace {

// Adjacency cells scored at word i: (i -> a) for a = 1..i-1 and (a -> i) for
// a = 0..i-1. Over a sentence every cell outside the root column and the
// diagonal is scored exactly once, at the step of its later endpoint.
struct DepCells {
  Tensor probs;     // 1 x (2i - 1)
  Matrix targets;   // 1 x (2i - 1)
};

DepCells dep_cells(const WordScores& ws, const Matrix& adjacency) {
  const int i = ws.word;
  std::vector<Tensor> parts;
  Matrix targets(1, 2 * i - 1);
  int c = 0;
  if (i > 1) {
    parts.push_back(ad::slice_cols(ws.head_row, 1, i - 1));
    for (int a = 1; a < i; ++a) targets(0, c++) = adjacency(i, a);
  }
  parts.push_back(ad::transpose(ad::slice_rows(ws.head_col, 0, i)));
  for (int a = 0; a < i; ++a) targets(0, c++) = adjacency(a, i);
  return {ad::concat_cols(parts), targets};
}

struct SentenceLoss {
  Tensor total;
  double token = 0.0;
  double dep = 0.0;
  double count = 0.0;
};

SentenceLoss sentence_loss(const GiLTModel& model, const AttentionTables& tables,
                           const PreparedExample& ex, const LossWeights& w) {
  const auto& e = ex.example;
  const auto& tg = ex.targets;
  TeacherForcedPass pass = run_teacher_forced(model, tables, e.ids, e.alignment, ex.tapes);

  const int t = static_cast<int>(tg.next_tokens.size());
  ad::IndexMatrix tok_idx(t, 1);
  for (int r = 0; r < t; ++r) tok_idx(r, 0) = tg.next_tokens[r];
  Tensor tok = ad::scale(ad::sum(ad::take_per_row(pass.state.log_probs, tok_idx)), -1.0 / t);

  const int m = e.num_words();
  std::vector<Tensor> probs;
  std::vector<Matrix> targets;
  std::vector<Tensor> count_rows;
  for (const WordScores& ws : pass.words) {
    DepCells cells = dep_cells(ws, tg.adjacency);
    probs.push_back(cells.probs);
    targets.push_back(cells.targets);
    count_rows.push_back(ws.count_log_probs);
  }
  Matrix all_targets(1, static_cast<ad::Index>(m) * m);
  ad::Index c = 0;
  for (const Matrix& tm : targets) {
    all_targets.block(0, c, 1, tm.cols()) = tm;
    c += tm.cols();
  }
  Tensor dep = ad::binary_cross_entropy(ad::concat_cols(probs), all_targets, ad::Reduction::kMean);

  ad::IndexMatrix cnt_idx(m, 1);
  for (int i = 0; i < m; ++i) cnt_idx(i, 0) = tg.counts[i];
  Tensor cnt = ad::scale(ad::sum(ad::take_per_row(ad::concat_rows(count_rows), cnt_idx)), -1.0 / m);

  SentenceLoss out;
  out.total = ad::add(ad::add(ad::scale(tok, w.alpha), ad::scale(dep, w.beta)),
                      ad::scale(cnt, w.gamma));
  out.token = tok.item();
  out.dep = dep.item();
  out.count = cnt.item();
  return out;
}

int max_length(std::span<const PreparedExample> batch) {
  int n = 0;
  for (const auto& ex : batch) n = std::max(n, static_cast<int>(ex.example.ids.size()));
  return n;
}

}  // namespace

std::vector<FeatureTape> precompute_tapes(const TrainingExample& example,
                                          const TapeSettings& settings) {
  if (example.gold.num_words() != example.num_words()) {
    throw GraphError("example " + example.id + ": gold graph has " +
                     std::to_string(example.gold.num_words()) + " words, alignment has " +
                     std::to_string(example.num_words()));
  }
  auto violations = validate_graph(example.gold);
  if (!violations.empty()) {
    throw GraphError("example " + example.id + ": " + violations.front().message);
  }
  return tapes_for_graph(example.gold, example.alignment, settings);
}

TrainingTargets derive_targets(const TrainingExample& example, int eos_id, int max_count) {
  const int n = example.num_tokens();
  const int m = example.num_words();
  if (static_cast<int>(example.ids.size()) != n + 1) {
    throw std::invalid_argument("example " + example.id + ": ids must be BOS plus one per token");
  }
  TrainingTargets t;
  t.next_tokens.assign(example.ids.begin() + 1, example.ids.end());
  t.next_tokens.push_back(eos_id);
  t.adjacency = Matrix::Zero(m + 1, m + 1);
  for (const Edge& e : example.gold.edges()) t.adjacency(e.head, e.dependent) = 1.0;
  t.count_one_hot = Matrix::Zero(m, max_count + 1);
  for (int i = 1; i <= m; ++i) {
    int c = backward_edge_count(example.gold, i);
    if (c > max_count) {
      throw CountOverflowError("example " + example.id + ": word " + std::to_string(i) + " has " +
                               std::to_string(c) + " dependencies on earlier words, above " +
                               "max_count " + std::to_string(max_count) +
                               "; raise max_count");
    }
    t.counts.push_back(c);
    t.count_one_hot(i - 1, c) = 1.0;
  }
  return t;
}

PreparedExample prepare_example(const TrainingExample& example, const GiLTConfig& config,
                                int eos_id) {
  if (example.num_words() == 0) {
    throw std::invalid_argument("example " + example.id + " has no words");
  }
  PreparedExample p;
  p.example = example;
  p.tapes = precompute_tapes(example, config.tape);
  p.targets = derive_targets(example, eos_id, config.max_count);
  return p;
}

LossBreakdown total_loss(const GiLTModel& model, std::span<const PreparedExample> batch,
                         const LossWeights& weights) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  AttentionTables tables = model.prepare(max_length(batch));
  LossBreakdown out;
  std::vector<Tensor> totals;
  for (const auto& ex : batch) {
    SentenceLoss s = sentence_loss(model, tables, ex, weights);
    totals.push_back(s.total);
    out.token += s.token;
    out.dep += s.dep;
    out.count += s.count;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.total = ad::scale(ad::sum(ad::concat_cols(totals)), inv);
  out.token *= inv;
  out.dep *= inv;
  out.count *= inv;
  return out;
}

TeacherForcedMetrics teacher_forced_metrics(const GiLTModel& model,
                                            std::span<const PreparedExample> corpus) {
  ad::NoGradGuard no_grad;
  ad::NoDropoutGuard no_dropout;
  TeacherForcedMetrics m;
  if (corpus.empty()) return m;
  AttentionTables tables = model.prepare(max_length(corpus));
  double ce = 0.0;
  long edge_ok = 0;
  long count_ok = 0;
  long exact = 0;
  for (const auto& ex : corpus) {
    const auto& e = ex.example;
    TeacherForcedPass pass = run_teacher_forced(model, tables, e.ids, e.alignment, ex.tapes);
    const auto& lp = pass.state.log_probs.value();
    for (int r = 0; r < static_cast<int>(ex.targets.next_tokens.size()); ++r) {
      ce -= lp(r, ex.targets.next_tokens[r]);
      ++m.predicted_tokens;
    }
    bool all_ok = true;
    for (const WordScores& ws : pass.words) {
      DepCells cells = dep_cells(ws, ex.targets.adjacency);
      for (ad::Index c = 0; c < cells.targets.cols(); ++c) {
        bool predicted = cells.probs.value()(0, c) >= 0.5;
        bool ok = predicted == (cells.targets(0, c) == 1.0);
        edge_ok += ok;
        all_ok = all_ok && ok;
        ++m.edge_cells;
      }
      Eigen::Index best = 0;
      ws.count_log_probs.value().row(0).maxCoeff(&best);
      count_ok += static_cast<int>(best) == ex.targets.counts[ws.word - 1];
      ++m.words;
    }
    exact += all_ok;
  }
  m.token_ce = ce / static_cast<double>(m.predicted_tokens);
  m.edge_accuracy = static_cast<double>(edge_ok) / static_cast<double>(m.edge_cells);
  m.count_accuracy = static_cast<double>(count_ok) / static_cast<double>(m.words);
  m.sentence_edge_exact = static_cast<double>(exact) / static_cast<double>(corpus.size());
  return m;
}

KeyValueFile TrainConfig::to_key_values() const {
  KeyValueFile kv;
  kv.set("steps", steps);
  kv.set("batch_size", batch_size);
  kv.set("learning_rate", learning_rate);
  kv.set("warmup_fraction", warmup_fraction);
  kv.set("clip_norm", clip_norm);
  kv.set("beta1", beta1);
  kv.set("beta2", beta2);
  kv.set("adam_eps", adam_eps);
  kv.set("seed", std::to_string(seed));
  kv.set("alpha", loss.alpha);
  kv.set("beta", loss.beta);
  kv.set("gamma", loss.gamma);
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValueFile& kv) {
  static const std::vector<std::string> known = {
      "steps", "batch_size", "learning_rate", "warmup_fraction", "clip_norm", "beta1",
      "beta2", "adam_eps",   "seed",          "alpha",           "beta",      "gamma"};
  auto unknown = kv.unknown_keys(known);
  if (!unknown.empty()) throw std::invalid_argument("unknown training config key: " + unknown[0]);
  TrainConfig c;
  c.steps = kv.get_int("steps", c.steps);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.warmup_fraction = kv.get_double("warmup_fraction", c.warmup_fraction);
  c.clip_norm = kv.get_double("clip_norm", c.clip_norm);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.seed = std::stoull(kv.get_string("seed", "1"));
  c.loss.alpha = kv.get_double("alpha", c.loss.alpha);
  c.loss.beta = kv.get_double("beta", c.loss.beta);
  c.loss.gamma = kv.get_double("gamma", c.loss.gamma);
  if (c.steps < 0 || c.batch_size < 1) throw std::invalid_argument("steps/batch_size out of range");
  if (c.loss.alpha < 0 || c.loss.beta < 0 || c.loss.gamma < 0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  return c;
}

double scheduled_learning_rate(const TrainConfig& config, int step) {
  const int total = std::max(config.steps, 1);
  const int warmup = static_cast<int>(std::ceil(config.warmup_fraction * total));
  if (step < warmup) return config.learning_rate * (step + 1) / static_cast<double>(warmup);
  const int rest = std::max(total - warmup, 1);
  double progress = std::min(1.0, (step - warmup) / static_cast<double>(rest));
  return config.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

std::string to_json_line(const StepMetrics& m) {
  std::ostringstream os;
  os.precision(10);
  os << "{\"step\":" << m.step << ",\"L_tok\":" << m.token << ",\"L_dep\":" << m.dep
     << ",\"L_cnt\":" << m.count << ",\"loss\":" << m.total << ",\"grad_norm\":" << m.grad_norm
     << ",\"lr\":" << m.learning_rate << "}";
  return os.str();
}

AdamOptimizer::AdamOptimizer(const TrainConfig& config, const ad::ParameterSet& params)
    : config_(config) {
  for (const auto& e : params.entries()) {
    m_.push_back(Matrix::Zero(e.tensor.rows(), e.tensor.cols()));
    v_.push_back(Matrix::Zero(e.tensor.rows(), e.tensor.cols()));
  }
}

double AdamOptimizer::apply(ad::ParameterSet& params, double learning_rate) {
  const auto& entries = params.entries();
  if (entries.size() != m_.size()) throw std::logic_error("optimizer/parameter mismatch");
  double sq = 0.0;
  for (const auto& e : entries) {
    if (!e.frozen && e.tensor.has_grad()) sq += e.tensor.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NonFiniteError("non-finite gradient norm");
  const double clip = (config_.clip_norm > 0 && norm > config_.clip_norm) ? config_.clip_norm / norm
                                                                          : 1.0;
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, step_);
  const double bc2 = 1.0 - std::pow(config_.beta2, step_);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.frozen || !e.tensor.has_grad()) continue;
    Matrix g = e.tensor.grad() * clip;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    Tensor t = e.tensor;
    t.mutable_value().array() -= learning_rate * (m_[i].array() / bc1) /
                                 ((v_[i].array() / bc2).sqrt() + config_.adam_eps);
  }
  return norm;
}

StepMetrics train_step(GiLTModel& model, std::span<const PreparedExample> batch,
                       AdamOptimizer& optimizer, const TrainConfig& config) {
  model.params().zero_grad();
  LossBreakdown loss = total_loss(model, batch, config.loss);
  if (!loss.total.is_finite()) throw NonFiniteError("non-finite loss");
  loss.total.backward();
  StepMetrics m;
  m.step = optimizer.step();
  m.learning_rate = scheduled_learning_rate(config, m.step);
  m.grad_norm = optimizer.apply(model.params(), m.learning_rate);
  m.token = loss.token;
  m.dep = loss.dep;
  m.count = loss.count;
  m.total = loss.total.item();
  return m;
}

std::vector<StepMetrics> train(GiLTModel& model, std::span<const PreparedExample> corpus,
                               const TrainConfig& config, std::ostream* metrics,
                               const std::function<void(const StepMetrics&)>& on_step) {
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const std::size_t bs = std::min<std::size_t>(config.batch_size, corpus.size());

  AdamOptimizer optimizer(config, model.params());
  std::vector<StepMetrics> history;
  std::vector<PreparedExample> batch;
  for (int step = 0; step < config.steps; ++step) {
    batch.clear();
    while (batch.size() < bs) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(corpus[order[cursor++]]);
    }
    StepMetrics m = train_step(model, batch, optimizer, config);
    if (metrics) *metrics << to_json_line(m) << '\n';
    if (on_step) on_step(m);
    history.push_back(m);
  }
  if (metrics) metrics->flush();
  return history;
}

}  // namespace gilt
