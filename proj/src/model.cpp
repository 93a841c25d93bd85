#include "gilt/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace gilt {

namespace {

constexpr double kMaskValue = -1e30;
const char* const kTapeNames[3] = {"degree", "distance", "depth"};

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

std::mt19937_64& dropout_rng() {
  thread_local std::mt19937_64 rng(0x5eed);
  return rng;
}

}  // namespace

GiLTConfig GiLTConfig::desk(int vocab_size) {
  GiLTConfig c;
  c.num_layers = 4;
  c.model_dim = 64;
  c.tape_embed_dim = 16;
  c.num_heads = 4;
  c.max_count = 4;
  c.vocab_size = vocab_size;
  return c;
}

GiLTConfig GiLTConfig::tiny(int vocab_size) {
  GiLTConfig c;
  c.num_layers = 2;
  c.model_dim = 16;
  c.tape_embed_dim = 8;
  c.num_heads = 2;
  c.max_count = 2;
  c.vocab_size = vocab_size;
  c.tape.caps = FeatureCaps{8, 8, 6};
  c.max_positions = 64;
  return c;
}

bool GiLTConfig::layer_infused(int layer) const {
  if (infused_layers.empty()) return true;
  for (int l : infused_layers) {
    if (l == layer) return true;
  }
  return false;
}

int GiLTConfig::table_rows(TapeRow row) const {
  switch (row) {
    case kDegreeRow: return tape.caps.degree_cap + 2;
    case kDistanceRow: return tape.caps.distance_cap + 2;
    case kDepthRow: return tape.caps.depth_cap + 2;
  }
  return 0;
}

void GiLTConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid config: " + m); };
  if (num_layers < 2 || num_layers % 2 != 0) fail("num_layers must be even and >= 2");
  if (model_dim <= 0 || num_heads <= 0 || model_dim % num_heads != 0) {
    fail("model_dim must be a positive multiple of num_heads");
  }
  if (tape_embed_dim <= 0) fail("tape_embed_dim must be positive");
  if (vocab_size <= 0) fail("vocab_size must be positive");
  if (max_count < 0) fail("max_count must be >= 0");
  if (max_positions < 2) fail("max_positions must be >= 2");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  const auto& caps = tape.caps;
  if (caps.degree_cap <= 0 || caps.distance_cap <= 0 || caps.depth_cap <= 0) {
    fail("feature caps must be positive");
  }
  check_weights(tape.degree_weights);
  check_weights(tape.distance_weights);
  for (int l : infused_layers) {
    if (l < 1 || l > num_layers) fail("infused layer " + std::to_string(l) + " out of range");
  }
}

KeyValueFile GiLTConfig::to_key_values() const {
  KeyValueFile kv;
  kv.set("num_layers", num_layers);
  kv.set("model_dim", model_dim);
  kv.set("tape_embed_dim", tape_embed_dim);
  kv.set("num_heads", num_heads);
  kv.set("ffn_dim", ffn_dim);
  kv.set("vocab_size", vocab_size);
  kv.set("max_count", max_count);
  kv.set("max_positions", max_positions);
  kv.set("degree_m_in", tape.degree_weights.m_in);
  kv.set("degree_m_out", tape.degree_weights.m_out);
  kv.set("distance_m_in", tape.distance_weights.m_in);
  kv.set("distance_m_out", tape.distance_weights.m_out);
  kv.set("degree_cap", tape.caps.degree_cap);
  kv.set("distance_cap", tape.caps.distance_cap);
  kv.set("depth_cap", tape.caps.depth_cap);
  kv.set("no_degree", tape.ablation.no_degree);
  kv.set("no_distance", tape.ablation.no_distance);
  kv.set("no_depth", tape.ablation.no_depth);
  kv.set("unweight_degree", tape.ablation.unweight_degree);
  kv.set("unweight_distance", tape.ablation.unweight_distance);
  std::string layers;
  for (int l : infused_layers) layers += (layers.empty() ? "" : ",") + std::to_string(l);
  kv.set("infused_layers", layers);
  kv.set("dropout", dropout);
  kv.set("seed", std::to_string(seed));
  return kv;
}

GiLTConfig GiLTConfig::from_key_values(const KeyValueFile& kv) {
  static const std::vector<std::string> known = {
      "num_layers",     "model_dim",     "tape_embed_dim",  "num_heads",       "ffn_dim",
      "vocab_size",     "max_count",     "max_positions",   "degree_m_in",     "degree_m_out",
      "distance_m_in",  "distance_m_out", "degree_cap",     "distance_cap",    "depth_cap",
      "no_degree",      "no_distance",   "no_depth",        "unweight_degree", "unweight_distance",
      "infused_layers", "dropout",       "seed"};
  auto unknown = kv.unknown_keys(known);
  if (!unknown.empty()) throw std::invalid_argument("unknown model config key: " + unknown[0]);
  GiLTConfig c;
  c.num_layers = kv.get_int("num_layers", c.num_layers);
  c.model_dim = kv.get_int("model_dim", c.model_dim);
  c.tape_embed_dim = kv.get_int("tape_embed_dim", c.tape_embed_dim);
  c.num_heads = kv.get_int("num_heads", c.num_heads);
  c.ffn_dim = kv.get_int("ffn_dim", c.ffn_dim);
  c.vocab_size = kv.get_int("vocab_size", c.vocab_size);
  c.max_count = kv.get_int("max_count", c.max_count);
  c.max_positions = kv.get_int("max_positions", c.max_positions);
  c.tape.degree_weights.m_in = kv.get_int("degree_m_in", c.tape.degree_weights.m_in);
  c.tape.degree_weights.m_out = kv.get_int("degree_m_out", c.tape.degree_weights.m_out);
  c.tape.distance_weights.m_in = kv.get_int("distance_m_in", c.tape.distance_weights.m_in);
  c.tape.distance_weights.m_out = kv.get_int("distance_m_out", c.tape.distance_weights.m_out);
  c.tape.caps.degree_cap = kv.get_int("degree_cap", c.tape.caps.degree_cap);
  c.tape.caps.distance_cap = kv.get_int("distance_cap", c.tape.caps.distance_cap);
  c.tape.caps.depth_cap = kv.get_int("depth_cap", c.tape.caps.depth_cap);
  c.tape.ablation.no_degree = kv.get_bool("no_degree", false);
  c.tape.ablation.no_distance = kv.get_bool("no_distance", false);
  c.tape.ablation.no_depth = kv.get_bool("no_depth", false);
  c.tape.ablation.unweight_degree = kv.get_bool("unweight_degree", false);
  c.tape.ablation.unweight_distance = kv.get_bool("unweight_distance", false);
  c.infused_layers = kv.get_int_list("infused_layers");
  c.dropout = kv.get_double("dropout", c.dropout);
  c.seed = std::stoull(kv.get_string("seed", "1"));
  c.validate();
  return c;
}

Eigen::RowVectorXd sinusoid_encoding(int offset, int dim) {
  if (offset < 0) throw std::invalid_argument("sinusoid_encoding: negative offset");
  Eigen::RowVectorXd out(dim);
  for (int i = 0; i < dim; ++i) {
    int pair = i / 2;
    double freq = std::pow(10000.0, -2.0 * pair / static_cast<double>(dim));
    out(i) = (i % 2 == 0) ? std::sin(offset * freq) : std::cos(offset * freq);
  }
  return out;
}

Matrix sinusoid_table(int count, int dim) {
  Matrix m(count, dim);
  for (int r = 0; r < count; ++r) m.row(r) = sinusoid_encoding(r, dim);
  return m;
}

GiLTModel::GiLTModel(GiLTConfig config) : config_(std::move(config)) {
  config_.validate();
  init_parameters();
}

std::string GiLTModel::lp(int layer, const std::string& name) const {
  return "layer" + std::to_string(layer) + "." + name;
}

void GiLTModel::init_parameters() {
  std::mt19937_64 rng(config_.seed);
  const int d = config_.model_dim;
  const int dt = config_.tape_embed_dim;
  const int ff = config_.effective_ffn_dim();
  const int v = config_.vocab_size;
  const int classes = config_.max_count + 1;
  auto lin = [&](int in, int out) { return random_matrix(rng, in, out, 1.0 / std::sqrt(in)); };
  auto zeros = [](int r, int c) { return Matrix(Matrix::Zero(r, c)); };
  auto ones = [](int r, int c) { return Matrix(Matrix::Ones(r, c)); };

  params_.add("embed.token", random_matrix(rng, v, d, 1.0));
  for (int r = 0; r < 3; ++r) {
    params_.add(std::string("tape.") + kTapeNames[r],
                random_matrix(rng, config_.table_rows(static_cast<TapeRow>(r)), dt, 1.0));
  }
  for (int l = 1; l <= config_.num_layers; ++l) {
    params_.add(lp(l, "ln1.gain"), ones(1, d));
    params_.add(lp(l, "ln1.bias"), zeros(1, d));
    params_.add(lp(l, "wq"), lin(d, d));
    params_.add(lp(l, "wkc"), lin(d, d));
    params_.add(lp(l, "wkr"), lin(d, d));
    params_.add(lp(l, "wv"), lin(d, d));
    params_.add(lp(l, "wo"), lin(d, d));
    params_.add(lp(l, "u"), random_matrix(rng, 1, d, 0.1));
    params_.add(lp(l, "v"), random_matrix(rng, 1, d, 0.1));
    if (config_.layer_infused(l)) params_.add(lp(l, "fuse"), lin(3 * dt, d));
    params_.add(lp(l, "ln2.gain"), ones(1, d));
    params_.add(lp(l, "ln2.bias"), zeros(1, d));
    params_.add(lp(l, "ffn.w1"), lin(d, ff));
    params_.add(lp(l, "ffn.b1"), zeros(1, ff));
    params_.add(lp(l, "ffn.w2"), lin(ff, d));
    params_.add(lp(l, "ffn.b2"), zeros(1, d));
  }
  params_.add("final.ln.gain", ones(1, d));
  params_.add("final.ln.bias", zeros(1, d));
  params_.add("head.token.w", lin(d, v));
  params_.add("head.token.b", zeros(1, v));

  params_.add("struct.root", random_matrix(rng, 1, 3 * d, 1.0));
  params_.add("struct.pe_fuse", lin(3 * dt, d));
  for (const char* role : {"par", "chd"}) {
    std::string p = std::string("struct.") + role;
    params_.add(p + ".w1", lin(3 * d, d));
    params_.add(p + ".b1", zeros(1, d));
    params_.add(p + ".w2", lin(d, d));
    params_.add(p + ".b2", zeros(1, d));
  }
  params_.add("struct.wp", lin(d, d));
  params_.add("struct.ws", lin(d, d));
  params_.add("struct.wa", lin(d, classes));
  params_.add("struct.ba", zeros(1, classes));
}

AttentionTables GiLTModel::prepare(int max_len) const {
  if (max_len > config_.max_positions) {
    throw std::length_error("sequence of " + std::to_string(max_len) +
                            " positions exceeds max_positions " +
                            std::to_string(config_.max_positions));
  }
  const int d = config_.model_dim;
  const int dt = config_.tape_embed_dim;
  const int dh = config_.head_dim();
  AttentionTables t;
  t.max_len = max_len;
  t.sinusoids = sinusoid_table(max_len, d);
  Tensor sin(t.sinusoids);
  std::array<const Tensor*, 3> tape_tables;
  for (int r = 0; r < 3; ++r) tape_tables[r] = &params_.get(std::string("tape.") + kTapeNames[r]);

  for (int l = 1; l <= config_.num_layers; ++l) {
    AttentionTables::Layer layer;
    const Tensor& wkr = params_.get(lp(l, "wkr"));
    Tensor rel = ad::matmul(sin, wkr);
    std::array<Tensor, 3> tape_keys;
    bool infused = config_.layer_infused(l);
    if (infused) {
      const Tensor& fuse = params_.get(lp(l, "fuse"));
      for (int r = 0; r < 3; ++r) {
        Tensor proj = ad::matmul(*tape_tables[r], ad::slice_rows(fuse, r * dt, dt));
        tape_keys[r] = ad::matmul(proj, wkr);
      }
    }
    for (int h = 0; h < config_.num_heads; ++h) {
      layer.rel_keys.push_back(ad::slice_cols(rel, h * dh, dh));
      std::array<Tensor, 3> per_head;
      if (infused) {
        for (int r = 0; r < 3; ++r) per_head[r] = ad::slice_cols(tape_keys[r], h * dh, dh);
      }
      layer.tape_keys.push_back(per_head);
      layer.u.push_back(ad::slice_cols(params_.get(lp(l, "u")), h * dh, dh));
      layer.v.push_back(ad::slice_cols(params_.get(lp(l, "v")), h * dh, dh));
    }
    t.layers.push_back(std::move(layer));
  }
  const Tensor& pe_fuse = params_.get("struct.pe_fuse");
  for (int r = 0; r < 3; ++r) {
    t.pe_tables[r] = ad::matmul(*tape_tables[r], ad::slice_rows(pe_fuse, r * dt, dt));
  }
  return t;
}

void GiLTModel::forward_block(DecoderState& state, std::span<const int> ids,
                              std::span<const FeatureTape> tapes, const AttentionTables& tables,
                              bool record_scores) const {
  const int nq = static_cast<int>(ids.size());
  if (nq == 0) return;
  if (static_cast<int>(tapes.size()) != nq) {
    throw std::invalid_argument("forward_block: one tape per position required");
  }
  const int p0 = state.length;
  const int nk = p0 + nq;
  if (nk > tables.max_len || nk > config_.max_positions) {
    throw std::length_error("forward_block: sequence length " + std::to_string(nk) +
                            " exceeds the prepared maximum");
  }
  const int L = config_.num_layers;
  const int dh = config_.head_dim();
  for (int id : ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    }
  }

  ad::IndexMatrix offsets = ad::IndexMatrix::Zero(nq, nk);
  std::array<ad::IndexMatrix, 3> tape_idx;
  for (auto& m : tape_idx) m = ad::IndexMatrix::Zero(nq, nk);
  Matrix mask = Matrix::Zero(nq, nk);
  for (int r = 0; r < nq; ++r) {
    int p = p0 + r;
    const FeatureTape& tape = tapes[r];
    if (tape.size() != p + 1) {
      throw std::invalid_argument("tape for position " + std::to_string(p) + " has " +
                                  std::to_string(tape.size()) + " columns, expected " +
                                  std::to_string(p + 1));
    }
    for (int j = 0; j < nk; ++j) {
      if (j > p) {
        mask(r, j) = kMaskValue;
        continue;
      }
      offsets(r, j) = p - j;
      for (int row = 0; row < 3; ++row) tape_idx[row](r, j) = tape.columns[j][row];
    }
  }

  if (state.keys.empty()) {
    state.keys.resize(L);
    state.values.resize(L);
    state.layer_outputs.resize(L + 1);
  }
  if (record_scores) state.attention_scores.assign(L, {});

  auto append = [](Tensor& store, const Tensor& rows) {
    if (!store.defined()) {
      store = rows;
    } else {
      std::array<Tensor, 2> parts{store, rows};
      store = ad::concat_rows(parts);
    }
  };

  const Tensor& embed = params_.get("embed.token");
  Tensor h = ad::gather_rows(embed, ids);
  append(state.layer_outputs[0], h);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int l = 1; l <= L; ++l) {
    const auto& lt = tables.layers[l - 1];
    Tensor a = ad::layer_norm(h, params_.get(lp(l, "ln1.gain")), params_.get(lp(l, "ln1.bias")));
    Tensor q = ad::matmul(a, params_.get(lp(l, "wq")));
    append(state.keys[l - 1], ad::matmul(a, params_.get(lp(l, "wkc"))));
    append(state.values[l - 1], ad::matmul(a, params_.get(lp(l, "wv"))));
    const Tensor& keys = state.keys[l - 1];
    const Tensor& values = state.values[l - 1];
    bool infused = config_.layer_infused(l);

    std::vector<Tensor> heads;
    for (int hd = 0; hd < config_.num_heads; ++hd) {
      Tensor qh = ad::slice_cols(q, hd * dh, dh);
      Tensor qu = ad::add_row(qh, lt.u[hd]);
      Tensor qv = ad::add_row(qh, lt.v[hd]);
      Tensor kh = ad::slice_cols(keys, hd * dh, dh);
      Tensor vh = ad::slice_cols(values, hd * dh, dh);
      Tensor content = ad::matmul_nt(qu, kh);
      Tensor rel = ad::matmul_nt(qv, ad::slice_rows(lt.rel_keys[hd], 0, nk));
      Tensor position = ad::take_per_row(rel, offsets);
      if (infused) {
        for (int row = 0; row < 3; ++row) {
          Tensor z = ad::matmul_nt(qv, lt.tape_keys[hd][row]);
          position = ad::add(position, ad::take_per_row(z, tape_idx[row]));
        }
      }
      Tensor scores = ad::scale(ad::add(content, position), inv_sqrt);
      if (record_scores) state.attention_scores[l - 1].push_back(scores.value());
      Tensor attn = ad::softmax(ad::add_constant(scores, mask));
      heads.push_back(ad::matmul(attn, vh));
    }
    Tensor attn_out = ad::matmul(ad::concat_cols(heads), params_.get(lp(l, "wo")));
    h = ad::add(h, ad::dropout(attn_out, config_.dropout, dropout_rng()));
    Tensor b = ad::layer_norm(h, params_.get(lp(l, "ln2.gain")), params_.get(lp(l, "ln2.bias")));
    Tensor f = ad::gelu(ad::add_row(ad::matmul(b, params_.get(lp(l, "ffn.w1"))),
                                    params_.get(lp(l, "ffn.b1"))));
    f = ad::add_row(ad::matmul(f, params_.get(lp(l, "ffn.w2"))), params_.get(lp(l, "ffn.b2")));
    h = ad::add(h, ad::dropout(f, config_.dropout, dropout_rng()));
    append(state.layer_outputs[l], h);
  }
  Tensor fin = ad::layer_norm(h, params_.get("final.ln.gain"), params_.get("final.ln.bias"));
  Tensor logits =
      ad::add_row(ad::matmul(fin, params_.get("head.token.w")), params_.get("head.token.b"));
  append(state.log_probs, ad::log_softmax(logits));
  state.length = nk;
}

DecoderState GiLTModel::forward(std::span<const int> ids, std::span<const FeatureTape> tapes,
                                const AttentionTables& tables, bool record_scores) const {
  DecoderState state;
  forward_block(state, ids, tapes, tables, record_scores);
  return state;
}

Tensor GiLTModel::root_representation() const { return params_.get("struct.root"); }

Tensor GiLTModel::word_representations(const DecoderState& state,
                                       std::span<const int> first_positions,
                                       std::span<const int> first_token_ids) const {
  if (first_positions.size() != first_token_ids.size()) {
    throw std::invalid_argument("word_representations: positions and ids differ in length");
  }
  std::vector<int> prev;
  for (int k : first_positions) {
    if (k < 1 || k - 1 >= state.length) {
      throw std::out_of_range("word_representations: position " + std::to_string(k - 1) +
                              " has not been computed");
    }
    prev.push_back(k - 1);
  }
  std::array<Tensor, 3> parts{
      ad::gather_rows(state.layer_outputs[config_.middle_layer()], prev),
      ad::gather_rows(state.layer_outputs[config_.penultimate_layer()], prev),
      ad::gather_rows(params_.get("embed.token"), first_token_ids)};
  return ad::concat_cols(parts);
}

StructureReps GiLTModel::first_stage(const Tensor& reps) const {
  auto mlp = [&](const std::string& role) {
    return ad::gelu(ad::add_row(ad::matmul(reps, params_.get("struct." + role + ".w1")),
                                params_.get("struct." + role + ".b1")));
  };
  return {mlp("par"), mlp("chd")};
}

Tensor GiLTModel::biaffine_positional(int word, const FeatureTape& prev_tape,
                                      std::span<const int> first_positions,
                                      const AttentionTables& tables) const {
  if (word < 1) throw std::invalid_argument("biaffine_positional: word must be >= 1");
  if (word >= tables.max_len) throw std::length_error("biaffine_positional: word beyond tables");
  if (static_cast<int>(first_positions.size()) < word - 1) {
    throw std::invalid_argument("biaffine_positional: missing first positions");
  }
  const int n = word + 1;
  Matrix sin(n, config_.model_dim);
  std::array<std::vector<int>, 3> idx;
  for (int a = 0; a <= word; ++a) {
    sin.row(a) = tables.sinusoids.row(word - a);
    TapeColumn col{0, 0, 0};
    if (a < word) {
      int pos = a == 0 ? 0 : first_positions[a - 1];
      if (pos >= prev_tape.size()) {
        throw std::out_of_range("biaffine_positional: tape does not cover word " +
                                std::to_string(a));
      }
      col = prev_tape.columns[pos];
    }
    for (int r = 0; r < 3; ++r) idx[r].push_back(col[r]);
  }
  Tensor pe = ad::gather_rows(tables.pe_tables[0], idx[0]);
  pe = ad::add(pe, ad::gather_rows(tables.pe_tables[1], idx[1]));
  pe = ad::add(pe, ad::gather_rows(tables.pe_tables[2], idx[2]));
  return ad::add_constant(pe, sin);
}

StructureReps GiLTModel::second_stage(const StructureReps& first, const Tensor& pe) const {
  auto mlp = [&](const Tensor& x, const std::string& role) {
    return ad::gelu(ad::add_row(ad::matmul(ad::add(x, pe), params_.get("struct." + role + ".w2")),
                                params_.get("struct." + role + ".b2")));
  };
  return {mlp(first.par, "par"), mlp(first.chd, "chd")};
}

WordScores GiLTModel::score_word(const StructureReps& reps, int word) const {
  if (word < 1 || reps.par.rows() != word + 1 || reps.chd.rows() != word + 1) {
    throw std::invalid_argument("score_word: representations must cover words 0..i");
  }
  const Tensor& wp = params_.get("struct.wp");
  Tensor par_i = ad::slice_rows(reps.par, word, 1);
  Tensor chd_i = ad::slice_rows(reps.chd, word, 1);
  WordScores out;
  out.word = word;
  out.head_row = ad::sigmoid(ad::matmul_nt(ad::matmul(par_i, wp), reps.chd));
  out.head_col = ad::sigmoid(ad::matmul_nt(ad::matmul(reps.par, wp), chd_i));
  out.count_log_probs = count_log_distribution(reps, word);
  return out;
}

Tensor GiLTModel::count_log_distribution(const StructureReps& reps, int word) const {
  if (word < 1) throw std::invalid_argument("count distribution needs word >= 1");
  Tensor y = ad::matmul(reps.chd, params_.get("struct.ws"));
  Tensor sum_y = ad::matmul(Tensor(Matrix::Ones(1, word + 1)), y);
  Tensor par_i = ad::slice_rows(reps.par, word, 1);
  Tensor sum_par_prev =
      ad::matmul(Tensor(Matrix::Ones(1, word)), ad::slice_rows(reps.par, 0, word));
  Tensor s = ad::add(ad::mul(par_i, sum_y), ad::mul(sum_par_prev, ad::slice_rows(y, word, 1)));
  s = ad::scale(s, 1.0 / std::sqrt(2.0 * word - 1.0));
  Tensor logits = ad::add_row(ad::matmul(s, params_.get("struct.wa")), params_.get("struct.ba"));
  return ad::log_softmax(logits);
}

Tensor GiLTModel::tape_key_bias(const FeatureTape& tape, int layer) const {
  if (layer < 1 || layer > config_.num_layers) throw std::out_of_range("tape_key_bias: layer");
  if (!config_.layer_infused(layer)) return Tensor::zeros(tape.size(), config_.model_dim);
  std::array<std::vector<int>, 3> idx;
  for (const auto& col : tape.columns) {
    for (int r = 0; r < 3; ++r) idx[r].push_back(col[r]);
  }
  std::array<Tensor, 3> parts;
  for (int r = 0; r < 3; ++r) {
    parts[r] = ad::gather_rows(params_.get(std::string("tape.") + kTapeNames[r]), idx[r]);
  }
  return ad::matmul(ad::concat_cols(parts), params_.get(lp(layer, "fuse")));
}

Matrix GiLTModel::reference_attention_scores(const Matrix& normed, const std::vector<Matrix>& bias,
                                             int layer, int head) const {
  const int n = static_cast<int>(normed.rows());
  const int d = config_.model_dim;
  const int dh = config_.head_dim();
  const Matrix& wq = params_.get(lp(layer, "wq")).value();
  const Matrix& wkc = params_.get(lp(layer, "wkc")).value();
  const Matrix& wkr = params_.get(lp(layer, "wkr")).value();
  auto u = params_.get(lp(layer, "u")).value().row(0).segment(head * dh, dh);
  auto v = params_.get(lp(layer, "v")).value().row(0).segment(head * dh, dh);
  bool infused = config_.layer_infused(layer) && !bias.empty();
  Matrix out = Matrix::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    Eigen::RowVectorXd q = (normed.row(k) * wq).segment(head * dh, dh);
    for (int j = 0; j <= k; ++j) {
      Eigen::RowVectorXd kc = (normed.row(j) * wkc).segment(head * dh, dh);
      Eigen::RowVectorXd rel = sinusoid_encoding(k - j, d);
      if (infused) rel += bias[k].row(j);
      Eigen::RowVectorXd kr = (rel * wkr).segment(head * dh, dh);
      double score = q.dot(kc) + q.dot(kr) + u.dot(kc) + v.dot(kr);
      out(k, j) = score / std::sqrt(static_cast<double>(dh));
    }
  }
  return out;
}

TeacherForcedPass run_teacher_forced(const GiLTModel& model, const AttentionTables& tables,
                                     std::span<const int> ids, const WordAlignment& alignment,
                                     std::span<const FeatureTape> tapes) {
  if (static_cast<int>(ids.size()) != alignment.num_tokens() + 1) {
    throw std::invalid_argument("run_teacher_forced: ids must be BOS plus one id per token");
  }
  TeacherForcedPass out;
  out.state = model.forward(ids, tapes, tables);
  const int m = alignment.num_words();
  if (m == 0) return out;
  std::vector<int> firsts;
  std::vector<int> first_ids;
  for (int i = 1; i <= m; ++i) {
    firsts.push_back(alignment.first_token(i));
    first_ids.push_back(ids[firsts.back()]);
  }
  std::array<Tensor, 2> rows{model.root_representation(),
                             model.word_representations(out.state, firsts, first_ids)};
  StructureReps first = model.first_stage(ad::concat_rows(rows));
  for (int i = 1; i <= m; ++i) {
    Tensor pe = model.biaffine_positional(i, tapes[firsts[i - 1] - 1], firsts, tables);
    StructureReps sub{ad::slice_rows(first.par, 0, i + 1), ad::slice_rows(first.chd, 0, i + 1)};
    out.words.push_back(model.score_word(model.second_stage(sub, pe), i));
  }
  return out;
}

}  // namespace gilt
