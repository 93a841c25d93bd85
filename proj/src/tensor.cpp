#include "gilt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace gilt::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_dropout_enabled = true;

using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

// Wraps a freshly computed value; keeps parents and the backward closure only
// when a gradient can flow.
Tensor make_result(Matrix value, std::initializer_list<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
  }
  Tensor out(std::move(value), needs);
  if (needs) {
    for (const Tensor& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

Tensor make_result_n(Matrix value, std::span<const Tensor> parents,
                     std::function<void(Node&)> backward_fn) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
  }
  Tensor out(std::move(value), needs);
  if (needs) {
    for (const Tensor& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix log_softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m));
}

Matrix Tensor::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on a non-scalar " + shape_str(value()));
  return node_->value(0, 0);
}

bool Tensor::is_finite() const { return node_->value.allFinite(); }

void Tensor::zero_grad() const { node_->grad.resize(0, 0); }

void Tensor::backward() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("backward() needs a scalar output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.contains(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward_fn) n->grad.resize(0, 0);
  }
  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool dropout_enabled() { return g_dropout_enabled; }
NoDropoutGuard::NoDropoutGuard() : previous_(g_dropout_enabled) { g_dropout_enabled = false; }
NoDropoutGuard::~NoDropoutGuard() { g_dropout_enabled = previous_; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.value()) + " * " +
                     shape_str(b.value()));
  }
  Matrix v = a.value() * b.value();
  return make_result(std::move(v), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate_expr(pa.value.transpose() * self.grad);
  });
}

Tensor transpose(const Tensor& a) {
  Matrix v = a.value().transpose();
  return make_result(std::move(v), {a},
                     [](Node& self) { parent(self, 0).accumulate_expr(self.grad.transpose()); });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ " + shape_str(a.value()) + " * " +
                     shape_str(b.value()) + "^T");
  }
  Matrix v = a.value() * b.value().transpose();
  return make_result(std::move(v), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad * pb.value);
    if (pb.requires_grad) pb.accumulate_expr(self.grad.transpose() * pa.value);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate_expr(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate_expr(self.grad.cwiseProduct(pa.value));
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_result(a.value() * s, {a},
                     [s](Node& self) { parent(self, 0).accumulate_expr(self.grad * s); });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: row " + shape_str(row.value()) + " does not fit " +
                     shape_str(a.value()));
  }
  Matrix v = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(v), {a, row}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate_expr(self.grad.colwise().sum());
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("mul_row: row " + shape_str(row.value()) + " does not fit " +
                     shape_str(a.value()));
  }
  Matrix v = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(v), {a, row}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pr = parent(self, 1);
    if (pa.requires_grad) {
      pa.accumulate_expr((self.grad.array().rowwise() * pr.value.row(0).array()).matrix());
    }
    if (pr.requires_grad) pr.accumulate_expr(self.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

Tensor add_constant(const Tensor& a, const Matrix& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    throw ShapeError("add_constant: shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(c));
  }
  return make_result(a.value() + c, {a},
                     [](Node& self) { parent(self, 0).accumulate(self.grad); });
}

Tensor sigmoid(const Tensor& x) {
  Matrix v = x.value().unaryExpr([](double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
  });
  return make_result(std::move(v), {x}, [](Node& self) {
    const Matrix& s = self.value;
    parent(self, 0).accumulate_expr(
        self.grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Tensor gelu(const Tensor& x) {
  // tanh approximation
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double k = 0.044715;
  Matrix v = x.value().unaryExpr([](double z) {
    return 0.5 * z * (1.0 + std::tanh(c * (z + k * z * z * z)));
  });
  return make_result(std::move(v), {x}, [](Node& self) {
    Node& px = parent(self, 0);
    Matrix d = px.value.unaryExpr([](double z) {
      double u = c * (z + k * z * z * z);
      double t = std::tanh(u);
      double du = c * (1.0 + 3.0 * k * z * z);
      return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du;
    });
    px.accumulate_expr(self.grad.cwiseProduct(d));
  });
}

Tensor tanh(const Tensor& x) {
  Matrix v = x.value().array().tanh().matrix();
  return make_result(std::move(v), {x}, [](Node& self) {
    parent(self, 0).accumulate_expr(
        self.grad.cwiseProduct((1.0 - self.value.array().square()).matrix()));
  });
}

Tensor log(const Tensor& x) {
  Matrix v = x.value().array().log().matrix();
  return make_result(std::move(v), {x}, [](Node& self) {
    Node& px = parent(self, 0);
    px.accumulate_expr(self.grad.cwiseQuotient(px.value));
  });
}

Tensor exp(const Tensor& x) {
  Matrix v = x.value().array().exp().matrix();
  return make_result(std::move(v), {x}, [](Node& self) {
    parent(self, 0).accumulate_expr(self.grad.cwiseProduct(self.value));
  });
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis == 0) return transpose(softmax(transpose(x), 1));
  if (axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  return make_result(softmax_rows(x.value()), {x}, [](Node& self) {
    const Matrix& s = self.value;
    Eigen::VectorXd dots = self.grad.cwiseProduct(s).rowwise().sum();
    Matrix g = s.cwiseProduct((self.grad.colwise() - dots));
    parent(self, 0).accumulate(g);
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  if (axis == 0) return transpose(log_softmax(transpose(x), 1));
  if (axis != 1) throw ShapeError("log_softmax: axis must be 0 or 1");
  return make_result(log_softmax_rows(x.value()), {x}, [](Node& self) {
    Matrix s = self.value.array().exp().matrix();
    Eigen::VectorXd gsum = self.grad.rowwise().sum();
    Matrix g = self.grad - (s.array().colwise() * gsum.array()).matrix();
    parent(self, 0).accumulate(g);
  });
}

Tensor sum(const Tensor& x) {
  Matrix v(1, 1);
  v(0, 0) = x.value().sum();
  return make_result(std::move(v), {x}, [](Node& self) {
    Node& px = parent(self, 0);
    px.accumulate_expr(Matrix::Constant(px.value.rows(), px.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  if (x.value().size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Index rows = parts[0].rows();
  Index cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<Index> offsets;
  Index c = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(c);
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_result_n(std::move(v), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) p.accumulate_expr(self.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Index cols = parts[0].cols();
  Index rows = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  std::vector<Index> offsets;
  Index r = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(r);
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_result_n(std::move(v), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) p.accumulate_expr(self.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

Tensor slice_rows(const Tensor& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: range out of bounds for " + shape_str(x.value()));
  }
  Matrix v = x.value().middleRows(begin, count);
  return make_result(std::move(v), {x}, [begin, count](Node& self) {
    Node& px = parent(self, 0);
    if (px.grad.size() == 0) px.grad = Matrix::Zero(px.value.rows(), px.value.cols());
    px.grad.middleRows(begin, count) += self.grad;
  });
}

Tensor slice_cols(const Tensor& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw ShapeError("slice_cols: range out of bounds for " + shape_str(x.value()));
  }
  Matrix v = x.value().middleCols(begin, count);
  return make_result(std::move(v), {x}, [begin, count](Node& self) {
    Node& px = parent(self, 0);
    if (px.grad.size() == 0) px.grad = Matrix::Zero(px.value.rows(), px.value.cols());
    px.grad.middleCols(begin, count) += self.grad;
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> indices) {
  Matrix v(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    int idx = indices[i];
    if (idx < 0 || idx >= table.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx) +
                              " outside table of " + std::to_string(table.rows()) + " rows");
    }
    v.row(static_cast<Index>(i)) = table.value().row(idx);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return make_result(std::move(v), {table}, [idx = std::move(idx)](Node& self) {
    Node& pt = parent(self, 0);
    if (pt.grad.size() == 0) pt.grad = Matrix::Zero(pt.value.rows(), pt.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) pt.grad.row(idx[i]) += self.grad.row(i);
  });
}

Tensor take_per_row(const Tensor& z, const IndexMatrix& idx) {
  if (idx.rows() != z.rows()) throw ShapeError("take_per_row: row counts differ");
  Matrix v(idx.rows(), idx.cols());
  for (Index r = 0; r < idx.rows(); ++r) {
    for (Index c = 0; c < idx.cols(); ++c) {
      int k = idx(r, c);
      if (k < 0 || k >= z.cols()) {
        throw std::out_of_range("take_per_row: index " + std::to_string(k) + " outside " +
                                std::to_string(z.cols()) + " columns");
      }
      v(r, c) = z.value()(r, k);
    }
  }
  return make_result(std::move(v), {z}, [idx](Node& self) {
    Node& pz = parent(self, 0);
    if (pz.grad.size() == 0) pz.grad = Matrix::Zero(pz.value.rows(), pz.value.cols());
    for (Index r = 0; r < idx.rows(); ++r) {
      for (Index c = 0; c < idx.cols(); ++c) pz.grad(r, idx(r, c)) += self.grad(r, c);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ShapeError("layer_norm: gain/bias must be 1 x " + std::to_string(n));
  }
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    double mu = x.value().row(r).mean();
    double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix v = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
             bias.value().row(0).array();
  return make_result(std::move(v), {x, gain, bias}, [xhat, inv_std, n](Node& self) {
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    Node& pb = parent(self, 2);
    if (pg.requires_grad) pg.accumulate_expr(self.grad.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate_expr(self.grad.colwise().sum());
    if (px.requires_grad) {
      Matrix gx(xhat.rows(), n);
      for (Index r = 0; r < xhat.rows(); ++r) {
        Eigen::RowVectorXd dxhat = self.grad.row(r).cwiseProduct(pg.value.row(0));
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
        gx.row(r) = inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
      }
      px.accumulate(gx);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, Reduction reduction) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw ShapeError("cross_entropy: one target per row required");
  }
  Matrix logp = log_softmax_rows(logits.value());
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    int t = targets[r];
    if (t < 0 || t >= logits.cols()) throw std::out_of_range("cross_entropy: target out of range");
    total -= logp(static_cast<Index>(r), t);
  }
  double denom = reduction == Reduction::kMean ? static_cast<double>(targets.size()) : 1.0;
  Matrix v(1, 1);
  v(0, 0) = total / denom;
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result(std::move(v), {logits}, [logp, tg = std::move(tg), denom](Node& self) {
    Matrix g = logp.array().exp().matrix();
    for (std::size_t r = 0; r < tg.size(); ++r) g(static_cast<Index>(r), tg[r]) -= 1.0;
    parent(self, 0).accumulate_expr(g * (self.grad(0, 0) / denom));
  });
}

Tensor binary_cross_entropy(const Tensor& p, const Matrix& targets, Reduction reduction) {
  if (targets.rows() != p.rows() || targets.cols() != p.cols()) {
    throw ShapeError("binary_cross_entropy: target shape mismatch");
  }
  const double lo = kProbabilityClamp;
  const double hi = 1.0 - kProbabilityClamp;
  Matrix pc = p.value().cwiseMax(lo).cwiseMin(hi);
  double total = 0.0;
  for (Index i = 0; i < pc.size(); ++i) {
    double t = targets.data()[i];
    if (t != 0.0 && t != 1.0) throw std::invalid_argument("binary_cross_entropy: targets must be 0 or 1");
    double q = pc.data()[i];
    total -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
  }
  double denom = reduction == Reduction::kMean ? static_cast<double>(pc.size()) : 1.0;
  Matrix v(1, 1);
  v(0, 0) = total / denom;
  return make_result(std::move(v), {p}, [pc, targets, denom, lo, hi](Node& self) {
    Node& pp = parent(self, 0);
    Matrix g(pc.rows(), pc.cols());
    for (Index i = 0; i < pc.size(); ++i) {
      double raw = pp.value.data()[i];
      double q = pc.data()[i];
      double t = targets.data()[i];
      // Clamped entries are flat.
      g.data()[i] = (raw < lo || raw > hi) ? 0.0 : (q - t) / (q * (1.0 - q));
    }
    pp.accumulate_expr(g * (self.grad(0, 0) / denom));
  });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0 || !g_dropout_enabled || !g_grad_enabled) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return make_result(x.value().cwiseProduct(mask), {x}, [mask](Node& self) {
    parent(self, 0).accumulate_expr(self.grad.cwiseProduct(mask));
  });
}

Tensor& ParameterSet::add(const std::string& name, Matrix init) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, Tensor::parameter(std::move(init)), false});
  return entries_.back().tensor;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].tensor;
}

Tensor& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].tensor;
}

void ParameterSet::freeze(const std::string& name, bool frozen) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  entries_[it->second].frozen = frozen;
}

bool ParameterSet::frozen(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].frozen;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.tensor.value().size());
  return n;
}

void ParameterSet::zero_grad() const {
  for (const auto& e : entries_) e.tensor.zero_grad();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& e : entries_) {
    out.add(e.name, e.tensor.value());
    out.entries_.back().frozen = e.frozen;
  }
  return out;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                           const GradCheckOptions& options) {
  NoDropoutGuard no_dropout;
  params.zero_grad();
  {
    Tensor loss = loss_fn();
    loss.backward();
  }
  GradCheckReport report;
  for (const auto& entry : params.entries()) {
    if (entry.frozen) continue;
    Tensor t = entry.tensor;
    Matrix analytic = t.grad();
    GradCheckEntry result;
    result.name = entry.name;
    Matrix& value = t.mutable_value();
    for (Index r = 0; r < value.rows(); ++r) {
      for (Index c = 0; c < value.cols(); ++c) {
        double saved = value(r, c);
        double plus;
        double minus;
        {
          NoGradGuard no_grad;
          value(r, c) = saved + options.eps;
          plus = loss_fn().item();
          value(r, c) = saved - options.eps;
          minus = loss_fn().item();
        }
        value(r, c) = saved;
        double numeric = (plus - minus) / (2.0 * options.eps);
        double a = analytic(r, c);
        double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
        double rel = std::abs(a - numeric) / denom;
        if (rel > result.max_relative_error) {
          result.max_relative_error = rel;
          result.worst_row = r;
          result.worst_col = c;
          result.analytic = a;
          result.numeric = numeric;
        }
      }
    }
    result.passed = result.max_relative_error < options.tolerance;
    report.max_relative_error = std::max(report.max_relative_error, result.max_relative_error);
    report.passed = report.passed && result.passed;
    report.entries.push_back(std::move(result));
  }
  params.zero_grad();
  return report;
}

}  // namespace gilt::ad
