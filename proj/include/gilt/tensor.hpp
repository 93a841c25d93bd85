#pragma once

// Minimal dense reverse-mode autodiff over row-major double matrices.
//
// Every Tensor is a 2-D matrix (scalars are 1x1, vectors are 1xn rows). Ops
// record their parents and a backward closure when gradient recording is
// enabled and at least one input requires a gradient. A computation graph is
// single-writer; build separate graphs for concurrent workers.

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gilt::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    grad += g;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor zeros(Index rows, Index cols) { return Tensor(Matrix::Zero(rows, cols)); }
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero matrix of the value's shape when no gradient has been accumulated.
  Matrix grad() const;
  bool has_grad() const { return node_->grad.size() != 0; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  double item() const;
  double at(Index r, Index c) const { return node_->value(r, c); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_finite() const;

  // Seeds d(this)/d(this) = 1; this must be 1x1. Gradients of leaves
  // accumulate across calls; interior gradients are reset on every call.
  void backward() const;
  void zero_grad() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Gradient recording switch (thread-local).
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dropout switch (thread-local); grad_check turns it off.
bool dropout_enabled();
class NoDropoutGuard {
 public:
  NoDropoutGuard();
  ~NoDropoutGuard();
  NoDropoutGuard(const NoDropoutGuard&) = delete;
  NoDropoutGuard& operator=(const NoDropoutGuard&) = delete;

 private:
  bool previous_;
};

enum class Reduction { kSum, kMean };

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// a * b^T without forming the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a + row, with the 1 x cols row broadcast over every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul_row(const Tensor& a, const Tensor& row);
// a + c for a constant c that receives no gradient.
Tensor add_constant(const Tensor& a, const Matrix& c);

Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

// axis 1 normalises within each row, axis 0 within each column.
Tensor softmax(const Tensor& x, int axis = 1);
Tensor log_softmax(const Tensor& x, int axis = 1);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, Index begin, Index count);
Tensor slice_cols(const Tensor& x, Index begin, Index count);

// Rows of `table` picked by index. Out-of-range indices throw.
Tensor gather_rows(const Tensor& table, std::span<const int> indices);
// out(r, c) = z(r, idx(r, c)). Out-of-range indices throw.
Tensor take_per_row(const Tensor& z, const IndexMatrix& idx);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Softmax cross-entropy of each logit row against its target class.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     Reduction reduction = Reduction::kMean);
// Probabilities are clamped to [1e-7, 1 - 1e-7]; targets must be 0 or 1.
Tensor binary_cross_entropy(const Tensor& p, const Matrix& targets,
                            Reduction reduction = Reduction::kMean);

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

inline constexpr double kProbabilityClamp = 1e-7;

// Named trainable tensors with deterministic (insertion) order.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Matrix init);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.contains(name); }

  void freeze(const std::string& name, bool frozen = true);
  bool frozen(const std::string& name) const;

  struct Entry {
    std::string name;
    Tensor tensor;
    bool frozen = false;
  };
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad() const;
  // Deep copy of values (fresh leaves, no gradients).
  ParameterSet clone() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  Index worst_row = 0;
  Index worst_col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

// Compares reverse-mode gradients of every unfrozen parameter entry with
// central differences (f(x + eps) - f(x - eps)) / 2 eps. Dropout is disabled
// for the duration.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                           const GradCheckOptions& options = {});

// Checkpoint container: "GILTCKPT", u32 version, u32 entry count, then per
// entry u32 name length, name bytes, u32 rank, u64 dims, little-endian f64
// payload (row-major).
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);
// Copies checkpoint values into existing parameters; names and shapes must
// match exactly.
void load_checkpoint(const std::filesystem::path& path, ParameterSet& params);

}  // namespace gilt::ad
