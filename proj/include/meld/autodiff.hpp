#pragma once

#include "meld/common.hpp"
#include "meld/rng.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace meld::ad {

/// Trainable (or buffer) tensor owned outside any graph.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Insertion-ordered parameter registry with stable addresses.
class ParameterStore {
 public:
  Parameter& add(std::string name, Matrix init, bool trainable = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter*> trainable();
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  void zero_grad();
  std::size_t size() const { return params_.size(); }
  /// Number of scalar trainable entries.
  Eigen::Index num_trainable_values() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient after Graph::backward; zero-sized if none reached this node.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  bool valid() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Tape for one forward pass. Nodes are appended in evaluation order, so the
/// tape is already topologically sorted; backward walks it in reverse.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(std::uint64_t seed = 0) : rng_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  /// Leaf whose gradient is kept on the node (inputs under test).
  Var leaf(Matrix value, bool requires_grad = true);
  /// Leaf bound to a parameter; backward accumulates into p.grad.
  /// Repeated calls with the same parameter return the same node.
  Var param(Parameter& p);

  /// Reverse accumulation from a 1x1 node. Callable once per graph.
  void backward(Var loss);

  Rng& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }

  // Used by the primitive implementations.
  Var push(Matrix value, std::span<const Var> parents, BackwardFn backward);
  const Matrix& value(int id) const;
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool wants_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// grad[id] += delta (allocates on first use).
  void accumulate(int id, const Matrix& delta);
  Matrix& grad_slot(int id);

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter*, int>> param_nodes_;
  Rng rng_;
  bool backward_done_ = false;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

/// Elementwise; `b` may also be a 1 x cols row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

/// 1x1 sum of all entries.
Var sum(Var a);

/// axis = 1 normalizes each row, axis = 0 each column.
Var softmax(Var a, int axis = 1);
Var log_softmax(Var a, int axis = 1);

/// Per-row normalization with learned gain/bias (1 x cols each).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Exact (erf) GELU.
Var gelu(Var x);
Var tanh(Var x);

/// Inverted dropout using the graph rng. Identity when !train or rate == 0.
Var dropout(Var x, double rate, bool train);
/// Dropout with an explicit mask source, for sharing masks between call sites.
Var dropout_with(Var x, double rate, bool train, Rng& rng);

/// Rows of `table` selected by ids (out-of-range ids throw).
Var embedding_lookup(Var table, std::span<const int> ids);
Var gather_rows(Var x, std::span<const int> rows);

/// Same-padded 1-D convolution over time. `x` holds several sequences
/// concatenated along rows; `segments` gives their lengths and zero padding
/// is applied at every segment boundary. `weight` is (width*cin) x cout,
/// tap-major: rows [j*cin, (j+1)*cin) act on offset j - width/2.
Var conv1d(Var x, Var weight, Var bias, int width, std::span<const int> segments);

struct BatchNormState {
  Matrix* running_mean = nullptr;  // 1 x C
  Matrix* running_var = nullptr;   // 1 x C
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Normalizes each column over rows. In training mode uses batch statistics
/// (and updates running stats when provided); otherwise the running stats.
Var batch_norm_1d(Var x, Var gamma, Var beta, bool train, const BatchNormState& state);

/// sum((a - b)^2) / rows(a): mean over rows of the squared L2 row error.
Var mse(Var a, Var b);

/// -sum_r sum_j target(r, j) * log_softmax(logits)(r, j)   (not averaged)
Var cross_entropy_soft(Var logits, const Matrix& target);
/// -sum_r log_softmax(logits)(r, ids[r]); rows with id < 0 are skipped.
Var cross_entropy_hard(Var logits, std::span<const int> ids);

/// Entries where mask != 0 are replaced by `fill` and pass no gradient.
Var masked_fill(Var x, const Matrix& mask, double fill);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);

}  // namespace meld::ad
