#include "meld/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace meld::ad {

// ---- ParameterStore --------------------------------------------------------

Parameter& ParameterStore::add(std::string name, Matrix init, bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(init);
  p->trainable = trainable;
  p->zero_grad();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw RangeError("unknown parameter: " + name);
}

const Parameter& ParameterStore::at(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw RangeError("unknown parameter: " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name == name; });
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

Eigen::Index ParameterStore::num_trainable_values() const {
  Eigen::Index n = 0;
  for (const auto& p : params_) {
    if (p->trainable) n += p->value.size();
  }
  return n;
}

// ---- Var / Graph -------------------------------------------------------------

const Matrix& Var::value() const { return graph_->value(id_); }
const Matrix& Var::grad() const { return graph_->grad(id_); }

double Var::scalar() const {
  const auto& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar() on a non 1x1 tensor");
  return v(0, 0);
}

const Matrix& Graph::value(int id) const {
  const auto& n = nodes_[static_cast<std::size_t>(id)];
  return n.external != nullptr ? *n.external : n.value;
}

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  for (const auto& [ptr, id] : param_nodes_) {
    if (ptr == &p) return Var(this, id);
  }
  Node n;
  n.external = &p.value;
  n.requires_grad = p.trainable;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace_back(&p, id);
  return Var(this, id);
}

Var Graph::push(Matrix value, std::span<const Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& p : parents) {
    if (p.graph() != this) throw ConfigError("mixing tensors from different graphs");
    if (wants_grad(p.id())) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Graph::grad_slot(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    const auto& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Graph::accumulate(int id, const Matrix& delta) {
  if (!wants_grad(id)) return;
  auto& g = grad_slot(id);
  if (g.rows() != delta.rows() || g.cols() != delta.cols()) throw ShapeError("gradient shape mismatch");
  g += delta;
}

void Graph::backward(Var loss) {
  if (backward_done_) throw ConfigError("backward() already ran on this graph; run a new forward pass first");
  if (loss.graph() != this) throw ConfigError("loss does not belong to this graph");
  const auto& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward() needs a 1x1 loss");
  backward_done_ = true;
  if (!wants_grad(loss.id())) return;
  grad_slot(loss.id())(0, 0) = 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, i);
    }
    if (n.param != nullptr) {
      auto& pg = n.param->grad;
      if (pg.rows() != n.grad.rows() || pg.cols() != n.grad.cols()) pg.setZero(n.grad.rows(), n.grad.cols());
      pg += n.grad;
    }
  }
}

// ---- primitives -------------------------------------------------------------

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

enum class Broadcast { kNone, kRow };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  require_same_shape(a, b, op);
  return Broadcast::kNone;
}

// std::exp underflows to exactly 0; Eigen's vectorized exp clamps very
// negative inputs to a tiny denormal, which would let masked attention
// entries leak gradient.
double exact_exp(double v) { return std::exp(v); }

Matrix row_softmax(const Matrix& x) {
  Matrix y = x;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double mx = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - mx).unaryExpr(&exact_exp).matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

Matrix row_log_softmax(const Matrix& x) {
  Matrix y = x;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double mx = y.row(r).maxCoeff();
    const double lse = mx + std::log((y.row(r).array() - mx).unaryExpr(&exact_exp).sum());
    y.row(r).array() -= lse;
  }
  return y;
}

}  // namespace

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out = av * bv;
  const Var parents[] = {a, b};
  return a.graph()->push(std::move(out), parents, [a, b](Graph& g, int self) {
    const auto& dy = g.grad(self);
    if (g.wants_grad(a.id())) g.grad_slot(a.id()).noalias() += dy * g.value(b.id()).transpose();
    if (g.wants_grad(b.id())) g.grad_slot(b.id()).noalias() += g.value(a.id()).transpose() * dy;
  });
}

Var matmul_nt(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.cols()) throw ShapeError("matmul_nt: column counts differ");
  Matrix out = av * bv.transpose();
  const Var parents[] = {a, b};
  return a.graph()->push(std::move(out), parents, [a, b](Graph& g, int self) {
    const auto& dy = g.grad(self);
    if (g.wants_grad(a.id())) g.grad_slot(a.id()).noalias() += dy * g.value(b.id());
    if (g.wants_grad(b.id())) g.grad_slot(b.id()).noalias() += dy.transpose() * g.value(a.id());
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  const Var parents[] = {a};
  return a.graph()->push(std::move(out), parents, [a](Graph& g, int self) {
    g.grad_slot(a.id()) += g.grad(self).transpose();
  });
}

Var add(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "add");
  Matrix out = kind == Broadcast::kRow ? Matrix(a.value().rowwise() + b.value().row(0)) : Matrix(a.value() + b.value());
  const Var parents[] = {a, b};
  return a.graph()->push(std::move(out), parents, [a, b, kind](Graph& g, int self) {
    const auto& dy = g.grad(self);
    if (g.wants_grad(a.id())) g.grad_slot(a.id()) += dy;
    if (g.wants_grad(b.id())) {
      if (kind == Broadcast::kRow) {
        g.grad_slot(b.id()) += dy.colwise().sum();
      } else {
        g.grad_slot(b.id()) += dy;
      }
    }
  });
}

Var sub(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "sub");
  Matrix out = kind == Broadcast::kRow ? Matrix(a.value().rowwise() - b.value().row(0)) : Matrix(a.value() - b.value());
  const Var parents[] = {a, b};
  return a.graph()->push(std::move(out), parents, [a, b, kind](Graph& g, int self) {
    const auto& dy = g.grad(self);
    if (g.wants_grad(a.id())) g.grad_slot(a.id()) += dy;
    if (g.wants_grad(b.id())) {
      if (kind == Broadcast::kRow) {
        g.grad_slot(b.id()) -= dy.colwise().sum();
      } else {
        g.grad_slot(b.id()) -= dy;
      }
    }
  });
}

Var mul(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "mul");
  Matrix out = kind == Broadcast::kRow
                   ? Matrix(a.value().array().rowwise() * b.value().row(0).array())
                   : Matrix(a.value().cwiseProduct(b.value()));
  const Var parents[] = {a, b};
  return a.graph()->push(std::move(out), parents, [a, b, kind](Graph& g, int self) {
    const auto& dy = g.grad(self);
    const auto& av = g.value(a.id());
    const auto& bv = g.value(b.id());
    if (kind == Broadcast::kRow) {
      if (g.wants_grad(a.id())) g.grad_slot(a.id()).array() += dy.array().rowwise() * bv.row(0).array();
      if (g.wants_grad(b.id())) g.grad_slot(b.id()) += dy.cwiseProduct(av).colwise().sum();
    } else {
      if (g.wants_grad(a.id())) g.grad_slot(a.id()) += dy.cwiseProduct(bv);
      if (g.wants_grad(b.id())) g.grad_slot(b.id()) += dy.cwiseProduct(av);
    }
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  const Var parents[] = {a};
  return a.graph()->push(std::move(out), parents, [a, s](Graph& g, int self) {
    g.grad_slot(a.id()) += g.grad(self) * s;
  });
}

Var add_scalar(Var a, double s) {
  Matrix out = a.value().array() + s;
  const Var parents[] = {a};
  return a.graph()->push(std::move(out), parents, [a](Graph& g, int self) {
    g.grad_slot(a.id()) += g.grad(self);
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Var parents[] = {a};
  return a.graph()->push(std::move(out), parents, [a](Graph& g, int self) {
    g.grad_slot(a.id()).array() += g.grad(self)(0, 0);
  });
}

Var softmax(Var a, int axis) {
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  if (axis != 1) throw ConfigError("softmax axis must be 0 or 1");
  Matrix out = row_softmax(a.value());
  const Var parents[] = {a};
  return a.graph()->push(std::move(out), parents, [a](Graph& g, int self) {
    const auto& y = g.value(self);
    const auto& dy = g.grad(self);
    const Eigen::VectorXd dot = dy.cwiseProduct(y).rowwise().sum();
    g.grad_slot(a.id()).array() += y.array() * (dy.colwise() - dot).array();
  });
}

Var log_softmax(Var a, int axis) {
  if (axis == 0) return transpose(log_softmax(transpose(a), 1));
  if (axis != 1) throw ConfigError("log_softmax axis must be 0 or 1");
  Matrix out = row_log_softmax(a.value());
  const Var parents[] = {a};
  return a.graph()->push(std::move(out), parents, [a](Graph& g, int self) {
    const auto& y = g.value(self);
    const auto& dy = g.grad(self);
    const Eigen::VectorXd total = dy.rowwise().sum();
    const Matrix p = y.array().unaryExpr(&exact_exp);
    g.grad_slot(a.id()) += dy - Matrix(p.array().colwise() * total.array());
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const auto& xv = x.value();
  const Eigen::Index d = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != d || bias.value().rows() != 1 || bias.value().cols() != d) {
    throw ShapeError("layer_norm: gain/bias must be 1 x cols");
  }
  Matrix xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std[r];
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  const Var parents[] = {x, gain, bias};
  return x.graph()->push(std::move(out), parents,
                         [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, int self) {
                           const auto& dy = g.grad(self);
                           if (g.wants_grad(gain.id())) g.grad_slot(gain.id()) += dy.cwiseProduct(xhat).colwise().sum();
                           if (g.wants_grad(bias.id())) g.grad_slot(bias.id()) += dy.colwise().sum();
                           if (g.wants_grad(x.id())) {
                             const Matrix dxhat = dy.array().rowwise() * g.value(gain.id()).row(0).array();
                             const Eigen::VectorXd m1 = dxhat.rowwise().mean();
                             const Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
                             Matrix dx = dxhat;
                             dx.colwise() -= m1;
                             dx -= Matrix(xhat.array().colwise() * m2.array());
                             dx.array().colwise() *= inv_std.array();
                             g.grad_slot(x.id()) += dx;
                           }
                         });
}

Var gelu(Var x) {
  const auto& xv = x.value();
  Matrix out = xv.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
  const Var parents[] = {x};
  return x.graph()->push(std::move(out), parents, [x](Graph& g, int self) {
    const Matrix deriv = g.value(x.id()).unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) + v * std::exp(-0.5 * v * v) * (0.5 * M_2_SQRTPI * M_SQRT1_2);
    });
    g.grad_slot(x.id()) += g.grad(self).cwiseProduct(deriv);
  });
}

Var tanh(Var x) {
  Matrix out = x.value().array().tanh();
  const Var parents[] = {x};
  return x.graph()->push(std::move(out), parents, [x](Graph& g, int self) {
    const auto& y = g.value(self);
    g.grad_slot(x.id()).array() += g.grad(self).array() * (1.0 - y.array().square());
  });
}

Var dropout_with(Var x, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  Matrix out = x.value().cwiseProduct(mask);
  const Var parents[] = {x};
  return x.graph()->push(std::move(out), parents, [x, mask = std::move(mask)](Graph& g, int self) {
    g.grad_slot(x.id()) += g.grad(self).cwiseProduct(mask);
  });
}

Var dropout(Var x, double rate, bool train) { return dropout_with(x, rate, train, x.graph()->rng()); }

Var gather_rows(Var x, std::span<const int> rows) {
  const auto& xv = x.value();
  std::vector<int> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= xv.rows()) throw RangeError("gather index out of range: " + std::to_string(idx[i]));
    out.row(static_cast<Eigen::Index>(i)) = xv.row(idx[i]);
  }
  const Var parents[] = {x};
  return x.graph()->push(std::move(out), parents, [x, idx = std::move(idx)](Graph& g, int self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad_slot(x.id());
    for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += dy.row(static_cast<Eigen::Index>(i));
  });
}

Var embedding_lookup(Var table, std::span<const int> ids) { return gather_rows(table, ids); }

Var conv1d(Var x, Var weight, Var bias, int width, std::span<const int> segments) {
  const auto& xv = x.value();
  const Eigen::Index cin = xv.cols();
  if (width < 1 || width % 2 == 0) throw ConfigError("conv1d width must be odd");
  if (weight.value().rows() != width * cin) throw ShapeError("conv1d: weight rows must equal width * in_channels");
  const Eigen::Index cout = weight.value().cols();
  if (bias.value().rows() != 1 || bias.value().cols() != cout) throw ShapeError("conv1d: bias must be 1 x out_channels");
  const long total = std::accumulate(segments.begin(), segments.end(), 0L);
  if (total != xv.rows()) throw ShapeError("conv1d: segment lengths do not cover the input rows");

  const int pad = width / 2;
  // (source row, tap) pairs; -1 where padding applies.
  std::vector<Eigen::Index> src(static_cast<std::size_t>(xv.rows() * width), -1);
  Matrix col = Matrix::Zero(xv.rows(), width * cin);
  Eigen::Index base = 0;
  for (int len : segments) {
    for (Eigen::Index t = 0; t < len; ++t) {
      for (int j = 0; j < width; ++j) {
        const Eigen::Index s = t + j - pad;
        if (s < 0 || s >= len) continue;
        src[static_cast<std::size_t>((base + t) * width + j)] = base + s;
        col.block(base + t, j * cin, 1, cin) = xv.row(base + s);
      }
    }
    base += len;
  }
  Matrix out = (col * weight.value()).rowwise() + bias.value().row(0);
  const Var parents[] = {x, weight, bias};
  return x.graph()->push(
      std::move(out), parents,
      [x, weight, bias, width, cin, col = std::move(col), src = std::move(src)](Graph& g, int self) {
        const auto& dy = g.grad(self);
        if (g.wants_grad(weight.id())) g.grad_slot(weight.id()).noalias() += col.transpose() * dy;
        if (g.wants_grad(bias.id())) g.grad_slot(bias.id()) += dy.colwise().sum();
        if (g.wants_grad(x.id())) {
          const Matrix dcol = dy * g.value(weight.id()).transpose();
          auto& dx = g.grad_slot(x.id());
          for (Eigen::Index r = 0; r < dcol.rows(); ++r) {
            for (int j = 0; j < width; ++j) {
              const Eigen::Index s = src[static_cast<std::size_t>(r * width + j)];
              if (s >= 0) dx.row(s) += dcol.block(r, j * cin, 1, cin);
            }
          }
        }
      });
}

Var batch_norm_1d(Var x, Var gamma, Var beta, bool train, const BatchNormState& state) {
  const auto& xv = x.value();
  const Eigen::Index c = xv.cols();
  const Eigen::Index n = xv.rows();
  if (gamma.value().cols() != c || beta.value().cols() != c) throw ShapeError("batch_norm: gamma/beta width mismatch");
  if (n == 0) throw EmptyInputError("batch_norm: no rows");
  RowVector mean(c), inv_std(c);
  if (train) {
    mean = xv.colwise().mean();
    const RowVector var = (xv.rowwise() - mean).array().square().colwise().mean();
    inv_std = (var.array() + state.eps).rsqrt();
    if (state.running_mean != nullptr && state.running_var != nullptr) {
      const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
      *state.running_mean = (1.0 - state.momentum) * (*state.running_mean) + state.momentum * mean;
      *state.running_var = (1.0 - state.momentum) * (*state.running_var) + state.momentum * (var * unbias);
    }
  } else {
    if (state.running_mean == nullptr || state.running_var == nullptr) {
      throw ConfigError("batch_norm: inference mode needs running statistics");
    }
    mean = state.running_mean->row(0);
    inv_std = (state.running_var->row(0).array() + state.eps).rsqrt();
  }
  Matrix xhat = (xv.rowwise() - mean).array().rowwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const Var parents[] = {x, gamma, beta};
  return x.graph()->push(
      std::move(out), parents,
      [x, gamma, beta, train, xhat = std::move(xhat), inv_std](Graph& g, int self) {
        const auto& dy = g.grad(self);
        if (g.wants_grad(gamma.id())) g.grad_slot(gamma.id()) += dy.cwiseProduct(xhat).colwise().sum();
        if (g.wants_grad(beta.id())) g.grad_slot(beta.id()) += dy.colwise().sum();
        if (!g.wants_grad(x.id())) return;
        const Matrix dxhat = dy.array().rowwise() * g.value(gamma.id()).row(0).array();
        if (!train) {
          g.grad_slot(x.id()).array() += dxhat.array().rowwise() * inv_std.array();
          return;
        }
        const RowVector m1 = dxhat.colwise().mean();
        const RowVector m2 = dxhat.cwiseProduct(xhat).colwise().mean();
        Matrix dx = dxhat.rowwise() - m1;
        dx -= Matrix(xhat.array().rowwise() * m2.array());
        dx.array().rowwise() *= inv_std.array();
        g.grad_slot(x.id()) += dx;
      });
}

Var mse(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mse");
  if (a.rows() == 0) throw EmptyInputError("mse: no rows");
  const double n = static_cast<double>(a.rows());
  Matrix out(1, 1);
  out(0, 0) = (a.value() - b.value()).squaredNorm() / n;
  const Var parents[] = {a, b};
  return a.graph()->push(std::move(out), parents, [a, b, n](Graph& g, int self) {
    const double s = g.grad(self)(0, 0) * 2.0 / n;
    const Matrix diff = g.value(a.id()) - g.value(b.id());
    if (g.wants_grad(a.id())) g.grad_slot(a.id()) += s * diff;
    if (g.wants_grad(b.id())) g.grad_slot(b.id()) -= s * diff;
  });
}

Var cross_entropy_soft(Var logits, const Matrix& target) {
  require_same_shape(logits.value(), target, "cross_entropy_soft");
  const Matrix lsm = row_log_softmax(logits.value());
  Matrix out(1, 1);
  // 0 * log(p) contributes nothing even if log(p) underflows.
  double acc = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target.data()[i] != 0.0) acc -= target.data()[i] * lsm.data()[i];
  }
  out(0, 0) = acc;
  const Var parents[] = {logits};
  return logits.graph()->push(std::move(out), parents, [logits, target, lsm](Graph& g, int self) {
    const double s = g.grad(self)(0, 0);
    const Eigen::VectorXd mass = target.rowwise().sum();
    const Matrix p = lsm.array().unaryExpr(&exact_exp);
    g.grad_slot(logits.id()) += s * (Matrix(p.array().colwise() * mass.array()) - target);
  });
}

Var cross_entropy_hard(Var logits, std::span<const int> ids) {
  const auto& lv = logits.value();
  if (static_cast<Eigen::Index>(ids.size()) != lv.rows()) throw ShapeError("cross_entropy_hard: one id per row required");
  std::vector<int> idx(ids.begin(), ids.end());
  const Matrix lsm = row_log_softmax(lv);
  double acc = 0.0;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    if (idx[r] >= lv.cols()) throw RangeError("cross_entropy_hard: target id out of range");
    acc -= lsm(static_cast<Eigen::Index>(r), idx[r]);
  }
  Matrix out(1, 1);
  out(0, 0) = acc;
  const Var parents[] = {logits};
  return logits.graph()->push(std::move(out), parents, [logits, idx = std::move(idx), lsm](Graph& g, int self) {
    const double s = g.grad(self)(0, 0);
    auto& dx = g.grad_slot(logits.id());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      const auto row = static_cast<Eigen::Index>(r);
      dx.row(row) += s * lsm.row(row).array().unaryExpr(&exact_exp).matrix();
      dx(row, idx[r]) -= s;
    }
  });
}

Var masked_fill(Var x, const Matrix& mask, double fill) {
  require_same_shape(x.value(), mask, "masked_fill");
  Matrix out = x.value();
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (mask.data()[i] != 0.0) out.data()[i] = fill;
  }
  const Var parents[] = {x};
  return x.graph()->push(std::move(out), parents, [x, mask](Graph& g, int self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad_slot(x.id());
    for (Eigen::Index i = 0; i < dy.size(); ++i) {
      if (mask.data()[i] == 0.0) dx.data()[i] += dy.data()[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph()->push(std::move(out), parts, [ps](Graph& g, int self) {
    const auto& dy = g.grad(self);
    Eigen::Index r0 = 0;
    for (const auto& p : ps) {
      const Eigen::Index n = g.value(p.id()).rows();
      if (g.wants_grad(p.id())) g.grad_slot(p.id()) += dy.middleRows(r0, n);
      r0 += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph()->push(std::move(out), parts, [ps](Graph& g, int self) {
    const auto& dy = g.grad(self);
    Eigen::Index c0 = 0;
    for (const auto& p : ps) {
      const Eigen::Index n = g.value(p.id()).cols();
      if (g.wants_grad(p.id())) g.grad_slot(p.id()) += dy.middleCols(c0, n);
      c0 += n;
    }
  });
}

Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw RangeError("slice_rows out of range");
  Matrix out = x.value().middleRows(start, count);
  const Var parents[] = {x};
  return x.graph()->push(std::move(out), parents, [x, start, count](Graph& g, int self) {
    g.grad_slot(x.id()).middleRows(start, count) += g.grad(self);
  });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw RangeError("slice_cols out of range");
  Matrix out = x.value().middleCols(start, count);
  const Var parents[] = {x};
  return x.graph()->push(std::move(out), parents, [x, start, count](Graph& g, int self) {
    g.grad_slot(x.id()).middleCols(start, count) += g.grad(self);
  });
}

}  // namespace meld::ad
