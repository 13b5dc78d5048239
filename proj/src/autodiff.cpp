#include "co2net/autodiff.hpp"

#include "co2net/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace co2net {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  Matrix value = p.tensor.matrix();
  nodes_.push_back(Node{std::move(value), Matrix(), p.tensor.requires_grad(), &p, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError("operands recorded on different tapes");
    needs = needs || nodes_[in.id()].needs_grad;
  }
  if (!value.allFinite()) throw NumericError("non-finite value produced by tape operation");
  nodes_.push_back(Node{std::move(value), Matrix(), needs, nullptr, needs ? std::move(backward) : BackwardFn{}});
  return {this, nodes_.size() - 1};
}

void Tape::backward(const Var& root) {
  if (&root.tape() != this) throw ContractError("backward root belongs to another tape");
  const Matrix& rv = nodes_[root.id()].value;
  if (rv.rows() != 1 || rv.cols() != 1)
    throw ContractError("backward root must be scalar, got " + std::to_string(rv.rows()) + "x" +
                        std::to_string(rv.cols()));
  for (std::size_t i = 0; i <= root.id(); ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  visit_order_.clear();
  if (!nodes_[root.id()].needs_grad) return;
  nodes_[root.id()].grad(0, 0) = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.backward) {
      visit_order_.push_back(i);
      n.backward(*this, i);
    } else if (n.param != nullptr) {
      Tensor& t = n.param->tensor;
      t.grad_matrix() += n.grad;
    }
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows())
    throw DimensionError(std::string(op) + ": row mismatch " + std::to_string(a.rows()) + " vs " +
                             std::to_string(b.rows()),
                         0);
  if (a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": column mismatch " + std::to_string(a.cols()) +
                             " vs " + std::to_string(b.cols()),
                         1);
}

}  // namespace

Var temporal_conv(const Var& input, const Var& weights, const Var& bias, Index kernel) {
  if (kernel < 1 || kernel % 2 == 0)
    throw ContractError("temporal_conv: kernel size must be odd, got " + std::to_string(kernel));
  const Matrix& x = input.value();
  const Index T = x.rows();
  const Index din = x.cols();
  if (T == 0) throw EmptySequenceError("temporal_conv: empty sequence");
  if (weights.rows() != kernel * din)
    throw DimensionError("temporal_conv: weights expect K*Din=" + std::to_string(weights.rows()) +
                             " input rows, input has Din=" + std::to_string(din),
                         1);
  const Index dout = weights.cols();
  if (bias.rows() != 1 || bias.cols() != dout)
    throw DimensionError("temporal_conv: bias length " + std::to_string(bias.cols()) +
                             " does not match Dout=" + std::to_string(dout),
                         0);
  const Index pad = (kernel - 1) / 2;

  Matrix cols;
  if (kernel == 1) {
    cols = x;
  } else {
    cols = Matrix::Zero(T, kernel * din);
    for (Index t = 0; t < T; ++t)
      for (Index k = 0; k < kernel; ++k) {
        const Index src = t + k - pad;
        if (src >= 0 && src < T) cols.block(t, k * din, 1, din) = x.row(src);
      }
  }
  Matrix out = cols * weights.value();
  out.rowwise() += bias.value().row(0);

  return input.tape().record(
      std::move(out), {input, weights, bias},
      [xi = input.id(), wi = weights.id(), bi = bias.id(), cols = std::move(cols), kernel, pad, din,
       T](Tape& t, std::size_t self) {
        const Matrix& dy = t.grad(self);
        if (t.needs_grad(wi)) t.accumulate(wi, cols.transpose() * dy);
        if (t.needs_grad(bi)) t.accumulate(bi, dy.colwise().sum());
        if (t.needs_grad(xi)) {
          const Matrix dcols = dy * t.value(wi).transpose();
          if (kernel == 1) {
            t.accumulate(xi, dcols);
          } else {
            Matrix dx = Matrix::Zero(T, din);
            for (Index r = 0; r < T; ++r)
              for (Index k = 0; k < kernel; ++k) {
                const Index src = r + k - pad;
                if (src >= 0 && src < T) dx.row(src) += dcols.block(r, k * din, 1, din);
              }
            t.accumulate(xi, dx);
          }
        }
      });
}

Var global_avg_pool(const Var& input) {
  const Index T = input.rows();
  if (T == 0) throw EmptySequenceError("global_avg_pool: empty sequence");
  Matrix out = input.value().colwise().mean();
  return input.tape().record(std::move(out), {input}, [xi = input.id(), T](Tape& t, std::size_t self) {
    t.accumulate(xi, t.grad(self).replicate(T, 1) / static_cast<double>(T));
  });
}

Var sigmoid(const Var& x) {
  Matrix out = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    const auto y = t.value(self).array();
    t.accumulate(xi, t.grad(self).array() * y * (1.0 - y));
  });
}

namespace {

// Records the sign pattern of `v` relative to `at` on the tape's branch signature.
void note_signs(Tape& tape, const Matrix& v, double at) {
  for (Index i = 0; i < v.size(); ++i) tape.note_branch(v.data()[i] > at ? 1 : (v.data()[i] < at ? 2 : 3));
}

}  // namespace

Var relu(const Var& x) {
  note_signs(x.tape(), x.value(), 0.0);
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    t.accumulate(xi, (t.value(xi).array() > 0.0).cast<double>() * t.grad(self).array());
  });
}

Var abs(const Var& x) {
  note_signs(x.tape(), x.value(), 0.0);
  Matrix out = x.value().cwiseAbs();
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    const auto v = t.value(xi).array();
    const auto sign = (v > 0.0).cast<double>() - (v < 0.0).cast<double>();
    t.accumulate(xi, sign * t.grad(self).array());
  });
}

Var dropout(const Var& x, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must lie in [0,1)");
  if (!train || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(rng) >= p ? keep_scale : 0.0;
  Matrix out = x.value().cwiseProduct(mask);
  return x.tape().record(std::move(out), {x}, [xi = x.id(), mask = std::move(mask)](Tape& t, std::size_t self) {
    t.accumulate(xi, t.grad(self).cwiseProduct(mask));
  });
}

Var apply_pointwise(const Var& x, PointwiseFn fn, const DropoutArgs& args) {
  switch (fn) {
    case PointwiseFn::sigmoid: return sigmoid(x);
    case PointwiseFn::relu: return relu(x);
    case PointwiseFn::abs: return abs(x);
    case PointwiseFn::dropout:
      if (args.train && args.rng == nullptr) throw ConfigError("train-mode dropout needs an rng");
      if (!args.train) return x;
      return dropout(x, args.p, args.train, *args.rng);
  }
  throw ConfigError("unknown pointwise function");
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
    t.accumulate(ai, t.grad(self));
    t.accumulate(bi, t.grad(self));
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
    t.accumulate(ai, t.grad(self));
    t.accumulate(bi, -t.grad(self));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
                           t.accumulate(ai, t.grad(self).cwiseProduct(t.value(bi)));
                           t.accumulate(bi, t.grad(self).cwiseProduct(t.value(ai)));
                         });
}

Var broadcast_mul_rowvec(const Var& x, const Var& g) {
  if (g.rows() != 1) throw DimensionError("broadcast_mul_rowvec: gate must be a single row", 0);
  if (g.cols() != x.cols())
    throw DimensionError("broadcast_mul_rowvec: gate length " + std::to_string(g.cols()) +
                             " vs feature width " + std::to_string(x.cols()),
                         1);
  Matrix out = x.value().array().rowwise() * g.value().row(0).array();
  return x.tape().record(std::move(out), {x, g}, [xi = x.id(), gi = g.id()](Tape& t, std::size_t self) {
    const Matrix& dy = t.grad(self);
    t.accumulate(xi, dy.array().rowwise() * t.value(gi).row(0).array());
    t.accumulate(gi, dy.cwiseProduct(t.value(xi)).colwise().sum());
  });
}

Var broadcast_mul_colvec(const Var& x, const Var& g) {
  if (g.cols() != 1) throw DimensionError("broadcast_mul_colvec: gate must be a single column", 1);
  if (g.rows() != x.rows())
    throw DimensionError("broadcast_mul_colvec: gate length " + std::to_string(g.rows()) +
                             " vs sequence length " + std::to_string(x.rows()),
                         0);
  Matrix out = x.value().array().colwise() * g.value().col(0).array();
  return x.tape().record(std::move(out), {x, g}, [xi = x.id(), gi = g.id()](Tape& t, std::size_t self) {
    const Matrix& dy = t.grad(self);
    t.accumulate(xi, dy.array().colwise() * t.value(gi).col(0).array());
    t.accumulate(gi, dy.cwiseProduct(t.value(xi)).rowwise().sum());
  });
}

Var combine(const Var& a, const Var& b, CombineOp op) {
  switch (op) {
    case CombineOp::add: return add(a, b);
    case CombineOp::mul: return mul(a, b);
    case CombineOp::broadcast_mul_rowvec: return broadcast_mul_rowvec(a, b);
    case CombineOp::broadcast_mul_colvec: return broadcast_mul_colvec(a, b);
  }
  throw ConfigError("unknown combine op");
}

Var scale(const Var& x, double factor) {
  return x.tape().record(x.value() * factor, {x}, [xi = x.id(), factor](Tape& t, std::size_t self) {
    t.accumulate(xi, t.grad(self) * factor);
  });
}

Var add_scalar(const Var& x, double c) {
  Matrix out = x.value().array() + c;
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    t.accumulate(xi, t.grad(self));
  });
}

Var square(const Var& x) {
  return x.tape().record(x.value().cwiseAbs2(), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    t.accumulate(xi, 2.0 * t.grad(self).cwiseProduct(t.value(xi)));
  });
}

Var log(const Var& x) {
  if ((x.value().array() <= 0.0).any()) throw DomainError("log of non-positive value");
  Matrix out = x.value().array().log();
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    t.accumulate(xi, t.grad(self).cwiseQuotient(t.value(xi)));
  });
}

Var clamp(const Var& x, double lo, double hi) {
  note_signs(x.tape(), x.value(), lo);
  note_signs(x.tape(), x.value(), hi);
  Matrix out = x.value().cwiseMax(lo).cwiseMin(hi);
  return x.tape().record(std::move(out), {x}, [xi = x.id(), lo, hi](Tape& t, std::size_t self) {
    const auto v = t.value(xi).array();
    t.accumulate(xi, ((v > lo) && (v < hi)).cast<double>() * t.grad(self).array());
  });
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    const Matrix& v = t.value(xi);
    t.accumulate(xi, Matrix::Constant(v.rows(), v.cols(), t.grad(self)(0, 0)));
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw EmptySequenceError("mean of empty tensor");
  Matrix out(1, 1);
  out(0, 0) = x.value().sum() / n;
  return x.tape().record(std::move(out), {x}, [xi = x.id(), n](Tape& t, std::size_t self) {
    const Matrix& v = t.value(xi);
    t.accumulate(xi, Matrix::Constant(v.rows(), v.cols(), t.grad(self)(0, 0) / n));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner extents " + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.rows()),
                         1);
  return a.tape().record(a.value() * b.value(), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
    const Matrix& dy = t.grad(self);
    if (t.needs_grad(ai)) t.accumulate(ai, dy * t.value(bi).transpose());
    if (t.needs_grad(bi)) t.accumulate(bi, t.value(ai).transpose() * dy);
  });
}

Var transpose(const Var& x) {
  Matrix out = x.value().transpose();
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    t.accumulate(xi, t.grad(self).transpose());
  });
}

Var column(const Var& x, Index j) {
  if (j < 0 || j >= x.cols())
    throw DimensionError("column index " + std::to_string(j) + " out of range", 1);
  Matrix out = x.value().col(j);
  return x.tape().record(std::move(out), {x}, [xi = x.id(), j](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Matrix& v = t.value(xi);
    Matrix d = Matrix::Zero(v.rows(), v.cols());
    d.col(j) = t.grad(self).col(0);
    t.accumulate(xi, d);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row mismatch " + std::to_string(a.rows()) + " vs " +
                             std::to_string(b.rows()),
                         0);
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index ac = a.cols();
  const Index bc = b.cols();
  return a.tape().record(std::move(out), {a, b}, [ai = a.id(), bi = b.id(), ac, bc](Tape& t, std::size_t self) {
    const Matrix& dy = t.grad(self);
    t.accumulate(ai, dy.leftCols(ac));
    t.accumulate(bi, dy.rightCols(bc));
  });
}

namespace {

Matrix row_softmax(const Matrix& x) {
  Matrix y = (x.colwise() - x.rowwise().maxCoeff()).array().exp();
  y.array().colwise() /= y.rowwise().sum().array();
  return y;
}

}  // namespace

Var softmax_rows(const Var& x) {
  return x.tape().record(row_softmax(x.value()), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& dy = t.grad(self);
    const Vector dot = dy.cwiseProduct(y).rowwise().sum();
    t.accumulate(xi, y.cwiseProduct(dy - dot.replicate(1, dy.cols())));
  });
}

Var log_softmax_rows(const Var& x) {
  const Matrix& v = x.value();
  const Vector mx = v.rowwise().maxCoeff();
  const Vector lse = ((v.colwise() - mx).array().exp().rowwise().sum().log()).matrix() + mx;
  Matrix out = v.colwise() - lse;
  return x.tape().record(std::move(out), {x}, [xi = x.id()](Tape& t, std::size_t self) {
    const Matrix& dy = t.grad(self);
    const Matrix soft = t.value(self).array().exp();
    const Vector total = dy.rowwise().sum();
    t.accumulate(xi, dy - soft.cwiseProduct(total.replicate(1, dy.cols())));
  });
}

std::vector<Index> topk_indices(const Eigen::Ref<const Vector>& v, Index k) {
  std::vector<Index> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  k = std::min<Index>(k, v.size());
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Index a, Index b) {
    if (v[a] != v[b]) return v[a] > v[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

Var topk_mean_cols(const Var& x, Index k) {
  const Index T = x.rows();
  if (T == 0) throw EmptySequenceError("topk_mean_cols: empty sequence");
  if (k < 1 || k > T) throw ContractError("topk_mean_cols: k must lie in [1, T]");
  const Matrix& v = x.value();
  std::vector<std::vector<Index>> picks(static_cast<std::size_t>(v.cols()));
  Matrix out(1, v.cols());
  for (Index c = 0; c < v.cols(); ++c) {
    picks[c] = topk_indices(v.col(c), k);
    std::vector<Index> members = picks[c];
    std::sort(members.begin(), members.end());
    for (Index r : members) x.tape().note_branch(static_cast<std::uint64_t>(r) + 17);
    double s = 0.0;
    for (Index r : picks[c]) s += v(r, c);
    out(0, c) = s / static_cast<double>(k);
  }
  return x.tape().record(std::move(out), {x}, [xi = x.id(), picks = std::move(picks), k](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Matrix& v = t.value(xi);
    Matrix d = Matrix::Zero(v.rows(), v.cols());
    const Matrix& dy = t.grad(self);
    for (std::size_t c = 0; c < picks.size(); ++c)
      for (Index r : picks[c]) d(r, static_cast<Index>(c)) += dy(0, static_cast<Index>(c)) / static_cast<double>(k);
    t.accumulate(xi, d);
  });
}

Var cosine_distance(const Var& u, const Var& v, bool* degenerate) {
  require_same_shape(u, v, "cosine_distance");
  const double nu = u.value().norm();
  const double nv = v.value().norm();
  Matrix out(1, 1);
  if (nu == 0.0 || nv == 0.0) {
    if (degenerate) *degenerate = true;
    out(0, 0) = 0.5;
    return u.tape().constant(std::move(out));
  }
  if (degenerate) *degenerate = false;
  const double dot = u.value().cwiseProduct(v.value()).sum();
  const double cosine = dot / (nu * nv);
  out(0, 0) = 0.5 * (1.0 - cosine);
  return u.tape().record(std::move(out), {u, v},
                         [ui = u.id(), vi = v.id(), nu, nv, cosine](Tape& t, std::size_t self) {
                           const double g = -0.5 * t.grad(self)(0, 0);
                           const Matrix& uv = t.value(ui);
                           const Matrix& vv = t.value(vi);
                           t.accumulate(ui, g * (vv / (nu * nv) - cosine * uv / (nu * nu)));
                           t.accumulate(vi, g * (uv / (nu * nv) - cosine * vv / (nv * nv)));
                         });
}

Var Tape::detach(const Var& x) {
  if (replay_) {
    if (replay_next_ >= replay_->size()) throw ContractError("detach: replay source exhausted");
    const Matrix& frozen = (*replay_)[replay_next_++];
    if (frozen.rows() != x.rows() || frozen.cols() != x.cols()) throw ContractError("detach: replay shape mismatch");
    return constant(frozen);
  }
  if (capture_) capture_->push_back(x.value());
  return constant(x.value());
}

Var stop_gradient(const Var& x) { return x.tape().detach(x); }

}  // namespace co2net
