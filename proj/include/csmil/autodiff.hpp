#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Graph records every operation applied to its Vars in creation order, which
// is also a topological order; backward() walks the tape once in reverse. Only
// the operations the model zoo needs are provided. Broadcasting is limited to
// scalar-with-matrix and equal shapes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csmil/error.hpp"

namespace csmil::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// The engine-wide tensor type: 64-bit, row-major, contiguous.
using Tensor = Matrix<double>;

enum class OpKind {
  Constant, Parameter, MatMul, Add, Sub, Mul, Neg, Scale,
  Tanh, Relu, Sigmoid, Exp, Log,
  Softmax, LogSoftmax, Sum, Mean, Max,
  Transpose, HConcat, VConcat, GatherRows, Column, Element,
};

template <typename Derived>
std::string shape_string(const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream os;
  os << '[' << m.rows() << "x" << m.cols() << ']';
  return os.str();
}

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Matrix<Scalar>& value() const { return graph_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Graph<Scalar>* graph() const { return graph_; }

 private:
  Graph<Scalar>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar loss, indexed by node id.
template <typename Scalar>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Matrix<Scalar>> grads) : grads_(std::move(grads)) {}

  /// Gradient with respect to `v`; zeros if `v` does not influence the loss.
  Matrix<Scalar> operator[](const Var<Scalar>& v) const {
    const auto& g = grads_.at(v.id());
    if (g.size() == 0) return Matrix<Scalar>::Zero(v.rows(), v.cols());
    return g;
  }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Matrix<Scalar>> grads_;
};

template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(const Mat& out_grad, std::vector<Mat>& grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(Mat value) {
    return push(OpKind::Constant, std::move(value), false, {});
  }
  Var<Scalar> parameter(Mat value) {
    return push(OpKind::Parameter, std::move(value), true, {});
  }

  const Mat& value(std::size_t id) const { return nodes_.at(id).value; }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Record an operation whose inputs are `inputs`. Used by the free-function ops.
  Var<Scalar> record(OpKind kind, Mat value, std::initializer_list<Var<Scalar>> inputs,
                     BackwardFn backward) {
    bool rg = false;
    for (const auto& in : inputs) rg = rg || requires_grad(in.id());
    return push(kind, std::move(value), rg, std::move(backward));
  }
  Var<Scalar> record(OpKind kind, Mat value, std::span<const Var<Scalar>> inputs,
                     BackwardFn backward) {
    bool rg = false;
    for (const auto& in : inputs) rg = rg || requires_grad(in.id());
    return push(kind, std::move(value), rg, std::move(backward));
  }

  /// Reverse sweep from a 1x1 loss. Every call starts from zeroed gradients, so
  /// repeated calls on the same graph return identical results.
  Gradients<Scalar> backward(const Var<Scalar>& loss) const {
    if (loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
    const Mat& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1)
      throw ContractError("backward: loss must be scalar, got " + shape_string(lv));
    std::vector<Mat> grads(nodes_.size());
    grads[loss.id()] = Mat::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || grads[i].size() == 0) continue;
      n.backward(grads[i], grads);
    }
    return Gradients<Scalar>(std::move(grads));
  }

  /// Adds `g` into the slot of node `id`, allocating it on first use.
  static void accumulate(std::vector<Mat>& grads, std::size_t id, const Mat& g) {
    if (grads[id].size() == 0) grads[id] = g;
    else grads[id] += g;
  }

 private:
  struct Node {
    OpKind kind;
    Mat value;
    bool requires_grad;
    BackwardFn backward;
  };

  Var<Scalar> push(OpKind kind, Mat value, bool requires_grad, BackwardFn backward) {
    if (!value.allFinite()) throw NumericError("non-finite value produced by operation");
    nodes_.push_back(Node{kind, std::move(value), requires_grad, std::move(backward)});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
Graph<Scalar>& same_graph(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.graph() == nullptr || a.graph() != b.graph())
    throw ContractError("operands belong to different graphs");
  return *a.graph();
}

template <typename Scalar>
void check_axis(int axis, const char* op) {
  if (axis != 0 && axis != 1)
    throw DimensionError(std::string(op) + ": invalid axis " + std::to_string(axis));
}

// Elementwise binary op with scalar or equal-shape broadcasting.
template <typename Scalar, typename Fwd, typename GradA, typename GradB>
Var<Scalar> binary(OpKind kind, const char* name, const Var<Scalar>& a, const Var<Scalar>& b,
                   Fwd fwd, GradA grad_a, GradB grad_b) {
  using Mat = Matrix<Scalar>;
  auto& g = same_graph(a, b);
  const Mat& av = a.value();
  const Mat& bv = b.value();
  const bool a_scalar = av.size() == 1, b_scalar = bv.size() == 1;
  const bool same = av.rows() == bv.rows() && av.cols() == bv.cols();
  if (!same && !a_scalar && !b_scalar)
    throw DimensionError(std::string(name) + ": shapes " + shape_string(av) + " and " +
                         shape_string(bv) + " are not broadcast-compatible");
  const Eigen::Index r = same || b_scalar ? av.rows() : bv.rows();
  const Eigen::Index c = same || b_scalar ? av.cols() : bv.cols();
  const Mat ae = a_scalar && !same ? Mat::Constant(r, c, av(0, 0)) : av;
  const Mat be = b_scalar && !same ? Mat::Constant(r, c, bv(0, 0)) : bv;
  Mat out = fwd(ae, be);
  const std::size_t ia = a.id(), ib = b.id();
  const bool ra = g.requires_grad(ia), rb = g.requires_grad(ib);
  return g.record(kind, std::move(out), {a, b},
                  [=](const Mat& go, std::vector<Mat>& grads) {
                    if (ra) {
                      Mat ga = grad_a(go, ae, be);
                      if (a_scalar && !same) ga = Mat::Constant(1, 1, ga.sum());
                      Graph<Scalar>::accumulate(grads, ia, ga);
                    }
                    if (rb) {
                      Mat gb = grad_b(go, ae, be);
                      if (b_scalar && !same) gb = Mat::Constant(1, 1, gb.sum());
                      Graph<Scalar>::accumulate(grads, ib, gb);
                    }
                  });
}

// Elementwise unary op; `dfdx(x, y)` returns the local derivative given input and output.
template <typename Scalar, typename Fwd, typename Deriv>
Var<Scalar> unary(OpKind kind, const Var<Scalar>& x, Fwd fwd, Deriv dfdx) {
  using Mat = Matrix<Scalar>;
  auto& g = *x.graph();
  const Mat xv = x.value();
  Mat y = fwd(xv);
  const std::size_t ix = x.id();
  Mat yv = y;
  return g.record(kind, std::move(y), {x}, [=](const Mat& go, std::vector<Mat>& grads) {
    Graph<Scalar>::accumulate(grads, ix, go.cwiseProduct(dfdx(xv, yv)));
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  auto& g = detail::same_graph(a, b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.value()) +
                         " and " + shape_string(b.value()));
  const Mat av = a.value(), bv = b.value();
  Mat out = av * bv;
  const std::size_t ia = a.id(), ib = b.id();
  const bool ra = g.requires_grad(ia), rb = g.requires_grad(ib);
  return g.record(OpKind::MatMul, std::move(out), {a, b},
                  [=](const Mat& go, std::vector<Mat>& grads) {
                    if (ra) Graph<Scalar>::accumulate(grads, ia, go * bv.transpose());
                    if (rb) Graph<Scalar>::accumulate(grads, ib, av.transpose() * go);
                  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& x) {
  using Mat = Matrix<Scalar>;
  const std::size_t ix = x.id();
  return x.graph()->record(OpKind::Transpose, x.value().transpose(), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Graph<Scalar>::accumulate(grads, ix, go.transpose());
                           });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  return detail::binary(
      OpKind::Add, "add", a, b, [](const Mat& x, const Mat& y) -> Mat { return x + y; },
      [](const Mat& go, const Mat&, const Mat&) -> Mat { return go; },
      [](const Mat& go, const Mat&, const Mat&) -> Mat { return go; });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  return detail::binary(
      OpKind::Sub, "sub", a, b, [](const Mat& x, const Mat& y) -> Mat { return x - y; },
      [](const Mat& go, const Mat&, const Mat&) -> Mat { return go; },
      [](const Mat& go, const Mat&, const Mat&) -> Mat { return -go; });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  return detail::binary(
      OpKind::Mul, "mul", a, b,
      [](const Mat& x, const Mat& y) -> Mat { return x.cwiseProduct(y); },
      [](const Mat& go, const Mat&, const Mat& y) -> Mat { return go.cwiseProduct(y); },
      [](const Mat& go, const Mat& x, const Mat&) -> Mat { return go.cwiseProduct(x); });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }

/// Multiplication by a constant.
template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar c) {
  using Mat = Matrix<Scalar>;
  const std::size_t ix = x.id();
  return x.graph()->record(OpKind::Scale, x.value() * c, {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Graph<Scalar>::accumulate(grads, ix, go * c);
                           });
}

template <typename Scalar>
Var<Scalar> neg(const Var<Scalar>& x) {
  using Mat = Matrix<Scalar>;
  const std::size_t ix = x.id();
  return x.graph()->record(OpKind::Neg, -x.value(), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Graph<Scalar>::accumulate(grads, ix, -go);
                           });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  using Mat = Matrix<Scalar>;
  return detail::unary(
      OpKind::Tanh, x, [](const Mat& v) -> Mat { return v.array().tanh().matrix(); },
      [](const Mat&, const Mat& y) -> Mat { return (1 - y.array().square()).matrix(); });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  using Mat = Matrix<Scalar>;
  return detail::unary(
      OpKind::Relu, x, [](const Mat& v) -> Mat { return v.cwiseMax(Scalar(0)); },
      [](const Mat& v, const Mat&) -> Mat {
        return (v.array() > Scalar(0)).template cast<Scalar>().matrix();
      });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  using Mat = Matrix<Scalar>;
  return detail::unary(
      OpKind::Sigmoid, x,
      [](const Mat& v) -> Mat {
        // Split by sign so that exp never overflows.
        Mat y(v.rows(), v.cols());
        for (Eigen::Index i = 0; i < v.size(); ++i) {
          const Scalar t = v.data()[i];
          if (t >= 0) {
            y.data()[i] = 1 / (1 + std::exp(-t));
          } else {
            const Scalar e = std::exp(t);
            y.data()[i] = e / (1 + e);
          }
        }
        return y;
      },
      [](const Mat&, const Mat& y) -> Mat { return (y.array() * (1 - y.array())).matrix(); });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& x) {
  using Mat = Matrix<Scalar>;
  return detail::unary(
      OpKind::Exp, x, [](const Mat& v) -> Mat { return v.array().exp().matrix(); },
      [](const Mat&, const Mat& y) -> Mat { return y; });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& x) {
  using Mat = Matrix<Scalar>;
  if ((x.value().array() <= Scalar(0)).any())
    throw DomainError("log: argument has non-positive entries");
  return detail::unary(
      OpKind::Log, x, [](const Mat& v) -> Mat { return v.array().log().matrix(); },
      [](const Mat& v, const Mat&) -> Mat { return v.cwiseInverse(); });
}

// ---------------------------------------------------------------------------
// Normalizations and reductions. Axis 0 runs down each column, axis 1 along
// each row.

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, int axis) {
  using Mat = Matrix<Scalar>;
  detail::check_axis<Scalar>(axis, "softmax");
  const Mat& v = x.value();
  if ((axis == 0 ? v.rows() : v.cols()) == 0) throw DimensionError("softmax: empty axis");
  Mat y(v.rows(), v.cols());
  if (axis == 1) {
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      auto e = (v.row(r).array() - v.row(r).maxCoeff()).exp();
      y.row(r) = e / e.sum();
    }
  } else {
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      auto e = (v.col(c).array() - v.col(c).maxCoeff()).exp();
      y.col(c) = e / e.sum();
    }
  }
  const std::size_t ix = x.id();
  Mat yv = y;
  return x.graph()->record(OpKind::Softmax, std::move(y), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             // dx = y * (go - <go, y>) along the axis
                             Mat gx(yv.rows(), yv.cols());
                             if (axis == 1) {
                               for (Eigen::Index r = 0; r < yv.rows(); ++r) {
                                 const Scalar dot = go.row(r).dot(yv.row(r));
                                 gx.row(r) = yv.row(r).array() * (go.row(r).array() - dot);
                               }
                             } else {
                               for (Eigen::Index c = 0; c < yv.cols(); ++c) {
                                 const Scalar dot = go.col(c).dot(yv.col(c));
                                 gx.col(c) = yv.col(c).array() * (go.col(c).array() - dot);
                               }
                             }
                             Graph<Scalar>::accumulate(grads, ix, gx);
                           });
}

template <typename Scalar>
Var<Scalar> log_softmax(const Var<Scalar>& x, int axis) {
  using Mat = Matrix<Scalar>;
  detail::check_axis<Scalar>(axis, "log_softmax");
  const Mat& v = x.value();
  if ((axis == 0 ? v.rows() : v.cols()) == 0) throw DimensionError("log_softmax: empty axis");
  Mat y(v.rows(), v.cols());
  if (axis == 1) {
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      const Scalar m = v.row(r).maxCoeff();
      const Scalar lse = m + std::log((v.row(r).array() - m).exp().sum());
      y.row(r) = v.row(r).array() - lse;
    }
  } else {
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      const Scalar m = v.col(c).maxCoeff();
      const Scalar lse = m + std::log((v.col(c).array() - m).exp().sum());
      y.col(c) = v.col(c).array() - lse;
    }
  }
  const std::size_t ix = x.id();
  const Mat p = y.array().exp().matrix();
  return x.graph()->record(OpKind::LogSoftmax, std::move(y), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Mat gx(p.rows(), p.cols());
                             if (axis == 1) {
                               for (Eigen::Index r = 0; r < p.rows(); ++r)
                                 gx.row(r) = go.row(r) - p.row(r) * go.row(r).sum();
                             } else {
                               for (Eigen::Index c = 0; c < p.cols(); ++c)
                                 gx.col(c) = go.col(c) - p.col(c) * go.col(c).sum();
                             }
                             Graph<Scalar>::accumulate(grads, ix, gx);
                           });
}

/// Sum of all entries, as a 1x1.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  using Mat = Matrix<Scalar>;
  const Eigen::Index r = x.rows(), c = x.cols();
  const std::size_t ix = x.id();
  return x.graph()->record(OpKind::Sum, Mat::Constant(1, 1, x.value().sum()), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Graph<Scalar>::accumulate(grads, ix, Mat::Constant(r, c, go(0, 0)));
                           });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x, int axis) {
  using Mat = Matrix<Scalar>;
  detail::check_axis<Scalar>(axis, "sum");
  const Eigen::Index r = x.rows(), c = x.cols();
  Mat out = axis == 0 ? Mat(x.value().colwise().sum()) : Mat(x.value().rowwise().sum());
  const std::size_t ix = x.id();
  return x.graph()->record(OpKind::Sum, std::move(out), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Mat gx = axis == 0 ? Mat(go.replicate(r, 1)) : Mat(go.replicate(1, c));
                             Graph<Scalar>::accumulate(grads, ix, gx);
                           });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x, int axis) {
  detail::check_axis<Scalar>(axis, "mean");
  const Eigen::Index n = axis == 0 ? x.rows() : x.cols();
  if (n == 0) throw DimensionError("mean: empty axis");
  return scale(sum(x, axis), Scalar(1) / Scalar(n));
}

template <typename Scalar>
Var<Scalar> max(const Var<Scalar>& x, int axis) {
  using Mat = Matrix<Scalar>;
  detail::check_axis<Scalar>(axis, "max");
  const Mat& v = x.value();
  const Eigen::Index lanes = axis == 0 ? v.cols() : v.rows();
  if ((axis == 0 ? v.rows() : v.cols()) == 0) throw DimensionError("max: empty axis");
  Mat out = axis == 0 ? Mat(1, lanes) : Mat(lanes, 1);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(lanes));
  for (Eigen::Index l = 0; l < lanes; ++l) {
    Eigen::Index k;
    out(axis == 0 ? 0 : l, axis == 0 ? l : 0) =
        axis == 0 ? v.col(l).maxCoeff(&k) : v.row(l).maxCoeff(&k);
    arg[static_cast<std::size_t>(l)] = k;
  }
  const Eigen::Index r = v.rows(), c = v.cols();
  const std::size_t ix = x.id();
  return x.graph()->record(OpKind::Max, std::move(out), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Mat gx = Mat::Zero(r, c);
                             for (Eigen::Index l = 0; l < static_cast<Eigen::Index>(arg.size()); ++l) {
                               const Eigen::Index k = arg[static_cast<std::size_t>(l)];
                               if (axis == 0) gx(k, l) = go(0, l);
                               else gx(l, k) = go(l, 0);
                             }
                             Graph<Scalar>::accumulate(grads, ix, gx);
                           });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename Scalar>
Var<Scalar> hconcat(std::span<const Var<Scalar>> parts) {
  using Mat = Matrix<Scalar>;
  if (parts.empty()) throw DimensionError("hconcat: no operands");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    if (p.graph() != parts[0].graph()) throw ContractError("hconcat: mixed graphs");
    if (p.rows() != r)
      throw DimensionError("hconcat: row counts differ (" + shape_string(parts[0].value()) +
                           " vs " + shape_string(p.value()) + ")");
    c += p.cols();
  }
  Mat out(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> slots;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    slots.emplace_back(p.id(), p.cols());
    off += p.cols();
  }
  auto* g = parts[0].graph();
  std::vector<bool> rg;
  for (const auto& p : parts) rg.push_back(g->requires_grad(p.id()));
  return g->record(OpKind::HConcat, std::move(out), parts,
                   [=](const Mat& go, std::vector<Mat>& grads) {
                     Eigen::Index o = 0;
                     for (std::size_t i = 0; i < slots.size(); ++i) {
                       if (rg[i]) Graph<Scalar>::accumulate(grads, slots[i].first,
                                                            go.middleCols(o, slots[i].second));
                       o += slots[i].second;
                     }
                   });
}

template <typename Scalar>
Var<Scalar> vconcat(std::span<const Var<Scalar>> parts) {
  using Mat = Matrix<Scalar>;
  if (parts.empty()) throw DimensionError("vconcat: no operands");
  const Eigen::Index c = parts[0].cols();
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.graph() != parts[0].graph()) throw ContractError("vconcat: mixed graphs");
    if (p.cols() != c)
      throw DimensionError("vconcat: column counts differ (" + shape_string(parts[0].value()) +
                           " vs " + shape_string(p.value()) + ")");
    r += p.rows();
  }
  Mat out(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> slots;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    slots.emplace_back(p.id(), p.rows());
    off += p.rows();
  }
  auto* g = parts[0].graph();
  std::vector<bool> rg;
  for (const auto& p : parts) rg.push_back(g->requires_grad(p.id()));
  return g->record(OpKind::VConcat, std::move(out), parts,
                   [=](const Mat& go, std::vector<Mat>& grads) {
                     Eigen::Index o = 0;
                     for (std::size_t i = 0; i < slots.size(); ++i) {
                       if (rg[i]) Graph<Scalar>::accumulate(grads, slots[i].first,
                                                            go.middleRows(o, slots[i].second));
                       o += slots[i].second;
                     }
                   });
}

template <typename Scalar>
Var<Scalar> hconcat(std::initializer_list<Var<Scalar>> parts) {
  return hconcat(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}
template <typename Scalar>
Var<Scalar> vconcat(std::initializer_list<Var<Scalar>> parts) {
  return vconcat(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}

/// Rows of `x` at `rows`, in the given order. Repeats are allowed.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, std::vector<Eigen::Index> rows) {
  using Mat = Matrix<Scalar>;
  const Mat& v = x.value();
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  Mat out(static_cast<Eigen::Index>(rows.size()), v.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v.rows())
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_string(v));
    out.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
  }
  const Eigen::Index r = v.rows(), c = v.cols();
  const std::size_t ix = x.id();
  return x.graph()->record(OpKind::GatherRows, std::move(out), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Mat gx = Mat::Zero(r, c);
                             for (std::size_t i = 0; i < rows.size(); ++i)
                               gx.row(rows[i]) += go.row(static_cast<Eigen::Index>(i));
                             Graph<Scalar>::accumulate(grads, ix, gx);
                           });
}

/// Column `j` of `x` as an (rows x 1) matrix.
template <typename Scalar>
Var<Scalar> column(const Var<Scalar>& x, Eigen::Index j) {
  using Mat = Matrix<Scalar>;
  const Mat& v = x.value();
  if (j < 0 || j >= v.cols())
    throw DimensionError("column: index " + std::to_string(j) + " out of range for " +
                         shape_string(v));
  const Eigen::Index r = v.rows(), c = v.cols();
  const std::size_t ix = x.id();
  return x.graph()->record(OpKind::Column, Mat(v.col(j)), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Mat gx = Mat::Zero(r, c);
                             gx.col(j) = go.col(0);
                             Graph<Scalar>::accumulate(grads, ix, gx);
                           });
}

/// Entry (r, c) of `x` as a 1x1.
template <typename Scalar>
Var<Scalar> element(const Var<Scalar>& x, Eigen::Index r, Eigen::Index c) {
  using Mat = Matrix<Scalar>;
  const Mat& v = x.value();
  if (r < 0 || r >= v.rows() || c < 0 || c >= v.cols())
    throw DimensionError("element: (" + std::to_string(r) + "," + std::to_string(c) +
                         ") out of range for " + shape_string(v));
  const Eigen::Index rows = v.rows(), cols = v.cols();
  const std::size_t ix = x.id();
  return x.graph()->record(OpKind::Element, Mat::Constant(1, 1, v(r, c)), {x},
                           [=](const Mat& go, std::vector<Mat>& grads) {
                             Mat gx = Mat::Zero(rows, cols);
                             gx(r, c) = go(0, 0);
                             Graph<Scalar>::accumulate(grads, ix, gx);
                           });
}

}  // namespace csmil::ad
