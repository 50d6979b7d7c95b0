#include "admmpb/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace admmpb::ad {

namespace {

std::string shape_str(const Eigen::MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_finite(const Eigen::MatrixXd& m, const char* op) {
  if (!m.allFinite()) {
    throw std::runtime_error(std::string("tape: non-finite value produced by '") +
                             op + "'");
  }
}

}  // namespace

Tape::Tape(std::size_t reserve_hint) {
  if (reserve_hint > 0) nodes_.reserve(reserve_hint);
}

void Tape::check_owned(Var v, const char* op) const {
  if (!v.valid() || v.owner != this ||
      v.idx >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument(std::string("tape: operand of '") + op +
                                "' is not a node of this tape");
  }
}

const Tape::Node& Tape::node_of(Var v) const { return nodes_[v.idx]; }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  grads_ready_ = false;
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Var Tape::constant(const Eigen::MatrixXd& value) {
  check_finite(value, "constant");
  return push(Node{OpKind::Const, -1, -1, 0.0, 0, 0, value});
}

Var Tape::constant(double value) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = value;
  return constant(m);
}

Var Tape::param(const Eigen::MatrixXd& value) {
  check_finite(value, "param");
  return push(Node{OpKind::Param, -1, -1, 0.0, 0, 0, value});
}

Var Tape::add(Var a, Var b) {
  check_owned(a, "add");
  check_owned(b, "add");
  const auto& va = node_of(a).value;
  const auto& vb = node_of(b).value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    throw std::invalid_argument("tape: add shape mismatch " + shape_str(va) +
                                " vs " + shape_str(vb));
  }
  Eigen::MatrixXd v = va + vb;
  check_finite(v, "add");
  return push(Node{OpKind::Add, a.idx, b.idx, 0.0, 0, 0, std::move(v)});
}

Var Tape::sub(Var a, Var b) {
  check_owned(a, "sub");
  check_owned(b, "sub");
  const auto& va = node_of(a).value;
  const auto& vb = node_of(b).value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    throw std::invalid_argument("tape: sub shape mismatch " + shape_str(va) +
                                " vs " + shape_str(vb));
  }
  Eigen::MatrixXd v = va - vb;
  check_finite(v, "sub");
  return push(Node{OpKind::Sub, a.idx, b.idx, 0.0, 0, 0, std::move(v)});
}

Var Tape::mul(Var a, Var b) {
  check_owned(a, "mul");
  check_owned(b, "mul");
  const auto& va = node_of(a).value;
  const auto& vb = node_of(b).value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    throw std::invalid_argument("tape: mul shape mismatch " + shape_str(va) +
                                " vs " + shape_str(vb));
  }
  Eigen::MatrixXd v = va.cwiseProduct(vb);
  check_finite(v, "mul");
  return push(Node{OpKind::Mul, a.idx, b.idx, 0.0, 0, 0, std::move(v)});
}

Var Tape::scale(Var a, double c) {
  check_owned(a, "scale");
  Eigen::MatrixXd v = c * node_of(a).value;
  check_finite(v, "scale");
  return push(Node{OpKind::Scale, a.idx, -1, c, 0, 0, std::move(v)});
}

Var Tape::scale_by(Var scalar, Var a) {
  check_owned(scalar, "scale_by");
  check_owned(a, "scale_by");
  const auto& vs = node_of(scalar).value;
  if (vs.size() != 1) {
    throw std::invalid_argument("tape: scale_by scalar operand must be 1x1");
  }
  Eigen::MatrixXd v = vs(0, 0) * node_of(a).value;
  check_finite(v, "scale_by");
  return push(Node{OpKind::ScaleBy, scalar.idx, a.idx, 0.0, 0, 0, std::move(v)});
}

Var Tape::matvec(Var a, Var x) {
  check_owned(a, "matvec");
  check_owned(x, "matvec");
  const auto& va = node_of(a).value;
  const auto& vx = node_of(x).value;
  if (vx.cols() != 1 || va.cols() != vx.rows()) {
    throw std::invalid_argument("tape: matvec shape mismatch " + shape_str(va) +
                                " * " + shape_str(vx));
  }
  Eigen::MatrixXd v = va * vx;
  check_finite(v, "matvec");
  return push(Node{OpKind::MatVec, a.idx, x.idx, 0.0, 0, 0, std::move(v)});
}

Var Tape::matvec_t(Var a, Var x) {
  check_owned(a, "matvec_t");
  check_owned(x, "matvec_t");
  const auto& va = node_of(a).value;
  const auto& vx = node_of(x).value;
  if (vx.cols() != 1 || va.rows() != vx.rows()) {
    throw std::invalid_argument("tape: matvec_t shape mismatch " +
                                shape_str(va) + "^T * " + shape_str(vx));
  }
  Eigen::MatrixXd v = va.transpose() * vx;
  check_finite(v, "matvec_t");
  return push(Node{OpKind::MatVecT, a.idx, x.idx, 0.0, 0, 0, std::move(v)});
}

Var Tape::tanh(Var a) {
  check_owned(a, "tanh");
  Eigen::MatrixXd v =
      node_of(a).value.unaryExpr([](double x) { return std::tanh(x); });
  check_finite(v, "tanh");
  return push(Node{OpKind::Tanh, a.idx, -1, 0.0, 0, 0, std::move(v)});
}

Var Tape::square(Var a) {
  check_owned(a, "square");
  Eigen::MatrixXd v = node_of(a).value.cwiseProduct(node_of(a).value);
  check_finite(v, "square");
  return push(Node{OpKind::Square, a.idx, -1, 0.0, 0, 0, std::move(v)});
}

Var Tape::max0(Var a) {
  check_owned(a, "max0");
  Eigen::MatrixXd v = node_of(a).value.cwiseMax(0.0);
  check_finite(v, "max0");
  return push(Node{OpKind::Max0, a.idx, -1, 0.0, 0, 0, std::move(v)});
}

Var Tape::sum(Var a) {
  check_owned(a, "sum");
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = node_of(a).value.sum();
  check_finite(v, "sum");
  return push(Node{OpKind::Sum, a.idx, -1, 0.0, 0, 0, std::move(v)});
}

Var Tape::norm_sq(Var a) {
  check_owned(a, "norm_sq");
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = node_of(a).value.squaredNorm();
  check_finite(v, "norm_sq");
  return push(Node{OpKind::NormSq, a.idx, -1, 0.0, 0, 0, std::move(v)});
}

Var Tape::dot(Var a, Var b) {
  check_owned(a, "dot");
  check_owned(b, "dot");
  const auto& va = node_of(a).value;
  const auto& vb = node_of(b).value;
  if (va.cols() != 1 || vb.cols() != 1 || va.rows() != vb.rows()) {
    throw std::invalid_argument("tape: dot shape mismatch " + shape_str(va) +
                                " vs " + shape_str(vb));
  }
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = va.col(0).dot(vb.col(0));
  check_finite(v, "dot");
  return push(Node{OpKind::Dot, a.idx, b.idx, 0.0, 0, 0, std::move(v)});
}

Var Tape::sqrt(Var a) {
  check_owned(a, "sqrt");
  const auto& va = node_of(a).value;
  if (va.size() != 1) {
    throw std::invalid_argument("tape: sqrt expects a 1x1 node");
  }
  if (va(0, 0) <= 0.0) {
    throw std::runtime_error("tape: sqrt of non-positive value");
  }
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = std::sqrt(va(0, 0));
  check_finite(v, "sqrt");
  return push(Node{OpKind::Sqrt, a.idx, -1, 0.0, 0, 0, std::move(v)});
}

Var Tape::recip(Var a) {
  check_owned(a, "recip");
  const auto& va = node_of(a).value;
  if (va.size() != 1) {
    throw std::invalid_argument("tape: recip expects a 1x1 node");
  }
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = 1.0 / va(0, 0);
  check_finite(v, "recip");
  return push(Node{OpKind::Recip, a.idx, -1, 0.0, 0, 0, std::move(v)});
}

Var Tape::slice(Var a, int row0, int nrows) {
  check_owned(a, "slice");
  const auto& va = node_of(a).value;
  if (va.cols() != 1 || row0 < 0 || nrows < 1 || row0 + nrows > va.rows()) {
    throw std::invalid_argument("tape: slice out of range for " +
                                shape_str(va));
  }
  Eigen::MatrixXd v = va.block(row0, 0, nrows, 1);
  return push(Node{OpKind::Slice, a.idx, -1, 0.0, row0, nrows, std::move(v)});
}

Var Tape::concat(Var a, Var b) {
  check_owned(a, "concat");
  check_owned(b, "concat");
  const auto& va = node_of(a).value;
  const auto& vb = node_of(b).value;
  if (va.cols() != 1 || vb.cols() != 1) {
    throw std::invalid_argument("tape: concat expects column vectors");
  }
  Eigen::MatrixXd v(va.rows() + vb.rows(), 1);
  v.topRows(va.rows()) = va;
  v.bottomRows(vb.rows()) = vb;
  return push(Node{OpKind::Concat, a.idx, b.idx, 0.0, (int)va.rows(), 0,
                   std::move(v)});
}

const Eigen::MatrixXd& Tape::value(Var v) const {
  check_owned(v, "value");
  return node_of(v).value;
}

double Tape::forward(Var v) const {
  check_owned(v, "forward");
  const auto& m = node_of(v).value;
  if (m.size() != 1) {
    throw std::invalid_argument("tape: forward expects a scalar node, got " +
                                shape_str(m));
  }
  return m(0, 0);
}

void Tape::backward(Var loss) {
  check_owned(loss, "backward");
  if (node_of(loss).value.size() != 1) {
    throw std::invalid_argument("tape: backward target must be scalar");
  }
  grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    grads_[i].setZero(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  grads_[loss.idx](0, 0) = 1.0;

  for (int i = loss.idx; i >= 0; --i) {
    const Node& n = nodes_[i];
    const Eigen::MatrixXd& g = grads_[i];
    switch (n.kind) {
      case OpKind::Const:
      case OpKind::Param:
        break;
      case OpKind::Add:
        grads_[n.a] += g;
        grads_[n.b] += g;
        break;
      case OpKind::Sub:
        grads_[n.a] += g;
        grads_[n.b] -= g;
        break;
      case OpKind::Mul:
        grads_[n.a] += g.cwiseProduct(nodes_[n.b].value);
        grads_[n.b] += g.cwiseProduct(nodes_[n.a].value);
        break;
      case OpKind::Scale:
        grads_[n.a] += n.c * g;
        break;
      case OpKind::ScaleBy:
        grads_[n.a](0, 0) += g.cwiseProduct(nodes_[n.b].value).sum();
        grads_[n.b] += nodes_[n.a].value(0, 0) * g;
        break;
      case OpKind::MatVec:
        grads_[n.a] += g * nodes_[n.b].value.transpose();
        grads_[n.b] += nodes_[n.a].value.transpose() * g;
        break;
      case OpKind::MatVecT:
        grads_[n.a] += nodes_[n.b].value * g.transpose();
        grads_[n.b] += nodes_[n.a].value * g;
        break;
      case OpKind::Tanh:
        grads_[n.a] +=
            g.cwiseProduct((1.0 - n.value.array().square()).matrix());
        break;
      case OpKind::Square:
        grads_[n.a] += 2.0 * g.cwiseProduct(nodes_[n.a].value);
        break;
      case OpKind::Max0:
        grads_[n.a] += g.cwiseProduct(
            (nodes_[n.a].value.array() > 0.0).cast<double>().matrix());
        break;
      case OpKind::Sum:
        grads_[n.a].array() += g(0, 0);
        break;
      case OpKind::NormSq:
        grads_[n.a] += 2.0 * g(0, 0) * nodes_[n.a].value;
        break;
      case OpKind::Dot:
        grads_[n.a] += g(0, 0) * nodes_[n.b].value;
        grads_[n.b] += g(0, 0) * nodes_[n.a].value;
        break;
      case OpKind::Sqrt:
        grads_[n.a](0, 0) += g(0, 0) / (2.0 * n.value(0, 0));
        break;
      case OpKind::Recip:
        grads_[n.a](0, 0) += -g(0, 0) * n.value(0, 0) * n.value(0, 0);
        break;
      case OpKind::Slice:
        grads_[n.a].block(n.p0, 0, n.p1, 1) += g;
        break;
      case OpKind::Concat:
        grads_[n.a] += g.topRows(n.p0);
        grads_[n.b] += g.bottomRows(g.rows() - n.p0);
        break;
    }
  }
  grads_ready_ = true;
}

const Eigen::MatrixXd& Tape::grad(Var v) const {
  check_owned(v, "grad");
  if (!grads_ready_) {
    throw std::runtime_error("tape: grad requested before backward()");
  }
  return grads_[v.idx];
}

Eigen::VectorXd Tape::gradient(const std::vector<Var>& params) const {
  if (!grads_ready_) {
    throw std::runtime_error("tape: gradient requested before backward()");
  }
  Eigen::Index total = 0;
  for (Var p : params) {
    check_owned(p, "gradient");
    total += grads_[p.idx].size();
  }
  Eigen::VectorXd out(total);
  Eigen::Index at = 0;
  for (Var p : params) {
    const auto& g = grads_[p.idx];
    out.segment(at, g.size()) =
        Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    at += g.size();
  }
  return out;
}

}  // namespace admmpb::ad
