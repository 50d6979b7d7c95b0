#ifndef ADMMPB_TAPE_HPP
#define ADMMPB_TAPE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace admmpb::ad {

class Tape;

/** Handle to a node on a Tape. Cheap to copy; valid only for the owning tape. */
struct Var {
  int idx = -1;
  const Tape* owner = nullptr;
  bool valid() const { return idx >= 0 && owner != nullptr; }
};

enum class OpKind : std::uint8_t {
  Const,
  Param,
  Add,
  Sub,
  Mul,      // elementwise product
  Scale,    // constant scalar times tensor
  ScaleBy,  // scalar node times tensor node
  MatVec,   // A * x
  MatVecT,  // A^T * x
  Tanh,
  Square,
  Max0,     // max(entry, 0), subgradient 0 at 0
  Sum,      // reduce to 1x1
  NormSq,   // squared Euclidean norm, 1x1
  Dot,      // inner product, 1x1
  Sqrt,     // scalar only
  Recip,    // scalar only
  Slice,    // rows [p0, p0+p1) of a column vector
  Concat,   // vertical stack of two column vectors
};

/**
 * Record-and-replay reverse-mode differentiation over small dense
 * vectors/matrices. Forward values are computed eagerly at node construction
 * and checked for NaN/Inf. backward() fills a separate gradient buffer and
 * leaves the tape unchanged, so it can be called repeatedly.
 *
 * Single-threaded by design; build one tape per worker when parallelizing.
 */
class Tape {
 public:
  explicit Tape(std::size_t reserve_hint = 0);

  // Leaves. Both hold constants; Param marks intended differentiation roots.
  Var constant(const Eigen::MatrixXd& value);
  Var constant(double value);
  Var param(const Eigen::MatrixXd& value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var scale_by(Var scalar, Var a);
  Var matvec(Var a, Var x);
  Var matvec_t(Var a, Var x);
  Var tanh(Var a);
  Var square(Var a);
  Var max0(Var a);
  Var sum(Var a);
  Var norm_sq(Var a);
  Var dot(Var a, Var b);
  Var sqrt(Var a);
  Var recip(Var a);
  Var slice(Var a, int row0, int nrows);
  Var concat(Var a, Var b);

  const Eigen::MatrixXd& value(Var v) const;
  /** Scalar value of a 1x1 node. */
  double forward(Var v) const;

  /** Reverse sweep seeding d(loss)/d(loss) = 1. Requires a scalar node. */
  void backward(Var loss);

  /** Gradient of the last backward() target w.r.t. one node, same shape. */
  const Eigen::MatrixXd& grad(Var v) const;

  /** Gradients flattened column-major and concatenated in argument order. */
  Eigen::VectorXd gradient(const std::vector<Var>& params) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    int a = -1;
    int b = -1;
    double c = 0.0;  // Scale factor
    int p0 = 0;      // Slice offset
    int p1 = 0;      // Slice length
    Eigen::MatrixXd value;
  };

  Var push(Node node);
  const Node& node_of(Var v) const;
  void check_owned(Var v, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<Eigen::MatrixXd> grads_;
  bool grads_ready_ = false;
};

}  // namespace admmpb::ad

#endif
