#ifndef ADMMPB_STABLE_OP_HPP
#define ADMMPB_STABLE_OP_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "admmpb/tape.hpp"

namespace admmpb {

struct OperatorDims {
  int n_in = 4;
  int n_state = 4;
  int n_out = 2;
};

/** Flat parameter count: A_bar, B, C, D blocks plus the input gate b. */
int theta_count(const OperatorDims& d);

/**
 * Trainable parameters of the boosting operator, stored flat (column-major
 * blocks in the order A_bar, B, C, D, b). The flat view is what the optimizer
 * and checkpoints use; the block views are what the dynamics use.
 */
struct ThetaVector {
  OperatorDims dims;
  Eigen::VectorXd data;

  ThetaVector() = default;
  explicit ThetaVector(const OperatorDims& d)
      : dims(d), data(Eigen::VectorXd::Zero(theta_count(d))) {}

  Eigen::Map<const Eigen::MatrixXd> a_bar() const;
  Eigen::Map<const Eigen::MatrixXd> b_in() const;
  Eigen::Map<const Eigen::MatrixXd> c_out() const;
  Eigen::Map<const Eigen::MatrixXd> d_thru() const;
  Eigen::Map<const Eigen::VectorXd> gate() const;

  Eigen::Map<Eigen::MatrixXd> a_bar();
  Eigen::Map<Eigen::MatrixXd> b_in();
  Eigen::Map<Eigen::MatrixXd> c_out();
  Eigen::Map<Eigen::MatrixXd> d_thru();
  Eigen::Map<Eigen::VectorXd> gate();
};

struct OperatorConfig {
  OperatorDims dims;
  double kappa = 0.95;    // contraction margin, in (0, 1)
  double prescale = 1.0;  // input prescale, applied to the B and D paths
};

/** Fresh parameters with i.i.d. N(0, std^2) entries; seeded, reproducible. */
ThetaVector init_params(const OperatorDims& dims, double stddev,
                        std::uint64_t seed);

/**
 * Deterministic largest-singular-value estimate: power iteration on A^T A
 * from a fixed start vector, fixed iteration count. Returns the raw estimate
 * (no safety factor). Scale-equivariant: estimate(c*A) = c*estimate(A).
 */
double spectral_norm_estimate(const Eigen::MatrixXd& a);

/** Safety-factored bound used to normalize the state matrix. */
double sigma_hat(const Eigen::MatrixXd& a);

/**
 * Effective (post-normalization) operator matrices. The state matrix is
 * A = kappa * A_bar / max(1, sigma_hat(A_bar)), so its norm estimate never
 * exceeds kappa regardless of theta.
 */
struct OperatorMatrices {
  Eigen::MatrixXd a, b, c, d;
  Eigen::VectorXd gate;
};

OperatorMatrices materialize(const OperatorConfig& cfg, const ThetaVector& th);

/**
 * One step of the boosting operator:
 *   next_state = A state + tanh(B w + gate .* (B w))
 *   u          = C state + D w
 * Zero input from zero state yields zero output by construction.
 */
std::pair<Eigen::VectorXd, Eigen::VectorXd> op_step(const OperatorMatrices& m,
                                                    const Eigen::VectorXd& state,
                                                    const Eigen::VectorXd& w);

/**
 * Worst-case ell2 gain of the operator over finite-energy inputs, from exact
 * spectral norms of the effective matrices:
 *   gain = |D| + |C| * |B| * (1 + |gate|_inf) / (1 - kappa).
 */
double gain_bound(const OperatorConfig& cfg, const ThetaVector& th);

/** Theta registered on a tape as five differentiable leaves. */
struct ThetaLeaves {
  std::array<ad::Var, 5> vars;  // A_bar, B, C, D, gate
  std::vector<ad::Var> as_params() const {
    return {vars[0], vars[1], vars[2], vars[3], vars[4]};
  }
};

ThetaLeaves register_theta(ad::Tape& tape, const ThetaVector& th);

/** Effective operator matrices on a tape, gradients flowing back to theta. */
struct TapeOperator {
  ad::Var a, b, c, d, gate;
  int n_state = 0;
};

TapeOperator make_tape_operator(ad::Tape& tape, const OperatorConfig& cfg,
                                const ThetaLeaves& th);

std::pair<ad::Var, ad::Var> op_step_t(ad::Tape& tape, const TapeOperator& op,
                                      ad::Var state, ad::Var w);

/**
 * Checkpoint I/O: a one-line JSON header (layout version, dims, kappa,
 * prescale, seed, count) followed by the flat parameters as little-endian
 * float64. Loading validates the header against the expected layout.
 */
struct Checkpoint {
  OperatorConfig cfg;
  ThetaVector theta;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace admmpb

#endif
