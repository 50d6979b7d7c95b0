#ifndef ADMMPB_PLANT_HPP
#define ADMMPB_PLANT_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "admmpb/stable_op.hpp"
#include "admmpb/tape.hpp"

namespace admmpb {

/**
 * Time-invariant Markovian transition x_{t+1} = f(x_t, u_t) (noise added by
 * the caller). Implementations provide both a plain and a tape evaluation.
 */
class PlantModel {
 public:
  virtual ~PlantModel() = default;
  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;
  virtual Eigen::VectorXd next(const Eigen::VectorXd& x,
                               const Eigen::VectorXd& u) const = 0;
  virtual ad::Var next_t(ad::Tape& tape, ad::Var x, ad::Var u) const = 0;
};

/**
 * Planar point mass with velocity-dependent friction terms and a proportional
 * position loop folded into the applied force:
 *   state x = [pos(2); vel(2)]
 *   pos'   = pos + ts * vel
 *   vel'   = vel + ts/mass * (beta1*vel + beta2*tanh(vel) + (target - pos) + u)
 */
struct PointMassParams {
  double mass = 1.0;
  double beta1 = 1.0;
  double beta2 = 0.1;
  double ts = 0.05;
  Eigen::Vector2d target = Eigen::Vector2d::Zero();
  // Multiplies the velocity-dependent terms beta1*vel + beta2*tanh(vel).
  // +1 keeps them as printed above (anti-damping: the proportional pull to
  // the target alone does not stabilize, trajectories spiral outward).
  // -1 treats beta1/beta2 as physical friction coefficients, which yields the
  // damped, genuinely pre-stabilized regime the benchmark runs in.
  double friction_sign = 1.0;
};

class PointMassPlant final : public PlantModel {
 public:
  explicit PointMassPlant(const PointMassParams& p) : p_(p) {}
  int state_dim() const override { return 4; }
  int input_dim() const override { return 2; }
  Eigen::VectorXd next(const Eigen::VectorXd& x,
                       const Eigen::VectorXd& u) const override;
  ad::Var next_t(ad::Tape& tape, ad::Var x, ad::Var u) const override;
  const PointMassParams& params() const { return p_; }

 private:
  PointMassParams p_;
};

/** One transition including additive noise. */
Eigen::VectorXd pointmass_step(const PointMassParams& p,
                               const Eigen::VectorXd& x,
                               const Eigen::VectorXd& u,
                               const Eigen::VectorXd& w);

/**
 * Scenario noise model: w_0 is the initial state draw, w_t for t >= 1 is
 * process noise. Column t of a realization is w_t; horizon T gives T+1 cols.
 */
struct NoiseModel {
  Eigen::VectorXd x0_mean = (Eigen::VectorXd(4) << 2, 2, 0, 0).finished();
  Eigen::VectorXd x0_std = (Eigen::VectorXd(4) << 0.2, 0.2, 0, 0).finished();
  double process_std = 0.005;
};

Eigen::MatrixXd sample_noise(const NoiseModel& nm, int state_dim, int horizon,
                             std::uint64_t seed);

/** S independent realizations; scenario s is seeded by mix_seed(seed, s). */
std::vector<Eigen::MatrixXd> make_noise_bank(const NoiseModel& nm,
                                             int state_dim, int horizon,
                                             int scenarios, std::uint64_t seed);

/** Closed-loop trajectory: states x_0..x_T and inputs u_0..u_T as columns. */
struct Rollout {
  Eigen::MatrixXd x;  // n x (T+1)
  Eigen::MatrixXd u;  // m x (T+1)
};

/**
 * Simulates the boosted loop: the operator is fed the disturbance
 * reconstructed through the internal model, w_t = x_t - f(x_{t-1}, u_{t-1})
 * (w_0 = x_0), which matches the injected noise when the model is exact.
 * Throws on non-finite states, reporting the failing step.
 */
Rollout rollout_closed_loop(const PlantModel& plant, const OperatorMatrices& op,
                            const Eigen::MatrixXd& w);

std::vector<Rollout> rollout_bank(const PlantModel& plant,
                                  const OperatorConfig& cfg,
                                  const ThetaVector& theta,
                                  const std::vector<Eigen::MatrixXd>& bank);

/** Tape counterpart used for training; x and u hold T+1 column nodes each. */
struct TapeRollout {
  std::vector<ad::Var> x;
  std::vector<ad::Var> u;
};

TapeRollout rollout_closed_loop_t(ad::Tape& tape, const PlantModel& plant,
                                  const TapeOperator& op,
                                  const Eigen::MatrixXd& w);

/** Columns: t, s, x1..xn, u1..um, w1..wn. One row per (scenario, step). */
void write_trajectories_csv(const std::string& path,
                            const std::vector<Rollout>& rollouts,
                            const std::vector<Eigen::MatrixXd>& bank);

}  // namespace admmpb

#endif
