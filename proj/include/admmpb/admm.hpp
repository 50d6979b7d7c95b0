#ifndef ADMMPB_ADMM_HPP
#define ADMMPB_ADMM_HPP

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "admmpb/constraints.hpp"
#include "admmpb/losses.hpp"
#include "admmpb/plant.hpp"
#include "admmpb/stable_op.hpp"

namespace admmpb {

struct AdmmConfig {
  double eps_abs = 1e-4;
  double eps_rel = 1e-4;
  double tau_inc = 2.0;
  double tau_dec = 0.5;
  double mu = 10.0;
  double rho0 = 0.5;
  double eta0 = 1e-3;
  double gamma = 0.5;        // learning-rate decay factor
  int decay_interval = 50;   // iterations per decay step
  double eta_floor = 1e-6;
  int epochs_per_step = 6;   // full-batch optimizer steps per outer iteration
  int max_iters = 2000;
  bool reset_moments_each_iter = false;
  int warmstart_epochs = 0;  // unconstrained pre-training before the loop
  int threads = 1;
};

/** Adaptive-moment optimizer state; moments persist across outer iterations. */
struct AdamState {
  Eigen::VectorXd m, v;
  long steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  void reset(Eigen::Index n) {
    m = Eigen::VectorXd::Zero(n);
    v = Eigen::VectorXd::Zero(n);
    steps = 0;
  }
};

/** One bias-corrected update of theta in place. */
void adam_step(AdamState& st, Eigen::VectorXd& theta,
               const Eigen::VectorXd& grad, double lr);

/** Step size for outer iteration j: floor-clamped geometric decay. */
double update_learning_rate(int j, const AdmmConfig& cfg);

struct AdmmProblem {
  const PlantModel* plant = nullptr;
  OperatorConfig op;
  BoostLossConfig loss;
  TrajectoryConstraint constraint;
  std::vector<Eigen::MatrixXd> bank;  // training noise realizations
};

struct AdmmState {
  ThetaVector theta;
  std::vector<Eigen::MatrixXd> x_copies, u_copies;
  MultiplierSet lam;
  double rho = 0.5;
  double eta = 1e-3;
  AdamState opt;
};

struct Residuals {
  Eigen::VectorXd r;      // trajectory minus copies, x block then u block
  Eigen::VectorXd delta;  // -rho * (copies change), same stacking
  double norm_r = 0.0;
  double norm_delta = 0.0;
  double eps_r = 0.0;
  double eps_delta = 0.0;
};

Residuals compute_residuals(const std::vector<Rollout>& rollouts,
                            const std::vector<Eigen::MatrixXd>& x_copies,
                            const std::vector<Eigen::MatrixXd>& u_copies,
                            const std::vector<Eigen::MatrixXd>& x_copies_prev,
                            const std::vector<Eigen::MatrixXd>& u_copies_prev,
                            const MultiplierSet& lam, double rho,
                            const AdmmConfig& cfg, int theta_dim);

/**
 * Joint penalty and multiplier rescaling. When the penalty is multiplied by
 * tau the multipliers are divided by tau, so the unscaled dual rho*lambda is
 * preserved (exactly, for power-of-two factors).
 */
void update_penalty(AdmmState& st, const Residuals& res, const AdmmConfig& cfg);

/** Scenario-averaged objective value, boosting-loss part, and gradient. */
struct GradEval {
  double objective = 0.0;
  double base_loss = 0.0;
  Eigen::VectorXd grad;
};

/**
 * Full-batch objective and gradient via one reverse-mode tape per scenario,
 * combined in scenario order (bit-reproducible for any thread count).
 * Admm mode reads copies, multipliers and rho from `state`; baseline mode
 * reads `cbf`; boost-only ignores both.
 */
enum class ObjectiveKind { kBoostOnly, kAdmm, kCbfBaseline };

GradEval eval_objective(const AdmmProblem& prob, const ThetaVector& theta,
                        ObjectiveKind kind, const AdmmState* state,
                        const CbfConfig* cbf, int threads);

/**
 * The theta subproblem: epochs_per_step optimizer steps on the augmented
 * objective at fixed copies and multipliers. Appends the boosting-loss value
 * seen at each epoch to `trace`; returns the last one.
 */
double inner_gd_step(AdmmState& st, const AdmmProblem& prob,
                     const AdmmConfig& cfg, std::vector<double>* trace);

struct IterRecord {
  int j = 0;
  double norm_r = 0.0;
  double norm_delta = 0.0;
  double eps_r = 0.0;
  double eps_delta = 0.0;
  double rho = 0.0;
  double eta = 0.0;
  double train_loss = 0.0;
};

struct AdmmResult {
  ThetaVector theta;
  std::vector<IterRecord> iterates;
  std::vector<double> epoch_trace;  // boosting loss per epoch, all iterations
  bool terminated = false;          // stopped by the residual test
};

/**
 * The full training loop: theta subproblem, trajectory projection, multiplier
 * update, residual test, penalty adaptation, decayed step size. Copies start
 * at the projection of the initial rollouts, multipliers at zero.
 * `on_iteration`, when set, runs after each iteration's residual computation
 * and before the penalty adaptation (checkpointing / inspection hook).
 */
using IterationHook =
    std::function<void(const AdmmState&, const Residuals&, int)>;

AdmmResult run_admm_pb(const AdmmProblem& prob, const AdmmConfig& cfg,
                       const ThetaVector& theta0,
                       const IterationHook& on_iteration = nullptr);

}  // namespace admmpb

#endif
