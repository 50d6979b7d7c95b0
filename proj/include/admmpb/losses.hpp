#ifndef ADMMPB_LOSSES_HPP
#define ADMMPB_LOSSES_HPP

#include <Eigen/Dense>
#include <vector>

#include "admmpb/plant.hpp"
#include "admmpb/tape.hpp"

namespace admmpb {

/**
 * Boosting performance loss. State layout of the benchmark: [pos(2); vel(2)].
 * The collision term is active when the squared distance to the obstacle is
 * at most margin*radius (compared as printed, squared vs linear).
 */
struct BoostLossConfig {
  Eigen::MatrixXd q_weight;  // n x n, symmetric PSD
  Eigen::MatrixXd r_weight;  // m x m, symmetric PSD
  double alpha = 10.0;       // collision weight in the total loss
  Eigen::Vector2d obstacle = Eigen::Vector2d(1.0, 0.5);
  double radius = 0.75;      // combined collision radius
  double nu = 0.001;         // constant added per active collision step
  double margin = 1.1;       // activation margin factor
};

BoostLossConfig default_boost_loss(int n, int m);

/** Sum_t x'Qx + Sum_t u'Ru over all T+1 steps. */
double lq_loss(const BoostLossConfig& cfg, const Rollout& r);

/** Sum over steps near the obstacle of (squared distance + nu). Unweighted. */
double collision_loss(const BoostLossConfig& cfg, const Rollout& r);

/** lq + alpha * collision, for one scenario. */
double boost_loss(const BoostLossConfig& cfg, const Rollout& r);

/** Per-scenario multipliers, same shapes as the trajectories. */
struct MultiplierSet {
  std::vector<Eigen::MatrixXd> x;  // each n x (T+1)
  std::vector<Eigen::MatrixXd> u;  // each m x (T+1)
};

/**
 * Scenario average of |x - x_p + lam_x|^2 + |u - u_p + lam_u|^2 (squared
 * Frobenius over the whole trajectory).
 */
double augmented_term(const std::vector<Rollout>& rollouts,
                      const std::vector<Eigen::MatrixXd>& x_copies,
                      const std::vector<Eigen::MatrixXd>& u_copies,
                      const MultiplierSet& lam);

/**
 * Barrier-rate penalty on each velocity coordinate, both bounds:
 * margins d_lo = vel + bound, d_hi = bound - vel must not shrink faster than
 * the geometric rate (1 - zeta); hinge excesses are summed over t = 0..T-1
 * for all four streams and weighted by omega.
 */
struct CbfConfig {
  double omega = 1.0;
  double zeta = 0.2;
  double bound = 0.5;
};

double cbf_penalty(const CbfConfig& cfg, const Rollout& r);

enum class TrainMode { kAdmm, kCbfBaseline };

/**
 * Scenario-averaged training objective. Admm mode: boost loss plus
 * (rho/2) * augmented term (copies and multipliers required). Baseline mode:
 * boost loss plus the barrier-rate penalty (cbf config required).
 */
double total_training_loss(TrainMode mode, const BoostLossConfig& cfg,
                           const std::vector<Rollout>& rollouts,
                           const CbfConfig* cbf,
                           const std::vector<Eigen::MatrixXd>* x_copies,
                           const std::vector<Eigen::MatrixXd>* u_copies,
                           const MultiplierSet* lam, double rho);

// Tape versions building one scenario's terms (no 1/S averaging).
ad::Var lq_loss_t(ad::Tape& tape, const BoostLossConfig& cfg,
                  const TapeRollout& r);
ad::Var collision_loss_t(ad::Tape& tape, const BoostLossConfig& cfg,
                         const TapeRollout& r);
ad::Var boost_loss_t(ad::Tape& tape, const BoostLossConfig& cfg,
                     const TapeRollout& r);
ad::Var augmented_term_t(ad::Tape& tape, const TapeRollout& r,
                         const Eigen::MatrixXd& x_copy,
                         const Eigen::MatrixXd& u_copy,
                         const Eigen::MatrixXd& lam_x,
                         const Eigen::MatrixXd& lam_u);
ad::Var cbf_penalty_t(ad::Tape& tape, const CbfConfig& cfg,
                      const TapeRollout& r);

}  // namespace admmpb

#endif
