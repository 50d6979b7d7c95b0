#include "admmpb/losses.hpp"

#include <stdexcept>

namespace admmpb {

BoostLossConfig default_boost_loss(int n, int m) {
  BoostLossConfig cfg;
  cfg.q_weight = Eigen::MatrixXd::Identity(n, n);
  cfg.r_weight = 0.1 * Eigen::MatrixXd::Identity(m, m);
  return cfg;
}

double lq_loss(const BoostLossConfig& cfg, const Rollout& r) {
  if (cfg.q_weight.rows() != r.x.rows() || cfg.r_weight.rows() != r.u.rows()) {
    throw std::invalid_argument("lq_loss: weight dimension mismatch");
  }
  double acc = 0.0;
  for (int t = 0; t < r.x.cols(); ++t) {
    acc += r.x.col(t).dot(cfg.q_weight * r.x.col(t));
  }
  for (int t = 0; t < r.u.cols(); ++t) {
    acc += r.u.col(t).dot(cfg.r_weight * r.u.col(t));
  }
  return acc;
}

double collision_loss(const BoostLossConfig& cfg, const Rollout& r) {
  const double threshold = cfg.margin * cfg.radius;
  double acc = 0.0;
  for (int t = 0; t < r.x.cols(); ++t) {
    const double d2 = (r.x.col(t).head(2) - cfg.obstacle).squaredNorm();
    if (d2 <= threshold) acc += d2 + cfg.nu;
  }
  return acc;
}

double boost_loss(const BoostLossConfig& cfg, const Rollout& r) {
  return lq_loss(cfg, r) + cfg.alpha * collision_loss(cfg, r);
}

double augmented_term(const std::vector<Rollout>& rollouts,
                      const std::vector<Eigen::MatrixXd>& x_copies,
                      const std::vector<Eigen::MatrixXd>& u_copies,
                      const MultiplierSet& lam) {
  const std::size_t s_count = rollouts.size();
  if (x_copies.size() != s_count || u_copies.size() != s_count ||
      lam.x.size() != s_count || lam.u.size() != s_count) {
    throw std::invalid_argument("augmented_term: scenario count mismatch");
  }
  double acc = 0.0;
  for (std::size_t s = 0; s < s_count; ++s) {
    acc += (rollouts[s].x - x_copies[s] + lam.x[s]).squaredNorm();
    acc += (rollouts[s].u - u_copies[s] + lam.u[s]).squaredNorm();
  }
  return acc / static_cast<double>(s_count);
}

double cbf_penalty(const CbfConfig& cfg, const Rollout& r) {
  const int horizon = static_cast<int>(r.x.cols()) - 1;
  double acc = 0.0;
  for (int i = 2; i < 4; ++i) {  // velocity components of [pos(2); vel(2)]
    double lo_sum = 0.0, hi_sum = 0.0;
    for (int t = 0; t < horizon; ++t) {
      const double d_lo_t = r.x(i, t) + cfg.bound;
      const double d_lo_n = r.x(i, t + 1) + cfg.bound;
      lo_sum += std::max(0.0, (1.0 - cfg.zeta) * d_lo_t - d_lo_n);
      const double d_hi_t = cfg.bound - r.x(i, t);
      const double d_hi_n = cfg.bound - r.x(i, t + 1);
      hi_sum += std::max(0.0, (1.0 - cfg.zeta) * d_hi_t - d_hi_n);
    }
    acc += cfg.omega * lo_sum + cfg.omega * hi_sum;
  }
  return acc;
}

double total_training_loss(TrainMode mode, const BoostLossConfig& cfg,
                           const std::vector<Rollout>& rollouts,
                           const CbfConfig* cbf,
                           const std::vector<Eigen::MatrixXd>* x_copies,
                           const std::vector<Eigen::MatrixXd>* u_copies,
                           const MultiplierSet* lam, double rho) {
  if (rollouts.empty()) {
    throw std::invalid_argument("total_training_loss: no rollouts");
  }
  const double inv_s = 1.0 / static_cast<double>(rollouts.size());
  double base = 0.0;
  for (const auto& r : rollouts) base += boost_loss(cfg, r);
  base *= inv_s;

  if (mode == TrainMode::kAdmm) {
    if (x_copies == nullptr || u_copies == nullptr || lam == nullptr) {
      throw std::invalid_argument(
          "total_training_loss: admm mode requires copies and multipliers");
    }
    return base +
           (rho / 2.0) * augmented_term(rollouts, *x_copies, *u_copies, *lam);
  }
  if (cbf == nullptr) {
    throw std::invalid_argument(
        "total_training_loss: baseline mode requires a cbf config");
  }
  double pen = 0.0;
  for (const auto& r : rollouts) pen += cbf_penalty(*cbf, r);
  return base + pen * inv_s;
}

ad::Var lq_loss_t(ad::Tape& tape, const BoostLossConfig& cfg,
                  const TapeRollout& r) {
  ad::Var q = tape.constant(cfg.q_weight);
  ad::Var rr = tape.constant(cfg.r_weight);
  ad::Var acc = tape.constant(0.0);
  for (const ad::Var& x : r.x) {
    acc = tape.add(acc, tape.dot(x, tape.matvec(q, x)));
  }
  for (const ad::Var& u : r.u) {
    acc = tape.add(acc, tape.dot(u, tape.matvec(rr, u)));
  }
  return acc;
}

ad::Var collision_loss_t(ad::Tape& tape, const BoostLossConfig& cfg,
                         const TapeRollout& r) {
  const double threshold = cfg.margin * cfg.radius;
  ad::Var obstacle = tape.constant(Eigen::MatrixXd(cfg.obstacle));
  ad::Var acc = tape.constant(0.0);
  int active = 0;
  for (const ad::Var& x : r.x) {
    ad::Var pos = tape.slice(x, 0, 2);
    ad::Var d2 = tape.norm_sq(tape.sub(pos, obstacle));
    if (tape.forward(d2) <= threshold) {
      acc = tape.add(acc, d2);
      ++active;
    }
  }
  // The constant nu per active step does not affect gradients.
  return tape.add(acc, tape.constant(active * cfg.nu));
}

ad::Var boost_loss_t(ad::Tape& tape, const BoostLossConfig& cfg,
                     const TapeRollout& r) {
  return tape.add(lq_loss_t(tape, cfg, r),
                  tape.scale(collision_loss_t(tape, cfg, r), cfg.alpha));
}

ad::Var augmented_term_t(ad::Tape& tape, const TapeRollout& r,
                         const Eigen::MatrixXd& x_copy,
                         const Eigen::MatrixXd& u_copy,
                         const Eigen::MatrixXd& lam_x,
                         const Eigen::MatrixXd& lam_u) {
  const int cols = static_cast<int>(r.x.size());
  if (x_copy.cols() != cols || lam_x.cols() != cols ||
      u_copy.cols() != static_cast<int>(r.u.size()) ||
      lam_u.cols() != u_copy.cols()) {
    throw std::invalid_argument("augmented_term: copy shape mismatch");
  }
  ad::Var acc = tape.constant(0.0);
  for (int t = 0; t < cols; ++t) {
    // Fold the constants: x - x_p + lam = x + (lam - x_p).
    Eigen::MatrixXd cx = lam_x.col(t) - x_copy.col(t);
    acc = tape.add(acc, tape.norm_sq(tape.add(r.x[t], tape.constant(cx))));
    Eigen::MatrixXd cu = lam_u.col(t) - u_copy.col(t);
    acc = tape.add(acc, tape.norm_sq(tape.add(r.u[t], tape.constant(cu))));
  }
  return acc;
}

ad::Var cbf_penalty_t(ad::Tape& tape, const CbfConfig& cfg,
                      const TapeRollout& r) {
  const int horizon = static_cast<int>(r.x.size()) - 1;
  Eigen::MatrixXd bound2 = Eigen::MatrixXd::Constant(2, 1, cfg.bound);
  ad::Var bound = tape.constant(bound2);
  // Margins to both bounds for the velocity pair, per step.
  std::vector<ad::Var> d_lo(horizon + 1), d_hi(horizon + 1);
  for (int t = 0; t <= horizon; ++t) {
    ad::Var vel = tape.slice(r.x[t], 2, 2);
    d_lo[t] = tape.add(vel, bound);
    d_hi[t] = tape.sub(bound, vel);
  }
  ad::Var acc = tape.constant(0.0);
  for (int t = 0; t < horizon; ++t) {
    ad::Var lo = tape.max0(tape.sub(tape.scale(d_lo[t], 1.0 - cfg.zeta),
                                    d_lo[t + 1]));
    ad::Var hi = tape.max0(tape.sub(tape.scale(d_hi[t], 1.0 - cfg.zeta),
                                    d_hi[t + 1]));
    acc = tape.add(acc, tape.add(tape.sum(lo), tape.sum(hi)));
  }
  return tape.scale(acc, cfg.omega);
}

}  // namespace admmpb
