#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "admmpb/losses.hpp"
#include "admmpb/plant.hpp"
#include "test_util.hpp"

using namespace admmpb;

namespace {

Rollout zero_rollout(int n, int m, int horizon) {
  return {Eigen::MatrixXd::Zero(n, horizon + 1),
          Eigen::MatrixXd::Zero(m, horizon + 1)};
}

/** Tape rollout whose trajectory columns are differentiation roots. */
TapeRollout leaf_rollout(ad::Tape& tape, const Rollout& r,
                         std::vector<ad::Var>* params) {
  TapeRollout tr;
  for (Eigen::Index t = 0; t < r.x.cols(); ++t) {
    ad::Var xv = tape.param(r.x.col(t));
    ad::Var uv = tape.param(r.u.col(t));
    tr.x.push_back(xv);
    tr.u.push_back(uv);
    if (params != nullptr) {
      params->push_back(xv);
      params->push_back(uv);
    }
  }
  return tr;
}

Eigen::VectorXd flatten(const Rollout& r) {
  Eigen::Index n = r.x.rows(), m = r.u.rows(), cols = r.x.cols();
  Eigen::VectorXd v((n + m) * cols);
  for (Eigen::Index t = 0; t < cols; ++t) {
    v.segment(t * (n + m), n) = r.x.col(t);
    v.segment(t * (n + m) + n, m) = r.u.col(t);
  }
  return v;
}

Rollout unflatten(const Eigen::VectorXd& v, Eigen::Index n, Eigen::Index m,
                  Eigen::Index cols) {
  Rollout r{Eigen::MatrixXd(n, cols), Eigen::MatrixXd(m, cols)};
  for (Eigen::Index t = 0; t < cols; ++t) {
    r.x.col(t) = v.segment(t * (n + m), n);
    r.u.col(t) = v.segment(t * (n + m) + n, m);
  }
  return r;
}

}  // namespace

TEST_CASE("quadratic cost: single-step pinned value and accumulation") {
  BoostLossConfig cfg = default_boost_loss(4, 2);
  Rollout r = zero_rollout(4, 2, 0);
  r.x(0, 0) = 1.0;
  r.u(0, 0) = 2.0;
  // x'Ix + 0.1 * u'Iu = 1 + 0.4.
  CHECK(lq_loss(cfg, r) == doctest::Approx(1.4).epsilon(1e-15));

  // Steps accumulate: the same state twice costs twice as much.
  Rollout r2 = zero_rollout(4, 2, 1);
  r2.x.col(0) = r.x.col(0);
  r2.x.col(1) = r.x.col(0);
  r2.u.col(0) = r.u.col(0);
  r2.u.col(1) = r.u.col(0);
  CHECK(lq_loss(cfg, r2) == doctest::Approx(2.8).epsilon(1e-15));

  // Non-identity weights enter quadratically.
  BoostLossConfig w = cfg;
  w.q_weight = 3.0 * Eigen::MatrixXd::Identity(4, 4);
  w.r_weight = Eigen::MatrixXd::Zero(2, 2);
  CHECK(lq_loss(w, r) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("collision loss: activation threshold and pinned values") {
  BoostLossConfig cfg = default_boost_loss(4, 2);
  const double threshold = cfg.margin * cfg.radius;  // 0.825, squared scale

  // Pinned at the obstacle for T+1 = 10 steps: only the constant accrues.
  Rollout at_center = zero_rollout(4, 2, 9);
  at_center.x.row(0).setConstant(cfg.obstacle[0]);
  at_center.x.row(1).setConstant(cfg.obstacle[1]);
  CHECK(collision_loss(cfg, at_center) == doctest::Approx(0.01).epsilon(1e-12));

  // Far away: inactive, exactly zero.
  Rollout far = zero_rollout(4, 2, 9);
  far.x.row(0).setConstant(10.0);
  CHECK(collision_loss(cfg, far) == 0.0);

  // At the origin the squared distance is 1.25 > 0.825: inactive.
  Rollout origin = zero_rollout(4, 2, 0);
  CHECK(collision_loss(cfg, origin) == 0.0);

  // Just inside the activation boundary: contributes d^2 + nu (about 0.826).
  auto d2_of = [&](const Rollout& rr) {
    Eigen::Vector2d diff = rr.x.col(0).head(2) - cfg.obstacle;
    return diff.squaredNorm();
  };
  Rollout edge = zero_rollout(4, 2, 0);
  edge.x(0, 0) = cfg.obstacle[0] + std::sqrt(threshold);
  edge.x(1, 0) = cfg.obstacle[1];
  while (d2_of(edge) > threshold)
    edge.x(0, 0) = std::nextafter(edge.x(0, 0), 0.0);
  CHECK(collision_loss(cfg, edge) ==
        doctest::Approx(d2_of(edge) + cfg.nu).epsilon(1e-15));
  CHECK(collision_loss(cfg, edge) == doctest::Approx(0.826).epsilon(1e-3));

  // Just outside: inactive.
  Rollout outside = edge;
  while (d2_of(outside) <= threshold)
    outside.x(0, 0) = std::nextafter(outside.x(0, 0), 2.0);
  CHECK(collision_loss(cfg, outside) == 0.0);

  // The total boost loss weighs collisions by alpha.
  CHECK(boost_loss(cfg, at_center) ==
        doctest::Approx(lq_loss(cfg, at_center) +
                        cfg.alpha * collision_loss(cfg, at_center))
            .epsilon(1e-15));
}

TEST_CASE("barrier-rate penalty: pinned hinge values") {
  CbfConfig cfg;  // omega 1, zeta 0.2, bound 0.5

  // Zero velocities: both margins sit at the bound, no shrinkage, zero.
  Rollout rest = zero_rollout(4, 2, 5);
  CHECK(cbf_penalty(cfg, rest) == 0.0);

  // One velocity component jumps 0 -> -0.45: the lower margin shrinks from
  // 0.5 to 0.05, beyond the allowed rate: hinge = 0.8*0.5 - 0.05 = 0.35.
  Rollout jump = zero_rollout(4, 2, 1);
  jump.x(2, 1) = -0.45;
  CHECK(cbf_penalty(cfg, jump) == doctest::Approx(0.35).epsilon(1e-12));

  // The same exceedance scales with omega.
  CbfConfig heavy = cfg;
  heavy.omega = 100.0;
  CHECK(cbf_penalty(heavy, jump) == doctest::Approx(35.0).epsilon(1e-12));

  // A slow approach inside the allowed rate costs nothing.
  Rollout slow = zero_rollout(4, 2, 1);
  slow.x(2, 1) = -0.05;  // margin 0.5 -> 0.45 >= 0.8*0.5
  CHECK(cbf_penalty(cfg, slow) == 0.0);

  // Moving toward the upper bound trips the other margin stream.
  Rollout up = zero_rollout(4, 2, 1);
  up.x(3, 1) = 0.45;  // upper margin 0.5 -> 0.05
  CHECK(cbf_penalty(cfg, up) == doctest::Approx(0.35).epsilon(1e-12));

  // Positions never enter the penalty.
  Rollout drift = zero_rollout(4, 2, 3);
  drift.x.row(0).setConstant(50.0);
  drift.x.row(1).setConstant(-50.0);
  CHECK(cbf_penalty(cfg, drift) == 0.0);
}

TEST_CASE("augmented term: pinned value and scenario averaging") {
  // Single scenario, x-residual all ones over a 2x2 trajectory: |.|_F^2 = 4.
  Rollout r{Eigen::MatrixXd::Ones(2, 2), Eigen::MatrixXd::Zero(1, 2)};
  std::vector<Eigen::MatrixXd> xc = {Eigen::MatrixXd::Zero(2, 2)};
  std::vector<Eigen::MatrixXd> uc = {Eigen::MatrixXd::Zero(1, 2)};
  MultiplierSet lam;
  lam.x = {Eigen::MatrixXd::Zero(2, 2)};
  lam.u = {Eigen::MatrixXd::Zero(1, 2)};
  CHECK(augmented_term({r}, xc, uc, lam) == doctest::Approx(4.0).epsilon(1e-15));

  // Multipliers shift the residual before squaring: x - xp + lam = 2.
  lam.x[0].setConstant(1.0);
  CHECK(augmented_term({r}, xc, uc, lam) == doctest::Approx(16.0).epsilon(1e-15));

  // Matching copies cancel the trajectory exactly.
  lam.x[0].setZero();
  xc[0].setConstant(1.0);
  CHECK(augmented_term({r}, xc, uc, lam) == 0.0);

  // Two scenarios average: (4 + 0) / 2.
  Rollout zero{Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(1, 2)};
  xc = {Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)};
  uc = {Eigen::MatrixXd::Zero(1, 2), Eigen::MatrixXd::Zero(1, 2)};
  lam.x = {Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)};
  lam.u = {Eigen::MatrixXd::Zero(1, 2), Eigen::MatrixXd::Zero(1, 2)};
  CHECK(augmented_term({r, zero}, xc, uc, lam) ==
        doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("total training loss composes the pieces per mode") {
  BoostLossConfig cfg = default_boost_loss(4, 2);
  CbfConfig cbf;
  std::mt19937_64 gen(3);

  std::vector<Rollout> rollouts;
  std::vector<Eigen::MatrixXd> xc, uc;
  MultiplierSet lam;
  for (int s = 0; s < 2; ++s) {
    Rollout r{testutil::random_matrix(4, 6, gen, 0.4),
              testutil::random_matrix(2, 6, gen, 0.4)};
    rollouts.push_back(r);
    xc.push_back(testutil::random_matrix(4, 6, gen, 0.4));
    uc.push_back(testutil::random_matrix(2, 6, gen, 0.4));
    lam.x.push_back(testutil::random_matrix(4, 6, gen, 0.1));
    lam.u.push_back(testutil::random_matrix(2, 6, gen, 0.1));
  }

  double base = 0.5 * (boost_loss(cfg, rollouts[0]) + boost_loss(cfg, rollouts[1]));
  double rho = 0.7;

  double admm = total_training_loss(TrainMode::kAdmm, cfg, rollouts, nullptr,
                                    &xc, &uc, &lam, rho);
  double aug = augmented_term(rollouts, xc, uc, lam);
  CHECK(admm == doctest::Approx(base + rho / 2 * aug).epsilon(1e-14));

  double pen = total_training_loss(TrainMode::kCbfBaseline, cfg, rollouts, &cbf,
                                   nullptr, nullptr, nullptr, 0.0);
  double cbf_mean =
      0.5 * (cbf_penalty(cbf, rollouts[0]) + cbf_penalty(cbf, rollouts[1]));
  CHECK(pen == doctest::Approx(base + cbf_mean).epsilon(1e-14));

  CHECK_THROWS_AS(total_training_loss(TrainMode::kAdmm, cfg, rollouts, nullptr,
                                      nullptr, nullptr, nullptr, rho),
                  std::invalid_argument);
  CHECK_THROWS_AS(total_training_loss(TrainMode::kCbfBaseline, cfg, rollouts,
                                      nullptr, nullptr, nullptr, nullptr, 0.0),
                  std::invalid_argument);
}

TEST_CASE("tape losses match the plain losses on random trajectories") {
  BoostLossConfig cfg = default_boost_loss(4, 2);
  CbfConfig cbf;
  std::mt19937_64 gen(29);

  for (int trial = 0; trial < 5; ++trial) {
    Rollout r{testutil::random_matrix(4, 8, gen, 0.8),
              testutil::random_matrix(2, 8, gen, 0.8)};
    Eigen::MatrixXd xc = testutil::random_matrix(4, 8, gen, 0.8);
    Eigen::MatrixXd uc = testutil::random_matrix(2, 8, gen, 0.8);
    Eigen::MatrixXd lx = testutil::random_matrix(4, 8, gen, 0.2);
    Eigen::MatrixXd lu = testutil::random_matrix(2, 8, gen, 0.2);

    ad::Tape tape;
    TapeRollout tr = leaf_rollout(tape, r, nullptr);

    CHECK(tape.forward(lq_loss_t(tape, cfg, tr)) ==
          doctest::Approx(lq_loss(cfg, r)).epsilon(1e-13));
    CHECK(tape.forward(collision_loss_t(tape, cfg, tr)) ==
          doctest::Approx(collision_loss(cfg, r)).epsilon(1e-13));
    CHECK(tape.forward(boost_loss_t(tape, cfg, tr)) ==
          doctest::Approx(boost_loss(cfg, r)).epsilon(1e-13));
    CHECK(tape.forward(cbf_penalty_t(tape, cbf, tr)) ==
          doctest::Approx(cbf_penalty(cbf, r)).epsilon(1e-13));

    MultiplierSet lam;
    lam.x = {lx};
    lam.u = {lu};
    CHECK(tape.forward(augmented_term_t(tape, tr, xc, uc, lx, lu)) ==
          doctest::Approx(augmented_term({r}, {xc}, {uc}, lam)).epsilon(1e-13));
  }
}

TEST_CASE("tape loss gradients match finite differences") {
  BoostLossConfig cfg = default_boost_loss(4, 2);
  // Move the obstacle onto the trajectory so the collision hinge is active.
  cfg.obstacle = Eigen::Vector2d(0.1, -0.2);
  CbfConfig cbf;
  std::mt19937_64 gen(31);
  const int horizon = 5;

  Rollout r0{testutil::random_matrix(4, horizon + 1, gen, 0.4),
             testutil::random_matrix(2, horizon + 1, gen, 0.4)};
  Eigen::MatrixXd xc = testutil::random_matrix(4, horizon + 1, gen, 0.4);
  Eigen::MatrixXd uc = testutil::random_matrix(2, horizon + 1, gen, 0.4);
  Eigen::MatrixXd lx = testutil::random_matrix(4, horizon + 1, gen, 0.2);
  Eigen::MatrixXd lu = testutil::random_matrix(2, horizon + 1, gen, 0.2);

  enum Which { kBoost, kCbf, kAug };
  for (Which which : {kBoost, kCbf, kAug}) {
    ad::Tape tape;
    std::vector<ad::Var> params;
    TapeRollout tr = leaf_rollout(tape, r0, &params);
    ad::Var loss = (which == kBoost) ? boost_loss_t(tape, cfg, tr)
                   : (which == kCbf) ? cbf_penalty_t(tape, cbf, tr)
                                     : augmented_term_t(tape, tr, xc, uc, lx, lu);
    tape.backward(loss);
    Eigen::VectorXd got = tape.gradient(params);

    auto f = [&](const Eigen::VectorXd& v) {
      Rollout r = unflatten(v, 4, 2, horizon + 1);
      switch (which) {
        case kBoost:
          return boost_loss(cfg, r);
        case kCbf:
          return cbf_penalty(cbf, r);
        default: {
          MultiplierSet lam;
          lam.x = {lx};
          lam.u = {lu};
          return augmented_term({r}, {xc}, {uc}, lam);
        }
      }
    };
    Eigen::VectorXd want = testutil::central_diff(f, flatten(r0), 1e-6);
    CHECK(testutil::max_rel_err(got, want) < 1e-5);
  }
}
