#include "admmpb/plant.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "admmpb/rng.hpp"

namespace admmpb {

Eigen::VectorXd PointMassPlant::next(const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u) const {
  if (x.size() != 4 || u.size() != 2) {
    throw std::invalid_argument("plant: expected state dim 4 and input dim 2");
  }
  const Eigen::Vector2d pos = x.head(2);
  const Eigen::Vector2d vel = x.tail(2);
  const Eigen::Vector2d tv =
      vel.unaryExpr([](double v) { return std::tanh(v); });
  const Eigen::Vector2d force = (p_.target - pos) + u.head(2);
  const Eigen::Vector2d inner =
      p_.friction_sign * (p_.beta1 * vel + p_.beta2 * tv) + force;
  const double c = p_.ts / p_.mass;
  Eigen::VectorXd out(4);
  out.head(2) = pos + p_.ts * vel;
  out.tail(2) = vel + c * inner;
  return out;
}

ad::Var PointMassPlant::next_t(ad::Tape& tape, ad::Var x, ad::Var u) const {
  ad::Var pos = tape.slice(x, 0, 2);
  ad::Var vel = tape.slice(x, 2, 2);
  ad::Var tv = tape.tanh(vel);
  ad::Var force =
      tape.add(tape.sub(tape.constant(Eigen::MatrixXd(p_.target)), pos), u);
  ad::Var inner = tape.add(
      tape.scale(tape.add(tape.scale(vel, p_.beta1), tape.scale(tv, p_.beta2)),
                 p_.friction_sign),
      force);
  const double c = p_.ts / p_.mass;
  ad::Var npos = tape.add(pos, tape.scale(vel, p_.ts));
  ad::Var nvel = tape.add(vel, tape.scale(inner, c));
  return tape.concat(npos, nvel);
}

Eigen::VectorXd pointmass_step(const PointMassParams& p,
                               const Eigen::VectorXd& x,
                               const Eigen::VectorXd& u,
                               const Eigen::VectorXd& w) {
  PointMassPlant plant(p);
  return plant.next(x, u) + w;
}

Eigen::MatrixXd sample_noise(const NoiseModel& nm, int state_dim, int horizon,
                             std::uint64_t seed) {
  if (nm.x0_mean.size() != state_dim || nm.x0_std.size() != state_dim) {
    throw std::invalid_argument("noise: x0 moments do not match state dim");
  }
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd w(state_dim, horizon + 1);
  for (int i = 0; i < state_dim; ++i) {
    w(i, 0) = nm.x0_mean[i] + nm.x0_std[i] * unit(gen);
  }
  for (int t = 1; t <= horizon; ++t) {
    for (int i = 0; i < state_dim; ++i) {
      w(i, t) = nm.process_std * unit(gen);
    }
  }
  return w;
}

std::vector<Eigen::MatrixXd> make_noise_bank(const NoiseModel& nm,
                                             int state_dim, int horizon,
                                             int scenarios,
                                             std::uint64_t seed) {
  std::vector<Eigen::MatrixXd> bank;
  bank.reserve(scenarios);
  for (int s = 0; s < scenarios; ++s) {
    bank.push_back(sample_noise(nm, state_dim, horizon, mix_seed(seed, s)));
  }
  return bank;
}

Rollout rollout_closed_loop(const PlantModel& plant, const OperatorMatrices& op,
                            const Eigen::MatrixXd& w) {
  const int n = plant.state_dim();
  const int m = plant.input_dim();
  const int horizon = static_cast<int>(w.cols()) - 1;
  if (w.rows() != n || horizon < 0) {
    throw std::invalid_argument("rollout: noise shape does not match plant");
  }
  Rollout r;
  r.x.resize(n, horizon + 1);
  r.u.resize(m, horizon + 1);

  Eigen::VectorXd op_state = Eigen::VectorXd::Zero(op.a.rows());
  Eigen::VectorXd x = w.col(0);  // x_0 = w_0
  Eigen::VectorXd f_prev;        // f(x_{t-1}, u_{t-1})
  for (int t = 0; t <= horizon; ++t) {
    if (!x.allFinite()) {
      throw std::runtime_error("rollout: non-finite state at step " +
                               std::to_string(t));
    }
    r.x.col(t) = x;
    // Reconstruct the disturbance through the internal model.
    Eigen::VectorXd w_rec = (t == 0) ? x : Eigen::VectorXd(x - f_prev);
    auto [next_state, u] = op_step(op, op_state, w_rec);
    op_state = std::move(next_state);
    r.u.col(t) = u;
    if (t < horizon) {
      f_prev = plant.next(x, u);
      x = f_prev + w.col(t + 1);
    }
  }
  return r;
}

std::vector<Rollout> rollout_bank(const PlantModel& plant,
                                  const OperatorConfig& cfg,
                                  const ThetaVector& theta,
                                  const std::vector<Eigen::MatrixXd>& bank) {
  OperatorMatrices op = materialize(cfg, theta);
  std::vector<Rollout> out;
  out.reserve(bank.size());
  for (const auto& w : bank) out.push_back(rollout_closed_loop(plant, op, w));
  return out;
}

TapeRollout rollout_closed_loop_t(ad::Tape& tape, const PlantModel& plant,
                                  const TapeOperator& op,
                                  const Eigen::MatrixXd& w) {
  const int n = plant.state_dim();
  const int horizon = static_cast<int>(w.cols()) - 1;
  if (w.rows() != n || horizon < 0) {
    throw std::invalid_argument("rollout: noise shape does not match plant");
  }
  TapeRollout r;
  r.x.reserve(horizon + 1);
  r.u.reserve(horizon + 1);

  ad::Var op_state =
      tape.constant(Eigen::MatrixXd::Zero(op.n_state, 1));
  ad::Var x = tape.constant(Eigen::MatrixXd(w.col(0)));
  ad::Var f_prev{};
  for (int t = 0; t <= horizon; ++t) {
    r.x.push_back(x);
    ad::Var w_rec = (t == 0) ? x : tape.sub(x, f_prev);
    auto [next_state, u] = op_step_t(tape, op, op_state, w_rec);
    op_state = next_state;
    r.u.push_back(u);
    if (t < horizon) {
      f_prev = plant.next_t(tape, x, u);
      x = tape.add(f_prev, tape.constant(Eigen::MatrixXd(w.col(t + 1))));
    }
  }
  return r;
}

void write_trajectories_csv(const std::string& path,
                            const std::vector<Rollout>& rollouts,
                            const std::vector<Eigen::MatrixXd>& bank) {
  if (rollouts.size() != bank.size()) {
    throw std::invalid_argument("csv: rollout and noise bank sizes differ");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot open " + path);
  const int n = rollouts.empty() ? 0 : static_cast<int>(rollouts[0].x.rows());
  const int m = rollouts.empty() ? 0 : static_cast<int>(rollouts[0].u.rows());
  out << "t,s";
  for (int i = 1; i <= n; ++i) out << ",x" << i;
  for (int i = 1; i <= m; ++i) out << ",u" << i;
  for (int i = 1; i <= n; ++i) out << ",w" << i;
  out << "\n";
  char buf[32];
  for (std::size_t s = 0; s < rollouts.size(); ++s) {
    const auto& r = rollouts[s];
    for (int t = 0; t < r.x.cols(); ++t) {
      out << t << "," << s;
      auto emit = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << "," << buf;
      };
      for (int i = 0; i < n; ++i) emit(r.x(i, t));
      for (int i = 0; i < m; ++i) emit(r.u(i, t));
      for (int i = 0; i < n; ++i) emit(bank[s](i, t));
      out << "\n";
    }
  }
}

}  // namespace admmpb
