#include "admmpb/admm.hpp"

#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

namespace admmpb {

void adam_step(AdamState& st, Eigen::VectorXd& theta,
               const Eigen::VectorXd& grad, double lr) {
  if (grad.size() != theta.size()) {
    throw std::invalid_argument("adam: gradient size mismatch");
  }
  if (st.m.size() != theta.size()) st.reset(theta.size());
  st.steps += 1;
  st.m = st.beta1 * st.m + (1.0 - st.beta1) * grad;
  st.v = st.beta2 * st.v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.steps));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.steps));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double m_hat = st.m[i] / bc1;
    const double v_hat = st.v[i] / bc2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + st.eps);
  }
}

double update_learning_rate(int j, const AdmmConfig& cfg) {
  if (j < 0) throw std::invalid_argument("update_learning_rate: negative j");
  const int k = j / cfg.decay_interval;
  return std::max(cfg.eta_floor, cfg.eta0 * std::pow(cfg.gamma, k));
}

Residuals compute_residuals(const std::vector<Rollout>& rollouts,
                            const std::vector<Eigen::MatrixXd>& x_copies,
                            const std::vector<Eigen::MatrixXd>& u_copies,
                            const std::vector<Eigen::MatrixXd>& x_copies_prev,
                            const std::vector<Eigen::MatrixXd>& u_copies_prev,
                            const MultiplierSet& lam, double rho,
                            const AdmmConfig& cfg, int theta_dim) {
  const std::size_t s_count = rollouts.size();
  if (x_copies.size() != s_count || u_copies.size() != s_count ||
      x_copies_prev.size() != s_count || u_copies_prev.size() != s_count) {
    throw std::invalid_argument("compute_residuals: scenario count mismatch");
  }
  Eigen::Index c = 0;
  for (const auto& r : rollouts) c += r.x.size() + r.u.size();

  Residuals res;
  res.r.resize(c);
  res.delta.resize(c);
  Eigen::Index at = 0;
  auto put = [&](Eigen::VectorXd& dst, const Eigen::MatrixXd& m) {
    dst.segment(at, m.size()) =
        Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    at += m.size();
  };
  // x block then u block, scenarios in order within each block.
  for (std::size_t s = 0; s < s_count; ++s) {
    Eigen::MatrixXd d = rollouts[s].x - x_copies[s];
    put(res.r, d);
  }
  for (std::size_t s = 0; s < s_count; ++s) {
    Eigen::MatrixXd d = rollouts[s].u - u_copies[s];
    put(res.r, d);
  }
  at = 0;
  for (std::size_t s = 0; s < s_count; ++s) {
    Eigen::MatrixXd d = -rho * (x_copies[s] - x_copies_prev[s]);
    put(res.delta, d);
  }
  for (std::size_t s = 0; s < s_count; ++s) {
    Eigen::MatrixXd d = -rho * (u_copies[s] - u_copies_prev[s]);
    put(res.delta, d);
  }

  double z2 = 0.0, zp2 = 0.0, lam2 = 0.0;
  for (std::size_t s = 0; s < s_count; ++s) {
    z2 += rollouts[s].x.squaredNorm() + rollouts[s].u.squaredNorm();
    zp2 += x_copies[s].squaredNorm() + u_copies[s].squaredNorm();
    lam2 += lam.x[s].squaredNorm() + lam.u[s].squaredNorm();
  }
  res.norm_r = res.r.norm();
  res.norm_delta = res.delta.norm();
  const double o = static_cast<double>(c) + theta_dim;
  res.eps_r = std::sqrt(static_cast<double>(c)) * cfg.eps_abs +
              cfg.eps_rel * std::max(std::sqrt(z2), std::sqrt(zp2));
  res.eps_delta = std::sqrt(o) * cfg.eps_abs + cfg.eps_rel * std::sqrt(lam2);
  return res;
}

void update_penalty(AdmmState& st, const Residuals& res,
                    const AdmmConfig& cfg) {
  double tau = 1.0;
  if (res.norm_r > cfg.mu * res.norm_delta) {
    tau = cfg.tau_inc;
  } else if (res.norm_delta > cfg.mu * res.norm_r) {
    tau = cfg.tau_dec;
  } else {
    return;
  }
  st.rho *= tau;
  const double inv = 1.0 / tau;
  for (auto& l : st.lam.x) l *= inv;
  for (auto& l : st.lam.u) l *= inv;
}

namespace {

struct ScenarioOut {
  double objective = 0.0;
  double base = 0.0;
  Eigen::VectorXd grad;
};

ScenarioOut eval_scenario(const AdmmProblem& prob, const ThetaVector& theta,
                          ObjectiveKind kind, const AdmmState* state,
                          const CbfConfig* cbf, std::size_t s) {
  const int horizon = static_cast<int>(prob.bank[s].cols()) - 1;
  ad::Tape tape(64 + static_cast<std::size_t>(horizon + 1) * 48);
  ThetaLeaves th = register_theta(tape, theta);
  TapeOperator op = make_tape_operator(tape, prob.op, th);
  TapeRollout roll = rollout_closed_loop_t(tape, *prob.plant, op, prob.bank[s]);
  ad::Var base = boost_loss_t(tape, prob.loss, roll);
  ad::Var obj = base;
  if (kind == ObjectiveKind::kAdmm) {
    ad::Var aug = augmented_term_t(tape, roll, state->x_copies[s],
                                   state->u_copies[s], state->lam.x[s],
                                   state->lam.u[s]);
    obj = tape.add(base, tape.scale(aug, state->rho / 2.0));
  } else if (kind == ObjectiveKind::kCbfBaseline) {
    obj = tape.add(base, cbf_penalty_t(tape, *cbf, roll));
  }
  tape.backward(obj);
  ScenarioOut out;
  out.objective = tape.forward(obj);
  out.base = tape.forward(base);
  out.grad = tape.gradient(th.as_params());
  if (!out.grad.allFinite()) {
    throw std::runtime_error("eval_objective: non-finite gradient in scenario " +
                             std::to_string(s));
  }
  return out;
}

}  // namespace

GradEval eval_objective(const AdmmProblem& prob, const ThetaVector& theta,
                        ObjectiveKind kind, const AdmmState* state,
                        const CbfConfig* cbf, int threads) {
  const std::size_t s_count = prob.bank.size();
  if (s_count == 0) throw std::invalid_argument("eval_objective: empty bank");
  if (kind == ObjectiveKind::kAdmm && state == nullptr) {
    throw std::invalid_argument("eval_objective: admm mode requires state");
  }
  if (kind == ObjectiveKind::kCbfBaseline && cbf == nullptr) {
    throw std::invalid_argument("eval_objective: baseline mode requires cbf");
  }

  std::vector<ScenarioOut> outs(s_count);
  const int workers =
      std::max(1, std::min<int>(threads, static_cast<int>(s_count)));
  if (workers == 1) {
    for (std::size_t s = 0; s < s_count; ++s) {
      outs[s] = eval_scenario(prob, theta, kind, state, cbf, s);
    }
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          for (std::size_t s = w; s < s_count; s += workers) {
            outs[s] = eval_scenario(prob, theta, kind, state, cbf, s);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  // Fixed-order reduction keeps results identical for any worker count.
  GradEval ge;
  ge.grad = Eigen::VectorXd::Zero(theta.data.size());
  for (std::size_t s = 0; s < s_count; ++s) {
    ge.objective += outs[s].objective;
    ge.base_loss += outs[s].base;
    ge.grad += outs[s].grad;
  }
  const double inv = 1.0 / static_cast<double>(s_count);
  ge.objective *= inv;
  ge.base_loss *= inv;
  ge.grad *= inv;
  return ge;
}

double inner_gd_step(AdmmState& st, const AdmmProblem& prob,
                     const AdmmConfig& cfg, std::vector<double>* trace) {
  if (cfg.reset_moments_each_iter) st.opt.reset(st.theta.data.size());
  double last = 0.0;
  for (int e = 0; e < cfg.epochs_per_step; ++e) {
    GradEval ge = eval_objective(prob, st.theta, ObjectiveKind::kAdmm, &st,
                                 nullptr, cfg.threads);
    adam_step(st.opt, st.theta.data, ge.grad, st.eta);
    if (trace != nullptr) trace->push_back(ge.base_loss);
    last = ge.base_loss;
  }
  return last;
}

AdmmResult run_admm_pb(const AdmmProblem& prob, const AdmmConfig& cfg,
                       const ThetaVector& theta0,
                       const IterationHook& on_iteration) {
  if (prob.plant == nullptr) {
    throw std::invalid_argument("run_admm_pb: missing plant");
  }
  const std::size_t s_count = prob.bank.size();
  if (s_count == 0) throw std::invalid_argument("run_admm_pb: empty bank");

  AdmmResult out;
  AdmmState st;
  st.theta = theta0;
  st.rho = cfg.rho0;
  st.eta = cfg.eta0;
  st.opt.reset(st.theta.data.size());

  if (cfg.warmstart_epochs > 0) {
    for (int e = 0; e < cfg.warmstart_epochs; ++e) {
      GradEval ge = eval_objective(prob, st.theta, ObjectiveKind::kBoostOnly,
                                   nullptr, nullptr, cfg.threads);
      adam_step(st.opt, st.theta.data, ge.grad, cfg.eta0);
    }
  }

  // Copies start at the projection of the initial rollouts; multipliers at 0.
  std::vector<Rollout> rollouts =
      rollout_bank(*prob.plant, prob.op, st.theta, prob.bank);
  st.x_copies.resize(s_count);
  st.u_copies.resize(s_count);
  st.lam.x.resize(s_count);
  st.lam.u.resize(s_count);
  for (std::size_t s = 0; s < s_count; ++s) {
    auto [xp, up] =
        project_trajectory(prob.constraint, rollouts[s].x, rollouts[s].u);
    st.x_copies[s] = std::move(xp);
    st.u_copies[s] = std::move(up);
    st.lam.x[s] = Eigen::MatrixXd::Zero(rollouts[s].x.rows(),
                                        rollouts[s].x.cols());
    st.lam.u[s] = Eigen::MatrixXd::Zero(rollouts[s].u.rows(),
                                        rollouts[s].u.cols());
  }

  const int theta_dim = static_cast<int>(st.theta.data.size());
  for (int j = 0; j < cfg.max_iters; ++j) {
    st.eta = update_learning_rate(j, cfg);
    const double train_loss = inner_gd_step(st, prob, cfg, &out.epoch_trace);

    rollouts = rollout_bank(*prob.plant, prob.op, st.theta, prob.bank);
    std::vector<Eigen::MatrixXd> prev_x = st.x_copies;
    std::vector<Eigen::MatrixXd> prev_u = st.u_copies;
    for (std::size_t s = 0; s < s_count; ++s) {
      auto [xp, up] = project_trajectory(prob.constraint,
                                         rollouts[s].x + st.lam.x[s],
                                         rollouts[s].u + st.lam.u[s]);
      st.x_copies[s] = std::move(xp);
      st.u_copies[s] = std::move(up);
    }
    for (std::size_t s = 0; s < s_count; ++s) {
      st.lam.x[s] += rollouts[s].x - st.x_copies[s];
      st.lam.u[s] += rollouts[s].u - st.u_copies[s];
    }

    Residuals res =
        compute_residuals(rollouts, st.x_copies, st.u_copies, prev_x, prev_u,
                          st.lam, st.rho, cfg, theta_dim);
    out.iterates.push_back({j, res.norm_r, res.norm_delta, res.eps_r,
                            res.eps_delta, st.rho, st.eta, train_loss});
    if (on_iteration) on_iteration(st, res, j);
    if (res.norm_r <= res.eps_r && res.norm_delta <= res.eps_delta) {
      out.terminated = true;
      break;
    }
    update_penalty(st, res, cfg);
  }
  out.theta = st.theta;
  return out;
}

}  // namespace admmpb
