#include "admmpb/bench.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "admmpb/rng.hpp"
#include "admmpb/version.hpp"

namespace admmpb {

namespace {

constexpr std::uint64_t kThetaStream = 1000;
constexpr std::uint64_t kTrainStream = 2000;
constexpr std::uint64_t kTestStream = 3000;

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols =
      rows == 0 ? 0 : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j.at(i).at(k).get<double>();
  return m;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j.at(i).get<double>();
  return v;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  // The benchmark runs the damped regime: beta1/beta2 act as physical
  // friction, so the proportional pull to the origin pre-stabilizes the
  // plant. With the opposite sign no bounded boost can keep the velocities
  // inside the box and every method saturates the violation metric alike.
  plant.friction_sign = -1.0;
  loss = default_boost_loss(4, 2);
  const double inf = std::numeric_limits<double>::infinity();
  state_box.lower = (Eigen::VectorXd(4) << -inf, -inf, -0.5, -0.5).finished();
  state_box.upper = (Eigen::VectorXd(4) << inf, inf, 0.5, 0.5).finished();
}

ExperimentConfig desk_scale(ExperimentConfig cfg) {
  cfg.s_train = 4;
  cfg.horizon = 100;
  cfg.admm.max_iters = 150;
  // Same epoch budget as the splitting loop: max_iters * epochs_per_step.
  cfg.baseline_epochs = cfg.admm.max_iters * cfg.admm.epochs_per_step;
  return cfg;
}

TrajectoryConstraint make_constraint(const ExperimentConfig& cfg) {
  TrajectoryConstraint tc;
  tc.state_set = cfg.state_box;
  tc.input_set = AllSpace{2};
  tc.horizon = cfg.horizon;
  return tc;
}

ThetaVector make_theta0(const ExperimentConfig& cfg) {
  return init_params(cfg.op.dims, cfg.init_std, mix_seed(cfg.seed, kThetaStream));
}

std::vector<Eigen::MatrixXd> make_train_bank(const ExperimentConfig& cfg) {
  return make_noise_bank(cfg.noise, 4, cfg.horizon, cfg.s_train,
                         mix_seed(cfg.seed, kTrainStream));
}

std::vector<Eigen::MatrixXd> make_test_bank(const ExperimentConfig& cfg) {
  return make_noise_bank(cfg.noise, 4, cfg.horizon, cfg.s_test,
                         mix_seed(cfg.seed, kTestStream));
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["plant"] = {{"mass", cfg.plant.mass},
                {"beta1", cfg.plant.beta1},
                {"beta2", cfg.plant.beta2},
                {"ts", cfg.plant.ts},
                {"target", vector_to_json(cfg.plant.target)},
                {"friction_sign", cfg.plant.friction_sign}};
  j["noise"] = {{"x0_mean", vector_to_json(cfg.noise.x0_mean)},
                {"x0_std", vector_to_json(cfg.noise.x0_std)},
                {"process_std", cfg.noise.process_std}};
  j["op"] = {{"n_in", cfg.op.dims.n_in},
             {"n_state", cfg.op.dims.n_state},
             {"n_out", cfg.op.dims.n_out},
             {"kappa", cfg.op.kappa},
             {"prescale", cfg.op.prescale}};
  j["init_std"] = cfg.init_std;
  j["loss"] = {{"q_weight", matrix_to_json(cfg.loss.q_weight)},
               {"r_weight", matrix_to_json(cfg.loss.r_weight)},
               {"alpha", cfg.loss.alpha},
               {"obstacle", vector_to_json(cfg.loss.obstacle)},
               {"radius", cfg.loss.radius},
               {"nu", cfg.loss.nu},
               {"margin", cfg.loss.margin}};
  j["cbf"] = {{"zeta", cfg.cbf.zeta}, {"bound", cfg.cbf.bound}};
  j["state_box"] = set_to_json(cfg.state_box);
  j["s_train"] = cfg.s_train;
  j["s_test"] = cfg.s_test;
  j["horizon"] = cfg.horizon;
  j["admm"] = {{"eps_abs", cfg.admm.eps_abs},
               {"eps_rel", cfg.admm.eps_rel},
               {"tau_inc", cfg.admm.tau_inc},
               {"tau_dec", cfg.admm.tau_dec},
               {"mu", cfg.admm.mu},
               {"rho0", cfg.admm.rho0},
               {"eta0", cfg.admm.eta0},
               {"gamma", cfg.admm.gamma},
               {"decay_interval", cfg.admm.decay_interval},
               {"eta_floor", cfg.admm.eta_floor},
               {"epochs_per_step", cfg.admm.epochs_per_step},
               {"max_iters", cfg.admm.max_iters},
               {"reset_moments_each_iter", cfg.admm.reset_moments_each_iter},
               {"warmstart_epochs", cfg.admm.warmstart_epochs},
               {"threads", cfg.admm.threads}};
  j["omegas"] = cfg.omegas;
  j["baseline_epochs"] = cfg.baseline_epochs;
  j["seed"] = cfg.seed;
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  const auto& p = j.at("plant");
  cfg.plant.mass = p.at("mass").get<double>();
  cfg.plant.beta1 = p.at("beta1").get<double>();
  cfg.plant.beta2 = p.at("beta2").get<double>();
  cfg.plant.ts = p.at("ts").get<double>();
  cfg.plant.target = vector_from_json(p.at("target"));
  cfg.plant.friction_sign = p.at("friction_sign").get<double>();
  const auto& nz = j.at("noise");
  cfg.noise.x0_mean = vector_from_json(nz.at("x0_mean"));
  cfg.noise.x0_std = vector_from_json(nz.at("x0_std"));
  cfg.noise.process_std = nz.at("process_std").get<double>();
  const auto& op = j.at("op");
  cfg.op.dims.n_in = op.at("n_in").get<int>();
  cfg.op.dims.n_state = op.at("n_state").get<int>();
  cfg.op.dims.n_out = op.at("n_out").get<int>();
  cfg.op.kappa = op.at("kappa").get<double>();
  cfg.op.prescale = op.at("prescale").get<double>();
  cfg.init_std = j.at("init_std").get<double>();
  const auto& lo = j.at("loss");
  cfg.loss.q_weight = matrix_from_json(lo.at("q_weight"));
  cfg.loss.r_weight = matrix_from_json(lo.at("r_weight"));
  cfg.loss.alpha = lo.at("alpha").get<double>();
  cfg.loss.obstacle = vector_from_json(lo.at("obstacle"));
  cfg.loss.radius = lo.at("radius").get<double>();
  cfg.loss.nu = lo.at("nu").get<double>();
  cfg.loss.margin = lo.at("margin").get<double>();
  cfg.cbf.zeta = j.at("cbf").at("zeta").get<double>();
  cfg.cbf.bound = j.at("cbf").at("bound").get<double>();
  cfg.state_box = std::get<Box>(set_from_json(j.at("state_box")));
  cfg.s_train = j.at("s_train").get<int>();
  cfg.s_test = j.at("s_test").get<int>();
  cfg.horizon = j.at("horizon").get<int>();
  const auto& a = j.at("admm");
  cfg.admm.eps_abs = a.at("eps_abs").get<double>();
  cfg.admm.eps_rel = a.at("eps_rel").get<double>();
  cfg.admm.tau_inc = a.at("tau_inc").get<double>();
  cfg.admm.tau_dec = a.at("tau_dec").get<double>();
  cfg.admm.mu = a.at("mu").get<double>();
  cfg.admm.rho0 = a.at("rho0").get<double>();
  cfg.admm.eta0 = a.at("eta0").get<double>();
  cfg.admm.gamma = a.at("gamma").get<double>();
  cfg.admm.decay_interval = a.at("decay_interval").get<int>();
  cfg.admm.eta_floor = a.at("eta_floor").get<double>();
  cfg.admm.epochs_per_step = a.at("epochs_per_step").get<int>();
  cfg.admm.max_iters = a.at("max_iters").get<int>();
  cfg.admm.reset_moments_each_iter =
      a.at("reset_moments_each_iter").get<bool>();
  cfg.admm.warmstart_epochs = a.at("warmstart_epochs").get<int>();
  cfg.admm.threads = a.at("threads").get<int>();
  cfg.omegas = j.at("omegas").get<std::vector<double>>();
  cfg.baseline_epochs = j.at("baseline_epochs").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot open " + path);
  out << config_to_json(cfg).dump(2) << "\n";
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: malformed JSON in " + path + ": " +
                             e.what());
  }
  return config_from_json(j);
}

TrainOutput train_admm_pb(const ExperimentConfig& cfg,
                          const std::string& checkpoint_dir) {
  PointMassPlant plant(cfg.plant);
  AdmmProblem prob;
  prob.plant = &plant;
  prob.op = cfg.op;
  prob.loss = cfg.loss;
  prob.constraint = make_constraint(cfg);
  prob.bank = make_train_bank(cfg);

  IterationHook hook;
  if (!checkpoint_dir.empty()) {
    std::filesystem::create_directories(checkpoint_dir);
    hook = [&cfg, checkpoint_dir](const AdmmState& st, const Residuals&,
                                  int j) {
      if ((j + 1) % 50 == 0) {
        save_checkpoint(checkpoint_dir + "/checkpoint_" + std::to_string(j + 1) +
                            ".bin",
                        {cfg.op, st.theta, cfg.seed});
      }
    };
  }

  AdmmResult res = run_admm_pb(prob, cfg.admm, make_theta0(cfg), hook);
  return {std::move(res.theta), std::move(res.iterates),
          std::move(res.epoch_trace), res.terminated};
}

TrainOutput train_cbf_baseline(const ExperimentConfig& cfg, double omega) {
  PointMassPlant plant(cfg.plant);
  AdmmProblem prob;
  prob.plant = &plant;
  prob.op = cfg.op;
  prob.loss = cfg.loss;
  prob.constraint = make_constraint(cfg);
  prob.bank = make_train_bank(cfg);

  CbfConfig cbf = cfg.cbf;
  cbf.omega = omega;

  TrainOutput out;
  out.theta = make_theta0(cfg);
  AdamState opt;
  opt.reset(out.theta.data.size());
  out.epoch_trace.reserve(cfg.baseline_epochs);
  for (int e = 0; e < cfg.baseline_epochs; ++e) {
    GradEval ge = eval_objective(prob, out.theta, ObjectiveKind::kCbfBaseline,
                                 nullptr, &cbf, cfg.admm.threads);
    adam_step(opt, out.theta.data, ge.grad, cfg.admm.eta0);
    // The baseline trace records the full objective including the penalty.
    out.epoch_trace.push_back(ge.objective);
  }
  return out;
}

IndicatorReport evaluate(const ThetaVector& theta, const ExperimentConfig& cfg,
                         const std::vector<double>& trace) {
  PointMassPlant plant(cfg.plant);
  std::vector<Eigen::MatrixXd> bank = make_test_bank(cfg);
  std::vector<Rollout> rollouts = rollout_bank(plant, cfg.op, theta, bank);

  IndicatorReport rep;
  double lq = 0.0, ca = 0.0;
  bool clear = true;
  for (const auto& r : rollouts) {
    lq += lq_loss(cfg.loss, r);
    ca += collision_loss(cfg.loss, r);
    for (int t = 0; t < r.x.cols(); ++t) {
      const double dist = (r.x.col(t).head(2) - cfg.loss.obstacle).norm();
      if (dist <= cfg.loss.radius) clear = false;
    }
  }
  const double inv = 1.0 / static_cast<double>(rollouts.size());
  rep.l_lq = lq * inv;
  rep.l_ca = ca * inv;
  rep.violation = violation_metric(rollouts, cfg.state_box);
  rep.v_times_lq = rep.violation * rep.l_lq;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    rep.delta_l += std::abs(trace[i] - trace[i - 1]);
  }
  rep.collision_free = clear;
  return rep;
}

nlohmann::json report_to_json(const IndicatorReport& rep,
                              const std::string& method,
                              std::optional<double> omega, std::uint64_t seed) {
  nlohmann::json j = {
      {"version", kVersion},
      {"method", method},
      {"seed", seed},
      {"delta_l_tilde", rep.delta_l},
      {"l_lq_bar", rep.l_lq},
      {"l_ca_bar", rep.l_ca},
      {"violation", rep.violation},
      {"v_times_l_lq", rep.v_times_lq},
      {"collision_free", rep.collision_free},
  };
  if (omega.has_value()) j["omega"] = *omega;
  return j;
}

IndicatorReport report_from_json(const nlohmann::json& j) {
  IndicatorReport rep;
  rep.delta_l = j.at("delta_l_tilde").get<double>();
  rep.l_lq = j.at("l_lq_bar").get<double>();
  rep.l_ca = j.at("l_ca_bar").get<double>();
  rep.violation = j.at("violation").get<double>();
  rep.v_times_lq = j.at("v_times_l_lq").get<double>();
  rep.collision_free = j.at("collision_free").get<bool>();
  return rep;
}

void write_comparison(const std::string& csv_path, const std::string& txt_path,
                      const std::vector<TableRow>& rows) {
  bool has_baseline = false;
  for (const auto& row : rows) has_baseline |= row.omega.has_value();
  if (rows.empty() || !has_baseline) {
    throw std::invalid_argument("compare: missing baseline reports");
  }

  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("compare: cannot open " + csv_path);
  csv << "method,omega,delta_l_tilde_x1e5,l_lq_bar,l_ca_bar,violation,"
         "v_times_l_lq,collision_free\n";
  for (const auto& row : rows) {
    csv << row.method << ",";
    if (row.omega.has_value()) csv << fmt17(*row.omega);
    csv << "," << fmt17(row.rep.delta_l * 1e5) << "," << fmt17(row.rep.l_lq)
        << "," << fmt17(row.rep.l_ca) << "," << fmt17(row.rep.violation) << ","
        << fmt17(row.rep.v_times_lq) << ","
        << (row.rep.collision_free ? 1 : 0) << "\n";
  }

  std::ofstream txt(txt_path);
  if (!txt) throw std::runtime_error("compare: cannot open " + txt_path);
  char line[256];
  std::snprintf(line, sizeof(line), "%-18s %12s %12s %12s %12s %14s %10s\n",
                "method", "dL~ x1e5", "L_lq", "L_ca", "V", "V*L_lq",
                "coll-free");
  txt << line;
  for (const auto& row : rows) {
    std::string name = row.method;
    if (row.omega.has_value()) {
      std::snprintf(line, sizeof(line), "%s w=%g", row.method.c_str(),
                    *row.omega);
      name = line;
    }
    std::snprintf(line, sizeof(line),
                  "%-18s %12.4g %12.4g %12.4g %12.4g %14.4g %10s\n",
                  name.c_str(), row.rep.delta_l * 1e5, row.rep.l_lq,
                  row.rep.l_ca, row.rep.violation, row.rep.v_times_lq,
                  row.rep.collision_free ? "yes" : "no");
    txt << line;
  }
}

void write_iterates_csv(const std::string& path,
                        const std::vector<IterRecord>& iterates) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("iterates: cannot open " + path);
  out << "j,norm_r,norm_delta,eps_r,eps_delta,rho,eta,train_loss\n";
  for (const auto& it : iterates) {
    out << it.j << "," << fmt17(it.norm_r) << "," << fmt17(it.norm_delta)
        << "," << fmt17(it.eps_r) << "," << fmt17(it.eps_delta) << ","
        << fmt17(it.rho) << "," << fmt17(it.eta) << ","
        << fmt17(it.train_loss) << "\n";
  }
}

void write_trace_csv(const std::string& path,
                     const std::vector<double>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("trace: cannot open " + path);
  out << "epoch,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out << i << "," << fmt17(trace[i]) << "\n";
  }
}

std::vector<double> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("trace: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("trace: empty file " + path);
  }
  std::vector<double> trace;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    trace.push_back(std::stod(line.substr(comma + 1)));
  }
  return trace;
}

void write_eval_trajectories(const std::string& path, const ThetaVector& theta,
                             const ExperimentConfig& cfg) {
  PointMassPlant plant(cfg.plant);
  std::vector<Eigen::MatrixXd> bank = make_test_bank(cfg);
  std::vector<Rollout> rollouts = rollout_bank(plant, cfg.op, theta, bank);
  write_trajectories_csv(path, rollouts, bank);
}

}  // namespace admmpb
