#include <CLI11.hpp>
#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "admmpb/bench.hpp"
#include "admmpb/rng.hpp"
#include "admmpb/version.hpp"

namespace fs = std::filesystem;
using namespace admmpb;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool desk = false;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Experiment config JSON");
  cmd->add_option("--out", opts.out_dir, "Output directory");
  cmd->add_option("--seed", opts.seed, "Master seed override");
  cmd->add_flag("--desk-scale", opts.desk, "Use the reduced-size benchmark");
  cmd->add_option("--threads", opts.threads,
                  "Scenario evaluation threads (default: all cores)");
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg;
  if (!opts.config_path.empty()) cfg = load_config(opts.config_path);
  if (opts.desk) cfg = desk_scale(cfg);
  if (opts.seed.has_value()) cfg.seed = *opts.seed;
  cfg.admm.threads = opts.threads > 0
                         ? opts.threads
                         : static_cast<int>(std::thread::hardware_concurrency());
  if (cfg.admm.threads < 1) cfg.admm.threads = 1;
  return cfg;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
}

std::string omega_tag(double omega) {
  char buf[32];
  if (omega == std::floor(omega) && std::abs(omega) < 1e15) {
    std::snprintf(buf, sizeof(buf), "%.0f", omega);
  } else {
    std::snprintf(buf, sizeof(buf), "%g", omega);
  }
  return buf;
}

int cmd_train_admm(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve_config(opts);
  const std::string dir = opts.out_dir + "/admm";
  fs::create_directories(dir);
  save_config(dir + "/config.json", cfg);

  TrainOutput res = train_admm_pb(cfg, dir);
  save_checkpoint(dir + "/checkpoint.bin", {cfg.op, res.theta, cfg.seed});
  write_iterates_csv(dir + "/iterates.csv", res.iterates);
  write_trace_csv(dir + "/epoch_trace.csv", res.epoch_trace);
  IndicatorReport rep = evaluate(res.theta, cfg, res.epoch_trace);
  write_json(dir + "/indicators.json",
             report_to_json(rep, "admm_pb", std::nullopt, cfg.seed));
  write_eval_trajectories(dir + "/trajectories.csv", res.theta, cfg);
  std::printf("train-admm: %zu iterations, terminated=%d, V=%.6g, L_lq=%.6g\n",
              res.iterates.size(), res.terminated ? 1 : 0, rep.violation,
              rep.l_lq);
  return 0;
}

int cmd_train_baseline(const CommonOpts& opts, double omega) {
  ExperimentConfig cfg = resolve_config(opts);
  const std::string dir = opts.out_dir + "/cbf_omega_" + omega_tag(omega);
  fs::create_directories(dir);
  save_config(dir + "/config.json", cfg);

  TrainOutput res = train_cbf_baseline(cfg, omega);
  save_checkpoint(dir + "/checkpoint.bin", {cfg.op, res.theta, cfg.seed});
  write_trace_csv(dir + "/epoch_trace.csv", res.epoch_trace);
  IndicatorReport rep = evaluate(res.theta, cfg, res.epoch_trace);
  write_json(dir + "/indicators.json",
             report_to_json(rep, "cbf", omega, cfg.seed));
  write_eval_trajectories(dir + "/trajectories.csv", res.theta, cfg);
  std::printf("train-baseline: omega=%s, %d epochs, V=%.6g, L_lq=%.6g\n",
              omega_tag(omega).c_str(), cfg.baseline_epochs, rep.violation,
              rep.l_lq);
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path,
             const std::string& trace_path) {
  ExperimentConfig cfg = resolve_config(opts);
  Checkpoint ck = load_checkpoint(checkpoint_path);
  if (ck.cfg.dims.n_in != cfg.op.dims.n_in ||
      ck.cfg.dims.n_state != cfg.op.dims.n_state ||
      ck.cfg.dims.n_out != cfg.op.dims.n_out) {
    throw std::runtime_error("eval: checkpoint dims do not match config");
  }
  cfg.op = ck.cfg;  // the stored operator configuration is authoritative
  std::vector<double> trace;
  if (!trace_path.empty()) trace = read_trace_csv(trace_path);

  const std::string dir = opts.out_dir + "/eval";
  fs::create_directories(dir);
  IndicatorReport rep = evaluate(ck.theta, cfg, trace);
  write_json(dir + "/indicators.json",
             report_to_json(rep, "eval", std::nullopt, cfg.seed));
  write_eval_trajectories(dir + "/trajectories.csv", ck.theta, cfg);
  std::printf("eval: V=%.6g, L_lq=%.6g, L_ca=%.6g, collision_free=%d\n",
              rep.violation, rep.l_lq, rep.l_ca, rep.collision_free ? 1 : 0);
  return 0;
}

int cmd_compare(const CommonOpts& opts) {
  std::vector<TableRow> rows;
  const std::string admm_path = opts.out_dir + "/admm/indicators.json";
  if (!fs::exists(admm_path)) {
    throw std::runtime_error("compare: missing report " + admm_path);
  }
  nlohmann::json j;
  {
    std::ifstream in(admm_path);
    in >> j;
  }
  rows.push_back({"admm_pb", std::nullopt, report_from_json(j)});

  std::vector<std::pair<double, TableRow>> baselines;
  for (const auto& entry : fs::directory_iterator(opts.out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("cbf_omega_", 0) != 0) continue;
    const std::string path = entry.path().string() + "/indicators.json";
    if (!fs::exists(path)) continue;
    std::ifstream in(path);
    nlohmann::json bj;
    in >> bj;
    const double omega = bj.at("omega").get<double>();
    baselines.push_back({omega, {"cbf", omega, report_from_json(bj)}});
  }
  if (baselines.empty()) {
    throw std::runtime_error("compare: no baseline reports under " +
                             opts.out_dir);
  }
  std::sort(baselines.begin(), baselines.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [omega, row] : baselines) rows.push_back(std::move(row));

  write_comparison(opts.out_dir + "/table3.csv", opts.out_dir + "/table3.txt",
                   rows);
  std::ifstream txt(opts.out_dir + "/table3.txt");
  std::cout << txt.rdbuf();
  return 0;
}

int cmd_selftest() {
  int failures = 0;
  auto report = [&](const char* name, bool ok, const std::string& detail) {
    std::printf("%-34s %s%s%s\n", name, ok ? "PASS" : "FAIL",
                detail.empty() ? "" : "  ", detail.c_str());
    if (!ok) ++failures;
  };

  // Reverse-mode gradient vs central differences on a small training loss.
  {
    ExperimentConfig cfg = desk_scale(ExperimentConfig{});
    cfg.s_train = 1;
    cfg.horizon = 8;
    cfg.admm.threads = 1;
    PointMassPlant plant(cfg.plant);
    AdmmProblem prob{&plant, cfg.op, cfg.loss, make_constraint(cfg),
                     make_train_bank(cfg)};
    ThetaVector theta = make_theta0(cfg);
    GradEval ge = eval_objective(prob, theta, ObjectiveKind::kBoostOnly,
                                 nullptr, nullptr, 1);
    double worst = 0.0;
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < theta.data.size(); ++i) {
      ThetaVector tp = theta, tm = theta;
      tp.data[i] += h;
      tm.data[i] -= h;
      const double fp = eval_objective(prob, tp, ObjectiveKind::kBoostOnly,
                                       nullptr, nullptr, 1)
                            .objective;
      const double fm = eval_objective(prob, tm, ObjectiveKind::kBoostOnly,
                                       nullptr, nullptr, 1)
                            .objective;
      const double fd = (fp - fm) / (2.0 * h);
      const double denom = std::max(std::abs(fd), std::abs(ge.grad[i]));
      if (denom > 1e-6) {
        worst = std::max(worst, std::abs(fd - ge.grad[i]) / denom);
      }
    }
    char detail[64];
    std::snprintf(detail, sizeof(detail), "max rel err %.3g", worst);
    report("gradient check", worst < 1e-4, detail);
  }

  // Projection vs per-coordinate grid search.
  {
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> ud(-2.0, 2.0);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::VectorXd lower(3), upper(3), v(3);
      for (int i = 0; i < 3; ++i) {
        const double a = ud(gen), b = ud(gen);
        lower[i] = std::min(a, b);
        upper[i] = std::max(a, b);
        v[i] = 2.0 * ud(gen);
      }
      Box box{lower, upper};
      Eigen::VectorXd p = project(box, v);
      for (int i = 0; i < 3; ++i) {
        double best = lower[i], best_cost = std::abs(lower[i] - v[i]);
        for (double g = lower[i]; g <= upper[i] + 1e-12; g += 1e-3) {
          const double cost = std::abs(g - v[i]);
          if (cost < best_cost) {
            best_cost = cost;
            best = g;
          }
        }
        worst = std::max(worst, std::abs(best - p[i]));
      }
    }
    char detail[64];
    std::snprintf(detail, sizeof(detail), "max deviation %.3g", worst);
    report("projection vs grid oracle", worst < 2e-3, detail);
  }

  // Step-size schedule spot values.
  {
    AdmmConfig cfg;
    const bool ok = update_learning_rate(0, cfg) == 1e-3 &&
                    update_learning_rate(49, cfg) == 1e-3 &&
                    update_learning_rate(50, cfg) == 5e-4 &&
                    update_learning_rate(500, cfg) == 1e-6;
    report("step-size schedule", ok, "");
  }

  // Contraction of the normalized state matrix for adversarial parameters.
  {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> ud(-1e3, 1e3);
    OperatorConfig op;
    bool ok = true;
    for (int trial = 0; trial < 50 && ok; ++trial) {
      ThetaVector th(op.dims);
      for (Eigen::Index i = 0; i < th.data.size(); ++i) th.data[i] = ud(gen);
      OperatorMatrices m = materialize(op, th);
      ok = sigma_hat(m.a) <= op.kappa + 1e-12;
    }
    report("state-matrix contraction", ok, "");
  }

  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stability-preserving constrained boosting benchmark"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonOpts train_opts, base_opts, eval_opts, cmp_opts;
  double omega = 1.0;
  std::string checkpoint_path, trace_path;

  CLI::App* train = app.add_subcommand("train-admm", "Constrained training");
  add_common(train, train_opts);

  CLI::App* base = app.add_subcommand("train-baseline", "Penalty baseline");
  add_common(base, base_opts);
  base->add_option("--omega", omega, "Penalty weight")->required();

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, eval_opts);
  ev->add_option("--checkpoint", checkpoint_path, "Checkpoint file")
      ->required();
  ev->add_option("--trace", trace_path, "Training trace CSV (for delta-L)");

  CLI::App* cmp = app.add_subcommand("compare", "Tabulate finished runs");
  add_common(cmp, cmp_opts);

  app.add_subcommand("selftest", "Built-in verification checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return cmd_train_admm(train_opts);
    if (base->parsed()) return cmd_train_baseline(base_opts, omega);
    if (ev->parsed()) return cmd_eval(eval_opts, checkpoint_path, trace_path);
    if (cmp->parsed()) return cmd_compare(cmp_opts);
    return cmd_selftest();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
