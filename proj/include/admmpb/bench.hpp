#ifndef ADMMPB_BENCH_HPP
#define ADMMPB_BENCH_HPP

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "admmpb/admm.hpp"

namespace admmpb {

/**
 * Everything needed to reproduce one benchmark run. Defaults reproduce the
 * full-scale point-mass experiment; desk_scale() shrinks it to a laptop-sized
 * configuration with the same structure.
 */
struct ExperimentConfig {
  PointMassParams plant;
  NoiseModel noise;
  OperatorConfig op;      // dims 4/4/2, kappa 0.95, prescale 1
  double init_std = 0.1;  // parameter init scale
  BoostLossConfig loss;
  CbfConfig cbf;          // zeta and bound; omega is chosen per baseline run
  Box state_box;          // feasible set; +-inf on unconstrained coordinates
  int s_train = 8;
  int s_test = 5;
  int horizon = 249;  // T; trajectories have T+1 steps
  AdmmConfig admm;
  std::vector<double> omegas = {1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6};
  int baseline_epochs = 6900;
  std::uint64_t seed = 1;

  ExperimentConfig();
};

/** Shrink to the quick benchmark: 4 scenarios, T=100, 150 outer iterations. */
ExperimentConfig desk_scale(ExperimentConfig cfg);

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
void save_config(const std::string& path, const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

/** Per-timestep constraint set implied by the config (inputs unconstrained). */
TrajectoryConstraint make_constraint(const ExperimentConfig& cfg);

/** Initial parameters and noise banks, derived deterministically from seed. */
ThetaVector make_theta0(const ExperimentConfig& cfg);
std::vector<Eigen::MatrixXd> make_train_bank(const ExperimentConfig& cfg);
std::vector<Eigen::MatrixXd> make_test_bank(const ExperimentConfig& cfg);

struct TrainOutput {
  ThetaVector theta;
  std::vector<IterRecord> iterates;   // empty for the baseline
  std::vector<double> epoch_trace;    // per-epoch training loss
  bool terminated = false;
};

/** Constrained training via the full splitting loop. */
TrainOutput train_admm_pb(const ExperimentConfig& cfg,
                          const std::string& checkpoint_dir = "");

/** Penalty baseline: fixed step size, plain full-batch training. */
TrainOutput train_cbf_baseline(const ExperimentConfig& cfg, double omega);

/**
 * Final comparison indicators over the held-out scenario bank. delta_l is the
 * total variation of the supplied per-epoch training trace.
 */
struct IndicatorReport {
  double delta_l = 0.0;     // training-loss total variation
  double l_lq = 0.0;        // mean quadratic cost over test scenarios
  double l_ca = 0.0;        // mean collision loss over test scenarios
  double violation = 0.0;   // squared-excess sum over test scenarios
  double v_times_lq = 0.0;  // violation * l_lq
  bool collision_free = false;
};

IndicatorReport evaluate(const ThetaVector& theta, const ExperimentConfig& cfg,
                         const std::vector<double>& trace);

nlohmann::json report_to_json(const IndicatorReport& rep,
                              const std::string& method,
                              std::optional<double> omega, std::uint64_t seed);
IndicatorReport report_from_json(const nlohmann::json& j);

struct TableRow {
  std::string method;
  std::optional<double> omega;
  IndicatorReport rep;
};

/**
 * Side-by-side comparison: CSV plus an aligned text table with the
 * delta-L column scaled by 1e5 as in the reference results.
 * Throws if no baseline rows are supplied.
 */
void write_comparison(const std::string& csv_path, const std::string& txt_path,
                      const std::vector<TableRow>& rows);

void write_iterates_csv(const std::string& path,
                        const std::vector<IterRecord>& iterates);
void write_trace_csv(const std::string& path, const std::vector<double>& trace);
std::vector<double> read_trace_csv(const std::string& path);

/** Writes test-bank trajectories for a trained controller. */
void write_eval_trajectories(const std::string& path, const ThetaVector& theta,
                             const ExperimentConfig& cfg);

}  // namespace admmpb

#endif
