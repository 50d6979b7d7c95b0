#ifndef ADMMPB_CONSTRAINTS_HPP
#define ADMMPB_CONSTRAINTS_HPP

#include <Eigen/Dense>
#include <json.hpp>
#include <utility>
#include <variant>
#include <vector>

namespace admmpb {

/** Whole space (no constraint). */
struct AllSpace {
  int dim = 0;
};

/** Axis-aligned box; +-inf entries mean unbounded on that side. */
struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

/** Euclidean ball. */
struct Ball {
  Eigen::VectorXd center;
  double radius = 0.0;
};

using ConvexSet = std::variant<AllSpace, Box, Ball>;

int set_dim(const ConvexSet& set);

/** Euclidean projection onto the set. Box projection is idempotent bit-exact. */
Eigen::VectorXd project(const ConvexSet& set, const Eigen::VectorXd& v);

/** Per-timestep state/input sets applied over a horizon of T+1 columns. */
struct TrajectoryConstraint {
  ConvexSet state_set;
  ConvexSet input_set;
  int horizon = 0;  // T; trajectories carry T+1 columns
};

/** Column-wise projection of shifted trajectories (x + lambda, u + lambda). */
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> project_trajectory(
    const TrajectoryConstraint& tc, const Eigen::MatrixXd& x_shift,
    const Eigen::MatrixXd& u_shift);

struct Rollout;

/**
 * Sum over scenarios, steps, and coordinates of the squared excess beyond the
 * finite bounds of `state_box` (strict inequalities; points on the boundary
 * are feasible). Zero iff every rollout satisfies the box at every step.
 */
double violation_metric(const std::vector<Rollout>& rollouts,
                        const Box& state_box);

/** JSON wire format: arrays of numbers with null = unbounded, or "all". */
nlohmann::json set_to_json(const ConvexSet& set);
ConvexSet set_from_json(const nlohmann::json& j);

}  // namespace admmpb

#endif
