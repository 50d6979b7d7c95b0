#include "admmpb/constraints.hpp"

#include <cmath>
#include <limits>
#include <json.hpp>
#include <stdexcept>

#include "admmpb/plant.hpp"

namespace admmpb {

int set_dim(const ConvexSet& set) {
  if (const auto* all = std::get_if<AllSpace>(&set)) return all->dim;
  if (const auto* box = std::get_if<Box>(&set))
    return static_cast<int>(box->lower.size());
  return static_cast<int>(std::get<Ball>(set).center.size());
}

Eigen::VectorXd project(const ConvexSet& set, const Eigen::VectorXd& v) {
  if (std::holds_alternative<AllSpace>(set)) return v;
  if (const auto* box = std::get_if<Box>(&set)) {
    if (box->lower.size() != v.size() || box->upper.size() != v.size()) {
      throw std::invalid_argument("project: box dimension mismatch");
    }
    return v.cwiseMax(box->lower).cwiseMin(box->upper);
  }
  const Ball& ball = std::get<Ball>(set);
  if (ball.center.size() != v.size()) {
    throw std::invalid_argument("project: ball dimension mismatch");
  }
  Eigen::VectorXd d = v - ball.center;
  const double dist2 = d.squaredNorm();
  if (dist2 <= ball.radius * ball.radius) return v;
  const double scale = ball.radius / std::sqrt(dist2);
  return ball.center + scale * d;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> project_trajectory(
    const TrajectoryConstraint& tc, const Eigen::MatrixXd& x_shift,
    const Eigen::MatrixXd& u_shift) {
  if (x_shift.cols() != tc.horizon + 1 || u_shift.cols() != tc.horizon + 1) {
    throw std::invalid_argument(
        "project_trajectory: expected T+1 columns, got " +
        std::to_string(x_shift.cols()) + " and " +
        std::to_string(u_shift.cols()));
  }
  Eigen::MatrixXd xp(x_shift.rows(), x_shift.cols());
  Eigen::MatrixXd up(u_shift.rows(), u_shift.cols());
  for (int t = 0; t <= tc.horizon; ++t) {
    xp.col(t) = project(tc.state_set, x_shift.col(t));
    up.col(t) = project(tc.input_set, u_shift.col(t));
  }
  return {std::move(xp), std::move(up)};
}

double violation_metric(const std::vector<Rollout>& rollouts,
                        const Box& state_box) {
  double total = 0.0;
  for (const auto& r : rollouts) {
    if (r.x.rows() != state_box.lower.size()) {
      throw std::invalid_argument("violation_metric: box dimension mismatch");
    }
    for (int t = 0; t < r.x.cols(); ++t) {
      for (int i = 0; i < r.x.rows(); ++i) {
        const double v = r.x(i, t);
        if (v < state_box.lower[i]) {
          const double e = state_box.lower[i] - v;
          total += e * e;
        } else if (v > state_box.upper[i]) {
          const double e = v - state_box.upper[i];
          total += e * e;
        }
      }
    }
  }
  return total;
}

namespace {

nlohmann::json bound_array(const Eigen::VectorXd& v, double unbounded_sign) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isinf(v[i]) && v[i] * unbounded_sign > 0) {
      arr.push_back(nullptr);
    } else {
      arr.push_back(v[i]);
    }
  }
  return arr;
}

Eigen::VectorXd parse_bounds(const nlohmann::json& arr, double fill) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    v[i] = arr[i].is_null() ? fill : arr[i].get<double>();
  }
  return v;
}

}  // namespace

nlohmann::json set_to_json(const ConvexSet& set) {
  if (const auto* all = std::get_if<AllSpace>(&set)) {
    return {{"type", "all"}, {"dim", all->dim}};
  }
  if (const auto* box = std::get_if<Box>(&set)) {
    return {{"type", "box"},
            {"lower", bound_array(box->lower, -1.0)},
            {"upper", bound_array(box->upper, 1.0)}};
  }
  const Ball& ball = std::get<Ball>(set);
  nlohmann::json center = nlohmann::json::array();
  for (Eigen::Index i = 0; i < ball.center.size(); ++i)
    center.push_back(ball.center[i]);
  return {{"type", "ball"}, {"center", center}, {"radius", ball.radius}};
}

ConvexSet set_from_json(const nlohmann::json& j) {
  const double inf = std::numeric_limits<double>::infinity();
  const std::string type = j.at("type").get<std::string>();
  if (type == "all") return AllSpace{j.at("dim").get<int>()};
  if (type == "box") {
    Box box;
    box.lower = parse_bounds(j.at("lower"), -inf);
    box.upper = parse_bounds(j.at("upper"), inf);
    if (box.lower.size() != box.upper.size()) {
      throw std::invalid_argument("constraint json: bound lengths differ");
    }
    for (Eigen::Index i = 0; i < box.lower.size(); ++i) {
      if (box.lower[i] > box.upper[i]) {
        throw std::invalid_argument("constraint json: empty box interval");
      }
    }
    return box;
  }
  if (type == "ball") {
    Ball ball;
    const auto& center = j.at("center");
    ball.center.resize(center.size());
    for (std::size_t i = 0; i < center.size(); ++i)
      ball.center[i] = center[i].get<double>();
    ball.radius = j.at("radius").get<double>();
    if (ball.radius < 0) {
      throw std::invalid_argument("constraint json: negative radius");
    }
    return ball;
  }
  throw std::invalid_argument("constraint json: unknown set type '" + type +
                              "'");
}

}  // namespace admmpb
