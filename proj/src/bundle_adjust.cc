#include "vector/bundle_adjust.h"

#include <cmath>
#include <limits>

#include "vector/errors.h"

namespace vec {
namespace {

constexpr double kMaxLambda = 1e12;

Eigen::Matrix3d Skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

double StateNorm(const BAProblem& problem, const BAState& state) {
  double sum = 0.0;
  for (size_t c = 0; c < state.poses.size(); ++c) {
    if (problem.camera_param_index[c] < 0) continue;
    sum += state.poses[c].center.squaredNorm() + 1.0;  // unit quaternion
  }
  for (const auto& point : state.points) sum += point.squaredNorm();
  return std::sqrt(sum);
}

// Cost of a candidate state; infinity when a point falls behind a camera.
double CandidateCost(const BAProblem& problem, const BAState& state) {
  try {
    return EvaluateResiduals(problem, state).squaredNorm();
  } catch (const CheiralityViolation&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

void BAConfig::Check() const {
  if (max_iterations < 0) throw ValueError("max_iterations must be >= 0");
  if (!(initial_lambda > 0.0)) throw ValueError("initial_lambda must be > 0");
  if (!(lambda_up > 1.0) || !(lambda_down > 1.0)) {
    throw ValueError("lambda_up and lambda_down must be > 1");
  }
  if (!(gradient_tol > 0.0) || !(relative_cost_tol > 0.0) ||
      !(parameter_tol > 0.0)) {
    throw ValueError("tolerances must be > 0");
  }
}

std::string_view ToString(Termination termination) {
  switch (termination) {
    case Termination::kGradient: return "gradient";
    case Termination::kRelativeCost: return "relative_cost";
    case Termination::kSmallStep: return "small_step";
    case Termination::kMaxIterations: return "max_iterations";
  }
  return "max_iterations";
}

Termination TerminationFromString(std::string_view text) {
  if (text == "gradient") return Termination::kGradient;
  if (text == "relative_cost") return Termination::kRelativeCost;
  if (text == "small_step") return Termination::kSmallStep;
  if (text == "max_iterations") return Termination::kMaxIterations;
  throw ValueError("unknown termination reason '" + std::string(text) + "'");
}

double BAResult::InitialRms() const {
  if (residuals_initial.empty()) return 0.0;
  return std::sqrt(InitialCost() / static_cast<double>(residuals_initial.size()));
}

double BAResult::FinalRms() const {
  if (residuals_final.empty()) return 0.0;
  return std::sqrt(FinalCost() / static_cast<double>(residuals_final.size()));
}

BAProblem BuildProblem(const Dataset& dataset, bool fix_first_camera) {
  BAProblem problem;
  const CameraLookup lookup(dataset.cameras);
  std::vector<bool> observed(dataset.cameras.size(), false);
  for (size_t p = 0; p < dataset.tracks.size(); ++p) {
    for (const auto& obs : dataset.tracks[p].observations) {
      const auto camera = lookup.IndexOf(obs.camera_id);
      if (!camera) {
        throw UnknownCameraRef("track '" + dataset.tracks[p].id +
                               "' references unknown camera '" +
                               obs.camera_id + "'");
      }
      observed[*camera] = true;
      problem.observations.push_back(
          {static_cast<int>(*camera), static_cast<int>(p), obs.pixel});
    }
  }
  for (size_t c = 0; c < dataset.cameras.size(); ++c) {
    problem.intrinsics.push_back(dataset.cameras[c].intrinsics);
    const bool fixed = (fix_first_camera && c == 0) || !observed[c];
    problem.camera_param_index.push_back(fixed ? -1
                                               : problem.num_free_cameras++);
  }
  problem.num_points = static_cast<int>(dataset.tracks.size());
  return problem;
}

BAState InitialState(const Dataset& dataset) {
  BAState state;
  for (const auto& camera : dataset.cameras) {
    state.poses.push_back(camera.pose_initial);
  }
  for (const auto& track : dataset.tracks) {
    state.points.push_back(track.point_initial);
  }
  return state;
}

Eigen::VectorXd EvaluateResiduals(const BAProblem& problem,
                                  const BAState& state) {
  Eigen::VectorXd residuals(problem.NumResiduals());
  for (size_t i = 0; i < problem.observations.size(); ++i) {
    const auto& obs = problem.observations[i];
    residuals.segment<2>(2 * i) =
        Project(problem.intrinsics[obs.camera], state.poses[obs.camera],
                state.points[obs.point]) -
        obs.pixel;
  }
  return residuals;
}

SparseJacobian ComputeJacobian(const BAProblem& problem, const BAState& state) {
  SparseJacobian jacobian;
  jacobian.num_free_cameras = problem.num_free_cameras;
  jacobian.num_points = problem.num_points;
  jacobian.blocks.resize(problem.observations.size());
  for (size_t i = 0; i < problem.observations.size(); ++i) {
    const auto& obs = problem.observations[i];
    const Intrinsics& k = problem.intrinsics[obs.camera];
    const Pose& pose = state.poses[obs.camera];
    const Eigen::Matrix3d rotation = pose.rotation.toRotationMatrix();
    const Eigen::Vector3d p = rotation * (state.points[obs.point] - pose.center);
    if (!(p.z() > kMinDepth)) {
      throw CheiralityViolation("observation " + std::to_string(i) +
                                " is behind its camera");
    }
    const double inv_z = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> d_projection;
    d_projection << k.fx * inv_z, 0.0, -k.fx * p.x() * inv_z * inv_z,
                    0.0, k.fy * inv_z, -k.fy * p.y() * inv_z * inv_z;

    JacobianBlock& block = jacobian.blocks[i];
    block.point = obs.point;
    block.d_point = d_projection * rotation;
    block.camera = problem.camera_param_index[obs.camera];
    if (block.camera >= 0) {
      // Left-multiplied rotation increment: d(R x)/d(omega) = -[R x]_x.
      block.d_camera.leftCols<3>() = -d_projection * Skew(p);
      block.d_camera.rightCols<3>() = -block.d_point;
    }
  }
  return jacobian;
}

Eigen::MatrixXd SparseJacobian::ToDense() const {
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(2 * blocks.size(), NumParameters());
  const int point_offset = 6 * num_free_cameras;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const auto& block = blocks[i];
    if (block.camera >= 0) {
      dense.block<2, 6>(2 * i, 6 * block.camera) = block.d_camera;
    }
    dense.block<2, 3>(2 * i, point_offset + 3 * block.point) = block.d_point;
  }
  return dense;
}

BAState ApplyStep(const BAProblem& problem, const BAState& state,
                  const Eigen::VectorXd& step) {
  BAState next = state;
  for (size_t c = 0; c < state.poses.size(); ++c) {
    const int index = problem.camera_param_index[c];
    if (index < 0) continue;
    const Eigen::Vector3d omega = step.segment<3>(6 * index);
    next.poses[c].rotation =
        (QuaternionFromRotationVector(omega) * state.poses[c].rotation).normalized();
    next.poses[c].center += step.segment<3>(6 * index + 3);
  }
  const int offset = 6 * problem.num_free_cameras;
  for (size_t p = 0; p < state.points.size(); ++p) {
    next.points[p] += step.segment<3>(offset + 3 * p);
  }
  return next;
}

BAResult RunBundleAdjustment(const Dataset& dataset, const BAConfig& config,
                             const IterationCallback& callback) {
  config.Check();
  if (dataset.NumObservations() == 0) {
    throw EmptyProblem("dataset has no observations");
  }
  for (const auto& track : dataset.tracks) {
    if (!track.point_initial.allFinite()) {
      throw ValueError("track '" + track.id + "' has no finite initial point");
    }
  }

  const BAProblem problem = BuildProblem(dataset, config.fix_first_camera);
  BAState state = InitialState(dataset);
  Eigen::VectorXd residuals = EvaluateResiduals(problem, state);
  double cost = residuals.squaredNorm();

  BAResult result;
  result.cost_trace.push_back(cost);
  double lambda = config.initial_lambda;
  bool done = false;

  for (int iteration = 1; iteration <= config.max_iterations && !done; ++iteration) {
    const SparseJacobian jacobian = ComputeJacobian(problem, state);
    double gradient_max = 0.0;
    {
      // Max-norm of J^T r without forming the dense product.
      Eigen::VectorXd gradient = Eigen::VectorXd::Zero(problem.NumParameters());
      const int offset = 6 * problem.num_free_cameras;
      for (size_t i = 0; i < jacobian.blocks.size(); ++i) {
        const auto& block = jacobian.blocks[i];
        const Eigen::Vector2d r = residuals.segment<2>(2 * i);
        if (block.camera >= 0) {
          gradient.segment<6>(6 * block.camera) += block.d_camera.transpose() * r;
        }
        gradient.segment<3>(offset + 3 * block.point) += block.d_point.transpose() * r;
      }
      gradient_max = gradient.size() > 0 ? gradient.cwiseAbs().maxCoeff() : 0.0;
    }
    if (gradient_max <= config.gradient_tol) {
      result.termination_reason = Termination::kGradient;
      result.converged = true;
      break;
    }

    Eigen::VectorXd step;
    while (true) {
      try {
        step = SolveNormalEquations(jacobian, residuals, lambda);
        break;
      } catch (const SingularSystem&) {
        lambda *= config.lambda_up;
        if (lambda > kMaxLambda) {
          throw NumericalFailure(
              "normal equations are singular even with lambda = 1e12");
        }
      }
    }
    result.iterations = iteration;

    const double state_norm = StateNorm(problem, state);
    if (step.norm() <= config.parameter_tol * (state_norm + config.parameter_tol)) {
      result.cost_trace.push_back(cost);
      result.termination_reason = Termination::kSmallStep;
      result.converged = true;
      done = true;
    } else {
      BAState candidate = ApplyStep(problem, state, step);
      const double candidate_cost = CandidateCost(problem, candidate);
      if (candidate_cost < cost) {
        const double relative = (cost - candidate_cost) / cost;
        state = std::move(candidate);
        residuals = EvaluateResiduals(problem, state);
        cost = candidate_cost;
        lambda = std::max(lambda / config.lambda_down, 1e-16);
        result.cost_trace.push_back(cost);
        if (relative <= config.relative_cost_tol) {
          result.termination_reason = Termination::kRelativeCost;
          result.converged = true;
          done = true;
        }
      } else {
        lambda = std::min(lambda * config.lambda_up, 1e16);
        result.cost_trace.push_back(cost);
      }
    }

    if (callback && !callback(iteration, cost)) {
      throw Cancelled("bundle adjustment cancelled at iteration " +
                      std::to_string(iteration));
    }
    if (!done && iteration == config.max_iterations) {
      result.termination_reason = Termination::kMaxIterations;
      result.converged = false;
    }
  }
  if (config.max_iterations == 0) {
    result.termination_reason = Termination::kMaxIterations;
  }

  for (const auto& camera : dataset.cameras) result.camera_ids.push_back(camera.id);
  for (const auto& track : dataset.tracks) result.track_ids.push_back(track.id);
  result.poses_final = state.poses;
  result.points_final = state.points;

  result.residuals_initial =
      ComputeResiduals(dataset.cameras, dataset.tracks, ResidualKind::kInitial);
  Dataset final_dataset;
  final_dataset.cameras = dataset.cameras;
  final_dataset.tracks = dataset.tracks;
  ApplyResult(result, &final_dataset);
  result.residuals_final = ComputeResiduals(final_dataset.cameras,
                                            final_dataset.tracks,
                                            ResidualKind::kFinal);
  return result;
}

void ApplyResult(const BAResult& result, Dataset* dataset) {
  const CameraLookup lookup(dataset->cameras);
  for (size_t i = 0; i < result.camera_ids.size(); ++i) {
    if (auto index = lookup.IndexOf(result.camera_ids[i])) {
      dataset->cameras[*index].pose_final = result.poses_final[i];
    }
  }
  std::unordered_map<std::string_view, size_t> tracks;
  for (size_t i = 0; i < dataset->tracks.size(); ++i) {
    tracks.emplace(dataset->tracks[i].id, i);
  }
  for (size_t i = 0; i < result.track_ids.size(); ++i) {
    auto it = tracks.find(result.track_ids[i]);
    if (it != tracks.end()) {
      dataset->tracks[it->second].point_final = result.points_final[i];
    }
  }
}

}  // namespace vec
