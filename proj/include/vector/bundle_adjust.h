#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vector/dataset.h"
#include "vector/geometry.h"

namespace vec {

struct BAConfig {
  int max_iterations = 100;
  double initial_lambda = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  // Max-norm of J^T r.
  double gradient_tol = 1e-10;
  // (cost_before - cost_after) / cost_before for an accepted step.
  double relative_cost_tol = 1e-12;
  // |step| <= parameter_tol * (|x| + parameter_tol).
  double parameter_tol = 1e-14;
  bool fix_first_camera = true;

  // Throws ValueError when a factor is <= 1 or a tolerance is <= 0.
  void Check() const;
};

enum class Termination { kGradient, kRelativeCost, kSmallStep, kMaxIterations };

std::string_view ToString(Termination termination);
Termination TerminationFromString(std::string_view text);

struct BAResult {
  std::vector<std::string> camera_ids;  // dataset camera order
  std::vector<Pose> poses_final;
  std::vector<std::string> track_ids;   // dataset track order
  std::vector<Eigen::Vector3d> points_final;
  // cost_trace[0] is the initial cost, then one entry per LM iteration
  // (rejected iterations repeat the current cost).
  std::vector<double> cost_trace;
  int iterations = 0;
  bool converged = false;
  Termination termination_reason = Termination::kMaxIterations;
  std::vector<ResidualRecord> residuals_initial;
  std::vector<ResidualRecord> residuals_final;

  double InitialCost() const { return cost_trace.front(); }
  double FinalCost() const { return cost_trace.back(); }
  double InitialRms() const;
  double FinalRms() const;
};

// Flattened optimization problem. Free cameras own 6 parameters (rotation
// increment, center delta); cameras that are fixed or unobserved own none.
// Parameter vector layout: [free cameras x 6 | points x 3].
struct BAProblem {
  struct Obs {
    int camera = 0;
    int point = 0;
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  };

  std::vector<Intrinsics> intrinsics;     // per camera
  std::vector<int> camera_param_index;    // per camera, -1 when fixed
  int num_free_cameras = 0;
  int num_points = 0;
  std::vector<Obs> observations;

  int NumParameters() const { return 6 * num_free_cameras + 3 * num_points; }
  int NumResiduals() const { return 2 * static_cast<int>(observations.size()); }
};

struct BAState {
  std::vector<Pose> poses;
  std::vector<Eigen::Vector3d> points;
};

BAProblem BuildProblem(const Dataset& dataset, bool fix_first_camera);
BAState InitialState(const Dataset& dataset);

// Stacked residual vector (projection - tiepoint), two rows per observation.
// Throws CheiralityViolation.
Eigen::VectorXd EvaluateResiduals(const BAProblem& problem,
                                  const BAState& state);

// Analytic Jacobian, one 2x6 camera block and one 2x3 point block per
// observation. camera is -1 when the observing camera is not a parameter.
struct JacobianBlock {
  int camera = -1;
  int point = 0;
  Eigen::Matrix<double, 2, 6> d_camera = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 3> d_point = Eigen::Matrix<double, 2, 3>::Zero();
};

struct SparseJacobian {
  int num_free_cameras = 0;
  int num_points = 0;
  std::vector<JacobianBlock> blocks;  // parallel to BAProblem::observations

  int NumParameters() const { return 6 * num_free_cameras + 3 * num_points; }
  Eigen::MatrixXd ToDense() const;
};

SparseJacobian ComputeJacobian(const BAProblem& problem, const BAState& state);

// Solves (J^T J + lambda * diag(J^T J)) step = -J^T r by eliminating the
// point blocks (Schur complement), solving the reduced camera system with a
// dense Cholesky factorization, then back-substituting the points. Diagonal
// entries are clamped to [1e-6, 1e32] before damping. Throws SingularSystem.
Eigen::VectorXd SolveNormalEquations(const SparseJacobian& jacobian,
                                     const Eigen::VectorXd& residuals,
                                     double lambda);

// Applies a step laid out as in BAProblem to a state.
BAState ApplyStep(const BAProblem& problem, const BAState& state,
                  const Eigen::VectorXd& step);

// Return false to cancel the run (RunBundleAdjustment then throws Cancelled).
using IterationCallback = std::function<bool(int iteration, double cost)>;

// Levenberg-Marquardt on total reprojection error, starting from the initial
// poses and points. Deterministic: single threaded, fixed summation order.
BAResult RunBundleAdjustment(const Dataset& dataset, const BAConfig& config,
                             const IterationCallback& callback = {});

// Copies final poses/points from a result into the dataset (matched by id).
void ApplyResult(const BAResult& result, Dataset* dataset);

// Similarity transform q ~ scale * rotation * p + translation.
struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d Apply(const Eigen::Vector3d& p) const {
    return scale * rotation * p + translation;
  }
  // Re-expresses a world->camera pose in the aligned frame.
  Pose Apply(const Pose& pose) const;
};

// Least-squares similarity mapping `estimated` onto `truth`. Throws
// DegenerateConfiguration for fewer than 3 points or collinear/coincident
// configurations.
Similarity AlignSimilarity(std::span<const Eigen::Vector3d> estimated,
                           std::span<const Eigen::Vector3d> truth);

}  // namespace vec
