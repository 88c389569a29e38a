#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "test_util.h"
#include "vector/bundle_adjust.h"
#include "vector/errors.h"

namespace vec {
namespace {

Eigen::MatrixXd FiniteDifferenceJacobian(const BAProblem& problem, const BAState& state,
                                         double h) {
  const int n = problem.NumParameters();
  Eigen::MatrixXd jacobian(problem.NumResiduals(), n);
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd step = Eigen::VectorXd::Zero(n);
    step(j) = h;
    const Eigen::VectorXd plus = EvaluateResiduals(problem, ApplyStep(problem, state, step));
    const Eigen::VectorXd minus = EvaluateResiduals(problem, ApplyStep(problem, state, -step));
    jacobian.col(j) = (plus - minus) / (2.0 * h);
  }
  return jacobian;
}

double MaxRelativeError(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  double worst = 0.0;
  for (int i = 0; i < analytic.rows(); ++i) {
    for (int j = 0; j < analytic.cols(); ++j) {
      const double scale = std::max(1.0, std::abs(numeric(i, j)));
      worst = std::max(worst, std::abs(analytic(i, j) - numeric(i, j)) / scale);
    }
  }
  return worst;
}

TEST(Jacobian, MatchesCentralDifferences) {
  const Dataset d = testing::SmallScene(4, 6, 0.5, 21);
  const BAProblem problem = BuildProblem(d, true);
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const BAState state = testing::JitteredState(d, 0.2, rng);
    const Eigen::MatrixXd analytic = ComputeJacobian(problem, state).ToDense();
    const Eigen::MatrixXd numeric = FiniteDifferenceJacobian(problem, state, 1e-6);
    EXPECT_LT(MaxRelativeError(analytic, numeric), 1e-5) << "trial " << trial;
  }
}

TEST(Jacobian, FixedCamerasHaveNoColumns) {
  const Dataset d = testing::SmallScene(3, 4, 0.0, 23);
  const BAProblem fixed = BuildProblem(d, true);
  EXPECT_EQ(fixed.num_free_cameras, 2);
  EXPECT_EQ(fixed.camera_param_index[0], -1);
  const BAProblem free = BuildProblem(d, false);
  EXPECT_EQ(free.num_free_cameras, 3);
  EXPECT_EQ(free.NumParameters(), 18 + 12);
  const SparseJacobian jacobian = ComputeJacobian(fixed, InitialState(d));
  for (size_t i = 0; i < jacobian.blocks.size(); ++i) {
    if (fixed.observations[i].camera == 0) EXPECT_EQ(jacobian.blocks[i].camera, -1);
  }
}

TEST(Jacobian, UnobservedCameraIsNotAParameter) {
  Dataset d = testing::SmallScene(3, 4, 0.0, 24);
  Camera lonely = d.cameras[1];
  lonely.id = "lonely";
  d.cameras.push_back(lonely);
  const BAProblem problem = BuildProblem(d, true);
  EXPECT_EQ(problem.camera_param_index[3], -1);
  EXPECT_EQ(problem.num_free_cameras, 2);
}

// Dense oracle for the damped normal equations.
Eigen::VectorXd DenseSolve(const SparseJacobian& jacobian, const Eigen::VectorXd& r, double lambda) {
  const Eigen::MatrixXd j = jacobian.ToDense();
  Eigen::MatrixXd a = j.transpose() * j;
  for (int i = 0; i < a.rows(); ++i) a(i, i) += lambda * std::clamp(a(i, i), 1e-6, 1e32);
  return a.colPivHouseholderQr().solve(-j.transpose() * r);
}

TEST(NormalEquations, SchurMatchesDenseSolve) {
  const Dataset d = testing::SmallScene(5, 20, 1.0, 25);
  const BAProblem problem = BuildProblem(d, true);
  std::mt19937_64 rng(26);
  for (double lambda : {1e-6, 1e-3, 1.0, 1e3}) {
    const BAState state = testing::JitteredState(d, 0.1, rng);
    const SparseJacobian jacobian = ComputeJacobian(problem, state);
    const Eigen::VectorXd r = EvaluateResiduals(problem, state);
    const Eigen::VectorXd schur = SolveNormalEquations(jacobian, r, lambda);
    const Eigen::VectorXd dense = DenseSolve(jacobian, r, lambda);
    EXPECT_LT((schur - dense).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, dense.cwiseAbs().maxCoeff()))
        << "lambda " << lambda;
  }
}

TEST(NormalEquations, SingularPointBlockThrows) {
  Dataset d = testing::SmallScene(3, 2, 0.0, 27);
  const BAProblem problem = BuildProblem(d, true);
  SparseJacobian jacobian = ComputeJacobian(problem, InitialState(d));
  for (auto& block : jacobian.blocks) {
    if (block.point == 1) block.d_point.setZero();
  }
  const Eigen::VectorXd r = EvaluateResiduals(problem, InitialState(d));
  EXPECT_THROW(SolveNormalEquations(jacobian, r, 0.0), SingularSystem);
  EXPECT_THROW(SolveNormalEquations(jacobian, r, -1.0), ValueError);
}

TEST(BundleAdjust, ZeroNoiseConvergesImmediately) {
  const Dataset d = testing::SmallScene(4, 10, 0.0, 28);
  const BAResult result = RunBundleAdjustment(d, {});
  EXPECT_LT(result.InitialCost(), 1e-18);
  EXPECT_LE(result.iterations, 2);
  EXPECT_TRUE(result.converged);
  EXPECT_LT(result.FinalCost(), 1e-12);
}

TEST(BundleAdjust, RecoversFromPerturbedStart) {
  Dataset truth = testing::SmallScene(5, 30, 0.0, 29);
  Dataset d = truth;
  std::mt19937_64 rng(30);
  const BAState jittered = testing::JitteredState(d, 0.05, rng);
  for (size_t c = 1; c < d.cameras.size(); ++c) d.cameras[c].pose_initial = jittered.poses[c];
  for (size_t p = 0; p < d.tracks.size(); ++p) d.tracks[p].point_initial = jittered.points[p];

  const BAResult result = RunBundleAdjustment(d, {});
  EXPECT_GT(result.InitialCost(), 1.0);
  EXPECT_LT(result.FinalCost(), 1e-12);
  EXPECT_TRUE(result.converged);
  EXPECT_EQ(result.poses_final[0], d.cameras[0].pose_initial);
  // Cost trace never increases and has one entry per iteration.
  ASSERT_EQ(result.cost_trace.size(), static_cast<size_t>(result.iterations) + 1);
  for (size_t i = 1; i < result.cost_trace.size(); ++i) {
    EXPECT_LE(result.cost_trace[i], result.cost_trace[i - 1]);
  }
  EXPECT_EQ(result.residuals_initial.size(), d.NumObservations());
  EXPECT_EQ(result.residuals_final.size(), d.NumObservations());
}

TEST(BundleAdjust, FinalCostMatchesRecomputedResiduals) {
  const Dataset d = testing::SmallScene(4, 15, 2.0, 31);
  const BAResult result = RunBundleAdjustment(d, {});
  double sum = 0.0;
  for (const auto& r : result.residuals_final) sum += r.length * r.length;
  EXPECT_NEAR(result.FinalCost(), sum, 1e-9 * sum);
  Dataset applied = d;
  ApplyResult(result, &applied);
  EXPECT_NEAR(TotalReprojectionError(applied.cameras, applied.tracks, ResidualKind::kFinal),
              result.FinalCost(), 1e-9 * sum);
  EXPECT_NEAR(result.FinalRms(), std::sqrt(sum / result.residuals_final.size()), 1e-12);
}

TEST(BundleAdjust, IsDeterministic) {
  const Dataset d = testing::SmallScene(4, 15, 2.0, 32);
  const BAResult a = RunBundleAdjustment(d, {});
  const BAResult b = RunBundleAdjustment(d, {});
  EXPECT_EQ(a.cost_trace, b.cost_trace);
  EXPECT_EQ(a.poses_final, b.poses_final);
}

TEST(BundleAdjust, TrackOrderDoesNotChangeTheOptimum) {
  Dataset d = testing::SmallScene(4, 15, 2.0, 33);
  const BAResult a = RunBundleAdjustment(d, {});
  std::reverse(d.tracks.begin(), d.tracks.end());
  const BAResult b = RunBundleAdjustment(d, {});
  EXPECT_NEAR(a.FinalCost(), b.FinalCost(), 1e-8 * a.FinalCost());
}

TEST(BundleAdjust, CallbackSeesEveryIterationAndCanCancel) {
  const Dataset d = testing::SmallScene(4, 15, 2.0, 34);
  std::vector<double> seen;
  const BAResult result = RunBundleAdjustment(d, {}, [&](int iteration, double cost) {
    EXPECT_EQ(iteration, static_cast<int>(seen.size()) + 1);
    seen.push_back(cost);
    return true;
  });
  EXPECT_EQ(seen, std::vector<double>(result.cost_trace.begin() + 1, result.cost_trace.end()));
  EXPECT_THROW(RunBundleAdjustment(d, {}, [](int, double) { return false; }), Cancelled);
}

TEST(BundleAdjust, MaxIterationsStopsEarly) {
  Dataset d = testing::SmallScene(4, 15, 2.0, 35);
  std::mt19937_64 rng(36);
  const BAState jittered = testing::JitteredState(d, 0.05, rng);
  for (size_t p = 0; p < d.tracks.size(); ++p) d.tracks[p].point_initial = jittered.points[p];
  BAConfig config;
  config.max_iterations = 1;
  const BAResult result = RunBundleAdjustment(d, config);
  EXPECT_EQ(result.iterations, 1);
  EXPECT_FALSE(result.converged);
  EXPECT_EQ(result.termination_reason, Termination::kMaxIterations);
}

TEST(BundleAdjust, BadInputs) {
  Dataset empty;
  EXPECT_THROW(RunBundleAdjustment(empty, {}), EmptyProblem);
  const Dataset d = testing::SmallScene(3, 3, 0.0, 37);
  BAConfig config;
  config.lambda_up = 1.0;
  EXPECT_THROW(RunBundleAdjustment(d, config), ValueError);
  config = {};
  config.gradient_tol = 0.0;
  EXPECT_THROW(config.Check(), ValueError);
  config = {};
  config.max_iterations = -1;
  EXPECT_THROW(config.Check(), ValueError);
  EXPECT_EQ(TerminationFromString(ToString(Termination::kSmallStep)), Termination::kSmallStep);
}

}  // namespace
}  // namespace vec
